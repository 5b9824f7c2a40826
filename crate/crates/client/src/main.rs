use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use cryptolab_client::{Client, StreamItem};
use cryptolab_core::api::ScenarioRequest;
use cryptolab_core::crypto::{Credentials, Message};
use cryptolab_core::lessons::{paired_t_test, PairedSample, SurveyPhase};
use cryptolab_core::scenario::{ModuleId, StudentInput};

/// Command-line front end for a cryptolab service.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[arg(long, env = "CRYPTOLAB_URL", default_value = "http://127.0.0.1:8080", global = true)]
    url: String,
    /// Session token from `cryptolab login`.
    #[arg(long, env = "CRYPTOLAB_TOKEN", global = true, hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    Health,
    /// Log in; prints an `export CRYPTOLAB_TOKEN=...` line.
    Login {
        username: String,
        #[arg(long, env = "CRYPTOLAB_PASSWORD", hide_env_values = true)]
        password: String,
    },
    Modules,
    Progress,
    /// Send a message, with or without the attacker.
    Experience {
        module: ModuleId,
        #[arg(long)]
        attacked: bool,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Try one of the protection options.
    Scenario {
        module: ModuleId,
        option: u8,
        /// Run without the attacker.
        #[arg(long)]
        safe: bool,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Interactive terminal; reads commands from stdin.
    Terminal {
        module: ModuleId,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Talk with the coach about an attacked run; reads replies from stdin.
    Coach {
        module: ModuleId,
        #[arg(long)]
        trace: Option<String>,
    },
    /// Show the quiz, or submit answers with --answers 0,2,1,...
    Quiz {
        module: ModuleId,
        #[arg(long, value_delimiter = ',')]
        answers: Option<Vec<usize>>,
    },
    Survey {
        module: ModuleId,
        #[arg(value_parser = parse_phase)]
        phase: SurveyPhase,
        #[arg(value_delimiter = ',')]
        answers: Vec<u8>,
    },
    /// Print a stored trace, or replay it live with --stream.
    Trace {
        id: String,
        #[arg(long)]
        stream: bool,
        #[arg(long)]
        interval_ms: Option<u64>,
    },
    /// Paired t-test on pre/post score files, computed locally. Scores are
    /// separated by commas or whitespace, in the same student order.
    Analyze {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        /// Ask the service instead of computing here.
        #[arg(long)]
        remote: bool,
    },
}

#[derive(clap::Args, Debug)]
struct InputArgs {
    /// Message text (hashing and symmetric lessons).
    #[arg(long, conflicts_with_all = ["username", "password"])]
    message: Option<String>,
    /// Login name (asymmetric lesson).
    #[arg(long, requires = "password")]
    username: Option<String>,
    #[arg(long, requires = "username")]
    password: Option<String>,
}

impl InputArgs {
    fn to_input(&self) -> anyhow::Result<Option<StudentInput>> {
        Ok(match (&self.message, &self.username, &self.password) {
            (Some(m), _, _) => Some(StudentInput::Message(Message::new(m.clone())?)),
            (None, Some(u), Some(p)) => Some(StudentInput::Credentials(Credentials::new(u.clone(), p.clone())?)),
            _ => None,
        })
    }
}

fn parse_phase(s: &str) -> Result<SurveyPhase, String> {
    match s {
        "pre" => Ok(SurveyPhase::Pre),
        "post" => Ok(SurveyPhase::Post),
        _ => Err(format!("expected pre or post, got {s:?}")),
    }
}

/// Reads numbers separated by commas or whitespace; `#` starts a comment.
fn parse_scores(text: &str) -> anyhow::Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("{t:?} is not a number")))
        .collect()
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scores(&text).with_context(|| format!("in {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn prompt(label: &str) -> anyhow::Result<Option<String>> {
    print!("{label}");
    std::io::stdout().flush()?;
    let mut line = String::new();
    if std::io::stdin().lock().read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\r', '\n']).to_owned()))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut client = Client::new(&cli.url);
    if let Some(t) = &cli.token {
        client = client.with_token(t);
    }
    match cli.cmd {
        Cmd::Health => print_json(&client.health().await?)?,
        Cmd::Login { username, password } => {
            let r = client.login(&username, &password).await?;
            eprintln!("hello {}; token valid until unix time {}", r.student.display_name, r.expires_at);
            println!("export CRYPTOLAB_TOKEN={}", r.token);
        }
        Cmd::Modules => print_json(&client.modules().await?)?,
        Cmd::Progress => print_json(&client.progress().await?)?,
        Cmd::Experience { module, attacked, input } => {
            print_json(&client.experience(module, attacked, input.to_input()?).await?)?
        }
        Cmd::Scenario {
            module,
            option,
            safe,
            input,
        } => print_json(
            &client
                .scenario(ScenarioRequest {
                    module,
                    option,
                    attacked: !safe,
                    input: input.to_input()?,
                })
                .await?,
        )?,
        Cmd::Terminal { module, input } => {
            let view = client.terminal_open(module, input.to_input()?).await?;
            println!("{}", view.help);
            while let Some(line) = prompt("> ")? {
                let r = client.terminal_exec(&view.session_id, &line).await?;
                println!("{}", r.feedback.text);
                if let Some(id) = r.trace_id {
                    println!("(trace {id})");
                }
                if r.complete {
                    break;
                }
            }
        }
        Cmd::Coach { module, trace } => {
            let start = client.coach_start(module, trace).await?;
            println!("coach: {}", start.coach_text);
            while let Some(line) = prompt("you: ")? {
                let r = client.coach_reply(&start.session_id, &line).await?;
                println!("coach: {}", r.coach_text);
                if r.closed {
                    break;
                }
            }
        }
        Cmd::Quiz { module, answers: None } => {
            let quiz = client.quiz(module).await?;
            for (i, q) in quiz.questions.iter().enumerate() {
                println!("{}. {}", i + 1, q.text);
                for (j, c) in q.choices.iter().enumerate() {
                    println!("   [{j}] {c}");
                }
            }
        }
        Cmd::Quiz {
            module,
            answers: Some(a),
        } => print_json(&client.quiz_submit(module, a).await?)?,
        Cmd::Survey { module, phase, answers } => print_json(&client.survey(module, phase, answers).await?)?,
        Cmd::Trace {
            id,
            stream: false,
            ..
        } => print_json(&client.trace(&id).await?)?,
        Cmd::Trace {
            id,
            stream: true,
            interval_ms,
        } => {
            for item in client.stream_trace(&id, interval_ms).await? {
                match item {
                    StreamItem::Event(e) => println!("#{} {:?} {:?}: {}", e.seq, e.actor, e.kind, e.detail),
                    StreamItem::Outcome(o) => println!("outcome: {o:?}"),
                }
            }
        }
        Cmd::Analyze { pre, post, remote } => {
            let (pre, post) = (read_scores(&pre)?, read_scores(&post)?);
            let t = if remote {
                if client.token().is_none() {
                    bail!("--remote needs a token; run `cryptolab login` first");
                }
                client.paired_t(pre, post).await?
            } else {
                paired_t_test(&PairedSample::new(pre, post).context("bad sample")?)?
            };
            println!("t = {:.3}, df = {}, p = {:.4}", t.t, t.df, t.p);
        }
    }
    Ok(())
}
