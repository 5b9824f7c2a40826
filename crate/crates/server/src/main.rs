use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use cryptolab_server::{CoachMode, Config};
use tracing_subscriber::EnvFilter;

/// Serve the cryptolab lessons over HTTP.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Accounts TOML file.
    #[arg(long)]
    accounts: PathBuf,
    /// Content pack TOML; the bundled pack when omitted.
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long, default_value = "./cryptolab-data")]
    data_dir: PathBuf,
    /// Fixed seed for reproducible demos.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8 * 60 * 60)]
    session_ttl_secs: u64,
    /// Gap between streamed trace events at speed 1.
    #[arg(long, default_value_t = 600)]
    stream_interval_ms: u64,
    /// Never call a live model; use the scripted coach.
    #[arg(long, conflicts_with = "coach_replay")]
    no_live_coach: bool,
    /// Answer coach turns from recorded fixtures in this directory.
    #[arg(long)]
    coach_replay: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let mut cfg = Config::new(args.accounts, args.data_dir);
    cfg.content = args.content;
    cfg.seed = args.seed;
    cfg.session_ttl = Duration::from_secs(args.session_ttl_secs);
    cfg.stream_interval = Duration::from_millis(args.stream_interval_ms);
    cfg.coach = match (args.no_live_coach, args.coach_replay) {
        (true, _) => CoachMode::Off,
        (false, Some(dir)) => CoachMode::Replay(dir),
        (false, None) => CoachMode::Env,
    };
    let running = cryptolab_server::spawn(cfg, SocketAddr::new(args.host, args.port)).await?;
    println!("cryptolab listening on {}", running.url());
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    running.stop().await?;
    Ok(())
}
