#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cryptolab_client::Client;
use cryptolab_server::{CoachMode, Config, Running};

pub const ACCOUNTS: &str = r#"
[[accounts]]
username = "ada"
password = "ada-pass-1"
display_name = "Ada"
cohort = "a"

[[accounts]]
username = "ben"
password = "ben-pass-2"
"#;

pub struct Env {
    pub dir: tempfile::TempDir,
}

impl Env {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("accounts.toml"), ACCOUNTS).unwrap();
        Env { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> Config {
        let mut cfg = Config::new(self.path("accounts.toml"), self.path("data"));
        cfg.seed = Some(7);
        cfg.coach = CoachMode::Off;
        cfg.stream_interval = Duration::from_millis(5);
        cfg
    }

    pub async fn start(&self) -> Running {
        start(self.config()).await
    }
}

pub async fn start(cfg: Config) -> Running {
    cryptolab_server::spawn(cfg, SocketAddr::from(([127, 0, 0, 1], 0)))
        .await
        .expect("server starts")
}

pub async fn login(server: &Running, user: &str) -> Client {
    let mut c = Client::new(server.url());
    let pw = if user == "ada" { "ada-pass-1" } else { "ben-pass-2" };
    c.login(user, pw).await.expect("login");
    c
}

pub fn data_file(dir: &Path) -> PathBuf {
    dir.join("data").join(cryptolab_server::store::STATE_FILE)
}
