use std::process::Command;

fn cryptolab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cryptolab"))
}

#[test]
fn analyze_reads_score_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pre.txt"), "1\n2\n3\n4\n").unwrap();
    std::fs::write(dir.path().join("post.txt"), "2, 4, 3, 6").unwrap();
    let out = cryptolab()
        .args(["analyze", "--pre"])
        .arg(dir.path().join("pre.txt"))
        .arg("--post")
        .arg(dir.path().join("post.txt"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("t = 2.611, df = 3, p = "), "{text}");
}

#[test]
fn analyze_rejects_mismatched_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pre.txt"), "1 2 3").unwrap();
    std::fs::write(dir.path().join("post.txt"), "1 2").unwrap();
    let out = cryptolab()
        .args(["analyze", "--pre"])
        .arg(dir.path().join("pre.txt"))
        .arg("--post")
        .arg(dir.path().join("post.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
