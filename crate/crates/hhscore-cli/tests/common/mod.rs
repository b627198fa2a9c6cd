//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct TempDir(PathBuf);

impl TempDir {
    pub fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("hhscore_cli_{tag}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hhscore"))
}

pub fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(!out.status.success(), "command unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

pub const TINY_CORPUS: &str = "\
[corpus]
speakers = 20
utterances_per_speaker = 12
dimension = 12
identity_subspace_dim = 4
within_speaker_noise = 0.6
household_nuisance_scale = 0.5
nuisance_group_size = 5
seed = 9
";

/// Writes a small fast config into `dir` pointing at `dir/corpus.bin` and
/// `dir/out`, with the given quoted mode list.
pub fn tiny_config(dir: &TempDir, modes: &str) -> PathBuf {
    let text = format!(
        "corpus_path = {:?}\nout_dir = {:?}\n{TINY_CORPUS}
[experiment]
household_size = 2
household_count = 2
hardness = \"random\"
adapted_dim = 6
modes = [{modes}]
seed = 5

[split]
enroll_per_member = 2
eval_per_member = 3
max_train_per_member = 5
guest_count = 20

[train]
epochs = 2
learning_rate = 0.1
batch_size = 32
dropout_rate = 0.5
optimizer = \"sgd\"
",
        dir.join("corpus.bin").to_str().unwrap(),
        dir.join("out").to_str().unwrap(),
    );
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn gen_corpus(cfg: &Path, out: &Path) {
    run_ok(bin().args(["gen-corpus", "--config"]).arg(cfg).arg("--out").arg(out));
}

/// Relative path -> file bytes for every file under `dir`.
pub fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_str().unwrap().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
