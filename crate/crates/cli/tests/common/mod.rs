#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use g2p_core::rng::Rng;

/// Wordlist over `a`-`h` with a deterministic spelling rule: `c` reads as
/// `k`, `h` as `x`, everything else as itself.
pub fn synthetic_corpus(n: usize, seed: u64) -> String {
    let letters: Vec<char> = "abcdefgh".chars().collect();
    let mut rng = Rng::new(seed);
    let mut out = String::new();
    for _ in 0..n {
        let len = 2 + rng.below_usize(5);
        let word: String = (0..len).map(|_| letters[rng.below_usize(letters.len())]).collect();
        let pron: String = word
            .chars()
            .map(|c| match c {
                'c' => 'k',
                'h' => 'x',
                other => other,
            })
            .collect();
        out.push_str(&format!("{word}\t/{pron}/\n"));
    }
    out
}

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    /// Two trainable languages (`aa`, `bb`) and one too small to use.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("aa.txt"), synthetic_corpus(300, 1)).unwrap();
        fs::write(dir.path().join("bb.txt"), synthetic_corpus(300, 2)).unwrap();
        fs::write(dir.path().join("small.txt"), synthetic_corpus(40, 3)).unwrap();
        let ws = Self { dir };
        ws.write_manifest("");
        ws
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn manifest(&self) -> PathBuf {
        self.path().join("g2p.toml")
    }

    pub fn write_manifest(&self, extra: &str) {
        let text = format!(
            r#"[experiment]
id = "t"
seed = 7
output_dir = "out"
min_records = 100

[model]
embedding_dim = 8
num_layers = 1
ff_size = 8
attention_size = 8
num_heads = 2

[train]
epochs = 2
batch_size = 32

[languages.aa]
path = "aa.txt"
sample_size = 200
dev = 20
test = 20

[languages.bb]
path = "bb.txt"
sample_size = 200
dev = 20
test = 20

[languages.small]
path = "small.txt"
sample_size = 30
dev = 5
test = 5
{extra}"#
        );
        fs::write(self.manifest(), text).unwrap();
    }

    pub fn lang_dir(&self, tag: &str) -> PathBuf {
        self.path().join("out").join("t").join(tag)
    }

    pub fn run(&self, args: &[&str]) -> i32 {
        let manifest = self.manifest();
        let mut argv = vec!["g2p-complexity".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        if !matches!(args.first(), Some(&"manifest")) {
            argv.push("--manifest".into());
            argv.push(manifest.display().to_string());
        }
        g2p_cli::run(argv)
    }
}
