//! Shared helpers for the CLI integration tests.

use std::path::{Path, PathBuf};

use kaft_cli::config::{Overrides, RunConfig, StageContext};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn pipeline_config() -> PathBuf {
    fixtures_dir().join("pipeline.toml")
}

/// A stage context over the bundled fixture corpus and mock endpoint.
pub fn fixture_context(workdir: &Path, seed: Option<u64>) -> StageContext {
    let config_path = pipeline_config();
    let config = RunConfig::from_path(&config_path).expect("fixture config parses");
    StageContext {
        config,
        config_path: Some(config_path),
        workdir: workdir.to_path_buf(),
        overrides: Overrides {
            seed,
            endpoint: None,
            stopwords: None,
        },
    }
}

/// Run the full pipeline into `workdir`, panicking on any stage error.
pub fn run_fixture_pipeline(workdir: &Path, seed: Option<u64>) -> Vec<(String, String)> {
    let ctx = fixture_context(workdir, seed);
    std::fs::create_dir_all(workdir).unwrap();
    kaft_cli::stages::run_pipeline(&ctx).expect("pipeline runs")
}

/// All regular files under a directory, relative paths sorted.
pub fn file_listing(dir: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                out.push(path.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
