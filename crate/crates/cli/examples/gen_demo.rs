//! Generates the self-contained demo corpus plus a ready-to-run config.
//!
//! Usage: cargo run -p stancebench-cli --example gen_demo -- <dir> [seed]

use std::path::PathBuf;

use stancebench_core::synth::write_demo_corpus;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "demo".to_string()));
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(7);

    let demo = write_demo_corpus(&dir, seed, 2, 3).expect("write demo corpus");
    let config = serde_json::json!({
        "paths": {
            "manifest": demo.manifest,
            "articles": demo.articles,
            "stopwords_dir": demo.stopwords_dir,
            "output_dir": dir.join("out"),
        },
        "languages": ["en"],
        "selection_file": demo.selection,
        "lda": {"k_list": [2, 3], "sweeps": 80, "burn_in": 20, "alpha_opt_interval": 10,
                 "min_doc_freq": 1, "seed": 7},
        "split": {"val_size_per_class": 12, "seed": 11,
                   "test_source_ids": demo.test_source_ids},
        "train": {"backend": {"type": "hashed_ngram", "dim": 16384, "ngram_orders": [1, 2]},
                   "embed_dim": 32, "batch_size": 8, "epochs": 3, "eval_every": 10, "seed": 13},
        "eval": {"n_boot": 1000, "level": 0.95, "seed": 17},
        "run_date": "demo",
    });
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap())
        .expect("write config");
    println!("demo corpus written under {}", dir.display());
    println!(
        "run: cargo run -p stancebench-cli -- pipeline --config {}",
        config_path.display()
    );
}
