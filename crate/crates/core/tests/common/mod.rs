#![allow(dead_code)]

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psieve::classifier::{save_model, LinearModel};
use psieve::corpus_io::Document;
use psieve::features::{bucket_of, hash_ngram, FeatureConfig};
use psieve::synth::{generate_corpus, Mix, SynthSpec};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psieve"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn psieve")
}

pub fn write_jsonl<S: AsRef<str>>(path: &Path, texts: &[S]) {
    let mut out = String::new();
    for t in texts {
        out.push_str(&serde_json::json!({ "text": t.as_ref() }).to_string());
        out.push('\n');
    }
    fs::write(path, out).unwrap();
}

/// Synthetic documents of a single population mix.
pub fn synth_docs(n: usize, mix: (f64, f64, f64), seed: u64) -> Vec<Document> {
    let spec = SynthSpec {
        n_docs: n,
        mix: Mix {
            ref_quality: mix.0,
            minority_quality: mix.1,
            junk: mix.2,
        },
        seed,
        ..SynthSpec::default()
    };
    generate_corpus(&spec).unwrap().into_iter().map(|s| s.doc).collect()
}

pub fn texts(docs: &[Document]) -> Vec<&str> {
    docs.iter().map(|d| d.text.as_str()).collect()
}

/// A unigram model plus a corpus of one-token documents whose scores are
/// `(i + 0.5) / n`, i.e. an evenly spaced grid over (0, 1).
///
/// Each document's token is chosen so that it owns a private hash bucket.
pub fn uniform_score_fixture(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let cfg = FeatureConfig::new(1, 1 << 20).unwrap();
    let mut weights = vec![0.0; cfg.buckets as usize];
    let mut used = HashSet::new();
    let mut tokens = Vec::with_capacity(n);
    for i in 0..n {
        let (tok, bucket) = (0..)
            .map(|k| {
                let tok = format!("doc{i}v{k}");
                let b = bucket_of(hash_ngram(&[tok.as_str()]), cfg.buckets);
                (tok, b)
            })
            .find(|(_, b)| !used.contains(b))
            .unwrap();
        used.insert(bucket);
        let s = (i as f64 + 0.5) / n as f64;
        weights[bucket] = (s / (1.0 - s)).ln();
        tokens.push(tok);
    }
    let model = LinearModel::from_parts(cfg, weights, 0.0).unwrap();
    let model_path = dir.join("uniform.model");
    save_model(&model, &model_path).unwrap();
    let corpus_path = dir.join("uniform.jsonl");
    write_jsonl(&corpus_path, &tokens);
    (model_path, corpus_path)
}

pub fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    entries
}
