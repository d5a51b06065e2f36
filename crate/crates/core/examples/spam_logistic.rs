// Strategic spam classification from a CSV corpus: features, then a 0/1
// label per row. Each of 25 regional servers trains on its own shard while
// its users shift their features towards the deployed classifier.
//
// The example writes a small stand-in corpus to a temporary CSV, points a
// config at it, and compares DSGD-GD with a learner that ignores the shift.
// Point `dataset` at a real corpus (with `columns` to keep a prefix of the
// feature columns) to run at full scale.
//
// ```bash
// cargo run --release -p perfnet --example spam_logistic
// ```

use std::io::Write;

use perfnet::harness::dataset::{synthetic_corpus, SyntheticCorpus};
use perfnet::harness::experiment::run_nonperformative_baseline;
use perfnet::harness::preset;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let csv_path = dir.path().join("corpus.csv");
    let corpus = synthetic_corpus(&SyntheticCorpus {
        rows: 1200,
        dim: 12,
        seed: 5,
        separation: 1.5,
        positive_rate: 0.4,
    })?;
    let mut f = std::fs::File::create(&csv_path)?;
    writeln!(f, "{}label", (0..12).map(|j| format!("f{j},")).collect::<String>())?;
    for k in 0..corpus.len() {
        let row: Vec<String> = corpus.features(k).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(f, "{},{}", row.join(","), corpus.label(k))?;
    }
    drop(f);

    let mut cfg = preset::spam_logistic();
    cfg.sweep = None;
    cfg.seeds = vec![0, 1];
    cfg.run.iterations = 5_000;
    cfg.run.record_every = 500;
    let strategic = cfg.environment.strategic.as_mut().ok_or("strategic preset")?;
    strategic.synthetic = None;
    strategic.dataset = Some(csv_path);
    strategic.columns = Some(10);
    strategic.per_agent = 40;
    strategic.test_split = 150;

    let inst = cfg.instantiate()?;
    println!(
        "{} agents, d = {}, L = {:.3}, test rows = {}",
        inst.env.n(),
        inst.env.dim(),
        inst.env.smoothness(),
        inst.test.as_ref().map_or(0, |t| t.len())
    );
    let report = run_nonperformative_baseline(&cfg)?;
    for r in &report.runs {
        println!(
            "seed {}: DSGD-GD shifted accuracy {:.3}, non-performative {:.3}",
            r.seed, r.dsgd_gd_accuracy, r.baseline_accuracy
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
