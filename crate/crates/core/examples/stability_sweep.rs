// Sweeping the average sensitivity across the stability threshold
// `eps_avg = mu / L = 1`, writing the full artifact tree.
//
// ```bash
// cargo run --release -p perfnet --example stability_sweep
// ```

use perfnet::harness::experiment::PointStatus;
use perfnet::harness::{preset, run_experiment};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::gaussian_mean();
    cfg.seeds = vec![0, 1, 2];
    cfg.run.iterations = 30_000;
    cfg.run.record_every = 500;

    let out = tempfile::tempdir()?;
    let summary = run_experiment(&cfg, out.path())?;
    for p in &summary.manifest.points {
        let flagged = p.runs.iter().filter(|r| r.diverged()).count();
        println!(
            "eps_avg = {:<5} stable point expected: {:<5} status: {:?} ({flagged}/{} seeds diverged)",
            p.label,
            p.stable_point_expected,
            p.status,
            p.runs.len()
        );
    }
    println!("artifacts written under {}", summary.dir.display());
    let below = &summary.manifest.points[0];
    let above = summary.manifest.points.last().ok_or("no sweep points")?;
    if below.status != PointStatus::Converged || above.status != PointStatus::PassWithDivergence {
        return Err("unexpected regime classification".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
