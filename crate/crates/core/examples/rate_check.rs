// Writing a metrics CSV, reading it back and fitting log-log slopes over
// the tail of the run.
//
// ```bash
// cargo run --release -p perfnet --example rate_check
// ```

use perfnet::harness::experiment::simulate;
use perfnet::harness::preset;
use perfnet::metrics::{load_metrics_csv, mean_series, rate_fit, save_metrics_csv, RateWindow};
use perfnet::oracle::closed_form_multi_ps;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.run.iterations = 50_000;
    cfg.run.record_every = 250;
    let inst = cfg.instantiate()?;
    let theta_ps = closed_form_multi_ps(&inst.env)?;

    let dir = tempfile::tempdir()?;
    let mut runs = Vec::new();
    for seed in 0..4 {
        let traj = simulate(&cfg, &inst, seed, Some(theta_ps.clone()))?;
        let path = dir.path().join(format!("{seed}.csv"));
        save_metrics_csv(&path, &traj.records)?;
        runs.push(load_metrics_csv(&path)?);
    }

    let window = RateWindow {
        fraction: 0.75,
        t_min: 100.0,
    };
    for metric in ["gap_sq", "consensus_sq"] {
        let fit = rate_fit(metric, &mean_series(&runs, metric)?, window)?;
        println!(
            "{metric:>13}: slope {:+.3} (r^2 {:.3}) over t in [{}, {}] from {} points",
            fit.slope, fit.r2, fit.window[0], fit.window[1], fit.points
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
