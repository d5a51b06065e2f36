// Multi-agent Gaussian mean estimation: 25 agents on a ring, each facing a
// population `N(zbar_i + eps_i * theta_i, sigma^2)`.
//
// Runs DSGD-GD from the shipped preset (shortened) and prints the gap to
// the stable point and the consensus error as they shrink.
//
// ```bash
// cargo run --release -p perfnet --example gaussian_mean
// ```

use perfnet::harness::experiment::simulate;
use perfnet::harness::preset;
use perfnet::oracle::closed_form_multi_ps;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.run.iterations = 20_000;
    cfg.run.record_every = 2_000;

    let inst = cfg.instantiate()?;
    let theta_ps = closed_form_multi_ps(&inst.env)?;
    println!(
        "n = {}, eps_avg = {:.2}, most sensitive agent eps = {:.2}, theta_PS = {:.6}",
        inst.env.n(),
        inst.env.eps_avg(),
        inst.env.eps_max(),
        theta_ps[0]
    );

    let traj = simulate(&cfg, &inst, 0, Some(theta_ps))?;
    println!("{:>7} {:>14} {:>14} {:>10}", "t", "gap^2", "consensus^2", "risk");
    for r in &traj.records {
        println!(
            "{:>7} {:>14.6e} {:>14.6e} {:>10.4}",
            r.t,
            r.gap_sq.unwrap_or(f64::NAN),
            r.consensus_sq,
            r.risk.unwrap_or(f64::NAN)
        );
    }
    let first = traj.records.first().and_then(|r| r.gap_sq).unwrap_or(f64::NAN);
    let last = traj.records.last().and_then(|r| r.gap_sq).unwrap_or(f64::NAN);
    if !(last < first) {
        return Err(format!("gap did not shrink: {first} -> {last}").into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
