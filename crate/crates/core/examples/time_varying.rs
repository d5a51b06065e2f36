// DSGD-GD over a time-varying topology: the ring split into two
// alternating rounds, neither connected on its own.
//
// ```bash
// cargo run --release -p perfnet --example time_varying
// ```

use perfnet::harness::config::{TopologyKind, WeightRule};
use perfnet::harness::experiment::simulate;
use perfnet::harness::preset;
use perfnet::oracle::closed_form_multi_ps;
use perfnet::topology::{validate_schedule, GraphSchedule, ScheduleCertificate};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let schedule = GraphSchedule::ring_alternating(25)?;
    let ScheduleCertificate::Connected { window } = validate_schedule(&schedule) else {
        return Err("alternating ring should be 2-connected".into());
    };
    println!("ring_alternating(25) is {window}-connected");

    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.topology.kind = TopologyKind::Schedule;
    cfg.topology.weights = WeightRule::Metropolis;
    cfg.topology.schedule_file = Some("ring_alternating".into());
    cfg.run.iterations = 20_000;
    cfg.run.record_every = 4_000;

    let inst = cfg.instantiate()?;
    let theta_ps = closed_form_multi_ps(&inst.env)?;
    let traj = simulate(&cfg, &inst, 0, Some(theta_ps))?;
    for r in &traj.records {
        println!("t = {:>6}: gap^2 = {:.4e}, consensus^2 = {:.4e}", r.t, r.gap_sq.unwrap_or(f64::NAN), r.consensus_sq);
    }
    if traj.diverged_at.is_some() {
        return Err("run diverged".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
