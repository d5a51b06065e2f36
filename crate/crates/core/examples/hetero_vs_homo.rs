// Heterogeneous versus homogeneous populations. Each agent's data comes
// from its own logistic model; in the homogeneous arm every agent samples
// from the pooled data of all agents instead, so local gradients agree at
// the stable point and the network has less to reconcile.
//
// ```bash
// cargo run --release -p perfnet --example hetero_vs_homo
// ```

use perfnet::harness::experiment::simulate;
use perfnet::harness::preset;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::hetero_vs_homo(0.1);
    cfg.run.iterations = 3_000;
    cfg.run.record_every = 300;
    let fed = cfg
        .environment
        .strategic
        .as_mut()
        .and_then(|s| s.federated.as_mut())
        .ok_or("generated-data preset")?;
    fed.dim = 20;

    for (label, point) in cfg.sweep_points() {
        let inst = point.instantiate()?;
        let traj = simulate(&point, &inst, 0, None)?;
        let last = traj.records.last().ok_or("no records")?;
        println!(
            "{label:>13}: consensus^2 {:.3e}, |grad|^2 {:.3e}, shifted accuracy {:.3}",
            last.consensus_sq,
            last.grad_norm_sq.unwrap_or(f64::NAN),
            last.accuracy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
