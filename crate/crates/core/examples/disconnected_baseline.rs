// Consensus as a stabiliser: an agent whose own population is past the
// threshold (`eps_i = 1.01`) diverges when it learns alone, but the network
// it belongs to (`eps_avg = 0.9`) converges.
//
// ```bash
// cargo run --release -p perfnet --example disconnected_baseline
// ```

use perfnet::harness::experiment::run_disconnected_baseline;
use perfnet::harness::preset;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.run.iterations = 50_000;
    cfg.run.record_every = 5_000;
    let inst = cfg.instantiate()?;
    let agent = (0..inst.env.n())
        .max_by(|&a, &b| inst.env.population(a).eps().total_cmp(&inst.env.population(b).eps()))
        .ok_or("empty network")?;

    let run = run_disconnected_baseline(&cfg, agent, None, 0)?;
    println!("agent {agent} has eps = {:.3}", run.eps);
    println!("{:>7} {:>14} {:>14}", "t", "isolated risk", "network risk");
    for (a, b) in run.isolated.records.iter().zip(&run.networked.records) {
        println!("{:>7} {:>14.3} {:>14.3}", a.t, a.risk.unwrap_or(f64::NAN), b.risk.unwrap_or(f64::NAN));
    }

    let calm = run_disconnected_baseline(&cfg, agent, Some(0.5), 0)?;
    println!(
        "the same agent with eps = 0.5 alone ends at risk {:.3}",
        calm.isolated.records.last().and_then(|r| r.risk).unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
