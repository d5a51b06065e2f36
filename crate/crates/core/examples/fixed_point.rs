// The multi-agent performative stable point: closed form, repeated
// deployment, the contraction of the map `M`, and what happens past the
// threshold.
//
// ```bash
// cargo run --release -p perfnet --example fixed_point
// ```

use std::sync::Arc;

use nalgebra::DVector;
use perfnet::environment::{make_heterogeneous_suite, BaseSpec, LabeledData, SensitivityGrid};
use perfnet::harness::dataset::{partition_agents, synthetic_corpus, SyntheticCorpus};
use perfnet::oracle::{
    apply_m, closed_form_multi_ps, contraction_probe, existence_check, map_orbit, repeated_gd_fixed_point,
    ExistenceVariant, OracleConfig,
};
use perfnet::rng::{Domain, SeedTree};

fn gaussian(eps_avg: f64) -> perfnet::Result<perfnet::environment::Environment> {
    let base = BaseSpec::Gaussian {
        zbar: vec![DVector::from_element(1, 10.0)],
        sigma2: 50.0,
    };
    make_heterogeneous_suite(eps_avg, &SensitivityGrid::linear(25, 0.1)?, base, false)
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = OracleConfig::default();
    let mut rng = SeedTree::new(7).stream(Domain::Probe, 0, 0);

    for eps in [0.3, 0.5, 0.9] {
        let env = gaussian(eps)?;
        let closed = closed_form_multi_ps(&env)?;
        let repeated = repeated_gd_fixed_point(&env, &DVector::zeros(1), &cfg)?;
        let probe = contraction_probe(&env, &closed, 200, 50.0, &cfg, &mut rng)?;
        println!(
            "eps_avg = {eps}: closed form {:.6}, repeated deployment {:.6} after {} deployments, \
             contraction ratio {:.6}",
            closed[0], repeated.theta_ps[0], repeated.deployments, probe.empirical
        );
    }

    // Past the threshold the map keeps pushing the decision outward.
    let env = gaussian(1.01)?;
    let orbit = map_orbit(&env, &DVector::zeros(1), 2000, &cfg)?;
    println!(
        "eps_avg = 1.01: M-orbit after 500, 1000, 2000 steps: {:.1}, {:.1}, {:.1}",
        orbit[500][0], orbit[1000][0], orbit[2000][0]
    );

    // For logistic populations M is a strongly convex solve per deployment.
    let corpus = synthetic_corpus(&SyntheticCorpus {
        rows: 600,
        dim: 5,
        seed: 1,
        separation: 1.5,
        positive_rate: 0.4,
    })?;
    let bundle = partition_agents(&corpus, 4, 100, 100, 0)?.standardized();
    let shards: Vec<Arc<LabeledData>> = bundle.shards.clone();
    let env = make_heterogeneous_suite(
        0.05,
        &SensitivityGrid::homogeneous(4)?,
        BaseSpec::Strategic { shards, beta: 0.5 },
        false,
    )?;
    let exists = existence_check(env.eps_avg(), env.mu(), env.smoothness(), ExistenceVariant::Local, env.n())?;
    let m0 = apply_m(&env, &DVector::zeros(5), &cfg)?;
    let fp = repeated_gd_fixed_point(&env, &DVector::zeros(5), &cfg)?;
    println!(
        "logistic, eps_avg = 0.05: guaranteed = {} (threshold {:.4}), |M(0)| = {:.4}, \
         stable point found = {} after {} deployments (residual {:.2e})",
        exists.exists,
        exists.threshold,
        m0.theta.norm(),
        fp.converged,
        fp.deployments,
        fp.residual
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
