// Graphs, mixing matrices and time-varying schedules.
//
// ```bash
// cargo run -p perfnet --example topology
// ```

use perfnet::topology::{
    metropolis_weights, uniform_neighbor_weights, validate_schedule, Graph, GraphSchedule, ScheduleCertificate,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // The 25-agent ring with weight 1/3 on self and both neighbours.
    let ring = uniform_neighbor_weights(&Graph::ring(25)?)?;
    println!("ring(25): W[0][1] = {:.4}, spectral gap rho = {:.5}", ring.weights()[(0, 1)], ring.rho());

    // Denser graphs mix faster.
    let complete = uniform_neighbor_weights(&Graph::complete(25)?)?;
    println!("complete(25): rho = {:.5}", complete.rho());

    // A star is not regular, so uniform weights are rejected; Metropolis
    // weights stay doubly stochastic.
    let star = Graph::star(8)?;
    assert!(uniform_neighbor_weights(&star).is_err());
    let w = metropolis_weights(&star)?;
    let row_sum: f64 = (0..8).map(|j| w.weights()[(0, j)]).sum();
    println!("star(8) with Metropolis weights: hub row sums to {row_sum:.12}, rho = {:.5}", w.rho());

    // Edge lists: one `i j` pair per line, `#` comments allowed.
    let g = Graph::parse_edge_list(4, "# a path\n0 1\n1 2\n2 3\n")?;
    println!("path from edge list: {} edges, connected = {}", g.edges().len(), g.is_connected());

    // Two alternating rounds whose union is the ring: neither round is
    // connected, but every window of two rounds is.
    let schedule = GraphSchedule::ring_alternating(25)?;
    let round_a = schedule.graph_at(0);
    println!(
        "alternating ring: round A has {} components, round B {}",
        round_a.components(),
        schedule.graph_at(1).components()
    );
    match validate_schedule(&schedule) {
        ScheduleCertificate::Connected { window } => println!("schedule is {window}-connected"),
        ScheduleCertificate::Violation { start } => return Err(format!("window at {start} disconnected").into()),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
