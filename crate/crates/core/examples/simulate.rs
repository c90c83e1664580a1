//! Sample batch trajectories from the benchmark MDP and estimate action values
//! by Monte Carlo.
//!
//! ```text
//! cargo run --example simulate -- [seed]
//! ```

use kshrl::sim::{mc_component_estimate, mc_q_estimate, sample_trajectories, Controller, McSettings, SimConfig};

fn main() -> kshrl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = SimConfig { d: 5, seed, ..Default::default() };

    let batch = sample_trajectories(&config, 100, 10)?;
    let mut csv = Vec::new();
    batch.write_csv(&mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    println!("{} trajectories, {} csv rows; first lines:", batch.n(), text.lines().count() - 1);
    for line in text.lines().take(4) {
        println!("  {line}");
    }

    let mc = McSettings::new(0.5, 2_000, 10, seed);
    let s = vec![0.5; config.d];
    for a in 0..2 {
        let q = mc_q_estimate(&config, &s, a, Controller::UniformRandom, &mc)?;
        println!("Q(0.5.., {a}) under random play: {:.3} +/- {:.3}", q.mean, q.std_error);
    }

    let values: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
    let mc = McSettings::new(0.5, 500, 10, seed);
    println!("\nreward component u1 with s_1 pinned (random play)");
    println!("{:>6} {:>9} {:>9}", "s_1", "a=0", "a=1");
    let a0 = mc_component_estimate(&config, 0, &values, 0, Controller::UniformRandom, &mc)?;
    let a1 = mc_component_estimate(&config, 0, &values, 1, Controller::UniformRandom, &mc)?;
    for (e0, e1) in a0.iter().zip(&a1) {
        println!("{:>6.2} {:>9.3} {:>9.3}", e0.value, e0.estimate.mean, e1.estimate.mean);
    }
    Ok(())
}
