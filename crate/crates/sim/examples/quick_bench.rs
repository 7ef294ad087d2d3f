//! Small benchmark run: `cargo run --release --example quick_bench -- MODEL REPS ASSIGNMENT D`.

use dynfx_sim::bench::{run_benchmark, BenchEstimand, BenchmarkConfig, Method};
use dynfx_sim::SimConfig;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let config = BenchmarkConfig {
        sim: SimConfig {
            model: arg(0, 1) as u8,
            replications: arg(1, 2),
            assignment: arg(2, 1) as u8,
            d: arg(3, 20),
            ..SimConfig::default()
        },
        methods: vec![Method::Ct, Method::Bi, Method::Ci],
        estimands: BenchEstimand::ALL.to_vec(),
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&config).expect("benchmark runs");
    print!("{}", report.to_csv());
    for (m, t) in &report.wall_time {
        println!("{} {:.1}s", m.as_str(), t);
    }
    for f in &report.failures {
        println!("failure: {f:?}");
    }
}
