use std::time::Instant;
use qosa::dataset::SyntheticModel;
use qosa::forest::{Forest, ForestParams};

fn main() {
    let data = SyntheticModel::ExpDiff.generate(10_000, 1).unwrap();
    let (x, y) = (data.input(0), data.output());
    for &(k, msl) in &[(100usize, 9999usize), (100, 258), (100, 67), (100, 5)] {
        let t = Instant::now();
        let f = Forest::fit_single_input(x, y, &ForestParams::new(k, msl, 1, 3)).unwrap();
        let leaves: usize = f.trees().iter().map(|t| t.n_leaves()).sum();
        println!("k={k} msl={msl}: {:.3}s  (avg leaves {})", t.elapsed().as_secs_f64(), leaves / k);
    }
    // RNG cost baseline
    use rand::Rng;
    let mut rng = qosa::seeding::task_rng(1);
    let t = Instant::now();
    let mut acc = 0u64;
    for _ in 0..1_000_000 { acc += rng.random_range(0..10_000usize) as u64; }
    println!("1e6 random_range: {:.3}s (acc {acc})", t.elapsed().as_secs_f64());
}
