use std::time::Instant;
use qosa::cond_dist::{oob_error, Alpha, CondQuantileMethod, QuantileFamily};
use qosa::dataset::SyntheticModel;
use qosa::forest::{Forest, ForestParams, WeightScheme};
use qosa::tuning::LeafGrid;

fn main() {
    let data = SyntheticModel::ExpDiff.generate(10_000, 1).unwrap();
    let (x, y) = (data.input(0), data.output());
    let a = Alpha::new(0.3).unwrap();
    for round in 0..3 {
        let mut t_build = 0.0;
        let mut t_eval_w = 0.0;
        let mut t_eval_l = 0.0;
        for (ci, &leaf) in LeafGrid::default().values().iter().enumerate() {
            let t = Instant::now();
            let f = Forest::fit_single_input(x, y, &ForestParams::new(100, leaf, 1, ci as u64)).unwrap();
            t_build += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let _ = oob_error(&f, a, CondQuantileMethod::weighted_original()).unwrap();
            t_eval_w += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let _ = oob_error(&f, a, CondQuantileMethod::new(QuantileFamily::InLeaf, WeightScheme::Original)).unwrap();
            t_eval_l += t.elapsed().as_secs_f64();
        }
        println!("round {round}: builds {t_build:.2}s  eval_weighted {t_eval_w:.2}s  eval_inleaf {t_eval_l:.2}s");
    }
}
