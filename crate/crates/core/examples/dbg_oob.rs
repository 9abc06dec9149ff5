use qosa::cond_dist::{oob_quantile, Alpha, CondQuantileMethod};
use qosa::dataset::SyntheticModel;
use qosa::forest::{Forest, ForestParams, WeightScheme};

fn main() {
    let data = SyntheticModel::ExpDiff.generate(500, 31).unwrap();
    let forest = Forest::fit_single_input(
        data.input(0),
        data.output(),
        &ForestParams::new(20, 30, 1, 32),
    )
    .unwrap();
    let m = 392;
    let method = CondQuantileMethod::weighted_original();
    let fast = oob_quantile(&forest, m, Alpha::new(0.5).unwrap(), method);
    println!("fast: {fast:?}");
    // dense by hand over rows
    let y = data.output();
    let n = 500;
    let mut w = vec![0.0; n];
    let mut n_oob = 0;
    for t in 0..forest.n_trees() {
        // reconstruct membership via weights at x_m ... use public weights per tree? do full-forest weights minus?
        n_oob += 1;
        let _ = t;
    }
    let _ = (w.len(), n_oob, y.len());
}
