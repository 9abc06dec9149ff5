use std::time::Instant;
use qosa::cond_dist::{Alpha, CondQuantileMethod};
use qosa::dataset::SyntheticModel;
use qosa::forest::{Forest, ForestParams};
use qosa::tuning::{cv_tune, oob_tune, LeafGrid};

fn main() {
    let data = SyntheticModel::ExpDiff.generate(10_000, 1).unwrap();
    let (x, y) = (data.input(0), data.output());
    let grid = LeafGrid::default();
    let a = Alpha::new(0.1).unwrap();
    let m = CondQuantileMethod::weighted_original();

    let t = Instant::now();
    let f = Forest::fit_single_input(x, y, &ForestParams::new(100, 67, 1, 3)).unwrap();
    println!("build k=100 leaf=67 n=1e4: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let f5 = Forest::fit_single_input(x, y, &ForestParams::new(100, 5, 1, 3)).unwrap();
    println!("build k=100 leaf=5  n=1e4: {:.3}s", t.elapsed().as_secs_f64());
    drop(f5);

    let eval = SyntheticModel::ExpDiff.generate(10_000, 2).unwrap();
    let t = Instant::now();
    let o = qosa::qosa::estimate_o_quantile(&f, eval.input(0), eval.output(), a, m).unwrap();
    println!("R1o eval n=1e4 k=100: {:.3}s (O={o:.4})", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let o = qosa::qosa::estimate_o_min_weighted(&f, eval.input(0), a, qosa::forest::WeightScheme::Original).unwrap();
    println!("Q1o eval n=1e4 k=100: {:.3}s (O={o:.4})", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let r = cv_tune(x, y, &grid, 3, a, m, &ForestParams::new(100, 1, 1, 7)).unwrap();
    println!("cv_tune k=100 grid20 f3: {:.3}s (selected {})", t.elapsed().as_secs_f64(), r.selected);

    let t = Instant::now();
    let r = oob_tune(x, y, &grid, a, m, &ForestParams::new(100, 1, 1, 7)).unwrap();
    println!("oob_tune k=100 grid20: {:.3}s (selected {})", t.elapsed().as_secs_f64(), r.selected);

    let t = Instant::now();
    let r = cv_tune(x, y, &grid, 3, a, m, &ForestParams::new(500, 1, 1, 7)).unwrap();
    println!("cv_tune k=500 grid20 f3: {:.3}s (selected {})", t.elapsed().as_secs_f64(), r.selected);

    // Q3 sweep probe
    let cols: Vec<&[f64]> = data.input_columns().iter().map(|c| c.as_slice()).collect();
    let t = Instant::now();
    let ff = Forest::fit(&cols, y, &ForestParams::new(50, 2, 2, 9)).unwrap();
    println!("full forest k=50 msl=2: {:.3}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let o = qosa::qosa::estimate_o_min_full(&ff, 0, eval.input_columns(), Alpha::new(0.9).unwrap(), qosa::forest::WeightScheme::Original).unwrap();
    println!("Q3o sweep n=1e4 k=50: {:.3}s (O={o:.5}, target 0.09482)", t.elapsed().as_secs_f64());
}
