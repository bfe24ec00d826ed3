use nbm::interpret::{
    decompose, export_shape_functions, shape_metadata, stability_score, throughput_bench,
    write_pair_csv, write_shape_csv, ExplainOptions, FeatureShape, ShapeTable,
};
use nbm::matrix::Matrix;
use nbm::models::count::param_count;
use nbm::models::linear::LinearParams;
use nbm::models::{Architecture, Model, ModelKind};
use nbm::tensors::Tensors;
use nbm::{seeded_rng, Error};
use rand::Rng;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

fn small(kind: ModelKind, d: usize, c: usize) -> Architecture {
    let mut a = Architecture::new(kind, d, c);
    a.hidden = vec![6, 5];
    a.num_bases = 4;
    a.pair_bases = 3;
    a
}

fn random_model(kind: ModelKind, d: usize, c: usize, seed: u64) -> Model {
    let mut rng = seeded_rng(seed);
    let mut m = Model::new(&small(kind, d, c), &mut rng).unwrap();
    let theta: Vec<f64> = (0..m.trainable_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    m.assign_trainable(&theta);
    m
}

fn linear(weights: &[f64], bias: f64) -> Model {
    let w = Matrix::column(weights);
    Model::Linear(LinearParams::from_parts(w, vec![bias]).unwrap())
}

fn opts(grid: usize) -> ExplainOptions {
    ExplainOptions {
        grid,
        pair_grid: grid,
        ..ExplainOptions::default()
    }
}

#[test]
fn centering_uses_the_training_mean() {
    let m = linear(&[1.0], 0.0);
    let x = Matrix::column(&[1.0, 2.0, 3.0]);
    let t = export_shape_functions(&m, &x, &names(1), &opts(3)).unwrap();
    assert_eq!(t.features[0].grid, vec![1.0, 2.0, 3.0]);
    assert_eq!(t.features[0].centered, vec![-1.0, 0.0, 1.0]);
    assert_eq!(t.features[0].mean, 2.0);
}

#[test]
fn linear_shapes_are_straight_lines() {
    let m = linear(&[2.5, -0.5], 1.0);
    let mut rng = seeded_rng(1);
    let x = Matrix::from_fn(50, 2, |_, _| rng.gen_range(-2.0..2.0));
    let t = export_shape_functions(&m, &x, &names(2), &opts(17)).unwrap();
    for (i, w) in [2.5, -0.5].iter().enumerate() {
        let f = &t.features[i];
        let mu = w * x.col(i).iter().sum::<f64>() / 50.0;
        for (g, v) in f.grid.iter().zip(&f.centered) {
            assert!((v - (w * g - mu)).abs() < 1e-12);
        }
    }
    assert_eq!(t.intercept, 1.0);
}

#[test]
fn reconstruction_identity_for_every_variant() {
    let mut rng = seeded_rng(2);
    for kind in ModelKind::ALL {
        for c in [1, 3] {
            let m = random_model(kind, 4, c, 7);
            let train = Matrix::from_fn(80, 4, |_, _| rng.gen_range(0.0..1.0));
            let held = Matrix::from_fn(40, 4, |_, _| rng.gen_range(-0.2..1.2));
            let logits = m.predict(&held).unwrap();
            for out in 0..c {
                let o = ExplainOptions { output: out, ..opts(8) };
                let t = export_shape_functions(&m, &train, &names(4), &o).unwrap();
                let dec = decompose(&m, &t, &train, &held).unwrap();
                for (r, v) in dec.reconstruct().iter().enumerate() {
                    let err = (v - logits.get(r, out)).abs();
                    assert!(err < 1e-9, "{kind} output {out}: {err}");
                }
            }
        }
    }
}

#[test]
fn pair_lattices_match_forward_values() {
    for kind in [ModelKind::Na2m, ModelKind::Nb2m] {
        let m = random_model(kind, 3, 1, 4);
        let mut rng = seeded_rng(5);
        let train = Matrix::from_fn(60, 3, |_, _| rng.gen_range(0.0..1.0));
        let o = ExplainOptions {
            grid: 5,
            pair_grid: 4,
            top_pairs: 2,
            output: 0,
        };
        let t = export_shape_functions(&m, &train, &names(3), &o).unwrap();
        assert_eq!(t.pairs.len(), 2);
        assert!(t.pairs[0].importance >= t.pairs[1].importance);
        let w = m.output_layer().pair_weights.unwrap();
        for p in &t.pairs {
            let (i, j) = p.features;
            for (k, v) in p.centered.iter().enumerate() {
                let mut row = vec![0.3; 3];
                row[i] = p.grid_i[k / 4];
                row[j] = p.grid_j[k % 4];
                let fwd = m
                    .forward(&Matrix::from_rows(&[row]).unwrap(), nbm::Mode::Eval, Default::default(), &mut seeded_rng(0))
                    .unwrap();
                let expect = fwd.pair_shapes.unwrap().get(0, p.index) * w.get(p.index, 0) - p.mean;
                assert!((v - expect).abs() < 1e-10);
            }
        }
        let mut buf = Vec::new();
        write_pair_csv(&t, &names(3), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * 16);
    }
}

#[test]
fn csv_export_has_one_row_per_grid_point_and_is_deterministic() {
    let m = random_model(ModelKind::Nbm, 3, 1, 3);
    let mut rng = seeded_rng(6);
    let train = Matrix::from_fn(100, 3, |_, _| rng.gen_range(0.0..1.0));
    let t = export_shape_functions(&m, &train, &names(3), &opts(32)).unwrap();
    let mut a = Vec::new();
    write_shape_csv(&t, &mut a).unwrap();
    let text = String::from_utf8(a.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 32);
    assert_eq!(text.lines().next().unwrap(), "feature,x,f_centered,density_bin_left,density");
    let t2 = export_shape_functions(&m, &train, &names(3), &opts(32)).unwrap();
    let mut b = Vec::new();
    write_shape_csv(&t2, &mut b).unwrap();
    assert_eq!(a, b);
    for f in &t.features {
        assert!((f.density.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f.density_edges.len(), f.density.len() + 1);
    }
    let meta = shape_metadata(&t);
    assert_eq!(meta["grid_size"], 32);
    assert_eq!(meta["features"].as_array().unwrap().len(), 3);
}

#[test]
fn export_rejects_bad_inputs() {
    let m = linear(&[1.0, 2.0], 0.0);
    let x = Matrix::zeros(4, 2);
    assert!(export_shape_functions(&m, &Matrix::zeros(4, 3), &names(3), &opts(4)).is_err());
    assert!(export_shape_functions(&m, &Matrix::zeros(0, 2), &names(2), &opts(4)).is_err());
    let o = ExplainOptions { output: 1, ..opts(4) };
    assert!(export_shape_functions(&m, &x, &names(2), &o).is_err());
    let mut bad = m.clone();
    let mut theta = bad.flatten_trainable();
    theta[0] = f64::NAN;
    bad.assign_trainable(&theta);
    let x = Matrix::from_fn(4, 2, |r, _| r as f64);
    assert!(export_shape_functions(&bad, &x, &names(2), &opts(4)).is_err());
}

fn table(values: &[&[f64]]) -> ShapeTable {
    ShapeTable {
        model_kind: "nbm".into(),
        output: 0,
        intercept: 0.0,
        features: values
            .iter()
            .enumerate()
            .map(|(i, v)| FeatureShape {
                name: format!("x{i}"),
                grid: (0..v.len()).map(|k| k as f64).collect(),
                centered: v.to_vec(),
                mean: 0.0,
                density_edges: vec![0.0, 1.0],
                density: vec![1.0],
            })
            .collect(),
        pairs: vec![],
    }
}

#[test]
fn stability_examples() {
    let a = table(&[&[1.0, 2.0], &[0.0, -1.0]]);
    assert_eq!(stability_score(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);

    let m = random_model(ModelKind::Nam, 2, 1, 1);
    let mut rng = seeded_rng(3);
    let train = Matrix::from_fn(30, 2, |_, _| rng.gen_range(0.0..1.0));
    let t1 = export_shape_functions(&m, &train, &names(2), &opts(8)).unwrap();
    let mut shifted = m.clone();
    if let Model::Nam(p) = &mut shifted {
        p.unary.nets[0].output.bias[0] += 5.0;
        p.unary.nets[1].output.bias[0] -= 2.0;
    }
    let t2 = export_shape_functions(&shifted, &train, &names(2), &opts(8)).unwrap();
    assert!(stability_score(&[t1.clone(), t2]).unwrap() < 1e-12);

    // Feature 0 point 0: {0, 3, 0} → std √2; point 1: {0, 0, 0} → 0.
    // Feature 1 point 0: {1, 1, 4} → std √2; point 1: {2, 2, 2} → 0.
    let h1 = table(&[&[0.0, 0.0], &[1.0, 2.0]]);
    let h2 = table(&[&[3.0, 0.0], &[1.0, 2.0]]);
    let h3 = table(&[&[0.0, 0.0], &[4.0, 2.0]]);
    let s = stability_score(&[h1, h2, h3]).unwrap();
    assert!((s - 2f64.sqrt() / 2.0).abs() < 1e-12, "{s}");

    assert!(matches!(stability_score(std::slice::from_ref(&a)), Err(Error::Contract(_))));
    let other = table(&[&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]]);
    assert!(matches!(stability_score(&[a, other]), Err(Error::Data(_))));
}

#[test]
fn bench_report_counts() {
    let m = random_model(ModelKind::Nbm, 4, 1, 2);
    let mut rng = seeded_rng(4);
    let x = Matrix::from_fn(512, 4, |_, _| rng.gen_range(0.0..1.0));
    let r = throughput_bench(&m, &x, 20, 3, 1).unwrap();
    assert_eq!(r.param_count, param_count(&m.architecture()));
    assert_eq!(r.param_count, m.trainable_count());
    assert!(r.instances_per_second > 0.0);
    assert_eq!(r.batch_size, 512);
}
