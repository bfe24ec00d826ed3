//! Kept in its own binary so no concurrently running test perturbs timings.

use nbm::interpret::throughput_bench;
use nbm::matrix::Matrix;
use nbm::models::{Architecture, Model, ModelKind};
use nbm::seeded_rng;
use rand::Rng;

#[test]
fn doubling_repeats_changes_throughput_little() {
    let mut arch = Architecture::new(ModelKind::Nam, 8, 1);
    arch.hidden = vec![16, 16];
    let m = Model::new(&arch, &mut seeded_rng(1)).unwrap();
    let mut rng = seeded_rng(2);
    let x = Matrix::from_fn(2048, 8, |_, _| rng.gen_range(0.0..1.0));
    // Shared machines add noise: take the closest of a few attempts.
    let best = (0..3)
        .map(|_| {
            let a = throughput_bench(&m, &x, 50, 5, 1).unwrap().instances_per_second;
            let b = throughput_bench(&m, &x, 100, 5, 1).unwrap().instances_per_second;
            (a - b).abs() / a
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best < 0.10, "relative change {best}");
}
