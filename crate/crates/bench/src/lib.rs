//! Shared fixtures for the criterion benchmarks.

use swarm_refine::{make_cov_diag, Estimate, NeighborConstraint, RangeObservation, UavId, Vec3};

/// A weak prior near `truth` and `n` exact range constraints from neighbors
/// spread on a sphere around it.
pub fn trilateration_fixture(n: usize) -> (Estimate, Vec<NeighborConstraint>) {
    let truth = Vec3::new(25.0, 25.0, 25.0);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let constraints = (0..n)
        .map(|k| {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * k as f64;
            let p_j = truth + Vec3::new(r * th.cos(), y, r * th.sin()).scale(15.0);
            NeighborConstraint {
                id: UavId(k as u32),
                p_j,
                obs: RangeObservation::new(truth.distance(p_j), 0.5).unwrap(),
                omega: 1.0,
            }
        })
        .collect();
    let prior = Estimate::new(
        truth + Vec3::new(4.0, -3.0, 6.0),
        make_cov_diag(400.0, 400.0, 1600.0).unwrap(),
    );
    (prior, constraints)
}
