//! Quadratic-cost transport between finite weighted point clouds.

mod assignment;
mod cloud;
mod plan;

pub use assignment::{
    assignment_cost, brute_force_assignment, check_cyclical_monotonicity, recover_potential,
    solve_assignment, Assignment, CycleCheck, DiscretePotential, MAX_ASSIGNMENT, MAX_CYCLE,
};
pub use cloud::{half_sq_dist, PointCloud, MAX_DIM};
pub use plan::{
    correlation_duality_check, solve_plan, solve_transport, wasserstein2, DualityReport,
    TransportPlan, MAX_PLAN_ENTRIES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `k` uniform points in `[0, 1)^dim` from a seeded generator.
pub fn random_cloud(k: usize, dim: usize, seed: u64) -> crate::Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..k).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    PointCloud::uniform(pts)
}
