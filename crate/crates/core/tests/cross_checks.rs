//! Agreement between solvers that reach the same quantity by different
//! routes.

use std::f64::consts::PI;

use ampere_core::brenier::{solve_brenier_torus, DensityField};
use ampere_core::dirichlet::{solve_dirichlet, SolverOptions};
use ampere_core::grid::{GridFunction, GridSpec};
use ampere_core::homogenization::{solve_corrector, QuadraticForm};
use ampere_core::jko::{w2_squared_uniform, Density1D};
use ampere_core::numeric::observed_orders;
use ampere_core::transport::{random_cloud, solve_assignment, solve_plan};

/// Squared distance on the circle between the uniform density and
/// `1 + a cos(2 pi y)`: `(a / 2 pi)^2 / 2`.
fn cosine_w2_squared(a: f64) -> f64 {
    0.5 * (a / (2.0 * PI)).powi(2)
}

#[test]
fn brenier_cost_matches_circle_distance() {
    let n = 128;
    let a = 0.2;
    let exact = cosine_w2_squared(a);
    let spec = GridSpec::unit_torus(n).unwrap();
    let f = DensityField::normalized(GridFunction::constant(spec, 1.0)).unwrap();
    let g = DensityField::normalized(GridFunction::from_fn(spec, |_, y| {
        1.0 + a * (2.0 * PI * y).cos()
    }))
    .unwrap();
    let phi = solve_brenier_torus(&f, &g, &Default::default()).unwrap();
    let mut cost = 0.0;
    for k in 0..spec.len() {
        let (i, j) = spec.ij(k);
        let [x, y] = spec.coord(i, j);
        let [tx, ty] = phi.map_node(k);
        cost += (tx - x).powi(2) + (ty - y).powi(2);
    }
    cost /= spec.len() as f64;
    assert!((cost - exact).abs() <= 1e-3 * exact, "{cost} vs {exact}");

    let rho = Density1D::from_fn(n, |y| 1.0 + a * (2.0 * PI * y).cos()).unwrap();
    let one_d = w2_squared_uniform(&rho, &Density1D::uniform(n).unwrap()).unwrap();
    assert!((one_d - exact).abs() <= 1e-3 * exact, "{one_d} vs {exact}");
}

/// The Dirichlet solver, given the tiled corrector as boundary data,
/// reproduces it up to the difference of the two discretizations.
#[test]
fn dirichlet_solver_recovers_the_corrector() {
    let mut gaps = Vec::new();
    for m in [16, 32, 64] {
        let torus = GridSpec::unit_torus(m).unwrap();
        let f = GridFunction::from_fn(torus, |x, y| {
            1.0 + 0.1 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
        });
        let c = solve_corrector(&f, &QuadraticForm::identity(), &Default::default()).unwrap();
        let bx = GridSpec::unit_box(m).unwrap();
        let periodic = |k: usize| {
            let (i, j) = bx.ij(k);
            torus.idx(i % m, j % m)
        };
        let fb = GridFunction::new(bx, (0..bx.len()).map(|k| f.values()[periodic(k)]).collect())
            .unwrap();
        let gb = GridFunction::new(
            bx,
            (0..bx.len())
                .map(|k| {
                    let (i, j) = bx.ij(k);
                    let [x, y] = bx.coord(i, j);
                    0.5 * (x * x + y * y) + c.w.values()[periodic(k)]
                })
                .collect(),
        )
        .unwrap();
        let sol = solve_dirichlet(&fb, &gb, &SolverOptions::default()).unwrap();
        gaps.push(sol.u.sup_distance(&gb).unwrap());
    }
    assert!(gaps[2] < 1e-6, "{gaps:?}");
    for order in observed_orders(&gaps) {
        assert!(order > 1.8, "{gaps:?}");
    }
}

#[test]
fn assignment_and_plan_agree_on_uniform_clouds() {
    for seed in 0..20 {
        let x = random_cloud(6, 3, seed).unwrap();
        let y = random_cloud(6, 3, seed + 100).unwrap();
        let a = solve_assignment(&x, &y).unwrap();
        let p = solve_plan(&x, &y).unwrap();
        assert!((a.mean_cost() - p.cost).abs() <= 1e-12, "seed {seed}");
    }
}
