//! Convex solutions of `det D^2 u = f` on a box with Dirichlet data, and
//! checks of the equation's invariances.

mod invariance;
mod section;
mod solver;
mod stencil;

pub use solver::{
    solve_dirichlet, solve_dirichlet_curved, solve_dirichlet_in, ConvexSolution, Scheme,
    SchemeChoice, SolverOptions,
};
pub use invariance::{
    check_affine_invariance, check_quadratic_dilation, random_invariance_maps, AffineMap,
    InvarianceReport, INTERPOLATION_CONSTANT,
};
pub use section::{
    normalize_section, sandwich_radii, strict_convexity_probe, AffineFunction, ConvexityProbe,
    Growth, SliceSection,
};
