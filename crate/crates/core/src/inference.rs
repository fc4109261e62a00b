//! Super-resolution by solving the initial value problem from `I(t0)` to `I(1)`.

use crate::error::Result;
use crate::image::Image;
use crate::odesolver::{ode_solve, ode_solve_trajectory, NetworkField, SolverConfig};
use crate::resample::upscale_to;
use crate::scalar::Scalar;
use crate::vectorfield::VectorFieldParams;

/// Integrates an already enlarged state `I(t0)` down to `t = 1`.
///
/// Only the step size and method of `solver` are used; the interval is `[t0, 1]`.
pub fn restore<T: Scalar>(
    params: &VectorFieldParams<T>,
    initial: &Image<T>,
    t0: f64,
    solver: &SolverConfig,
) -> Result<Image<T>> {
    let cfg = solver.over(t0, 1.0);
    cfg.validate()?;
    let out = ode_solve(&mut NetworkField { params }, &initial.to_tensor(), &cfg)?;
    Image::from_tensor(&out, 0)
}

/// Bicubic enlargement of `lr` by `t0` followed by [`restore`].
pub fn super_resolve<T: Scalar>(
    params: &VectorFieldParams<T>,
    lr: &Image<T>,
    t0: f64,
    solver: &SolverConfig,
) -> Result<Image<T>> {
    let initial = upscale_to(lr, t0)?;
    restore(params, &initial, t0, solver)
}

/// Intermediate states `Î(t_i)` of one solve, each paired with its snapped time.
pub fn super_resolve_trajectory<T: Scalar>(
    params: &VectorFieldParams<T>,
    lr: &Image<T>,
    t0: f64,
    solver: &SolverConfig,
    times: &[f64],
) -> Result<Vec<(f64, Image<T>)>> {
    let cfg = solver.over(t0, 1.0);
    cfg.validate()?;
    let initial = upscale_to(lr, t0)?;
    let traj = ode_solve_trajectory(&mut NetworkField { params }, &initial.to_tensor(), &cfg, times)?;
    traj.times
        .into_iter()
        .zip(traj.states.iter())
        .map(|(t, s)| Ok((t, Image::from_tensor(s, 0)?)))
        .collect()
}
