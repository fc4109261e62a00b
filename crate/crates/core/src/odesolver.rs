//! Fixed-step explicit integration of `dI/dt = f(I, t)`.
//!
//! The solver is written once against [`OdeSystem`] and runs on plain scalars
//! (surrogate fields), on tensors (inference), and on tape handles (training,
//! where the unrolled steps are differentiated exactly).

use crate::autodiff::{kernels, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vectorfield::{eval_field, eval_field_on_tape, ParamVars, VectorFieldParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "rk4" => Some(Method::Rk4),
            "euler" => Some(Method::Euler),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub max_step: f64,
    pub method: Method,
}

pub const DEFAULT_MAX_STEP: f64 = 0.25;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_start: 1.0,
            t_end: 1.0,
            max_step: DEFAULT_MAX_STEP,
            method: Method::Rk4,
        }
    }
}

impl SolverConfig {
    /// Same step size and method over a new interval.
    pub fn over(&self, t_start: f64, t_end: f64) -> SolverConfig {
        SolverConfig {
            t_start,
            t_end,
            ..*self
        }
    }

    /// Checks the super-resolution interval: `1 <= t_end <= t_start`.
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if !(self.t_end >= 1.0 && self.t_start >= self.t_end) {
            return Err(Error::domain(format!(
                "solver interval must satisfy 1 <= t_end <= t_start, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<StepGrid> {
        StepGrid::new(self.t_start, self.t_end, self.max_step)
    }
}

/// Uniform step boundaries between `t_start` and `t_end`, in either direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl StepGrid {
    pub fn new(t_start: f64, t_end: f64, max_step: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::domain(format!(
                "integration bounds must be finite, got [{t_start}, {t_end}]"
            )));
        }
        if !(max_step.is_finite() && max_step > 0.0) {
            return Err(Error::domain(format!("max_step must be positive, got {max_step}")));
        }
        let span = (t_end - t_start).abs();
        let steps = if span == 0.0 {
            0
        } else {
            ((span / max_step).ceil() as usize).max(1)
        };
        Ok(StepGrid {
            t_start,
            t_end,
            steps,
        })
    }

    /// Signed step; zero for an empty interval.
    pub fn step_size(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.t_end - self.t_start) / self.steps as f64
        }
    }

    /// Time at boundary `i`; the last boundary is exactly `t_end`.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.step_size()
        }
    }

    /// Boundary index nearest to `t`.
    fn nearest(&self, t: f64) -> usize {
        if self.steps == 0 {
            return 0;
        }
        let frac = (t - self.t_start) / (self.t_end - self.t_start);
        ((frac * self.steps as f64).round().max(0.0) as usize).min(self.steps)
    }
}

/// Right-hand side of an ODE together with the state arithmetic the solver needs.
pub trait OdeSystem {
    type State: Clone;

    fn rate(&mut self, state: &Self::State, t: f64) -> Result<Self::State>;

    /// `y + a * x`
    fn axpy(&mut self, y: &Self::State, a: f64, x: &Self::State) -> Result<Self::State>;

    fn is_finite(&self, state: &Self::State) -> bool;
}

/// Scalar ODE `dy/dt = f(y, t)`.
pub struct ScalarField<F>(pub F);

impl<F: FnMut(f64, f64) -> f64> OdeSystem for ScalarField<F> {
    type State = f64;

    fn rate(&mut self, y: &f64, t: f64) -> Result<f64> {
        Ok((self.0)(*y, t))
    }

    fn axpy(&mut self, y: &f64, a: f64, x: &f64) -> Result<f64> {
        Ok(y + x * a)
    }

    fn is_finite(&self, y: &f64) -> bool {
        y.is_finite()
    }
}

/// The learned field evaluated directly on tensors, without recording.
pub struct NetworkField<'a, T> {
    pub params: &'a VectorFieldParams<T>,
}

impl<'a, T: Scalar> OdeSystem for NetworkField<'a, T> {
    type State = Tensor<T>;

    fn rate(&mut self, state: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        eval_field(self.params, state, t)
    }

    fn axpy(&mut self, y: &Tensor<T>, a: f64, x: &Tensor<T>) -> Result<Tensor<T>> {
        kernels::axpy(y, T::of(a), x)
    }

    fn is_finite(&self, state: &Tensor<T>) -> bool {
        state.is_finite()
    }
}

/// The learned field recorded on a tape, so the whole solve can be differentiated.
pub struct TapeField<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamVars,
}

impl<'a, T: Scalar> OdeSystem for TapeField<'a, T> {
    type State = Var;

    fn rate(&mut self, state: &Var, t: f64) -> Result<Var> {
        eval_field_on_tape(self.tape, self.params, *state, t)
    }

    fn axpy(&mut self, y: &Var, a: f64, x: &Var) -> Result<Var> {
        self.tape.axpy(*y, T::of(a), *x)
    }

    fn is_finite(&self, state: &Var) -> bool {
        self.tape.value(*state).is_finite()
    }
}

fn ensure_finite<S: OdeSystem>(sys: &S, s: &S::State, step: usize, t: f64) -> Result<()> {
    if sys.is_finite(s) {
        Ok(())
    } else {
        Err(Error::Divergence { step, t })
    }
}

/// One classical fourth-order Runge–Kutta step of signed size `h` from `t`.
///
/// `step` is only used to label a divergence error.
pub fn rk4_step<S: OdeSystem>(sys: &mut S, y: &S::State, t: f64, h: f64, step: usize) -> Result<S::State> {
    let half = 0.5 * h;
    let k1 = sys.rate(y, t)?;
    ensure_finite(sys, &k1, step, t)?;
    let y2 = sys.axpy(y, half, &k1)?;
    let k2 = sys.rate(&y2, t + half)?;
    ensure_finite(sys, &k2, step, t + half)?;
    let y3 = sys.axpy(y, half, &k2)?;
    let k3 = sys.rate(&y3, t + half)?;
    ensure_finite(sys, &k3, step, t + half)?;
    let y4 = sys.axpy(y, h, &k3)?;
    let k4 = sys.rate(&y4, t + h)?;
    ensure_finite(sys, &k4, step, t + h)?;

    let acc = sys.axpy(&k1, 2.0, &k2)?;
    let acc = sys.axpy(&acc, 2.0, &k3)?;
    let acc = sys.axpy(&acc, 1.0, &k4)?;
    let next = sys.axpy(y, h / 6.0, &acc)?;
    ensure_finite(sys, &next, step, t + h)?;
    Ok(next)
}

pub fn euler_step<S: OdeSystem>(sys: &mut S, y: &S::State, t: f64, h: f64, step: usize) -> Result<S::State> {
    let k = sys.rate(y, t)?;
    ensure_finite(sys, &k, step, t)?;
    let next = sys.axpy(y, h, &k)?;
    ensure_finite(sys, &next, step, t + h)?;
    Ok(next)
}

fn advance<S: OdeSystem>(sys: &mut S, y: &S::State, grid: &StepGrid, i: usize, method: Method) -> Result<S::State> {
    let t = grid.time(i);
    let h = grid.time(i + 1) - t;
    match method {
        Method::Rk4 => rk4_step(sys, y, t, h, i),
        Method::Euler => euler_step(sys, y, t, h, i),
    }
}

/// Integrates from `cfg.t_start` to `cfg.t_end` in uniform steps no longer
/// than `cfg.max_step`. An empty interval returns `init` untouched.
///
/// Only the grid is validated here, so surrogate problems may use any
/// interval; super-resolution callers check [`SolverConfig::validate`].
pub fn ode_solve<S: OdeSystem>(sys: &mut S, init: &S::State, cfg: &SolverConfig) -> Result<S::State> {
    let grid = cfg.grid()?;
    let mut y = init.clone();
    for i in 0..grid.steps {
        y = advance(sys, &y, &grid, i, cfg.method)?;
    }
    Ok(y)
}

/// States recorded at requested times during one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    /// Recorded times, snapped to step boundaries.
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

/// Like [`ode_solve`], additionally recording the state at the step boundary
/// nearest to each of `record_times`.
///
/// `record_times` must run strictly in the integration direction and lie in
/// the interval. Requests that snap onto an already recorded boundary are
/// merged into it.
pub fn ode_solve_trajectory<S: OdeSystem>(
    sys: &mut S,
    init: &S::State,
    cfg: &SolverConfig,
    record_times: &[f64],
) -> Result<Trajectory<S::State>> {
    let grid = cfg.grid()?;
    let (lo, hi) = if cfg.t_start <= cfg.t_end {
        (cfg.t_start, cfg.t_end)
    } else {
        (cfg.t_end, cfg.t_start)
    };
    let tol = 1e-9 * (1.0 + hi.abs());
    let direction = (cfg.t_end - cfg.t_start).signum();
    for (i, &r) in record_times.iter().enumerate() {
        if !(r.is_finite() && r >= lo - tol && r <= hi + tol) {
            return Err(Error::domain(format!(
                "record time {r} lies outside [{lo}, {hi}]"
            )));
        }
        if i > 0 {
            let prev = record_times[i - 1];
            let ordered = if direction == 0.0 { r == prev } else { (r - prev) * direction > 0.0 };
            if !ordered {
                return Err(Error::domain(format!(
                    "record times must move strictly from t_start toward t_end, got {prev} then {r}"
                )));
            }
        }
    }

    let mut wanted: Vec<usize> = record_times.iter().map(|&r| grid.nearest(r)).collect();
    wanted.dedup();

    let mut traj = Trajectory {
        times: Vec::with_capacity(wanted.len()),
        states: Vec::with_capacity(wanted.len()),
    };
    let mut pending = wanted.iter().peekable();
    let mut y = init.clone();
    for i in 0..=grid.steps {
        if i > 0 {
            y = advance(sys, &y, &grid, i - 1, cfg.method)?;
        }
        if pending.peek() == Some(&&i) {
            pending.next();
            traj.times.push(grid.time(i));
            traj.states.push(y.clone());
        }
        if pending.peek().is_none() {
            break;
        }
    }
    Ok(traj)
}
