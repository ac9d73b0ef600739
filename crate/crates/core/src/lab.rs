//! One-dimensional bilevel problems with closed-form pieces.
//!
//! An [`InnerProblem1D`] holds two group losses `f`, `g`, a shared term `h`
//! and the mass `c₁`. For a weight `λ ∈ [0, c₁]` the inner solution is
//!
//! ```text
//! w_λ = argmin_w  λ·f(w) + (c₁ − λ)·g(w) + h(w)
//! ```
//!
//! and the outer objective is `F(λ) = |f(w_λ) − g(w_λ)|`. The checks below
//! probe `F` on a grid: whether it only falls and then rises, whether it is
//! convex, whether its slope has the sign of `g − f`, and how fast signed
//! descent on `λ` closes in on the grid minimizer.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::fairbatch::{convergence_envelope, signed_gd_1d};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("λ = {lambda}: the stationarity residual does not change sign on [{lo}, {hi}] ({r_lo:.3e} to {r_hi:.3e})")]
    NoBracket { lambda: f64, lo: f64, hi: f64, r_lo: f64, r_hi: f64 },
    #[error("λ = {lambda}: inner solve stopped with residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { lambda: f64, residual: f64, iterations: usize },
    #[error("grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),
    #[error("λ = {lambda} is outside [0, {upper}]")]
    LambdaOutOfRange { lambda: f64, upper: f64 },
}

/// A smooth convex scalar function with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Curve {
    /// `a·(w − b)² + c`
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `a·(e^{s(w−b)} + e^{−s(w−b)})`
    Cosh {
        a: f64,
        s: f64,
        b: f64,
    },
    /// `a·ln(1 + e^{s(w−b)})`, the log-sum-exp of `0` and `s(w − b)`.
    Softplus {
        a: f64,
        s: f64,
        b: f64,
    },
    /// `a·ln(e^{s(w−b)} + e^{−s(w−b)})`
    LogSumExp {
        a: f64,
        s: f64,
        b: f64,
    },
    Zero,
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Curve {
    pub fn value(&self, w: f64) -> f64 {
        match *self {
            Curve::Quadratic { a, b, c } => a * (w - b).powi(2) + c,
            Curve::Cosh { a, s, b } => a * ((s * (w - b)).exp() + (-s * (w - b)).exp()),
            Curve::Softplus { a, s, b } => a * softplus(s * (w - b)),
            Curve::LogSumExp { a, s, b } => {
                let u = s * (w - b);
                a * (u.abs() + (-2.0 * u.abs()).exp().ln_1p())
            }
            Curve::Zero => 0.0,
        }
    }

    pub fn d1(&self, w: f64) -> f64 {
        match *self {
            Curve::Quadratic { a, b, .. } => 2.0 * a * (w - b),
            Curve::Cosh { a, s, b } => a * s * ((s * (w - b)).exp() - (-s * (w - b)).exp()),
            Curve::Softplus { a, s, b } => a * s * logistic(s * (w - b)),
            Curve::LogSumExp { a, s, b } => a * s * (s * (w - b)).tanh(),
            Curve::Zero => 0.0,
        }
    }

    pub fn d2(&self, w: f64) -> f64 {
        match *self {
            Curve::Quadratic { a, .. } => 2.0 * a,
            Curve::Cosh { a, s, b } => a * s * s * ((s * (w - b)).exp() + (-s * (w - b)).exp()),
            Curve::Softplus { a, s, b } => {
                let q = logistic(s * (w - b));
                a * s * s * q * (1.0 - q)
            }
            Curve::LogSumExp { a, s, b } => {
                let t = (s * (w - b)).tanh();
                a * s * s * (1.0 - t * t)
            }
            Curve::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerProblem1D {
    pub f: Curve,
    pub g: Curve,
    pub h: Curve,
    pub c1: f64,
}

impl InnerProblem1D {
    /// The problem whose outer objective is quasiconvex but not convex:
    /// `f = (e^w + e^{−w})/5`, `g = (w − 1)²`, no shared term, `c₁ = 1`.
    pub fn counterexample() -> Self {
        Self {
            f: Curve::Cosh { a: 0.2, s: 1.0, b: 0.0 },
            g: Curve::Quadratic { a: 1.0, b: 1.0, c: 0.0 },
            h: Curve::Zero,
            c1: 1.0,
        }
    }

    /// Derivative of the inner objective in `w`.
    pub fn residual(&self, lambda: f64, w: f64) -> f64 {
        lambda * self.f.d1(w) + (self.c1 - lambda) * self.g.d1(w) + self.h.d1(w)
    }

    /// Second derivative of the inner objective in `w`. Positive curvature
    /// at `w_λ` for every `λ` is the condition under which `F` is quasiconvex.
    pub fn curvature(&self, lambda: f64, w: f64) -> f64 {
        lambda * self.f.d2(w) + (self.c1 - lambda) * self.g.d2(w) + self.h.d2(w)
    }

    /// `F(λ)` given the inner solution.
    pub fn outer(&self, w: f64) -> f64 {
        (self.f.value(w) - self.g.value(w)).abs()
    }
}

/// Bracket and stopping rule for [`inner_solve_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerSolver {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self { lo: -50.0, hi: 50.0, tol: 1e-10, max_iter: 500 }
    }
}

pub fn inner_solve(p: &InnerProblem1D, lambda: f64) -> Result<f64, LabError> {
    inner_solve_with(p, lambda, &InnerSolver::default())
}

/// Root of the stationarity residual by Newton steps that fall back to
/// bisection whenever a step leaves the current bracket.
pub fn inner_solve_with(p: &InnerProblem1D, lambda: f64, solver: &InnerSolver) -> Result<f64, LabError> {
    if !(0.0..=p.c1).contains(&lambda) {
        return Err(LabError::LambdaOutOfRange { lambda, upper: p.c1 });
    }
    let (mut a, mut b) = (solver.lo, solver.hi);
    let (r_lo, r_hi) = (p.residual(lambda, a), p.residual(lambda, b));
    if r_lo.abs() <= solver.tol {
        return Ok(a);
    }
    if r_hi.abs() <= solver.tol {
        return Ok(b);
    }
    if !(r_lo < 0.0 && r_hi > 0.0) {
        return Err(LabError::NoBracket { lambda, lo: a, hi: b, r_lo, r_hi });
    }
    let mut w = 0.5 * (a + b);
    let mut r = p.residual(lambda, w);
    for _ in 0..solver.max_iter {
        if r.abs() <= solver.tol {
            return Ok(w);
        }
        if r < 0.0 {
            a = w;
        } else {
            b = w;
        }
        let slope = p.curvature(lambda, w);
        let newton = w - r / slope;
        let next = if slope > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if next == w {
            break;
        }
        w = next;
        r = p.residual(lambda, w);
    }
    if r.abs() <= solver.tol {
        Ok(w)
    } else {
        Err(LabError::NoConvergence { lambda, residual: r.abs(), iterations: solver.max_iter })
    }
}

/// Inner solution and the two losses at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerSolution {
    pub w: f64,
    pub f: f64,
    pub g: f64,
    pub residual: f64,
}

/// `F` sampled on a grid of `λ` values, with the inner solutions when the
/// surface came from a problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterSurface {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub solutions: Vec<InnerSolution>,
    pub tol: f64,
}

impl OuterSurface {
    /// A surface given directly by its values, for exercising the checks.
    pub fn from_values(lambdas: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(lambdas.len(), values.len());
        Self { lambdas, values, solutions: Vec::new(), tol: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing, assuming a uniform grid.
    pub fn spacing(&self) -> f64 {
        (self.lambdas[self.len() - 1] - self.lambdas[0]) / (self.len() - 1) as f64
    }

    /// Index of the smallest value; the first one on ties.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Evaluates `F` at `grid_size` evenly spaced points of `[0, c₁]`.
pub fn sweep_surface(p: &InnerProblem1D, grid_size: usize) -> Result<OuterSurface, LabError> {
    sweep_surface_with(p, grid_size, &InnerSolver::default())
}

pub fn sweep_surface_with(
    p: &InnerProblem1D,
    grid_size: usize,
    solver: &InnerSolver,
) -> Result<OuterSurface, LabError> {
    if grid_size < 3 {
        return Err(LabError::GridTooSmall(grid_size));
    }
    let last = (grid_size - 1) as f64;
    let mut lambdas = Vec::with_capacity(grid_size);
    let mut values = Vec::with_capacity(grid_size);
    let mut solutions = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let lambda = if i + 1 == grid_size { p.c1 } else { p.c1 * i as f64 / last };
        let w = inner_solve_with(p, lambda, solver)?;
        let sol = InnerSolution { w, f: p.f.value(w), g: p.g.value(w), residual: p.residual(lambda, w) };
        lambdas.push(lambda);
        values.push((sol.f - sol.g).abs());
        solutions.push(sol);
    }
    Ok(OuterSurface { lambdas, values, solutions, tol: solver.tol })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum QuasiconvexVerdict {
    Quasiconvex,
    /// The surface rose and then fell again starting at `lambda`.
    ViolatedAt {
        lambda: f64,
    },
}

impl QuasiconvexVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, QuasiconvexVerdict::Quasiconvex)
    }
}

/// Accepts a surface that falls and then rises, ignoring steps of size
/// `≤ tol` in the wrong direction.
pub fn check_quasiconvex(s: &OuterSurface, tol: f64) -> QuasiconvexVerdict {
    let mut rising = false;
    for i in 0..s.len().saturating_sub(1) {
        let step = s.values[i + 1] - s.values[i];
        if !rising && step > tol {
            rising = true;
        } else if rising && step < -tol {
            return QuasiconvexVerdict::ViolatedAt { lambda: s.lambdas[i] };
        }
    }
    QuasiconvexVerdict::Quasiconvex
}

/// Minimum chord gap that counts as a convexity violation.
pub const NONCONVEX_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum NonconvexVerdict {
    /// `F(b)` sits `gap` above the chord from `a` to `c`.
    Nonconvex {
        a: f64,
        b: f64,
        c: f64,
        gap: f64,
    },
    NoViolationFound,
}

/// Searches every symmetric triple of grid points for the largest amount by
/// which the middle value exceeds the chord.
pub fn check_nonconvex(s: &OuterSurface) -> NonconvexVerdict {
    let n = s.len();
    let mut worst: Option<(usize, usize, f64)> = None;
    for mid in 1..n.saturating_sub(1) {
        for k in 1..=mid.min(n - 1 - mid) {
            let gap = s.values[mid] - 0.5 * (s.values[mid - k] + s.values[mid + k]);
            if gap >= NONCONVEX_GAP && worst.is_none_or(|(_, _, g)| gap > g) {
                worst = Some((mid, k, gap));
            }
        }
    }
    match worst {
        Some((mid, k, gap)) => {
            NonconvexVerdict::Nonconvex { a: s.lambdas[mid - k], b: s.lambdas[mid], c: s.lambdas[mid + k], gap }
        }
        None => NonconvexVerdict::NoViolationFound,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum SignVerdict {
    Agree {
        slope: f64,
        gap: f64,
    },
    Disagree {
        slope: f64,
        gap: f64,
    },
    /// Too close to the kink or too flat to read a sign.
    Inconclusive {
        reason: &'static str,
    },
}

impl SignVerdict {
    pub fn agrees(&self) -> bool {
        matches!(self, SignVerdict::Agree { .. })
    }

    pub fn disagrees(&self) -> bool {
        matches!(self, SignVerdict::Disagree { .. })
    }
}

/// Compares a central difference of `F` at `λ` with `sign(g(w_λ) − f(w_λ))`.
///
/// Slopes smaller than `1e-6 + 10·tol/h_fd` are treated as noise, and so are
/// points whose difference `f − g` changes sign inside `[λ − h_fd, λ + h_fd]`.
pub fn check_sign_identity(p: &InnerProblem1D, lambda: f64, h_fd: f64) -> Result<SignVerdict, LabError> {
    if lambda - h_fd < 0.0 || lambda + h_fd > p.c1 {
        return Ok(SignVerdict::Inconclusive { reason: "finite-difference stencil leaves [0, c1]" });
    }
    let solver = InnerSolver::default();
    let diff = |l: f64| -> Result<f64, LabError> {
        let w = inner_solve_with(p, l, &solver)?;
        Ok(p.f.value(w) - p.g.value(w))
    };
    let (below, centre, above) = (diff(lambda - h_fd)?, diff(lambda)?, diff(lambda + h_fd)?);
    if below.signum() != above.signum() || below == 0.0 || above == 0.0 {
        return Ok(SignVerdict::Inconclusive { reason: "f - g changes sign inside the stencil" });
    }
    let slope = (above.abs() - below.abs()) / (2.0 * h_fd);
    let noise = 1e-6 + 10.0 * solver.tol / h_fd;
    if slope.abs() <= noise {
        return Ok(SignVerdict::Inconclusive { reason: "slope below the noise floor" });
    }
    let gap = -centre;
    Ok(if slope.signum() == gap.signum() {
        SignVerdict::Agree { slope, gap }
    } else {
        SignVerdict::Disagree { slope, gap }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum ConvergenceVerdict {
    Holds { terminal_error: f64 },
    ViolatedAt { step: usize, error: f64, bound: f64 },
}

impl ConvergenceVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, ConvergenceVerdict::Holds { .. })
    }
}

/// Checks `|λ_t − λ*| ≤ max(|λ_0 − λ*| − tα, α) + slack` along a trajectory,
/// where `slack` covers the uncertainty in `λ*`.
pub fn check_convergence_bound(trajectory: &[f64], lambda_star: f64, alpha: f64, slack: f64) -> ConvergenceVerdict {
    let Some(&start) = trajectory.first() else {
        return ConvergenceVerdict::Holds { terminal_error: f64::NAN };
    };
    for (t, &l) in trajectory.iter().enumerate() {
        let error = (l - lambda_star).abs();
        let bound = convergence_envelope(start, lambda_star, alpha, t) + slack;
        if error > bound + 1e-12 {
            return ConvergenceVerdict::ViolatedAt { step: t, error, bound };
        }
    }
    let last = trajectory[trajectory.len() - 1];
    ConvergenceVerdict::Holds { terminal_error: (last - lambda_star).abs() }
}

/// Signed descent on `λ` driven by exact inner solutions.
pub fn signed_descent(p: &InnerProblem1D, lambda0: f64, alpha: f64, steps: usize) -> Result<Vec<f64>, LabError> {
    signed_gd_1d(
        |l| {
            let w = inner_solve(p, l)?;
            Ok((p.f.value(w), p.g.value(w)))
        },
        lambda0,
        alpha,
        p.c1,
        steps,
    )
}

/// Smallest inner curvature over the surface, `min_λ ∂²_w` at `w_λ`.
pub fn min_curvature(p: &InnerProblem1D, s: &OuterSurface) -> f64 {
    s.lambdas.iter().zip(&s.solutions).map(|(&l, sol)| p.curvature(l, sol.w)).fold(f64::INFINITY, f64::min)
}

/// Largest violation of `f(w_λ)` nonincreasing and `g(w_λ)` nondecreasing
/// along the grid; zero when both hold exactly. Both hold when there is no
/// shared term `h`.
pub fn monotonicity_violation(s: &OuterSurface) -> f64 {
    s.solutions.windows(2).map(|w| (w[1].f - w[0].f).max(w[0].g - w[1].g).max(0.0)).fold(0.0, f64::max)
}

/// Largest rise of `f(w_λ) − g(w_λ)` between neighbouring grid points. With
/// a shared term the two losses may move together, but their difference
/// still never increases in λ.
pub fn gap_monotonicity_violation(s: &OuterSurface) -> f64 {
    s.solutions.windows(2).map(|w| ((w[1].f - w[1].g) - (w[0].f - w[0].g)).max(0.0)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fixture {
    pub name: &'static str,
    pub problem: InnerProblem1D,
}

/// Problems with strictly convex inner objectives on all of `[0, c₁]`.
pub fn fixtures() -> Vec<Fixture> {
    use Curve::*;
    let fx = |name, f, g, h, c1| Fixture { name, problem: InnerProblem1D { f, g, h, c1 } };
    vec![
        Fixture { name: "counterexample", problem: InnerProblem1D::counterexample() },
        fx("quadratic-pair", Quadratic { a: 1.0, b: -1.0, c: 0.0 }, Quadratic { a: 1.0, b: 1.0, c: 0.0 }, Zero, 1.0),
        fx("quadratic-skewed", Quadratic { a: 2.0, b: -0.5, c: 0.3 }, Quadratic { a: 0.5, b: 2.0, c: 0.0 }, Zero, 0.6),
        fx(
            "quadratic-shared",
            Quadratic { a: 1.0, b: -1.0, c: 0.0 },
            Quadratic { a: 1.0, b: 1.0, c: 0.0 },
            Quadratic { a: 0.3, b: 0.0, c: 0.0 },
            1.0,
        ),
        fx(
            "cosh-quadratic-shared",
            Cosh { a: 0.2, s: 1.0, b: 0.0 },
            Quadratic { a: 1.0, b: 1.0, c: 0.0 },
            Quadratic { a: 0.1, b: 0.5, c: 0.0 },
            1.0,
        ),
        fx("cosh-pair", Cosh { a: 0.5, s: 1.0, b: -1.0 }, Cosh { a: 0.25, s: 2.0, b: 1.0 }, Zero, 1.0),
        fx(
            "cosh-pair-shared",
            Cosh { a: 0.3, s: 1.5, b: 0.5 },
            Cosh { a: 0.6, s: 0.5, b: -2.0 },
            Quadratic { a: 0.2, b: 0.0, c: 0.0 },
            2.0,
        ),
        fx(
            "softplus-quadratic",
            Softplus { a: 1.0, s: -3.0, b: 0.0 },
            Quadratic { a: 1.0, b: 1.0, c: 0.0 },
            Quadratic { a: 0.05, b: 0.0, c: 0.0 },
            1.0,
        ),
        fx(
            "softplus-pair-shared",
            Softplus { a: 1.0, s: 2.0, b: 1.0 },
            Softplus { a: 1.0, s: -2.0, b: -1.0 },
            Quadratic { a: 0.05, b: 0.0, c: 0.0 },
            1.0,
        ),
        fx("logsumexp-pair", LogSumExp { a: 1.0, s: 1.0, b: -2.0 }, LogSumExp { a: 0.5, s: 2.0, b: 1.0 }, Zero, 0.8),
        fx(
            "logsumexp-quadratic-shared",
            LogSumExp { a: 0.7, s: 1.5, b: 0.5 },
            Quadratic { a: 0.4, b: -1.5, c: 0.2 },
            LogSumExp { a: 0.1, s: 1.0, b: 0.0 },
            1.5,
        ),
        fx("identical", Quadratic { a: 1.0, b: 0.5, c: 0.0 }, Quadratic { a: 1.0, b: 0.5, c: 0.0 }, Zero, 1.0),
    ]
}

/// Settings of the full theory report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub grid_size: usize,
    pub quasiconvex_tol: f64,
    pub sign_samples: usize,
    pub fd_step: f64,
    /// Grid cells on each side of the surface minimizer skipped by sign checks.
    pub kink_cells: usize,
    pub starts: usize,
    pub alpha: f64,
    pub steps: usize,
    pub seed: u64,
    /// Adds a hand-built W-shaped surface that must fail the quasiconvexity check.
    pub inject_w_shape: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            grid_size: 2001,
            quasiconvex_tol: 1e-9,
            sign_samples: 60,
            fd_step: 1e-4,
            kink_cells: 2,
            starts: 10,
            alpha: 0.01,
            steps: 200,
            seed: 0,
            inject_w_shape: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    /// `F(0)` and `F(1)` of the counterexample as computed.
    pub endpoints: [f64; 2],
    /// Closed forms `(e + 1/e)/5` and `0.6`.
    pub endpoint_closed_forms: [f64; 2],
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn record(checks: &mut Vec<CheckResult>, name: impl Into<String>, passed: bool, detail: String) {
    checks.push(CheckResult { name: name.into(), passed, detail });
}

/// Runs every lab check on the counterexample and the fixture library.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport, LabError> {
    let mut checks = Vec::new();
    let p = InnerProblem1D::counterexample();
    let surface = sweep_surface(&p, cfg.grid_size)?;
    let cell = surface.spacing();

    let e = std::f64::consts::E;
    let closed = [(e + 1.0 / e) / 5.0, 0.6];
    let endpoints = [surface.values[0], surface.values[surface.len() - 1]];
    let endpoint_err = (endpoints[0] - closed[0]).abs().max((endpoints[1] - closed[1]).abs());
    record(
        &mut checks,
        "counterexample/endpoints",
        endpoint_err <= 1e-9,
        format!("F(0) = {:.12}, F(1) = {:.12}, max error {endpoint_err:.2e}", endpoints[0], endpoints[1]),
    );

    let qc = check_quasiconvex(&surface, cfg.quasiconvex_tol);
    record(&mut checks, "counterexample/quasiconvex", qc.passed(), format!("{qc:?}"));

    let nc = check_nonconvex(&surface);
    record(
        &mut checks,
        "counterexample/nonconvex",
        matches!(nc, NonconvexVerdict::Nonconvex { .. }),
        format!("{nc:?}"),
    );

    let star_index = surface.argmin();
    let lambda_star = surface.lambdas[star_index];
    let mut rng = rng::stream(cfg.seed, Stream::Lab);
    let (mut agree, mut disagree, mut skipped, mut attempts) = (0usize, 0usize, 0usize, 0usize);
    while agree + disagree < cfg.sign_samples && attempts < 100 * cfg.sign_samples.max(1) {
        attempts += 1;
        let i = rng.random_range(0..surface.len());
        if i.abs_diff(star_index) <= cfg.kink_cells {
            continue;
        }
        match check_sign_identity(&p, surface.lambdas[i], cfg.fd_step)? {
            SignVerdict::Agree { .. } => agree += 1,
            SignVerdict::Disagree { .. } => disagree += 1,
            SignVerdict::Inconclusive { .. } => skipped += 1,
        }
    }
    record(
        &mut checks,
        "counterexample/sign-identity",
        disagree == 0 && agree >= cfg.sign_samples,
        format!("{agree} agree, {disagree} disagree, {skipped} inconclusive"),
    );

    let mut worst_terminal: f64 = 0.0;
    let mut violations = Vec::new();
    for _ in 0..cfg.starts {
        let start = rng.random_range(0.0..=p.c1);
        let trajectory = signed_descent(&p, start, cfg.alpha, cfg.steps)?;
        match check_convergence_bound(&trajectory, lambda_star, cfg.alpha, cell) {
            ConvergenceVerdict::Holds { terminal_error } => worst_terminal = worst_terminal.max(terminal_error),
            v => violations.push(format!("start {start:.4}: {v:?}")),
        }
    }
    let terminal_ok = worst_terminal <= cfg.alpha + cell + 1e-12;
    record(
        &mut checks,
        "counterexample/convergence-envelope",
        violations.is_empty() && terminal_ok,
        if violations.is_empty() {
            format!("{} starts, λ* = {lambda_star:.4}, worst terminal error {worst_terminal:.4}", cfg.starts)
        } else {
            violations.join("; ")
        },
    );

    for fx in fixtures() {
        let s = sweep_surface(&fx.problem, cfg.grid_size)?;
        let curvature = min_curvature(&fx.problem, &s);
        record(
            &mut checks,
            format!("{}/positive-curvature", fx.name),
            curvature > 0.0,
            format!("min curvature {curvature:.3e}"),
        );
        let qc = check_quasiconvex(&s, cfg.quasiconvex_tol);
        record(&mut checks, format!("{}/quasiconvex", fx.name), qc.passed(), format!("{qc:?}"));
        let gap = gap_monotonicity_violation(&s);
        record(
            &mut checks,
            format!("{}/monotone-gap", fx.name),
            gap <= 1e-8,
            format!("largest rise of f - g {gap:.2e}"),
        );
        if fx.problem.h == Curve::Zero {
            let mono = monotonicity_violation(&s);
            record(
                &mut checks,
                format!("{}/monotone-losses", fx.name),
                mono <= 1e-8,
                format!("largest violation {mono:.2e}"),
            );
        }
    }

    if cfg.inject_w_shape {
        let w = w_shape(41);
        let qc = check_quasiconvex(&w, cfg.quasiconvex_tol);
        record(&mut checks, "injected-w-shape/quasiconvex", qc.passed(), format!("{qc:?}"));
    }

    Ok(SuiteReport { endpoints, endpoint_closed_forms: closed, checks })
}

/// `|  |λ − 0.5| − 0.25 |` on `[0, 1]`: two valleys with a peak between them.
pub fn w_shape(n: usize) -> OuterSurface {
    let lambdas: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let values = lambdas.iter().map(|l| ((l - 0.5).abs() - 0.25).abs()).collect();
    OuterSurface::from_values(lambdas, values)
}
