//! Entropic optimal transport between uniform particle measures.
//!
//! The solver runs Sinkhorn's coordinate ascent on the dual potentials,
//! annealing the temperature through a decreasing schedule and warm-starting
//! each temperature from the previous duals. Within a temperature the sweeps
//! rescale a kernel built from the log-domain potentials, falling back to
//! log-domain updates when a scaling leaves the representable range. At the
//! final temperature Newton steps on the semi-dual accelerate convergence.
//! The cost is the squared distance `C_ij = (x_i - y_j)^2`.

use crate::error::{Error, Result};
use crate::measures::ParticleSet;

/// Decreasing temperature sequence for Sinkhorn annealing.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealingSchedule {
    temperatures: Vec<f64>,
    inner_iterations: usize,
    tolerance: f64,
    max_final_iterations: usize,
    newton: bool,
}

impl AnnealingSchedule {
    pub const DEFAULT_START: f64 = 1.0;
    pub const DEFAULT_RATIO: f64 = 0.5;
    pub const DEFAULT_INNER: usize = 20;
    pub const DEFAULT_TOLERANCE: f64 = 1e-9;
    pub const DEFAULT_MAX_FINAL_ITERATIONS: usize = 20_000;

    pub fn new(temperatures: Vec<f64>, inner_iterations: usize) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::Config("annealing schedule is empty".into()));
        }
        for w in temperatures.windows(2) {
            if w[1] > w[0] {
                return Err(Error::domain(
                    "temperature",
                    w[1],
                    "a non-increasing temperature sequence",
                ));
            }
        }
        if let Some(&bad) = temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::domain("temperature", bad, "temperature > 0"));
        }
        Ok(Self {
            temperatures,
            inner_iterations,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_final_iterations: Self::DEFAULT_MAX_FINAL_ITERATIONS,
            newton: true,
        })
    }

    /// Geometric sequence `start, start*ratio, ...` stopping at `end` (always included).
    pub fn geometric(start: f64, end: f64, ratio: f64, inner_iterations: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::domain("ratio", ratio, "0 < ratio < 1"));
        }
        if !(end > 0.0) {
            return Err(Error::domain("epsilon", end, "epsilon > 0"));
        }
        let mut temps = Vec::new();
        let mut t = start;
        while t > end * (1.0 + 1e-12) {
            temps.push(t);
            t *= ratio;
        }
        temps.push(end);
        Self::new(temps, inner_iterations)
    }

    /// Default annealing down to `epsilon`: from 1.0, halving, 20 sweeps per temperature.
    pub fn to_epsilon(epsilon: f64) -> Result<Self> {
        Self::geometric(
            Self::DEFAULT_START,
            epsilon,
            Self::DEFAULT_RATIO,
            Self::DEFAULT_INNER,
        )
    }

    /// Stop the final temperature once every column marginal is within this relative error.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_final_iterations(mut self, n: usize) -> Self {
        self.max_final_iterations = n.max(1);
        self
    }

    /// Toggles the Newton correction of `g` between sweeps at the final temperature.
    ///
    /// Plain sweeps contract slowly once `eps` is small next to the spread of the
    /// costs; the correction converges to the same fixed point in a handful of
    /// iterations. With it off, the final loop is pure coordinate ascent.
    pub fn with_newton(mut self, on: bool) -> Self {
        self.newton = on;
        self
    }

    /// Same schedule cut off at `epsilon`: keeps the warmer temperatures and ends on `epsilon`.
    pub fn ending_at(&self, epsilon: f64) -> Result<Self> {
        let mut temps: Vec<f64> = self
            .temperatures
            .iter()
            .copied()
            .filter(|&t| t > epsilon * (1.0 + 1e-12))
            .collect();
        temps.push(epsilon);
        let mut s = Self::new(temps, self.inner_iterations)?;
        s.tolerance = self.tolerance;
        s.max_final_iterations = self.max_final_iterations;
        s.newton = self.newton;
        Ok(s)
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn newton(&self) -> bool {
        self.newton
    }

    pub fn final_epsilon(&self) -> f64 {
        *self.temperatures.last().expect("schedule is non-empty")
    }
}

/// Dense row-major `N x M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// Source potential, one entry per source particle.
    pub f: Vec<f64>,
    /// Target potential, one entry per target particle.
    pub g: Vec<f64>,
    pub plan: Matrix,
    /// Entropic transport value `<f, a> + <g, b>`.
    pub distance: f64,
    pub epsilon_final: f64,
    /// Total Sinkhorn sweeps performed.
    pub sweeps: usize,
}

pub fn cost_matrix(x: &ParticleSet, y: &ParticleSet) -> Matrix {
    let data = x
        .values()
        .iter()
        .flat_map(|xi| y.values().iter().map(move |yj| (xi - yj) * (xi - yj)))
        .collect();
    Matrix {
        rows: x.len(),
        cols: y.len(),
        data,
    }
}

/// Log-domain Sinkhorn with temperature annealing; duals start at zero.
pub fn sinkhorn_log(
    x: &ParticleSet,
    y: &ParticleSet,
    schedule: &AnnealingSchedule,
) -> Result<TransportResult> {
    sinkhorn_log_warm(x, y, schedule, None)
}

/// As [`sinkhorn_log`], optionally starting from a previous target potential `g`.
///
/// A warm start skips the annealing and iterates only at the final temperature.
pub fn sinkhorn_log_warm(
    x: &ParticleSet,
    y: &ParticleSet,
    schedule: &AnnealingSchedule,
    warm_g: Option<&[f64]>,
) -> Result<TransportResult> {
    let cost = cost_matrix(x, y);
    let (n, m) = (x.len(), y.len());
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut scratch = vec![0.0; n.max(m)];
    let mut sweeps = 0usize;

    let temps: &[f64] = match warm_g {
        Some(prev) if prev.len() == m => {
            g.copy_from_slice(prev);
            let eps = schedule.final_epsilon();
            update_f(&cost, &g, log_b, eps, &mut f, &mut scratch);
            &schedule.temperatures()[schedule.temperatures().len() - 1..]
        }
        _ => schedule.temperatures(),
    };

    let last = temps.len() - 1;
    let mut solver = ScaledSolver::new(n, m, log_a, log_b);
    for (k, &eps) in temps.iter().enumerate() {
        sweeps += if k < last {
            solver.run(&cost, eps, &mut f, &mut g, schedule.inner_iterations(), None, false)?
        } else {
            solver.run(
                &cost,
                eps,
                &mut f,
                &mut g,
                schedule.max_final_iterations,
                Some(schedule.tolerance()),
                schedule.newton,
            )?
        };
    }

    let eps = schedule.final_epsilon();
    let mut plan = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            plan.push(((f[i] + g[j] - cost.get(i, j)) / eps + log_a + log_b).exp());
        }
    }
    let distance = f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64;
    if !distance.is_finite() {
        return Err(Error::NumericalFailure { epsilon: eps });
    }
    Ok(TransportResult {
        f,
        g,
        plan: Matrix {
            rows: n,
            cols: m,
            data: plan,
        },
        distance,
        epsilon_final: eps,
        sweeps,
    })
}

fn check_finite(f: &[f64], g: &[f64], epsilon: f64) -> Result<()> {
    if f.iter().chain(g).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure { epsilon })
    }
}

/// `g_j <- -eps * log sum_i exp((f_i - C_ij)/eps + log a_i)`; returns `max_j |Δg_j|`.
fn update_g(
    cost: &Matrix,
    f: &[f64],
    log_a: f64,
    eps: f64,
    g: &mut [f64],
    scratch: &mut [f64],
) -> f64 {
    let mut delta = 0.0f64;
    for j in 0..cost.cols {
        let terms = &mut scratch[..cost.rows];
        for (i, t) in terms.iter_mut().enumerate() {
            *t = (f[i] - cost.data[i * cost.cols + j]) / eps;
        }
        let next = -eps * (log_sum_exp(terms) + log_a);
        delta = delta.max((next - g[j]).abs());
        g[j] = next;
    }
    delta
}

/// `f_i <- -eps * log sum_j exp((g_j - C_ij)/eps + log b_j)`.
fn update_f(cost: &Matrix, g: &[f64], log_b: f64, eps: f64, f: &mut [f64], scratch: &mut [f64]) {
    for (i, fi) in f.iter_mut().enumerate() {
        let row = cost.row(i);
        let terms = &mut scratch[..cost.cols];
        for ((t, gj), c) in terms.iter_mut().zip(g).zip(row) {
            *t = (gj - c) / eps;
        }
        *fi = -eps * (log_sum_exp(terms) + log_b);
    }
}

/// Sweeps at one temperature in stabilized scaling form. The kernel
/// `K_ij = exp((f_i + g_j - C_ij)/eps + log a + log b)` is built from the potentials once,
/// then the sweeps only rescale it: the plan is `u_i K_ij v_j`, so `f = f0 + eps ln u` and
/// `g = g0 + eps ln v`. The scalings are folded back into the potentials whenever they grow
/// large. Newton steps act on the semi-dual `D(g) = <f(g), a> + <g, b>`, where `f(g)` is the
/// exact f-update; `D` is concave in `g`.
struct ScaledSolver {
    n: usize,
    m: usize,
    log_a: f64,
    log_b: f64,
    kernel: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    col: Vec<f64>,
    plan: Vec<f64>,
    lap: Vec<f64>,
    hess: Vec<f64>,
    grad: Vec<f64>,
    dir: Vec<f64>,
    u_trial: Vec<f64>,
    v_trial: Vec<f64>,
    scratch: Vec<f64>,
}

impl ScaledSolver {
    const MAX_HALVINGS: usize = 8;
    /// Largest `|ln u|` or `|ln v|` tolerated before folding into the potentials.
    const MAX_LOG_SCALING: f64 = 30.0;

    fn new(n: usize, m: usize, log_a: f64, log_b: f64) -> Self {
        Self {
            n,
            m,
            log_a,
            log_b,
            kernel: vec![0.0; n * m],
            u: vec![1.0; n],
            v: vec![1.0; m],
            col: vec![0.0; m],
            plan: vec![0.0; n * m],
            lap: vec![0.0; m * m],
            hess: vec![0.0; m * m],
            grad: vec![0.0; m],
            dir: vec![0.0; m],
            u_trial: vec![0.0; n],
            v_trial: vec![0.0; m],
            scratch: vec![0.0; n.max(m)],
        }
    }

    /// Up to `limit` sweeps at `eps`, stopping early once every column marginal is within a
    /// relative `tol` of its target when a tolerance is given. Leaves the result in `f` and `g`; returns the sweep count.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        cost: &Matrix,
        eps: f64,
        f: &mut [f64],
        g: &mut [f64],
        limit: usize,
        tol: Option<f64>,
        newton: bool,
    ) -> Result<usize> {
        let (a, b) = (self.log_a.exp(), self.log_b.exp());
        self.rebuild(cost, eps, f, g);
        let mut sweeps = 0;
        while sweeps < limit {
            sweeps += 1;
            // |Δ ln v_j| is the log-ratio of column j's target mass to its mass before the sweep.
            let residual = match self.sweep(a, b) {
                Some(delta) => delta,
                None => {
                    // A scaling under- or overflowed: redo this sweep in the log domain.
                    self.absorb(eps, f, g);
                    let delta = update_g(cost, f, self.log_a, eps, g, &mut self.scratch);
                    update_f(cost, g, self.log_b, eps, f, &mut self.scratch);
                    check_finite(f, g, eps)?;
                    self.rebuild(cost, eps, f, g);
                    delta / eps
                }
            };
            if !residual.is_finite() {
                return Err(Error::NumericalFailure { epsilon: eps });
            }
            let Some(tol) = tol else { continue };
            if residual <= tol {
                break;
            }
            if newton {
                self.newton_step(a, b, eps);
            }
            if self.needs_absorb() {
                self.absorb(eps, f, g);
                self.rebuild(cost, eps, f, g);
            }
        }
        self.absorb(eps, f, g);
        check_finite(f, g, eps)?;
        Ok(sweeps)
    }

    fn rebuild(&mut self, cost: &Matrix, eps: f64, f: &[f64], g: &[f64]) {
        let shift = self.log_a + self.log_b;
        for i in 0..self.n {
            for j in 0..self.m {
                let c = cost.data[i * self.m + j];
                self.kernel[i * self.m + j] = ((f[i] + g[j] - c) / eps + shift).exp();
            }
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    fn absorb(&mut self, eps: f64, f: &mut [f64], g: &mut [f64]) {
        for (fi, ui) in f.iter_mut().zip(&self.u) {
            *fi += eps * ui.ln();
        }
        for (gj, vj) in g.iter_mut().zip(&self.v) {
            *gj += eps * vj.ln();
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    fn needs_absorb(&self) -> bool {
        self.u
            .iter()
            .chain(&self.v)
            .any(|s| s.ln().abs() > Self::MAX_LOG_SCALING)
    }

    /// One g-update then one f-update; returns `max_j |Δ ln v_j|`, or None if a
    /// marginal sum left the representable range.
    fn sweep(&mut self, a: f64, b: f64) -> Option<f64> {
        let (n, m) = (self.n, self.m);
        self.col.fill(0.0);
        for i in 0..n {
            let ui = self.u[i];
            for (c, k) in self.col.iter_mut().zip(&self.kernel[i * m..(i + 1) * m]) {
                *c += ui * k;
            }
        }
        let mut delta = 0.0f64;
        for (vj, c) in self.v.iter_mut().zip(&self.col) {
            let next = b / c;
            if !(next.is_finite() && next > 0.0) {
                return None;
            }
            delta = delta.max((next / *vj).ln().abs());
            *vj = next;
        }
        if !Self::row_scalings(&self.kernel, &self.v, a, m, &mut self.u) {
            return None;
        }
        Some(delta)
    }

    /// `u_i = a / sum_j K_ij v_j`, the exact f-update for the given `v`.
    fn row_scalings(kernel: &[f64], v: &[f64], a: f64, m: usize, u: &mut [f64]) -> bool {
        for (i, ui) in u.iter_mut().enumerate() {
            let r: f64 = kernel[i * m..(i + 1) * m].iter().zip(v).map(|(k, vj)| k * vj).sum();
            *ui = a / r;
            if !(ui.is_finite() && *ui > 0.0) {
                return false;
            }
        }
        true
    }

    /// Moves `v` along the Newton direction if that raises `D`, keeping `u = u(v)`.
    fn newton_step(&mut self, a: f64, b: f64, eps: f64) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            for j in 0..m {
                self.plan[i * m + j] = self.u[i] * self.kernel[i * m + j] * self.v[j];
            }
        }
        // Gradient b - P^T 1. The negative Hessian is the graph Laplacian with weights
        // (P^T diag(1/a) P)_jk / eps; its diagonal is rebuilt from the off-diagonal
        // entries because the direct form cancels when the plan is nearly a permutation.
        self.lap.fill(0.0);
        self.grad.fill(b);
        for i in 0..n {
            let row = &self.plan[i * m..(i + 1) * m];
            for j in 0..m {
                self.grad[j] -= row[j];
                let pj = row[j] / (a * eps);
                for k in j + 1..m {
                    self.lap[j * m + k] -= pj * row[k];
                }
            }
        }
        for j in 0..m {
            for k in j + 1..m {
                let w = self.lap[j * m + k];
                self.lap[k * m + j] = w;
                self.lap[j * m + j] -= w;
                self.lap[k * m + k] -= w;
            }
        }
        // The constant direction is a gauge freedom; pin it so the system is definite.
        let pin = 1.0 / (eps * (m * m) as f64);
        let top = (0..m).map(|j| self.lap[j * m + j]).fold(pin, f64::max);
        let mut ridge = 1e-12 * top;
        let mut solved = false;
        for _ in 0..4 {
            for j in 0..m {
                for k in 0..m {
                    self.hess[j * m + k] = self.lap[j * m + k] + pin;
                }
                self.hess[j * m + j] += ridge;
            }
            self.dir.copy_from_slice(&self.grad);
            if cholesky_solve(&mut self.hess, &mut self.dir, m) {
                solved = true;
                break;
            }
            ridge *= 1e3;
        }
        if !solved {
            return;
        }

        // D relative to the potentials the kernel was built from.
        let value = |u: &[f64], v: &[f64]| {
            eps * (a * u.iter().map(|x| x.ln()).sum::<f64>() + b * v.iter().map(|x| x.ln()).sum::<f64>())
        };
        let current = value(&self.u, &self.v);
        // Blocks of the plan that barely exchange mass make the direction huge along their
        // relative shift; start from a step that moves no scaling by more than e^30.
        let reach = self.dir.iter().fold(0.0f64, |s, d| s.max(d.abs())) / eps;
        let mut t = if reach > Self::MAX_LOG_SCALING {
            Self::MAX_LOG_SCALING / reach
        } else {
            1.0
        };
        for _ in 0..=Self::MAX_HALVINGS {
            for ((vt, vj), dj) in self.v_trial.iter_mut().zip(&self.v).zip(&self.dir) {
                *vt = vj * (t * dj / eps).exp();
            }
            if Self::row_scalings(&self.kernel, &self.v_trial, a, m, &mut self.u_trial)
                && self.v_trial.iter().all(|x| x.is_finite() && *x > 0.0)
            {
                let trial = value(&self.u_trial, &self.v_trial);
                if trial.is_finite() && trial >= current {
                    self.u.copy_from_slice(&self.u_trial);
                    self.v.copy_from_slice(&self.v_trial);
                    return;
                }
            }
            t *= 0.5;
        }
    }
}

/// In-place Cholesky solve of the symmetric positive definite `m x m` system `A x = rhs`.
/// Returns false if `A` is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], rhs: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= a[i * m + k] * rhs[k];
        }
        rhs[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = rhs[i];
        for k in i + 1..m {
            s -= a[k * m + i] * rhs[k];
        }
        rhs[i] = s / a[i * m + i];
    }
    true
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Exact squared 2-Wasserstein distance between equal-size uniform measures on the line.
pub fn exact_w2_1d(x: &ParticleSet, y: &ParticleSet) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let sum: f64 = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Gradient of the entropic value with respect to the source locations, plan held fixed.
pub fn sinkhorn_gradient_source(
    result: &TransportResult,
    x: &ParticleSet,
    y: &ParticleSet,
) -> Vec<f64> {
    x.values()
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            result
                .plan
                .row(i)
                .iter()
                .zip(y.values())
                .map(|(p, yj)| p * 2.0 * (xi - yj))
                .sum()
        })
        .collect()
}
