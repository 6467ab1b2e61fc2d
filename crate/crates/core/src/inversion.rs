//! Gauss-Newton minimization over a Gaussian basis with Tikhonov regularization and
//! layer-peeling time windows.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Medium};
use crate::objective::{ObjectiveContext, ObjectiveKind};

/// Lowest admissible search speed as a fraction of `c̄`.
pub const SPEED_FLOOR: f64 = 0.2;

/// Search speed `w(x) = c̄ + Σ η_l φ_l(x)` with normalized Gaussians `φ_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchModel {
    pub centers: Vec<(f64, f64)>,
    pub sigma_perp: f64,
    pub sigma: f64,
    pub eta: DVector<f64>,
    pub c_ref: f64,
}

impl SearchModel {
    /// `nx × ny` centers spanning the rectangle `[x0, x1] × [y0, y1]`, all coefficients zero.
    pub fn uniform(
        region: [f64; 4],
        nx: usize,
        ny: usize,
        sigma_perp: f64,
        sigma: f64,
        c_ref: f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || !(sigma_perp > 0.0 && sigma > 0.0) {
            return Err(Error::Config("search basis needs centers and positive widths".into()));
        }
        let [x0, x1, y0, y1] = region;
        let lerp = |a: f64, b: f64, i: usize, k: usize| {
            if k == 1 {
                0.5 * (a + b)
            } else {
                a + (b - a) * i as f64 / (k - 1) as f64
            }
        };
        let centers = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| (lerp(x0, x1, i, nx), lerp(y0, y1, j, ny))))
            .collect::<Vec<_>>();
        let n = centers.len();
        Ok(Self {
            centers,
            sigma_perp,
            sigma,
            eta: DVector::zeros(n),
            c_ref,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn phi(&self, l: usize, p: (f64, f64)) -> f64 {
        let (cx, cy) = self.centers[l];
        let a = (p.0 - cx) / self.sigma_perp;
        let b = (p.1 - cy) / self.sigma;
        (-0.5 * (a * a + b * b)).exp() / (2.0 * PI * self.sigma_perp * self.sigma)
    }

    /// Coefficient giving a Gaussian of peak height `amplitude`.
    pub fn coefficient_for_peak(&self, amplitude: f64) -> f64 {
        amplitude * 2.0 * PI * self.sigma_perp * self.sigma
    }

    pub fn with_eta(&self, eta: DVector<f64>) -> Self {
        Self {
            eta,
            ..self.clone()
        }
    }
}

/// Sampled basis `φ_l(x_k)` for repeated evaluation on one grid.
#[derive(Clone, Debug)]
pub struct BasisSampler {
    grid: Grid2D,
    phi: DMatrix<f64>,
}

impl BasisSampler {
    pub fn new(model: &SearchModel, grid: &Grid2D) -> Self {
        let phi = DMatrix::from_fn(grid.len(), model.len(), |k, l| {
            let (ix, iy) = grid.unflatten(k);
            model.phi(l, grid.node_coordinate(ix, iy))
        });
        Self { grid: *grid, phi }
    }

    /// Search medium and whether the speed floor was applied.
    pub fn medium(&self, model: &SearchModel) -> Result<(Medium, bool)> {
        let floor = SPEED_FLOOR * model.c_ref;
        let raw = &self.phi * &model.eta;
        let mut projected = false;
        let speed = raw
            .iter()
            .map(|v| {
                let w = model.c_ref + v;
                if w < floor {
                    projected = true;
                    floor
                } else {
                    w
                }
            })
            .collect();
        Ok((Medium::new(self.grid, speed, model.c_ref)?, projected))
    }
}

/// Samples the search speed on `grid`, projecting onto `w ≥ 0.2·c̄`.
pub fn evaluate_model(model: &SearchModel, grid: &Grid2D) -> Result<(Medium, bool)> {
    BasisSampler::new(model, grid).medium(model)
}

/// Residual of `kind` at the search model.
pub fn residual_vector(
    ctx: &ObjectiveContext,
    kind: ObjectiveKind,
    sampler: &BasisSampler,
    model: &SearchModel,
) -> Result<DVector<f64>> {
    let (w, _) = sampler.medium(model)?;
    ctx.residual(kind, &w)
}

/// Forward-difference Jacobian columns `(f(η + ε e_l) − f(η))/ε` for `l ∈ active`, in parallel.
pub fn jacobian_fd<F>(
    f: F,
    eta: &DVector<f64>,
    base: &DVector<f64>,
    eps: f64,
    active: &[usize],
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let columns: Vec<DVector<f64>> = active
        .par_iter()
        .map(|&l| {
            let mut e = eta.clone();
            e[l] += eps;
            Ok((f(&e)? - base) / eps)
        })
        .collect::<Result<_>>()?;
    Ok(stack_columns(base.len(), &columns))
}

/// Central-difference Jacobian columns `(f(η + ε e_l) − f(η − ε e_l))/2ε`.
pub fn jacobian_central<F>(
    f: F,
    eta: &DVector<f64>,
    eps: f64,
    active: &[usize],
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let columns: Vec<DVector<f64>> = active
        .par_iter()
        .map(|&l| {
            let (mut a, mut b) = (eta.clone(), eta.clone());
            a[l] += eps;
            b[l] -= eps;
            Ok((f(&a)? - f(&b)?) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(stack_columns(rows, &columns))
}

fn stack_columns(rows: usize, columns: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, columns.len());
    for (j, c) in columns.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Solves `(JᵀJ + μI)δ = −(Jᵀr + μη)`.
pub fn gauss_newton_step(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    mu: f64,
    eta_active: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut normal = j.transpose() * j;
    for i in 0..normal.nrows() {
        normal[(i, i)] += mu;
    }
    let rhs = -(j.transpose() * r + eta_active * mu);
    let chol = normal.cholesky().ok_or(Error::SingularNormalEquations)?;
    let step = chol.solve(&rhs);
    if step.iter().all(|v| v.is_finite()) {
        Ok(step)
    } else {
        Err(Error::SingularNormalEquations)
    }
}

/// Gauss-Newton settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussNewtonConfig {
    pub objective: ObjectiveKind,
    pub windows: usize,
    pub iters_per_window: usize,
    /// Initial Tikhonov weight relative to `‖J‖_F²/N_active` of the first Jacobian of a window.
    pub mu0: f64,
    /// Finite-difference step as a fraction of the coefficient giving a `c̄`-high Gaussian.
    pub eps_fd: f64,
    /// Upper bound on the speed used for depth masking.
    pub c_max: f64,
    /// Depth coordinate from which center depths are measured.
    pub array_depth: f64,
    pub rel_tol: f64,
    pub step_tol: f64,
    pub max_backtracks: usize,
    pub max_mu_raises: usize,
}

impl GaussNewtonConfig {
    pub fn new(objective: ObjectiveKind, c_max: f64, array_depth: f64) -> Self {
        Self {
            objective,
            windows: 1,
            iters_per_window: 10,
            mu0: 1e-2,
            eps_fd: 1e-3,
            c_max,
            array_depth,
            rel_tol: 1e-4,
            step_tol: 1e-6,
            max_backtracks: 8,
            max_mu_raises: 4,
        }
    }
}

/// One accepted (or terminal) iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub window: usize,
    pub iter: usize,
    pub objective: f64,
    pub penalized: f64,
    /// Penalized objective before the step, at the accepted `μ`.
    pub penalized_before: f64,
    pub mu: f64,
    pub step_norm: f64,
    pub wall_ms: u128,
    pub projected: bool,
}

/// Trajectory and diagnostics of a layer-peeling run.
#[derive(Clone, Debug)]
pub struct InversionResult {
    pub model: SearchModel,
    pub log: Vec<IterationRecord>,
    /// Objective on the full window at the start and end of the run.
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Active center indices per window.
    pub active_sets: Vec<Vec<usize>>,
    /// Windowed objective at the start and end of each window.
    pub window_objectives: Vec<(f64, f64)>,
    /// Whether `μ` had to be raised above its scheduled value in each window.
    pub escalated: Vec<bool>,
}

impl InversionResult {
    /// First window whose objective ended above its starting value although `μ` was raised.
    pub fn diverged_window(&self) -> Option<usize> {
        self.window_objectives
            .iter()
            .zip(&self.escalated)
            .position(|((a, b), &raised)| raised && b > a)
            .map(|q| q + 1)
    }
}

/// Snapshots per window `J_q = ⌈q·n/N_t⌉`.
pub fn window_sizes(n: usize, windows: usize) -> Vec<usize> {
    (1..=windows).map(|q| (q * n).div_ceil(windows)).collect()
}

/// Centers whose depth below the array is at most `c_max·J·τ/2`.
pub fn depth_mask(model: &SearchModel, config: &GaussNewtonConfig, j: usize, tau: f64) -> Vec<usize> {
    let depth = config.c_max * j as f64 * tau / 2.0;
    (0..model.len())
        .filter(|&l| model.centers[l].1 - config.array_depth <= depth)
        .collect()
}

/// Runs Gauss-Newton window by window, calling `observe` with every logged iteration and the
/// coefficients it produced.
pub fn layer_peeling_inversion(
    ctx: &ObjectiveContext,
    start: &SearchModel,
    grid: &Grid2D,
    config: &GaussNewtonConfig,
    mut observe: impl FnMut(&IterationRecord, &DVector<f64>),
) -> Result<InversionResult> {
    if config.windows == 0 {
        return Err(Error::Config("at least one time window is required".into()));
    }
    let kind = config.objective;
    let sampler = BasisSampler::new(start, grid);
    let eps = config.eps_fd * start.coefficient_for_peak(start.c_ref);
    let tau = ctx.acquisition().tau;
    let n = ctx.acquisition().n;
    let clock = Instant::now();
    let full = ctx.clone().with_window(n)?;
    let initial_objective = residual_vector(&full, kind, &sampler, start)?.norm_squared();
    let mut model = start.clone();
    let mut log = Vec::new();
    let mut active_sets = Vec::new();
    let mut window_objectives = Vec::new();
    let mut escalated = Vec::new();
    for (q, &j) in window_sizes(n, config.windows).iter().enumerate() {
        let wctx = ctx.clone().with_window(j)?;
        let active = depth_mask(&model, config, j, tau);
        active_sets.push(active.clone());
        if active.is_empty() {
            window_objectives.push((f64::NAN, f64::NAN));
            escalated.push(false);
            continue;
        }
        let f = |eta: &DVector<f64>| residual_vector(&wctx, kind, &sampler, &start.with_eta(eta.clone()));
        let mut r = f(&model.eta)?;
        let r0_sq = r.norm_squared();
        let mut mu_base = None;
        let mut raised = false;
        for iter in 0..config.iters_per_window {
            let jac = jacobian_fd(f, &model.eta, &r, eps, &active)?;
            let base = *mu_base.get_or_insert_with(|| {
                config.mu0 * jac.norm_squared() / active.len() as f64
            });
            let misfit = r.norm_squared();
            let ratio = if r0_sq > 0.0 { misfit / r0_sq } else { 0.0 };
            let mut mu = (base * ratio).max(1e-6 * base);
            let eta_active = DVector::from_iterator(active.len(), active.iter().map(|&l| model.eta[l]));
            let mut accepted = None;
            for _ in 0..=config.max_mu_raises {
                let current = misfit + mu * model.eta.norm_squared();
                let step = match gauss_newton_step(&jac, &r, mu, &eta_active) {
                    Ok(s) => s,
                    Err(Error::SingularNormalEquations) => {
                        raised = true;
                        mu = (mu * 10.0).max(f64::MIN_POSITIVE);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut alpha = 1.0;
                for _ in 0..=config.max_backtracks {
                    let mut eta = model.eta.clone();
                    for (k, &l) in active.iter().enumerate() {
                        eta[l] += alpha * step[k];
                    }
                    let trial = f(&eta)?;
                    let value = trial.norm_squared() + mu * eta.norm_squared();
                    if value < current {
                        accepted = Some((eta, trial, alpha * step.norm(), current));
                        break;
                    }
                    alpha *= 0.5;
                }
                if accepted.is_some() {
                    break;
                }
                raised = true;
                mu *= 10.0;
            }
            let Some((eta, trial, step_norm, before)) = accepted else {
                break;
            };
            let old = misfit;
            model.eta = eta;
            r = trial;
            let (_, projected) = sampler.medium(&model)?;
            let record = IterationRecord {
                window: q + 1,
                iter: iter + 1,
                objective: r.norm_squared(),
                penalized: r.norm_squared() + mu * model.eta.norm_squared(),
                penalized_before: before,
                mu,
                step_norm,
                wall_ms: clock.elapsed().as_millis(),
                projected,
            };
            observe(&record, &model.eta);
            log.push(record);
            let scale = model.eta.norm().max(eps);
            if (old - r.norm_squared()) <= config.rel_tol * old || step_norm <= config.step_tol * scale {
                break;
            }
        }
        window_objectives.push((r0_sq, r.norm_squared()));
        escalated.push(raised);
    }
    let final_objective = residual_vector(&full, kind, &sampler, &model)?.norm_squared();
    Ok(InversionResult {
        model,
        log,
        initial_objective,
        final_objective,
        active_sets,
        window_objectives,
        escalated,
    })
}
