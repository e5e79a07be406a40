//! EGN training step with momentum, Armijo line search and adaptive damping,
//! plus SGD and Adam baselines.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::losses::{self, LossKind, QBlocks};
use crate::nn::{Batch, Model, ParamVector, StackedJacobian};
use crate::solvers::{self, SolverKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchConfig {
    pub enabled: bool,
    pub alpha_max: f64,
    pub kappa: f64,
    pub c_up: f64,
    pub c_down: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha_max: 1.0,
            kappa: 1e-4,
            c_up: 1.5,
            c_down: 0.5,
            max_backtracks: 20,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("line_search.{field}"), msg));
        if !(self.alpha_max > 0.0 && self.alpha_max.is_finite()) {
            return bad("alpha_max", "must be positive");
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad("kappa", "must lie in (0, 1)");
        }
        if !(self.c_up > 1.0 && self.c_up.is_finite()) {
            return bad("c_up", "must be greater than 1");
        }
        if !(self.c_down > 0.0 && self.c_down < 1.0) {
            return bad("c_down", "must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Step size used when the line search is off or skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `α_t = α₀ / (t + 1)^a`, with `t` counted from 0.
    Diminishing { alpha0: f64, a: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant(alpha) if alpha > 0.0 && alpha.is_finite() => Ok(()),
            Schedule::Constant(alpha) => Err(Error::config(
                "optim.lr",
                format!("step size must be positive, got {alpha}"),
            )),
            Schedule::Diminishing { alpha0, a } => {
                if !(alpha0 > 0.0 && alpha0 < 1.0) {
                    return Err(Error::config(
                        "optim.alpha0",
                        format!("must lie in (0, 1), got {alpha0}"),
                    ));
                }
                if !(a > 0.5 && a < 1.0) {
                    return Err(Error::config(
                        "optim.a",
                        format!("must lie in (1/2, 1), got {a}"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Step size for iteration `t ≥ 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant(alpha) => alpha,
            Schedule::Diminishing { alpha0, a } => alpha0 / (t as f64).powf(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Index of the next step, starting at 1.
    pub t: usize,
    pub lambda: f64,
    /// Last accepted step size.
    pub alpha: f64,
    pub momentum: DVector<f64>,
    pub beta: f64,
    pub schedule: Schedule,
}

impl OptimizerState {
    pub fn new(params: usize, lambda0: f64, beta: f64, schedule: Schedule) -> Result<Self> {
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err(Error::config(
                "optim.lambda0",
                format!("must be positive, got {lambda0}"),
            ));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config(
                "optim.momentum",
                format!("must lie in [0, 1), got {beta}"),
            ));
        }
        schedule.validate()?;
        Ok(Self {
            t: 1,
            lambda: lambda0,
            alpha: schedule.alpha(1),
            momentum: DVector::zeros(params),
            beta,
            schedule,
        })
    }

    /// Updates the EMA with `d` and returns the bias-corrected direction.
    ///
    /// Evaluated as a weighted sum so that the first step returns `d` unchanged.
    pub fn apply_momentum(&mut self, d: &DVector<f64>) -> DVector<f64> {
        let beta = self.beta;
        let correction = 1.0 - beta.powi(self.t as i32);
        let corrected = &self.momentum * (beta / correction) + d * ((1.0 - beta) / correction);
        self.momentum = &self.momentum * beta + d * (1.0 - beta);
        corrected
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgnConfig {
    pub solver: SolverKind,
    pub line_search: LineSearchConfig,
    pub adaptive_lambda: bool,
}

impl Default for EgnConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::EgnDg,
            line_search: LineSearchConfig::default(),
            adaptive_lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub loss_before: f64,
    /// Batch loss at the new weights; first-order steps do not evaluate it.
    pub loss_after: Option<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub rho: Option<f64>,
    pub backtracks: usize,
    pub line_search_exhausted: bool,
    /// The corrected direction was not a descent direction.
    pub non_descent: bool,
    pub wall_seconds: f64,
    /// Time spent inside the direction solve.
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub loss: f64,
    pub backtracks: usize,
    /// `max_backtracks` was reached without satisfying the Armijo condition.
    pub exhausted: bool,
}

/// Backtracking Armijo search over an arbitrary loss closure.
pub fn armijo_search_with<F>(
    mut loss_at: F,
    w: &DVector<f64>,
    d: &DVector<f64>,
    alpha_prev: f64,
    g: &DVector<f64>,
    loss0: f64,
    ls: &LineSearchConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let slope = g.dot(d);
    let mut alpha = ls.alpha_max.min(alpha_prev * ls.c_up);
    let mut backtracks = 0;
    loop {
        let trial = w + d * alpha;
        let loss = loss_at(&trial)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss during line search at alpha = {alpha}"
            )));
        }
        if loss <= loss0 + ls.kappa * alpha * slope {
            return Ok(LineSearchOutcome {
                alpha,
                loss,
                backtracks,
                exhausted: false,
            });
        }
        if backtracks == ls.max_backtracks {
            return Ok(LineSearchOutcome {
                alpha,
                loss,
                backtracks,
                exhausted: true,
            });
        }
        alpha *= ls.c_down;
        backtracks += 1;
    }
}

/// Armijo search on a fixed mini-batch.
#[allow(clippy::too_many_arguments)]
pub fn armijo_search<M: Model>(
    model: &M,
    batch: &Batch,
    loss: LossKind,
    w: &ParamVector,
    d: &DVector<f64>,
    alpha_prev: f64,
    g: &DVector<f64>,
    loss0: f64,
    ls: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    armijo_search_with(
        |trial| batch_loss(model, batch, loss, trial),
        w,
        d,
        alpha_prev,
        g,
        loss0,
        ls,
    )
}

pub fn batch_loss<M: Model>(
    model: &M,
    batch: &Batch,
    loss: LossKind,
    w: &ParamVector,
) -> Result<f64> {
    let out = model.forward(w, batch.features())?;
    losses::loss_value(loss, &out, batch.targets())
}

/// Adaptive damping: grow on poor agreement, shrink on good agreement.
pub fn update_lambda(lambda: f64, rho: f64) -> f64 {
    if rho < 0.25 {
        lambda * 1.01
    } else if rho > 0.75 {
        lambda * 0.99
    } else {
        lambda
    }
}

/// Predicted change `gᵀΔw + (1/2b)(JΔw)ᵀQ(JΔw)` of the quadratic model.
pub fn predicted_change(
    g: &DVector<f64>,
    dw: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    b: usize,
) -> f64 {
    let v = j.mul_vec(dw);
    g.dot(dw) + q.quad_form(&v) / (2.0 * b as f64)
}

/// `ρ = actual / predicted`, defined as 1 when the prediction vanishes.
pub fn reduction_ratio(actual_change: f64, predicted: f64) -> f64 {
    if predicted.abs() < 1e-30 {
        1.0
    } else {
        actual_change / predicted
    }
}

/// ρ between `w_t` and `w_next` on one batch.
#[allow(clippy::too_many_arguments)]
pub fn model_reduction_ratio<M: Model>(
    model: &M,
    batch: &Batch,
    loss: LossKind,
    w_t: &ParamVector,
    w_next: &ParamVector,
    g: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
) -> Result<f64> {
    let before = batch_loss(model, batch, loss, w_t)?;
    let after = batch_loss(model, batch, loss, w_next)?;
    let dw = w_next - w_t;
    Ok(reduction_ratio(
        after - before,
        predicted_change(g, &dw, j, q, batch.size()),
    ))
}

/// One EGN iteration: direction, momentum, step size, update, damping.
pub fn egn_step<M: Model>(
    state: &mut OptimizerState,
    w: &mut ParamVector,
    model: &M,
    batch: &Batch,
    loss: LossKind,
    config: &EgnConfig,
) -> Result<StepReport> {
    let start = Instant::now();
    let b = batch.size();
    let (out, j) = model.forward_with_jacobian(w, batch.features())?;
    let bundle = losses::bundle(loss, &out, batch.targets())?;
    let g = losses::batch_gradient(&j, &bundle.residuals, b)?;

    let solve_start = Instant::now();
    let raw = solvers::direction(config.solver, &bundle.residuals, &j, &bundle.q, state.lambda, b)?;
    let solve_seconds = solve_start.elapsed().as_secs_f64();

    let mut next = state.clone();
    let d = next.apply_momentum(&raw);
    let slope = g.dot(&d);
    if !slope.is_finite() {
        return Err(Error::NonFinite("directional derivative".into()));
    }
    let non_descent = slope >= 0.0;

    let (alpha, loss_after, backtracks, exhausted) = if config.line_search.enabled && !non_descent
    {
        let found = armijo_search(
            model,
            batch,
            loss,
            w,
            &d,
            state.alpha,
            &g,
            bundle.loss,
            &config.line_search,
        )?;
        (found.alpha, found.loss, found.backtracks, found.exhausted)
    } else {
        let alpha = next.schedule.alpha(next.t);
        let after = batch_loss(model, batch, loss, &(&*w + &d * alpha))?;
        (alpha, after, 0, false)
    };
    if !loss_after.is_finite() {
        return Err(Error::NonFinite("loss after update".into()));
    }

    let dw = &d * alpha;
    let rho = if config.adaptive_lambda {
        let rho = reduction_ratio(
            loss_after - bundle.loss,
            predicted_change(&g, &dw, &j, &bundle.q, b),
        );
        next.lambda = update_lambda(next.lambda, rho);
        Some(rho)
    } else {
        None
    };
    next.alpha = alpha;
    next.t += 1;

    *w += dw;
    *state = next;
    Ok(StepReport {
        loss_before: bundle.loss,
        loss_after: Some(loss_after),
        alpha,
        lambda: state.lambda,
        rho,
        backtracks,
        line_search_exhausted: exhausted,
        non_descent,
        wall_seconds: start.elapsed().as_secs_f64(),
        solve_seconds,
    })
}

/// `w − αg`.
pub fn sgd_step(w: &DVector<f64>, g: &DVector<f64>, alpha: f64) -> DVector<f64> {
    w - g * alpha
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: usize,
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            t: 0,
            m: DVector::zeros(params),
            v: DVector::zeros(params),
            beta1,
            beta2,
            eps,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(
    state: &mut AdamState,
    w: &DVector<f64>,
    g: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut out = w.clone();
    for i in 0..w.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        out[i] -= alpha * m_hat / (v_hat.sqrt() + state.eps);
    }
    out
}

/// Mini-batch loss and gradient through one batched reverse pass.
pub fn loss_and_gradient<M: Model>(
    model: &M,
    batch: &Batch,
    loss: LossKind,
    w: &ParamVector,
) -> Result<(f64, DVector<f64>)> {
    let out = model.forward(w, batch.features())?;
    let bundle = losses::bundle(loss, &out, batch.targets())?;
    let b = batch.size();
    let cotangent: DMatrix<f64> = losses::residual_matrix(&bundle.residuals, out.ncols()) / b as f64;
    let g = model.vjp(w, batch.features(), &cotangent)?;
    Ok((bundle.loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Egn,
    Sgd,
    Adam,
}

/// Common interface over the three optimizers.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Egn {
        state: OptimizerState,
        config: EgnConfig,
    },
    Sgd {
        schedule: Schedule,
        t: usize,
    },
    Adam {
        state: AdamState,
        schedule: Schedule,
    },
}

impl Optimizer {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Egn { .. } => OptimizerKind::Egn,
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Optimizer::Egn { state, .. } => Some(state.lambda),
            _ => None,
        }
    }

    pub fn step<M: Model>(
        &mut self,
        w: &mut ParamVector,
        model: &M,
        batch: &Batch,
        loss: LossKind,
    ) -> Result<StepReport> {
        match self {
            Optimizer::Egn { state, config } => egn_step(state, w, model, batch, loss, config),
            Optimizer::Sgd { schedule, t } => {
                let start = Instant::now();
                let (value, g) = loss_and_gradient(model, batch, loss, w)?;
                let alpha = schedule.alpha(*t);
                let next = sgd_step(w, &g, alpha);
                first_order_commit(w, next, value)?;
                *t += 1;
                Ok(first_order_report(value, alpha, start))
            }
            Optimizer::Adam { state, schedule } => {
                let start = Instant::now();
                let (value, g) = loss_and_gradient(model, batch, loss, w)?;
                let alpha = schedule.alpha(state.t + 1);
                let mut trial = state.clone();
                let next = adam_step(&mut trial, w, &g, alpha);
                first_order_commit(w, next, value)?;
                *state = trial;
                Ok(first_order_report(value, alpha, start))
            }
        }
    }
}

fn first_order_commit(w: &mut ParamVector, next: DVector<f64>, loss: f64) -> Result<()> {
    if !loss.is_finite() || !next.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("first-order update".into()));
    }
    *w = next;
    Ok(())
}

fn first_order_report(loss: f64, alpha: f64, start: Instant) -> StepReport {
    StepReport {
        loss_before: loss,
        loss_after: None,
        alpha,
        lambda: f64::NAN,
        rho: None,
        backtracks: 0,
        line_search_exhausted: false,
        non_descent: false,
        wall_seconds: start.elapsed().as_secs_f64(),
        solve_seconds: 0.0,
    }
}
