//! Levenberg–Marquardt directions for `((1/b)JᵀQJ + λI) d = −(1/b)Jᵀr`.
//!
//! [`egn_direction`] solves the `bc × bc` dual system and maps back with `Jᵀ`;
//! the other solvers exist for comparison and as test oracles.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::losses::{ce_bundle, LossKind, QBlocks, DENSE_CAP};
use crate::nn::StackedJacobian;
use crate::{Error, Result};

/// CG iteration counts searched when CG is driven from a config grid.
pub const CG_ITERATION_GRID: [usize; 5] = [3, 5, 10, 20, 50];

const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    EgnDg,
    Smw,
    Qr,
    CgInexact { max_iters: usize },
    DenseOracle,
}

impl SolverKind {
    pub fn name(&self) -> String {
        match self {
            SolverKind::EgnDg => "egn".into(),
            SolverKind::Smw => "smw".into(),
            SolverKind::Qr => "qr".into(),
            SolverKind::CgInexact { max_iters } => format!("cg{max_iters}"),
            SolverKind::DenseOracle => "dense".into(),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    /// Accepts `egn`, `smw`, `qr`, `dense`, and `cg<N>` / `cg:<N>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "egn" | "egn_dg" | "egndg" => Ok(SolverKind::EgnDg),
            "smw" => Ok(SolverKind::Smw),
            "qr" => Ok(SolverKind::Qr),
            "dense" | "dense_oracle" | "oracle" => Ok(SolverKind::DenseOracle),
            other => {
                let digits = other
                    .strip_prefix("cg")
                    .map(|rest| rest.trim_start_matches([':', '_', '-']));
                match digits.and_then(|d| d.parse().ok()) {
                    Some(max_iters) => Ok(SolverKind::CgInexact { max_iters }),
                    None => Err(Error::InvalidArgument(format!("unknown solver `{s}`"))),
                }
            }
        }
    }
}

fn validate(
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
    lambda_positive: bool,
) -> Result<()> {
    if r.len() != j.rows() {
        return Err(Error::mismatch("residual length", j.rows(), r.len()));
    }
    if q.dim() != j.rows() {
        return Err(Error::mismatch("Q dimension", j.rows(), q.dim()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !lambda.is_finite() || lambda < 0.0 || (lambda_positive && lambda == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must be {}, got {lambda}",
            if lambda_positive { "positive" } else { "non-negative" }
        )));
    }
    if !linalg::vec_all_finite(r) {
        return Err(Error::NonFinite("residual vector".into()));
    }
    Ok(())
}

fn jacobian_is_zero(j: &StackedJacobian) -> bool {
    j.transposed().iter().all(|&v| v == 0.0)
}

fn finished(d: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if linalg::vec_all_finite(&d) {
        Ok(d)
    } else {
        Err(Error::NonFinite(format!("{what} direction")))
    }
}

/// The `bc × bc` matrix `QJJᵀ + bλI` factorized by [`egn_direction`].
pub fn egn_system_matrix(
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
) -> Result<DMatrix<f64>> {
    let gram = j.gram();
    if !linalg::all_finite(gram.as_slice()) {
        return Err(Error::NonFinite("Jacobian Gram matrix".into()));
    }
    let mut system = q.mul_left(&gram);
    let shift = b as f64 * lambda;
    for i in 0..system.nrows() {
        system[(i, i)] += shift;
    }
    Ok(system)
}

/// Exact direction through the small system `(QJJᵀ + bλI)δ = r`, `d = −Jᵀδ`.
///
/// `λ = 0` is accepted and fails with [`Error::Singular`] only when the small
/// system actually is singular.
pub fn egn_direction(
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
) -> Result<DVector<f64>> {
    validate(r, j, q, lambda, b, false)?;
    if jacobian_is_zero(j) {
        return Ok(DVector::zeros(j.params()));
    }
    let system = egn_system_matrix(j, q, lambda, b)?;
    // Not symmetric when Q ≠ I, so no Cholesky here.
    let delta = system
        .lu()
        .solve(r)
        .ok_or_else(|| Error::Singular("EGN small system QJJᵀ + bλI".into()))?;
    finished(-j.tr_mul_vec(&delta), "EGN")
}

/// Sherman–Morrison–Woodbury with `A = λI`, `U = Jᵀ`, `C = Q/b`, `V = J`.
///
/// `C⁻¹` does not exist for cross-entropy, so the inner inverse
/// `(bQ⁻¹ + JJᵀ/λ)⁻¹` is evaluated as `(bI + QJJᵀ/λ)⁻¹Q`.
pub fn smw_direction(
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
) -> Result<DVector<f64>> {
    validate(r, j, q, lambda, b, true)?;
    if jacobian_is_zero(j) {
        return Ok(DVector::zeros(j.params()));
    }
    let bf = b as f64;
    let g = j.tr_mul_vec(r) / bf;
    let gram = j.gram();
    if !linalg::all_finite(gram.as_slice()) {
        return Err(Error::NonFinite("Jacobian Gram matrix".into()));
    }
    let mut t = q.mul_left(&gram) / lambda;
    for i in 0..t.nrows() {
        t[(i, i)] += bf;
    }
    let k = t
        .lu()
        .solve(&q.to_dense())
        .ok_or_else(|| Error::Singular("SMW capacitance matrix".into()))?;
    // Second large product, Jᵀ Kᵀ (d × bc).
    let wt = linalg::mul(j.transposed(), &k.transpose());
    let u = wt.tr_mul(&g);
    let correction = j.tr_mul_vec(&u);
    finished(-(g / lambda - correction / (lambda * lambda)), "SMW")
}

/// Economy QR route for `Q = I` and single-output models.
///
/// With `Jᵀ = Q_f R`, solves `(RRᵀ + bλI)δ = Rr` through a second QR and
/// returns `d = −Q_f δ`.
pub fn qr_direction(
    r: &DVector<f64>,
    j: &StackedJacobian,
    lambda: f64,
    b: usize,
) -> Result<DVector<f64>> {
    if j.outputs_per_sample() != 1 {
        return Err(Error::InvalidArgument(format!(
            "the QR solver needs one output per sample, got {}",
            j.outputs_per_sample()
        )));
    }
    validate(r, j, &QBlocks::Identity { n: j.rows() }, lambda, b, true)?;
    if jacobian_is_zero(j) {
        return Ok(DVector::zeros(j.params()));
    }
    if !j.is_finite() {
        return Err(Error::NonFinite("Jacobian".into()));
    }
    let qr = j.transposed().clone().qr();
    let (qf, rf) = (qr.q(), qr.r());
    let mut m = &rf * rf.transpose();
    let shift = b as f64 * lambda;
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    let inner = m.qr();
    let rhs = inner.q().tr_mul(&(&rf * r));
    let delta = inner
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Singular("QR inner triangular factor".into()))?;
    finished(-(qf * delta), "QR")
}

/// Matrix-free CG on the `d × d` system from `d₀ = 0`.
pub fn cg_direction(
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
    max_iters: usize,
) -> Result<DVector<f64>> {
    validate(r, j, q, lambda, b, true)?;
    let bf = b as f64;
    let hess = |v: &DVector<f64>| j.tr_mul_vec(&q.apply(&j.mul_vec(v))) / bf + v * lambda;
    let rhs = -j.tr_mul_vec(r) / bf;
    if !linalg::vec_all_finite(&rhs) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let tol = CG_TOLERANCE * (1.0 + rhs.norm());
    let mut x = DVector::zeros(j.params());
    let mut res = rhs.clone();
    let mut p = res.clone();
    let mut rr = res.norm_squared();
    for _ in 0..max_iters {
        if rr.sqrt() <= tol {
            break;
        }
        let hp = hess(&p);
        let curvature = p.dot(&hp);
        if curvature <= 0.0 || !curvature.is_finite() {
            break;
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p, 1.0);
        res.axpy(-alpha, &hp, 1.0);
        let rr_next = res.norm_squared();
        p = &res + &p * (rr_next / rr);
        rr = rr_next;
    }
    finished(x, "CG")
}

/// Reference solve of the full `d × d` system by Cholesky (`d ≤ 5000`).
pub fn dense_oracle(
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
) -> Result<DVector<f64>> {
    validate(r, j, q, lambda, b, false)?;
    let mut h = crate::losses::ggn_hessian_dense(j, q, b)?;
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let g = j.tr_mul_vec(r) / b as f64;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(j.params()));
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular("dense GGN system is not positive definite".into()))?;
    finished(-chol.solve(&g), "dense")
}

/// Dispatches on `kind`; the QR solver requires `Q = I`.
pub fn direction(
    kind: SolverKind,
    r: &DVector<f64>,
    j: &StackedJacobian,
    q: &QBlocks,
    lambda: f64,
    b: usize,
) -> Result<DVector<f64>> {
    match kind {
        SolverKind::EgnDg => egn_direction(r, j, q, lambda, b),
        SolverKind::Smw => smw_direction(r, j, q, lambda, b),
        SolverKind::Qr => {
            if !q.is_identity() {
                return Err(Error::InvalidArgument(
                    "the QR solver only supports Q = I".into(),
                ));
            }
            qr_direction(r, j, lambda, b)
        }
        SolverKind::CgInexact { max_iters } => cg_direction(r, j, q, lambda, b, max_iters),
        SolverKind::DenseOracle => dense_oracle(r, j, q, lambda, b),
    }
}

/// A synthetic direction problem.
#[derive(Debug, Clone)]
pub struct SolverInstance {
    pub residuals: DVector<f64>,
    pub jacobian: StackedJacobian,
    pub q: QBlocks,
    pub lambda: f64,
    pub batch: usize,
}

impl SolverInstance {
    pub fn solve(&self, kind: SolverKind) -> Result<DVector<f64>> {
        direction(
            kind,
            &self.residuals,
            &self.jacobian,
            &self.q,
            self.lambda,
            self.batch,
        )
    }

    pub fn gradient(&self) -> DVector<f64> {
        self.jacobian.tr_mul_vec(&self.residuals) / self.batch as f64
    }
}

/// Gaussian `J` with `N(0, 1/d)` entries. For cross-entropy, `r` and `Q`
/// come from random logits and labels; otherwise `r ~ N(0, I)` and `Q = I`.
pub fn random_instance(
    seed: u64,
    loss: LossKind,
    d: usize,
    b: usize,
    c: usize,
    lambda: f64,
) -> Result<SolverInstance> {
    if d == 0 || b == 0 || c == 0 {
        return Err(Error::InvalidArgument(format!(
            "instance sizes must be positive, got d={d}, b={b}, c={c}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d as f64).sqrt();
    let jt = DMatrix::from_fn(d, b * c, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v * scale
    });
    let jacobian = StackedJacobian::from_transposed(jt, c)?;
    let (residuals, q) = match loss {
        LossKind::CrossEntropy if c >= 2 => {
            let logits = DMatrix::from_fn(b, c, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                2.0 * v
            });
            let mut targets = DMatrix::zeros(b, c);
            for i in 0..b {
                targets[(i, rng.random_range(0..c))] = 1.0;
            }
            let bundle = ce_bundle(&logits, &targets)?;
            (bundle.residuals, bundle.q)
        }
        _ => (
            DVector::from_fn(b * c, |_, _| StandardNormal.sample(&mut rng)),
            QBlocks::Identity { n: b * c },
        ),
    };
    Ok(SolverInstance {
        residuals,
        jacobian,
        q,
        lambda,
        batch: b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub solver: String,
    pub d: usize,
    pub b: usize,
    pub c: usize,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

/// Default number of untimed warm-up solves.
pub const WARMUP_RUNS: usize = 10;

pub fn time_solver(
    kind: SolverKind,
    d: usize,
    b: usize,
    c: usize,
    repeats: usize,
    seed: u64,
) -> Result<TimingRecord> {
    time_solver_with_warmup(kind, d, b, c, repeats, seed, WARMUP_RUNS)
}

/// Times only the direction computation on one random instance.
///
/// The instance uses a cross-entropy-like `Q` when `c ≥ 2` and the solver
/// accepts it; the QR solver always gets `Q = I`.
pub fn time_solver_with_warmup(
    kind: SolverKind,
    d: usize,
    b: usize,
    c: usize,
    repeats: usize,
    seed: u64,
    warmup: usize,
) -> Result<TimingRecord> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let loss = if kind == SolverKind::Qr {
        LossKind::Mse
    } else {
        LossKind::CrossEntropy
    };
    let instance = random_instance(seed, loss, d, b, c, 1e-2)?;
    for _ in 0..warmup {
        black_box(instance.solve(kind)?);
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = instance.solve(black_box(kind))?;
        samples.push(start.elapsed().as_secs_f64());
        black_box(out);
    }
    let mean = samples.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(TimingRecord {
        solver: kind.name(),
        d,
        b,
        c,
        repeats,
        mean_seconds: mean,
        std_seconds: std,
    })
}

/// Whether a dense oracle fits in memory for this instance.
pub fn oracle_supported(d: usize) -> bool {
    d <= DENSE_CAP
}
