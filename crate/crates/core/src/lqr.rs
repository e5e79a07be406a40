//! Data-driven LQR through policy iteration on a quadratic Q-function.
//!
//! Rewards are `sᵀQs + aᵀRa` with `Q ⪯ 0`, `R ≺ 0`, so the goal is to
//! maximize. [`riccati_oracle`] gives the analytic optimum for comparison.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::losses::QBlocks;
use crate::nn::StackedJacobian;
use crate::solvers;
use crate::{Error, Result};

const EIG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSystem {
    pub a: DMatrix<f64>,
    /// `n_s × n_a`.
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
}

fn check_square(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::mismatch(
            name,
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    if (m - m.transpose()).amax() > EIG_TOL * (1.0 + m.amax()) {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

impl LqrSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let ns = a.nrows();
        if ns == 0 || a.ncols() != ns {
            return Err(Error::mismatch(
                "A",
                "a non-empty square matrix",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != ns || b.ncols() == 0 {
            return Err(Error::mismatch(
                "B",
                format!("{ns}xn_a"),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("system matrices".into()));
        }
        let na = b.ncols();
        check_square("Sigma", &sigma, ns)?;
        check_square("Q", &q, ns)?;
        check_square("R", &r, na)?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let scale = |m: &DMatrix<f64>| EIG_TOL * (1.0 + m.amax());
        if eig_range(&q).1 > scale(&q) {
            return Err(Error::NotDefinite("Q must be negative semidefinite".into()));
        }
        if eig_range(&r).1 >= 0.0 {
            return Err(Error::NotDefinite("R must be negative definite".into()));
        }
        if eig_range(&sigma).0 < -scale(&sigma) {
            return Err(Error::NotDefinite("Sigma must be positive semidefinite".into()));
        }
        let sys = Self { a, b, sigma, q, r, gamma };
        if !sys.is_deterministic() && gamma >= 1.0 {
            return Err(Error::InvalidArgument(
                "stochastic systems need gamma < 1 for a finite value".into(),
            ));
        }
        Ok(sys)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn actions(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().all(|&v| v == 0.0)
    }

    /// `A = 0.5`, `B = 1`, `Q = R = −1`, `γ = 1`, no noise.
    pub fn scalar() -> Self {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(one(0.5), one(1.0), one(0.0), one(-1.0), one(-1.0), 1.0)
            .expect("valid built-in system")
    }

    /// Deterministic, open-loop stable system with 4 states and 2 actions.
    pub fn four_state() -> Self {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.9, 0.2, 0.0, 0.0, //
                0.0, 0.8, 0.1, 0.0, //
                0.0, 0.0, 0.7, 0.2, //
                0.1, 0.0, 0.0, 0.6,
            ],
        );
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        Self::new(
            a,
            b,
            DMatrix::zeros(4, 4),
            -DMatrix::identity(4, 4),
            -DMatrix::identity(2, 2),
            0.95,
        )
        .expect("valid built-in system")
    }

    /// Resolves `builtin:scalar`, `builtin:four-state`, or a TOML file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "builtin:scalar" | "scalar" => Ok(Self::scalar()),
            "builtin:four-state" | "builtin:four_state" | "four-state" => Ok(Self::four_state()),
            path => Self::load(path),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.as_ref().display()),
            ))
        })?;
        Self::from_toml_str(&text)
    }

    /// Keys `A`, `B`, `Q`, `R` (row-major nested arrays), optional `Sigma`, and `gamma`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct SystemFile {
            #[serde(rename = "A")]
            a: Vec<Vec<f64>>,
            #[serde(rename = "B")]
            b: Vec<Vec<f64>>,
            #[serde(rename = "Sigma", default)]
            sigma: Option<Vec<Vec<f64>>>,
            #[serde(rename = "Q")]
            q: Vec<Vec<f64>>,
            #[serde(rename = "R")]
            r: Vec<Vec<f64>>,
            gamma: f64,
        }
        let file: SystemFile =
            toml::from_str(text).map_err(|e| Error::config("system", e.message().to_string()))?;
        let a = rows_to_matrix("A", &file.a)?;
        let sigma = match &file.sigma {
            Some(rows) => rows_to_matrix("Sigma", rows)?,
            None => DMatrix::zeros(a.nrows(), a.nrows()),
        };
        Self::new(
            a,
            rows_to_matrix("B", &file.b)?,
            sigma,
            rows_to_matrix("Q", &file.q)?,
            rows_to_matrix("R", &file.r)?,
            file.gamma,
        )
    }

    /// Lower factor `L` with `LLᵀ = Σ`, from the eigendecomposition.
    pub fn noise_factor(&self) -> DMatrix<f64> {
        let eig = self.sigma.clone().symmetric_eigen();
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&roots)
    }

    pub fn reward(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        s.dot(&(&self.q * s)) + a.dot(&(&self.r * a))
    }
}

fn rows_to_matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(key, "expected a non-empty rectangular array of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `s' = As + Ba + e` with `e = L·ξ`, `ξ ~ N(0, I)`; returns `(s', reward)`.
pub fn simulate_step<R: rand::Rng>(
    sys: &LqrSystem,
    s: &DVector<f64>,
    a: &DVector<f64>,
    noise_factor: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    if s.len() != sys.states() || a.len() != sys.actions() {
        return Err(Error::mismatch(
            "state/action",
            format!("{}/{}", sys.states(), sys.actions()),
            format!("{}/{}", s.len(), a.len()),
        ));
    }
    let mut next = &sys.a * s + &sys.b * a;
    if !sys.is_deterministic() {
        let xi = DVector::from_fn(sys.states(), |_, _| StandardNormal.sample(rng));
        next += noise_factor * xi;
    }
    Ok((next, sys.reward(s, a)))
}

/// Number of quadratic monomials of an `n`-vector.
pub fn quad_feature_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Monomials `zᵢzⱼ` (`i ≤ j`) of `z = [s; a]`, off-diagonal ones doubled.
pub fn quad_features(s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
    let z: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
    let n = z.len();
    let mut x = DVector::zeros(quad_feature_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            x[k] = if i == j { z[i] * z[i] } else { 2.0 * z[i] * z[j] };
            k += 1;
        }
    }
    x
}

/// Symmetric `M` with `wᵀ·quad_features(z) = zᵀMz`.
pub fn weights_to_matrix(w: &DVector<f64>, n: usize) -> DMatrix<f64> {
    assert!(w.len() >= quad_feature_len(n), "weight vector too short");
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = w[k];
            m[(j, i)] = w[k];
            k += 1;
        }
    }
    m
}

/// Inverse of [`weights_to_matrix`] (reads the upper triangle).
pub fn matrix_to_weights(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut w = DVector::zeros(quad_feature_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            w[k] = m[(i, j)];
            k += 1;
        }
    }
    w
}

/// Quadratic Q-function `zᵀMz (+ c)` over `z = [s; a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub n_s: usize,
    pub n_a: usize,
    /// Monomial weights, followed by one constant weight when `offset` is set.
    pub w: DVector<f64>,
    pub offset: bool,
}

impl QuadraticModel {
    pub fn zeros(n_s: usize, n_a: usize, offset: bool) -> Self {
        let len = quad_feature_len(n_s + n_a) + usize::from(offset);
        Self {
            n_s,
            n_a,
            w: DVector::zeros(len),
            offset,
        }
    }

    pub fn features(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let x = quad_features(s, a);
        if self.offset {
            x.push(1.0)
        } else {
            x
        }
    }

    pub fn value(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        self.w.dot(&self.features(s, a))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        weights_to_matrix(&self.w, self.n_s + self.n_a)
    }

    /// Greedy policy `K = −M_aa⁻¹ M_as`, requiring `−M_aa ≻ 0`.
    pub fn greedy_policy(&self) -> Result<DMatrix<f64>> {
        improve_policy(&self.matrix(), self.n_s)
    }
}

/// Greedy improvement from a Q-function matrix with state block size `n_s`.
pub fn improve_policy(m: &DMatrix<f64>, n_s: usize) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let n_a = n - n_s;
    let m_aa = m.view((n_s, n_s), (n_a, n_a)).into_owned();
    let m_as = m.view((n_s, 0), (n_a, n_s)).into_owned();
    // Rewards are negative, so the maximizer needs M_aa ≺ 0 rather than ≻ 0.
    let chol = (-&m_aa).cholesky().ok_or_else(|| {
        Error::NotDefinite("M_aa is not negative definite; the greedy policy is undefined".into())
    })?;
    Ok(chol.solve(&m_as))
}

/// Exploration and episode settings for data collection.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exploration {
    pub std: f64,
    pub episode_len: usize,
}

impl Default for Exploration {
    fn default() -> Self {
        Self {
            std: 0.1,
            episode_len: 50,
        }
    }
}

/// One observed transition under an exploratory action.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub reward: f64,
    pub next: DVector<f64>,
}

/// Seeded trajectory generator with periodic resets from `N(0, I)`.
#[derive(Debug, Clone)]
pub struct Simulator {
    sys: LqrSystem,
    noise: DMatrix<f64>,
    rng: ChaCha8Rng,
    state: DVector<f64>,
    steps: usize,
    exploration: Exploration,
}

impl Simulator {
    pub fn new(sys: &LqrSystem, exploration: Exploration, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = DVector::from_fn(sys.states(), |_, _| StandardNormal.sample(&mut rng));
        Self {
            noise: sys.noise_factor(),
            sys: sys.clone(),
            rng,
            state,
            steps: 0,
            exploration,
        }
    }

    /// Advances with `a = Ks + e`.
    pub fn step(&mut self, k: &DMatrix<f64>) -> Result<Transition> {
        if self.steps > 0 && self.steps.is_multiple_of(self.exploration.episode_len.max(1)) {
            self.state = DVector::from_fn(self.sys.states(), |_, _| StandardNormal.sample(&mut self.rng));
        }
        let e = DVector::from_fn(self.sys.actions(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut self.rng);
            v * self.exploration.std
        });
        let a = k * &self.state + e;
        let (next, reward) = simulate_step(&self.sys, &self.state, &a, &self.noise, &mut self.rng)?;
        let t = Transition {
            s: self.state.clone(),
            a,
            reward,
            next: next.clone(),
        };
        self.state = next;
        self.steps += 1;
        Ok(t)
    }
}

/// How `d` is obtained during policy evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluator {
    /// Per-transition semi-gradient TD with step `alpha`.
    Td { alpha: f64 },
    /// Mini-batch Gauss-Newton step through the EGN solver.
    Egn { lambda: f64, alpha: f64 },
    /// Same step with truncated CG.
    Cg { lambda: f64, alpha: f64, max_iters: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationConfig {
    pub evaluator: Evaluator,
    /// Transitions per update for the batched evaluators.
    pub batch: usize,
    /// Stop when `‖w_i − w_{i−1}‖_∞ < eta`.
    pub eta: f64,
    pub max_iters: usize,
    pub exploration: Exploration,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            evaluator: Evaluator::Egn {
                lambda: 1e-6,
                alpha: 1.0,
            },
            batch: 64,
            eta: 1e-8,
            max_iters: 10_000,
            exploration: Exploration::default(),
        }
    }
}

const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub iterations: usize,
    pub converged: bool,
}

/// Evaluates policy `k` in place on `model`, drawing data from `sim`.
pub fn policy_evaluation(
    sys: &LqrSystem,
    k: &DMatrix<f64>,
    model: &mut QuadraticModel,
    sim: &mut Simulator,
    cfg: &EvaluationConfig,
) -> Result<EvaluationOutcome> {
    if k.shape() != (sys.actions(), sys.states()) {
        return Err(Error::mismatch(
            "policy K",
            format!("{}x{}", sys.actions(), sys.states()),
            format!("{}x{}", k.nrows(), k.ncols()),
        ));
    }
    let gamma = sys.gamma;
    for it in 1..=cfg.max_iters {
        let step = match cfg.evaluator {
            Evaluator::Td { alpha } => {
                let t = sim.step(k)?;
                let x = model.features(&t.s, &t.a);
                let x_next = model.features(&t.next, &(k * &t.next));
                let td = t.reward + gamma * model.w.dot(&x_next) - model.w.dot(&x);
                x * (alpha * td)
            }
            Evaluator::Egn { lambda, alpha } | Evaluator::Cg { lambda, alpha, .. } => {
                let b = cfg.batch.max(1);
                let p = model.w.len();
                let mut jt = DMatrix::zeros(p, b);
                let mut r = DVector::zeros(b);
                for j in 0..b {
                    let t = sim.step(k)?;
                    let x = model.features(&t.s, &t.a);
                    let x_next = model.features(&t.next, &(k * &t.next));
                    r[j] = model.w.dot(&x) - (t.reward + gamma * model.w.dot(&x_next));
                    jt.set_column(j, &x);
                }
                let jac = StackedJacobian::from_transposed(jt, 1)?;
                let q = QBlocks::Identity { n: b };
                let d = match cfg.evaluator {
                    Evaluator::Cg { max_iters, .. } => {
                        solvers::cg_direction(&r, &jac, &q, lambda, b, max_iters)?
                    }
                    _ => solvers::egn_direction(&r, &jac, &q, lambda, b)?,
                };
                d * alpha
            }
        };
        model.w += &step;
        let norm = model.w.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence(format!(
                "policy evaluation weights reached norm {norm:e} after {it} updates"
            )));
        }
        if step.amax() < cfg.eta {
            return Ok(EvaluationOutcome {
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(EvaluationOutcome {
        iterations: cfg.max_iters,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    pub elapsed_seconds: f64,
    /// Frobenius norm of `K_p − K_{p−1}`.
    pub k_change: f64,
    pub eval_iterations: usize,
    pub k: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub k: DMatrix<f64>,
    pub model: QuadraticModel,
    pub history: Vec<OuterRecord>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyIterationConfig {
    pub evaluation: EvaluationConfig,
    pub eta: f64,
    pub max_outer: usize,
}

impl Default for PolicyIterationConfig {
    fn default() -> Self {
        Self {
            evaluation: EvaluationConfig::default(),
            eta: 1e-8,
            max_outer: 50,
        }
    }
}

/// Alternates evaluation (warm-started) and greedy improvement from `k0`.
pub fn policy_iteration(
    sys: &LqrSystem,
    k0: &DMatrix<f64>,
    cfg: &PolicyIterationConfig,
    seed: u64,
) -> Result<PolicyIterationResult> {
    let start = Instant::now();
    let mut sim = Simulator::new(sys, cfg.evaluation.exploration, seed);
    let mut model = QuadraticModel::zeros(sys.states(), sys.actions(), !sys.is_deterministic());
    let mut k = k0.clone();
    let mut history = Vec::new();
    for p in 1..=cfg.max_outer {
        let outcome = policy_evaluation(sys, &k, &mut model, &mut sim, &cfg.evaluation)?;
        let next = model.greedy_policy()?;
        let change = (&next - &k).norm();
        k = next;
        history.push(OuterRecord {
            iteration: p,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            k_change: change,
            eval_iterations: outcome.iterations,
            k: k.clone(),
        });
        if change < cfg.eta {
            return Ok(PolicyIterationResult {
                k,
                model,
                history,
                converged: true,
            });
        }
    }
    Ok(PolicyIterationResult {
        k,
        model,
        history,
        converged: false,
    })
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITERS: usize = 1_000_000;

/// Value iteration on the discounted Riccati equation from `P = 0`.
///
/// Returns `P` (value `sᵀPs`) and the optimal gain `K*`.
pub fn riccati_oracle(sys: &LqrSystem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (a, b, g) = (&sys.a, &sys.b, sys.gamma);
    let mut p = DMatrix::zeros(sys.states(), sys.states());
    for _ in 0..RICCATI_MAX_ITERS {
        let k = riccati_gain(sys, &p)?;
        let bpa = b.transpose() * &p * a;
        let mut next = &sys.q + (a.transpose() * &p * a) * g + bpa.transpose() * &k * g;
        next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence("Riccati iteration".into()));
        }
        let change = (&next - &p).amax();
        p = next;
        if change < RICCATI_TOL {
            let k = riccati_gain(sys, &p)?;
            return Ok((p, k));
        }
    }
    Err(Error::NoConvergence(format!(
        "Riccati iteration did not settle within {RICCATI_MAX_ITERS} steps"
    )))
}

/// `K = −γ(R + γBᵀPB)⁻¹BᵀPA`.
fn riccati_gain(sys: &LqrSystem, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = sys.gamma;
    let h = &sys.r + (sys.b.transpose() * p * &sys.b) * g;
    let rhs = (sys.b.transpose() * p * &sys.a) * g;
    let chol = (-h)
        .cholesky()
        .ok_or_else(|| Error::NotDefinite("R + γBᵀPB is not negative definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Residual of the Riccati equation at `P`.
pub fn riccati_residual(sys: &LqrSystem, p: &DMatrix<f64>) -> Result<f64> {
    let (a, b, g) = (&sys.a, &sys.b, sys.gamma);
    let k = riccati_gain(sys, p)?;
    let bpa = b.transpose() * p * a;
    let rhs = &sys.q + (a.transpose() * p * a) * g + bpa.transpose() * &k * g;
    Ok((rhs - p).amax())
}

/// `P_K` with `sᵀP_Ks` the value of `π(s) = Ks` (deterministic part).
pub fn policy_value(sys: &LqrSystem, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let closed = &sys.a + &sys.b * k;
    let reward = &sys.q + k.transpose() * &sys.r * k;
    let mut p = DMatrix::zeros(sys.states(), sys.states());
    for _ in 0..RICCATI_MAX_ITERS {
        let next = &reward + closed.transpose() * &p * &closed * sys.gamma;
        if !next.iter().all(|v| v.is_finite()) || next.amax() > DIVERGENCE_NORM {
            return Err(Error::Divergence("policy is not stabilizing".into()));
        }
        let change = (&next - &p).amax();
        p = next;
        if change < RICCATI_TOL {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence("Lyapunov iteration".into()))
}

/// Q-function matrix `[[Q + γAᵀPA, γAᵀPB], [γBᵀPA, R + γBᵀPB]]` for value `P`.
pub fn q_matrix(sys: &LqrSystem, p: &DMatrix<f64>) -> DMatrix<f64> {
    let (ns, na, g) = (sys.states(), sys.actions(), sys.gamma);
    let mut m = DMatrix::zeros(ns + na, ns + na);
    let ss = &sys.q + sys.a.transpose() * p * &sys.a * g;
    let sa = sys.a.transpose() * p * &sys.b * g;
    let aa = &sys.r + sys.b.transpose() * p * &sys.b * g;
    m.view_mut((0, 0), (ns, ns)).copy_from(&ss);
    m.view_mut((0, ns), (ns, na)).copy_from(&sa);
    m.view_mut((ns, 0), (na, ns)).copy_from(&sa.transpose());
    m.view_mut((ns, ns), (na, na)).copy_from(&aa);
    m
}
