//! Stepsize rules and empirical checks of the convergence inequalities.
//!
//! The checks are one-sided: each produces a [`VerificationReport`] whose
//! right-hand side carries an explicit Monte-Carlo allowance of three
//! standard errors. The variance bound σ² is measured, never assumed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algorithms::{local_steps_ssf, run_round_ssf, Algorithm, OptimizerConfig, Simulation};
use crate::dense;
use crate::error::{FedError, Result};
use crate::problem::{full_local_gradient, smoothness_constant, Federation};
use crate::rng::{self, Purpose};
use crate::subspace::Projector;

/// Monte-Carlo allowance in standard errors.
pub const MC_STANDARD_ERRORS: f64 = 3.0;
/// Relative slack for exact-arithmetic comparisons.
pub const EXACT_TOL: f64 = 1e-12;
/// Absolute constant of the harmonic stepsize rule.
pub const C_STAR: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// L
    pub smoothness: f64,
    /// σ²
    pub sigma_sq: f64,
    /// ρ = r/d
    pub ratio: f64,
    /// Δ_F = F(x⁰) − F*
    pub delta_f: f64,
    /// C_0 = (1/N) Σ ‖c_i⁰ − ∇F_i(x⁰)‖²
    pub c0: f64,
    pub num_clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub c_star: f64,
}

impl TheoryParams {
    /// Measures L, Δ_F and C_0 for zero initial model and controls.
    pub fn measure(fed: &Federation, cfg: &OptimizerConfig, sigma_sq: f64) -> Result<Self> {
        let d = fed.feature_dim();
        let zero = DMatrix::zeros(d, fed.output_dim());
        let l = smoothness_constant(fed.clients(), fed.ridge())?;
        let delta_f = fed.global_loss(&zero)? - fed.global_loss(fed.optimum())?;
        let mut c0 = 0.0;
        for ds in fed.clients() {
            c0 += dense::frob_sq(&full_local_gradient(ds, &zero, fed.ridge())?);
        }
        c0 /= fed.num_clients() as f64;
        let r = if cfg.algorithm.uses_subspace() {
            cfg.subspace_dim
        } else {
            d
        };
        Ok(TheoryParams {
            smoothness: l,
            sigma_sq,
            ratio: r as f64 / d as f64,
            delta_f: delta_f.max(0.0),
            c0,
            num_clients: fed.num_clients(),
            local_steps: cfg.local_steps,
            rounds: cfg.rounds,
            c_star: C_STAR,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(FedError::Precondition(format!(
                "smoothness constant must be positive, got {}",
                self.smoothness
            )));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(FedError::Precondition(format!(
                "ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        for (name, v) in [
            ("sigma_sq", self.sigma_sq),
            ("delta_f", self.delta_f),
            ("c0", self.c0),
            ("c_star", self.c_star),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FedError::Precondition(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.num_clients == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(FedError::Precondition("N, K and T must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output of [`corollary_stepsizes`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stepsizes {
    pub local_lr: f64,
    pub global_lr: f64,
    /// η̃ = η_g η_l K
    pub effective: f64,
    /// η̃₀, the stability threshold
    pub stability: f64,
    /// η̃₁, the variance threshold (infinite when σ² = 0)
    pub variance: f64,
}

/// Harmonic stepsize rule with split local/global rates.
///
/// σ-dependent terms are dropped (treated as +∞) when σ² = 0.
pub fn corollary_stepsizes(p: &TheoryParams) -> Result<Stepsizes> {
    p.validate()?;
    let l = p.smoothness;
    let k = p.local_steps as f64;
    let n = p.num_clients as f64;
    let t = p.rounds as f64;
    let rho = p.ratio;
    let budget = p.delta_f + p.c0;

    let mut local_lr = (1.0 / (2.0 * k * l)).min((rho / (864.0 * l * l * k * k * k)).sqrt());
    let mut variance = f64::INFINITY;
    if p.sigma_sq > 0.0 {
        if budget <= 0.0 {
            return Err(FedError::Precondition(
                "Δ_F + C_0 must be positive when σ² > 0".into(),
            ));
        }
        local_lr = local_lr.min((budget / (p.c_star * l * k * p.sigma_sq * t * rho)).sqrt());
        variance = (2.0 * n * k * budget / (l * p.sigma_sq * t)).sqrt();
    }
    let stability = (1.0 / (4.0 * l)).min(rho / (2.0 * l));
    let effective = if variance.is_infinite() {
        stability
    } else {
        1.0 / (1.0 / stability + 1.0 / variance)
    };
    Ok(Stepsizes {
        local_lr,
        global_lr: effective / (local_lr * k),
        effective,
        stability,
        variance,
    })
}

/// Outcome of one inequality check `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub lhs: f64,
    /// Bound plus any Monte-Carlo allowance.
    pub rhs: f64,
    /// The Monte-Carlo allowance included in `rhs`.
    pub slack: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub trials: usize,
    pub notes: String,
}

impl VerificationReport {
    pub fn new(
        name: impl Into<String>,
        lhs: f64,
        bound: f64,
        slack: f64,
        trials: usize,
        notes: impl Into<String>,
    ) -> Self {
        let rhs = bound + slack;
        let tolerance = EXACT_TOL;
        VerificationReport {
            name: name.into(),
            lhs,
            rhs,
            slack,
            margin: rhs - lhs,
            tolerance,
            pass: lhs <= rhs + tolerance * rhs.abs(),
            trials,
            notes: notes.into(),
        }
    }

    pub fn exact(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::new(name, lhs, rhs, 0.0, 0, "")
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {:<32} lhs={:.6e} rhs={:.6e} margin={:.3e} trials={}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.lhs,
            self.rhs,
            self.margin,
            self.trials,
            if self.notes.is_empty() {
                String::new()
            } else {
                format!("  ({})", self.notes)
            }
        )
    }
}

/// Stepsize conditions of the convergence theorem, one report each.
pub fn check_theorem_conditions(
    local_lr: f64,
    effective: f64,
    p: &TheoryParams,
) -> Vec<VerificationReport> {
    let l = p.smoothness;
    let k = p.local_steps as f64;
    let rho = p.ratio;
    vec![
        VerificationReport::exact("cond1_local_lr", local_lr, 1.0 / (2.0 * k * l)),
        VerificationReport::exact("cond1_effective_lr", effective, 1.0 / (4.0 * l)),
        VerificationReport::exact(
            "cond2_drift",
            72.0 * k.powi(3) * l * l * local_lr * local_lr,
            rho / 8.0,
        ),
        VerificationReport::exact(
            "cond3_coupling",
            3456.0 * l.powi(4) * effective * effective * k.powi(3) * local_lr * local_lr
                / rho.powi(3),
            1.0,
        ),
        VerificationReport::exact(
            "cond4_subspace",
            4.0 * l * l * effective * effective / (rho * rho),
            1.0,
        ),
    ]
}

struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn new() -> Self {
        Moments {
            n: 0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn std_err(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Monte-Carlo estimate of `max_{probe, i} E‖g_i(X) − ∇F_i(X)‖²`, each term
/// inflated by three standard errors.
pub fn estimate_sigma(
    fed: &Federation,
    batch: usize,
    probes: &[DMatrix<f64>],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials < 100 {
        return Err(FedError::Precondition(format!(
            "estimate_sigma needs >= 100 trials, got {trials}"
        )));
    }
    let mut best = 0.0f64;
    for (pi, x) in probes.iter().enumerate() {
        for (ci, ds) in fed.clients().iter().enumerate() {
            let stats = noise_moments(fed, ci, x, batch, None, trials, seed ^ 0x51, pi)?;
            let _ = ds;
            best = best.max(stats.mean() + MC_STANDARD_ERRORS * stats.std_err());
        }
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn noise_moments(
    fed: &Federation,
    client: usize,
    x: &DMatrix<f64>,
    batch: usize,
    projector: Option<&Projector>,
    trials: usize,
    seed: u64,
    probe: usize,
) -> Result<Moments> {
    let ds = &fed.clients()[client];
    let full = full_local_gradient(ds, x, fed.ridge())?;
    let mut rng = rng::stream(seed, Purpose::Probe, probe as u64, client as u64);
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut m = Moments::new();
    if batch == 0 || batch > ds.samples() {
        return Err(FedError::BatchSize {
            batch,
            samples: ds.samples(),
        });
    }
    for _ in 0..trials {
        ds.stochastic_gradient_into(x, fed.ridge(), batch, &mut rng, &mut g);
        g -= &full;
        let v = match projector {
            Some(p) => dense::frob_sq(&(p.basis() * &g)),
            None => dense::frob_sq(&g),
        };
        m.push(v);
    }
    Ok(m)
}

/// Checks `E‖P(g − ∇F_i)‖² ≤ σ²` at every probe and client.
#[allow(clippy::too_many_arguments)]
pub fn verify_projected_variance(
    fed: &Federation,
    p: &Projector,
    batch: usize,
    probes: &[DMatrix<f64>],
    trials: usize,
    sigma_sq: f64,
    seed: u64,
) -> Result<VerificationReport> {
    let mut worst: Option<(f64, f64)> = None;
    let mut violations = 0;
    for (pi, x) in probes.iter().enumerate() {
        for ci in 0..fed.num_clients() {
            let m = noise_moments(fed, ci, x, batch, Some(p), trials, seed ^ 0xA7, pi)?;
            let (lhs, slack) = (m.mean(), MC_STANDARD_ERRORS * m.std_err());
            if lhs > sigma_sq + slack {
                violations += 1;
            }
            if worst.is_none_or(|(l, s)| lhs - slack > l - s) {
                worst = Some((lhs, slack));
            }
        }
    }
    let (lhs, slack) = worst.ok_or_else(|| FedError::Precondition("no probe points".into()))?;
    let mut report = VerificationReport::new(
        "projected_variance",
        lhs,
        sigma_sq,
        slack,
        trials,
        format!("r={} violations={violations}", p.rank()),
    );
    report.pass = report.pass && violations == 0;
    Ok(report)
}

/// Settings shared by the trajectory-based checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckPlan {
    /// Rounds of SSF run to produce states.
    pub rounds: usize,
    /// Number of frozen states examined.
    pub states: usize,
    /// Monte-Carlo replays per state.
    pub trials: usize,
    pub seed: u64,
}

fn require_full_participation(fed: &Federation, cfg: &OptimizerConfig) -> Result<()> {
    if cfg.algorithm != Algorithm::Ssf {
        return Err(FedError::Precondition("verification runs SSF".into()));
    }
    if cfg.clients_per_round != fed.num_clients() {
        return Err(FedError::Precondition(format!(
            "verification assumes full participation (S = N = {}), got S = {}",
            fed.num_clients(),
            cfg.clients_per_round
        )));
    }
    Ok(())
}

fn state_rounds(plan: &CheckPlan) -> Vec<usize> {
    let n = plan.states.max(1);
    (0..n).map(|j| j * plan.rounds / n).collect()
}

/// Checks the subspace client-drift bound
/// `Σ_k E‖y_proj^k − x_proj‖² ≤ 6K²η_l²σ² + 12K³η_l²‖∇F_i(x) − c_i + c‖²`
/// on frozen states of an SSF run, one client per state, replaying the local
/// loop with fresh minibatches.
pub fn verify_drift_bound(
    fed: &Federation,
    cfg: &OptimizerConfig,
    sigma_sq: f64,
    plan: &CheckPlan,
) -> Result<VerificationReport> {
    require_full_participation(fed, cfg)?;
    let l = smoothness_constant(fed.clients(), fed.ridge())?;
    let k = cfg.local_steps as f64;
    if cfg.local_lr > 1.0 / (2.0 * k * l) {
        return Err(FedError::Precondition(format!(
            "drift bound needs η_l ≤ 1/(2KL) = {:e}, got {:e}",
            1.0 / (2.0 * k * l),
            cfg.local_lr
        )));
    }
    let eta2 = cfg.local_lr * cfg.local_lr;
    let targets = state_rounds(plan);
    let mut sim = Simulation::new(fed, cfg)?;
    let mut worst: Option<(f64, f64, f64)> = None;
    let mut violations = 0;
    for (j, &t) in targets.iter().enumerate() {
        while sim.model().round < t {
            sim.step()?;
        }
        let p = crate::algorithms::projector_for(cfg, fed.feature_dim(), t)?;
        let x = p.decompose(&sim.model().x)?;
        let controls = sim.controls();
        let i = j % fed.num_clients();
        let ds = &fed.clients()[i];
        let c_i_proj = p.project(&controls.clients[i])?;
        let c_proj = p.project(&controls.server)?;
        let grad = full_local_gradient(ds, &sim.model().x, fed.ridge())?;
        let g_it = dense::frob_sq(&(grad - &controls.clients[i] + &controls.server));
        let bound = 6.0 * k * k * eta2 * sigma_sq + 12.0 * k.powi(3) * eta2 * g_it;

        let mut m = Moments::new();
        for trial in 0..plan.trials {
            let mut stream = rng::stream(
                plan.seed,
                Purpose::Replay,
                (j * plan.trials + trial) as u64,
                i as u64,
            );
            let out = local_steps_ssf(
                &p,
                &x.proj,
                &x.res,
                &c_i_proj,
                &c_proj,
                ds,
                cfg.local_lr,
                cfg.local_steps,
                fed.ridge(),
                cfg.batch_size,
                &mut stream,
            );
            m.push(out.drift);
        }
        let (lhs, slack) = (m.mean(), MC_STANDARD_ERRORS * m.std_err());
        if lhs > bound + slack {
            violations += 1;
        }
        let ratio = lhs / (bound + slack).max(f64::MIN_POSITIVE);
        if worst.is_none_or(|(r, _, _)| ratio > r) {
            worst = Some((ratio, lhs, bound + slack));
        }
    }
    let (_, lhs, rhs) = worst.ok_or_else(|| FedError::Precondition("no states examined".into()))?;
    let mut report = VerificationReport::new(
        "client_drift_bound",
        lhs,
        rhs,
        0.0,
        plan.trials,
        format!(
            "states={} violations={violations} (worst ratio shown)",
            targets.len()
        ),
    );
    report.pass = report.pass && violations == 0;
    Ok(report)
}

/// Checks the one-round progress inequality
/// `E F(x⁺) ≤ F(x) − (ρη̃/4)‖∇F(x)‖² + (Lη̃²/(2NK))σ² + (3L²η̃/2) E_drift`
/// by replaying rounds from frozen SSF states with fresh projectors and
/// minibatches.
pub fn verify_descent(
    fed: &Federation,
    cfg: &OptimizerConfig,
    sigma_sq: f64,
    plan: &CheckPlan,
) -> Result<VerificationReport> {
    require_full_participation(fed, cfg)?;
    let l = smoothness_constant(fed.clients(), fed.ridge())?;
    let eta = cfg.effective_lr();
    if eta > 1.0 / (4.0 * l) {
        return Err(FedError::Precondition(format!(
            "descent lemma needs η̃ ≤ 1/(4L) = {:e}, got {eta:e}",
            1.0 / (4.0 * l)
        )));
    }
    let rho = cfg.subspace_dim as f64 / fed.feature_dim() as f64;
    let nk = (fed.num_clients() * cfg.local_steps) as f64;
    let targets = state_rounds(plan);
    let mut sim = Simulation::new(fed, cfg)?;
    let mut worst: Option<(f64, f64, f64)> = None;
    let mut violations = 0;
    for (j, &t) in targets.iter().enumerate() {
        while sim.model().round < t {
            sim.step()?;
        }
        let model = sim.model().clone();
        let controls = sim.controls().clone();
        let f_now = fed.global_loss(&model.x)?;
        let grad_sq = dense::frob_sq(&fed.global_gradient(&model.x)?);
        let bound = f_now - rho * eta / 4.0 * grad_sq + l * eta * eta / (2.0 * nk) * sigma_sq;
        let drift_coef = 1.5 * l * l * eta;

        let mut m = Moments::new();
        for trial in 0..plan.trials {
            let mut replay = cfg.clone();
            replay.seed = replay_seed(plan.seed, j, trial);
            let out = run_round_ssf(&model, &controls, fed, &replay, t)?;
            let f_next = fed.global_loss(&out.model.x)?;
            m.push(f_next - drift_coef * out.diagnostics.mean_drift(cfg.local_steps));
        }
        let (lhs, slack) = (m.mean(), MC_STANDARD_ERRORS * m.std_err());
        if lhs > bound + slack + EXACT_TOL * bound.abs() {
            violations += 1;
        }
        let gap = lhs - bound - slack;
        if worst.is_none_or(|(g, _, _)| gap > g) {
            worst = Some((gap, lhs, bound + slack));
        }
    }
    let (_, lhs, rhs) = worst.ok_or_else(|| FedError::Precondition("no states examined".into()))?;
    let mut report = VerificationReport::new(
        "one_round_progress",
        lhs,
        rhs,
        0.0,
        plan.trials,
        format!(
            "states={} violations={violations}; lhs is E[F(x+) - 3L^2 eta/2 * E_drift]",
            targets.len()
        ),
    );
    report.pass = report.pass && violations == 0;
    Ok(report)
}

fn replay_seed(base: u64, state: usize, trial: usize) -> u64 {
    let mut z = base
        .wrapping_add((state as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((trial as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Measured control-variate error `C_t` along an SSF run next to the upper
/// envelope obtained by iterating the contraction recursion with measured
/// perturbations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub measured: Vec<f64>,
    pub envelope: Vec<f64>,
}

pub fn control_contraction_trace(
    fed: &Federation,
    cfg: &OptimizerConfig,
    sigma_sq: f64,
    rounds: usize,
) -> Result<ContractionTrace> {
    require_full_participation(fed, cfg)?;
    let l = smoothness_constant(fed.clients(), fed.ridge())?;
    let k = cfg.local_steps as f64;
    if cfg.local_lr > 1.0 / (2.0 * k * l) {
        return Err(FedError::Precondition(format!(
            "contraction lemma needs η_l ≤ 1/(2KL) = {:e}, got {:e}",
            1.0 / (2.0 * k * l),
            cfg.local_lr
        )));
    }
    let rho = cfg.subspace_dim as f64 / fed.feature_dim() as f64;
    let eta = cfg.effective_lr();
    let nk = fed.num_clients() as f64 * k;
    let control_error = |sim: &Simulation| -> Result<f64> {
        let mut acc = 0.0;
        for (ds, c) in fed.clients().iter().zip(&sim.controls().clients) {
            let g = full_local_gradient(ds, &sim.model().x, fed.ridge())?;
            acc += dense::frob_dist_sq(c, &g);
        }
        Ok(acc / fed.num_clients() as f64)
    };

    let mut sim = Simulation::new(fed, cfg)?;
    let mut measured = vec![control_error(&sim)?];
    let mut envelope = vec![measured[0]];
    for _ in 0..rounds {
        let grad_sq = dense::frob_sq(&fed.global_gradient(&sim.model().x)?);
        let out = sim.step()?;
        let drift = out.diagnostics.mean_drift(cfg.local_steps);
        let prev = *envelope.last().expect("nonempty");
        let next = (1.0 - rho / 2.0) * prev
            + 3.0 * sigma_sq / k
            + 3.0 * l * l * drift
            + 12.0 * l * l / rho * eta * eta * grad_sq
            + 6.0 * l * l / rho * eta * eta * sigma_sq / nk
            + 12.0 * l.powi(4) / rho * eta * eta * drift;
        envelope.push(next);
        measured.push(control_error(&sim)?);
    }
    Ok(ContractionTrace { measured, envelope })
}

/// Counts rounds where the measured `C_t` exceeds the recursion envelope.
pub fn verify_control_contraction_trend(
    fed: &Federation,
    cfg: &OptimizerConfig,
    sigma_sq: f64,
    rounds: usize,
) -> Result<VerificationReport> {
    let trace = control_contraction_trace(fed, cfg, sigma_sq, rounds)?;
    let mut violations = 0;
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for (t, (c, u)) in trace.measured.iter().zip(&trace.envelope).enumerate() {
        if *c > u * (1.0 + EXACT_TOL) {
            violations += 1;
        }
        // U_0 = C_0 by construction, so round 0 says nothing.
        let ratio = c / u.max(f64::MIN_POSITIVE);
        if (t > 0 || rounds == 0) && ratio > worst.0 {
            worst = (ratio, *c, *u);
        }
    }
    let mut report = VerificationReport::new(
        "control_variate_contraction",
        worst.1,
        worst.2,
        0.0,
        1,
        format!("rounds={rounds} violations={violations} (worst ratio shown)"),
    );
    report.pass = report.pass && violations == 0;
    Ok(report)
}

/// `min_{t<T} ‖∇F(x^t)‖²` for `T = 1..=rounds` along an SSF run.
pub fn min_grad_norm_curve(
    fed: &Federation,
    cfg: &OptimizerConfig,
    rounds: usize,
) -> Result<Vec<f64>> {
    let mut sim = Simulation::new(fed, cfg)?;
    let mut best = f64::INFINITY;
    let mut curve = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        best = best.min(dense::frob_sq(&fed.global_gradient(&sim.model().x)?));
        curve.push(best);
        sim.step()?;
    }
    Ok(curve)
}
