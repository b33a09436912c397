//! Federated ridge matrix regression.
//!
//! Client `i` holds `(A_i, B_i)` and minimizes
//! `f_i(X) = ‖A_i X − B_i‖²_F / (2 n_i) + (λ/2) ‖X‖²_F` over `X ∈ R^{d×m}`.
//! The global objective is the plain mean of the client losses, whose minimizer
//! has a closed form and serves as the error reference.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{FedError, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub num_clients: usize,
    pub feature_dim: usize,
    pub output_dim: usize,
    pub samples_per_client: usize,
    pub ridge: f64,
    pub noise_std: f64,
    pub het_level: f64,
    pub data_seed: u64,
}

impl ProblemConfig {
    /// The matrix-regression setup used for the toy benchmark.
    pub fn toy(het_level: f64, data_seed: u64) -> Self {
        ProblemConfig {
            num_clients: 20,
            feature_dim: 100,
            output_dim: 10,
            samples_per_client: 50,
            ridge: 0.1,
            noise_std: 0.01,
            het_level,
            data_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clients", self.num_clients),
            ("feature_dim", self.feature_dim),
            ("output_dim", self.output_dim),
            ("samples_per_client", self.samples_per_client),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(FedError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        let nonneg = [
            ("ridge", self.ridge),
            ("noise_std", self.noise_std),
            ("het_level", self.het_level),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FedError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One client's local data.
#[derive(Clone, Debug)]
pub struct ClientDataset {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
    mean_shift: DVector<f64>,
    // Row-major copies for the minibatch kernel.
    feature_rows: Vec<f64>,
    target_rows: Vec<f64>,
}

impl ClientDataset {
    pub fn new(
        features: DMatrix<f64>,
        targets: DMatrix<f64>,
        mean_shift: DVector<f64>,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        if targets.nrows() != n {
            return Err(FedError::shape(
                "client targets",
                (n, targets.ncols()),
                targets.shape(),
            ));
        }
        if mean_shift.len() != d {
            return Err(FedError::shape("mean shift", (d, 1), (mean_shift.len(), 1)));
        }
        if n == 0 || d == 0 || targets.ncols() == 0 {
            return Err(FedError::InvalidConfig("empty client dataset".into()));
        }
        let feature_rows = features.transpose().as_slice().to_vec();
        let target_rows = targets.transpose().as_slice().to_vec();
        Ok(ClientDataset {
            features,
            targets,
            mean_shift,
            feature_rows,
            target_rows,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn mean_shift(&self) -> &DVector<f64> {
        &self.mean_shift
    }

    pub fn samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    fn check_model(&self, x: &DMatrix<f64>, context: &'static str) -> Result<()> {
        let want = (self.feature_dim(), self.output_dim());
        if x.shape() != want {
            return Err(FedError::shape(context, want, x.shape()));
        }
        Ok(())
    }

    /// `out = (1/|rows|) Σ_j a_j (a_jᵀ X − b_j) + λ X`.
    fn gradient_over<I>(
        &self,
        x: &DMatrix<f64>,
        ridge: f64,
        rows: I,
        count: usize,
        out: &mut DMatrix<f64>,
    ) where
        I: IntoIterator<Item = usize>,
    {
        let d = self.feature_dim();
        let m = self.output_dim();
        out.fill(0.0);
        let xs = x.as_slice();
        let gs = out.as_mut_slice();
        dense::accumulate_residual_rows(&self.feature_rows, &self.target_rows, xs, gs, d, m, rows);
        let scale = 1.0 / count as f64;
        for (g, xv) in gs.iter_mut().zip(xs) {
            *g = *g * scale + ridge * xv;
        }
    }

    pub(crate) fn full_gradient_into(&self, x: &DMatrix<f64>, ridge: f64, out: &mut DMatrix<f64>) {
        let n = self.samples();
        self.gradient_over(x, ridge, 0..n, n, out);
    }

    /// Minibatch gradient drawn without replacement. A full batch skips the draw
    /// and walks rows in order, so it reproduces the full gradient bit for bit.
    pub(crate) fn stochastic_gradient_into<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        ridge: f64,
        batch: usize,
        rng: &mut R,
        out: &mut DMatrix<f64>,
    ) {
        let n = self.samples();
        if batch >= n {
            self.gradient_over(x, ridge, 0..n, n, out);
        } else {
            let picked = index::sample(rng, n, batch);
            self.gradient_over(x, ridge, picked.iter(), batch, out);
        }
    }

    /// The rows [`ClientDataset::stochastic_gradient_into`] would use, drawn
    /// from the same stream in the same order.
    pub(crate) fn draw_rows<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        let n = self.samples();
        if batch >= n {
            (0..n).collect()
        } else {
            index::sample(rng, n, batch).into_vec()
        }
    }

    pub(crate) fn feature_row(&self, j: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.feature_rows[j * d..(j + 1) * d]
    }

    pub(crate) fn target_row(&self, j: usize) -> &[f64] {
        let m = self.output_dim();
        &self.target_rows[j * m..(j + 1) * m]
    }
}

/// The N client datasets plus the shared ridge weight and the global optimum.
#[derive(Clone, Debug)]
pub struct Federation {
    config: ProblemConfig,
    clients: Vec<ClientDataset>,
    optimum: DMatrix<f64>,
    truth: DMatrix<f64>,
}

impl Federation {
    /// Generates the datasets and solves for the global optimum.
    pub fn generate(config: &ProblemConfig) -> Result<Self> {
        config.validate()?;
        let (truth, clients) = generate_with_truth(config);
        let optimum = closed_form_optimum(&clients, config.ridge)?;
        Ok(Federation {
            config: config.clone(),
            clients,
            optimum,
            truth,
        })
    }

    /// Wraps existing datasets (all sharing `d` and `m`).
    pub fn from_clients(clients: Vec<ClientDataset>, ridge: f64) -> Result<Self> {
        let first = clients.first().ok_or_else(|| {
            FedError::InvalidConfig("federation needs at least one client".into())
        })?;
        let (d, m) = (first.feature_dim(), first.output_dim());
        for c in &clients {
            if (c.feature_dim(), c.output_dim()) != (d, m) {
                return Err(FedError::shape(
                    "client shapes",
                    (d, m),
                    (c.feature_dim(), c.output_dim()),
                ));
            }
        }
        let optimum = closed_form_optimum(&clients, ridge)?;
        let config = ProblemConfig {
            num_clients: clients.len(),
            feature_dim: d,
            output_dim: m,
            samples_per_client: first.samples(),
            ridge,
            noise_std: 0.0,
            het_level: 0.0,
            data_seed: 0,
        };
        Ok(Federation {
            config,
            clients,
            truth: DMatrix::zeros(d, m),
            optimum,
        })
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn ridge(&self) -> f64 {
        self.config.ridge
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn optimum(&self) -> &DMatrix<f64> {
        &self.optimum
    }

    /// The planted coefficient matrix the targets were generated from.
    pub fn truth(&self) -> &DMatrix<f64> {
        &self.truth
    }

    /// `F(X) = (1/N) Σ f_i(X)`.
    pub fn global_loss(&self, x: &DMatrix<f64>) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.clients {
            total += local_loss(c, x, self.ridge())?;
        }
        Ok(total / self.num_clients() as f64)
    }

    /// `∇F(X) = (1/N) Σ ∇f_i(X)`.
    pub fn global_gradient(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(self.feature_dim(), self.output_dim());
        for c in &self.clients {
            acc += full_local_gradient(c, x, self.ridge())?;
        }
        Ok(acc / self.num_clients() as f64)
    }

    pub fn relative_error(&self, x: &DMatrix<f64>) -> Result<f64> {
        relative_error(x, &self.optimum)
    }
}

/// Draws the federation's datasets. Everything comes from one data stream.
pub fn generate_federation(config: &ProblemConfig) -> Result<Vec<ClientDataset>> {
    config.validate()?;
    Ok(generate_with_truth(config).1)
}

fn generate_with_truth(config: &ProblemConfig) -> (DMatrix<f64>, Vec<ClientDataset>) {
    let mut rng = rng::stream(config.data_seed, Purpose::Data, 0, 0);
    let (d, m, n) = (
        config.feature_dim,
        config.output_dim,
        config.samples_per_client,
    );
    let mut gauss = move || -> f64 { rng.sample(StandardNormal) };
    let truth = DMatrix::from_fn(d, m, |_, _| gauss());
    let mut clients = Vec::with_capacity(config.num_clients);
    for _ in 0..config.num_clients {
        let shift = DVector::from_fn(d, |_, _| config.het_level * gauss());
        let mut a = DMatrix::zeros(n, d);
        for row in 0..n {
            for col in 0..d {
                a[(row, col)] = shift[col] + gauss();
            }
        }
        let mut b = &a * &truth;
        for row in 0..n {
            for col in 0..m {
                b[(row, col)] += config.noise_std * gauss();
            }
        }
        clients.push(ClientDataset::new(a, b, shift).expect("generated shapes are consistent"));
    }
    (truth, clients)
}

pub fn local_loss(ds: &ClientDataset, x: &DMatrix<f64>, ridge: f64) -> Result<f64> {
    ds.check_model(x, "local_loss")?;
    let resid = ds.features() * x - ds.targets();
    let n = ds.samples() as f64;
    Ok(dense::frob_sq(&resid) / (2.0 * n) + 0.5 * ridge * dense::frob_sq(x))
}

pub fn full_local_gradient(
    ds: &ClientDataset,
    x: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    ds.check_model(x, "full_local_gradient")?;
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    ds.full_gradient_into(x, ridge, &mut out);
    Ok(out)
}

/// Unbiased minibatch gradient, rows sampled uniformly without replacement.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    ds: &ClientDataset,
    x: &DMatrix<f64>,
    ridge: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    ds.check_model(x, "stochastic_gradient")?;
    if batch_size == 0 || batch_size > ds.samples() {
        return Err(FedError::BatchSize {
            batch: batch_size,
            samples: ds.samples(),
        });
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    ds.stochastic_gradient_into(x, ridge, batch_size, rng, &mut out);
    Ok(out)
}

/// Averaged normal equations `(H, R)` with `H = (1/N)Σ A_iᵀA_i/n_i + λI`,
/// `R = (1/N)Σ A_iᵀB_i/n_i`.
fn normal_equations(datasets: &[ClientDataset], ridge: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = datasets[0].feature_dim();
    let m = datasets[0].output_dim();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DMatrix::zeros(d, m);
    let inv_n = 1.0 / datasets.len() as f64;
    for ds in datasets {
        let w = inv_n / ds.samples() as f64;
        gram.gemm_tr(w, ds.features(), ds.features(), 1.0);
        rhs.gemm_tr(w, ds.features(), ds.targets(), 1.0);
    }
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    (gram, rhs)
}

/// Global ridge minimizer, solved by Cholesky with one refinement step.
///
/// Fails loudly when the averaged system is (numerically) singular instead of
/// falling back to a pseudo-inverse.
pub fn closed_form_optimum(datasets: &[ClientDataset], ridge: f64) -> Result<DMatrix<f64>> {
    if datasets.is_empty() {
        return Err(FedError::InvalidConfig("no client datasets".into()));
    }
    if !(ridge >= 0.0) {
        return Err(FedError::InvalidConfig(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let (gram, rhs) = normal_equations(datasets, ridge);
    let chol = gram.clone().cholesky().ok_or_else(|| {
        FedError::Singular("averaged Gram matrix is not positive definite".into())
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    // Pivot ratio squared approximates the reciprocal condition number.
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(FedError::Singular(format!(
            "averaged Gram matrix is rank deficient (pivot ratio {:e})",
            lo / hi
        )));
    }
    let mut x = chol.solve(&rhs);
    let resid = &rhs - &gram * &x;
    x += chol.solve(&resid);
    Ok(x)
}

/// `‖X − X*‖_F / ‖X*‖_F`.
pub fn relative_error(x: &DMatrix<f64>, x_star: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != x_star.shape() {
        return Err(FedError::shape("relative_error", x_star.shape(), x.shape()));
    }
    let denom = dense::frob_sq(x_star).sqrt();
    if denom == 0.0 {
        return Err(FedError::ZeroReference);
    }
    Ok(dense::frob_dist_sq(x, x_star).sqrt() / denom)
}

/// `max_i λ_max(A_iᵀA_i/n_i) + λ`, the smoothness constant of every client loss.
pub fn smoothness_constant(datasets: &[ClientDataset], ridge: f64) -> Result<f64> {
    if datasets.is_empty() {
        return Err(FedError::InvalidConfig("no client datasets".into()));
    }
    let mut best = 0.0f64;
    for ds in datasets {
        let d = ds.feature_dim();
        let mut gram = DMatrix::zeros(d, d);
        gram.gemm_tr(1.0 / ds.samples() as f64, ds.features(), ds.features(), 0.0);
        let top = gram
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        best = best.max(top);
    }
    Ok(best + ridge)
}
