//! Shared random subspaces.
//!
//! A [`Projector`] holds `P ∈ R^{r×d}` with orthonormal rows. Models and
//! controls are `d×m` matrices; `P` acts on the row index, so each output
//! column is treated as its own `d`-vector.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense;
use crate::error::{FedError, Result};
use crate::rng::{self, Purpose};

/// Max deviation tolerated by [`backfill_checked`].
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Projector {
    basis: DMatrix<f64>,
    // basisᵀ, so each row of the basis is a contiguous slice
    rows: DMatrix<f64>,
    seed: u64,
    round: usize,
}

/// `V = Pᵀ proj + res` with `P res = 0`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub proj: DMatrix<f64>,
    pub res: DMatrix<f64>,
}

impl Projector {
    /// Samples an `r×d` Gaussian matrix from the `(seed, round)` stream and
    /// orthonormalizes its rows by QR, with the sign of each column of `Q`
    /// chosen so the triangular factor has a nonnegative diagonal.
    pub fn generate(d: usize, r: usize, seed: u64, round: usize) -> Result<Self> {
        if r == 0 || r > d {
            return Err(FedError::SubspaceDim { r, d });
        }
        let mut rng = rng::stream(seed, Purpose::Projector, round as u64, 0);
        let gaussian = DMatrix::from_fn(r, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.transpose().qr();
        let mut q = qr.q();
        let diag = qr.r().diagonal();
        for (j, rjj) in diag.iter().enumerate() {
            if *rjj < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(Projector::build(q.transpose(), seed, round))
    }

    /// Wraps a basis whose rows are already orthonormal.
    pub fn from_basis(basis: DMatrix<f64>, seed: u64, round: usize) -> Result<Self> {
        let (r, d) = basis.shape();
        if r == 0 || r > d {
            return Err(FedError::SubspaceDim { r, d });
        }
        let p = Projector::build(basis, seed, round);
        let dev = p.orthonormality_error();
        if dev > 1e-10 {
            return Err(FedError::InvalidConfig(format!(
                "basis rows are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(p)
    }

    /// Identity projector (`r = d`).
    pub fn identity(d: usize) -> Self {
        Projector::build(DMatrix::identity(d, d), 0, 0)
    }

    fn build(basis: DMatrix<f64>, seed: u64, round: usize) -> Self {
        let rows = basis.transpose();
        Projector {
            basis,
            rows,
            seed,
            round,
        }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `r / d`
    pub fn ratio(&self) -> f64 {
        self.rank() as f64 / self.ambient_dim() as f64
    }

    /// `‖P Pᵀ − I_r‖_max`
    pub fn orthonormality_error(&self) -> f64 {
        let mut gram = &self.basis * self.basis.transpose();
        for i in 0..self.rank() {
            gram[(i, i)] -= 1.0;
        }
        dense::max_abs(&gram)
    }

    /// `Pᵀ P`, the orthogonal projector onto the row space.
    pub fn ambient_projector(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.basis
    }

    fn check_ambient(&self, v: &DMatrix<f64>, context: &'static str) -> Result<()> {
        if v.nrows() != self.ambient_dim() {
            return Err(FedError::shape(
                context,
                (self.ambient_dim(), v.ncols()),
                v.shape(),
            ));
        }
        Ok(())
    }

    fn check_sub(&self, w: &DMatrix<f64>, context: &'static str) -> Result<()> {
        if w.nrows() != self.rank() {
            return Err(FedError::shape(
                context,
                (self.rank(), w.ncols()),
                w.shape(),
            ));
        }
        Ok(())
    }

    /// `P V`
    pub fn project(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_ambient(v, "project")?;
        let mut out = DMatrix::zeros(self.rank(), v.ncols());
        self.project_into(v, &mut out);
        Ok(out)
    }

    pub fn decompose(&self, v: &DMatrix<f64>) -> Result<Decomposition> {
        self.check_ambient(v, "decompose")?;
        let mut proj = DMatrix::zeros(self.rank(), v.ncols());
        self.project_into(v, &mut proj);
        let mut res = v.clone();
        self.lift_add_into(&(-&proj), v, &mut res);
        Ok(Decomposition { proj, res })
    }

    /// `Pᵀ W`
    pub fn lift(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_sub(w, "lift")?;
        let zero = DMatrix::zeros(self.ambient_dim(), w.ncols());
        let mut out = zero.clone();
        self.lift_add_into(w, &zero, &mut out);
        Ok(out)
    }

    /// `Pᵀ new_proj + old_res`. No orthogonality check; see [`Projector::backfill_checked`].
    pub fn backfill(
        &self,
        new_proj: &DMatrix<f64>,
        old_res: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_sub(new_proj, "backfill")?;
        self.check_ambient(old_res, "backfill")?;
        if new_proj.ncols() != old_res.ncols() {
            return Err(FedError::shape(
                "backfill",
                new_proj.shape(),
                old_res.shape(),
            ));
        }
        let mut out = old_res.clone();
        self.lift_add_into(new_proj, old_res, &mut out);
        Ok(out)
    }

    /// [`Projector::backfill`] after verifying `‖P old_res‖_max ≤ 1e-8 · max(1, ‖old_res‖_max)`.
    pub fn backfill_checked(
        &self,
        new_proj: &DMatrix<f64>,
        old_res: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_ambient(old_res, "backfill")?;
        let leak = dense::max_abs(&(&self.basis * old_res));
        if leak > ORTHOGONALITY_TOL * dense::max_abs(old_res).max(1.0) {
            return Err(FedError::NotOrthogonal(leak));
        }
        self.backfill(new_proj, old_res)
    }

    // Allocation-free kernels for the round engines.

    /// The basis rows back to back, row `i` at `[i*d, (i+1)*d)`.
    pub(crate) fn row_major(&self) -> &[f64] {
        self.rows.as_slice()
    }

    pub(crate) fn project_into(&self, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let (r, d) = self.basis.shape();
        let m = v.ncols();
        let rows = self.rows.as_slice();
        let (vs, os) = (v.as_slice(), out.as_mut_slice());
        let mut tmp = vec![0.0; m];
        for i in 0..r {
            dense::row_dots(&rows[i * d..(i + 1) * d], vs, d, m, &mut tmp);
            for (c, t) in tmp.iter().enumerate() {
                os[c * r + i] = *t;
            }
        }
    }

    /// `out = Pᵀ w + base`
    pub(crate) fn lift_add_into(
        &self,
        w: &DMatrix<f64>,
        base: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
    ) {
        out.copy_from(base);
        let (r, d) = self.basis.shape();
        let m = w.ncols();
        let rows = self.rows.as_slice();
        let (ws, os) = (w.as_slice(), out.as_mut_slice());
        let mut coef = vec![0.0; m];
        for i in 0..r {
            for (c, k) in coef.iter_mut().enumerate() {
                *k = ws[c * r + i];
            }
            dense::row_axpys(&rows[i * d..(i + 1) * d], &coef, os, d, m);
        }
    }
}

pub fn generate_projector(d: usize, r: usize, seed: u64, round: usize) -> Result<Projector> {
    Projector::generate(d, r, seed, round)
}

pub fn decompose(p: &Projector, v: &DMatrix<f64>) -> Result<Decomposition> {
    p.decompose(v)
}

pub fn lift(p: &Projector, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    p.lift(w)
}

pub fn backfill(
    p: &Projector,
    new_proj: &DMatrix<f64>,
    old_res: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    p.backfill(new_proj, old_res)
}
