//! Subspace SCAFFOLD.
//!
//! Local iterates live in the `r`-dimensional coordinates of the round's
//! projector. Gradients are taken at the reconstructed full model
//! `Pᵀ y_proj + x_res` and projected back; controls stay full-dimensional and
//! only their projected component is refreshed each round.

use nalgebra::DMatrix;
use rand::Rng;

use super::{
    assess, check_state, client, map_clients, projector_for, sample_clients, ControlState,
    LocalOutcome, ModelState, OptimizerConfig, RoundDiagnostics, RoundOutput, Workspace,
};
use crate::dense;
use crate::error::{FedError, Result};
use crate::problem::{ClientDataset, Federation};
use crate::rng;
use crate::subspace::Projector;

/// `K` corrected steps `y ← y − η_l (P g − c_{i,proj} + c_proj)` starting from
/// `x_proj`, with every gradient taken at `Pᵀ y + x_res`.
#[allow(clippy::too_many_arguments)]
pub fn local_steps_ssf<R: Rng + ?Sized>(
    p: &Projector,
    x_proj: &DMatrix<f64>,
    x_res: &DMatrix<f64>,
    c_i_proj: &DMatrix<f64>,
    c_proj: &DMatrix<f64>,
    ds: &ClientDataset,
    local_lr: f64,
    local_steps: usize,
    ridge: f64,
    batch: usize,
    rng: &mut R,
) -> LocalOutcome {
    let (d, m) = x_res.shape();
    let correction = c_proj - c_i_proj;
    let mut ws = Workspace::new(d, m);
    let mut y_proj = x_proj.clone();
    let mut pg = DMatrix::zeros(p.rank(), m);
    let mut grad_sum = DMatrix::zeros(d, m);
    let mut drift = 0.0;
    let mut finite = true;
    for _ in 0..local_steps {
        drift += dense::frob_dist_sq(&y_proj, x_proj);
        p.lift_add_into(&y_proj, x_res, &mut ws.y);
        ds.stochastic_gradient_into(&ws.y, ridge, batch, rng, &mut ws.grad);
        if !dense::all_finite(&ws.grad) {
            finite = false;
            break;
        }
        grad_sum += &ws.grad;
        p.project_into(&ws.grad, &mut pg);
        pg += &correction;
        crate::dense::axpy(-local_lr, pg.as_slice(), y_proj.as_mut_slice());
    }
    LocalOutcome {
        endpoint: y_proj,
        grad_sum,
        drift,
        finite,
    }
}

/// Output of [`local_steps_projected`]; `proj_grad_sum` is `P Σ_k g^k`.
pub(crate) struct ProjectedOutcome {
    pub endpoint: DMatrix<f64>,
    pub proj_grad_sum: DMatrix<f64>,
    pub drift: f64,
    pub finite: bool,
}

/// Same iteration as [`local_steps_ssf`] without ever forming a `d×m`
/// gradient. With `ã_j = P a_j` and `o_j = x_resᵀ a_j − b_j`, the projected
/// minibatch gradient is `(1/|B|) Σ_j ã_j (ã_jᵀ y + o_j) + λ y`, because
/// `P x_res = 0`. Rows are transformed the first time they are drawn.
#[allow(clippy::too_many_arguments)]
pub(crate) fn local_steps_projected<R: Rng + ?Sized>(
    p: &Projector,
    x_proj: &DMatrix<f64>,
    x_res: &DMatrix<f64>,
    c_i_proj: &DMatrix<f64>,
    c_proj: &DMatrix<f64>,
    ds: &ClientDataset,
    local_lr: f64,
    local_steps: usize,
    ridge: f64,
    batch: usize,
    rng: &mut R,
) -> ProjectedOutcome {
    let (d, m) = x_res.shape();
    let r = p.rank();
    let n = ds.samples();
    let basis = p.row_major();
    let mut at = vec![0.0; n * r];
    let mut off = vec![0.0; n * m];
    let mut ready = vec![false; n];

    let correction = c_proj - c_i_proj;
    let mut y = x_proj.clone();
    let mut pg = DMatrix::zeros(r, m);
    let mut sum = DMatrix::zeros(r, m);
    let mut resid = vec![0.0; m];
    let mut drift = 0.0;
    let mut finite = true;
    for _ in 0..local_steps {
        drift += dense::frob_dist_sq(&y, x_proj);
        let rows = ds.draw_rows(batch, rng);
        pg.fill(0.0);
        for &j in &rows {
            if !ready[j] {
                let a = ds.feature_row(j);
                dense::row_dots(a, basis, d, r, &mut at[j * r..(j + 1) * r]);
                dense::row_dots(a, x_res.as_slice(), d, m, &mut off[j * m..(j + 1) * m]);
                for (o, b) in off[j * m..(j + 1) * m].iter_mut().zip(ds.target_row(j)) {
                    *o -= b;
                }
                ready[j] = true;
            }
            let aj = &at[j * r..(j + 1) * r];
            dense::row_dots(aj, y.as_slice(), r, m, &mut resid);
            for (v, o) in resid.iter_mut().zip(&off[j * m..(j + 1) * m]) {
                *v += o;
            }
            dense::row_axpys(aj, &resid, pg.as_mut_slice(), r, m);
        }
        let scale = 1.0 / rows.len() as f64;
        for (g, yv) in pg.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *g = *g * scale + ridge * yv;
        }
        if !dense::all_finite(&pg) {
            finite = false;
            break;
        }
        sum += &pg;
        pg += &correction;
        dense::axpy(-local_lr, pg.as_slice(), y.as_mut_slice());
    }
    ProjectedOutcome {
        endpoint: y,
        proj_grad_sum: sum,
        drift,
        finite,
    }
}

/// `c_i ← (I − PᵀP) c_i + PᵀP (Σ_k g_k)/K`
pub fn update_client_control_ssf(
    c_i: &DMatrix<f64>,
    p: &Projector,
    grad_sum: &DMatrix<f64>,
    local_steps: usize,
) -> Result<DMatrix<f64>> {
    let keep = p.decompose(c_i)?.res;
    let fresh = p.project(grad_sum)? / local_steps as f64;
    p.backfill(&fresh, &keep)
}

/// `c ← (1/|S|) Σ_i PᵀP (Σ_k g_{i,k})/K + (I − PᵀP) c`, averaging over the
/// clients whose gradient sums are given (in the order given).
pub fn update_server_control_ssf(
    c: &DMatrix<f64>,
    p: &Projector,
    grad_sums: &[&DMatrix<f64>],
    local_steps: usize,
) -> Result<DMatrix<f64>> {
    if grad_sums.is_empty() {
        return Err(FedError::EmptyAggregation);
    }
    let keep = p.decompose(c)?.res;
    let mut mean = DMatrix::zeros(p.rank(), c.ncols());
    for g in grad_sums {
        mean += p.project(g)?;
    }
    mean /= (grad_sums.len() * local_steps) as f64;
    p.backfill(&mean, &keep)
}

/// `x_proj − (η_g/|S|) Σ_i (x_proj − y_i)`, summed in the order given.
pub fn aggregate_ssf(
    x_proj: &DMatrix<f64>,
    endpoints: &[&DMatrix<f64>],
    global_lr: f64,
) -> Result<DMatrix<f64>> {
    if endpoints.is_empty() {
        return Err(FedError::EmptyAggregation);
    }
    let mut delta = DMatrix::zeros(x_proj.nrows(), x_proj.ncols());
    for y in endpoints {
        if y.shape() != x_proj.shape() {
            return Err(FedError::shape(
                "aggregate endpoint",
                x_proj.shape(),
                y.shape(),
            ));
        }
        delta += x_proj - *y;
    }
    let mut out = x_proj.clone();
    crate::dense::axpy(
        -global_lr / endpoints.len() as f64,
        delta.as_slice(),
        out.as_mut_slice(),
    );
    Ok(out)
}

/// One SSF round with the projector generated for `round`.
pub fn run_round_ssf(
    model: &ModelState,
    controls: &ControlState,
    fed: &Federation,
    cfg: &OptimizerConfig,
    round: usize,
) -> Result<RoundOutput> {
    let p = projector_for(cfg, fed.feature_dim(), round)?;
    run_round_ssf_with(model, controls, fed, cfg, round, &p)
}

/// [`run_round_ssf`] with an explicit projector.
pub(crate) fn run_round_ssf_with(
    model: &ModelState,
    controls: &ControlState,
    fed: &Federation,
    cfg: &OptimizerConfig,
    round: usize,
    p: &Projector,
) -> Result<RoundOutput> {
    check_state(model, controls, fed, Some(fed.feature_dim()))?;
    let x = p.decompose(&model.x)?;
    let c = p.decompose(&controls.server)?;
    let sampled = sample_clients(cfg.seed, round, fed.num_clients(), cfg.clients_per_round);

    let outcomes = map_clients(&sampled, |i| {
        let c_i_proj = p.basis() * &controls.clients[i];
        let mut stream = rng::minibatch_stream(cfg.seed, round, i);
        local_steps_projected(
            p,
            &x.proj,
            &x.res,
            &c_i_proj,
            &c.proj,
            client(fed, i),
            cfg.local_lr,
            cfg.local_steps,
            fed.ridge(),
            cfg.batch_size,
            &mut stream,
        )
    });

    let k = cfg.local_steps as f64;
    let mut clients = controls.clients.clone();
    let mut mean = DMatrix::zeros(p.rank(), fed.output_dim());
    for (&i, o) in sampled.iter().zip(&outcomes) {
        let fresh = &o.proj_grad_sum / k;
        clients[i] = p.backfill(&fresh, &p.decompose(&controls.clients[i])?.res)?;
        mean += fresh;
    }
    mean /= outcomes.len() as f64;
    let endpoints: Vec<&DMatrix<f64>> = outcomes.iter().map(|o| &o.endpoint).collect();
    let x_proj = aggregate_ssf(&x.proj, &endpoints, cfg.global_lr)?;
    let new_x = p.backfill(&x_proj, &x.res)?;
    let server = p.backfill(&mean, &c.res)?;

    let finite = outcomes.iter().all(|o| o.finite);
    let (rel_err, diverged) = assess(fed, &new_x, finite)?;
    Ok(RoundOutput {
        model: ModelState {
            x: new_x,
            round: round + 1,
        },
        controls: ControlState {
            server,
            clients,
            basis_round: None,
        },
        rel_err,
        diverged,
        diagnostics: RoundDiagnostics {
            drift: outcomes.iter().map(|o| o.drift).collect(),
            sampled,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{run_round_scaffold, Algorithm};
    use crate::problem::{full_local_gradient, ProblemConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn fed(d: usize, m: usize, n: usize, het: f64) -> Federation {
        Federation::generate(&ProblemConfig {
            num_clients: n,
            feature_dim: d,
            output_dim: m,
            samples_per_client: 12,
            ridge: 0.1,
            noise_std: 0.01,
            het_level: het,
            data_seed: 3,
        })
        .unwrap()
    }

    fn cfg(algorithm: Algorithm, r: usize, n: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            local_lr: 0.02,
            global_lr: 1.0,
            local_steps: 3,
            clients_per_round: n,
            subspace_dim: r,
            rounds: 10,
            projector_refresh_every: 1,
            batch_size: 4,
            seed: 17,
            log_every: 1,
        }
    }

    #[test]
    fn single_plain_step_with_zero_controls() {
        let f = fed(6, 2, 3, 0.5);
        let p = Projector::generate(6, 3, 1, 0).unwrap();
        let x = gaussian(6, 2, 2);
        let dec = p.decompose(&x).unwrap();
        let zero = DMatrix::zeros(3, 2);
        let ds = &f.clients()[0];
        let out = local_steps_ssf(
            &p,
            &dec.proj,
            &dec.res,
            &zero,
            &zero,
            ds,
            0.1,
            1,
            0.1,
            ds.samples(),
            &mut rng::minibatch_stream(0, 0, 0),
        );
        let g = full_local_gradient(ds, &x, 0.1).unwrap();
        let expected = &dec.proj - p.project(&g).unwrap() * 0.1;
        assert!(dense::max_abs(&(out.endpoint - expected)) < 1e-12);
        assert!(dense::max_abs(&(out.grad_sum - g)) < 1e-12);
        assert_eq!(out.drift, 0.0);
    }

    #[test]
    fn projected_path_matches_reference() {
        let f = fed(9, 3, 2, 1.0);
        for (r, batch) in [(2, 4), (5, 12), (9, 7)] {
            let p = Projector::generate(9, r, 4, r).unwrap();
            let dec = p.decompose(&gaussian(9, 3, 8)).unwrap();
            let c_i = gaussian(r, 3, 9);
            let c = gaussian(r, 3, 10);
            let ds = &f.clients()[1];
            let slow = local_steps_ssf(
                &p,
                &dec.proj,
                &dec.res,
                &c_i,
                &c,
                ds,
                0.05,
                4,
                0.1,
                batch,
                &mut rng::minibatch_stream(2, 3, 1),
            );
            let fast = local_steps_projected(
                &p,
                &dec.proj,
                &dec.res,
                &c_i,
                &c,
                ds,
                0.05,
                4,
                0.1,
                batch,
                &mut rng::minibatch_stream(2, 3, 1),
            );
            let scale = dense::max_abs(&slow.endpoint);
            assert!(
                dense::max_abs(&(&slow.endpoint - &fast.endpoint)) < 1e-12 * scale,
                "r={r}"
            );
            let pg = p.project(&slow.grad_sum).unwrap();
            assert!(
                dense::max_abs(&(pg - &fast.proj_grad_sum))
                    < 1e-11 * dense::max_abs(&fast.proj_grad_sum)
            );
            assert!((slow.drift - fast.drift).abs() <= 1e-12 * slow.drift.max(1.0));
        }
    }

    #[test]
    fn equal_controls_cancel() {
        let f = fed(6, 2, 3, 0.5);
        let p = Projector::generate(6, 3, 1, 0).unwrap();
        let dec = p.decompose(&gaussian(6, 2, 2)).unwrap();
        let c = gaussian(3, 2, 5);
        let zero = DMatrix::zeros(3, 2);
        let ds = &f.clients()[1];
        let a = local_steps_ssf(
            &p,
            &dec.proj,
            &dec.res,
            &c,
            &c,
            ds,
            0.05,
            4,
            0.1,
            5,
            &mut rng::minibatch_stream(0, 1, 1),
        );
        let b = local_steps_ssf(
            &p,
            &dec.proj,
            &dec.res,
            &zero,
            &zero,
            ds,
            0.05,
            4,
            0.1,
            5,
            &mut rng::minibatch_stream(0, 1, 1),
        );
        assert_eq!(a.endpoint.as_slice(), b.endpoint.as_slice());
    }

    #[test]
    fn full_rank_local_steps_match_full_space_steps() {
        // d=3, m=2: SSF local steps with orthogonal P equal full-space
        // SCAFFOLD steps expressed in P coordinates.
        let f = fed(3, 2, 2, 0.3);
        let p = Projector::generate(3, 3, 4, 0).unwrap();
        let x = gaussian(3, 2, 1);
        let c_i = gaussian(3, 2, 2);
        let c = gaussian(3, 2, 3);
        let ds = &f.clients()[0];
        let dec = p.decompose(&x).unwrap();
        let ssf = local_steps_ssf(
            &p,
            &dec.proj,
            &dec.res,
            &p.project(&c_i).unwrap(),
            &p.project(&c).unwrap(),
            ds,
            0.03,
            4,
            0.1,
            5,
            &mut rng::minibatch_stream(9, 0, 0),
        );
        let corr = &c - &c_i;
        let full = crate::algorithms::local_steps_full(
            &x,
            Some(&corr),
            ds,
            0.03,
            4,
            0.1,
            5,
            &mut rng::minibatch_stream(9, 0, 0),
        );
        let projected = p.project(&full.endpoint).unwrap();
        assert!(dense::max_abs(&(ssf.endpoint - projected)) < 1e-12);
        assert!(dense::max_abs(&(ssf.grad_sum - full.grad_sum)) < 1e-12);
    }

    #[test]
    fn client_control_full_rank_is_mean_gradient() {
        let p = Projector::generate(5, 5, 2, 0).unwrap();
        let c_i = gaussian(5, 2, 1);
        let gs = gaussian(5, 2, 2);
        let out = update_client_control_ssf(&c_i, &p, &gs, 4).unwrap();
        assert!(dense::max_abs(&(out - &gs / 4.0)) < 1e-12);
    }

    #[test]
    fn client_control_ignores_gradient_outside_subspace() {
        let p = Projector::generate(7, 2, 2, 0).unwrap();
        let c_i = gaussian(7, 2, 1);
        let gs = p.decompose(&gaussian(7, 2, 2)).unwrap().res;
        let out = update_client_control_ssf(&c_i, &p, &gs, 3).unwrap();
        assert!(dense::max_abs(&p.project(&out).unwrap()) < 1e-12);
    }

    #[test]
    fn client_control_keeps_residual_and_refreshes_projection() {
        let p = Projector::generate(9, 4, 2, 0).unwrap();
        let c_i = gaussian(9, 3, 1);
        let gs = gaussian(9, 3, 2);
        let out = update_client_control_ssf(&c_i, &p, &gs, 5).unwrap();
        let before = p.decompose(&c_i).unwrap();
        let after = p.decompose(&out).unwrap();
        assert!(dense::max_abs(&(after.res - before.res)) < 1e-12);
        let want = p.project(&gs).unwrap() / 5.0;
        assert!(dense::max_abs(&(after.proj - want)) < 1e-12);
    }

    #[test]
    fn server_control_is_mean_of_client_projections_plus_residual() {
        let p = Projector::generate(8, 3, 6, 0).unwrap();
        let c = gaussian(8, 2, 1);
        let gs: Vec<DMatrix<f64>> = (0..4).map(|i| gaussian(8, 2, 10 + i)).collect();
        let refs: Vec<&DMatrix<f64>> = gs.iter().collect();
        let out = update_server_control_ssf(&c, &p, &refs, 5).unwrap();
        let mut want = p.decompose(&c).unwrap().res;
        for g in &gs {
            let zero = DMatrix::zeros(8, 2);
            let ci = update_client_control_ssf(&zero, &p, g, 5).unwrap();
            want += ci / 4.0;
        }
        assert!(dense::max_abs(&(out - want)) < 1e-12);
    }

    #[test]
    fn server_control_zero_gradients_keeps_residual() {
        let p = Projector::generate(8, 3, 6, 0).unwrap();
        let c = gaussian(8, 2, 1);
        let zero = DMatrix::zeros(8, 2);
        let out = update_server_control_ssf(&c, &p, &[&zero, &zero], 5).unwrap();
        let res = p.decompose(&c).unwrap().res;
        assert!(dense::max_abs(&(out - res)) < 1e-15);
    }

    #[test]
    fn server_control_full_rank_is_mean_gradient() {
        let p = Projector::generate(4, 4, 6, 0).unwrap();
        let c = gaussian(4, 2, 1);
        let a = gaussian(4, 2, 2);
        let b = gaussian(4, 2, 3);
        let out = update_server_control_ssf(&c, &p, &[&a, &b], 2).unwrap();
        assert!(dense::max_abs(&(out - (a + b) / 4.0)) < 1e-12);
        assert!(matches!(
            update_server_control_ssf(&c, &p, &[], 2),
            Err(FedError::EmptyAggregation)
        ));
    }

    #[test]
    fn aggregation_edge_cases() {
        let x = gaussian(3, 2, 1);
        assert_eq!(
            aggregate_ssf(&x, &[&x, &x], 0.7).unwrap().as_slice(),
            x.as_slice()
        );
        let y = gaussian(3, 2, 2);
        let out = aggregate_ssf(&x, &[&y], 1.0).unwrap();
        assert!(dense::max_abs(&(out - &y)) < 1e-15);
        assert!(matches!(
            aggregate_ssf(&x, &[], 1.0),
            Err(FedError::EmptyAggregation)
        ));
    }

    #[test]
    fn aggregation_matches_effective_step_form() {
        // x_proj⁺ = x_proj − η̃ v with v = (1/(S K)) Σ_i Σ_k (P g − c_i,proj + c_proj).
        let f = fed(8, 2, 3, 1.0);
        let p = Projector::generate(8, 3, 1, 0).unwrap();
        let x = p.decompose(&gaussian(8, 2, 1)).unwrap();
        let c_proj = gaussian(3, 2, 2);
        let c_i: Vec<DMatrix<f64>> = (0..3).map(|i| gaussian(3, 2, 5 + i)).collect();
        let (lr, k, eta_g) = (0.02, 4, 0.7);
        let mut outs = Vec::new();
        let mut v = DMatrix::zeros(3, 2);
        for (i, ds) in f.clients().iter().enumerate() {
            let o = local_steps_ssf(
                &p,
                &x.proj,
                &x.res,
                &c_i[i],
                &c_proj,
                ds,
                lr,
                k,
                0.1,
                6,
                &mut rng::minibatch_stream(1, 0, i),
            );
            v += p.project(&o.grad_sum).unwrap() + (&c_proj - &c_i[i]) * k as f64;
            outs.push(o);
        }
        v /= (3 * k) as f64;
        let ends: Vec<&DMatrix<f64>> = outs.iter().map(|o| &o.endpoint).collect();
        let agg = aggregate_ssf(&x.proj, &ends, eta_g).unwrap();
        let eta_tilde = eta_g * lr * k as f64;
        let want = &x.proj - v * eta_tilde;
        assert!(dense::max_abs(&(agg - want)) < 1e-12);
    }

    #[test]
    fn round_preserves_residuals() {
        let f = fed(10, 3, 5, 1.0);
        let c = cfg(Algorithm::Ssf, 3, 3);
        let mut model = ModelState::zeros(10, 3);
        model.x = gaussian(10, 3, 4);
        let mut controls = ControlState::zeros(5, 10, 3);
        controls.server = gaussian(10, 3, 5);
        for (i, ci) in controls.clients.iter_mut().enumerate() {
            *ci = gaussian(10, 3, 6 + i as u64);
        }
        let out = run_round_ssf(&model, &controls, &f, &c, 0).unwrap();
        let p = projector_for(&c, 10, 0).unwrap();
        let dx = p.decompose(&(&out.model.x - &model.x)).unwrap().res;
        let dc = p
            .decompose(&(&out.controls.server - &controls.server))
            .unwrap()
            .res;
        assert!(dense::max_abs(&dx) < 1e-12);
        assert!(dense::max_abs(&dc) < 1e-12);
        // Non-sampled clients untouched.
        for i in 0..5 {
            if !out.diagnostics.sampled.contains(&i) {
                assert_eq!(
                    out.controls.clients[i].as_slice(),
                    controls.clients[i].as_slice()
                );
            }
        }
    }

    #[test]
    fn full_rank_round_matches_scaffold() {
        let f = fed(6, 2, 4, 0.8);
        let c = cfg(Algorithm::Ssf, 6, 2);
        let mut sc = c.clone();
        sc.algorithm = Algorithm::Scaffold;
        let mut m1 = ModelState::zeros(6, 2);
        let mut c1 = ControlState::zeros(4, 6, 2);
        let mut m2 = m1.clone();
        let mut c2 = c1.clone();
        for t in 0..20 {
            let a = run_round_ssf(&m1, &c1, &f, &c, t).unwrap();
            let b = run_round_scaffold(&m2, &c2, &f, &sc, t).unwrap();
            let scale = dense::frob_sq(&b.model.x).sqrt();
            assert!(dense::frob_dist_sq(&a.model.x, &b.model.x).sqrt() <= 1e-10 * scale);
            (m1, c1, m2, c2) = (a.model, a.controls, b.model, b.controls);
        }
    }

    #[test]
    fn deterministic_full_batch_descent() {
        // No heterogeneity, no noise, K=1, full batch and participation: the
        // controls cancel and each round is a gradient step inside the
        // subspace. The objective always drops; the relative error drops
        // monotonically once the subspace is the whole space.
        let f = Federation::generate(&ProblemConfig {
            num_clients: 4,
            feature_dim: 8,
            output_dim: 2,
            samples_per_client: 30,
            ridge: 0.1,
            noise_std: 0.0,
            het_level: 0.0,
            data_seed: 2,
        })
        .unwrap();
        let l = crate::problem::smoothness_constant(f.clients(), 0.1).unwrap();
        for r in [4, 8] {
            let mut c = cfg(Algorithm::Ssf, r, 4);
            c.local_steps = 1;
            c.batch_size = 30;
            c.local_lr = 0.3 / l;
            let mut model = ModelState::zeros(8, 2);
            let mut controls = ControlState::zeros(4, 8, 2);
            let mut prev_err = f.relative_error(&model.x).unwrap();
            let mut prev_loss = f.global_loss(&model.x).unwrap();
            for t in 0..25 {
                let out = run_round_ssf(&model, &controls, &f, &c, t).unwrap();
                let loss = f.global_loss(&out.model.x).unwrap();
                assert!(
                    loss < prev_loss,
                    "r={r} round {t}: loss {loss} !< {prev_loss}"
                );
                if r == 8 {
                    assert!(
                        out.rel_err < prev_err,
                        "round {t}: {} !< {prev_err}",
                        out.rel_err
                    );
                }
                prev_err = out.rel_err;
                prev_loss = loss;
                model = out.model;
                controls = out.controls;
            }
        }
    }
}
