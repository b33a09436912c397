//! FedSub: subspace FedAvg with subspace-only control variates.
//!
//! Our reconstruction: SCAFFOLD-style correction whose controls live in the
//! `r` coordinates of the current projector. The projector is refreshed every
//! `projector_refresh_every` rounds and the controls are carried into the new
//! basis by `c ← P_new P_oldᵀ c`, which drops whatever lay outside the old
//! subspace. The model is backfilled exactly as in SSF.

use nalgebra::DMatrix;

use super::ssf::local_steps_projected;
use super::{
    assess, check_state, client, map_clients, projector_for, sample_clients, ControlState,
    ModelState, OptimizerConfig, RoundDiagnostics, RoundOutput,
};
use crate::error::{FedError, Result};
use crate::problem::Federation;
use crate::rng;
use crate::subspace::Projector;

/// Re-expresses `r`-dimensional controls from `old`'s basis in `new`'s.
pub fn rotate_controls(controls: &ControlState, old: &Projector, new: &Projector) -> ControlState {
    let rotation = new.basis() * old.basis().transpose();
    ControlState {
        server: &rotation * &controls.server,
        clients: controls.clients.iter().map(|c| &rotation * c).collect(),
        basis_round: Some(new.round()),
    }
}

pub fn run_round_fedsub(
    model: &ModelState,
    controls: &ControlState,
    fed: &Federation,
    cfg: &OptimizerConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_state(model, controls, fed, Some(cfg.subspace_dim))?;
    let d = fed.feature_dim();
    let p = projector_for(cfg, d, round)?;
    let held = controls
        .basis_round
        .ok_or_else(|| FedError::Precondition("FedSub controls carry no basis index".into()))?;
    let rotated;
    let controls = if held != p.round() {
        let old = Projector::generate(d, cfg.subspace_dim, cfg.seed, held)?;
        rotated = rotate_controls(controls, &old, &p);
        &rotated
    } else {
        controls
    };

    let x = p.decompose(&model.x)?;
    let sampled = sample_clients(cfg.seed, round, fed.num_clients(), cfg.clients_per_round);
    let outcomes = map_clients(&sampled, |i| {
        let mut stream = rng::minibatch_stream(cfg.seed, round, i);
        local_steps_projected(
            &p,
            &x.proj,
            &x.res,
            &controls.clients[i],
            &controls.server,
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
    let mut server = DMatrix::zeros(cfg.subspace_dim, fed.output_dim());
    for (&i, o) in sampled.iter().zip(&outcomes) {
        let fresh = &o.proj_grad_sum / k;
        server += &fresh;
        clients[i] = fresh;
    }
    server /= outcomes.len() as f64;

    let endpoints: Vec<&DMatrix<f64>> = outcomes.iter().map(|o| &o.endpoint).collect();
    let x_proj = super::aggregate_ssf(&x.proj, &endpoints, cfg.global_lr)?;
    let new_x = p.backfill(&x_proj, &x.res)?;
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
            basis_round: Some(p.round()),
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
    use crate::algorithms::{run_round_ssf, Algorithm};
    use crate::dense;
    use crate::problem::ProblemConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn fed() -> Federation {
        Federation::generate(&ProblemConfig {
            num_clients: 4,
            feature_dim: 10,
            output_dim: 2,
            samples_per_client: 15,
            ridge: 0.1,
            noise_std: 0.01,
            het_level: 1.0,
            data_seed: 21,
        })
        .unwrap()
    }

    fn cfg(r: usize, refresh: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: Algorithm::FedSub,
            local_lr: 0.01,
            global_lr: 1.0,
            local_steps: 3,
            clients_per_round: 2,
            subspace_dim: r,
            rounds: 10,
            projector_refresh_every: refresh,
            batch_size: 5,
            seed: 4,
            log_every: 1,
        }
    }

    #[test]
    fn full_rank_rotation_is_lossless() {
        let old = Projector::generate(6, 6, 1, 0).unwrap();
        let new = Projector::generate(6, 6, 1, 1).unwrap();
        let mut c = ControlState::zeros(2, 6, 2);
        c.server = gaussian(6, 2, 1);
        c.clients = vec![gaussian(6, 2, 2), gaussian(6, 2, 3)];
        c.basis_round = Some(0);
        let rot = rotate_controls(&c, &old, &new);
        // Same full-space vector before and after.
        let before = old.lift(&c.server).unwrap();
        let after = new.lift(&rot.server).unwrap();
        assert!(dense::max_abs(&(before - after)) < 1e-12);
        assert_eq!(rot.basis_round, Some(1));
    }

    #[test]
    fn low_rank_rotation_loses_norm() {
        let old = Projector::generate(12, 4, 1, 0).unwrap();
        let new = Projector::generate(12, 4, 1, 1).unwrap();
        let mut c = ControlState::zeros(1, 4, 2);
        c.server = gaussian(4, 2, 5);
        c.clients = vec![gaussian(4, 2, 6)];
        let rot = rotate_controls(&c, &old, &new);
        let n0 = dense::frob_sq(&c.server);
        let n1 = dense::frob_sq(&rot.server);
        assert!(n1 < n0, "{n1} !< {n0}");
    }

    #[test]
    fn matches_ssf_between_refreshes() {
        // With a fixed projector and controls that start inside the subspace,
        // SSF's full controls are exactly the lift of FedSub's.
        let f = fed();
        let sub = cfg(4, 5);
        let mut ssf = sub.clone();
        ssf.algorithm = Algorithm::Ssf;
        let mut m1 = ModelState::zeros(10, 2);
        let mut c1 = ControlState::initial(&sub, 4, 10, 2);
        let mut m2 = m1.clone();
        let mut c2 = ControlState::initial(&ssf, 4, 10, 2);
        let p = projector_for(&sub, 10, 0).unwrap();
        for t in 0..5 {
            let a = run_round_fedsub(&m1, &c1, &f, &sub, t).unwrap();
            let b = run_round_ssf(&m2, &c2, &f, &ssf, t).unwrap();
            assert!(dense::max_abs(&(&a.model.x - &b.model.x)) < 1e-12);
            let lifted = p.lift(&a.controls.server).unwrap();
            assert!(dense::max_abs(&(lifted - &b.controls.server)) < 1e-12);
            (m1, c1, m2, c2) = (a.model, a.controls, b.model, b.controls);
        }
    }

    #[test]
    fn refresh_rotates_controls() {
        let f = fed();
        let c = cfg(3, 2);
        let mut model = ModelState::zeros(10, 2);
        let mut controls = ControlState::initial(&c, 4, 10, 2);
        for t in 0..5 {
            let out = run_round_fedsub(&model, &controls, &f, &c, t).unwrap();
            assert_eq!(out.controls.basis_round, Some(t / 2));
            assert!(!out.diverged);
            model = out.model;
            controls = out.controls;
        }
    }

    #[test]
    fn missing_basis_is_an_error() {
        let f = fed();
        let c = cfg(3, 2);
        let controls = ControlState::zeros(4, 3, 2);
        assert!(run_round_fedsub(&ModelState::zeros(10, 2), &controls, &f, &c, 0).is_err());
    }
}
