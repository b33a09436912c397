//! Full-dimensional baselines: FedAvg and SCAFFOLD (option II controls).

use nalgebra::DMatrix;
use rand::Rng;

use super::{
    assess, check_state, client, map_clients, sample_clients, ControlState, LocalOutcome,
    ModelState, OptimizerConfig, RoundDiagnostics, RoundOutput, Workspace,
};
use crate::dense;
use crate::error::Result;
use crate::problem::{ClientDataset, Federation};
use crate::rng;

/// `K` steps `y ← y − η_l (g + correction)` from `x`; `correction` is
/// `c − c_i` for SCAFFOLD and absent for FedAvg.
#[allow(clippy::too_many_arguments)]
pub fn local_steps_full<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    correction: Option<&DMatrix<f64>>,
    ds: &ClientDataset,
    local_lr: f64,
    local_steps: usize,
    ridge: f64,
    batch: usize,
    rng: &mut R,
) -> LocalOutcome {
    let (d, m) = x.shape();
    let mut ws = Workspace::new(d, m);
    ws.y.copy_from(x);
    let mut grad_sum = DMatrix::zeros(d, m);
    let mut drift = 0.0;
    let mut finite = true;
    for _ in 0..local_steps {
        drift += dense::frob_dist_sq(&ws.y, x);
        ds.stochastic_gradient_into(&ws.y, ridge, batch, rng, &mut ws.grad);
        if !dense::all_finite(&ws.grad) {
            finite = false;
            break;
        }
        grad_sum += &ws.grad;
        if let Some(c) = correction {
            ws.grad += c;
        }
        crate::dense::axpy(-local_lr, ws.grad.as_slice(), ws.y.as_mut_slice());
    }
    LocalOutcome {
        endpoint: ws.y,
        grad_sum,
        drift,
        finite,
    }
}

fn average_endpoints(x: &DMatrix<f64>, outcomes: &[LocalOutcome], global_lr: f64) -> DMatrix<f64> {
    let mut delta = DMatrix::zeros(x.nrows(), x.ncols());
    for o in outcomes {
        delta += x - &o.endpoint;
    }
    let mut out = x.clone();
    crate::dense::axpy(
        -global_lr / outcomes.len() as f64,
        delta.as_slice(),
        out.as_mut_slice(),
    );
    out
}

pub fn run_round_fedavg(
    model: &ModelState,
    fed: &Federation,
    cfg: &OptimizerConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_state(model, &ControlState::none(), fed, None)?;
    let sampled = sample_clients(cfg.seed, round, fed.num_clients(), cfg.clients_per_round);
    let outcomes = map_clients(&sampled, |i| {
        let mut stream = rng::minibatch_stream(cfg.seed, round, i);
        local_steps_full(
            &model.x,
            None,
            client(fed, i),
            cfg.local_lr,
            cfg.local_steps,
            fed.ridge(),
            cfg.batch_size,
            &mut stream,
        )
    });
    let new_x = average_endpoints(&model.x, &outcomes, cfg.global_lr);
    let finite = outcomes.iter().all(|o| o.finite);
    let (rel_err, diverged) = assess(fed, &new_x, finite)?;
    Ok(RoundOutput {
        model: ModelState {
            x: new_x,
            round: round + 1,
        },
        controls: ControlState::none(),
        rel_err,
        diverged,
        diagnostics: RoundDiagnostics {
            drift: outcomes.iter().map(|o| o.drift).collect(),
            sampled,
        },
    })
}

/// SCAFFOLD round: local direction `g − c_i + c`, `c_i ← (1/K)Σ_k g_k` for
/// participants, and `c ←` the mean of the participants' new controls.
pub fn run_round_scaffold(
    model: &ModelState,
    controls: &ControlState,
    fed: &Federation,
    cfg: &OptimizerConfig,
    round: usize,
) -> Result<RoundOutput> {
    check_state(model, controls, fed, Some(fed.feature_dim()))?;
    let sampled = sample_clients(cfg.seed, round, fed.num_clients(), cfg.clients_per_round);
    let outcomes = map_clients(&sampled, |i| {
        let correction = &controls.server - &controls.clients[i];
        let mut stream = rng::minibatch_stream(cfg.seed, round, i);
        local_steps_full(
            &model.x,
            Some(&correction),
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
    let mut server = DMatrix::zeros(controls.server.nrows(), controls.server.ncols());
    for (&i, o) in sampled.iter().zip(&outcomes) {
        clients[i] = &o.grad_sum / k;
        server += &o.grad_sum;
    }
    server /= k * outcomes.len() as f64;

    let new_x = average_endpoints(&model.x, &outcomes, cfg.global_lr);
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
