//! Forward pass and backpropagation through time.
//!
//! At every position the cell computes
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)      f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)      u = tanh(W_u x + U_u h + b_u)
//! c' = i ⊙ u + f ⊙ c              h' = o ⊙ tanh(c')
//! ```
//!
//! starting from `h = c = 0`, and the final state feeds the regression head
//! `s = b2 + W2 · tanh(b1 + W1 h_n)`.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};

use super::params::{Gate, LstmParams, GATES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(d_h: usize) -> Self {
        LstmState {
            h: vec![0.0; d_h],
            c: vec![0.0; d_h],
        }
    }
}

/// Activated gate values of one step, in [`Gate`] order.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub token: u32,
    pub prev: LstmState,
    pub gates: [Vec<f64>; 4],
    pub tanh_c: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_token(params: &LstmParams, token: u32) -> Result<()> {
    if token as usize >= params.dims.vocab {
        return Err(Error::Vocabulary {
            id: token as usize,
            size: params.dims.vocab,
        });
    }
    Ok(())
}

/// One step together with its activated gate values.
pub fn step_traced(params: &LstmParams, token: u32, state: &LstmState) -> Result<(LstmState, StepTrace)> {
    check_token(params, token)?;
    let x = params.embedding.row(token as usize);
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut z = params.b[g].clone();
        params.w[g].mul_vec_add(x, &mut z);
        params.u[g].mul_vec_add(&state.h, &mut z);
        if g == Gate::Update as usize {
            z.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        z
    });
    let [i, f, o, u] = &gates;
    let c: Vec<f64> = (0..state.c.len()).map(|k| i[k] * u[k] + f[k] * state.c[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let next = LstmState { h, c };
    Ok((
        next,
        StepTrace {
            token,
            prev: state.clone(),
            gates,
            tanh_c,
        },
    ))
}

pub fn lstm_step(params: &LstmParams, token: u32, state: &LstmState) -> Result<LstmState> {
    step_traced(params, token, state).map(|(s, _)| s)
}

/// Every intermediate state, `states[t]` being the state after `t + 1` tokens.
pub fn encode_states(params: &LstmParams, ids: &[u32]) -> Result<Vec<LstmState>> {
    if ids.is_empty() {
        return Err(Error::Input("cannot encode an empty sequence".into()));
    }
    let mut states = Vec::with_capacity(ids.len());
    let mut state = LstmState::zeros(params.dims.d_h);
    for &id in ids {
        state = lstm_step(params, id, &state)?;
        states.push(state.clone());
    }
    Ok(states)
}

/// Final hidden state `h_n`, the message representation.
pub fn encode(params: &LstmParams, ids: &[u32]) -> Result<Vec<f64>> {
    Ok(encode_states(params, ids)?.pop().expect("non-empty").h)
}

pub enum ForwardMode<'a> {
    Eval,
    /// Inverted dropout on the feed-forward hidden layer.
    Train {
        dropout_rate: f64,
        rng: &'a mut dyn RngCore,
    },
}

struct Trace {
    steps: Vec<StepTrace>,
    h_n: Vec<f64>,
    hidden: Vec<f64>,
    mask: Option<Vec<f64>>,
    score: f64,
}

fn forward_traced(params: &LstmParams, ids: &[u32], mode: &mut ForwardMode<'_>) -> Result<Trace> {
    if ids.is_empty() {
        return Err(Error::Input("cannot score an empty sequence".into()));
    }
    let mut steps = Vec::with_capacity(ids.len());
    let mut state = LstmState::zeros(params.dims.d_h);
    for &id in ids {
        let (next, trace) = step_traced(params, id, &state)?;
        steps.push(trace);
        state = next;
    }
    let mut hidden = params.b1.clone();
    params.w1.mul_vec_add(&state.h, &mut hidden);
    hidden.iter_mut().for_each(|v| *v = v.tanh());
    let mask = match mode {
        ForwardMode::Train { dropout_rate, rng } if *dropout_rate > 0.0 => {
            let keep = 1.0 / (1.0 - *dropout_rate);
            Some(
                (0..hidden.len())
                    .map(|_| if rng.random::<f64>() < *dropout_rate { 0.0 } else { keep })
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };
    let score = params.b2
        + match &mask {
            Some(m) => params.w2.iter().zip(&hidden).zip(m).map(|((w, a), m)| w * a * m).sum::<f64>(),
            None => params.w2.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>(),
        };
    Ok(Trace {
        steps,
        h_n: state.h,
        hidden,
        mask,
        score,
    })
}

/// Regression score of a token-id sequence.
pub fn forward(params: &LstmParams, ids: &[u32], mode: &mut ForwardMode<'_>) -> Result<f64> {
    forward_traced(params, ids, mode).map(|t| t.score)
}

/// Sum of squared residuals.
pub fn loss(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::Input(format!(
            "{} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    Ok(scores.iter().zip(targets).map(|(s, y)| (y - s) * (y - s)).sum())
}

/// A token-id sequence with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqExample {
    pub ids: Vec<u32>,
    pub target: f64,
}

impl SeqExample {
    pub fn new(ids: Vec<u32>, target: f64) -> Self {
        SeqExample { ids, target }
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: LstmParams,
    /// Batch loss under the realized dropout masks.
    pub loss: f64,
    /// Embedding rows with (possibly) non-zero gradient.
    pub touched_rows: BTreeSet<u32>,
}

/// Exact gradient of the summed squared residuals over `batch`, unrolled over
/// full sequences. Dropout masks are drawn from `mode` in batch order.
pub fn gradients<'a>(
    params: &LstmParams,
    batch: impl IntoIterator<Item = &'a SeqExample>,
    mode: &mut ForwardMode<'_>,
) -> Result<Gradients> {
    let mut g = LstmParams::zeros(params.dims);
    let mut total = 0.0;
    let mut touched = BTreeSet::new();
    for ex in batch {
        let trace = forward_traced(params, &ex.ids, mode)?;
        total += (ex.target - trace.score).powi(2);
        accumulate(params, &trace, ex.target, &mut g, &mut touched);
    }
    Ok(Gradients {
        grads: g,
        loss: total,
        touched_rows: touched,
    })
}

fn accumulate(params: &LstmParams, trace: &Trace, target: f64, g: &mut LstmParams, touched: &mut BTreeSet<u32>) {
    let d_h = params.dims.d_h;
    let ds = 2.0 * (trace.score - target);
    if ds == 0.0 {
        return;
    }

    // head
    g.b2 += ds;
    let dropped: Vec<f64> = match &trace.mask {
        Some(m) => trace.hidden.iter().zip(m).map(|(a, m)| a * m).collect(),
        None => trace.hidden.clone(),
    };
    for (gw, a) in g.w2.iter_mut().zip(&dropped) {
        *gw += ds * a;
    }
    let dz1: Vec<f64> = (0..trace.hidden.len())
        .map(|k| {
            let m = trace.mask.as_ref().map_or(1.0, |m| m[k]);
            let a = trace.hidden[k];
            ds * params.w2[k] * m * (1.0 - a * a)
        })
        .collect();
    g.w1.add_outer(&dz1, &trace.h_n);
    for (gb, d) in g.b1.iter_mut().zip(&dz1) {
        *gb += d;
    }
    let mut dh = vec![0.0; d_h];
    params.w1.mul_t_vec_add(&dz1, &mut dh);

    // through time
    let mut dc = vec![0.0; d_h];
    for step in trace.steps.iter().rev() {
        let [i, f, o, u] = &step.gates;
        let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d_h]);
        for k in 0..d_h {
            let tc = step.tanh_c[k];
            dc[k] += dh[k] * o[k] * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            let d_i = dc[k] * u[k];
            let d_u = dc[k] * i[k];
            let d_f = dc[k] * step.prev.c[k];
            dz[Gate::Input as usize][k] = d_i * i[k] * (1.0 - i[k]);
            dz[Gate::Forget as usize][k] = d_f * f[k] * (1.0 - f[k]);
            dz[Gate::Output as usize][k] = d_o * o[k] * (1.0 - o[k]);
            dz[Gate::Update as usize][k] = d_u * (1.0 - u[k] * u[k]);
            dc[k] *= f[k];
        }
        let x = params.embedding.row(step.token as usize);
        let mut dx = vec![0.0; params.dims.d_w];
        let mut dh_prev = vec![0.0; d_h];
        for gate in GATES {
            let gi = gate as usize;
            g.w[gi].add_outer(&dz[gi], x);
            g.u[gi].add_outer(&dz[gi], &step.prev.h);
            for (gb, d) in g.b[gi].iter_mut().zip(&dz[gi]) {
                *gb += d;
            }
            params.w[gi].mul_t_vec_add(&dz[gi], &mut dx);
            params.u[gi].mul_t_vec_add(&dz[gi], &mut dh_prev);
        }
        for (ge, d) in g.embedding.row_mut(step.token as usize).iter_mut().zip(&dx) {
            *ge += d;
        }
        touched.insert(step.token);
        dh = dh_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::super::params::Dims;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(vocab: usize, d_w: usize, d_h: usize, d_s: usize) -> Dims {
        Dims { vocab, d_w, d_h, d_s }
    }

    fn random_params(d: Dims, scale: f64, seed: u64) -> LstmParams {
        let mut p = LstmParams::zeros(d);
        p.fill_uniform(scale, &mut ChaCha8Rng::seed_from_u64(seed));
        p
    }

    #[test]
    fn zero_params_propagate_zero() {
        let p = LstmParams::zeros(dims(4, 3, 2, 2));
        let s = lstm_step(&p, 2, &LstmState::zeros(2)).unwrap();
        assert_eq!(s, LstmState::zeros(2));
        assert_eq!(encode(&p, &[1, 2, 3]).unwrap(), vec![0.0; 2]);
        assert_eq!(forward(&p, &[0, 3], &mut ForwardMode::Eval).unwrap(), 0.0);
    }

    #[test]
    fn saturated_gates_carry_the_cell() {
        let mut p = LstmParams::zeros(dims(2, 3, 2, 2));
        p.b[Gate::Input as usize].fill(-1000.0);
        p.b[Gate::Forget as usize].fill(1000.0);
        let prev = LstmState {
            h: vec![0.0; 2],
            c: vec![0.7, -1.3],
        };
        let s = lstm_step(&p, 1, &prev).unwrap();
        assert!((s.c[0] - 0.7).abs() < 1e-6 && (s.c[1] + 1.3).abs() < 1e-6);
    }

    #[test]
    fn shapes_and_errors() {
        let p = random_params(dims(4, 3, 2, 5), 0.5, 1);
        let s = lstm_step(&p, 0, &LstmState::zeros(2)).unwrap();
        assert_eq!(s.h.len(), 2);
        assert_eq!(s.c.len(), 2);
        assert!(matches!(
            lstm_step(&p, 4, &LstmState::zeros(2)),
            Err(Error::Vocabulary { id: 4, size: 4 })
        ));
        assert!(encode(&p, &[]).is_err());
        assert!(forward(&p, &[], &mut ForwardMode::Eval).is_err());
    }

    #[test]
    fn single_token_encode_is_one_step() {
        let p = random_params(dims(6, 4, 3, 2), 0.5, 2);
        let s = lstm_step(&p, 5, &LstmState::zeros(3)).unwrap();
        assert_eq!(encode(&p, &[5]).unwrap(), s.h);
    }

    #[test]
    fn zero_head_scores_bias() {
        let mut p = random_params(dims(6, 4, 3, 2), 0.5, 3);
        p.w1 = super::super::params::Matrix::zeros(2, 3);
        p.b1 = vec![0.0; 2];
        p.w2 = vec![1.0; 2];
        p.b2 = 0.0;
        assert_eq!(forward(&p, &[1, 2], &mut ForwardMode::Eval).unwrap(), 0.0);
    }

    #[test]
    fn zero_rate_dropout_matches_eval() {
        let p = random_params(dims(6, 4, 3, 5), 0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = forward(
            &p,
            &[1, 4, 2],
            &mut ForwardMode::Train {
                dropout_rate: 0.0,
                rng: &mut rng,
            },
        )
        .unwrap();
        assert_eq!(train, forward(&p, &[1, 4, 2], &mut ForwardMode::Eval).unwrap());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[0.3, 1.0], &[0.3, 1.0]).unwrap(), 0.0);
        assert_eq!(loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(loss(&[2.0], &[0.0]).unwrap(), 4.0);
        assert!(loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let p = random_params(dims(6, 4, 3, 2), 0.5, 5);
        let s = forward(&p, &[1, 2, 3], &mut ForwardMode::Eval).unwrap();
        let g = gradients(&p, &[SeqExample::new(vec![1, 2, 3], s)], &mut ForwardMode::Eval).unwrap();
        assert_eq!(g.grads.sq_norm(), 0.0);
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn output_bias_gradient_is_twice_residual() {
        let p = random_params(dims(6, 4, 3, 2), 0.5, 6);
        let s = forward(&p, &[3, 1], &mut ForwardMode::Eval).unwrap();
        let g = gradients(&p, &[SeqExample::new(vec![3, 1], 0.25)], &mut ForwardMode::Eval).unwrap();
        assert!((g.grads.b2 - 2.0 * (s - 0.25)).abs() < 1e-14);
    }

    #[test]
    fn embedding_gradient_only_on_present_rows() {
        let p = random_params(dims(8, 4, 3, 2), 0.5, 7);
        let batch = [SeqExample::new(vec![1, 5], 1.0), SeqExample::new(vec![5, 6], -1.0)];
        let g = gradients(&p, &batch, &mut ForwardMode::Eval).unwrap();
        assert_eq!(g.touched_rows.iter().copied().collect::<Vec<_>>(), [1, 5, 6]);
        for row in [0, 2, 3, 4, 7] {
            assert!(g.grads.embedding.row(row).iter().all(|&v| v == 0.0));
        }
        assert!(g.grads.embedding.row(5).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_singles() {
        let p = random_params(dims(8, 4, 3, 2), 0.5, 8);
        let a = SeqExample::new(vec![1, 2, 3], 0.5);
        let b = SeqExample::new(vec![4], -0.5);
        let both = gradients(&p, [&a, &b], &mut ForwardMode::Eval).unwrap();
        let mut sum = gradients(&p, [&a], &mut ForwardMode::Eval).unwrap().grads;
        sum.axpy(1.0, &gradients(&p, [&b], &mut ForwardMode::Eval).unwrap().grads);
        let mut diff = both.grads.clone();
        diff.axpy(-1.0, &sum);
        assert!(diff.sq_norm() < 1e-28);
    }
}
