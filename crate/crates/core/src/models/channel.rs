//! One scoring channel: category-specific input maps, softmax-weighted
//! message passing with a GRU update, and gated attention pooling.
//!
//! Forward, per outfit graph with nodes `i` (one per category):
//!
//! ```text
//! h_i⁰   = mean_k tanh(W_{c_i} x_k + b_{c_i})
//! a_ij   = softmax_{j ∈ N(i)} E[c_j, c_i]
//! m_i    = Σ_j a_ij h_jᵗ⁻¹
//! z      = σ(W_z m + U_z h + b_z)
//! r      = σ(W_r m + U_r h + b_r)
//! h̃      = tanh(W_h m + U_h (r ⊙ h) + b_h)
//! hᵗ     = (1 − z) ⊙ h + z ⊙ h̃
//! α_i    = σ(uᵀ tanh(W_a h_iᵀ))
//! s_i    = σ(vᵀ h_iᵀ)
//! S      = (1/n) Σ_i α_i s_i
//! ```

use crate::features::Channel;
use crate::neural::{dot, sigmoid, GradSet, ParamId, ParamSet};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Gate {
    pub msg: ParamId,
    pub state: ParamId,
    pub bias: ParamId,
}

/// Parameter handles for one channel.
#[derive(Debug, Clone)]
pub(crate) struct ChannelParams {
    pub channel: Channel,
    pub embed_weight: Vec<ParamId>,
    pub embed_bias: Vec<ParamId>,
    pub edge: ParamId,
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
    pub attn: ParamId,
    pub query: ParamId,
    pub score: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepCache {
    /// Per node, softmax coefficients aligned with its neighbor list.
    pub coeffs: Vec<Vec<f64>>,
    pub messages: Vec<Vec<f64>>,
    pub update: Vec<Vec<f64>>,
    pub reset: Vec<Vec<f64>>,
    pub candidate: Vec<Vec<f64>>,
}

/// Every intermediate value of a channel forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCache {
    pub(crate) channel: Channel,
    pub(crate) inputs: Vec<Vec<Vec<f64>>>,
    pub(crate) init_act: Vec<Vec<Vec<f64>>>,
    /// `states[t][i]` for `t = 0..=T`.
    pub(crate) states: Vec<Vec<Vec<f64>>>,
    pub(crate) steps: Vec<StepCache>,
    pub(crate) attn_hidden: Vec<Vec<f64>>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) node_scores: Vec<f64>,
    pub(crate) score: f64,
}

impl ChannelCache {
    pub fn channel(&self) -> Channel {
        self.channel
    }

    /// Node states after `t` propagation steps.
    pub fn states(&self, t: usize) -> &[Vec<f64>] {
        &self.states[t]
    }

    pub fn final_states(&self) -> &[Vec<f64>] {
        self.states.last().expect("at least the initial states")
    }

    pub fn attention(&self) -> &[f64] {
        &self.alpha
    }

    pub fn node_scores(&self) -> &[f64] {
        &self.node_scores
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

fn gate_forward(params: &ParamSet, gate: &Gate, message: &[f64], state: &[f64]) -> Vec<f64> {
    let mut pre = params.get(gate.bias).data().to_vec();
    params.get(gate.msg).matvec_acc(message, &mut pre);
    params.get(gate.state).matvec_acc(state, &mut pre);
    pre
}

pub(crate) fn initial_states(
    cp: &ChannelParams,
    params: &ParamSet,
    nodes: &[usize],
    inputs: &[Vec<Vec<f64>>],
    hidden: usize,
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let mut init_act = Vec::with_capacity(nodes.len());
    let mut h0 = Vec::with_capacity(nodes.len());
    for (&cat, xs) in nodes.iter().zip(inputs) {
        let w = params.get(cp.embed_weight[cat]);
        let b = params.get(cp.embed_bias[cat]).data();
        let mut mean = vec![0.0; hidden];
        let mut acts = Vec::with_capacity(xs.len());
        for x in xs {
            let mut a = b.to_vec();
            w.matvec_acc(x, &mut a);
            let t: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
            for (m, v) in mean.iter_mut().zip(&t) {
                *m += v;
            }
            acts.push(t);
        }
        let count = xs.len().max(1) as f64;
        for m in &mut mean {
            *m /= count;
        }
        init_act.push(acts);
        h0.push(mean);
    }
    (init_act, h0)
}

pub(crate) fn propagate_step(
    cp: &ChannelParams,
    params: &ParamSet,
    nodes: &[usize],
    neighbors: &[Vec<usize>],
    h: &[Vec<f64>],
) -> (StepCache, Vec<Vec<f64>>) {
    let edge = params.get(cp.edge);
    let hidden = h.first().map_or(0, Vec::len);
    let n = nodes.len();
    let mut step = StepCache {
        coeffs: Vec::with_capacity(n),
        messages: Vec::with_capacity(n),
        update: Vec::with_capacity(n),
        reset: Vec::with_capacity(n),
        candidate: Vec::with_capacity(n),
    };
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let logits: Vec<f64> = neighbors[i]
            .iter()
            .map(|&j| edge.at(nodes[j], nodes[i]))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let coeffs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut message = vec![0.0; hidden];
        for (&j, &a) in neighbors[i].iter().zip(&coeffs) {
            for (m, v) in message.iter_mut().zip(&h[j]) {
                *m += a * v;
            }
        }

        let hi = &h[i];
        let z: Vec<f64> = gate_forward(params, &cp.update, &message, hi)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = gate_forward(params, &cp.reset, &message, hi)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(hi).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = gate_forward(params, &cp.candidate, &message, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let new_h: Vec<f64> = (0..hidden)
            .map(|k| (1.0 - z[k]) * hi[k] + z[k] * c[k])
            .collect();

        step.coeffs.push(coeffs);
        step.messages.push(message);
        step.update.push(z);
        step.reset.push(r);
        step.candidate.push(c);
        next.push(new_h);
    }
    (step, next)
}

/// Returns `(alpha, node_scores, attn_hidden, S)`.
pub(crate) fn attention_pool(
    cp: &ChannelParams,
    params: &ParamSet,
    states: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, f64) {
    let attn = params.get(cp.attn);
    let query = params.get(cp.query).data();
    let score = params.get(cp.score).data();
    let mut alpha = Vec::with_capacity(states.len());
    let mut s = Vec::with_capacity(states.len());
    let mut hidden = Vec::with_capacity(states.len());
    let mut total = 0.0;
    for h in states {
        let g: Vec<f64> = attn.matvec(h).into_iter().map(f64::tanh).collect();
        let a = sigmoid(dot(query, &g));
        let si = sigmoid(dot(score, h));
        total += a * si;
        alpha.push(a);
        s.push(si);
        hidden.push(g);
    }
    let pooled = if states.is_empty() {
        0.0
    } else {
        total / states.len() as f64
    };
    (alpha, s, hidden, pooled)
}

pub(crate) fn forward(
    cp: &ChannelParams,
    params: &ParamSet,
    nodes: &[usize],
    neighbors: &[Vec<usize>],
    inputs: Vec<Vec<Vec<f64>>>,
    hidden: usize,
    steps: usize,
) -> ChannelCache {
    let (init_act, h0) = initial_states(cp, params, nodes, &inputs, hidden);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(h0);
    let mut step_caches = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (cache, next) = propagate_step(cp, params, nodes, neighbors, states.last().unwrap());
        step_caches.push(cache);
        states.push(next);
    }
    let (alpha, node_scores, attn_hidden, score) =
        attention_pool(cp, params, states.last().unwrap());
    ChannelCache {
        channel: cp.channel,
        inputs,
        init_act,
        states,
        steps: step_caches,
        attn_hidden,
        alpha,
        node_scores,
        score,
    }
}

/// Accumulates `upstream · ∂S/∂θ` for this channel into `grads`.
pub(crate) fn backward(
    cp: &ChannelParams,
    params: &ParamSet,
    nodes: &[usize],
    neighbors: &[Vec<usize>],
    cache: &ChannelCache,
    upstream: f64,
    grads: &mut GradSet,
) {
    let n = nodes.len();
    if n == 0 {
        return;
    }
    let hidden = cache.states[0][0].len();
    let final_states = cache.final_states();

    // attention pooling
    let attn = params.get(cp.attn);
    let query = params.get(cp.query).data();
    let score_w = params.get(cp.score).data();
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hidden]; n];
    for i in 0..n {
        let (a, s, g, h) = (
            cache.alpha[i],
            cache.node_scores[i],
            &cache.attn_hidden[i],
            &final_states[i],
        );
        let d_alpha = upstream * s / n as f64;
        let d_s = upstream * a / n as f64;

        let ds_pre = d_s * s * (1.0 - s);
        grads
            .entry(cp.score, &[hidden])
            .data_mut()
            .iter_mut()
            .zip(h)
            .for_each(|(gv, hv)| *gv += ds_pre * hv);
        for (d, w) in dh[i].iter_mut().zip(score_w) {
            *d += ds_pre * w;
        }

        let da_pre = d_alpha * a * (1.0 - a);
        grads
            .entry(cp.query, &[hidden])
            .data_mut()
            .iter_mut()
            .zip(g)
            .for_each(|(gv, v)| *gv += da_pre * v);
        let dg_pre: Vec<f64> = g
            .iter()
            .zip(query)
            .map(|(gv, u)| da_pre * u * (1.0 - gv * gv))
            .collect();
        grads.entry(cp.attn, attn.shape()).add_outer(&dg_pre, h);
        attn.matvec_t_acc(&dg_pre, &mut dh[i]);
    }

    // propagation steps, last to first
    let edge_shape = params.get(cp.edge).shape().to_vec();
    for (t, step) in cache.steps.iter().enumerate().rev() {
        let h = &cache.states[t];
        let mut dh_prev: Vec<Vec<f64>> = vec![vec![0.0; hidden]; n];
        let mut dm: Vec<Vec<f64>> = vec![vec![0.0; hidden]; n];
        for i in 0..n {
            let (z, r, c, m, hi) = (
                &step.update[i],
                &step.reset[i],
                &step.candidate[i],
                &step.messages[i],
                &h[i],
            );
            let dhn = &dh[i];
            let mut dz_pre = vec![0.0; hidden];
            let mut dc_pre = vec![0.0; hidden];
            for k in 0..hidden {
                dh_prev[i][k] += dhn[k] * (1.0 - z[k]);
                dz_pre[k] = dhn[k] * (c[k] - hi[k]) * z[k] * (1.0 - z[k]);
                dc_pre[k] = dhn[k] * z[k] * (1.0 - c[k] * c[k]);
            }
            let rh: Vec<f64> = r.iter().zip(hi).map(|(a, b)| a * b).collect();

            // candidate
            let gate = cp.candidate;
            grads.entry(gate.msg, &[hidden, hidden]).add_outer(&dc_pre, m);
            grads.entry(gate.state, &[hidden, hidden]).add_outer(&dc_pre, &rh);
            add_bias(grads, gate.bias, &dc_pre);
            params.get(gate.msg).matvec_t_acc(&dc_pre, &mut dm[i]);
            let mut drh = vec![0.0; hidden];
            params.get(gate.state).matvec_t_acc(&dc_pre, &mut drh);
            let mut dr_pre = vec![0.0; hidden];
            for k in 0..hidden {
                dh_prev[i][k] += drh[k] * r[k];
                dr_pre[k] = drh[k] * hi[k] * r[k] * (1.0 - r[k]);
            }

            for (gate, pre) in [(cp.update, &dz_pre), (cp.reset, &dr_pre)] {
                grads.entry(gate.msg, &[hidden, hidden]).add_outer(pre, m);
                grads.entry(gate.state, &[hidden, hidden]).add_outer(pre, hi);
                add_bias(grads, gate.bias, pre);
                params.get(gate.msg).matvec_t_acc(pre, &mut dm[i]);
                params.get(gate.state).matvec_t_acc(pre, &mut dh_prev[i]);
            }
        }

        // messages and softmax edge weights
        for i in 0..n {
            if neighbors[i].is_empty() {
                continue;
            }
            let coeffs = &step.coeffs[i];
            let da: Vec<f64> = neighbors[i].iter().map(|&j| dot(&dm[i], &h[j])).collect();
            let mean: f64 = coeffs.iter().zip(&da).map(|(a, d)| a * d).sum();
            let edge_grad = grads.entry(cp.edge, &edge_shape);
            for ((&j, &a), &d) in neighbors[i].iter().zip(coeffs).zip(&da) {
                *edge_grad.at_mut(nodes[j], nodes[i]) += a * (d - mean);
            }
            for (&j, &a) in neighbors[i].iter().zip(coeffs) {
                for k in 0..hidden {
                    dh_prev[j][k] += a * dm[i][k];
                }
            }
        }
        dh = dh_prev;
    }

    // category input maps
    for i in 0..n {
        let cat = nodes[i];
        let count = cache.inputs[i].len().max(1) as f64;
        let w_id = cp.embed_weight[cat];
        let w_shape = params.get(w_id).shape().to_vec();
        for (x, t) in cache.inputs[i].iter().zip(&cache.init_act[i]) {
            let da: Vec<f64> = dh[i]
                .iter()
                .zip(t)
                .map(|(d, tv)| d / count * (1.0 - tv * tv))
                .collect();
            grads.entry(w_id, &w_shape).add_outer(&da, x);
            add_bias(grads, cp.embed_bias[cat], &da);
        }
    }
}

fn add_bias(grads: &mut GradSet, id: ParamId, delta: &[f64]) {
    for (g, d) in grads.entry(id, &[delta.len()]).data_mut().iter_mut().zip(delta) {
        *g += d;
    }
}
