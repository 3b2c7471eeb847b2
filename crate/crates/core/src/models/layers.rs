//! Building blocks shared by the architectures: a bidirectional GRU with
//! optional time handling, context-vector attention and linear score heads.

use sha2::{Digest, Sha256};

use super::spec::TimeMode;
use crate::compute::{
    derive_seed, softplus, GruParams, OdeFieldParams, ParamId, ParamStore, RngStream, Tape, Value, Var,
};
use crate::embeddings::{init_ode_field, StepPolicy};
use crate::error::{Error, Result};

/// Deterministic per-parameter generator so that a parameter's initial value
/// depends only on the model seed and its name.
pub(crate) fn param_rng(seed: u64, name: &str) -> RngStream {
    let digest = Sha256::digest(name.as_bytes());
    let tag = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    RngStream::new(derive_seed(seed, tag))
}

pub(crate) fn uniform_param(
    ps: &mut ParamStore,
    seed: u64,
    name: &str,
    shape: &[usize],
    bound: f64,
) -> Result<ParamId> {
    let mut rng = param_rng(seed, name);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    ps.insert(name, Value::new(data, shape.to_vec())?, true)
}

pub(crate) fn const_param(ps: &mut ParamStore, name: &str, shape: &[usize], fill: f64) -> Result<ParamId> {
    let n: usize = shape.iter().product();
    ps.insert(name, Value::new(vec![fill; n], shape.to_vec())?, true)
}

/// `h * exp(-softplus(gamma_raw) * dt)`.
pub fn apply_exp_decay(h: &[f64], dt: f64, gamma_raw: &[f64]) -> Vec<f64> {
    h.iter()
        .zip(gamma_raw)
        .map(|(hi, g)| hi * (-softplus(*g) * dt).exp())
        .collect()
}

/// Parameters of `u_i = tanh(W v_i + b)`, `alpha = softmax(u . u_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionHead {
    pub w: ParamId,
    pub b: ParamId,
    pub context: ParamId,
}

impl AttentionHead {
    pub fn init(ps: &mut ParamStore, seed: u64, prefix: &str, dim: usize) -> Result<Self> {
        let bound = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            w: uniform_param(ps, seed, &format!("{prefix}.w"), &[dim, dim], bound)?,
            b: const_param(ps, &format!("{prefix}.b"), &[dim], 0.0)?,
            context: uniform_param(ps, seed, &format!("{prefix}.u"), &[dim], bound)?,
        })
    }

    pub fn dim(&self, ps: &ParamStore) -> usize {
        ps.get(self.context).len()
    }

    /// Attention weights (absent for an empty sequence) and the context vector.
    pub fn attend(&self, t: &mut Tape, values: &[Var]) -> (Option<Var>, Var) {
        if values.is_empty() {
            let d = self.dim(t.params());
            let zero = t.constant(&vec![0.0; d]);
            return (None, zero);
        }
        let uc = t.param(self.context);
        let scores: Vec<Var> = values
            .iter()
            .map(|&v| {
                let z = t.affine(self.w, v, Some(self.b));
                let u = t.tanh(z);
                t.dot(u, uc)
            })
            .collect();
        let s = t.concat(&scores);
        let alpha = t.softmax(s);
        let ctx = t.weighted_sum(alpha, values);
        (Some(alpha), ctx)
    }
}

/// Evaluates [`AttentionHead::attend`] on plain vectors.
pub fn attend(ps: &ParamStore, head: &AttentionHead, values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut t = Tape::new(ps);
    let vars: Vec<Var> = values.iter().map(|v| t.constant(v)).collect();
    let (alpha, ctx) = head.attend(&mut t, &vars);
    let weights = alpha.map(|a| t.value(a).to_vec()).unwrap_or_default();
    (weights, t.value(ctx).to_vec())
}

/// Linear map from a pooled stream representation to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl ScoreHead {
    pub fn init(ps: &mut ParamStore, seed: u64, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            w: uniform_param(ps, seed, &format!("{prefix}.w"), &[1, dim], 1.0 / (dim as f64).sqrt())?,
            b: const_param(ps, &format!("{prefix}.b"), &[1], 0.0)?,
        })
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        t.affine(self.w, x, Some(self.b))
    }
}

/// Time handling parameters of a [`BiGru`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeModeParams {
    None,
    ConcatDelta,
    /// Raw decay rates per direction, `gamma = softplus(raw)`.
    ExpDecay([ParamId; 2]),
    OdeDecay([OdeFieldParams; 2], StepPolicy),
}

impl TimeModeParams {
    pub fn mode(&self) -> TimeMode {
        match self {
            TimeModeParams::None => TimeMode::None,
            TimeModeParams::ConcatDelta => TimeMode::ConcatDelta,
            TimeModeParams::ExpDecay(_) => TimeMode::ExpDecay,
            TimeModeParams::OdeDecay(..) => TimeMode::OdeDecay,
        }
    }
}

pub(crate) fn init_gru(ps: &mut ParamStore, seed: u64, prefix: &str, input: usize, hidden: usize) -> Result<GruParams> {
    let bound = 1.0 / (hidden as f64).sqrt();
    Ok(GruParams {
        w: uniform_param(ps, seed, &format!("{prefix}.w"), &[3 * hidden, input], bound)?,
        u: uniform_param(ps, seed, &format!("{prefix}.u"), &[3 * hidden, hidden], bound)?,
        b: const_param(ps, &format!("{prefix}.b"), &[3 * hidden], 0.0)?,
    })
}

/// Forward (oldest to newest) and backward GRU sharing the hidden size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiGru {
    /// Forward then backward cell.
    pub cells: [GruParams; 2],
    pub time: TimeModeParams,
    pub hidden: usize,
}

impl BiGru {
    pub fn init(
        ps: &mut ParamStore,
        seed: u64,
        prefix: &str,
        input: usize,
        mode: TimeMode,
        ode_steps: StepPolicy,
    ) -> Result<Self> {
        let hidden = input;
        let in_dim = if mode == TimeMode::ConcatDelta {
            input + 1
        } else {
            input
        };
        let cells = [
            init_gru(ps, seed, &format!("{prefix}.fwd"), in_dim, hidden)?,
            init_gru(ps, seed, &format!("{prefix}.bwd"), in_dim, hidden)?,
        ];
        let time = match mode {
            TimeMode::None => TimeModeParams::None,
            TimeMode::ConcatDelta => TimeModeParams::ConcatDelta,
            TimeMode::ExpDecay => TimeModeParams::ExpDecay([
                const_param(ps, &format!("{prefix}.decay.fwd"), &[hidden], -3.0)?,
                const_param(ps, &format!("{prefix}.decay.bwd"), &[hidden], -3.0)?,
            ]),
            TimeMode::OdeDecay => TimeModeParams::OdeDecay(
                [
                    init_ode_field(
                        ps,
                        &format!("{prefix}.ode.fwd"),
                        hidden,
                        &mut param_rng(seed, &format!("{prefix}.ode.fwd")),
                    )?,
                    init_ode_field(
                        ps,
                        &format!("{prefix}.ode.bwd"),
                        hidden,
                        &mut param_rng(seed, &format!("{prefix}.ode.bwd")),
                    )?,
                ],
                ode_steps,
            ),
        };
        Ok(Self { cells, time, hidden })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Runs both directions over `inputs` whose elapsed times are `elapsed`
    /// (oldest first, so non-increasing). Returns the per-step outputs
    /// `[fwd_i; bwd_i]` and the final state `[fwd_last; bwd_first]`.
    pub fn run(&self, t: &mut Tape, inputs: &[Var], elapsed: &[f64]) -> Result<(Vec<Var>, Var)> {
        if inputs.len() != elapsed.len() {
            return Err(Error::Shape {
                context: "run_bigru inputs vs elapsed",
                expected: vec![inputs.len()],
                actual: vec![elapsed.len()],
            });
        }
        let n = inputs.len();
        let mut fwd = Vec::with_capacity(n);
        let mut bwd = vec![None; n];
        let order_f: Vec<usize> = (0..n).collect();
        let order_b: Vec<usize> = (0..n).rev().collect();
        let last_f = self.direction(t, 0, inputs, elapsed, &order_f, |i, h| fwd.push((i, h)))?;
        let last_b = self.direction(t, 1, inputs, elapsed, &order_b, |i, h| bwd[i] = Some(h))?;
        let outputs = fwd
            .into_iter()
            .map(|(i, hf)| {
                let hb = bwd[i].expect("backward state for every step");
                t.concat(&[hf, hb])
            })
            .collect();
        let fin = t.concat(&[last_f, last_b]);
        Ok((outputs, fin))
    }

    fn direction(
        &self,
        t: &mut Tape,
        dir: usize,
        inputs: &[Var],
        elapsed: &[f64],
        order: &[usize],
        mut emit: impl FnMut(usize, Var),
    ) -> Result<Var> {
        let mut h = t.constant(&vec![0.0; self.hidden]);
        let gamma = match self.time {
            TimeModeParams::ExpDecay(raw) => {
                let g = t.param(raw[dir]);
                Some(t.softplus(g))
            }
            _ => None,
        };
        let mut prev: Option<usize> = None;
        for &i in order {
            let dt = prev.map_or(0.0, |p| (elapsed[p] - elapsed[i]).abs());
            prev = Some(i);
            let mut x = inputs[i];
            match self.time {
                TimeModeParams::None => {}
                TimeModeParams::ConcatDelta => {
                    let c = t.constant(&[dt]);
                    x = t.concat(&[x, c]);
                }
                TimeModeParams::ExpDecay(_) => {
                    if dt > 0.0 {
                        let rate = t.scale(gamma.expect("decay rates"), -dt);
                        let f = t.exp(rate);
                        h = t.mul(h, f);
                    }
                }
                TimeModeParams::OdeDecay(fields, policy) => {
                    if dt > 0.0 {
                        let k = policy.n_steps(dt);
                        h = t.ode_evolve(fields[dir], h, dt / k as f64, k)?;
                    }
                }
            }
            h = t.gru_step(self.cells[dir], h, x);
            emit(i, h);
        }
        Ok(h)
    }
}
