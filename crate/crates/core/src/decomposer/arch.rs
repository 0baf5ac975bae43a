//! Forward passes of the three predictor architectures over a packed batch.
//!
//! A batch of trajectories is stacked row-wise into one `[N, d_in]` matrix.
//! Attention uses a block-causal mask so that rows only see earlier rows of
//! the same trajectory; the recurrent model runs all trajectories in lock-step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{linear, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::trajectory::Trajectory;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[serde(alias = "ff")]
    FeedForward,
    #[serde(alias = "lstm")]
    Recurrent,
    #[serde(alias = "transformer")]
    Attention,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::FeedForward, Self::Recurrent, Self::Attention];

    pub fn is_causal_sequence_model(self) -> bool {
        !matches!(self, Self::FeedForward)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::FeedForward => "ff",
            Self::Recurrent => "recurrent",
            Self::Attention => "attention",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" | "feed_forward" => Ok(Self::FeedForward),
            "recurrent" | "lstm" => Ok(Self::Recurrent),
            "attention" | "transformer" => Ok(Self::Attention),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Widths of the predictor networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    /// Hidden channels of the feed-forward predictor.
    pub ff_channels: Vec<usize>,
    pub lstm_hidden: usize,
    /// Width of the shared per-step embedding and the encoder layer.
    pub layer_size: usize,
    /// Hidden width of the encoder's position-wise feed-forward block.
    pub ffn_hidden: usize,
    pub heads: usize,
    /// Total query/key width, split evenly across heads.
    pub key_size: usize,
    /// Sinusoidal position signal added to the step embeddings.
    pub positional: bool,
}

impl Widths {
    pub fn full() -> Self {
        Self {
            ff_channels: vec![128, 128, 128, 256],
            lstm_hidden: 96,
            layer_size: 64,
            ffn_hidden: 128,
            heads: 4,
            key_size: 32,
            positional: true,
        }
    }

    /// Every width halved; the head count is kept.
    pub fn desk() -> Self {
        Self {
            ff_channels: vec![64, 64, 64, 128],
            lstm_hidden: 48,
            layer_size: 32,
            ffn_hidden: 64,
            heads: 4,
            key_size: 16,
            positional: true,
        }
    }

    /// Very small networks for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            ff_channels: vec![5, 4],
            lstm_hidden: 4,
            layer_size: 4,
            ffn_hidden: 6,
            heads: 2,
            key_size: 4,
            positional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.ff_channels.contains(&0) || self.lstm_hidden == 0 || self.layer_size == 0 || self.ffn_hidden == 0 {
            return bad("network widths must be positive");
        }
        if self.heads == 0 || !self.key_size.is_multiple_of(self.heads) || self.key_size == 0 {
            return bad("key_size must be a positive multiple of heads");
        }
        if !self.layer_size.is_multiple_of(self.heads) {
            return bad("layer_size must be a multiple of heads");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    pub query: usize,
    pub key: usize,
    pub value: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layout {
    FeedForward(Mlp),
    Recurrent {
        embed: (usize, usize),
        input_gates: usize,
        hidden_gates: usize,
        gate_bias: usize,
        hidden: usize,
        out: (usize, usize),
    },
    Attention {
        embed: (usize, usize),
        heads: Vec<Head>,
        key_width: usize,
        mix: (usize, usize),
        ffn_in: (usize, usize),
        ffn_out: (usize, usize),
        pool_in: usize,
        pool_out: usize,
        out: (usize, usize),
        positional: bool,
    },
}

fn dense(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> (usize, usize) {
    let w = params.push_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
    let b = params.push(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
    (w, b)
}

impl Layout {
    pub fn init(arch: Architecture, widths: &Widths, input_dim: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        match arch {
            Architecture::FeedForward => {
                let mut sizes = vec![input_dim];
                sizes.extend_from_slice(&widths.ff_channels);
                sizes.push(1);
                Self::FeedForward(Mlp::init(params, "ff", &sizes, 1.0, rng))
            }
            Architecture::Recurrent => {
                let (d, h) = (widths.layer_size, widths.lstm_hidden);
                let embed = dense(params, "embed", input_dim, d, rng);
                let input_gates = params.push_uniform("lstm.input_gates", &[d, 4 * h], h, rng);
                let hidden_gates = params.push_uniform("lstm.hidden_gates", &[h, 4 * h], h, rng);
                let gate_bias = params.push("lstm.bias", Tensor::zeros(&[1, 4 * h]));
                let out = dense(params, "out", h, 1, rng);
                Self::Recurrent {
                    embed,
                    input_gates,
                    hidden_gates,
                    gate_bias,
                    hidden: h,
                    out,
                }
            }
            Architecture::Attention => {
                let d = widths.layer_size;
                let dk = widths.key_size / widths.heads;
                let dv = d / widths.heads;
                let embed = dense(params, "embed", input_dim, d, rng);
                let heads = (0..widths.heads)
                    .map(|i| Head {
                        query: params.push_uniform(format!("attn.{i}.query"), &[d, dk], d, rng),
                        key: params.push_uniform(format!("attn.{i}.key"), &[d, dk], d, rng),
                        value: params.push_uniform(format!("attn.{i}.value"), &[d, dv], d, rng),
                    })
                    .collect();
                let mix = dense(params, "attn.mix", d, d, rng);
                let ffn_in = dense(params, "ffn.in", d, widths.ffn_hidden, rng);
                let ffn_out = dense(params, "ffn.out", widths.ffn_hidden, d, rng);
                let pool_in = params.push_uniform("pool.in", &[d, widths.key_size], d, rng);
                let pool_out = params.push_uniform("pool.out", &[widths.key_size, 1], widths.key_size, rng);
                let out = dense(params, "out", d, 1, rng);
                Self::Attention {
                    embed,
                    heads,
                    key_width: dk,
                    mix,
                    ffn_in,
                    ffn_out,
                    pool_in,
                    pool_out,
                    out,
                    positional: widths.positional,
                }
            }
        }
    }
}

/// Row-stacked inputs of several trajectories.
#[derive(Debug, Clone)]
pub struct Packed {
    pub inputs: Tensor,
    /// Row offset of each trajectory.
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Packed {
    pub fn new(batch: &[&Trajectory], input_dim: usize) -> Result<Self> {
        let mut rows = Vec::new();
        let mut offsets = Vec::with_capacity(batch.len());
        let mut lens = Vec::with_capacity(batch.len());
        for traj in batch {
            offsets.push(rows.len());
            lens.push(traj.len());
            for t in 0..traj.len() {
                let row = traj.input_row(t);
                if row.len() != input_dim {
                    return Err(Error::LengthMismatch {
                        context: "decomposer input width",
                        expected: input_dim,
                        actual: row.len(),
                    });
                }
                rows.push(row);
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(Self {
            inputs: Tensor::from_rows(&rows)?,
            offsets,
            lens,
        })
    }

    pub fn rows(&self) -> usize {
        self.inputs.dims2().0
    }

    /// `(trajectory, step)` for every packed row.
    pub fn row_index(&self) -> Vec<(usize, usize)> {
        self.lens
            .iter()
            .enumerate()
            .flat_map(|(b, &len)| (0..len).map(move |t| (b, t)))
            .collect()
    }

    /// `allowed[i*N + j]` iff row `j` is in the same trajectory as row `i` and not later.
    pub fn causal_mask(&self) -> Vec<bool> {
        let index = self.row_index();
        let n = index.len();
        let mut mask = vec![false; n * n];
        for (i, &(bi, ti)) in index.iter().enumerate() {
            for (j, &(bj, tj)) in index.iter().enumerate() {
                mask[i * n + j] = bi == bj && tj <= ti;
            }
        }
        mask
    }

    /// `[B, N]` indicator matrix that sums each trajectory's rows.
    pub fn segment_sum_matrix(&self) -> Tensor {
        let n = self.rows();
        let b = self.lens.len();
        let mut data = vec![0.0; b * n];
        for (k, (&off, &len)) in self.offsets.iter().zip(&self.lens).enumerate() {
            for r in off..off + len {
                data[k * n + r] = 1.0;
            }
        }
        Tensor::new(vec![b, n], data).expect("segment matrix")
    }
}

/// Sinusoidal position signal for step `t` in a `d`-wide embedding.
pub fn position_signal(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = t as f64 * freq;
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Intermediate values of one forward pass, all in packed row order.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Per-step embeddings `v_t` (`[N, d]`); the raw inputs unless internals were requested.
    pub embedding: Var,
    /// Causal encodings `h_t` (absent for the feed-forward model, and for the
    /// recurrent model unless internals were requested).
    pub hidden: Option<Var>,
    /// Attention-pool gate `z` (`[N, 1]`).
    pub gate: Option<Var>,
    /// Per-head attention probabilities (`[N, N]`).
    pub attention: Vec<Var>,
    /// Predicted per-interval rewards (`[N, 1]`).
    pub output: Var,
}

pub(crate) fn forward(
    layout: &Layout,
    tape: &mut Tape,
    vars: &[Var],
    packed: &Packed,
    prefix_pooling: bool,
    detail: bool,
) -> Result<Trace> {
    let x = tape.leaf(packed.inputs.clone());
    match layout {
        Layout::FeedForward(mlp) => {
            let output = mlp.forward(tape, vars, x)?;
            // the first hidden layer plays the role of the step embedding
            let embedding = if detail {
                let pre = linear(tape, x, vars[0], vars[1])?;
                tape.tanh(pre)
            } else {
                x
            };
            Ok(Trace {
                embedding,
                hidden: None,
                gate: None,
                attention: Vec::new(),
                output,
            })
        }
        Layout::Recurrent {
            embed,
            input_gates,
            hidden_gates,
            gate_bias,
            hidden,
            out,
        } => recurrent(
            tape,
            vars,
            packed,
            x,
            *embed,
            (*input_gates, *hidden_gates, *gate_bias),
            *hidden,
            *out,
            prefix_pooling,
            detail,
        ),
        Layout::Attention {
            embed,
            heads,
            key_width,
            mix,
            ffn_in,
            ffn_out,
            pool_in,
            pool_out,
            out,
            positional,
        } => {
            let mut v = linear(tape, x, vars[embed.0], vars[embed.1])?;
            let d = tape.value(v).dims2().1;
            if *positional {
                let rows: Vec<Vec<f64>> = packed.row_index().iter().map(|&(_, t)| position_signal(t, d)).collect();
                let pe = tape.leaf(Tensor::from_rows(&rows)?);
                v = tape.add(v, pe)?;
            }
            let mask = packed.causal_mask();
            let scale = 1.0 / (*key_width as f64).sqrt();
            let mut attention = Vec::with_capacity(heads.len());
            let mut head_outputs = Vec::with_capacity(heads.len());
            for head in heads {
                let q = tape.matmul(v, vars[head.query])?;
                let k = tape.matmul(v, vars[head.key])?;
                let val = tape.matmul(v, vars[head.value])?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale);
                let probs = tape.masked_softmax(scores, &mask)?;
                head_outputs.push(tape.matmul(probs, val)?);
                attention.push(probs);
            }
            let joined = tape.concat(&head_outputs, 1)?;
            let mixed = linear(tape, joined, vars[mix.0], vars[mix.1])?;
            let res = tape.add(v, mixed)?;
            let h1 = tape.layer_norm(res, LAYER_NORM_EPS);
            let f = linear(tape, h1, vars[ffn_in.0], vars[ffn_in.1])?;
            let f = tape.gelu(f);
            let f = linear(tape, f, vars[ffn_out.0], vars[ffn_out.1])?;
            let res = tape.add(h1, f)?;
            let hidden = tape.layer_norm(res, LAYER_NORM_EPS);
            // z = sigmoid(w_s2 tanh(W_s1 Hᵀ)), h*_t = z_t h_t
            let s = tape.matmul(hidden, vars[*pool_in])?;
            let s = tape.tanh(s);
            let s = tape.matmul(s, vars[*pool_out])?;
            let gate = tape.sigmoid(s);
            let wide = tape.expand_cols(gate, d)?;
            let pooled = tape.mul(hidden, wide)?;
            let output = linear(tape, pooled, vars[out.0], vars[out.1])?;
            Ok(Trace {
                embedding: v,
                hidden: Some(hidden),
                gate: Some(gate),
                attention,
                output,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn recurrent(
    tape: &mut Tape,
    vars: &[Var],
    packed: &Packed,
    x: Var,
    embed: (usize, usize),
    gates: (usize, usize, usize),
    h: usize,
    out: (usize, usize),
    prefix_pooling: bool,
    detail: bool,
) -> Result<Trace> {
    let embedding = if detail { linear(tape, x, vars[embed.0], vars[embed.1])? } else { x };
    let in_dim = packed.inputs.dims2().1;
    let b = packed.lens.len();
    let t_max = *packed.lens.iter().max().expect("non-empty batch");
    let (w_in, w_hid, bias) = (vars[gates.0], vars[gates.1], vars[gates.2]);

    let mut state: Option<(Var, Var)> = None;
    let mut running: Option<Var> = None;
    let mut hiddens = Vec::with_capacity(t_max);
    let mut outputs = Vec::with_capacity(t_max);
    for t in 0..t_max {
        // inputs of every trajectory at step t; finished trajectories get zeros
        let mut data = vec![0.0; b * in_dim];
        for (k, (&off, &len)) in packed.offsets.iter().zip(&packed.lens).enumerate() {
            if t < len {
                data[k * in_dim..(k + 1) * in_dim].copy_from_slice(packed.inputs.row_slice(off + t));
            }
        }
        let xt = tape.leaf(Tensor::new(vec![b, in_dim], data)?);
        let vt = linear(tape, xt, vars[embed.0], vars[embed.1])?;
        let mut z = tape.matmul(vt, w_in)?;
        if let Some((h_prev, _)) = state {
            let zh = tape.matmul(h_prev, w_hid)?;
            z = tape.add(z, zh)?;
        }
        z = tape.add(z, bias)?;
        let i_gate = tape.slice(z, 1, 0, h)?;
        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.slice(z, 1, h, 2 * h)?;
        let f_gate = tape.sigmoid(f_gate);
        let g_gate = tape.slice(z, 1, 2 * h, 3 * h)?;
        let g_gate = tape.tanh(g_gate);
        let o_gate = tape.slice(z, 1, 3 * h, 4 * h)?;
        let o_gate = tape.sigmoid(o_gate);
        let mut c = tape.mul(i_gate, g_gate)?;
        if let Some((_, c_prev)) = state {
            let keep = tape.mul(f_gate, c_prev)?;
            c = tape.add(c, keep)?;
        }
        let tc = tape.tanh(c);
        let h_t = tape.mul(o_gate, tc)?;
        state = Some((h_t, c));
        let summary = if prefix_pooling {
            let sum = match running {
                Some(r) => tape.add(r, h_t)?,
                None => h_t,
            };
            running = Some(sum);
            tape.scale(sum, 1.0 / (t + 1) as f64)
        } else {
            h_t
        };
        hiddens.push(h_t);
        outputs.push(linear(tape, summary, vars[out.0], vars[out.1])?);
    }

    // [B, T_max] -> packed [N, 1]
    let index = packed.row_index();
    let n = index.len();
    let mut select = vec![0.0; n * b];
    for (r, &(k, _)) in index.iter().enumerate() {
        select[r * b + k] = 1.0;
    }
    let select = tape.leaf(Tensor::new(vec![n, b], select)?);
    let steps: Vec<usize> = index.iter().map(|&(_, t)| t).collect();
    let unpack = |tape: &mut Tape, cols: &[Var]| -> Result<Var> {
        let grid = tape.concat(cols, 1)?;
        let rows = tape.matmul(select, grid)?;
        tape.gather(rows, &steps)
    };
    let output = unpack(tape, &outputs)?;
    if !detail {
        return Ok(Trace {
            embedding,
            hidden: None,
            gate: None,
            attention: Vec::new(),
            output,
        });
    }
    // hidden states unpacked one unit at a time
    let mut units = Vec::with_capacity(h);
    for j in 0..h {
        let cols: Vec<Var> = hiddens
            .iter()
            .map(|&hv| tape.slice(hv, 1, j, j + 1))
            .collect::<Result<_>>()?;
        units.push(unpack(tape, &cols)?);
    }
    let hidden = tape.concat(&units, 1)?;
    Ok(Trace {
        embedding,
        hidden: Some(hidden),
        gate: None,
        attention: Vec::new(),
        output,
    })
}
