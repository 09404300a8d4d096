//! The RiseNet network, evaluated on an autodiff [`Tape`] one item at a time.
//!
//! Per week: `L` residual message-passing layers weighted by the DiffGate,
//! a PickGate readout, a scale head, the FuseGate with the item feature row,
//! and a bias-free GRU step on the item state. The final state feeds the
//! two-logit prediction head.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::data::{DiffusionSnapshot, ItemExample, USER_FEATURES};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input shape: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Node embedding width.
    pub d_h: usize,
    /// Item state width; must equal `d_h`.
    pub d_i: usize,
    pub layers: usize,
    pub time_steps: usize,
    /// Fraction of nodes picked by the PickGate.
    pub pick_ratio: f64,
    /// Hidden width of the scale and prediction heads.
    pub head_hidden: usize,
    pub no_graph: bool,
    pub no_pickgate: bool,
    pub no_multitask: bool,
    pub no_coupling: bool,
    pub no_dynamics: bool,
    pub sigmoid_gate: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_h: 8,
            d_i: 8,
            layers: 2,
            time_steps: 4,
            pick_ratio: 0.1,
            head_hidden: 8,
            no_graph: false,
            no_pickgate: false,
            no_multitask: false,
            no_coupling: false,
            no_dynamics: false,
            sigmoid_gate: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h != self.d_i {
            return Err(ModelError::Config(format!(
                "d_h ({}) must equal d_i ({}) for the DiffGate subtraction",
                self.d_h, self.d_i
            )));
        }
        if self.d_h == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("d_h and head_hidden must be at least 1".into()));
        }
        if self.layers == 0 || self.time_steps == 0 {
            return Err(ModelError::Config("layers and time_steps must be at least 1".into()));
        }
        if !(self.pick_ratio > 0.0 && self.pick_ratio <= 1.0) {
            return Err(ModelError::Config(format!(
                "pick_ratio must lie in (0, 1], got {}",
                self.pick_ratio
            )));
        }
        Ok(())
    }

    /// Width of the graph representation `g`.
    pub fn graph_width(&self) -> usize {
        if self.no_pickgate {
            self.d_h
        } else {
            2 * self.d_h
        }
    }

    /// Width of the fused representation `C`.
    pub fn fused_width(&self) -> usize {
        if self.no_graph {
            self.d_h
        } else {
            self.graph_width() + self.d_h
        }
    }

    /// Whether the scale head is trained.
    pub fn multitask(&self) -> bool {
        !self.no_graph && !self.no_multitask
    }
}

/// Every parameter tensor the network can own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    WIn,
    WItem,
    WRel,
    Pick,
    Ws1,
    Bs1,
    Ws2,
    Bs2,
    WProj,
    Fuse1,
    FuseB1,
    Fuse2,
    FuseB2,
    Wz,
    Uz,
    Wr,
    Ur,
    Wg,
    Ug,
    W1,
    B1,
    W2,
    B2,
}

impl ParamKey {
    pub const ALL: [ParamKey; 23] = [
        ParamKey::WIn,
        ParamKey::WItem,
        ParamKey::WRel,
        ParamKey::Pick,
        ParamKey::Ws1,
        ParamKey::Bs1,
        ParamKey::Ws2,
        ParamKey::Bs2,
        ParamKey::WProj,
        ParamKey::Fuse1,
        ParamKey::FuseB1,
        ParamKey::Fuse2,
        ParamKey::FuseB2,
        ParamKey::Wz,
        ParamKey::Uz,
        ParamKey::Wr,
        ParamKey::Ur,
        ParamKey::Wg,
        ParamKey::Ug,
        ParamKey::W1,
        ParamKey::B1,
        ParamKey::W2,
        ParamKey::B2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamKey::WIn => "w_in",
            ParamKey::WItem => "w_item",
            ParamKey::WRel => "w_rel",
            ParamKey::Pick => "pick",
            ParamKey::Ws1 => "w_s1",
            ParamKey::Bs1 => "b_s1",
            ParamKey::Ws2 => "w_s2",
            ParamKey::Bs2 => "b_s2",
            ParamKey::WProj => "w_proj",
            ParamKey::Fuse1 => "fuse_1",
            ParamKey::FuseB1 => "fuse_b1",
            ParamKey::Fuse2 => "fuse_2",
            ParamKey::FuseB2 => "fuse_b2",
            ParamKey::Wz => "w_z",
            ParamKey::Uz => "u_z",
            ParamKey::Wr => "w_r",
            ParamKey::Ur => "u_r",
            ParamKey::Wg => "w_g",
            ParamKey::Ug => "u_g",
            ParamKey::W1 => "w_1",
            ParamKey::B1 => "b_1",
            ParamKey::W2 => "w_2",
            ParamKey::B2 => "b_2",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamKey> {
        ParamKey::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Parameters that also receive the scale-prediction loss.
    pub fn gnn_path(self) -> bool {
        matches!(
            self,
            ParamKey::WIn
                | ParamKey::WItem
                | ParamKey::WRel
                | ParamKey::Pick
                | ParamKey::Ws1
                | ParamKey::Bs1
                | ParamKey::Ws2
                | ParamKey::Bs2
        )
    }

    pub fn scale_head(self) -> bool {
        matches!(self, ParamKey::Ws1 | ParamKey::Bs1 | ParamKey::Ws2 | ParamKey::Bs2)
    }

    pub fn gru(self) -> bool {
        matches!(
            self,
            ParamKey::Wz | ParamKey::Uz | ParamKey::Wr | ParamKey::Ur | ParamKey::Wg | ParamKey::Ug
        )
    }

    pub fn prediction_head(self) -> bool {
        matches!(self, ParamKey::W1 | ParamKey::B1 | ParamKey::W2 | ParamKey::B2)
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamKey::Bs1 | ParamKey::Bs2 | ParamKey::FuseB1 | ParamKey::FuseB2 | ParamKey::B1 | ParamKey::B2
        )
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of every parameter the configuration uses.
/// Shrinks the Glorot bound of the two gate vectors. The gate product is
/// unnormalized, so full-size init compounds across layers and diverges.
pub const GATE_INIT_SCALE: f64 = 0.1;

pub fn param_shapes(config: &ModelConfig, feature_dim: usize) -> BTreeMap<ParamKey, [usize; 2]> {
    use ParamKey::*;
    let d = config.d_h;
    let hh = config.head_hidden;
    let mut s = BTreeMap::new();
    s.insert(WProj, [feature_dim, d]);
    if !config.no_graph {
        let g = config.graph_width();
        let v = config.fused_width();
        s.insert(WIn, [USER_FEATURES, d]);
        if !config.no_coupling {
            s.insert(WItem, [d, 1]);
            s.insert(WRel, [d, 1]);
            s.insert(Fuse1, [v, v]);
            s.insert(FuseB1, [1, v]);
            s.insert(Fuse2, [v, v]);
            s.insert(FuseB2, [1, v]);
        }
        if !config.no_pickgate {
            s.insert(Pick, [d, 1]);
        }
        s.insert(Ws1, [g, hh]);
        s.insert(Bs1, [1, hh]);
        s.insert(Ws2, [hh, 1]);
        s.insert(Bs2, [1, 1]);
    }
    let c = config.fused_width();
    let head_in = if config.no_dynamics {
        c * config.time_steps
    } else {
        for (w, u) in [(Wz, Uz), (Wr, Ur), (Wg, Ug)] {
            s.insert(w, [c, config.d_i]);
            s.insert(u, [config.d_i, config.d_i]);
        }
        config.d_i
    };
    s.insert(W1, [head_in, hh]);
    s.insert(B1, [1, hh]);
    s.insert(W2, [hh, 2]);
    s.insert(B2, [1, 2]);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub tensors: BTreeMap<ParamKey, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    feature_dim: usize,
    params: Vec<NamedTensor>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases; the prediction bias starts
    /// positive so both ReLU'd logits are live at the first step.
    pub fn init(config: &ModelConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(ModelError::Config("item feature width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_shapes(config, feature_dim)
            .into_iter()
            .map(|(key, [r, c])| {
                let data = if key == ParamKey::B2 {
                    vec![0.5; r * c]
                } else if key.is_bias() {
                    vec![0.0; r * c]
                } else {
                    let mut bound = (6.0 / (r + c) as f64).sqrt();
                    if matches!(key, ParamKey::WItem | ParamKey::WRel) {
                        bound *= GATE_INIT_SCALE;
                    }
                    (0..r * c).map(|_| rng.random_range(-bound..bound)).collect()
                };
                (key, Tensor::new(vec![r, c], data).expect("nonzero shape"))
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            feature_dim,
            tensors,
        })
    }

    pub fn get(&self, key: ParamKey) -> Option<&Tensor> {
        self.tensors.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.tensors.keys().copied()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn load(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.tensors.iter().map(|(&k, t)| (k, tape.param(t.clone()))).collect())
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            feature_dim: self.feature_dim,
            params: self
                .tensors
                .iter()
                .map(|(k, t)| NamedTensor {
                    name: k.name().to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.config.validate()?;
        let expected = param_shapes(&ck.config, ck.feature_dim);
        let mut tensors = BTreeMap::new();
        for p in ck.params {
            let key = ParamKey::from_name(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter `{}`", p.name)))?;
            match expected.get(&key) {
                Some(shape) if shape[..] == p.shape[..] => {}
                _ => {
                    return Err(ModelError::Checkpoint(format!(
                        "parameter `{}` has shape {:?}, config expects {:?}",
                        p.name,
                        p.shape,
                        expected.get(&key)
                    )))
                }
            }
            tensors.insert(key, Tensor::new(p.shape, p.data)?);
        }
        if let Some(missing) = expected.keys().find(|k| !tensors.contains_key(k)) {
            return Err(ModelError::Checkpoint(format!("missing parameter `{missing}`")));
        }
        Ok(ModelParams {
            config: ck.config,
            feature_dim: ck.feature_dim,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Handles to the parameter leaves of one tape.
#[derive(Debug, Clone)]
pub struct ParamVars(BTreeMap<ParamKey, Var>);

impl ParamVars {
    pub fn get(&self, key: ParamKey) -> Var {
        *self
            .0
            .get(&key)
            .unwrap_or_else(|| panic!("parameter {key} not in this configuration"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, Var)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }
}

/// Row vector of ones as a `rows × 1` column, for broadcasting a `1 × n` row.
fn broadcast_rows(tape: &mut Tape, row: Var, rows: usize) -> Result<Var> {
    let ones = tape.constant(Tensor::ones(&[rows, 1]));
    Ok(tape.matmul(ones, row)?)
}

/// `x · w + b`.
fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add(xw, b)?)
}

/// Both directions of every edge as `(u, v)`: `u` is updated from `v`.
pub fn directed_pairs(snapshot: &DiffusionSnapshot) -> (Vec<usize>, Vec<usize>) {
    let mut us = Vec::with_capacity(2 * snapshot.edges.len());
    let mut vs = Vec::with_capacity(2 * snapshot.edges.len());
    for &(s, r) in &snapshot.edges {
        us.push(r);
        vs.push(s);
        us.push(s);
        vs.push(r);
    }
    (us, vs)
}

/// DiffGate weight for every `(us[k], vs[k])` pair of rows of `h`, as a `P × 1` column.
pub fn diff_gate(
    tape: &mut Tape,
    p: &ParamVars,
    config: &ModelConfig,
    h: Var,
    i_prev: Var,
    us: &[usize],
    vs: &[usize],
) -> Result<Var> {
    let n = tape.value(h).rows();
    let i_rows = broadcast_rows(tape, i_prev, n)?;
    let diff = tape.sub(h, i_rows)?;
    let item_score = tape.matmul(diff, p.get(ParamKey::WItem))?;
    let a_item = tape.gather_rows(item_score, us)?;
    let hu = tape.gather_rows(h, us)?;
    let hv = tape.gather_rows(h, vs)?;
    let joint = tape.mul(hu, hv)?;
    let a_rel = tape.matmul(joint, p.get(ParamKey::WRel))?;
    let a = tape.mul(a_item, a_rel)?;
    Ok(if config.sigmoid_gate { tape.sigmoid(a) } else { a })
}

/// One residual layer: `h_u + Σ_{v ∈ N(u)} a_uv · h_v` over the undirected edge multiset.
pub fn propagate(
    tape: &mut Tape,
    p: &ParamVars,
    config: &ModelConfig,
    snapshot: &DiffusionSnapshot,
    h: Var,
    i_prev: Var,
) -> Result<Var> {
    if snapshot.edges.is_empty() {
        return Ok(h);
    }
    let (us, vs) = directed_pairs(snapshot);
    let n = tape.value(h).rows();
    let hv = tape.gather_rows(h, &vs)?;
    let messages = if config.no_coupling {
        hv
    } else {
        let a = diff_gate(tape, p, config, h, i_prev, &us, &vs)?;
        let ones = tape.constant(Tensor::ones(&[1, config.d_h]));
        let a_wide = tape.matmul(a, ones)?;
        tape.mul(a_wide, hv)?
    };
    let agg = tape.scatter_add_rows(messages, &us, n)?;
    Ok(tape.add(h, agg)?)
}

/// Indices of the `⌈K·S⌉` highest scores, ties by index ascending, returned in ascending order.
pub fn pick_gate(scores: &[f64], ratio: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let k = ((ratio * scores.len() as f64 - 1e-9).ceil() as usize).clamp(1, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// `sum(h) ‖ sum(h[picked])`, or just `sum(h)` without a pick.
pub fn readout(tape: &mut Tape, h: Var, picked: Option<&[usize]>) -> Result<Var> {
    let all = tape.sum_rows(h)?;
    match picked {
        None => Ok(all),
        Some(idx) => {
            let rows = tape.gather_rows(h, idx)?;
            let sub = tape.sum_rows(rows)?;
            Ok(tape.concat(&[all, sub])?)
        }
    }
}

pub fn scale_head(tape: &mut Tape, p: &ParamVars, g: Var) -> Result<Var> {
    let hidden = dense(tape, g, p.get(ParamKey::Ws1), p.get(ParamKey::Bs1))?;
    let hidden = tape.relu(hidden);
    dense(tape, hidden, p.get(ParamKey::Ws2), p.get(ParamKey::Bs2))
}

/// `C = softmax(MLP(v)) ⊙ v` with `v = g ‖ x·W`; `C = v` without coupling.
pub fn fuse_gate(tape: &mut Tape, p: &ParamVars, config: &ModelConfig, g: Var, x: Var) -> Result<Var> {
    let proj = tape.matmul(x, p.get(ParamKey::WProj))?;
    let v = tape.concat(&[g, proj])?;
    if config.no_coupling {
        return Ok(v);
    }
    let hidden = dense(tape, v, p.get(ParamKey::Fuse1), p.get(ParamKey::FuseB1))?;
    let hidden = tape.relu(hidden);
    let logits = dense(tape, hidden, p.get(ParamKey::Fuse2), p.get(ParamKey::FuseB2))?;
    let gate = tape.softmax(logits);
    Ok(tape.mul(gate, v)?)
}

pub fn gru_step(tape: &mut Tape, p: &ParamVars, c: Var, i_prev: Var) -> Result<Var> {
    let gate = |tape: &mut Tape, w: ParamKey, u: ParamKey, state: Var| -> Result<Var> {
        let a = tape.matmul(c, p.get(w))?;
        let b = tape.matmul(state, p.get(u))?;
        Ok(tape.add(a, b)?)
    };
    let z = gate(tape, ParamKey::Wz, ParamKey::Uz, i_prev)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, ParamKey::Wr, ParamKey::Ur, i_prev)?;
    let r = tape.sigmoid(r);
    let reset = tape.mul(r, i_prev)?;
    let cand = gate(tape, ParamKey::Wg, ParamKey::Ug, reset)?;
    let cand = tape.tanh(cand);
    // (1 - z) ⊙ I + z ⊙ Î  ==  I + z ⊙ (Î - I)
    let delta = tape.sub(cand, i_prev)?;
    let step = tape.mul(z, delta)?;
    Ok(tape.add(i_prev, step)?)
}

/// Class probabilities `softmax(ReLU(logits))` as a `1 × 2` row.
pub fn predict_head(tape: &mut Tape, p: &ParamVars, state: Var) -> Result<Var> {
    let hidden = dense(tape, state, p.get(ParamKey::W1), p.get(ParamKey::B1))?;
    let hidden = tape.relu(hidden);
    let logits = dense(tape, hidden, p.get(ParamKey::W2), p.get(ParamKey::B2))?;
    let logits = tape.relu(logits);
    Ok(tape.softmax(logits))
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `1 × 1` positive-class probability.
    pub y_hat: Var,
    pub probs: Var,
    /// Predicted scale of week `t + 1` from step `t`, for `t < T - 1`.
    pub scale_preds: Vec<Var>,
    /// `g^t` per step; `None` without the graph path.
    pub graphs: Vec<Option<Var>>,
    pub fused: Vec<Var>,
    /// `I^t` per step; empty without dynamics.
    pub states: Vec<Var>,
}

/// Graph representation of one snapshot; the zero vector for an empty week.
fn encode_snapshot(
    tape: &mut Tape,
    p: &ParamVars,
    config: &ModelConfig,
    snapshot: Option<&DiffusionSnapshot>,
    i_prev: Var,
) -> Result<Var> {
    let snapshot = match snapshot {
        Some(s) if !s.is_empty() => s,
        _ => return Ok(tape.constant(Tensor::zeros(&[1, config.graph_width()]))),
    };
    let m = tape.constant(Tensor::new(
        vec![snapshot.scale(), USER_FEATURES],
        snapshot.user_features.clone(),
    )?);
    let mut h = tape.matmul(m, p.get(ParamKey::WIn))?;
    for _ in 0..config.layers {
        h = propagate(tape, p, config, snapshot, h, i_prev)?;
    }
    if config.no_pickgate {
        return readout(tape, h, None);
    }
    let pick = tape.value(p.get(ParamKey::Pick));
    let scores = tape
        .value(h)
        .data()
        .chunks(config.d_h)
        .map(|row| row.iter().zip(pick.data()).map(|(a, b)| a * b).sum())
        .collect::<Vec<f64>>();
    let picked = pick_gate(&scores, config.pick_ratio);
    readout(tape, h, Some(&picked))
}

pub fn forward(tape: &mut Tape, p: &ParamVars, config: &ModelConfig, ex: &ItemExample<'_>) -> Result<ForwardOutput> {
    let steps = config.time_steps;
    if ex.steps() != steps || ex.features.len() != steps * ex.feature_dim {
        return Err(ModelError::Input(format!(
            "expected {steps} snapshots and feature rows, got {} and {}",
            ex.steps(),
            ex.features.len() / ex.feature_dim.max(1)
        )));
    }
    let ones = tape.constant(Tensor::ones(&[1, config.d_i]));
    let mut state = ones;
    let mut out = ForwardOutput {
        y_hat: ones,
        probs: ones,
        scale_preds: Vec::new(),
        graphs: Vec::new(),
        fused: Vec::new(),
        states: Vec::new(),
    };
    for t in 0..steps {
        let x = tape.constant(Tensor::row(ex.feature_row(t)));
        let c = if config.no_graph {
            out.graphs.push(None);
            tape.matmul(x, p.get(ParamKey::WProj))?
        } else {
            let g = encode_snapshot(tape, p, config, ex.snapshots[t], state)?;
            if t + 1 < steps && config.multitask() {
                out.scale_preds.push(scale_head(tape, p, g)?);
            }
            out.graphs.push(Some(g));
            fuse_gate(tape, p, config, g, x)?
        };
        out.fused.push(c);
        if !config.no_dynamics {
            state = gru_step(tape, p, c, state)?;
            out.states.push(state);
        }
    }
    let head_in = if config.no_dynamics {
        tape.concat(&out.fused)?
    } else {
        state
    };
    out.probs = predict_head(tape, p, head_in)?;
    let pick_positive = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0])?);
    out.y_hat = tape.matmul(out.probs, pick_positive)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Scale loss; `None` when the scale head is off or `T = 1`.
    pub scale: Option<Var>,
    pub bce: Var,
    pub total: Var,
}

/// Per-item losses; averaging over a batch is the caller's job.
pub fn losses(tape: &mut Tape, out: &ForwardOutput, ex: &ItemExample<'_>) -> Result<LossVars> {
    let y = tape.clamp(out.y_hat, 1e-12, 1.0 - 1e-12);
    let bce = if ex.label {
        let l = tape.log(y);
        tape.affine(l, -1.0, 0.0)
    } else {
        let comp = tape.affine(y, -1.0, 1.0);
        let l = tape.log(comp);
        tape.affine(l, -1.0, 0.0)
    };
    let scales = ex.scales();
    let mut terms = Vec::with_capacity(out.scale_preds.len());
    for (t, &pred) in out.scale_preds.iter().enumerate() {
        let s = scales[t + 1];
        if s < 0.0 {
            return Err(ModelError::Input(format!("negative scale {s}")));
        }
        let denom = s.max(1.0);
        let rel = tape.affine(pred, 1.0 / denom, -s / denom);
        terms.push(tape.mul(rel, rel)?);
    }
    let scale = match terms.as_slice() {
        [] => None,
        _ => {
            let row = tape.concat(&terms)?;
            Some(tape.sum_all(row))
        }
    };
    let total = match scale {
        Some(s) => tape.add(s, bce)?,
        None => bce,
    };
    Ok(LossVars { scale, bce, total })
}

/// Positive-class probability for one example.
pub fn predict(params: &ModelParams, ex: &ItemExample<'_>) -> Result<f64> {
    let mut tape = Tape::with_capacity(512);
    let vars = params.load(&mut tape);
    let out = forward(&mut tape, &vars, &params.config, ex)?;
    Ok(tape.value(out.y_hat).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::sigmoid;

    fn snapshot(features: Vec<f64>, edges: Vec<(usize, usize)>) -> DiffusionSnapshot {
        let n = features.len() / USER_FEATURES;
        DiffusionSnapshot {
            week: 0,
            nodes: (0..n as u64).collect(),
            edges,
            user_features: features,
        }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_h: 2,
            d_i: 2,
            head_hidden: 2,
            layers: 1,
            time_steps: 2,
            pick_ratio: 0.5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_rules() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig {
            d_i: 3,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            pick_ratio: 0.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            layers: 0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        let c = ModelConfig::default();
        assert_eq!((c.layers, c.time_steps), (2, 4));
    }

    #[test]
    fn diff_gate_example() {
        let cfg = tiny_config();
        let mut tape = Tape::new();
        let p = ParamVars(
            [
                (
                    ParamKey::WItem,
                    tape.param(Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()),
                ),
                (
                    ParamKey::WRel,
                    tape.param(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap()),
                ),
            ]
            .into_iter()
            .collect(),
        );
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = tape.constant(Tensor::row(&[1.0, 1.0]));
        let a = diff_gate(&mut tape, &p, &cfg, h, i, &[0, 1], &[1, 0]).unwrap();
        // a_item(u=0) = 0, a_r = 2*4 = 8; a_item(u=1) = 2, a_r = 8
        assert_eq!(tape.value(a).data(), &[0.0, 16.0]);
        let s = diff_gate(
            &mut tape,
            &p,
            &ModelConfig {
                sigmoid_gate: true,
                ..cfg
            },
            h,
            i,
            &[0],
            &[1],
        )
        .unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn zero_relation_vector_kills_all_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, 3, 1).unwrap();
        params.tensors.insert(ParamKey::WRel, Tensor::zeros(&[2, 1]));
        let snap = snapshot(rand_vec(&mut rng, 3 * USER_FEATURES), vec![(0, 1), (1, 2), (0, 2)]);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let h = tape.constant(Tensor::new(vec![3, 2], rand_vec(&mut rng, 6)).unwrap());
        let i = tape.constant(Tensor::row(&[0.3, -0.2]));
        let (us, vs) = directed_pairs(&snap);
        let a = diff_gate(&mut tape, &p, &cfg, h, i, &us, &vs).unwrap();
        assert!(tape.value(a).data().iter().all(|&x| x == 0.0));
    }

    /// Dense-adjacency recomputation of one propagation layer.
    fn dense_layer(
        h: &[Vec<f64>],
        edges: &[(usize, usize)],
        w_item: &[f64],
        w_rel: &[f64],
        i: &[f64],
    ) -> Vec<Vec<f64>> {
        let n = h.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut count = vec![vec![0usize; n]; n];
        for &(s, r) in edges {
            count[s][r] += 1;
            count[r][s] += 1;
        }
        (0..n)
            .map(|u| {
                let mut out = h[u].clone();
                for v in 0..n {
                    let diff: Vec<f64> = h[u].iter().zip(i).map(|(a, b)| a - b).collect();
                    let joint: Vec<f64> = h[u].iter().zip(&h[v]).map(|(a, b)| a * b).collect();
                    let a = dot(w_item, &diff) * dot(w_rel, &joint);
                    for (o, x) in out.iter_mut().zip(&h[v]) {
                        *o += count[u][v] as f64 * a * x;
                    }
                }
                out
            })
            .collect()
    }

    #[test]
    fn propagate_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ModelConfig {
            d_h: 3,
            d_i: 3,
            ..tiny_config()
        };
        for edges in [vec![(0, 1), (1, 2)], vec![(0, 1), (0, 1), (2, 1)], vec![(0, 2)]] {
            let params = ModelParams::init(&cfg, 2, rng.random()).unwrap();
            let snap = snapshot(vec![0.0; 3 * USER_FEATURES], edges.clone());
            let hv: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();
            let iv = rand_vec(&mut rng, 3);
            let mut tape = Tape::new();
            let p = params.load(&mut tape);
            let h = tape.constant(Tensor::from_rows(&hv).unwrap());
            let i = tape.constant(Tensor::row(&iv));
            let out = propagate(&mut tape, &p, &cfg, &snap, h, i).unwrap();
            let expect = dense_layer(
                &hv,
                &edges,
                params.get(ParamKey::WItem).unwrap().data(),
                params.get(ParamKey::WRel).unwrap().data(),
                &iv,
            );
            for (got, want) in tape.value(out).data().chunks(3).zip(&expect) {
                for (g, w) in got.iter().zip(want) {
                    assert!((g - w).abs() < 1e-12, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn isolated_and_unit_weight_propagation() {
        let cfg = ModelConfig {
            no_coupling: true,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, 2, 0).unwrap();
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0], vec![5.0, 5.0]]).unwrap());
        let i = tape.constant(Tensor::row(&[1.0, 1.0]));
        // Edge 0 -> 1 with unit weight; node 2 isolated.
        let snap = snapshot(vec![0.0; 3 * USER_FEATURES], vec![(0, 1)]);
        let out = propagate(&mut tape, &p, &cfg, &snap, h, i).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0, 22.0, 11.0, 22.0, 5.0, 5.0]);
        let lonely = snapshot(vec![0.0; USER_FEATURES], vec![]);
        let h1 = tape.constant(Tensor::row(&[3.0, 4.0]));
        let same = propagate(&mut tape, &p, &cfg, &lonely, h1, i).unwrap();
        assert_eq!(tape.value(same).data(), &[3.0, 4.0]);
    }

    #[test]
    fn pick_gate_examples() {
        assert_eq!(pick_gate(&[0.7], 0.01), vec![0]);
        assert_eq!(pick_gate(&[3.0, 1.0, 2.0, 0.0], 0.5), vec![0, 2]);
        assert_eq!(pick_gate(&[1.0, 1.0, 1.0], 0.34), vec![0, 1]);
        assert!(pick_gate(&[], 0.5).is_empty());
    }

    #[test]
    fn readout_examples() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap());
        let g = readout(&mut tape, h, Some(&[1])).unwrap();
        assert_eq!(tape.value(g).data(), &[4.0, 7.0, 3.0, 5.0]);
        let single = tape.constant(Tensor::row(&[2.0, -1.0]));
        let g = readout(&mut tape, single, Some(&[0])).unwrap();
        assert_eq!(tape.value(g).data(), &[2.0, -1.0, 2.0, -1.0]);
        let g = readout(&mut tape, h, None).unwrap();
        assert_eq!(tape.value(g).data(), &[4.0, 7.0]);
    }

    fn zeroed(cfg: &ModelConfig, feature_dim: usize) -> ModelParams {
        let mut p = ModelParams::init(cfg, feature_dim, 0).unwrap();
        for t in p.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        p
    }

    #[test]
    fn scale_head_examples() {
        let cfg = tiny_config();
        let mut params = zeroed(&cfg, 2);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let g = tape.constant(Tensor::row(&[1.0, -2.0, 3.0, 4.0]));
        let s = scale_head(&mut tape, &p, g).unwrap();
        assert_eq!(tape.value(s).item(), 0.0);

        params.tensors.insert(ParamKey::Bs2, Tensor::scalar(2.5));
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let g = tape.constant(Tensor::row(&[1.0, -2.0, 3.0, 4.0]));
        let s = scale_head(&mut tape, &p, g).unwrap();
        assert_eq!(tape.value(s).item(), 2.5);

        let params = ModelParams::init(&cfg, 2, 9).unwrap();
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let gv = [0.3, -0.7, 1.1, 0.2];
        let g = tape.constant(Tensor::row(&gv));
        let s = scale_head(&mut tape, &p, g).unwrap();
        let s = tape.value(s).item();
        let w1 = params.get(ParamKey::Ws1).unwrap();
        let w2 = params.get(ParamKey::Ws2).unwrap();
        let mut want = params.get(ParamKey::Bs2).unwrap().item();
        for j in 0..2 {
            let pre: f64 =
                (0..4).map(|k| gv[k] * w1.get(k, j)).sum::<f64>() + params.get(ParamKey::Bs1).unwrap().get(0, j);
            want += pre.max(0.0) * w2.get(j, 0);
        }
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn fuse_gate_examples() {
        let cfg = tiny_config();
        let mut params = zeroed(&cfg, 2);
        params.tensors.insert(
            ParamKey::WProj,
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let g = tape.constant(Tensor::row(&[1.0, 2.0, 3.0, 4.0]));
        let x = tape.constant(Tensor::row(&[5.0, 6.0]));
        let c = fuse_gate(&mut tape, &p, &cfg, g, x).unwrap();
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        for (got, want) in tape.value(c).data().iter().zip(v) {
            assert!((got - want / 6.0).abs() < 1e-15);
        }
        let zero_g = tape.constant(Tensor::zeros(&[1, 4]));
        let zero_x = tape.constant(Tensor::zeros(&[1, 2]));
        let c = fuse_gate(&mut tape, &p, &cfg, zero_g, zero_x).unwrap();
        assert!(tape.value(c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gru_with_zero_params_halves_state() {
        let cfg = tiny_config();
        let params = zeroed(&cfg, 2);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let c = tape.constant(Tensor::row(&[0.4, 0.1, 0.9, -3.0, 2.0, 7.0]));
        let i = tape.constant(Tensor::row(&[1.0, 1.0]));
        let next = gru_step(&mut tape, &p, c, i).unwrap();
        assert_eq!(tape.value(next).data(), &[0.5, 0.5]);
    }

    #[test]
    fn predict_head_bounds() {
        let cfg = tiny_config();
        let params = zeroed(&cfg, 2);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let s = tape.constant(Tensor::row(&[1.0, 2.0]));
        let probs = predict_head(&mut tape, &p, s).unwrap();
        assert_eq!(tape.value(probs).data(), &[0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..50 {
            let params = ModelParams::init(&cfg, 2, seed).unwrap();
            let mut tape = Tape::new();
            let p = params.load(&mut tape);
            let sv = rand_vec(&mut rng, 2);
            let s = tape.constant(Tensor::row(&sv));
            let probs = predict_head(&mut tape, &p, s).unwrap();
            let probs = tape.value(probs).clone();
            let y = probs.data()[1];
            assert!((0.0..=1.0).contains(&y));
            assert!((probs.data()[0] + y - 1.0).abs() < 1e-12);
            // recompute logits to get M = max positive logit
            let w1 = params.get(ParamKey::W1).unwrap();
            let w2 = params.get(ParamKey::W2).unwrap();
            let b2 = params.get(ParamKey::B2).unwrap();
            let hidden: Vec<f64> = (0..2)
                .map(|j| (sv[0] * w1.get(0, j) + sv[1] * w1.get(1, j)).max(0.0))
                .collect();
            let logits: Vec<f64> = (0..2)
                .map(|c| hidden[0] * w2.get(0, c) + hidden[1] * w2.get(1, c) + b2.get(0, c))
                .collect();
            let m = logits.iter().cloned().fold(0.0, f64::max);
            let floor = 1.0 / (1.0 + m.exp());
            assert!(y + 1e-12 >= floor);
        }
    }

    fn example<'a>(snaps: &'a [DiffusionSnapshot], features: Vec<f64>, dim: usize, label: bool) -> ItemExample<'a> {
        ItemExample {
            item_id: 1,
            snapshots: snaps
                .iter()
                .map(|s| if s.is_empty() { None } else { Some(s) })
                .collect(),
            features,
            feature_dim: dim,
            label,
        }
    }

    #[test]
    fn single_step_has_no_scale_predictions() {
        let cfg = ModelConfig {
            time_steps: 1,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, 2, 0).unwrap();
        let snaps = [snapshot(vec![0.5; 2 * USER_FEATURES], vec![(0, 1)])];
        let ex = example(&snaps, vec![0.1, 0.2], 2, true);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let out = forward(&mut tape, &p, &cfg, &ex).unwrap();
        assert!(out.scale_preds.is_empty());
        let y = tape.value(out.y_hat).item();
        assert!((0.0..=1.0).contains(&y));
        let l = losses(&mut tape, &out, &ex).unwrap();
        assert!(l.scale.is_none());
    }

    #[test]
    fn length_mismatch_is_an_input_error() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 2, 0).unwrap();
        let snaps = [DiffusionSnapshot::empty(0)];
        let ex = example(&snaps, vec![0.1, 0.2], 2, true);
        assert!(matches!(predict(&params, &ex), Err(ModelError::Input(_))));
    }

    #[test]
    fn ablation_parameter_sets() {
        let both = ModelConfig {
            no_graph: true,
            no_dynamics: true,
            ..ModelConfig::default()
        };
        let shapes = param_shapes(&both, 5);
        let keys: Vec<ParamKey> = shapes.keys().copied().collect();
        assert_eq!(
            keys,
            vec![ParamKey::WProj, ParamKey::W1, ParamKey::B1, ParamKey::W2, ParamKey::B2]
        );
        assert_eq!(shapes[&ParamKey::W1], [8 * 4, 8]);
        let full = param_shapes(&ModelConfig::default(), 5);
        assert_eq!(full.len(), ParamKey::ALL.len());
        let nc = param_shapes(
            &ModelConfig {
                no_coupling: true,
                ..ModelConfig::default()
            },
            5,
        );
        assert!(!nc.contains_key(&ParamKey::WItem) && !nc.contains_key(&ParamKey::Fuse1));
        assert!(!param_shapes(
            &ModelConfig {
                no_pickgate: true,
                ..ModelConfig::default()
            },
            5
        )
        .contains_key(&ParamKey::Pick));
    }

    #[test]
    fn loss_examples() {
        let cfg = ModelConfig {
            time_steps: 3,
            ..tiny_config()
        };
        let params = zeroed(&cfg, 2);
        let snaps = [
            snapshot(vec![0.5; 2 * USER_FEATURES], vec![(0, 1)]),
            snapshot(vec![0.5; 3 * USER_FEATURES], vec![(0, 1), (1, 2)]),
            snapshot(vec![0.5; 4 * USER_FEATURES], vec![(0, 1), (2, 3)]),
        ];
        let ex = example(&snaps, vec![0.0; 6], 2, true);
        let mut tape = Tape::new();
        let p = params.load(&mut tape);
        let out = forward(&mut tape, &p, &cfg, &ex).unwrap();
        // All-zero params: ŷ = 0.5 and ŝ = 0 against targets 3 and 4.
        let l = losses(&mut tape, &out, &ex).unwrap();
        assert!((tape.value(l.bce).item() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(tape.value(l.scale.unwrap()).item(), 2.0);

        // ŝ = 2s gives one per term; ŝ = s gives zero.
        for (preds, want) in [([6.0, 8.0], 2.0), ([3.0, 4.0], 0.0)] {
            let mut tape = Tape::new();
            let scale_preds = preds.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect();
            let y_hat = tape.constant(Tensor::scalar(0.5));
            let fake = ForwardOutput {
                scale_preds,
                y_hat,
                ..out.clone()
            };
            let l = losses(&mut tape, &fake, &ex).unwrap();
            assert_eq!(tape.value(l.scale.unwrap()).item(), want);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig {
                no_graph: true,
                no_dynamics: true,
                ..ModelConfig::default()
            },
            ModelConfig {
                no_coupling: true,
                no_pickgate: true,
                ..ModelConfig::default()
            },
        ] {
            let params = ModelParams::init(&cfg, 7, 42).unwrap();
            let back = ModelParams::from_json(&params.to_json()).unwrap();
            assert_eq!(back, params);
            for (a, b) in params.tensors.values().zip(back.tensors.values()) {
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        let text = ModelParams::init(&ModelConfig::default(), 7, 1).unwrap().to_json();
        assert!(ModelParams::from_json(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
        assert!(ModelParams::from_json(&text.replace("\"w_in\"", "\"w_zz\"")).is_err());
    }

    /// Hand-rolled forward pass for d = 2, L = 1, T = 2, two nodes joined by
    /// one edge each week, written without any of the model functions.
    #[test]
    fn straight_line_recomputation() {
        let cfg = tiny_config();
        let dx = 2;
        let params = ModelParams::init(&cfg, dx, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m0 = rand_vec(&mut rng, 2 * USER_FEATURES)
            .iter()
            .map(|x| x.abs())
            .collect::<Vec<_>>();
        let m1 = rand_vec(&mut rng, 2 * USER_FEATURES)
            .iter()
            .map(|x| x.abs())
            .collect::<Vec<_>>();
        let xs = rand_vec(&mut rng, 2 * dx);
        let snaps = [snapshot(m0.clone(), vec![(0, 1)]), snapshot(m1.clone(), vec![(1, 0)])];
        let ex = example(&snaps, xs.clone(), dx, true);
        let got = predict(&params, &ex).unwrap();

        let w = |k: ParamKey| params.get(k).unwrap();
        let vecmat = |x: &[f64], m: &Tensor| -> Vec<f64> {
            (0..m.cols())
                .map(|j| (0..m.rows()).map(|i| x[i] * m.get(i, j)).sum())
                .collect()
        };
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let relu = |a: Vec<f64>| -> Vec<f64> { a.into_iter().map(|x| x.max(0.0)).collect() };
        let softmax = |a: &[f64]| -> Vec<f64> {
            let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = a.iter().map(|x| (x - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        let mut state = vec![1.0, 1.0];
        for (t, m) in [m0, m1].iter().enumerate() {
            let h: Vec<Vec<f64>> = (0..2)
                .map(|n| vecmat(&m[n * USER_FEATURES..(n + 1) * USER_FEATURES], w(ParamKey::WIn)))
                .collect();
            let wi = w(ParamKey::WItem).data();
            let wr = w(ParamKey::WRel).data();
            let gate = |u: usize, v: usize| -> f64 {
                let ai = wi[0] * (h[u][0] - state[0]) + wi[1] * (h[u][1] - state[1]);
                let ar = wr[0] * h[u][0] * h[v][0] + wr[1] * h[u][1] * h[v][1];
                ai * ar
            };
            let (a01, a10) = (gate(0, 1), gate(1, 0));
            let h0 = [h[0][0] + a01 * h[1][0], h[0][1] + a01 * h[1][1]];
            let h1 = [h[1][0] + a10 * h[0][0], h[1][1] + a10 * h[0][1]];
            let p = w(ParamKey::Pick).data();
            let s0 = h0[0] * p[0] + h0[1] * p[1];
            let s1 = h1[0] * p[0] + h1[1] * p[1];
            let best = if s1 > s0 { h1 } else { h0 };
            let g = [h0[0] + h1[0], h0[1] + h1[1], best[0], best[1]];
            let proj = vecmat(&xs[t * dx..(t + 1) * dx], w(ParamKey::WProj));
            let v: Vec<f64> = g.iter().chain(&proj).copied().collect();
            let hid = relu(add(&vecmat(&v, w(ParamKey::Fuse1)), w(ParamKey::FuseB1).data()));
            let gate_w = softmax(&add(&vecmat(&hid, w(ParamKey::Fuse2)), w(ParamKey::FuseB2).data()));
            let c: Vec<f64> = gate_w.iter().zip(&v).map(|(a, b)| a * b).collect();
            let z: Vec<f64> = add(&vecmat(&c, w(ParamKey::Wz)), &vecmat(&state, w(ParamKey::Uz)))
                .into_iter()
                .map(sigmoid)
                .collect();
            let r: Vec<f64> = add(&vecmat(&c, w(ParamKey::Wr)), &vecmat(&state, w(ParamKey::Ur)))
                .into_iter()
                .map(sigmoid)
                .collect();
            let rs: Vec<f64> = r.iter().zip(&state).map(|(a, b)| a * b).collect();
            let cand: Vec<f64> = add(&vecmat(&c, w(ParamKey::Wg)), &vecmat(&rs, w(ParamKey::Ug)))
                .into_iter()
                .map(f64::tanh)
                .collect();
            state = (0..2).map(|k| (1.0 - z[k]) * state[k] + z[k] * cand[k]).collect();
        }
        let hid = relu(add(&vecmat(&state, w(ParamKey::W1)), w(ParamKey::B1).data()));
        let logits = relu(add(&vecmat(&hid, w(ParamKey::W2)), w(ParamKey::B2).data()));
        let want = softmax(&logits)[1];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}
