//! The spatio-temporal hypergraph network.
//!
//! Forward path for a batch of standardized windows `[B, D, W]`:
//!
//! 1. `mixer_blocks` multi-view mixer blocks (time mixing over each sensor
//!    row, then feature mixing over each timestep column), each followed by
//!    dropout.
//! 2. A shared linear lift of every sensor row from `W` to `channels`.
//! 3. `st_blocks` blocks of gated causal convolution along the channel axis
//!    followed by hypergraph convolution `relu(N · X · Θ)`, each followed by
//!    dropout.
//! 4. Flatten to `D * channels` and a two-layer readout to one scalar.
//!
//! All weight matrices are stored `in × out` and applied as `x · W`.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, ResultExt};
use crate::hypergraph::DegreeMode;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sensors: usize,
    pub window: usize,
    pub mixer_blocks: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub st_blocks: usize,
    pub channels: usize,
    pub dropout: f64,
    pub readout_hidden: usize,
    /// Hyperedge size used to build the sensor hypergraph.
    pub knn_k: usize,
    pub degree_mode: DegreeMode,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sensors: 12,
            window: 85,
            mixer_blocks: 2,
            kernel_size: 7,
            dilation: 1,
            st_blocks: 2,
            channels: 16,
            dropout: 0.2,
            readout_hidden: 64,
            knn_k: 4,
            degree_mode: DegreeMode::Count,
            init_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("sensors", self.sensors),
            ("window", self.window),
            ("kernel_size", self.kernel_size),
            ("dilation", self.dilation),
            ("st_blocks", self.st_blocks),
            ("channels", self.channels),
            ("readout_hidden", self.readout_hidden),
            ("knn_k", self.knn_k),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.mixer_blocks == 0 {
            return Err(Error::Config("mixer_blocks must be positive".into()));
        }
        if self.kernel_size > self.window {
            return Err(Error::InvalidArgument(format!(
                "kernel size {} exceeds window {}",
                self.kernel_size, self.window
            )));
        }
        // the gated convolution runs along the lifted channel axis
        if self.kernel_size > self.channels {
            return Err(Error::InvalidArgument(format!(
                "kernel size {} exceeds channels {}",
                self.kernel_size, self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.knn_k > self.sensors {
            return Err(Error::Config(format!(
                "knn_k {} exceeds sensor count {}",
                self.knn_k, self.sensors
            )));
        }
        Ok(())
    }

    /// Key-value form used in checkpoint headers and run logs.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sensors", self.sensors.to_string()),
            ("window", self.window.to_string()),
            ("mixer_blocks", self.mixer_blocks.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("dilation", self.dilation.to_string()),
            ("st_blocks", self.st_blocks.to_string()),
            ("channels", self.channels.to_string()),
            ("dropout", self.dropout.to_string()),
            ("readout_hidden", self.readout_hidden.to_string()),
            ("knn_k", self.knn_k.to_string()),
            ("degree_mode", self.degree_mode.to_string()),
            ("init_seed", self.init_seed.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(p: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = p
                .get(key)
                .ok_or_else(|| Error::Format(format!("missing model key {key:?}")))?;
            raw.parse()
                .map_err(|_| Error::Format(format!("bad value {raw:?} for model key {key:?}")))
        }
        let cfg = ModelConfig {
            sensors: get(pairs, "sensors")?,
            window: get(pairs, "window")?,
            mixer_blocks: get(pairs, "mixer_blocks")?,
            kernel_size: get(pairs, "kernel_size")?,
            dilation: get(pairs, "dilation")?,
            st_blocks: get(pairs, "st_blocks")?,
            channels: get(pairs, "channels")?,
            dropout: get(pairs, "dropout")?,
            readout_hidden: get(pairs, "readout_hidden")?,
            knn_k: get(pairs, "knn_k")?,
            degree_mode: pairs
                .get("degree_mode")
                .ok_or_else(|| Error::Format("missing model key \"degree_mode\"".into()))?
                .parse()
                .map_err(|e: Error| Error::Format(e.to_string()))?,
            init_seed: get(pairs, "init_seed")?,
        };
        Ok(cfg)
    }
}

/// One named learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Flat, ordered list of every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    params: Vec<Param>,
}

const MIXER_PARAMS: usize = 10;
const ST_PARAMS: usize = 5;

impl ModelParams {
    pub fn from_params(params: Vec<Param>) -> Self {
        ModelParams { params }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn values_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Shapes of every parameter, in registration order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, w, c, k, h) = (
        cfg.sensors,
        cfg.window,
        cfg.channels,
        cfg.kernel_size,
        cfg.readout_hidden,
    );
    let mut out = Vec::new();
    for b in 0..cfg.mixer_blocks {
        let p = |s: &str| format!("mixer{b}.{s}");
        out.push((p("time_norm.gamma"), vec![w]));
        out.push((p("time_norm.beta"), vec![w]));
        out.push((p("time.w"), vec![w, w]));
        out.push((p("time.b"), vec![w]));
        out.push((p("feat_norm.gamma"), vec![d]));
        out.push((p("feat_norm.beta"), vec![d]));
        out.push((p("feat1.w"), vec![d, d]));
        out.push((p("feat1.b"), vec![d]));
        out.push((p("feat2.w"), vec![d, d]));
        out.push((p("feat2.b"), vec![d]));
    }
    out.push(("lift.w".into(), vec![w, c]));
    out.push(("lift.b".into(), vec![c]));
    for b in 0..cfg.st_blocks {
        let p = |s: &str| format!("st{b}.{s}");
        out.push((p("filter.w"), vec![k]));
        out.push((p("filter.b"), vec![1]));
        out.push((p("gate.w"), vec![k]));
        out.push((p("gate.b"), vec![1]));
        out.push((p("theta"), vec![c, c]));
    }
    out.push(("readout.w1".into(), vec![d * c, h]));
    out.push(("readout.b1".into(), vec![h]));
    out.push(("readout.w2".into(), vec![h, 1]));
    out.push(("readout.b2".into(), vec![1]));
    out
}

/// Mixer block parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MixerVars {
    pub time_gamma: Var,
    pub time_beta: Var,
    pub time_w: Var,
    pub time_b: Var,
    pub feat_gamma: Var,
    pub feat_beta: Var,
    pub feat1_w: Var,
    pub feat1_b: Var,
    pub feat2_w: Var,
    pub feat2_b: Var,
}

/// Gated temporal convolution + hypergraph convolution parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StVars {
    pub filter_w: Var,
    pub filter_b: Var,
    pub gate_w: Var,
    pub gate_b: Var,
    pub theta: Var,
}

/// All parameters of a model bound as leaves of one tape. `all` follows the
/// registration order of [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub all: Vec<Var>,
    pub mixers: Vec<MixerVars>,
    pub lift_w: Var,
    pub lift_b: Var,
    pub st: Vec<StVars>,
    pub readout: [Var; 4],
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model: {} tensors, {} parameters",
            self.params.len(),
            self.params.num_scalars()
        )
    }
}

impl Model {
    /// Fresh model: uniform(-a, a) weights with `a = sqrt(1 / fan_in)`,
    /// unit/zero layer-norm affines.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with("norm.gamma") {
                    Tensor::full(&shape, 1.0)
                } else if name.ends_with("norm.beta") {
                    Tensor::zeros(&shape)
                } else {
                    let bound = (1.0 / fan_in(&config, &name) as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape, data).expect("layout shape")
                };
                Param { name, value }
            })
            .collect();
        Ok(Model {
            config,
            params: ModelParams { params },
        })
    }

    /// Model with caller-supplied parameters; names and shapes must match
    /// the layout of `config`.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Dimension(format!(
                "config expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(params.iter()) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let all: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let cfg = &self.config;
        let mixers = (0..cfg.mixer_blocks)
            .map(|b| {
                let v = &all[b * MIXER_PARAMS..(b + 1) * MIXER_PARAMS];
                MixerVars {
                    time_gamma: v[0],
                    time_beta: v[1],
                    time_w: v[2],
                    time_b: v[3],
                    feat_gamma: v[4],
                    feat_beta: v[5],
                    feat1_w: v[6],
                    feat1_b: v[7],
                    feat2_w: v[8],
                    feat2_b: v[9],
                }
            })
            .collect();
        let lift = cfg.mixer_blocks * MIXER_PARAMS;
        let st = (0..cfg.st_blocks)
            .map(|b| {
                let base = lift + 2 + b * ST_PARAMS;
                let v = &all[base..base + ST_PARAMS];
                StVars {
                    filter_w: v[0],
                    filter_b: v[1],
                    gate_w: v[2],
                    gate_b: v[3],
                    theta: v[4],
                }
            })
            .collect();
        let r = lift + 2 + cfg.st_blocks * ST_PARAMS;
        BoundParams {
            lift_w: all[lift],
            lift_b: all[lift + 1],
            readout: [all[r], all[r + 1], all[r + 2], all[r + 3]],
            mixers,
            st,
            all,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (d, w) = (self.config.sensors, self.config.window);
        match x.shape() {
            [b, dd, ww] if *dd == d && *ww == w => Ok(*b),
            [dd, ww] if *dd == d && *ww == w => Ok(1),
            s => Err(Error::Dimension(format!(
                "input {s:?} does not match model ({d} sensors × {w} steps)"
            ))),
        }
    }

    /// Runs the network up to (not including) the flatten + readout stage.
    /// Returns node features of shape `[B, D, channels]`.
    pub fn forward_nodes(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        adjacency: &Tensor,
        x: &Tensor,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let batch = self.check_input(x)?;
        if adjacency.shape() != [cfg.sensors, cfg.sensors] {
            return Err(Error::Dimension(format!(
                "adjacency {:?} for {} sensors",
                adjacency.shape(),
                cfg.sensors
            )));
        }
        let (d, w, c) = (cfg.sensors, cfg.window, cfg.channels);
        let train = dropout_rng.is_some();
        let mut dummy = ChaCha8Rng::seed_from_u64(0);

        let mut h = tape.constant(x.clone().reshape(&[batch, d, w])?);
        for (b, mv) in bound.mixers.iter().enumerate() {
            h = mixer_forward(tape, mv, h).context(|| format!("mixer block {b}"))?;
            let rng = dropout_rng.as_deref_mut().unwrap_or(&mut dummy);
            h = tape.dropout(h, cfg.dropout, rng, train)?;
        }

        let rows = tape.reshape(h, &[batch * d, w])?;
        let lifted = tape.matmul(rows, bound.lift_w).context(|| "width lift".into())?;
        h = tape.add_row_bias(lifted, bound.lift_b)?;

        for (b, sv) in bound.st.iter().enumerate() {
            let ctx = || format!("spatio-temporal block {b}");
            let g = gtc_forward(tape, h, sv, cfg.dilation).context(ctx)?;
            let g = tape.reshape(g, &[batch, d, c])?;
            let conv = hgconv_forward(tape, g, adjacency, sv.theta).context(ctx)?;
            let rng = dropout_rng.as_deref_mut().unwrap_or(&mut dummy);
            let dropped = tape.dropout(conv, cfg.dropout, rng, train)?;
            h = tape.reshape(dropped, &[batch * d, c])?;
        }
        tape.reshape(h, &[batch, d, c])
    }

    /// Full forward pass; returns predictions of shape `[B, 1]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        adjacency: &Tensor,
        x: &Tensor,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let nodes = self.forward_nodes(tape, bound, adjacency, x, dropout_rng)?;
        let batch = tape.value(nodes).shape()[0];
        let flat = tape.reshape(nodes, &[batch, self.config.sensors * self.config.channels])?;
        let [w1, b1, w2, b2] = bound.readout;
        let z = tape.matmul(flat, w1).context(|| "readout".into())?;
        let z = tape.add_row_bias(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        tape.add_row_bias(z, b2)
    }

    /// Eval-mode predictions for a batch of windows `[B, D, W]`.
    pub fn predict_batch(&self, adjacency: &Tensor, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, adjacency, x, None)?;
        let pred = tape.value(out);
        if !pred.is_finite() {
            return Err(Error::Numerical("model produced a non-finite prediction".into()));
        }
        Ok(pred.data().to_vec())
    }

    /// Eval-mode prediction for one `D × W` window.
    pub fn predict(&self, adjacency: &Tensor, window: &Tensor) -> Result<f64> {
        Ok(self.predict_batch(adjacency, window)?[0])
    }
}

fn fan_in(cfg: &ModelConfig, name: &str) -> usize {
    if name.contains(".time.") || name.starts_with("lift.") {
        cfg.window
    } else if name.contains(".feat") {
        cfg.sensors
    } else if name.contains(".filter.") || name.contains(".gate.") {
        cfg.kernel_size
    } else if name.ends_with(".theta") {
        cfg.channels
    } else if name.ends_with('1') {
        cfg.sensors * cfg.channels
    } else {
        cfg.readout_hidden
    }
}

/// One multi-view mixer block on `x` of shape `[B, D, W]` (or `[D, W]`).
///
/// ```text
/// U[i, :] = X[i, :] + relu(LN(X)[i, :] · W1 + b1)               (time mixing)
/// Y[:, j] = U[:, j] + relu(LN(Uᵀ)[j, :] · W2 + b2) · W3 + b3     (feature mixing)
/// ```
pub fn mixer_forward(tape: &mut Tape, p: &MixerVars, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let (d, w) = match shape[..] {
        [_, d, w] | [d, w] => (d, w),
        _ => {
            return Err(Error::Dimension(format!(
                "mixer input must be [B, D, W] or [D, W], got {shape:?}"
            )))
        }
    };
    let batch = tape.value(x).len() / (d * w);
    if tape.value(p.time_w).shape() != [w, w] || tape.value(p.feat1_w).shape() != [d, d] {
        return Err(Error::Dimension(format!(
            "mixer weights {:?}/{:?} for input {shape:?}",
            tape.value(p.time_w).shape(),
            tape.value(p.feat1_w).shape()
        )));
    }

    let ln = tape.layer_norm(x, p.time_gamma, p.time_beta)?;
    let rows = tape.reshape(ln, &[batch * d, w])?;
    let t = tape.matmul(rows, p.time_w)?;
    let t = tape.add_row_bias(t, p.time_b)?;
    let t = tape.relu(t);
    let t = tape.reshape(t, &shape)?;
    let u = tape.add(x, t)?;

    let ut = tape.swap_last2(u)?;
    let ln = tape.layer_norm(ut, p.feat_gamma, p.feat_beta)?;
    let cols = tape.reshape(ln, &[batch * w, d])?;
    let f = tape.matmul(cols, p.feat1_w)?;
    let f = tape.add_row_bias(f, p.feat1_b)?;
    let f = tape.relu(f);
    let f = tape.matmul(f, p.feat2_w)?;
    let f = tape.add_row_bias(f, p.feat2_b)?;
    let ut_shape = tape.value(ut).shape().to_vec();
    let f = tape.reshape(f, &ut_shape)?;
    let y = tape.add(ut, f)?;
    tape.swap_last2(y)
}

/// Gated causal convolution of every row of `x` (last axis is time):
/// `conv(x; w_f, b_f) ⊙ sigmoid(conv(x; w_g, b_g))`.
pub fn gtc_forward(tape: &mut Tape, x: Var, p: &StVars, dilation: usize) -> Result<Var> {
    let len = tape.value(x).last_dim();
    let k = tape.value(p.filter_w).len();
    if k > len {
        return Err(Error::InvalidArgument(format!(
            "kernel size {k} exceeds series length {len}"
        )));
    }
    let f = tape.causal_conv(x, p.filter_w, p.filter_b, dilation)?;
    let g = tape.causal_conv(x, p.gate_w, p.gate_b, dilation)?;
    let g = tape.sigmoid(g);
    tape.mul(f, g)
}

/// Hypergraph convolution `relu(N · X · Θ)` for `x` of shape `[B, D, C]`
/// (or `[D, C]`).
pub fn hgconv_forward(tape: &mut Tape, x: Var, adjacency: &Tensor, theta: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let (d, c) = match shape[..] {
        [_, d, c] | [d, c] => (d, c),
        _ => {
            return Err(Error::Dimension(format!(
                "hypergraph conv input must be [B, D, C] or [D, C], got {shape:?}"
            )))
        }
    };
    let (c_in, c_out) = tape.value(theta).dims2()?;
    if c_in != c {
        return Err(Error::Dimension(format!(
            "theta {:?} vs feature width {c}",
            tape.value(theta).shape()
        )));
    }
    let batch = tape.value(x).len() / (d * c);
    let mixed = tape.node_mix(adjacency, x)?;
    let rows = tape.reshape(mixed, &[batch * d, c])?;
    let z = tape.matmul(rows, theta)?;
    let z = tape.relu(z);
    let out_shape = if shape.len() == 3 {
        vec![batch, d, c_out]
    } else {
        vec![d, c_out]
    };
    tape.reshape(z, &out_shape)
}
