//! Dense neural surrogate for the displacement field `u(x, t)`.
//!
//! Besides plain evaluation, the network propagates second-order jets along
//! the two input directions, yielding exact `u_x`, `u_t`, `u_xx`, `u_tt` at
//! any point (the cross derivative is never needed and never computed).
//! Parameter gradients of scalar objectives built from those jets are
//! obtained by reverse accumulation over the jet computation, so both the
//! PDE residual and its gradient are exact to round-off.
//!
//! All numerics are f64. Evaluation is pure; parameters are immutable once
//! constructed. Dropout masks, when requested, are applied as explicit
//! inverted-dropout scale vectors so that inference always runs the full
//! deterministic network.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::wave::{fmt_f64, parse_f64, write_file};
use crate::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// No nonlinearity; retained for hand-checkable tests.
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Value and derivatives of the field at one point: `u`, `u_x`, `u_t`,
/// `u_xx`, `u_tt`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub value: f64,
    pub d_x: f64,
    pub d_t: f64,
    pub d_xx: f64,
    pub d_tt: f64,
}

impl Jet2 {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d_x.is_finite()
            && self.d_t.is_finite()
            && self.d_xx.is_finite()
            && self.d_tt.is_finite()
    }
}

const N_CHANNELS: usize = 5;
const VAL: usize = 0;
const DX: usize = 1;
const DT: usize = 2;
const DXX: usize = 3;
const DTT: usize = 4;

/// Points processed together in one jet sweep. Buffers are laid out
/// `[unit][lane]` with `LANES` contiguous lanes, so the innermost loops are
/// stride-1 fused multiply-adds over a full SIMD register.
const LANES: usize = 8;

/// Weights and biases of the surrogate field `u(x, t) = NN(W, b)`.
///
/// Layer `k` maps `layer_sizes[k]` inputs to `layer_sizes[k+1]` outputs with
/// a row-major weight matrix; every layer but the last is followed by the
/// activation. The flat parameter order is: for each layer in order, the
/// weight matrix row-major, then the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    dropout_rate: f64,
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config("need at least an input and an output layer".into()));
    }
    if layer_sizes[0] != 2 {
        return Err(Error::Config(format!(
            "input width must be 2 for (x, t), got {}",
            layer_sizes[0]
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "output width must be 1, got {}",
            layer_sizes.last().unwrap()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config("layer widths must be >= 1".into()));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero
    /// biases; deterministic for a given `seed`.
    pub fn init(layer_sizes: &[usize], activation: Activation, dropout_rate: f64, seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0, 1), got {dropout_rate}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            dropout_rate,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
            dropout_rate: 0.0,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Weight matrix of layer `k`, row-major `(out × in)`.
    pub fn weight(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        &self.biases[k]
    }

    /// Mutable access for tests that construct hand-crafted networks.
    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.weights[k]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.biases[k]
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Pack into the documented flat order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }

    /// Overwrite all parameters from a flat vector in the documented order.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Config(format!(
                "flat vector has {} entries, network needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let (wn, bn) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + wn]);
            off += wn;
            b.copy_from_slice(&flat[off..off + bn]);
            off += bn;
        }
        Ok(())
    }

    /// A copy of `self` with parameters taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_from_flat(flat)?;
        Ok(p)
    }

    /// Deterministic full-network evaluation of `u(x, t)`.
    pub fn forward(&self, x: f64, t: f64) -> f64 {
        let mut cur = vec![x, t];
        let mut next = Vec::new();
        for k in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[k], self.layer_sizes[k + 1]);
            next.clear();
            next.resize(n_out, 0.0);
            let w = &self.weights[k];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut z = self.biases[k][j];
                for (wi, ai) in row.iter().zip(&cur) {
                    z += wi * ai;
                }
                next[j] = if k + 1 < self.n_layers() {
                    match self.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Identity => z,
                    }
                } else {
                    z
                };
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Field value and derivatives at `(x, t)` via second-order forward jets.
    pub fn forward_jet2(&self, x: f64, t: f64) -> Jet2 {
        let mut ws = JetWorkspace::new(self);
        ws.forward(self, &[(x, t)], None)[0]
    }

    /// Jets at many points with one reusable workspace.
    pub fn forward_jet2_many(&self, pts: &[(f64, f64)]) -> Vec<Jet2> {
        let mut ws = JetWorkspace::new(self);
        let mut out = Vec::with_capacity(pts.len());
        for block in pts.chunks(LANES) {
            out.extend_from_slice(&ws.forward(self, block, None)[..block.len()]);
        }
        out
    }

    /// Plain-text serialization: a commented shape header followed by the
    /// flat parameter vector, one value per line; exact round-trip.
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(text, "# mlp v1");
        let _ = writeln!(text, "# layer_sizes={}", sizes.join(","));
        let _ = writeln!(text, "# activation={}", self.activation.name());
        let _ = writeln!(text, "# dropout_rate={}", fmt_f64(self.dropout_rate));
        for v in self.flatten() {
            let _ = writeln!(text, "{}", fmt_f64(v));
        }
        text
    }

    /// Write parameters to a plain-text sidecar file; exact round-trip.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    /// Read parameters written by [`MlpParams::write_file`].
    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let bad = |message: String| Error::Parse {
            path: path.display().to_string(),
            message,
        };
        let mut layer_sizes: Option<Vec<usize>> = None;
        let mut activation = Activation::Tanh;
        let mut dropout_rate = 0.0;
        let mut flat = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.trim().split_once('=') {
                    match key.trim() {
                        "layer_sizes" => {
                            layer_sizes = Some(
                                value
                                    .split(',')
                                    .map(|s| s.trim().parse::<usize>())
                                    .collect::<std::result::Result<_, _>>()
                                    .map_err(|e| bad(format!("bad layer_sizes: {e}")))?,
                            )
                        }
                        "activation" => activation = Activation::from_name(value.trim())?,
                        "dropout_rate" => {
                            dropout_rate =
                                parse_f64(value).ok_or_else(|| bad(format!("bad dropout_rate {value:?}")))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            flat.push(parse_f64(line).ok_or_else(|| bad(format!("bad parameter {line:?}")))?);
        }
        let layer_sizes = layer_sizes.ok_or_else(|| bad("missing layer_sizes header".into()))?;
        let mut params = MlpParams::zeros(&layer_sizes, activation)?;
        params.dropout_rate = dropout_rate;
        params.set_from_flat(&flat)?;
        Ok(params)
    }
}

/// Per-hidden-layer inverted-dropout scale vectors: each entry is `0` with
/// probability `rate` and `1/(1 - rate)` otherwise.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    scale: Vec<Vec<f64>>,
}

impl DropoutMasks {
    /// Sample masks for every hidden layer of `params`; deterministic per seed.
    pub fn sample(params: &MlpParams, rate: f64, seed: u64) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = params.layer_sizes[1..params.layer_sizes.len() - 1]
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| if rng.gen_range(0.0..1.0) < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        Self { scale }
    }
}

/// A scalar objective differentiable with respect to the network parameters:
/// a sum of local terms of the field jet at given points, plus an optional
/// term depending directly on the flat parameter vector.
pub trait ScalarObjective: Sync {
    /// Space-time points at which jet terms are evaluated.
    fn points(&self) -> &[(f64, f64)];

    /// Local value of term `idx` and its partial derivatives with respect to
    /// the five jet entries (returned in the `Jet2` slots).
    fn term(&self, idx: usize, jet: &Jet2) -> (f64, Jet2);

    /// Optional additive term of the flat parameter vector; accumulates its
    /// gradient into `grad` and returns its value.
    fn param_term(&self, _flat: &[f64], _grad: &mut [f64]) -> f64 {
        0.0
    }

    /// Human-readable identity of term `idx`, used in numeric errors.
    fn describe_term(&self, idx: usize) -> String {
        format!("objective term {idx}")
    }
}

/// Objective value and its exact gradient with respect to every parameter,
/// in the documented flat order.
pub fn loss_grad(params: &MlpParams, objective: &dyn ScalarObjective) -> Result<(f64, Vec<f64>)> {
    loss_grad_masked(params, objective, None)
}

/// Fixed chunk size so the parallel reduction tree is independent of the
/// number of worker threads (bitwise-reproducible results).
const POINT_CHUNK: usize = 64;

/// As [`loss_grad`], with optional dropout masks applied to hidden layers.
pub fn loss_grad_masked(
    params: &MlpParams,
    objective: &dyn ScalarObjective,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<f64>)> {
    let n = params.n_params();
    let points = objective.points();
    let wt = transposed_weights(params);

    struct ChunkOut {
        loss: f64,
        grad: Vec<f64>,
        bad_term: Option<usize>,
    }

    let chunks: Vec<ChunkOut> = points
        .par_chunks(POINT_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut ws = JetWorkspace::new(params);
            let mut lanes = GradLanes::new(params);
            let mut out = ChunkOut {
                loss: 0.0,
                grad: vec![0.0; n],
                bad_term: None,
            };
            for (bi, block) in chunk.chunks(LANES).enumerate() {
                let jets = ws.forward(params, block, masks);
                let mut seeds = [Jet2::default(); LANES];
                for (p, jet) in jets[..block.len()].iter().enumerate() {
                    let idx = ci * POINT_CHUNK + bi * LANES + p;
                    let (value, seed) = objective.term(idx, jet);
                    if !value.is_finite() {
                        out.bad_term = Some(idx);
                        return out;
                    }
                    out.loss += value;
                    seeds[p] = seed;
                }
                ws.backward(params, &wt, &seeds, masks, &mut lanes);
            }
            lanes.fold_into(&mut out.grad);
            out
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for chunk in &chunks {
        if let Some(idx) = chunk.bad_term {
            return Err(Error::NonFinite(objective.describe_term(idx)));
        }
        loss += chunk.loss;
        for (g, c) in grad.iter_mut().zip(&chunk.grad) {
            *g += c;
        }
    }

    let flat = params.flatten();
    let pv = objective.param_term(&flat, &mut grad);
    if !pv.is_finite() {
        return Err(Error::NonFinite("parameter-space term".into()));
    }
    loss += pv;

    if !loss.is_finite() {
        return Err(Error::NonFinite("objective total".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective gradient".into()));
    }
    Ok((loss, grad))
}

/// Reusable buffers for jet forward and reverse sweeps over a block of up
/// to [`LANES`] points.
///
/// All per-unit state is laid out `[channel][unit * LANES + lane]`, so every
/// inner loop is a contiguous fused multiply-add over the lanes.
struct JetWorkspace {
    /// `acts[k]` = input jets of layer `k` (post-activation of layer `k-1`).
    acts: Vec<[Vec<f64>; N_CHANNELS]>,
    /// `pre[k]` = pre-activation jets of layer `k`.
    pre: Vec<[Vec<f64>; N_CHANNELS]>,
    /// Adjoint buffers, ping-ponged across layers.
    g_cur: [Vec<f64>; N_CHANNELS],
    g_next: [Vec<f64>; N_CHANNELS],
}

/// Per-lane parameter-gradient accumulators, folded into the flat gradient
/// once per chunk.
struct GradLanes {
    /// `[layer][(j * n_in + i) * LANES + lane]`.
    gw: Vec<Vec<f64>>,
    /// `[layer][j * LANES + lane]`.
    gb: Vec<Vec<f64>>,
}

impl GradLanes {
    fn new(params: &MlpParams) -> Self {
        Self {
            gw: params.weights.iter().map(|w| vec![0.0; w.len() * LANES]).collect(),
            gb: params.biases.iter().map(|b| vec![0.0; b.len() * LANES]).collect(),
        }
    }

    /// Collapse the per-lane accumulators into a flat gradient.
    fn fold_into(&self, grad: &mut [f64]) {
        let mut off = 0;
        for (gw, gb) in self.gw.iter().zip(&self.gb) {
            for (slot, lanes) in grad[off..].iter_mut().zip(gw.chunks_exact(LANES)) {
                *slot += lane_sum(lanes);
            }
            off += gw.len() / LANES;
            for (slot, lanes) in grad[off..].iter_mut().zip(gb.chunks_exact(LANES)) {
                *slot += lane_sum(lanes);
            }
            off += gb.len() / LANES;
        }
    }
}

fn channel_buf(width: usize) -> [Vec<f64>; N_CHANNELS] {
    std::array::from_fn(|_| vec![0.0; width * LANES])
}

impl JetWorkspace {
    fn new(params: &MlpParams) -> Self {
        let sizes = &params.layer_sizes;
        let max_width = *sizes.iter().max().unwrap();
        Self {
            acts: sizes[..sizes.len() - 1].iter().map(|&w| channel_buf(w)).collect(),
            pre: sizes[1..].iter().map(|&w| channel_buf(w)).collect(),
            g_cur: channel_buf(max_width),
            g_next: channel_buf(max_width),
        }
    }

    /// Propagate jets for up to [`LANES`] points, caching everything the
    /// reverse sweep needs. Unused lanes are padded and return zeros.
    fn forward(&mut self, params: &MlpParams, pts: &[(f64, f64)], masks: Option<&DropoutMasks>) -> [Jet2; LANES] {
        debug_assert!(pts.len() <= LANES && !pts.is_empty());
        let n_layers = params.n_layers();

        // Input jets: x seeded along (1,0), t along (0,1); unit 0 is x, unit 1 is t.
        let a0 = &mut self.acts[0];
        for buf in a0.iter_mut() {
            buf[..2 * LANES].fill(0.0);
        }
        for (p, &(x, t)) in pts.iter().enumerate() {
            a0[VAL][p] = x;
            a0[VAL][LANES + p] = t;
            a0[DX][p] = 1.0;
            a0[DT][LANES + p] = 1.0;
        }

        for k in 0..n_layers {
            let (n_in, n_out) = (params.layer_sizes[k], params.layer_sizes[k + 1]);
            let w = &params.weights[k];
            let b = &params.biases[k];

            // Linear map, channel by channel; bias enters the value channel only.
            for ch in 0..N_CHANNELS {
                let bias = (ch == VAL).then_some(b.as_slice());
                matvec_lanes(w, bias, &self.acts[k][ch], &mut self.pre[k][ch], n_in, n_out);
            }

            if k + 1 == n_layers {
                break;
            }

            // Activation (and optional dropout scaling) into acts[k + 1].
            let mask = masks.map(|m| m.scale[k].as_slice());
            let [zv, zx, zt, zxx, ztt] = &self.pre[k];
            let [ov, ox, ot, oxx, ott] = &mut self.acts[k + 1];
            match params.activation {
                Activation::Tanh => {
                    act_tanh_forward(zv, zx, zt, zxx, ztt, [ov, ox, ot, oxx, ott], mask, n_out);
                }
                Activation::Identity => {
                    for (src, dst) in [(zv, ov), (zx, ox), (zt, ot), (zxx, oxx), (ztt, ott)] {
                        for j in 0..n_out {
                            let m = mask.map_or(1.0, |m| m[j]);
                            let r = j * LANES..(j + 1) * LANES;
                            for (d, s) in dst[r.clone()].iter_mut().zip(&src[r]) {
                                *d = m * s;
                            }
                        }
                    }
                }
            }
        }

        let out = &self.pre[n_layers - 1];
        std::array::from_fn(|p| Jet2 {
            value: out[VAL][p],
            d_x: out[DX][p],
            d_t: out[DT][p],
            d_xx: out[DXX][p],
            d_tt: out[DTT][p],
        })
    }

    /// Accumulate the parameter adjoints of `sum_p seeds[p] · jet_p` into the
    /// per-lane buffers, reusing the caches left by the latest `forward`.
    /// `wt` holds the transposed weight matrices (see [`transposed_weights`]).
    fn backward(
        &mut self,
        params: &MlpParams,
        wt: &[Vec<f64>],
        seeds: &[Jet2; LANES],
        masks: Option<&DropoutMasks>,
        lanes: &mut GradLanes,
    ) {
        let n_layers = params.n_layers();

        // Adjoint of the output pre-activation jet (output width is 1).
        for (p, seed) in seeds.iter().enumerate() {
            self.g_cur[VAL][p] = seed.value;
            self.g_cur[DX][p] = seed.d_x;
            self.g_cur[DT][p] = seed.d_t;
            self.g_cur[DXX][p] = seed.d_xx;
            self.g_cur[DTT][p] = seed.d_tt;
        }

        for k in (0..n_layers).rev() {
            let (n_in, n_out) = (params.layer_sizes[k], params.layer_sizes[k + 1]);

            // Per-lane parameter gradients:
            // gW[j,i][p] += sum_ch gz[ch][j][p] * a[ch][i][p];
            // gb[j][p] += gz[VAL][j][p].
            {
                let a = &self.acts[k];
                let gw = &mut lanes.gw[k];
                let gb = &mut lanes.gb[k];
                for j in 0..n_out {
                    let gz: [[f64; LANES]; N_CHANNELS] =
                        std::array::from_fn(|ch| lane_block(&self.g_cur[ch], j).try_into().unwrap());
                    let gw_row = &mut gw[j * n_in * LANES..(j + 1) * n_in * LANES];
                    fma_rows5(gw_row, &gz, std::array::from_fn(|ch| a[ch].as_slice()), n_in);
                    for (slot, &g) in gb[j * LANES..(j + 1) * LANES].iter_mut().zip(&gz[VAL]) {
                        *slot += g;
                    }
                }
            }

            if k == 0 {
                break;
            }

            // Input-activation adjoint ga = W^T gz: a plain matvec over the
            // transposed weights, channel by channel.
            for ch in 0..N_CHANNELS {
                matvec_lanes(&wt[k], None, &self.g_cur[ch], &mut self.g_next[ch], n_out, n_in);
            }

            // Through the activation of layer k-1 (post-activation adjoint ->
            // pre-activation adjoint), undoing the dropout scaling first.
            let mask = masks.map(|m| m.scale[k - 1].as_slice());
            let [zv, zx, zt, zxx, ztt] = &self.pre[k - 1];
            match params.activation {
                Activation::Tanh => {
                    let [nv, nx, nt, nxx, ntt] = &self.g_next;
                    let [cv, cx, ct, cxx, ctt] = &mut self.g_cur;
                    act_tanh_backward(
                        zv,
                        zx,
                        zt,
                        zxx,
                        ztt,
                        &self.acts[k][VAL],
                        [nv, nx, nt, nxx, ntt],
                        [cv, cx, ct, cxx, ctt],
                        mask,
                        n_in,
                    );
                }
                Activation::Identity => {
                    for ch in 0..N_CHANNELS {
                        for i in 0..n_in {
                            let m = mask.map_or(1.0, |m| m[i]);
                            let r = i * LANES..(i + 1) * LANES;
                            for (c, g) in self.g_cur[ch][r.clone()].iter_mut().zip(&self.g_next[ch][r]) {
                                *c = m * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fixed-order sum of one lane block.
#[inline]
fn lane_sum(lanes: &[f64]) -> f64 {
    debug_assert_eq!(lanes.len(), LANES);
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
}

/// The lane block of one unit.
#[inline]
fn lane_block(buf: &[f64], unit: usize) -> &[f64] {
    &buf[unit * LANES..(unit + 1) * LANES]
}

/// `z[j][:] = bias_j + sum_i w[j,i] * a[i][:]` over lane blocks.
/// `bias` is `None` for derivative channels.
#[inline(never)]
fn matvec_lanes(w: &[f64], bias: Option<&[f64]>, a: &[f64], z: &mut [f64], n_in: usize, n_out: usize) {
    let a = &a[..n_in * LANES];
    for (j, zj) in z.chunks_exact_mut(LANES).take(n_out).enumerate() {
        let row = &w[j * n_in..(j + 1) * n_in];
        let mut acc = [bias.map_or(0.0, |b| b[j]); LANES];
        for (&wji, ai) in row.iter().zip(a.chunks_exact(LANES)) {
            for p in 0..LANES {
                acc[p] = wji.mul_add(ai[p], acc[p]);
            }
        }
        zj.copy_from_slice(&acc);
    }
}

/// Weight-gradient row update for one output unit, all channels fused into
/// a single pass: `out[i][:] += sum_ch gz[ch][:] * a[ch][i][:]`. The products
/// are summed as a fixed tree to keep the lanes' dependency chains short.
#[inline(never)]
fn fma_rows5(out: &mut [f64], gz: &[[f64; LANES]; N_CHANNELS], a: [&[f64]; N_CHANNELS], n_in: usize) {
    let n = n_in * LANES;
    let (a0, a1, a2, a3, a4) = (&a[0][..n], &a[1][..n], &a[2][..n], &a[3][..n], &a[4][..n]);
    for (i, slot) in out[..n].chunks_exact_mut(LANES).enumerate() {
        let base = i * LANES;
        for p in 0..LANES {
            let t0 = gz[0][p] * a0[base + p];
            let t1 = gz[1][p] * a1[base + p];
            let t2 = gz[2][p] * a2[base + p];
            let t3 = gz[3][p] * a3[base + p];
            let t4 = gz[4][p] * a4[base + p];
            slot[p] += ((t0 + t1) + (t2 + t3)) + t4;
        }
    }
}

/// Row-major transposes of every weight matrix, built once per gradient
/// evaluation so the input-adjoint pass is a plain matvec over `W^T`.
fn transposed_weights(params: &MlpParams) -> Vec<Vec<f64>> {
    params
        .layer_sizes
        .windows(2)
        .zip(&params.weights)
        .map(|(sizes, w)| {
            let (n_in, n_out) = (sizes[0], sizes[1]);
            let mut wt = vec![0.0; n_in * n_out];
            for j in 0..n_out {
                for i in 0..n_in {
                    wt[i * n_out + j] = w[j * n_in + i];
                }
            }
            wt
        })
        .collect()
}

/// Tanh jet activation for `n_out` units (lane blocks), with optional
/// dropout scaling.
#[inline(never)]
#[allow(clippy::too_many_arguments)]
fn act_tanh_forward(
    zv: &[f64],
    zx: &[f64],
    zt: &[f64],
    zxx: &[f64],
    ztt: &[f64],
    out: [&mut [f64]; N_CHANNELS],
    mask: Option<&[f64]>,
    n_out: usize,
) {
    let [ov, ox, ot, oxx, ott] = out;
    for j in 0..n_out {
        let m = mask.map_or(1.0, |mk| mk[j]);
        let r = j * LANES..(j + 1) * LANES;
        let zvj: [f64; LANES] = zv[r.clone()].try_into().unwrap();
        let zxj: [f64; LANES] = zx[r.clone()].try_into().unwrap();
        let ztj: [f64; LANES] = zt[r.clone()].try_into().unwrap();
        let zxxj: [f64; LANES] = zxx[r.clone()].try_into().unwrap();
        let zttj: [f64; LANES] = ztt[r.clone()].try_into().unwrap();
        let mut s = [0.0; LANES];
        for p in 0..LANES {
            s[p] = zvj[p].tanh();
        }
        let (mut a_v, mut a_x, mut a_t) = ([0.0; LANES], [0.0; LANES], [0.0; LANES]);
        let (mut a_xx, mut a_tt) = ([0.0; LANES], [0.0; LANES]);
        for p in 0..LANES {
            let t1 = 1.0 - s[p] * s[p];
            let t2 = -2.0 * s[p] * t1;
            a_v[p] = m * s[p];
            a_x[p] = m * t1 * zxj[p];
            a_t[p] = m * t1 * ztj[p];
            a_xx[p] = m * (t2 * zxj[p] * zxj[p] + t1 * zxxj[p]);
            a_tt[p] = m * (t2 * ztj[p] * ztj[p] + t1 * zttj[p]);
        }
        ov[r.clone()].copy_from_slice(&a_v);
        ox[r.clone()].copy_from_slice(&a_x);
        ot[r.clone()].copy_from_slice(&a_t);
        oxx[r.clone()].copy_from_slice(&a_xx);
        ott[r].copy_from_slice(&a_tt);
    }
}

/// Adjoint of [`act_tanh_forward`]: maps the post-activation adjoint
/// `g_out` to the pre-activation adjoint `g_in`. `sv` carries the cached
/// activation values (only valid without dropout; under dropout the tanh is
/// recomputed from `zv`).
#[inline(never)]
#[allow(clippy::too_many_arguments)]
fn act_tanh_backward(
    zv: &[f64],
    zx: &[f64],
    zt: &[f64],
    zxx: &[f64],
    ztt: &[f64],
    sv: &[f64],
    g_out: [&[f64]; N_CHANNELS],
    g_in: [&mut [f64]; N_CHANNELS],
    mask: Option<&[f64]>,
    n_in: usize,
) {
    let [nv, nx, nt, nxx, ntt] = g_out;
    let [cv, cx, ct, cxx, ctt] = g_in;
    for i in 0..n_in {
        let m = mask.map_or(1.0, |mk| mk[i]);
        let r = i * LANES..(i + 1) * LANES;
        let mut s = [0.0; LANES];
        if mask.is_some() {
            let zvj = &zv[r.clone()];
            for p in 0..LANES {
                s[p] = zvj[p].tanh();
            }
        } else {
            s.copy_from_slice(&sv[r.clone()]);
        }
        let zxj: [f64; LANES] = zx[r.clone()].try_into().unwrap();
        let ztj: [f64; LANES] = zt[r.clone()].try_into().unwrap();
        let zxxj: [f64; LANES] = zxx[r.clone()].try_into().unwrap();
        let zttj: [f64; LANES] = ztt[r.clone()].try_into().unwrap();
        let nvj: [f64; LANES] = nv[r.clone()].try_into().unwrap();
        let nxj: [f64; LANES] = nx[r.clone()].try_into().unwrap();
        let ntj: [f64; LANES] = nt[r.clone()].try_into().unwrap();
        let nxxj: [f64; LANES] = nxx[r.clone()].try_into().unwrap();
        let nttj: [f64; LANES] = ntt[r.clone()].try_into().unwrap();
        let (mut g_v, mut g_x, mut g_t) = ([0.0; LANES], [0.0; LANES], [0.0; LANES]);
        let (mut g_xx, mut g_tt) = ([0.0; LANES], [0.0; LANES]);
        for p in 0..LANES {
            let ga_v = m * nvj[p];
            let ga_x = m * nxj[p];
            let ga_t = m * ntj[p];
            let ga_xx = m * nxxj[p];
            let ga_tt = m * nttj[p];
            let t1 = 1.0 - s[p] * s[p];
            let t2 = -2.0 * s[p] * t1;
            let t3 = (6.0 * s[p] * s[p] - 2.0) * t1;
            g_v[p] = ga_v * t1
                + ga_x * t2 * zxj[p]
                + ga_t * t2 * ztj[p]
                + ga_xx * (t3 * zxj[p] * zxj[p] + t2 * zxxj[p])
                + ga_tt * (t3 * ztj[p] * ztj[p] + t2 * zttj[p]);
            g_x[p] = ga_x * t1 + ga_xx * 2.0 * t2 * zxj[p];
            g_t[p] = ga_t * t1 + ga_tt * 2.0 * t2 * ztj[p];
            g_xx[p] = ga_xx * t1;
            g_tt[p] = ga_tt * t1;
        }
        cv[r.clone()].copy_from_slice(&g_v);
        cx[r.clone()].copy_from_slice(&g_x);
        ct[r.clone()].copy_from_slice(&g_t);
        cxx[r.clone()].copy_from_slice(&g_xx);
        ctt[r].copy_from_slice(&g_tt);
    }
}
