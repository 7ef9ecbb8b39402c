use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv_bwd, conv_fwd, dense_bwd, dense_fwd, leaky, leaky_grad, maxpool_fwd, sigmoid, softplus, Geom,
};
use super::train::TensorSet;
use super::{InitScheme, ModelError, NetworkConfig, OutputActivation};
use crate::conditioning::FeatureBundle;
use crate::warehouse::DDM_BINS;
use crate::Scalar;

/// Samples per gradient work unit. Units are reduced in index order.
pub(crate) const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output shape of one layer, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    nin: usize,
    nout: usize,
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<Conv>,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tensors: Vec<TensorSpec>,
    layers: Vec<LayerShape>,
    geom: Geom,
    blocks: Vec<Block>,
    pool: usize,
    pooled: (usize, usize, usize),
    anc: Option<Dense>,
    head: Vec<Dense>,
    out: Dense,
    flat_len: usize,
    concat_len: usize,
    n_params: usize,
}

fn cfg_err(layer: &str, msg: impl Into<String>) -> ModelError {
    ModelError::Config { layer: layer.to_string(), msg: msg.into() }
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Result<Self, ModelError> {
        let (h, w) = NetworkConfig::ddm_shape();
        if !(0.0..0.05).contains(&cfg.dropout_p) {
            return Err(cfg_err("head", format!("dropout_p {} outside [0, 0.05)", cfg.dropout_p)));
        }
        if !(cfg.leaky_relu_slope.is_finite() && cfg.leaky_relu_slope > 0.0 && cfg.leaky_relu_slope < 1.0) {
            return Err(cfg_err("activation", format!("leaky slope {} outside (0, 1)", cfg.leaky_relu_slope)));
        }
        if cfg.head_dense_widths.len() != 2 {
            return Err(cfg_err("head", format!("expected 2 dense widths, got {}", cfg.head_dense_widths.len())));
        }
        let mut tensors = Vec::new();
        let mut layers = Vec::new();
        let mut off = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let t = TensorSpec { name, shape, offset: off };
            off += t.len();
            let o = t.offset;
            tensors.push(t);
            o
        };
        let geom = Geom { h, w, k: cfg.kernel };
        let mut blocks = Vec::new();
        let mut flat_len = 0;
        let mut pooled = (0, 0, 0);
        if cfg.use_ddm {
            if cfg.kernel % 2 == 0 || cfg.kernel == 0 || cfg.kernel > w {
                return Err(cfg_err("block1.conv1", format!("kernel {} must be odd and at most {w}", cfg.kernel)));
            }
            if cfg.channels.len() != cfg.residual_blocks || cfg.residual_blocks == 0 {
                return Err(cfg_err(
                    "ddm_branch",
                    format!("{} residual blocks but {} channel counts", cfg.residual_blocks, cfg.channels.len()),
                ));
            }
            if cfg.conv_per_block == 0 {
                return Err(cfg_err("block1", "conv_per_block must be at least 1"));
            }
            if cfg.pool == 0 || cfg.pool > w {
                return Err(cfg_err("pool", format!("pool size {} does not fit {h}x{w}", cfg.pool)));
            }
            layers.push(LayerShape { name: "ddm_input".into(), shape: vec![1, h, w] });
            let mut cin = 1;
            for (bi, &cout) in cfg.channels.iter().enumerate() {
                let bname = format!("block{}", bi + 1);
                if cout == 0 {
                    return Err(cfg_err(&bname, "zero channels"));
                }
                if cout < cin {
                    return Err(cfg_err(
                        &format!("{bname}.shortcut"),
                        format!("cannot add {cin}-channel input to {cout}-channel output"),
                    ));
                }
                let mut convs = Vec::new();
                let mut c = cin;
                for j in 0..cfg.conv_per_block {
                    let name = format!("{bname}.conv{}", j + 1);
                    let w_off = push(format!("{name}.weight"), vec![cout, c, cfg.kernel, cfg.kernel]);
                    let b_off = push(format!("{name}.bias"), vec![cout]);
                    convs.push(Conv { w: w_off, b: b_off, cin: c, cout });
                    layers.push(LayerShape { name, shape: vec![cout, h, w] });
                    c = cout;
                }
                layers.push(LayerShape { name: format!("{bname}.add"), shape: vec![cout, h, w] });
                blocks.push(Block { convs, cin, cout });
                cin = cout;
            }
            pooled = (cin, h / cfg.pool, w / cfg.pool);
            layers.push(LayerShape { name: "pool".into(), shape: vec![pooled.0, pooled.1, pooled.2] });
            flat_len = pooled.0 * pooled.1 * pooled.2;
            layers.push(LayerShape { name: "flatten".into(), shape: vec![flat_len] });
        }
        let n_anc = cfg.n_ancillary();
        let anc = if n_anc > 0 {
            if cfg.ancillary_dense_width == 0 {
                return Err(cfg_err("ancillary", "zero width"));
            }
            let nout = cfg.ancillary_dense_width;
            layers.push(LayerShape { name: "ancillary_input".into(), shape: vec![n_anc] });
            let w_off = push("ancillary.weight".into(), vec![nout, n_anc]);
            let b_off = push("ancillary.bias".into(), vec![nout]);
            layers.push(LayerShape { name: "ancillary".into(), shape: vec![nout] });
            Some(Dense { w: w_off, b: b_off, nin: n_anc, nout })
        } else {
            None
        };
        let concat_len = flat_len + anc.map_or(0, |a| a.nout);
        if concat_len == 0 {
            return Err(cfg_err("concat", "network has neither a DDM nor an ancillary branch"));
        }
        layers.push(LayerShape { name: "concat".into(), shape: vec![concat_len] });
        let mut head = Vec::new();
        let mut nin = concat_len;
        for (i, &nout) in cfg.head_dense_widths.iter().enumerate() {
            let name = format!("head{}", i + 1);
            if nout == 0 {
                return Err(cfg_err(&name, "zero width"));
            }
            let w_off = push(format!("{name}.weight"), vec![nout, nin]);
            let b_off = push(format!("{name}.bias"), vec![nout]);
            head.push(Dense { w: w_off, b: b_off, nin, nout });
            layers.push(LayerShape { name, shape: vec![nout] });
            nin = nout;
        }
        let w_off = push("output.weight".into(), vec![1, nin]);
        let b_off = push("output.bias".into(), vec![1]);
        layers.push(LayerShape { name: "output".into(), shape: vec![1] });
        let out = Dense { w: w_off, b: b_off, nin, nout: 1 };
        Ok(Self {
            tensors,
            layers,
            geom,
            blocks,
            pool: cfg.pool,
            pooled,
            anc,
            head,
            out,
            flat_len,
            concat_len,
            n_params: off,
        })
    }
}

/// Dropout source for a train-mode pass.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    cfg: NetworkConfig,
    layout: Layout,
    params: Vec<S>,
}

pub fn build_network<S: Scalar>(cfg: &NetworkConfig) -> Result<Network<S>, ModelError> {
    let layout = Layout::new(cfg)?;
    let mut params = vec![S::zero(); layout.n_params];
    if cfg.init == InitScheme::HeUniform {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for t in &layout.tensors {
            if t.shape.len() < 2 {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let lim = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[t.offset..t.offset + t.len()] {
                *p = S::of(rng.random_range(-lim..lim));
            }
        }
    }
    Ok(Network { cfg: cfg.clone(), layout, params })
}

/// Per-sample activations kept for the backward pass.
pub(crate) struct Cache<S> {
    block_in: Vec<Vec<S>>,
    conv_in: Vec<Vec<S>>,
    conv_z: Vec<Vec<S>>,
    act: Vec<S>,
    concat: Vec<S>,
    arg: Vec<usize>,
    anc_z: Vec<S>,
    head_z: Vec<Vec<S>>,
    head_keep: Vec<Vec<S>>,
    head_out: Vec<Vec<S>>,
    out_z: S,
    g_a: Vec<S>,
    g_pad: Vec<S>,
    g_short: Vec<S>,
}

impl<S: Scalar> Cache<S> {
    fn new(l: &Layout) -> Self {
        let g = l.geom;
        let convs: Vec<&Conv> = l.blocks.iter().flat_map(|b| b.convs.iter()).collect();
        let cmax = l.blocks.iter().map(|b| b.cout).max().unwrap_or(1);
        Self {
            block_in: l.blocks.iter().map(|b| vec![S::zero(); b.cin * g.plane()]).collect(),
            conv_in: convs.iter().map(|c| vec![S::zero(); c.cin * g.padded_plane()]).collect(),
            conv_z: convs.iter().map(|c| vec![S::zero(); c.cout * g.plane()]).collect(),
            act: vec![S::zero(); cmax * g.plane()],
            concat: vec![S::zero(); l.concat_len],
            arg: vec![0; l.flat_len],
            anc_z: vec![S::zero(); l.anc.map_or(0, |a| a.nout)],
            head_z: l.head.iter().map(|d| vec![S::zero(); d.nout]).collect(),
            head_keep: l.head.iter().map(|d| vec![S::one(); d.nout]).collect(),
            head_out: l.head.iter().map(|d| vec![S::zero(); d.nout]).collect(),
            out_z: S::zero(),
            g_a: vec![S::zero(); cmax * g.plane()],
            g_pad: vec![S::zero(); cmax * g.padded_plane()],
            g_short: vec![S::zero(); cmax * g.plane()],
        }
    }
}

impl<S: Scalar> Network<S> {
    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub(crate) fn set_config(&mut self, cfg: NetworkConfig) {
        debug_assert_eq!(Layout::new(&cfg).map(|l| l.n_params).ok(), Some(self.layout.n_params));
        self.cfg = cfg;
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn manifest(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.layout.layers
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?;
        Some(&self.params[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let t = self.layout.tensors.iter().find(|t| t.name == name)?.clone();
        Some(&mut self.params[t.offset..t.offset + t.len()])
    }

    pub(crate) fn new_cache(&self) -> Cache<S> {
        Cache::new(&self.layout)
    }

    /// Distance of the evaluation point from the nearest non-differentiable
    /// configuration: the smallest `|z|` over leaky-ReLU pre-activations and
    /// the smallest gap between a pooling window's maximum and any unequal
    /// runner-up. Exactly tied pool entries are skipped since they move together.
    pub fn kink_margin(&self, set: &TensorSet<S>) -> f64 {
        let l = &self.layout;
        let g = l.geom;
        let mut c = self.new_cache();
        let mut m = f64::INFINITY;
        for i in 0..set.n {
            self.forward_one(set.ddm_row(i), set.anc_row(i), &mut c, None);
            let zs = c.conv_z.iter().flatten().chain(&c.anc_z).chain(c.head_z.iter().flatten());
            m = zs.fold(m, |m, z| m.min(z.f64().abs()));
            if let Some(last) = c.conv_z.last() {
                let act: Vec<f64> = last.iter().map(|z| leaky(*z, S::of(self.cfg.leaky_relu_slope)).f64()).collect();
                let (cc, ph, pw) = l.pooled;
                let s = l.pool;
                for ci in 0..cc {
                    for py in 0..ph {
                        for px in 0..pw {
                            let o = ci * ph * pw + py * pw + px;
                            let best = act[c.arg[o]];
                            for dy in 0..s {
                                for dx in 0..s {
                                    let v = act[ci * g.plane() + (py * s + dy) * g.w + px * s + dx];
                                    if v != best {
                                        m = m.min(best - v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// One sample through the network. `dropout` is `None` in infer mode.
    pub(crate) fn forward_one(&self, ddm: &[S], anc: &[S], c: &mut Cache<S>, dropout: Option<&mut ChaCha8Rng>) -> S {
        let l = &self.layout;
        let p = &self.params;
        let g = l.geom;
        let slope = S::of(self.cfg.leaky_relu_slope);
        let mut ci = 0;
        for (bi, b) in l.blocks.iter().enumerate() {
            if bi == 0 {
                c.block_in[0].copy_from_slice(&ddm[..DDM_BINS]);
            } else {
                let n = b.cin * g.plane();
                let (src, dst) = (&c.act[..n], &mut c.block_in[bi]);
                dst.copy_from_slice(src);
            }
            for (j, cv) in b.convs.iter().enumerate() {
                let n_in = cv.cin * g.plane();
                if j == 0 {
                    g.pad_into(&c.block_in[bi], cv.cin, &mut c.conv_in[ci]);
                } else {
                    g.pad_into(&c.act[..n_in], cv.cin, &mut c.conv_in[ci]);
                }
                conv_fwd(
                    g,
                    &c.conv_in[ci],
                    cv.cin,
                    &p[cv.w..cv.w + cv.cout * cv.cin * g.k * g.k],
                    &p[cv.b..cv.b + cv.cout],
                    cv.cout,
                    &mut c.conv_z[ci],
                );
                if j + 1 == b.convs.len() {
                    let z = &mut c.conv_z[ci];
                    z[..b.cin * g.plane()].iter_mut().zip(&c.block_in[bi]).for_each(|(a, s)| *a += *s);
                }
                let z = &c.conv_z[ci];
                c.act[..z.len()].iter_mut().zip(z).for_each(|(a, z)| *a = leaky(*z, slope));
                ci += 1;
            }
        }
        if !l.blocks.is_empty() {
            let (cc, _, _) = l.pooled;
            let n = cc * g.plane();
            let flat = &mut c.concat[..l.flat_len];
            maxpool_fwd(&c.act[..n], cc, g.h, g.w, l.pool, flat, &mut c.arg);
        }
        if let Some(a) = l.anc {
            dense_fwd(&p[a.w..a.w + a.nout * a.nin], &p[a.b..a.b + a.nout], anc, &mut c.anc_z);
            for (dst, z) in c.concat[l.flat_len..].iter_mut().zip(&c.anc_z) {
                *dst = leaky(*z, slope);
            }
        }
        let keep_scale = S::of(1.0 / (1.0 - self.cfg.dropout_p));
        let mut rng = dropout;
        for (i, d) in l.head.iter().enumerate() {
            let input: &[S] = if i == 0 { &c.concat } else { &c.head_out[i - 1] };
            dense_fwd(&p[d.w..d.w + d.nout * d.nin], &p[d.b..d.b + d.nout], input, &mut c.head_z[i]);
            let keep = &mut c.head_keep[i];
            match rng.as_deref_mut() {
                Some(r) => {
                    for k in keep.iter_mut() {
                        *k = if r.random::<f64>() < self.cfg.dropout_p { S::zero() } else { keep_scale };
                    }
                }
                None => keep.fill(S::one()),
            }
            let (z, out) = (&c.head_z[i], &mut c.head_out[i]);
            for ((o, z), k) in out.iter_mut().zip(z).zip(keep.iter()) {
                *o = leaky(*z, slope) * *k;
            }
        }
        let o = l.out;
        let last: &[S] = c.head_out.last().map_or(&c.concat, |v| v);
        let mut z = [S::zero()];
        dense_fwd(&p[o.w..o.w + o.nin], &p[o.b..o.b + 1], last, &mut z);
        c.out_z = z[0];
        match self.cfg.output_activation {
            OutputActivation::Softplus => softplus(z[0]),
            OutputActivation::Relu => z[0].max(S::zero()),
        }
    }

    /// Accumulates `dy · ∂y/∂θ` for the sample last run through `forward_one`.
    pub(crate) fn backward_one(&self, anc: &[S], c: &mut Cache<S>, dy: S, grad: &mut [S]) {
        let l = &self.layout;
        let p = &self.params;
        let g = l.geom;
        let slope = S::of(self.cfg.leaky_relu_slope);
        let dz_out = dy
            * match self.cfg.output_activation {
                OutputActivation::Softplus => sigmoid(c.out_z),
                OutputActivation::Relu => {
                    if c.out_z > S::zero() {
                        S::one()
                    } else {
                        S::zero()
                    }
                }
            };
        let mut g_next: Vec<S> = vec![S::zero(); l.out.nin];
        {
            let o = l.out;
            let last: &[S] = c.head_out.last().map_or(&c.concat, |v| v);
            let (gw, rest) = grad[o.w..].split_at_mut(o.nin);
            let gb = &mut rest[o.b - o.w - o.nin..][..1];
            dense_bwd(&p[o.w..o.w + o.nin], last, &[dz_out], gw, gb, Some(&mut g_next));
        }
        for (i, d) in l.head.iter().enumerate().rev() {
            let mut gz: Vec<S> = g_next.clone();
            for ((gv, z), k) in gz.iter_mut().zip(&c.head_z[i]).zip(&c.head_keep[i]) {
                *gv = *gv * *k * leaky_grad(*z, slope);
            }
            let input: &[S] = if i == 0 { &c.concat } else { &c.head_out[i - 1] };
            let mut gx = vec![S::zero(); d.nin];
            let (gw, gb) = split_wb(grad, d.w, d.nout * d.nin, d.b, d.nout);
            dense_bwd(&p[d.w..d.w + d.nout * d.nin], input, &gz, gw, gb, Some(&mut gx));
            g_next = gx;
        }
        if let Some(a) = l.anc {
            let mut gz: Vec<S> = g_next[l.flat_len..].to_vec();
            for (gv, z) in gz.iter_mut().zip(&c.anc_z) {
                *gv *= leaky_grad(*z, slope);
            }
            let (gw, gb) = split_wb(grad, a.w, a.nout * a.nin, a.b, a.nout);
            dense_bwd(&p[a.w..a.w + a.nout * a.nin], anc, &gz, gw, gb, None);
        }
        if l.blocks.is_empty() {
            return;
        }
        let (cc, _, _) = l.pooled;
        c.g_a[..cc * g.plane()].fill(S::zero());
        for (i, &src) in c.arg.iter().enumerate() {
            c.g_a[src] += g_next[i];
        }
        let mut ci: usize = l.blocks.iter().map(|b| b.convs.len()).sum();
        for (bi, b) in l.blocks.iter().enumerate().rev() {
            let need_input_grad = bi > 0;
            c.g_short[..b.cin * g.plane()].fill(S::zero());
            for (j, cv) in b.convs.iter().enumerate().rev() {
                ci -= 1;
                let n = cv.cout * g.plane();
                for (gv, z) in c.g_a[..n].iter_mut().zip(&c.conv_z[ci]) {
                    *gv *= leaky_grad(*z, slope);
                }
                if j + 1 == b.convs.len() && need_input_grad {
                    let m = b.cin * g.plane();
                    c.g_short[..m].copy_from_slice(&c.g_a[..m]);
                }
                let want = j > 0 || need_input_grad;
                let kk = g.k * g.k;
                let (gw, gb) = split_wb(grad, cv.w, cv.cout * cv.cin * kk, cv.b, cv.cout);
                let np = cv.cin * g.padded_plane();
                if want {
                    c.g_pad[..np].fill(S::zero());
                }
                conv_bwd(
                    g,
                    &c.conv_in[ci],
                    cv.cin,
                    &p[cv.w..cv.w + cv.cout * cv.cin * kk],
                    cv.cout,
                    &c.g_a[..n],
                    gw,
                    gb,
                    if want { Some(&mut c.g_pad[..np]) } else { None },
                );
                if want {
                    let m = cv.cin * g.plane();
                    c.g_a[..m].fill(S::zero());
                    g.unpad_add(&c.g_pad[..np], cv.cin, &mut c.g_a[..m]);
                }
            }
            if need_input_grad {
                let m = b.cin * g.plane();
                for (a, s) in c.g_a[..m].iter_mut().zip(&c.g_short[..m]) {
                    *a += *s;
                }
            }
        }
    }

    /// Mean squared error over `idx` and its gradient. Work is split into
    /// fixed chunks, each with its own dropout stream derived from
    /// `dropout_seed`, and partial gradients are summed in chunk order.
    pub(crate) fn loss_grad(&self, set: &TensorSet<S>, idx: &[usize], dropout_seed: Option<u64>) -> (f64, Vec<S>) {
        let n = idx.len();
        let inv = S::of(2.0 / n as f64);
        let parts: Vec<(f64, Vec<S>)> = idx
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(k, chunk)| {
                let mut cache = self.new_cache();
                let mut grad = vec![S::zero(); self.layout.n_params];
                let mut rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
                let mut sse = 0.0;
                for &i in chunk {
                    let y = self.forward_one(set.ddm_row(i), set.anc_row(i), &mut cache, rng.as_mut());
                    let e = y - set.target[i];
                    sse += e.f64() * e.f64();
                    self.backward_one(set.anc_row(i), &mut cache, e * inv, &mut grad);
                }
                (sse, grad)
            })
            .collect();
        let mut total = vec![S::zero(); self.layout.n_params];
        let mut sse = 0.0;
        for (s, gpart) in parts {
            sse += s;
            total.iter_mut().zip(&gpart).for_each(|(a, b)| *a += *b);
        }
        (sse / n as f64, total)
    }

    /// Infer-mode predictions for every row of `set`.
    pub fn predict_set(&self, set: &TensorSet<S>) -> Vec<f64> {
        let idx: Vec<usize> = (0..set.n).collect();
        idx.par_chunks(256)
            .map(|chunk| {
                let mut cache = self.new_cache();
                chunk
                    .iter()
                    .map(|&i| self.forward_one(set.ddm_row(i), set.anc_row(i), &mut cache, None).f64())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .concat()
    }

    /// Predictions in m³/m³ for a batch of bundles.
    pub fn forward(&self, batch: &[FeatureBundle], mode: Mode<'_>) -> Result<Vec<f64>, ModelError> {
        let set = TensorSet::from_bundles(batch, None, &self.cfg.ancillary_inputs)?;
        match mode {
            Mode::Infer => Ok(self.predict_set(&set)),
            Mode::Train(rng) => {
                let mut cache = self.new_cache();
                Ok((0..set.n).map(|i| self.forward_one(set.ddm_row(i), set.anc_row(i), &mut cache, Some(&mut *rng)).f64()).collect())
            }
        }
    }
}

fn split_wb<S>(grad: &mut [S], w: usize, wlen: usize, b: usize, blen: usize) -> (&mut [S], &mut [S]) {
    debug_assert_eq!(b, w + wlen);
    let (gw, rest) = grad[w..].split_at_mut(wlen);
    (gw, &mut rest[..blen])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            channels: vec![2, 3],
            ancillary_dense_width: 3,
            head_dense_widths: vec![4, 3],
            ancillary_inputs: vec!["a".into(), "b".into(), "c".into()],
            dropout_p: 0.0,
            leaky_relu_slope: 0.1,
            seed: 42,
            ..NetworkConfig::default()
        }
    }

    fn bundle(seed: u64, n_anc: usize) -> FeatureBundle {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        FeatureBundle {
            ddm: (0..DDM_BINS).map(|_| r.random_range(-1.5..1.5)).collect(),
            ancillary: (0..n_anc).map(|_| r.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn manifest_matches_hand_shape_calculus() {
        let net: Network<f64> = build_network(&NetworkConfig::default()).unwrap();
        let shapes: Vec<(String, Vec<usize>)> =
            net.layer_shapes().iter().map(|l| (l.name.clone(), l.shape.clone())).collect();
        let fixture: Vec<(&str, Vec<usize>)> = vec![
            ("ddm_input", vec![1, 17, 11]),
            ("block1.conv1", vec![16, 17, 11]),
            ("block1.conv2", vec![16, 17, 11]),
            ("block1.add", vec![16, 17, 11]),
            ("block2.conv1", vec![32, 17, 11]),
            ("block2.conv2", vec![32, 17, 11]),
            ("block2.add", vec![32, 17, 11]),
            ("pool", vec![32, 8, 5]),
            ("flatten", vec![1280]),
            ("ancillary_input", vec![33]),
            ("ancillary", vec![32]),
            ("concat", vec![1312]),
            ("head1", vec![64]),
            ("head2", vec![32]),
            ("output", vec![1]),
        ];
        let fixture: Vec<(String, Vec<usize>)> = fixture.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
        assert_eq!(shapes, fixture);
        let expect_params = (16 * 9 + 16) + (16 * 16 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32)
            + (32 * 33 + 32)
            + (64 * 1312 + 64)
            + (32 * 64 + 32)
            + (32 + 1);
        assert_eq!(net.n_params(), expect_params);
    }

    #[test]
    fn construction_errors_name_the_layer() {
        let mut cfg = tiny_cfg();
        cfg.channels = vec![4, 2];
        let e = build_network::<f64>(&cfg).unwrap_err();
        assert!(matches!(e, ModelError::Config { ref layer, .. } if layer == "block2.shortcut"), "{e}");
        cfg.channels = vec![2, 3, 4];
        assert!(matches!(build_network::<f64>(&cfg), Err(ModelError::Config { layer, .. }) if layer == "ddm_branch"));
        let mut cfg = tiny_cfg();
        cfg.dropout_p = 0.05;
        assert!(build_network::<f64>(&cfg).is_err());
        cfg.dropout_p = 0.01;
        cfg.kernel = 4;
        assert!(build_network::<f64>(&cfg).is_err());
    }

    #[test]
    fn zero_init_output_is_bias_only() {
        let cfg = NetworkConfig { init: InitScheme::Zeros, ..tiny_cfg() };
        let net: Network<f64> = build_network(&cfg).unwrap();
        for s in 0..5 {
            let y = net.forward(&[bundle(s, 3)], Mode::Infer).unwrap();
            assert_eq!(y[0], softplus(0.0));
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a: Network<f32> = build_network(&tiny_cfg()).unwrap();
        let b: Network<f32> = build_network(&tiny_cfg()).unwrap();
        assert_eq!(a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let c: Network<f32> = build_network(&NetworkConfig { seed: 43, ..tiny_cfg() }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn infer_is_deterministic_and_dropout_free_train_matches() {
        let net: Network<f64> = build_network(&tiny_cfg()).unwrap();
        let batch: Vec<_> = (0..6).map(|s| bundle(s, 3)).collect();
        let a = net.forward(&batch, Mode::Infer).unwrap();
        let b = net.forward(&batch, Mode::Infer).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
        assert_eq!(a, t);
        assert!(a.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn dropout_changes_train_mode_only() {
        let net: Network<f64> = build_network(&NetworkConfig { dropout_p: 0.04, ..tiny_cfg() }).unwrap();
        let batch: Vec<_> = (0..40).map(|s| bundle(s, 3)).collect();
        let a = net.forward(&batch, Mode::Infer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
        assert_ne!(a, t);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t, net.forward(&batch, Mode::Train(&mut rng)).unwrap());
    }

    #[test]
    fn zeroed_block_is_shortcut_identity_before_activation() {
        let mut net: Network<f64> = build_network(&tiny_cfg()).unwrap();
        for name in ["block2.conv1.weight", "block2.conv1.bias", "block2.conv2.weight", "block2.conv2.bias"] {
            net.tensor_mut(name).unwrap().fill(0.0);
        }
        let b = bundle(3, 3);
        let mut c = net.new_cache();
        net.forward_one(&b.ddm, &b.ancillary, &mut c, None);
        let input = &c.block_in[1];
        let sum = &c.conv_z[3];
        let plane = 17 * 11;
        assert_eq!(&sum[..2 * plane], &input[..]);
        assert!(sum[2 * plane..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ablated_ddm_branch_ignores_ddm() {
        let cfg = NetworkConfig { use_ddm: false, ..tiny_cfg() };
        let net: Network<f64> = build_network(&cfg).unwrap();
        assert!(net.layer_shapes().iter().all(|l| !l.name.starts_with("block")));
        let mut a = bundle(1, 3);
        let y0 = net.forward(&[a.clone()], Mode::Infer).unwrap();
        a.ddm.iter_mut().for_each(|v| *v *= -3.0);
        assert_eq!(y0, net.forward(&[a], Mode::Infer).unwrap());
    }

    #[test]
    fn non_finite_input_is_named() {
        let net: Network<f64> = build_network(&tiny_cfg()).unwrap();
        let mut b = bundle(1, 3);
        b.ancillary[1] = f64::NAN;
        assert_eq!(
            net.forward(&[bundle(0, 3), b.clone()], Mode::Infer),
            Err(ModelError::NonFinite { feature: "b".into(), sample: 1 })
        );
        b.ancillary[1] = 0.0;
        b.ddm[13] = f64::INFINITY;
        assert_eq!(net.forward(&[b], Mode::Infer), Err(ModelError::NonFinite { feature: "ddm[1][2]".into(), sample: 0 }));
    }
}
