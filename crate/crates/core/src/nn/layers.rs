//! Network building blocks: dense stacks, Gaussian heads, convolutional
//! encoders/decoders.
//!
//! Each block is a small spec struct that knows how to register its
//! parameters (`init`) and how to build its forward computation in a
//! [`Graph`] (`forward`). Passing `frozen = true` reads the same parameter
//! values but blocks gradients — used wherever one subsystem's loss must
//! not move another subsystem's weights.

use ndarray::Array2;
use rand::Rng as _;

use crate::nn::conv::ConvCfg;
use crate::nn::graph::{Graph, Id};
use crate::nn::params::ParamStore;
use crate::rng::Rng;

fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// Register a dense layer `name.w` (n_in × n_out) + `name.b` (1 × n_out).
pub fn init_dense(store: &mut ParamStore, rng: &mut Rng, name: &str, n_in: usize, n_out: usize) {
    let scale = 1.0 / (n_in as f64).sqrt();
    store.insert(&format!("{name}.w"), uniform_init(rng, n_in, n_out, scale));
    store.insert(&format!("{name}.b"), Array2::zeros((1, n_out)));
}

/// x · W + b for a layer registered by [`init_dense`].
pub fn dense(g: &mut Graph, store: &ParamStore, frozen: bool, name: &str, x: Id) -> Id {
    let (w, b) = if frozen {
        (
            g.param_frozen(store, &format!("{name}.w")),
            g.param_frozen(store, &format!("{name}.b")),
        )
    } else {
        (
            g.param(store, &format!("{name}.w")),
            g.param(store, &format!("{name}.b")),
        )
    };
    let h = g.matmul(x, w);
    g.add(h, b)
}

/// Fully connected stack: ReLU between layers, linear output.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub name: String,
    /// Layer widths, input first: `[n_in, hidden…, n_out]`.
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(name: impl Into<String>, dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least [in, out]");
        MlpSpec { name: name.into(), dims }
    }

    pub fn n_in(&self) -> usize {
        self.dims[0]
    }

    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for i in 0..self.dims.len() - 1 {
            init_dense(
                store,
                rng,
                &format!("{}.l{i}", self.name),
                self.dims[i],
                self.dims[i + 1],
            );
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id) -> Id {
        let mut h = x;
        let n_layers = self.dims.len() - 1;
        for i in 0..n_layers {
            h = dense(g, store, frozen, &format!("{}.l{i}", self.name), h);
            if i + 1 < n_layers {
                h = g.relu(h);
            }
        }
        h
    }
}

/// Diagonal-Gaussian head: a dense layer emitting 2·n columns split into
/// (mean, log-variance), with the log-variance clamped to a configured
/// interval.
#[derive(Debug, Clone)]
pub struct GaussianHeadSpec {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    pub lv_lo: f64,
    pub lv_hi: f64,
}

impl GaussianHeadSpec {
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        init_dense(store, rng, &self.name, self.n_in, 2 * self.n_out);
    }

    /// Returns (mean, log_var) node ids.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id) -> (Id, Id) {
        let out = dense(g, store, frozen, &self.name, x);
        let mean = g.slice_cols(out, 0, self.n_out);
        let lv_raw = g.slice_cols(out, self.n_out, self.n_out);
        let log_var = g.clamp(lv_raw, self.lv_lo, self.lv_hi);
        (mean, log_var)
    }
}

/// Chain convolution geometries: each stage is (c_out, k, stride, pad)
/// applied to the previous stage's output.
pub fn conv_stack(h: usize, w: usize, c_in: usize, stages: &[(usize, usize, usize, usize)]) -> Vec<ConvCfg> {
    let mut cfgs = Vec::with_capacity(stages.len());
    let (mut h, mut w, mut c) = (h, w, c_in);
    for &(c_out, k, stride, pad) in stages {
        let cfg = ConvCfg { h, w, c_in: c, c_out, k, stride, pad };
        h = cfg.out_h();
        w = cfg.out_w();
        c = c_out;
        cfgs.push(cfg);
    }
    cfgs
}

/// Convolutional encoder: conv + channel bias + ReLU per stage, then a
/// linear projection of the flattened features to `n_out`.
#[derive(Debug, Clone)]
pub struct ConvEncoderSpec {
    pub name: String,
    pub stages: Vec<ConvCfg>,
    pub n_out: usize,
}

impl ConvEncoderSpec {
    pub fn in_len(&self) -> usize {
        self.stages[0].in_len()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for (i, cfg) in self.stages.iter().enumerate() {
            let (rows, cols) = cfg.weight_shape();
            let scale = 1.0 / ((cfg.k * cfg.k * cfg.c_in) as f64).sqrt();
            store.insert(&format!("{}.c{i}.w", self.name), uniform_init(rng, rows, cols, scale));
            store.insert(&format!("{}.c{i}.b", self.name), Array2::zeros((1, cfg.c_out)));
        }
        let flat = self.stages.last().unwrap().out_len();
        init_dense(store, rng, &format!("{}.proj", self.name), flat, self.n_out);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, x: Id) -> Id {
        let mut h = x;
        for (i, cfg) in self.stages.iter().enumerate() {
            let wname = format!("{}.c{i}.w", self.name);
            let bname = format!("{}.c{i}.b", self.name);
            let (w, b) = if frozen {
                (g.param_frozen(store, &wname), g.param_frozen(store, &bname))
            } else {
                (g.param(store, &wname), g.param(store, &bname))
            };
            h = g.conv2d(h, w, *cfg);
            h = g.tile_add(h, b);
            h = g.relu(h);
        }
        dense(g, store, frozen, &format!("{}.proj", self.name), h)
    }
}

/// Convolutional decoder: linear projection from the latent to the deepest
/// feature map, then transposed convolutions walking the encoder stack
/// backwards, ending in a per-pixel Gaussian with an input-independent
/// learned log-variance map.
#[derive(Debug, Clone)]
pub struct ConvDecoderSpec {
    pub name: String,
    /// Stages in ENCODER order (same geometry list as the encoder);
    /// the decoder applies their transposes in reverse.
    pub stages: Vec<ConvCfg>,
    pub n_in: usize,
    pub lv_lo: f64,
    pub lv_hi: f64,
}

impl ConvDecoderSpec {
    /// Flattened output (image) width.
    pub fn out_len(&self) -> usize {
        self.stages[0].in_len()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        let deepest = self.stages.last().unwrap().out_len();
        init_dense(store, rng, &format!("{}.proj", self.name), self.n_in, deepest);
        for (i, cfg) in self.stages.iter().enumerate() {
            let (rows, cols) = cfg.weight_shape();
            let scale = 1.0 / ((cfg.k * cfg.k * cfg.c_in) as f64).sqrt();
            store.insert(&format!("{}.t{i}.w", self.name), uniform_init(rng, rows, cols, scale));
            store.insert(&format!("{}.t{i}.b", self.name), Array2::zeros((1, cfg.c_in)));
        }
        store.insert(&format!("{}.lv", self.name), Array2::zeros((1, self.out_len())));
    }

    /// Returns (mean, log_var) over pixels; log_var is a learned map
    /// broadcast over the batch.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frozen: bool, z: Id) -> (Id, Id) {
        let mut h = dense(g, store, frozen, &format!("{}.proj", self.name), z);
        h = g.relu(h);
        for (i, cfg) in self.stages.iter().enumerate().rev() {
            let wname = format!("{}.t{i}.w", self.name);
            let bname = format!("{}.t{i}.b", self.name);
            let (w, b) = if frozen {
                (g.param_frozen(store, &wname), g.param_frozen(store, &bname))
            } else {
                (g.param(store, &wname), g.param(store, &bname))
            };
            h = g.conv_t2d(h, w, *cfg);
            h = g.tile_add(h, b);
            if i > 0 {
                h = g.relu(h);
            }
        }
        let lv_name = format!("{}.lv", self.name);
        let lv_param = if frozen {
            g.param_frozen(store, &lv_name)
        } else {
            g.param(store, &lv_name)
        };
        let rows = g.value(h).nrows();
        let ones = g.constant(Array2::ones((rows, 1)));
        let tiled = g.matmul(ones, lv_param); // broadcast the (1, n) map over the batch
        let log_var = g.clamp(tiled, self.lv_lo, self.lv_hi);
        (h, log_var)
    }
}
