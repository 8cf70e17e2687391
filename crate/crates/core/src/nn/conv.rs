//! 2-D convolution primitives via im2col, channels-last.
//!
//! Image tensors are flattened rows: a batch of images is (B, H·W·C) with
//! the channel index fastest, i.e. element (y, x, c) sits at column
//! (y·W + x)·C + c. Weights are (k·k·C_in, C_out) with the same
//! (ky, kx, c_in) ordering. This layout makes the reshape between the
//! matrix-multiply view and the image view free.
//!
//! Three primitives cover forward and backward for both convolution and
//! transposed convolution:
//!
//! - `conv2d_fwd(x, w)`         = Col(x) · W
//! - `conv2d_bwd_input(gy, w)`  = Col*(gy · Wᵀ)   (Col* = scatter-add adjoint)
//! - `conv2d_bwd_weight(x, gy)` = Col(x)ᵀ · gy
//!
//! A transposed conv *forward* is `conv2d_bwd_input`, and its backward pass
//! reuses `conv2d_fwd` / `conv2d_bwd_weight` with the operands swapped.

use ndarray::Array2;

/// Geometry of one convolution: input image size, channels, kernel,
/// stride, zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvCfg {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvCfg {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Flattened input width (columns of x).
    pub fn in_len(&self) -> usize {
        self.h * self.w * self.c_in
    }

    /// Flattened output width.
    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w() * self.c_out
    }

    /// Weight matrix shape.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.k * self.k * self.c_in, self.c_out)
    }
}

/// Expand a batch of images into patch rows: (B·outH·outW, k·k·C_in).
fn im2col(x: &Array2<f64>, cfg: &ConvCfg) -> Array2<f64> {
    let (batch, in_len) = x.dim();
    assert_eq!(in_len, cfg.in_len(), "im2col: input width mismatch");
    let (oh, ow) = (cfg.out_h(), cfg.out_w());
    let kkc = cfg.k * cfg.k * cfg.c_in;
    let mut col = Array2::zeros((batch * oh * ow, kkc));
    for b in 0..batch {
        let row = x.row(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let out_row = (b * oh + oy) * ow + ox;
                let mut dst = col.row_mut(out_row);
                for ky in 0..cfg.k {
                    let y = (oy * cfg.stride + ky) as isize - cfg.pad as isize;
                    if y < 0 || y >= cfg.h as isize {
                        continue;
                    }
                    for kx in 0..cfg.k {
                        let xc = (ox * cfg.stride + kx) as isize - cfg.pad as isize;
                        if xc < 0 || xc >= cfg.w as isize {
                            continue;
                        }
                        let src = ((y as usize * cfg.w) + xc as usize) * cfg.c_in;
                        let d = (ky * cfg.k + kx) * cfg.c_in;
                        for c in 0..cfg.c_in {
                            dst[d + c] = row[src + c];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-add patch rows back into image space.
fn col2im(col: &Array2<f64>, batch: usize, cfg: &ConvCfg) -> Array2<f64> {
    let (oh, ow) = (cfg.out_h(), cfg.out_w());
    let mut x = Array2::zeros((batch, cfg.in_len()));
    for b in 0..batch {
        let mut row = x.row_mut(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let src_row = col.row((b * oh + oy) * ow + ox);
                for ky in 0..cfg.k {
                    let y = (oy * cfg.stride + ky) as isize - cfg.pad as isize;
                    if y < 0 || y >= cfg.h as isize {
                        continue;
                    }
                    for kx in 0..cfg.k {
                        let xc = (ox * cfg.stride + kx) as isize - cfg.pad as isize;
                        if xc < 0 || xc >= cfg.w as isize {
                            continue;
                        }
                        let dst = ((y as usize * cfg.w) + xc as usize) * cfg.c_in;
                        let s = (ky * cfg.k + kx) * cfg.c_in;
                        for c in 0..cfg.c_in {
                            row[dst + c] += src_row[s + c];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution forward: (B, H·W·C_in) → (B, outH·outW·C_out).
pub fn conv2d_fwd(x: &Array2<f64>, w: &Array2<f64>, cfg: &ConvCfg) -> Array2<f64> {
    let batch = x.nrows();
    debug_assert_eq!(w.dim(), cfg.weight_shape(), "conv2d: weight shape mismatch");
    let col = im2col(x, cfg);
    let out = col.dot(w); // (B·outH·outW, C_out)
    out.into_shape((batch, cfg.out_len())).expect("conv reshape")
}

/// Gradient w.r.t. the input, given the output gradient. Also serves as the
/// *forward* pass of the transposed convolution.
pub fn conv2d_bwd_input(gy: &Array2<f64>, w: &Array2<f64>, cfg: &ConvCfg) -> Array2<f64> {
    let batch = gy.nrows();
    debug_assert_eq!(gy.ncols(), cfg.out_len(), "conv2d_bwd_input: width mismatch");
    let gy_mat = gy
        .to_owned()
        .into_shape((batch * cfg.out_h() * cfg.out_w(), cfg.c_out))
        .expect("gy reshape");
    let gcol = gy_mat.dot(&w.t());
    col2im(&gcol, batch, cfg)
}

/// Gradient w.r.t. the weights, given input and output gradient.
pub fn conv2d_bwd_weight(x: &Array2<f64>, gy: &Array2<f64>, cfg: &ConvCfg) -> Array2<f64> {
    let batch = x.nrows();
    let col = im2col(x, cfg);
    let gy_mat = gy
        .to_owned()
        .into_shape((batch * cfg.out_h() * cfg.out_w(), cfg.c_out))
        .expect("gy reshape");
    col.t().dot(&gy_mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use crate::nn::params::ParamStore;
    use crate::oracles::finite_diff::{finite_diff_grad, max_rel_error};
    use crate::rng::stream;
    use rand::Rng as _;

    /// Direct (quadruple-loop) convolution, the independent reference.
    fn conv_naive(x: &Array2<f64>, w: &Array2<f64>, cfg: &ConvCfg) -> Array2<f64> {
        let batch = x.nrows();
        let (oh, ow) = (cfg.out_h(), cfg.out_w());
        let mut out = Array2::zeros((batch, cfg.out_len()));
        for b in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..cfg.c_out {
                        let mut acc = 0.0;
                        for ky in 0..cfg.k {
                            for kx in 0..cfg.k {
                                let y = (oy * cfg.stride + ky) as isize - cfg.pad as isize;
                                let xx = (ox * cfg.stride + kx) as isize - cfg.pad as isize;
                                if y < 0 || y >= cfg.h as isize || xx < 0 || xx >= cfg.w as isize {
                                    continue;
                                }
                                for ci in 0..cfg.c_in {
                                    let xi = ((y as usize * cfg.w) + xx as usize) * cfg.c_in + ci;
                                    let wi = (ky * cfg.k + kx) * cfg.c_in + ci;
                                    acc += x[(b, xi)] * w[(wi, co)];
                                }
                            }
                        }
                        out[(b, (oy * ow + ox) * cfg.c_out + co)] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, "conv-test");
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    const CFG: ConvCfg = ConvCfg {
        h: 5,
        w: 5,
        c_in: 2,
        c_out: 3,
        k: 3,
        stride: 2,
        pad: 1,
    };

    #[test]
    fn matches_naive_convolution() {
        let x = rand_mat(2, CFG.in_len(), 1);
        let w = rand_mat(CFG.weight_shape().0, CFG.weight_shape().1, 2);
        let fast = conv2d_fwd(&x, &w, &CFG);
        let slow = conv_naive(&x, &w, &CFG);
        let gap = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap < 1e-12, "gap {gap}");
    }

    #[test]
    fn output_geometry() {
        assert_eq!(CFG.out_h(), 3);
        assert_eq!(CFG.out_w(), 3);
        let no_pad = ConvCfg { pad: 0, stride: 1, ..CFG };
        assert_eq!(no_pad.out_h(), 3);
        let x = rand_mat(1, CFG.in_len(), 3);
        let w = rand_mat(CFG.weight_shape().0, CFG.weight_shape().1, 4);
        assert_eq!(conv2d_fwd(&x, &w, &CFG).dim(), (1, CFG.out_len()));
    }

    #[test]
    fn transpose_is_true_adjoint() {
        // ⟨conv(x), y⟩ = ⟨x, convT(y)⟩ for all x, y — the defining property.
        let x = rand_mat(2, CFG.in_len(), 5);
        let y = rand_mat(2, CFG.out_len(), 6);
        let w = rand_mat(CFG.weight_shape().0, CFG.weight_shape().1, 7);
        let lhs: f64 = (&conv2d_fwd(&x, &w, &CFG) * &y).sum();
        let rhs: f64 = (&x * &conv2d_bwd_input(&y, &w, &CFG)).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradcheck_through_graph() {
        let mut store = ParamStore::new();
        store.insert("w", rand_mat(CFG.weight_shape().0, CFG.weight_shape().1, 8));
        store.insert("x", rand_mat(2, CFG.in_len(), 9));
        let build = |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, "x");
            let w = g.param(s, "w");
            let y = g.conv2d(x, w, CFG);
            let t = g.tanh(y);
            let sq = g.square(t);
            g.sum(sq)
        };
        let mut g = Graph::new();
        let loss = build(&mut g, &store);
        let analytic = store.flatten_like(&g.backward(loss));
        let point = store.flatten();
        let numeric = finite_diff_grad(
            &mut |p| {
                let mut s2 = store.clone();
                s2.set_from_flat(p);
                let mut g2 = Graph::new();
                let l = build(&mut g2, &s2);
                g2.scalar(l)
            },
            &point,
            1e-6,
        );
        let err = max_rel_error(&analytic, &numeric);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn conv_transpose_gradcheck_through_graph() {
        let mut store = ParamStore::new();
        store.insert("w", rand_mat(CFG.weight_shape().0, CFG.weight_shape().1, 10));
        store.insert("y", rand_mat(2, CFG.out_len(), 11));
        let build = |g: &mut Graph, s: &ParamStore| {
            let y = g.param(s, "y");
            let w = g.param(s, "w");
            let x = g.conv_t2d(y, w, CFG);
            let t = g.tanh(x);
            let sq = g.square(t);
            g.sum(sq)
        };
        let mut g = Graph::new();
        let loss = build(&mut g, &store);
        let analytic = store.flatten_like(&g.backward(loss));
        let point = store.flatten();
        let numeric = finite_diff_grad(
            &mut |p| {
                let mut s2 = store.clone();
                s2.set_from_flat(p);
                let mut g2 = Graph::new();
                let l = build(&mut g2, &s2);
                g2.scalar(l)
            },
            &point,
            1e-6,
        );
        let err = max_rel_error(&analytic, &numeric);
        assert!(err < 1e-6, "rel err {err}");
    }
}
