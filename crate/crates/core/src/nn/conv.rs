use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{xavier_uniform, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// 2-D cross-correlation layer with bias, square kernel.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let area = kernel * kernel;
        let w = xavier_uniform(&[out_ch, in_ch, kernel, kernel], in_ch * area, out_ch * area, rng);
        Conv2dLayer {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    /// Output spatial size for an `h`×`w` input, if at least 1×1.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ho = ConvGeom::out_dim(h, self.kernel, self.stride, self.padding)?;
        let wo = ConvGeom::out_dim(w, self.kernel, self.stride, self.padding)?;
        Some((ho, wo))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() != 4 || xs[1] != self.in_ch {
            return Err(Error::shape(
                "conv2d_forward",
                format!("[B, {}, H, W]", self.in_ch),
                format!("{xs:?}"),
            ));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, grad_check_params, Coverage};
    use crate::rng::seeded;
    use rand::Rng;

    /// Direct six-loop cross-correlation; sums channel, then kernel row,
    /// then kernel column, then adds bias.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for bi in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.get(&[oc, ch, ky, kx]) * x.get(&[bi, ch, iy as usize, ix as usize]);
                                }
                            }
                        }
                        let off = out.offset(&[bi, oc, oy, ox]);
                        out.data_mut()[off] = acc + b.data()[oc];
                    }
                }
            }
        }
        out
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn run(layer: &Conv2dLayer, store: &ParamStore<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::inference();
        let xv = g.input(x.clone(), false);
        let y = layer.forward(&mut g, store, xv)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn identity_kernel() {
        let mut store = ParamStore::new();
        let layer = Conv2dLayer::new(&mut store, "c", 1, 1, 1, 1, 0, &mut seeded(0));
        store.get_mut(layer.weight).data_mut()[0] = 1.0;
        let x = random(&[1, 1, 4, 5], 1);
        assert_eq!(run(&layer, &store, &x).unwrap(), x);
    }

    #[test]
    fn matches_naive_loop_exactly() {
        for (stride, pad, seed) in [(1, 0, 2), (1, 1, 3), (2, 1, 4)] {
            let mut store = ParamStore::new();
            let layer = Conv2dLayer::new(&mut store, "c", 2, 3, 3, stride, pad, &mut seeded(seed));
            let mut rng = seeded(seed + 100);
            for v in store.get_mut(layer.bias).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let x = random(&[1, 2, 5, 5], seed + 7);
            let got = run(&layer, &store, &x).unwrap();
            let want = naive(&x, store.get(layer.weight), store.get(layer.bias), stride, pad);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn output_size_rule() {
        let mut store = ParamStore::<f64>::new();
        let layer = Conv2dLayer::new(&mut store, "c", 1, 1, 3, 2, 1, &mut seeded(0));
        assert_eq!(layer.output_size(64, 64), Some((32, 32)));
        assert_eq!(layer.output_size(5, 7), Some((3, 4)));
        let big = Conv2dLayer::new(&mut store, "d", 1, 1, 5, 1, 0, &mut seeded(0));
        assert_eq!(big.output_size(3, 3), None);
        assert!(run(&big, &store, &Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn channel_mismatch_lists_shapes() {
        let mut store = ParamStore::<f64>::new();
        let layer = Conv2dLayer::new(&mut store, "c", 2, 1, 3, 1, 1, &mut seeded(0));
        let err = run(&layer, &store, &Tensor::zeros(&[1, 3, 4, 4])).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("[B, 2, H, W]") && msg.contains("[1, 3, 4, 4]"), "{msg}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let layer = Conv2dLayer::new(&mut store, "c", 2, 3, 3, 2, 1, &mut seeded(9));
        let x = random(&[2, 2, 5, 4], 10);
        let r = grad_check_params(
            &store,
            |g, s| {
                let xv = g.constant(x.clone());
                let y = layer.forward(g, s, xv)?;
                let t = g.tanh(y)?;
                g.sum(t)
            },
            1e-6,
            1e-4,
            Coverage::All,
            None,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
        let r = grad_check(
            |g, xv| {
                let y = layer.forward(g, &store, xv)?;
                let sq = g.square(y)?;
                g.sum(sq)
            },
            &x,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }
}
