use rand_chacha::ChaCha8Rng;

use super::{gemm, output_extent, Param, Real, Tensor5};

/// 3-D convolution with zero padding and bias, lowered to GEMM through an
/// im2col buffer per batch item.
#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub stride: [usize; 3],
    /// `(out, in, kd, kh, kw)`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor5<T>>,
}

struct Geometry {
    in_sp: [usize; 3],
    out_sp: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
    stride: [usize; 3],
}

impl Geometry {
    fn out_volume(&self) -> usize {
        self.out_sp.iter().product()
    }

    /// Calls `f(col_index, input_index)` for every in-bounds tap of channel
    /// row block `c`; out-of-bounds taps are left untouched.
    #[inline]
    fn for_each_tap(&self, cin: usize, mut f: impl FnMut(usize, usize)) {
        let [d, h, w] = self.in_sp;
        let [od_n, oh_n, ow_n] = self.out_sp;
        let [kd, kh, kw] = self.kernel;
        let n = self.out_volume();
        let mut row = 0;
        for c in 0..cin {
            let cbase = c * d * h * w;
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let rbase = row * n;
                        row += 1;
                        for od in 0..od_n {
                            let id = (od * self.stride[0] + a) as isize - self.pad[0] as isize;
                            if id < 0 || id >= d as isize {
                                continue;
                            }
                            for oh in 0..oh_n {
                                let ih = (oh * self.stride[1] + b) as isize - self.pad[1] as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let ibase = cbase + (id as usize * h + ih as usize) * w;
                                let obase = rbase + (od * oh_n + oh) * ow_n;
                                // valid ow satisfy 0 <= ow*s + e - pad < w
                                let s = self.stride[2];
                                let lo = (self.pad[2].saturating_sub(e)).div_ceil(s);
                                let hi = if w + self.pad[2] > e {
                                    ((w + self.pad[2] - e - 1) / s + 1).min(ow_n)
                                } else {
                                    0
                                };
                                for ow in lo..hi {
                                    let iw = ow * s + e - self.pad[2];
                                    f(obase + ow, ibase + iw);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv3d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        pad: [usize; 3],
        stride: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel.iter().product::<usize>();
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            kernel,
            pad,
            stride,
            weight: Param::uniform(out_ch * fan_in, bound, rng),
            bias: Param::uniform(out_ch, bound, rng),
            input: None,
        }
    }

    pub fn output_spatial(&self, sp: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|i| output_extent(sp[i], self.kernel[i], self.pad[i], self.stride[i]))
    }

    fn geometry(&self, x: &Tensor5<T>) -> Geometry {
        let in_sp = x.spatial();
        Geometry {
            in_sp,
            out_sp: self.output_spatial(in_sp),
            kernel: self.kernel,
            pad: self.pad,
            stride: self.stride,
        }
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn im2col(&self, g: &Geometry, item: &[T], col: &mut [T]) {
        col.fill(T::zero());
        g.for_each_tap(self.in_ch, |ci, ii| col[ci] = item[ii]);
    }

    pub fn forward_eval(&self, x: &Tensor5<T>) -> Tensor5<T> {
        assert_eq!(x.channels(), self.in_ch, "conv input channels");
        let g = self.geometry(x);
        let n = g.out_volume();
        let rows = self.col_rows();
        let [od, oh, ow] = g.out_sp;
        let mut y = Tensor5::zeros([x.batch(), self.out_ch, od, oh, ow]);
        let mut col = vec![T::zero(); rows * n];
        for b in 0..x.batch() {
            self.im2col(&g, x.item(b), &mut col);
            let out = y.item_mut(b);
            for (o, chunk) in out.chunks_mut(n).enumerate() {
                chunk.fill(self.bias.value[o]);
            }
            gemm(
                self.out_ch,
                rows,
                n,
                T::one(),
                &self.weight.value,
                false,
                &col,
                false,
                T::one(),
                out,
            );
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor5<T>) -> Tensor5<T> {
        let y = self.forward_eval(x);
        self.input = Some(x.clone());
        y
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `want_input_grad` is set.
    pub fn backward(&mut self, dy: &Tensor5<T>, want_input_grad: bool) -> Option<Tensor5<T>> {
        let x = self
            .input
            .take()
            .expect("Conv3d::backward without a training forward");
        let g = self.geometry(&x);
        let n = g.out_volume();
        let rows = self.col_rows();
        let mut col = vec![T::zero(); rows * n];
        let mut dcol = if want_input_grad {
            vec![T::zero(); rows * n]
        } else {
            Vec::new()
        };
        let mut dx = want_input_grad.then(|| Tensor5::zeros(x.dims));

        for b in 0..x.batch() {
            let dyb = dy.item(b);
            for (o, chunk) in dyb.chunks(n).enumerate() {
                let s: T = chunk.iter().copied().sum();
                self.bias.grad[o] += s;
            }
            self.im2col(&g, x.item(b), &mut col);
            gemm(
                self.out_ch,
                n,
                rows,
                T::one(),
                dyb,
                false,
                &col,
                true,
                T::one(),
                &mut self.weight.grad,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    rows,
                    self.out_ch,
                    n,
                    T::one(),
                    &self.weight.value,
                    true,
                    dyb,
                    false,
                    T::zero(),
                    &mut dcol,
                );
                let dxb = dx.item_mut(b);
                g.for_each_tap(self.in_ch, |ci, ii| dxb[ii] += dcol[ci]);
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}
