use super::{output_extent, Real, Tensor5};

/// 3-D max pooling. Padded positions never win the max.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub stride: [usize; 3],
    cache: Option<([usize; 5], Vec<usize>)>,
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], pad: [usize; 3], stride: [usize; 3]) -> Self {
        assert!(
            (0..3).all(|i| pad[i] < kernel[i] || kernel[i] == 1 && pad[i] == 0),
            "pooling window must overlap the input"
        );
        Self {
            kernel,
            pad,
            stride,
            cache: None,
        }
    }

    pub fn output_spatial(&self, sp: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|i| output_extent(sp[i], self.kernel[i], self.pad[i], self.stride[i]))
    }

    fn run<T: Real>(&self, x: &Tensor5<T>) -> (Tensor5<T>, Vec<usize>) {
        let [bn, c, d, h, w] = x.dims;
        let [od, oh, ow] = self.output_spatial([d, h, w]);
        let mut y = Tensor5::zeros([bn, c, od, oh, ow]);
        let mut arg = vec![0usize; y.data.len()];
        let range = |o: usize, axis: usize, len: usize| {
            let start = (o * self.stride[axis]) as isize - self.pad[axis] as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.kernel[axis] as isize).min(len as isize)).max(0) as usize;
            lo..hi
        };
        let mut out = 0;
        for plane in 0..bn * c {
            let base = plane * d * h * w;
            for z in 0..od {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut at = usize::MAX;
                        for iz in range(z, 0, d) {
                            for ir in range(r, 1, h) {
                                for iq in range(q, 2, w) {
                                    let i = base + (iz * h + ir) * w + iq;
                                    if at == usize::MAX || x.data[i] > best {
                                        best = x.data[i];
                                        at = i;
                                    }
                                }
                            }
                        }
                        y.data[out] = best;
                        arg[out] = at;
                        out += 1;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn forward_eval<T: Real>(&self, x: &Tensor5<T>) -> Tensor5<T> {
        self.run(x).0
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor5<T>) -> Tensor5<T> {
        let (y, arg) = self.run(x);
        self.cache = Some((x.dims, arg));
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor5<T>) -> Tensor5<T> {
        let (dims, arg) = self
            .cache
            .take()
            .expect("MaxPool3d::backward without a training forward");
        let mut dx = Tensor5::zeros(dims);
        for (g, &i) in dy.data.iter().zip(&arg) {
            dx.data[i] += *g;
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
