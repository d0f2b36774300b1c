//! The 3-D residual CNN channel predictor.
//!
//! Layer schedule for history length `L` on an `(Nr, Nt, K)` grid:
//!
//! ```text
//! input                      (B, 2L,  Nr, Nt, K)
//! conv block 1  k(3,7,5) p(1,3,2)   -> (B, 4L, ...)
//! max pool 1    k(3,3,3) p(1,1,1) s1 -> (B, 4L, ...)
//! res block xN: conv block 4L->8L, conv block 8L->16L, conv 16L->4L,
//!               + identity, ReLU
//! conv block 2  k(3,7,7) p(1,3,3)   -> (B, 2, Nr, Nt, K)
//! max pool 2    k(1,2,4) s(1,2,4)   -> (B, 2, Nr, Nt/2, K/4)
//! flatten + FC  X -> 2*Nr*Nt*K
//! ```
//!
//! A conv block is convolution, batch norm, ReLU. The FC output is read as
//! `(2, Nr, Nt, K)`: real plane then imaginary plane.

mod checkpoint;

use std::borrow::Borrow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTensor, TensorShape};
use crate::error::{config_err, shape_err, Result};
use crate::nn::{relu_backward, relu_inplace, BatchNorm3d, Conv3d, Linear, MaxPool3d, Param, Real, Tensor5};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

const BODY_KERNEL: [usize; 3] = [3, 7, 5];
const BODY_PAD: [usize; 3] = [1, 3, 2];
const HEAD_KERNEL: [usize; 3] = [3, 7, 7];
const HEAD_PAD: [usize; 3] = [1, 3, 3];
const UNIT: [usize; 3] = [1, 1, 1];
const POOL1: ([usize; 3], [usize; 3], [usize; 3]) = ([3, 3, 3], [1, 1, 1], [1, 1, 1]);
const POOL2: ([usize; 3], [usize; 3], [usize; 3]) = ([1, 2, 4], [0, 0, 0], [1, 2, 4]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormLayer {
    #[default]
    Batchnorm3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub history_len: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_subbands: usize,
    pub n_res_blocks: usize,
    /// `false` drops every residual block.
    pub use_residual: bool,
    pub activation: Activation,
    pub norm_layer: NormLayer,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            history_len: 3,
            n_rx: 4,
            n_tx: 32,
            n_subbands: 52,
            n_res_blocks: 2,
            use_residual: true,
            activation: Activation::Relu,
            norm_layer: NormLayer::Batchnorm3d,
        }
    }
}

impl ArchConfig {
    pub fn new(history_len: usize, shape: TensorShape) -> Self {
        Self {
            history_len,
            n_rx: shape.rx,
            n_tx: shape.tx,
            n_subbands: shape.subbands,
            ..Self::default()
        }
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape::new(self.n_subbands, self.n_rx, self.n_tx)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 {
            return config_err("history length L must be at least 1");
        }
        fc_input_dim(self.n_rx, self.n_tx, self.n_subbands)?;
        Ok(())
    }

    /// Residual blocks actually instantiated.
    pub fn active_res_blocks(&self) -> usize {
        if self.use_residual {
            self.n_res_blocks
        } else {
            0
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.history_len
    }

    /// `2 * Nr * Nt * K`.
    pub fn output_dim(&self) -> usize {
        2 * self.n_rx * self.n_tx * self.n_subbands
    }
}

/// Flattened size entering the FC block: `2 * Nr * floor(Nt/2) * floor(K/4)`.
pub fn fc_input_dim(nr: usize, nt: usize, k: usize) -> Result<usize> {
    if nr == 0 || nt == 0 || k == 0 {
        return config_err(format!("Nr={nr}, Nt={nt}, K={k} must all be at least 1"));
    }
    let x = 2 * nr * (nt / 2) * (k / 4);
    if x == 0 {
        return config_err(format!(
            "FC input dimension is zero for Nr={nr}, Nt={nt}, K={k}; the final pooling needs Nt >= 2 and K >= 4"
        ));
    }
    Ok(x)
}

fn check_window<C: Borrow<ChannelTensor>>(window: &[C], arch: &ArchConfig) -> Result<()> {
    if window.len() != arch.history_len {
        return shape_err(format!(
            "window holds {} snapshots, model expects L={}",
            window.len(),
            arch.history_len
        ));
    }
    for c in window {
        if c.borrow().shape() != arch.shape() {
            return shape_err(format!(
                "snapshot shape {} does not match model shape {}",
                c.borrow().shape(),
                arch.shape()
            ));
        }
    }
    Ok(())
}

/// Writes one window as `(2L, Nr, Nt, K)` reals: channel `2i` is the real
/// part of snapshot `i`, channel `2i+1` its imaginary part.
fn encode_into<T: Real, C: Borrow<ChannelTensor>>(window: &[C], out: &mut [T]) {
    let s = window[0].borrow().shape();
    let plane = s.len();
    for (i, c) in window.iter().enumerate() {
        let c = c.borrow();
        let (re, im) = out[2 * i * plane..(2 * i + 2) * plane].split_at_mut(plane);
        write_plane_pair(c, re, im);
    }
}

/// Storage `(K, Nr, Nt)` to network `(Nr, Nt, K)`.
fn write_plane_pair<T: Real>(c: &ChannelTensor, re: &mut [T], im: &mut [T]) {
    let s = c.shape();
    for k in 0..s.subbands {
        for r in 0..s.rx {
            for t in 0..s.tx {
                let v = c.get(k, r, t);
                let j = (r * s.tx + t) * s.subbands + k;
                re[j] = T::of(v.re);
                im[j] = T::of(v.im);
            }
        }
    }
}

/// Network `(2, Nr, Nt, K)` reals back to a storage-layout tensor.
pub fn decode_planes<T: Real>(values: &[T], shape: TensorShape, timestamp: f64) -> ChannelTensor {
    let plane = shape.len();
    assert_eq!(values.len(), 2 * plane, "decode expects two planes");
    ChannelTensor::from_fn(shape, timestamp, |k, r, t| {
        let j = (r * shape.tx + t) * shape.subbands + k;
        num_complex::Complex64::new(
            values[j].to_f64().unwrap_or(f64::NAN),
            values[plane + j].to_f64().unwrap_or(f64::NAN),
        )
    })
}

/// Encodes a single window as a batch of one.
pub fn encode_input<T: Real, C: Borrow<ChannelTensor>>(window: &[C]) -> Result<Tensor5<T>> {
    let first = window
        .first()
        .ok_or_else(|| crate::Error::Shape("empty window".into()))?
        .borrow()
        .shape();
    if window.iter().any(|c| c.borrow().shape() != first) {
        return shape_err("window mixes tensor shapes");
    }
    let mut t = Tensor5::zeros([1, 2 * window.len(), first.rx, first.tx, first.subbands]);
    encode_into(window, &mut t.data);
    Ok(t)
}

/// Recovers snapshot `slot` from an encoded window.
pub fn decode_input_slot<T: Real>(encoded: &Tensor5<T>, slot: usize, timestamp: f64) -> ChannelTensor {
    let [_, _, nr, nt, k] = encoded.dims;
    let shape = TensorShape::new(k, nr, nt);
    let plane = shape.len();
    decode_planes(&encoded.data[2 * slot * plane..(2 * slot + 2) * plane], shape, timestamp)
}

/// Encodes a target snapshot in the FC output order `(2, Nr, Nt, K)`.
pub fn encode_target<T: Real>(target: &ChannelTensor, out: &mut [T]) {
    let plane = target.shape().len();
    let (re, im) = out.split_at_mut(plane);
    write_plane_pair(target, re, im);
}

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv3d<T>,
    bn: BatchNorm3d<T>,
    out: Option<Tensor5<T>>,
}

impl<T: Real> ConvBlock<T> {
    fn new(cin: usize, cout: usize, kernel: [usize; 3], pad: [usize; 3], rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv3d::new(cin, cout, kernel, pad, UNIT, rng),
            bn: BatchNorm3d::new(cout),
            out: None,
        }
    }

    fn forward_eval(&self, x: &Tensor5<T>) -> Tensor5<T> {
        let mut y = self.bn.forward_eval(&self.conv.forward_eval(x));
        relu_inplace(&mut y.data);
        y
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Tensor5<T> {
        let h = self.conv.forward(x);
        let mut y = self.bn.forward(&h);
        relu_inplace(&mut y.data);
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, mut dy: Tensor5<T>, want_input_grad: bool) -> Option<Tensor5<T>> {
        let y = self.out.take().expect("ConvBlock::backward without forward");
        relu_backward(&y.data, &mut dy.data);
        let dh = self.bn.backward(&dy);
        self.conv.backward(&dh, want_input_grad)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((format!("{prefix}.conv.weight"), &mut self.conv.weight));
        out.push((format!("{prefix}.conv.bias"), &mut self.conv.bias));
        out.push((format!("{prefix}.bn.weight"), &mut self.bn.gamma));
        out.push((format!("{prefix}.bn.bias"), &mut self.bn.beta));
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        out.push((format!("{prefix}.bn.running_mean"), &mut self.bn.running_mean));
        out.push((format!("{prefix}.bn.running_var"), &mut self.bn.running_var));
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.bn.clear_cache();
        self.out = None;
    }
}

#[derive(Debug, Clone)]
struct ResBlock<T> {
    a: ConvBlock<T>,
    b: ConvBlock<T>,
    c: Conv3d<T>,
    out: Option<Tensor5<T>>,
}

impl<T: Real> ResBlock<T> {
    fn new(l: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: ConvBlock::new(4 * l, 8 * l, BODY_KERNEL, BODY_PAD, rng),
            b: ConvBlock::new(8 * l, 16 * l, BODY_KERNEL, BODY_PAD, rng),
            c: Conv3d::new(16 * l, 4 * l, BODY_KERNEL, BODY_PAD, UNIT, rng),
            out: None,
        }
    }

    fn add_skip_and_activate(mut z: Tensor5<T>, x: &Tensor5<T>) -> Tensor5<T> {
        for (v, s) in z.data.iter_mut().zip(&x.data) {
            *v += *s;
        }
        relu_inplace(&mut z.data);
        z
    }

    fn forward_eval(&self, x: &Tensor5<T>, trace: &mut Option<&mut Vec<LayerTrace>>, name: &str) -> Tensor5<T> {
        let h = self.a.forward_eval(x);
        record(trace, format!("{name}.conv_block_a"), &h);
        let h = self.b.forward_eval(&h);
        record(trace, format!("{name}.conv_block_b"), &h);
        let z = self.c.forward_eval(&h);
        record(trace, format!("{name}.conv3d"), &z);
        Self::add_skip_and_activate(z, x)
    }

    fn forward(&mut self, x: &Tensor5<T>) -> Tensor5<T> {
        let h = self.a.forward(x);
        let h = self.b.forward(&h);
        let z = self.c.forward(&h);
        let y = Self::add_skip_and_activate(z, x);
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, mut dy: Tensor5<T>) -> Tensor5<T> {
        let y = self.out.take().expect("ResBlock::backward without forward");
        relu_backward(&y.data, &mut dy.data);
        let dh = self.c.backward(&dy, true).expect("input grad requested");
        let dh = self.b.backward(dh, true).expect("input grad requested");
        let mut dx = self.a.backward(dh, true).expect("input grad requested");
        for (g, s) in dx.data.iter_mut().zip(&dy.data) {
            *g += *s;
        }
        dx
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.a.params_mut(&format!("{prefix}.a"), out);
        self.b.params_mut(&format!("{prefix}.b"), out);
        out.push((format!("{prefix}.c.weight"), &mut self.c.weight));
        out.push((format!("{prefix}.c.bias"), &mut self.c.bias));
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<T>)>) {
        self.a.buffers_mut(&format!("{prefix}.a"), out);
        self.b.buffers_mut(&format!("{prefix}.b"), out);
    }

    fn clear_cache(&mut self) {
        self.a.clear_cache();
        self.b.clear_cache();
        self.c.clear_cache();
        self.out = None;
    }
}

/// Name and activation extent after one stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: String,
    pub dims: Vec<usize>,
}

fn record<T>(trace: &mut Option<&mut Vec<LayerTrace>>, name: impl Into<String>, t: &Tensor5<T>) {
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(LayerTrace {
            name: name.into(),
            dims: t.dims.to_vec(),
        });
    }
}

/// Predictor weights plus the architecture they were built for.
#[derive(Debug, Clone)]
pub struct PredictorModel<T: Real = f32> {
    pub arch: ArchConfig,
    pub seed: u64,
    block1: ConvBlock<T>,
    pool1: MaxPool3d,
    res: Vec<ResBlock<T>>,
    block2: ConvBlock<T>,
    pool2: MaxPool3d,
    fc: Linear<T>,
    pooled: Option<[usize; 5]>,
}

/// Builds a freshly initialized predictor. Weights depend only on
/// `(arch, seed)`.
pub fn build_model<T: Real>(arch: &ArchConfig, seed: u64) -> Result<PredictorModel<T>> {
    arch.validate()?;
    let l = arch.history_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block1 = ConvBlock::new(2 * l, 4 * l, BODY_KERNEL, BODY_PAD, &mut rng);
    let res = (0..arch.active_res_blocks())
        .map(|_| ResBlock::new(l, &mut rng))
        .collect();
    let block2 = ConvBlock::new(4 * l, 2, HEAD_KERNEL, HEAD_PAD, &mut rng);
    let x = fc_input_dim(arch.n_rx, arch.n_tx, arch.n_subbands)?;
    let fc = Linear::new(x, arch.output_dim(), &mut rng);
    Ok(PredictorModel {
        arch: arch.clone(),
        seed,
        block1,
        pool1: MaxPool3d::new(POOL1.0, POOL1.1, POOL1.2),
        res,
        block2,
        pool2: MaxPool3d::new(POOL2.0, POOL2.1, POOL2.2),
        fc,
        pooled: None,
    })
}

impl<T: Real> PredictorModel<T> {
    pub fn fc_dims(&self) -> (usize, usize) {
        (self.fc.in_dim, self.fc.out_dim)
    }

    pub fn n_res_blocks(&self) -> usize {
        self.res.len()
    }

    /// Batch input extent `(B, 2L, Nr, Nt, K)`.
    pub fn input_dims(&self, batch: usize) -> [usize; 5] {
        let a = &self.arch;
        [batch, 2 * a.history_len, a.n_rx, a.n_tx, a.n_subbands]
    }

    fn check_input(&self, x: &Tensor5<T>) -> Result<()> {
        if x.dims != self.input_dims(x.batch()) {
            return shape_err(format!(
                "input extent {:?} does not match model input {:?}",
                x.dims,
                self.input_dims(x.batch())
            ));
        }
        Ok(())
    }

    /// Inference pass with running batch-norm statistics; returns
    /// `B x 2*Nr*Nt*K` values.
    pub fn forward_eval(&self, x: &Tensor5<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run_eval(x, &mut None))
    }

    /// Inference pass that also records every stage's activation extent.
    pub fn forward_traced(&self, x: &Tensor5<T>) -> Result<(Vec<T>, Vec<LayerTrace>)> {
        self.check_input(x)?;
        let mut trace = vec![LayerTrace {
            name: "input".into(),
            dims: x.dims.to_vec(),
        }];
        let y = self.run_eval(x, &mut Some(&mut trace));
        Ok((y, trace))
    }

    fn run_eval(&self, x: &Tensor5<T>, trace: &mut Option<&mut Vec<LayerTrace>>) -> Vec<T> {
        let mut h = self.block1.forward_eval(x);
        record(trace, "conv_block_1", &h);
        h = self.pool1.forward_eval(&h);
        record(trace, "maxpool_1", &h);
        for (i, r) in self.res.iter().enumerate() {
            h = r.forward_eval(&h, trace, &format!("res_block_{}", i + 1));
            record(trace, format!("res_block_{}", i + 1), &h);
        }
        h = self.block2.forward_eval(&h);
        record(trace, "conv_block_2", &h);
        h = self.pool2.forward_eval(&h);
        record(trace, "maxpool_2", &h);
        let b = h.batch();
        let y = self.fc.forward_eval(&h.data, b);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(LayerTrace {
                name: "flatten".into(),
                dims: vec![b, h.item_len()],
            });
            tr.push(LayerTrace {
                name: "fc".into(),
                dims: vec![b, self.fc.out_dim],
            });
        }
        y
    }

    /// Training pass: batch statistics, caches kept for [`Self::backward`].
    pub fn forward_train(&mut self, x: &Tensor5<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = self.block1.forward(x);
        h = self.pool1.forward(&h);
        for r in &mut self.res {
            h = r.forward(&h);
        }
        h = self.block2.forward(&h);
        h = self.pool2.forward(&h);
        self.pooled = Some(h.dims);
        Ok(self.fc.forward(&h.data, h.batch()))
    }

    /// Accumulates parameter gradients for upstream gradient `dy`
    /// (`B x 2*Nr*Nt*K`).
    pub fn backward(&mut self, dy: &[T]) {
        let pooled = self.pooled.take().expect("backward without forward_train");
        let dh = self.fc.backward(dy);
        let mut g = self.pool2.backward(&Tensor5::from_vec(pooled, dh));
        g = self.block2.backward(g, true).expect("input grad requested");
        for r in self.res.iter_mut().rev() {
            g = r.backward(g);
        }
        g = self.pool1.backward(&g);
        self.block1.backward(g, false);
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.block1.clear_cache();
        self.pool1.clear_cache();
        for r in &mut self.res {
            r.clear_cache();
        }
        self.block2.clear_cache();
        self.pool2.clear_cache();
        self.fc.clear_cache();
        self.pooled = None;
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        self.block1.params_mut("conv_block_1", &mut out);
        for (i, r) in self.res.iter_mut().enumerate() {
            r.params_mut(&format!("res_block_{}", i + 1), &mut out);
        }
        self.block2.params_mut("conv_block_2", &mut out);
        out.push(("fc.weight".into(), &mut self.fc.weight));
        out.push(("fc.bias".into(), &mut self.fc.bias));
        out
    }

    /// Batch-norm running statistics.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        self.block1.buffers_mut("conv_block_1", &mut out);
        for (i, r) in self.res.iter_mut().enumerate() {
            r.buffers_mut(&format!("res_block_{}", i + 1), &mut out);
        }
        self.block2.buffers_mut("conv_block_2", &mut out);
        out
    }

    /// Every persistent tensor (parameters, then buffers) by name.
    pub fn named_tensors(&self) -> Vec<(String, Vec<T>)> {
        let mut m = self.clone();
        m.clear_cache();
        let mut out: Vec<(String, Vec<T>)> = m
            .params_mut()
            .into_iter()
            .map(|(n, p)| (n, p.value.clone()))
            .collect();
        out.extend(m.buffers_mut().into_iter().map(|(n, b)| (n, b.clone())));
        out
    }

    pub fn parameter_count(&self) -> usize {
        let conv = |c: &Conv3d<T>| c.weight.len() + c.bias.len();
        let block = |b: &ConvBlock<T>| conv(&b.conv) + b.bn.gamma.len() + b.bn.beta.len();
        block(&self.block1)
            + self
                .res
                .iter()
                .map(|r| block(&r.a) + block(&r.b) + conv(&r.c))
                .sum::<usize>()
            + block(&self.block2)
            + self.fc.weight.len()
            + self.fc.bias.len()
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> PredictorModel<U> {
        let mut other = build_model::<U>(&self.arch, self.seed).expect("arch already validated");
        let src: Vec<(String, Vec<f64>)> = self
            .named_tensors()
            .into_iter()
            .map(|(n, v)| (n, v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()))
            .collect();
        other
            .assign_tensors(&src)
            .expect("identical architecture has identical tensors");
        other
    }

    /// Overwrites parameters and buffers by name. Every model tensor must
    /// be present with a matching length.
    pub fn assign_tensors(&mut self, src: &[(String, Vec<f64>)]) -> Result<()> {
        let find = |name: &str, len: usize| -> Result<&Vec<f64>> {
            let (_, v) = src
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| crate::Error::Checkpoint(format!("missing tensor {name}")))?;
            if v.len() != len {
                return Err(crate::Error::Checkpoint(format!(
                    "tensor {name} has {} values, model expects {len}",
                    v.len()
                )));
            }
            Ok(v)
        };
        for (name, p) in self.params_mut() {
            let v = find(&name, p.len())?;
            p.value = v.iter().map(|&x| T::of(x)).collect();
        }
        for (name, b) in self.buffers_mut() {
            let v = find(&name, b.len())?;
            *b = v.iter().map(|&x| T::of(x)).collect();
        }
        Ok(())
    }

    /// Predicts the next snapshot for every window.
    pub fn forward<C: Borrow<ChannelTensor>>(&self, windows: &[&[C]]) -> Result<Vec<ChannelTensor>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let x = encode_batch(windows, &self.arch)?;
        let y = self.forward_eval(&x)?;
        Ok(windows
            .iter()
            .zip(y.chunks(self.arch.output_dim()))
            .map(|(w, out)| decode_planes(out, self.arch.shape(), next_timestamp(w)))
            .collect())
    }
}

fn next_timestamp<C: Borrow<ChannelTensor>>(w: &[C]) -> f64 {
    let last = w[w.len() - 1].borrow().timestamp;
    if w.len() >= 2 {
        2.0 * last - w[w.len() - 2].borrow().timestamp
    } else {
        last
    }
}

/// Encodes windows into a `(B, 2L, Nr, Nt, K)` batch.
pub fn encode_batch<T: Real, C: Borrow<ChannelTensor>>(windows: &[&[C]], arch: &ArchConfig) -> Result<Tensor5<T>> {
    let item = 2 * arch.history_len * arch.shape().len();
    let mut x = Tensor5::zeros([
        windows.len(),
        2 * arch.history_len,
        arch.n_rx,
        arch.n_tx,
        arch.n_subbands,
    ]);
    for (w, chunk) in windows.iter().zip(x.data.chunks_mut(item)) {
        check_window(w, arch)?;
        encode_into(w, chunk);
    }
    Ok(x)
}
