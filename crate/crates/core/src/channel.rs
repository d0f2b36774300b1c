//! Channel containers shared by every stage of the pipeline.
//!
//! A [`ChannelTensor`] holds one snapshot of the downlink channel in storage
//! layout `(K, Nr, Nt)`: sub-band major, then receive antenna, then transmit
//! antenna. Slice `k` is the `Nr x Nt` matrix of sub-band `k`. Values are
//! held in 64-bit; dataset samples are rounded to 32-bit storage precision.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::sim::SimConfig;

/// Extent of a channel tensor in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub subbands: usize,
    pub rx: usize,
    pub tx: usize,
}

impl TensorShape {
    pub fn new(subbands: usize, rx: usize, tx: usize) -> Self {
        Self { subbands, rx, tx }
    }

    pub fn len(&self) -> usize {
        self.subbands * self.rx * self.tx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, k: usize, r: usize, t: usize) -> usize {
        (k * self.rx + r) * self.tx + t
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(K={}, Nr={}, Nt={})", self.subbands, self.rx, self.tx)
    }
}

/// One time step of the 3-D downlink channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    shape: TensorShape,
    data: Vec<Complex64>,
    /// Sampling instant in seconds.
    pub timestamp: f64,
}

impl ChannelTensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
            timestamp: 0.0,
        }
    }

    pub fn from_vec(shape: TensorShape, data: Vec<Complex64>, timestamp: f64) -> Result<Self> {
        if data.len() != shape.len() {
            return shape_err(format!(
                "{} values supplied for a tensor of shape {shape}",
                data.len()
            ));
        }
        Ok(Self {
            shape,
            data,
            timestamp,
        })
    }

    /// Builds a tensor from `f(k, r, t)`.
    pub fn from_fn(
        shape: TensorShape,
        timestamp: f64,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for k in 0..shape.subbands {
            for r in 0..shape.rx {
                for t in 0..shape.tx {
                    data.push(f(k, r, t));
                }
            }
        }
        Self {
            shape,
            data,
            timestamp,
        }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, k: usize, r: usize, t: usize) -> Complex64 {
        self.data[self.shape.index(k, r, t)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, r: usize, t: usize, v: Complex64) {
        let i = self.shape.index(k, r, t);
        self.data[i] = v;
    }

    /// The `Nr x Nt` matrix of sub-band `k`.
    pub fn subband(&self, k: usize) -> DMatrix<Complex64> {
        let s = self.shape;
        let base = k * s.rx * s.tx;
        DMatrix::from_fn(s.rx, s.tx, |r, t| self.data[base + r * s.tx + t])
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Multiplies every entry by a real factor.
    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Rounds every component to the nearest 32-bit float, the precision
    /// datasets are stored at.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = Complex64::new(v.re as f32 as f64, v.im as f32 as f64);
        }
    }

    /// True when every component is exactly representable as `f32`.
    pub fn is_f32_exact(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re as f32 as f64 == v.re && v.im as f32 as f64 == v.im)
    }
}

/// A uniformly sampled run of channel snapshots for one user at one speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSequence {
    pub tensors: Vec<ChannelTensor>,
    /// UE speed in km/h.
    pub speed_kmh: f64,
    /// Seconds between consecutive snapshots.
    pub sample_period: f64,
    pub sim_config: SimConfig,
    /// Average element power removed by normalization; 1.0 until normalized.
    pub norm_power: f64,
}

impl ChannelSequence {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn shape(&self) -> Option<TensorShape> {
        self.tensors.first().map(ChannelTensor::shape)
    }
}
