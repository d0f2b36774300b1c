use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::channel::ChannelTensor;
use crate::dataset::DatasetSample;
use crate::error::{shape_err, Error, Result};

/// A value in decibels. Serialized as a JSON number, or as the string
/// `"-inf"` for an exact zero on the linear scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Db {
    pub fn from_linear(x: f64) -> Self {
        Self(10.0 * x.log10())
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Db(v)),
            Repr::Text(t) if t == "-inf" => Ok(Db(f64::NEG_INFINITY)),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid dB value `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nmse {
    pub linear: f64,
    pub db: Db,
}

/// `||H - H_hat||_F^2 / ||H||_F^2`.
pub fn nmse(truth: &ChannelTensor, pred: &ChannelTensor) -> Result<Nmse> {
    if truth.shape() != pred.shape() {
        return shape_err(format!("truth {} vs prediction {}", truth.shape(), pred.shape()));
    }
    let power = truth.frob_norm_sq();
    if power == 0.0 {
        return Err(Error::Invalid("NMSE is undefined for an all-zero channel".into()));
    }
    let err: f64 = truth
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let linear = err / power;
    Ok(Nmse {
        linear,
        db: Db::from_linear(linear),
    })
}

/// Top singular triplet of every sub-band matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    /// Transmit beamformers, length `Nt`.
    pub f: Vec<DVector<Complex64>>,
    /// Receive combiners, length `Nr`.
    pub w: Vec<DVector<Complex64>>,
    pub sigma: Vec<f64>,
}

impl BeamformerSet {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// Rotates `v` so its largest-magnitude entry (first on ties) is real and
/// non-negative.
pub fn canonicalize_phase(v: &mut DVector<Complex64>) {
    let mut at = 0;
    let mut best = -1.0;
    for (i, x) in v.iter().enumerate() {
        let m = x.norm();
        if m > best {
            best = m;
            at = i;
        }
    }
    if best > 0.0 {
        let rot = v[at].conj() / best;
        for x in v.iter_mut() {
            *x *= rot;
        }
        v[at] = Complex64::new(v[at].re.max(0.0), 0.0);
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`, which maps `[x; y]` to `[Re Hf; Im Hf]`
/// for `f = x + iy`.
fn real_embedding(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = h.shape();
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let v = h[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    })
}

// nalgebra's complex SVD occasionally returns a wrong factorization of
// rank-one complex matrices, so the decomposition runs on the real embedding.
fn top_singular(h: &DMatrix<Complex64>, k: usize) -> Result<(DVector<Complex64>, DVector<Complex64>, f64)> {
    let (nr, nt) = h.shape();
    let svd = real_embedding(h)
        .try_svd(true, true, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical {
            subband: k,
            reason: "SVD did not converge".into(),
        })?;
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Numerical {
                subband: k,
                reason: "SVD returned no singular vectors".into(),
            })
        }
    };
    let sv = &svd.singular_values;
    if sv.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical {
            subband: k,
            reason: "non-finite singular value".into(),
        });
    }
    let i = sv.iter().enumerate().fold(0, |b, (i, s)| if *s > sv[b] { i } else { b });
    let mut f = DVector::from_fn(nt, |t, _| Complex64::new(v_t[(i, t)], v_t[(i, t + nt)]));
    let fn_ = f.norm();
    if fn_ == 0.0 {
        return Err(Error::Numerical {
            subband: k,
            reason: "zero right singular vector".into(),
        });
    }
    f /= Complex64::from(fn_);
    canonicalize_phase(&mut f);
    let hf = h * &f;
    let n = hf.norm();
    let w = if n > 0.0 {
        hf / Complex64::from(n)
    } else {
        let mut w = DVector::from_fn(nr, |r, _| Complex64::new(u[(r, i)], u[(r + nr, i)]));
        w /= Complex64::from(w.norm());
        canonicalize_phase(&mut w);
        w
    };
    Ok((f, w, sv[i]))
}

/// Per-sub-band top right (`f`) and left (`w`) singular vectors.
///
/// `f` is phase-canonical; `w` is `H f / ||H f||`, which makes
/// `w^H H f = sigma` real.
pub fn svd_beamformers(h: &ChannelTensor) -> Result<BeamformerSet> {
    if !h.is_finite() {
        return Err(Error::Invalid("channel has non-finite entries".into()));
    }
    let s = h.shape();
    let mut out = BeamformerSet {
        f: Vec::with_capacity(s.subbands),
        w: Vec::with_capacity(s.subbands),
        sigma: Vec::with_capacity(s.subbands),
    };
    for k in 0..s.subbands {
        let (f, w, sigma) = top_singular(&h.subband(k), k)?;
        out.f.push(f);
        out.w.push(w);
        out.sigma.push(sigma);
    }
    Ok(out)
}

/// `|f^H g| / (||f|| ||g||)`, clamped to `[0, 1]`.
pub fn cosine_similarity(f: &DVector<Complex64>, g: &DVector<Complex64>) -> Result<f64> {
    if f.len() != g.len() {
        return shape_err(format!("vectors of length {} and {}", f.len(), g.len()));
    }
    // one pass, same accumulation order for all three sums, so that
    // identical inputs give exactly 1
    let mut inner = Complex64::new(0.0, 0.0);
    let (mut ff, mut gg) = (0.0, 0.0);
    for (a, b) in f.iter().zip(g.iter()) {
        inner += a.conj() * b;
        ff += a.norm_sqr();
        gg += b.norm_sqr();
    }
    if ff == 0.0 || gg == 0.0 {
        return Err(Error::Invalid("cosine similarity of a zero vector".into()));
    }
    Ok((inner.norm() / (ff * gg).sqrt()).min(1.0))
}

/// `sum_k log2(1 + snr |w_k^H H_k f_k|^2)` in bit/s/Hz.
pub fn sum_rate(h: &ChannelTensor, bf: &BeamformerSet, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Invalid(format!("SNR must be positive, got {snr}")));
    }
    let s = h.shape();
    if bf.len() != s.subbands {
        return shape_err(format!("{} beamformers for {} sub-bands", bf.len(), s.subbands));
    }
    let mut rate = 0.0;
    for k in 0..s.subbands {
        let (f, w) = (&bf.f[k], &bf.w[k]);
        if f.len() != s.tx || w.len() != s.rx {
            return shape_err(format!(
                "sub-band {k}: beamformer lengths ({}, {}) for Nt={}, Nr={}",
                f.len(),
                w.len(),
                s.tx,
                s.rx
            ));
        }
        let g = w.dotc(&(h.subband(k) * f)).norm_sqr();
        rate += (1.0 + snr * g).log2();
    }
    Ok(rate)
}

/// Sample-and-hold: the newest observation is the prediction.
pub fn sh_predict(sample: &DatasetSample) -> ChannelTensor {
    sample.last_input().clone()
}
