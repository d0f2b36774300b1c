//! Clustered multipath channel simulator with per-path Doppler.
//!
//! Each scenario is a fixed set of `P` propagation paths. The sub-band
//! matrix at time `t` is
//!
//! ```text
//! H_k(t) = sum_p a_p * exp(j 2pi nu_p t) * exp(-j 2pi f_k tau_p) * a_rx(phi_p) a_tx(theta_p)^H
//! ```
//!
//! with `nu_p = nu_max * cos(psi_p)` and uniform linear arrays at both ends.
//! The model is seedable and gives temporal, spatial and frequency
//! correlation with a single knob each (speed, angles, delay spread).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSequence, ChannelTensor, TensorShape};
use crate::error::{config_err, Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Base station antennas (Nt).
    pub n_tx: usize,
    /// UE antennas (Nr).
    pub n_rx: usize,
    /// Resource blocks / sub-bands (K).
    pub n_subbands: usize,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
    /// Occupied bandwidth in Hz.
    pub bandwidth: f64,
    /// CSI-RS periodicity in seconds.
    pub sample_period: f64,
    pub n_paths: usize,
    /// Linear power ratio of the fixed LOS path to the diffuse paths.
    pub rician_k: f64,
    /// Element spacing in wavelengths.
    pub antenna_spacing: f64,
    /// Mean of the (truncated) exponential path delay, seconds.
    pub mean_delay: f64,
    /// Upper truncation of path delays, seconds.
    pub max_delay: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tx: 32,
            n_rx: 4,
            n_subbands: 52,
            carrier_freq: 2.1e9,
            bandwidth: 20e6,
            sample_period: 5e-3,
            n_paths: 16,
            rician_k: 0.0,
            antenna_spacing: 0.5,
            mean_delay: 100e-9,
            max_delay: 1e-6,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_subbands == 0 {
            return config_err("antenna and sub-band counts must be at least 1");
        }
        if !(self.sample_period > 0.0) {
            return config_err("sample_period must be positive");
        }
        if self.n_paths == 0 {
            return config_err("n_paths must be at least 1");
        }
        if !(self.rician_k >= 0.0) {
            return config_err("rician_k must be non-negative");
        }
        if !(self.carrier_freq > 0.0) || !(self.bandwidth > 0.0) {
            return config_err("carrier_freq and bandwidth must be positive");
        }
        if !(self.mean_delay > 0.0) || !(self.max_delay > 0.0) {
            return config_err("mean_delay and max_delay must be positive");
        }
        Ok(())
    }

    pub fn shape(&self) -> TensorShape {
        TensorShape::new(self.n_subbands, self.n_rx, self.n_tx)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Maximum Doppler shift in Hz for a UE moving at `speed_kmh`.
    pub fn max_doppler(&self, speed_kmh: f64) -> f64 {
        speed_kmh / 3.6 / self.wavelength()
    }

    /// Centre frequency of each sub-band, evenly spaced across the band.
    pub fn subband_frequencies(&self) -> Vec<f64> {
        let k = self.n_subbands as f64;
        let spacing = self.bandwidth / k;
        let lowest = self.carrier_freq - self.bandwidth / 2.0 + spacing / 2.0;
        (0..self.n_subbands)
            .map(|i| lowest + i as f64 * spacing)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
    /// Angle of departure at the base station, radians.
    pub aod: f64,
    /// Angle of arrival at the UE, radians.
    pub aoa: f64,
    /// Angle between the path and the direction of motion, radians.
    pub doppler_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub paths: Vec<Path>,
    pub speed_kmh: f64,
    /// `speed / wavelength` in Hz.
    pub max_doppler: f64,
}

impl Scenario {
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    pub fn doppler(&self, path: &Path) -> f64 {
        self.max_doppler * path.doppler_angle.cos()
    }
}

fn uniform_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-PI..PI)
}

/// Inverse-CDF sample of an exponential truncated to `[0, max]`.
fn truncated_exponential(rng: &mut ChaCha8Rng, mean: f64, max: f64) -> f64 {
    let u: f64 = rng.gen();
    let mass = 1.0 - (-max / mean).exp();
    (-mean * (1.0 - u * mass).ln()).clamp(0.0, max)
}

/// Draws the path set for `config.seed`. Gains are rescaled so that the
/// realized total power is exactly one.
pub fn make_scenario(config: &SimConfig, speed_kmh: f64) -> Result<Scenario> {
    config.validate()?;
    if !(speed_kmh >= 0.0) {
        return Err(Error::Invalid(format!(
            "speed must be non-negative, got {speed_kmh}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_paths;

    let mut paths: Vec<Path> = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Path {
                gain: Complex64::new(re, im) / 2f64.sqrt(),
                delay: truncated_exponential(&mut rng, config.mean_delay, config.max_delay),
                aod: uniform_angle(&mut rng),
                aoa: uniform_angle(&mut rng),
                doppler_angle: uniform_angle(&mut rng),
            }
        })
        .collect();

    let los = config.rician_k > 0.0;
    let los_power = if los {
        config.rician_k / (config.rician_k + 1.0)
    } else {
        0.0
    };
    let diffuse_start = if los { 1 } else { 0 };
    let diffuse_power = if los && n == 1 { 0.0 } else { 1.0 - los_power };
    if los {
        paths[0].gain = Complex64::new(if n == 1 { 1.0 } else { los_power.sqrt() }, 0.0);
    }
    let drawn: f64 = paths[diffuse_start..]
        .iter()
        .map(|p| p.gain.norm_sqr())
        .sum();
    if drawn > 0.0 {
        let scale = (diffuse_power / drawn).sqrt();
        for p in &mut paths[diffuse_start..] {
            p.gain *= scale;
        }
    }

    Ok(Scenario {
        paths,
        speed_kmh,
        max_doppler: config.max_doppler(speed_kmh),
    })
}

/// Uniform linear array steering vector, element `m = exp(j 2pi d m sin(angle))`.
pub fn array_response(angle: f64, n: usize, spacing: f64) -> Vec<Complex64> {
    let phase = 2.0 * PI * spacing * angle.sin();
    (0..n)
        .map(|m| Complex64::from_polar(1.0, phase * m as f64))
        .collect()
}

/// Channel snapshot at time `t` seconds.
pub fn channel_at(scenario: &Scenario, config: &SimConfig, t: f64) -> ChannelTensor {
    let shape = config.shape();
    ChannelTensor::from_vec(shape, accumulate(scenario, config, t), t).expect("accumulator sized from shape")
}

/// Full-precision sub-band matrices at time `t`, before storage rounding.
pub fn subband_matrices(scenario: &Scenario, config: &SimConfig, t: f64) -> Vec<DMatrix<Complex64>> {
    let shape = config.shape();
    let acc = accumulate(scenario, config, t);
    (0..shape.subbands)
        .map(|k| DMatrix::from_fn(shape.rx, shape.tx, |r, c| acc[shape.index(k, r, c)]))
        .collect()
}

fn accumulate(scenario: &Scenario, config: &SimConfig, t: f64) -> Vec<Complex64> {
    let shape = config.shape();
    let freqs = config.subband_frequencies();
    let mut acc = vec![Complex64::new(0.0, 0.0); shape.len()];

    for path in &scenario.paths {
        let a_rx = array_response(path.aoa, shape.rx, config.antenna_spacing);
        let a_tx: Vec<Complex64> = array_response(path.aod, shape.tx, config.antenna_spacing)
            .into_iter()
            .map(|v| v.conj())
            .collect();
        let time_phase = Complex64::from_polar(1.0, 2.0 * PI * scenario.doppler(path) * t);
        let base = path.gain * time_phase;
        for (k, f) in freqs.iter().enumerate() {
            let coef = base * Complex64::from_polar(1.0, -2.0 * PI * f * path.delay);
            for (r, ar) in a_rx.iter().enumerate() {
                let row = coef * ar;
                let off = shape.index(k, r, 0);
                for (slot, at) in acc[off..off + shape.tx].iter_mut().zip(&a_tx) {
                    *slot += row * at;
                }
            }
        }
    }

    acc
}

/// Samples `q` snapshots at `0, T_s, 2T_s, ...` from one scenario.
pub fn generate_sequence(config: &SimConfig, speed_kmh: f64, q: usize) -> Result<ChannelSequence> {
    if q < 2 {
        return Err(Error::Invalid(format!(
            "sequence length must be at least 2, got {q}"
        )));
    }
    let scenario = make_scenario(config, speed_kmh)?;
    let tensors = (0..q)
        .map(|n| channel_at(&scenario, config, n as f64 * config.sample_period))
        .collect();
    Ok(ChannelSequence {
        tensors,
        speed_kmh,
        sample_period: config.sample_period,
        sim_config: config.clone(),
        norm_power: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            n_tx: 8,
            n_rx: 2,
            n_subbands: 6,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = SimConfig {
            seed: 7,
            ..SimConfig::default()
        };
        assert_eq!(
            make_scenario(&cfg, 30.0).unwrap(),
            make_scenario(&cfg, 30.0).unwrap()
        );
    }

    #[test]
    fn nlos_power_is_normalized() {
        let cfg = SimConfig {
            n_paths: 64,
            rician_k: 0.0,
            ..SimConfig::default()
        };
        let sc = make_scenario(&cfg, 10.0).unwrap();
        assert_abs_diff_eq!(sc.total_power(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_los_dominates() {
        let k: f64 = 1e9;
        let cfg = SimConfig {
            n_paths: 2,
            rician_k: k,
            ..SimConfig::default()
        };
        let sc = make_scenario(&cfg, 10.0).unwrap();
        let share = sc.paths[0].gain.norm_sqr() / sc.total_power();
        assert!(share >= 0.999999, "LOS share {share}");
        assert_abs_diff_eq!(share, k / (k + 1.0), epsilon = 1e-12);
        assert_eq!(sc.paths[0].gain.im, 0.0);
    }

    #[test]
    fn scenario_rejects_bad_input() {
        let cfg = SimConfig {
            n_paths: 0,
            ..SimConfig::default()
        };
        assert!(make_scenario(&cfg, 1.0).is_err());
        assert!(make_scenario(&SimConfig::default(), -1.0).is_err());
    }

    #[test]
    fn delays_and_angles_in_range() {
        for seed in 0..20 {
            let cfg = SimConfig {
                seed,
                ..SimConfig::default()
            };
            for p in make_scenario(&cfg, 30.0).unwrap().paths {
                assert!((0.0..=cfg.max_delay).contains(&p.delay));
                for a in [p.aod, p.aoa, p.doppler_angle] {
                    assert!((-PI..PI).contains(&a));
                }
            }
        }
    }

    #[test]
    fn array_response_closed_forms() {
        for v in array_response(0.0, 4, 0.5) {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
        }
        let v = array_response(PI / 2.0, 2, 0.5);
        assert_abs_diff_eq!(v[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1].im, 0.0, epsilon = 1e-12);
        for v in array_response(0.37, 17, 0.5) {
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn subband_centres_are_symmetric_about_carrier() {
        let cfg = SimConfig::default();
        let f = cfg.subband_frequencies();
        assert_eq!(f.len(), 52);
        let spacing = cfg.bandwidth / 52.0;
        assert_abs_diff_eq!(f[0], cfg.carrier_freq - 10e6 + spacing / 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(f[0] + f[51], 2.0 * cfg.carrier_freq, epsilon = 1e-3);
    }

    #[test]
    fn static_single_path_is_frozen() {
        let cfg = SimConfig {
            n_paths: 1,
            ..small(3)
        };
        let sc = make_scenario(&cfg, 0.0).unwrap();
        let a = channel_at(&sc, &cfg, 0.0);
        let b = channel_at(&sc, &cfg, 1.234);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn zero_delay_is_frequency_flat() {
        let cfg = small(4);
        let mut sc = make_scenario(&cfg, 30.0).unwrap();
        sc.paths.truncate(1);
        sc.paths[0].delay = 0.0;
        let h = channel_at(&sc, &cfg, 0.01);
        let s = h.shape();
        for k in 1..s.subbands {
            for r in 0..s.rx {
                for t in 0..s.tx {
                    assert_eq!(h.get(k, r, t), h.get(0, r, t));
                }
            }
        }
    }

    #[test]
    fn single_path_rotates_by_doppler_phase() {
        let cfg = SimConfig {
            n_paths: 1,
            ..small(5)
        };
        let sc = make_scenario(&cfg, 60.0).unwrap();
        let nu = sc.doppler(&sc.paths[0]);
        let (t, dt) = (0.013, 0.005);
        let a = channel_at(&sc, &cfg, t);
        let b = channel_at(&sc, &cfg, t + dt);
        let rot = Complex64::from_polar(1.0, 2.0 * PI * nu * dt);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let expect = x * rot;
            assert_abs_diff_eq!(expect.re, y.re, epsilon = 1e-12);
            assert_abs_diff_eq!(expect.im, y.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_path_subbands_are_rank_one() {
        let cfg = SimConfig {
            n_paths: 1,
            ..small(6)
        };
        let sc = make_scenario(&cfg, 30.0).unwrap();
        for t in [0.0, 0.005, 0.31] {
            for h in subband_matrices(&sc, &cfg, t) {
                let mut s: Vec<f64> = h.singular_values().iter().copied().collect();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                assert!(s[1] < 1e-10 * s[0], "{s:?}");
            }
        }
    }

    #[test]
    fn sequence_timestamps_and_static_limit() {
        let cfg = small(8);
        let seq = generate_sequence(&cfg, 0.0, 50).unwrap();
        assert_eq!(seq.len(), 50);
        assert_eq!(seq.norm_power, 1.0);
        for (n, h) in seq.tensors.iter().enumerate() {
            assert_abs_diff_eq!(h.timestamp, n as f64 * 0.005, epsilon = 1e-15);
            assert_eq!(h.as_slice(), seq.tensors[0].as_slice());
        }
        let seq = generate_sequence(&cfg, 30.0, 100).unwrap();
        assert_abs_diff_eq!(seq.tensors[99].timestamp, 0.495, epsilon = 1e-12);
        assert!(generate_sequence(&cfg, 30.0, 1).is_err());
    }

    #[test]
    fn sequences_are_bit_identical_per_seed() {
        let cfg = small(9);
        let a = generate_sequence(&cfg, 40.0, 20).unwrap();
        let b = generate_sequence(&cfg, 40.0, 20).unwrap();
        assert_eq!(a, b);
        assert!(a.tensors.iter().all(ChannelTensor::is_finite));
    }
}
