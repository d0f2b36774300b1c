use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Db;
use crate::channel::TensorShape;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const CDF_POINTS: usize = 101;
const HISTOGRAM_BINS: usize = 20;
const PERCENTILES: [f64; 7] = [5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0];

/// Scores of one method on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodMetrics {
    pub nmse: f64,
    pub nmse_db: Db,
    /// Cosine similarity averaged over sub-bands.
    pub rho_mean: f64,
    /// Worst sub-band cosine similarity.
    pub rho_min: f64,
    /// bit/s/Hz summed over sub-bands.
    pub sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEval {
    /// Position in the test set.
    pub index: usize,
    pub speed_kmh: f64,
    pub sequence: usize,
    pub last_input: usize,
    pub model: MethodMetrics,
    pub sample_and_hold: MethodMetrics,
    /// Rate with the exact beamformers of the true channel.
    pub optimal_sum_rate: f64,
}

/// Empirical CDF sampled on a uniform grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cdf {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Equal-width bins over `[0, 1]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Percentile {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSummary {
    pub name: String,
    pub mean_rho: f64,
    pub median_rho: f64,
    pub min_rho: f64,
    pub rho_percentiles: Vec<Percentile>,
    /// Mean over samples of the worst sub-band similarity.
    pub mean_rho_min: f64,
    pub mean_nmse: f64,
    /// `10 log10` of `mean_nmse`.
    pub mean_nmse_db: Db,
    pub median_nmse_db: Db,
    pub mean_sum_rate: f64,
    /// Mean cosine similarity of each sub-band over all samples.
    pub subband_mean_rho: Vec<f64>,
    pub rho_cdf: Cdf,
    pub rho_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedSummary {
    pub speed_kmh: f64,
    pub n_samples: usize,
    pub model_mean_rho: f64,
    pub sh_mean_rho: f64,
    pub improvement: f64,
}

/// Channel amplitudes of one sample, each laid out `(Nr, Nt, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapPayload {
    pub sample_index: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_subbands: usize,
    pub truth: Vec<f64>,
    pub model: Vec<f64>,
    pub sample_and_hold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_name: String,
    pub n_samples: usize,
    pub snr_db: f64,
    pub shape: TensorShape,
    pub history_len: usize,
    pub model: MethodSummary,
    pub sample_and_hold: MethodSummary,
    /// `(model - sh) / sh` of the mean cosine similarity.
    pub improvement: f64,
    pub mean_optimal_sum_rate: f64,
    pub per_speed: Vec<SpeedSummary>,
    pub heatmap: HeatmapPayload,
    pub samples: Vec<SampleEval>,
}

/// Sum of the values in sorted order, so the result does not depend on
/// sample order.
fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    if sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn unit_cdf(values: &[f64]) -> Cdf {
    let s = sorted(values);
    let grid: Vec<f64> = (0..CDF_POINTS).map(|i| i as f64 / (CDF_POINTS - 1) as f64).collect();
    let values = grid
        .iter()
        .map(|&x| s.partition_point(|&v| v <= x) as f64 / s.len() as f64)
        .collect();
    Cdf { grid, values }
}

pub fn unit_histogram(values: &[f64]) -> Histogram {
    let edges = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &v in values {
        let b = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

fn relative(model: f64, base: f64) -> f64 {
    if base > 0.0 {
        (model - base) / base
    } else {
        0.0
    }
}

fn summarize(name: String, metrics: &[MethodMetrics], subband_rho: &[Vec<f64>]) -> MethodSummary {
    let rho: Vec<f64> = metrics.iter().map(|m| m.rho_mean).collect();
    let rho_sorted = sorted(&rho);
    let nmse: Vec<f64> = metrics.iter().map(|m| m.nmse).collect();
    let db_sorted = sorted(&metrics.iter().map(|m| m.nmse_db.0).collect::<Vec<_>>());
    let mid = db_sorted.len() / 2;
    let median_db = if db_sorted.len() % 2 == 1 {
        db_sorted[mid]
    } else if db_sorted[mid - 1] == db_sorted[mid] {
        db_sorted[mid]
    } else {
        0.5 * (db_sorted[mid - 1] + db_sorted[mid])
    };
    let n_sub = subband_rho.first().map_or(0, Vec::len);
    let subband_mean_rho = (0..n_sub)
        .map(|k| stable_mean(&subband_rho.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let mean_nmse = stable_mean(&nmse);
    MethodSummary {
        name,
        mean_rho: stable_mean(&rho),
        median_rho: percentile(&rho_sorted, 50.0),
        min_rho: rho_sorted[0],
        rho_percentiles: PERCENTILES
            .iter()
            .map(|&p| Percentile {
                p,
                value: percentile(&rho_sorted, p),
            })
            .collect(),
        mean_rho_min: stable_mean(&metrics.iter().map(|m| m.rho_min).collect::<Vec<_>>()),
        mean_nmse,
        mean_nmse_db: Db::from_linear(mean_nmse),
        median_nmse_db: Db(median_db),
        mean_sum_rate: stable_mean(&metrics.iter().map(|m| m.sum_rate).collect::<Vec<_>>()),
        subband_mean_rho,
        rho_cdf: unit_cdf(&rho),
        rho_histogram: unit_histogram(&rho),
    }
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn assemble(
        model_name: String,
        snr_db: f64,
        test: &Dataset,
        samples: Vec<SampleEval>,
        model_subband: Vec<Vec<f64>>,
        sh_subband: Vec<Vec<f64>>,
        heatmap: HeatmapPayload,
    ) -> Self {
        let m: Vec<MethodMetrics> = samples.iter().map(|s| s.model).collect();
        let b: Vec<MethodMetrics> = samples.iter().map(|s| s.sample_and_hold).collect();
        let model = summarize(model_name.clone(), &m, &model_subband);
        let sample_and_hold = summarize("sample_and_hold".into(), &b, &sh_subband);

        let mut speeds: Vec<f64> = samples.iter().map(|s| s.speed_kmh).collect();
        speeds.sort_by(f64::total_cmp);
        speeds.dedup();
        let per_speed = speeds
            .into_iter()
            .map(|v| {
                let sel: Vec<&SampleEval> = samples.iter().filter(|s| s.speed_kmh == v).collect();
                let mr = stable_mean(&sel.iter().map(|s| s.model.rho_mean).collect::<Vec<_>>());
                let br = stable_mean(&sel.iter().map(|s| s.sample_and_hold.rho_mean).collect::<Vec<_>>());
                SpeedSummary {
                    speed_kmh: v,
                    n_samples: sel.len(),
                    model_mean_rho: mr,
                    sh_mean_rho: br,
                    improvement: relative(mr, br),
                }
            })
            .collect();

        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            model_name,
            n_samples: samples.len(),
            snr_db,
            shape: test.shape,
            history_len: test.history_len,
            improvement: relative(model.mean_rho, sample_and_hold.mean_rho),
            mean_optimal_sum_rate: stable_mean(&samples.iter().map(|s| s.optimal_sum_rate).collect::<Vec<_>>()),
            model,
            sample_and_hold,
            per_speed,
            heatmap,
            samples,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report and checks its internal consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.check()?;
        Ok(r)
    }

    /// Structural checks beyond what the field types enforce.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return bad(format!("report schema version {}", self.schema_version));
        }
        if self.samples.len() != self.n_samples || self.n_samples == 0 {
            return bad(format!("{} sample records for n_samples = {}", self.samples.len(), self.n_samples));
        }
        for s in [&self.model, &self.sample_and_hold] {
            if s.rho_histogram.counts.iter().sum::<usize>() != self.n_samples {
                return bad(format!("{} histogram does not cover every sample", s.name));
            }
            if s.rho_cdf.grid.len() != s.rho_cdf.values.len() || s.rho_cdf.values.windows(2).any(|w| w[1] < w[0]) {
                return bad(format!("{} CDF is not non-decreasing", s.name));
            }
        }
        for r in &self.samples {
            for m in [&r.model, &r.sample_and_hold] {
                if !(0.0..=1.0).contains(&m.rho_mean) || !(0.0..=1.0).contains(&m.rho_min) || !(m.nmse >= 0.0) {
                    return bad(format!("sample {} has out-of-range metrics", r.index));
                }
            }
        }
        let h = &self.heatmap;
        let len = h.n_rx * h.n_tx * h.n_subbands;
        if [&h.truth, &h.model, &h.sample_and_hold].iter().any(|v| v.len() != len) {
            return bad("heatmap planes do not match (Nr, Nt, K)".into());
        }
        Ok(())
    }

    /// One row per sample for external plotting.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from(
            "index,speed_kmh,sequence,last_input,\
             model_nmse,model_nmse_db,model_rho_mean,model_rho_min,model_sum_rate,\
             sh_nmse,sh_nmse_db,sh_rho_mean,sh_rho_min,sh_sum_rate,optimal_sum_rate\n",
        );
        let db = |d: Db| {
            if d.0 == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{:e}", d.0)
            }
        };
        for r in &self.samples {
            let _ = write!(s, "{},{},{},{}", r.index, r.speed_kmh, r.sequence, r.last_input);
            for m in [&r.model, &r.sample_and_hold] {
                let _ = write!(
                    s,
                    ",{:e},{},{:e},{:e},{:e}",
                    m.nmse,
                    db(m.nmse_db),
                    m.rho_mean,
                    m.rho_min,
                    m.sum_rate
                );
            }
            let _ = writeln!(s, ",{:e}", r.optimal_sum_rate);
        }
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "model_mean_rho={:.6}, sh_mean_rho={:.6}, improvement={:.2}%",
            self.model.mean_rho,
            self.sample_and_hold.mean_rho,
            100.0 * self.improvement
        )
    }
}
