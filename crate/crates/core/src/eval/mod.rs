//! Prediction quality metrics and the evaluation report.
//!
//! Every test sample is scored twice, once for the predictor under test and
//! once for sample-and-hold. Beamformer quality is measured per sub-band as
//! the cosine similarity between the top right singular vector of the
//! predicted channel and that of the true channel; the per-sample figure is
//! the mean over sub-bands (the minimum is kept as well). Sum rates transmit
//! with the predicted beamformer pair over the true channel.

mod metrics;
mod report;

use std::borrow::Borrow;
use std::sync::Arc;

pub use metrics::{
    canonicalize_phase, cosine_similarity, nmse, sh_predict, sum_rate, svd_beamformers, BeamformerSet, Db, Nmse,
};
pub use report::{
    unit_cdf, unit_histogram, Cdf, EvalReport, HeatmapPayload, Histogram, MethodMetrics, MethodSummary, Percentile,
    SampleEval, SpeedSummary, REPORT_SCHEMA_VERSION,
};

use crate::channel::ChannelTensor;
use crate::dataset::{Dataset, DatasetSample};
use crate::error::{shape_err, Error, Result};
use crate::nn::Real;
use crate::predictor::PredictorModel;

/// Anything that maps input windows to next-step channel predictions.
pub trait ChannelPredictor {
    fn name(&self) -> String;

    /// One prediction per sample, in order.
    fn predict(&self, samples: &[&DatasetSample]) -> Result<Vec<ChannelTensor>>;
}

impl<T: Real> ChannelPredictor for PredictorModel<T> {
    fn name(&self) -> String {
        if self.n_res_blocks() > 0 {
            "cnn_residual".into()
        } else {
            "cnn".into()
        }
    }

    fn predict(&self, samples: &[&DatasetSample]) -> Result<Vec<ChannelTensor>> {
        let windows: Vec<&[Arc<ChannelTensor>]> = samples.iter().map(|s| &s.inputs[..]).collect();
        self.forward(&windows)
    }
}

/// The sample-and-hold baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleAndHold;

impl ChannelPredictor for SampleAndHold {
    fn name(&self) -> String {
        "sample_and_hold".into()
    }

    fn predict(&self, samples: &[&DatasetSample]) -> Result<Vec<ChannelTensor>> {
        Ok(samples.iter().map(|s| sh_predict(s)).collect())
    }
}

impl<P: ChannelPredictor + ?Sized> ChannelPredictor for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, samples: &[&DatasetSample]) -> Result<Vec<ChannelTensor>> {
        (**self).predict(samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub snr_db: f64,
    /// Test sample whose amplitudes go into the heatmap payload.
    pub heatmap_sample: usize,
    /// Samples per predictor call.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            heatmap_sample: 0,
            batch_size: 64,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Scores one prediction against the truth and its exact beamformers.
pub fn score(truth: &ChannelTensor, exact: &BeamformerSet, pred: &ChannelTensor, snr: f64) -> Result<(MethodMetrics, Vec<f64>)> {
    let e = nmse(truth, pred)?;
    let bf = svd_beamformers(pred)?;
    let rho: Vec<f64> = exact
        .f
        .iter()
        .zip(&bf.f)
        .map(|(f, g)| cosine_similarity(f, g))
        .collect::<Result<_>>()?;
    let rate = sum_rate(truth, &bf, snr)?;
    let m = MethodMetrics {
        nmse: e.linear,
        nmse_db: e.db,
        rho_mean: rho.iter().sum::<f64>() / rho.len() as f64,
        rho_min: rho.iter().copied().fold(f64::INFINITY, f64::min),
        sum_rate: rate,
    };
    Ok((m, rho))
}

fn amplitudes<C: Borrow<ChannelTensor>>(h: C) -> Vec<f64> {
    let h = h.borrow();
    let s = h.shape();
    let mut out = Vec::with_capacity(s.len());
    for r in 0..s.rx {
        for t in 0..s.tx {
            for k in 0..s.subbands {
                out.push(h.get(k, r, t).norm());
            }
        }
    }
    out
}

/// Scores `model` and sample-and-hold on every sample of `test`.
pub fn evaluate<P: ChannelPredictor + ?Sized>(model: &P, test: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Invalid("test set is empty".into()));
    }
    if !opts.snr_db.is_finite() {
        return Err(Error::Invalid(format!("SNR {} dB", opts.snr_db)));
    }
    let snr = db_to_linear(opts.snr_db);
    let sh = SampleAndHold;
    let heat_at = opts.heatmap_sample.min(test.len() - 1);
    let mut records = Vec::with_capacity(test.len());
    let mut model_subband = Vec::with_capacity(test.len());
    let mut sh_subband = Vec::with_capacity(test.len());
    let mut heatmap = None;

    for (c, chunk) in test.samples.chunks(opts.batch_size.max(1)).enumerate() {
        let refs: Vec<&DatasetSample> = chunk.iter().collect();
        let preds = model.predict(&refs)?;
        if preds.len() != refs.len() {
            return shape_err(format!("{} predictions for {} samples", preds.len(), refs.len()));
        }
        for (j, (s, pred)) in refs.iter().zip(&preds).enumerate() {
            let index = c * opts.batch_size.max(1) + j;
            let truth: &ChannelTensor = &s.target;
            let exact = svd_beamformers(truth)?;
            let held = sh.predict(&[*s])?.pop().expect("one prediction");
            let (m, m_rho) = score(truth, &exact, pred, snr)?;
            let (b, b_rho) = score(truth, &exact, &held, snr)?;
            model_subband.push(m_rho);
            sh_subband.push(b_rho);
            if index == heat_at {
                heatmap = Some(HeatmapPayload {
                    sample_index: index,
                    n_rx: truth.shape().rx,
                    n_tx: truth.shape().tx,
                    n_subbands: truth.shape().subbands,
                    truth: amplitudes(truth),
                    model: amplitudes(pred),
                    sample_and_hold: amplitudes(&held),
                });
            }
            records.push(SampleEval {
                index,
                speed_kmh: s.speed_tag as f64,
                sequence: s.origin.sequence,
                last_input: s.origin.last_input,
                model: m,
                sample_and_hold: b,
                optimal_sum_rate: sum_rate(truth, &exact, snr)?,
            });
        }
    }

    Ok(EvalReport::assemble(
        model.name(),
        opts.snr_db,
        test,
        records,
        model_subband,
        sh_subband,
        heatmap.expect("heatmap sample is in range"),
    ))
}

#[cfg(test)]
mod tests;
