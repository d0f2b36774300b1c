//! Frequency selectivity grows with the delay spread, averaged over scenarios.

use chanpred::sim::{channel_at, make_scenario, SimConfig};
use num_complex::Complex64;

/// Mean over seeds of the normalized correlation between sub-bands `k` and `k + lag`.
fn mean_correlation(mean_delay: f64, lag: usize, seeds: u64) -> f64 {
    let mut total = 0.0;
    for seed in 0..seeds {
        let cfg = SimConfig {
            n_tx: 4,
            n_rx: 2,
            n_subbands: 52,
            mean_delay,
            max_delay: 10.0 * mean_delay,
            seed,
            ..SimConfig::default()
        };
        let sc = make_scenario(&cfg, 30.0).unwrap();
        let h = channel_at(&sc, &cfg, 0.0);
        let s = h.shape();
        let (mut cross, mut pa, mut pb) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for k in 0..s.subbands - lag {
            for r in 0..s.rx {
                for t in 0..s.tx {
                    let (a, b) = (h.get(k, r, t), h.get(k + lag, r, t));
                    cross += a * b.conj();
                    pa += a.norm_sqr();
                    pb += b.norm_sqr();
                }
            }
        }
        total += cross.norm() / (pa * pb).sqrt();
    }
    total / seeds as f64
}

#[test]
fn correlation_across_subbands_falls_with_delay_spread() {
    let delays = [10e-9, 50e-9, 200e-9, 800e-9];
    for lag in [1, 4] {
        let corr: Vec<f64> = delays.iter().map(|&d| mean_correlation(d, lag, 120)).collect();
        for w in corr.windows(2) {
            assert!(w[1] < w[0], "lag {lag}: {corr:?}");
        }
    }
}

#[test]
fn wider_sub_band_gaps_decorrelate_more() {
    let near = mean_correlation(100e-9, 1, 120);
    let far = mean_correlation(100e-9, 8, 120);
    assert!(far < near, "{near} vs {far}");
}
