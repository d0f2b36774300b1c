use super::*;
use crate::channel::TensorShape;
use crate::dataset::{build_mixed, SampleOrigin};
use crate::sim::{generate_sequence, SimConfig};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn tensor_from_matrix(m: &DMatrix<Complex64>) -> ChannelTensor {
    ChannelTensor::from_fn(TensorShape::new(1, m.nrows(), m.ncols()), 0.0, |_, r, t| m[(r, t)])
}

fn random_tensor(shape: TensorShape, rng: &mut ChaCha8Rng) -> ChannelTensor {
    ChannelTensor::from_fn(shape, 0.0, |_, _, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<Complex64> {
    let v = DVector::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let norm = v.norm();
    v / Complex64::from(norm)
}

/// Largest eigenvalue of a Hermitian matrix by cyclic Jacobi rotations on
/// its real symmetric embedding.
fn top_eigenvalue(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[(i, j)].re;
            m[i + n][j + n] = a[(i, j)].re;
            m[i][j + n] = -a[(i, j)].im;
            m[i + n][j] = a[(i, j)].im;
        }
    }
    let size = 2 * n;
    for _ in 0..100 {
        let off: f64 = (0..size).flat_map(|i| (0..size).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..size {
            for q in p + 1..size {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..size {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = cs * mkp - sn * mkq;
                    m[k][q] = sn * mkp + cs * mkq;
                }
                for k in 0..size {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = cs * mpk - sn * mqk;
                    m[q][k] = sn * mpk + cs * mqk;
                }
            }
        }
    }
    (0..size).map(|i| m[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn db_serializes_negative_infinity_as_text() {
    let v = vec![Db(f64::NEG_INFINITY), Db(-3.5)];
    let s = serde_json::to_string(&v).unwrap();
    assert_eq!(s, r#"["-inf",-3.5]"#);
    let back: Vec<Db> = serde_json::from_str(&s).unwrap();
    assert_eq!(back, v);
    assert!(serde_json::from_str::<Db>(r#""inf""#).is_err());
}

#[test]
fn nmse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_tensor(TensorShape::new(3, 2, 4), &mut rng);
    let e = nmse(&h, &h).unwrap();
    assert_eq!(e.linear, 0.0);
    assert_eq!(e.db.0, f64::NEG_INFINITY);
    let zero = ChannelTensor::zeros(h.shape());
    let e = nmse(&h, &zero).unwrap();
    assert_eq!(e.linear, 1.0);
    assert_eq!(e.db.0, 0.0);
    let mut twice = h.clone();
    twice.scale(2.0);
    assert!((nmse(&h, &twice).unwrap().linear - 1.0).abs() < 1e-15);
    assert!(nmse(&zero, &h).is_err());
    assert!(nmse(&h, &ChannelTensor::zeros(TensorShape::new(3, 2, 2))).is_err());

    // joint scaling invariance
    let p = random_tensor(h.shape(), &mut rng);
    let base = nmse(&h, &p).unwrap().linear;
    for s in [-3.0, 1e-3, 7.5] {
        let (mut hs, mut ps) = (h.clone(), p.clone());
        hs.scale(s);
        ps.scale(s);
        assert!((nmse(&hs, &ps).unwrap().linear - base).abs() < 1e-12 * base);
    }
}

#[test]
fn svd_of_diagonal_and_rank_one() {
    let h = DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let bf = svd_beamformers(&tensor_from_matrix(&h)).unwrap();
    assert!((bf.sigma[0] - 2.0).abs() < 1e-12);
    assert!((bf.f[0][0] - c(1.0, 0.0)).norm() < 1e-12 && bf.f[0][1].norm() < 1e-12);
    assert!((bf.w[0][0] - c(1.0, 0.0)).norm() < 1e-12 && bf.w[0][1].norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_unit(3, &mut rng) * c(1.7, 0.0);
    let b = random_unit(5, &mut rng) * c(0.4, -0.9);
    let h = &a * b.adjoint();
    let bf = svd_beamformers(&tensor_from_matrix(&h)).unwrap();
    let rho = cosine_similarity(&bf.f[0], &b).unwrap();
    assert!((rho - 1.0).abs() < 1e-12, "{rho} {} {}", bf.f[0], b);
    assert!((cosine_similarity(&bf.w[0], &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn svd_recovers_rank_one_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..3000 {
        let (nr, nt) = [(4, 32), (2, 4), (3, 5), (5, 3), (1, 8), (4, 1)][trial % 6];
        let a = random_unit(nr, &mut rng);
        let b = random_unit(nt, &mut rng);
        let g = c(rng.gen_range(0.1..3.0), rng.gen_range(-3.0..3.0));
        let h = &a * b.adjoint() * g;
        let bf = svd_beamformers(&tensor_from_matrix(&h)).unwrap();
        assert!((bf.sigma[0] - g.norm()).abs() < 1e-10 * g.norm(), "trial {trial} {} {}", bf.sigma[0], g.norm());
        assert!((cosine_similarity(&bf.f[0], &b).unwrap() - 1.0).abs() < 1e-10, "trial {trial}");
        assert!((cosine_similarity(&bf.w[0], &a).unwrap() - 1.0).abs() < 1e-10, "trial {trial}");
    }
}

#[test]
fn svd_matches_eigen_oracle_and_is_canonical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (nr, nt) in [(4, 32), (2, 2), (3, 1), (1, 5), (4, 8)] {
        let h = random_tensor(TensorShape::new(4, nr, nt), &mut rng);
        let bf = svd_beamformers(&h).unwrap();
        for k in 0..4 {
            let hk = h.subband(k);
            let lambda = top_eigenvalue(&(hk.adjoint() * &hk));
            assert!((bf.sigma[k] * bf.sigma[k] - lambda).abs() < 1e-10 * lambda, "{nr}x{nt}");
            assert!((bf.f[k].norm() - 1.0).abs() < 1e-9);
            assert!((bf.w[k].norm() - 1.0).abs() < 1e-9);
            let gain = bf.w[k].dotc(&(&hk * &bf.f[k]));
            assert!((gain - c(bf.sigma[k], 0.0)).norm() < 1e-8);
            // largest entry of f is real and non-negative
            let big = bf.f[k].iter().map(|x| x.norm()).fold(0.0, f64::max);
            let at = bf.f[k].iter().position(|x| x.norm() == big).unwrap();
            assert!(bf.f[k][at].im == 0.0 && bf.f[k][at].re >= 0.0);
        }
    }
}

#[test]
fn top_singular_value_bounds_random_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = random_tensor(TensorShape::new(1, 4, 3), &mut rng);
    let hk = h.subband(0);
    let sigma = svd_beamformers(&h).unwrap().sigma[0];
    let best = (0..10_000)
        .map(|_| (&hk * random_unit(3, &mut rng)).norm())
        .fold(0.0, f64::max);
    assert!(best <= sigma * (1.0 + 1e-12));
    assert!(best > 0.97 * sigma, "{best} vs {sigma}");
}

#[test]
fn svd_rejects_non_finite() {
    let mut h = ChannelTensor::zeros(TensorShape::new(2, 2, 2));
    h.set(1, 0, 0, c(f64::NAN, 0.0));
    assert!(svd_beamformers(&h).is_err());
}

#[test]
fn cosine_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_unit(6, &mut rng);
    assert_eq!(cosine_similarity(&f, &f).unwrap(), 1.0);
    let e1 = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
    let e2 = DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
    assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
    let rot = &f * Complex64::from_polar(3.0, std::f64::consts::FRAC_PI_4);
    assert!((cosine_similarity(&f, &rot).unwrap() - 1.0).abs() < 1e-15);
    assert!(cosine_similarity(&f, &DVector::zeros(6)).is_err());
    assert!(cosine_similarity(&f, &e1).is_err());
}

#[test]
fn sum_rate_examples() {
    let eye = DMatrix::<Complex64>::identity(2, 2);
    let e1 = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
    let bf = BeamformerSet {
        f: vec![e1.clone()],
        w: vec![e1],
        sigma: vec![1.0],
    };
    assert!((sum_rate(&tensor_from_matrix(&eye), &bf, 1.0).unwrap() - 1.0).abs() < 1e-15);

    let d = DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let h = tensor_from_matrix(&d);
    let exact = svd_beamformers(&h).unwrap();
    assert!((sum_rate(&h, &exact, 3.0).unwrap() - 13f64.log2()).abs() < 1e-12);
    assert!(sum_rate(&h, &exact, 0.0).is_err());
    assert!(sum_rate(&ChannelTensor::zeros(TensorShape::new(2, 2, 2)), &exact, 1.0).is_err());
}

#[test]
fn exact_beamformers_dominate_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random_tensor(TensorShape::new(3, 4, 8), &mut rng);
    let exact = svd_beamformers(&h).unwrap();
    let best = sum_rate(&h, &exact, 10.0).unwrap();
    for _ in 0..100 {
        let bf = BeamformerSet {
            f: (0..3).map(|_| random_unit(8, &mut rng)).collect(),
            w: (0..3).map(|_| random_unit(4, &mut rng)).collect(),
            sigma: vec![0.0; 3],
        };
        assert!(sum_rate(&h, &bf, 10.0).unwrap() <= best + 1e-12);
    }
}

fn small_dataset(speed: f64, paths: usize, q: usize) -> Dataset {
    let cfg = SimConfig {
        n_tx: 4,
        n_rx: 2,
        n_subbands: 8,
        n_paths: paths,
        seed: 11,
        ..SimConfig::default()
    };
    let seq = generate_sequence(&cfg, speed, q).unwrap();
    build_mixed(&[seq], 2, 0).unwrap()
}

struct Oracle;

impl ChannelPredictor for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, samples: &[&DatasetSample]) -> Result<Vec<ChannelTensor>> {
        Ok(samples.iter().map(|s| (*s.target).clone()).collect())
    }
}

#[test]
fn sh_is_the_last_input() {
    let ds = small_dataset(30.0, 4, 10);
    for s in &ds.samples {
        let p = sh_predict(s);
        assert_eq!(p.as_slice(), s.inputs[1].as_slice());
        assert_eq!(p.timestamp, s.inputs[1].timestamp);
    }
}

#[test]
fn perfect_oracle_report() {
    let ds = small_dataset(30.0, 6, 20);
    let r = evaluate(&Oracle, &ds, &EvalOptions::default()).unwrap();
    assert_eq!(r.n_samples, ds.len());
    assert_eq!(r.model.mean_rho, 1.0);
    assert!(r.samples.iter().all(|s| s.model.nmse == 0.0 && s.model.nmse_db.0 == f64::NEG_INFINITY));
    assert_eq!(r.model.median_nmse_db.0, f64::NEG_INFINITY);
    for s in &r.samples {
        assert!((s.model.sum_rate - s.optimal_sum_rate).abs() < 1e-9 * s.optimal_sum_rate);
        assert!(s.sample_and_hold.sum_rate <= s.optimal_sum_rate + 1e-9);
    }
    assert!(r.improvement > 0.0);
    let json = r.to_json().unwrap();
    assert!(json.contains("\"-inf\""));
    assert_eq!(EvalReport::from_json(&json).unwrap(), r);
    assert!(r.summary_line().starts_with("model_mean_rho=1.000000, sh_mean_rho="));
}

#[test]
fn sh_as_model_gives_identical_columns() {
    let ds = small_dataset(40.0, 6, 16);
    let r = evaluate(&SampleAndHold, &ds, &EvalOptions { batch_size: 3, ..Default::default() }).unwrap();
    for s in &r.samples {
        assert_eq!(s.model, s.sample_and_hold);
    }
    assert_eq!(r.improvement, 0.0);
    assert_eq!(r.model.rho_cdf, r.sample_and_hold.rho_cdf);
}

#[test]
fn static_channel_sh_is_exact() {
    let ds = small_dataset(0.0, 6, 12);
    let r = evaluate(&SampleAndHold, &ds, &EvalOptions::default()).unwrap();
    for s in &r.samples {
        assert_eq!(s.sample_and_hold.nmse, 0.0);
        assert_eq!(s.sample_and_hold.rho_mean, 1.0);
        assert_eq!(s.sample_and_hold.rho_min, 1.0);
    }
}

#[test]
fn single_path_sh_closed_form() {
    let cfg = SimConfig {
        n_tx: 4,
        n_rx: 2,
        n_subbands: 8,
        n_paths: 1,
        seed: 3,
        ..SimConfig::default()
    };
    let seq = generate_sequence(&cfg, 60.0, 12).unwrap();
    let scen = crate::sim::make_scenario(&cfg, 60.0).unwrap();
    let nu = scen.doppler(&scen.paths[0]);
    let want = 4.0 * (std::f64::consts::PI * nu * cfg.sample_period).sin().powi(2);
    let ds = build_mixed(&[seq], 1, 0).unwrap();
    let r = evaluate(&SampleAndHold, &ds, &EvalOptions::default()).unwrap();
    for s in &r.samples {
        assert!((s.sample_and_hold.nmse - want).abs() < 1e-6, "{} vs {want}", s.sample_and_hold.nmse);
        assert!((s.sample_and_hold.rho_mean - 1.0).abs() < 1e-9);
    }
}

#[test]
fn aggregates_are_permutation_invariant() {
    let ds = small_dataset(50.0, 8, 30);
    let r = evaluate(&SampleAndHold, &ds, &EvalOptions::default()).unwrap();
    let mut shuffled = ds.clone();
    shuffled.samples.reverse();
    let s = evaluate(&SampleAndHold, &shuffled, &EvalOptions::default()).unwrap();
    assert_eq!(r.model, s.model);
    assert_eq!(r.sample_and_hold, s.sample_and_hold);
    assert_eq!(r.improvement, s.improvement);
    assert_eq!(r.per_speed, s.per_speed);
    let h = &r.model.rho_histogram;
    assert_eq!(h.counts.iter().sum::<usize>(), ds.len());
    assert_eq!(h.edges.len(), h.counts.len() + 1);
    assert!(r.model.rho_cdf.values.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*r.model.rho_cdf.values.last().unwrap(), 1.0);
}

#[test]
fn improvement_statistic() {
    let m = |rho: f64| MethodMetrics {
        nmse: 0.1,
        nmse_db: Db(-10.0),
        rho_mean: rho,
        rho_min: rho,
        sum_rate: 1.0,
    };
    let samples: Vec<SampleEval> = (0..10)
        .map(|i| SampleEval {
            index: i,
            speed_kmh: 30.0,
            sequence: 0,
            last_input: i,
            model: m(0.95),
            sample_and_hold: m(0.76),
            optimal_sum_rate: 1.0,
        })
        .collect();
    let ds = small_dataset(30.0, 2, 12);
    let heat = HeatmapPayload {
        sample_index: 0,
        n_rx: 1,
        n_tx: 1,
        n_subbands: 1,
        truth: vec![1.0],
        model: vec![1.0],
        sample_and_hold: vec![1.0],
    };
    let r = EvalReport::assemble("m".into(), 10.0, &ds, samples, vec![vec![0.95]; 10], vec![vec![0.76]; 10], heat);
    assert!((r.improvement - 0.25).abs() < 1e-12);
    assert!(r.summary_line().ends_with("improvement=25.00%"));
    assert_eq!(r.per_speed.len(), 1);
    assert_eq!(r.model.rho_histogram.counts[19], 10);
    let _ = SampleOrigin { sequence: 0, last_input: 0 };
}

#[test]
fn heatmap_layout_and_errors() {
    let ds = small_dataset(30.0, 4, 10);
    let r = evaluate(&Oracle, &ds, &EvalOptions { heatmap_sample: 3, ..Default::default() }).unwrap();
    let h = &r.heatmap;
    assert_eq!(h.sample_index, 3);
    assert_eq!((h.n_rx, h.n_tx, h.n_subbands), (2, 4, 8));
    let truth = &ds.samples[3].target;
    assert_eq!(h.truth[(1 * 4 + 2) * 8 + 5], truth.get(5, 1, 2).norm());
    assert_eq!(h.truth, h.model);

    let mut empty = ds.clone();
    empty.samples.clear();
    assert!(evaluate(&Oracle, &empty, &EvalOptions::default()).is_err());
    let mut broken = serde_json::to_value(&r).unwrap();
    broken["n_samples"] = serde_json::json!(1);
    assert!(EvalReport::from_json(&broken.to_string()).is_err());
    broken["n_samples"] = serde_json::json!(r.n_samples);
    broken["extra"] = serde_json::json!(1);
    assert!(EvalReport::from_json(&broken.to_string()).is_err());
}
