use fusetrack::dcf::{init_projection, spatial_reg_term, FilterModel, Projection, RegularizerConfig, SpatialRegularizer, TrainConfig, WarmStart};
use fusetrack::features::FeatureMap;
use fusetrack::grid::{dft, idft, Grid, Spectrum};
use fusetrack::training::{gaussian_label, LabelConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

fn random_map(channels: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = (0..channels)
        .map(|_| Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    FeatureMap::new(ch, 4.0, "test").unwrap()
}

fn label_cfg() -> LabelConfig<f64> {
    LabelConfig::new(0.25, (4.0, 4.0))
}

fn model(dims: usize, res: (usize, usize), reg: SpatialRegularizer<f64>) -> FilterModel<f64> {
    FilterModel::new(Projection::identity(dims), reg, label_cfg(), res, 0.01, 0.0).unwrap()
}

#[test]
fn single_channel_cg_matches_closed_form() {
    let lambda = 0.3;
    let x = random_map(1, 12, 10, 1);
    let mut m = model(1, (12, 10), SpatialRegularizer::ridge(lambda));
    m.add_samples(std::slice::from_ref(&x), None).unwrap();
    let report = m.train(200, 1e-15, WarmStart::Zero, true).unwrap();
    assert!(report.losses.windows(2).all(|p| p[1] <= p[0]));

    let xh = dft(&x.channels()[0]);
    let yh = dft(&gaussian_label(12, 10, &label_cfg()).unwrap());
    let scale = m.filters()[0].as_slice().iter().map(|v| v.norm()).fold(0.0, f64::max);
    for k in 0..12 {
        for l in 0..10 {
            let xv = xh.get(k, l);
            let expected = yh.get(k, l) * xv.conj() / (xv.norm_sqr() + lambda);
            let got = m.filters()[0].get(k, l);
            assert!((got - expected).norm() <= 1e-8 * scale.max(1.0), "({k},{l}) {got} vs {expected}");
        }
    }
}

/// Spatial-domain least squares assembled from the loss definition:
/// rows `sqrt(α_j)·(Σ_d f^d ⊛ x_j^d − y_j)[t]` and `w[t]·f^d[t]`.
fn dense_spatial_solve(samples: &[FeatureMap<f64>], alphas: &[f64], labels: &[Grid<f64>], weight: &Grid<f64>) -> Vec<Grid<f64>> {
    let (h, w) = samples[0].shape();
    let n = h * w;
    let dims = samples[0].num_channels();
    let unknowns = dims * n;
    let mut ata = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut atb = DVector::<f64>::zeros(unknowns);
    for ((sample, &alpha), label) in samples.iter().zip(alphas).zip(labels) {
        for ti in 0..h {
            for tj in 0..w {
                // (f ⊛ x)[t] = Σ_s f[s] x[t - s]
                let mut row = vec![0.0; unknowns];
                for d in 0..dims {
                    for si in 0..h {
                        for sj in 0..w {
                            let xi = (ti + h - si) % h;
                            let xj = (tj + w - sj) % w;
                            row[d * n + si * w + sj] = sample.channels()[d].get(xi, xj);
                        }
                    }
                }
                let nz: Vec<usize> = (0..unknowns).filter(|&i| row[i] != 0.0).collect();
                for &a in &nz {
                    atb[a] += alpha * row[a] * label.get(ti, tj);
                    for &b in &nz {
                        ata[(a, b)] += alpha * row[a] * row[b];
                    }
                }
            }
        }
    }
    for d in 0..dims {
        for t in 0..n {
            let wt = weight.as_slice()[t];
            ata[(d * n + t, d * n + t)] += wt * wt;
        }
    }
    let sol = ata.cholesky().expect("positive definite").solve(&atb);
    (0..dims)
        .map(|d| Grid::new(h, w, sol.as_slice()[d * n..(d + 1) * n].to_vec()).unwrap())
        .collect()
}

#[test]
fn multichannel_cg_matches_dense_direct_solve() {
    let res = (16, 16);
    let reg = SpatialRegularizer::bowl(res, (4.0, 4.0), &RegularizerConfig { base: 0.2, edge_ratio: 10.0, radius: 2 }).unwrap();
    assert_eq!(reg.coeffs().len(), 25);
    let mut m = model(3, res, reg.clone());
    let samples = vec![random_map(3, 16, 16, 21), random_map(3, 16, 16, 22)];
    m.add_samples(&samples, None).unwrap();
    m.set_sample_weights(&[0.7, 0.3]).unwrap();
    let report = m.train(200, 1e-14, WarmStart::Zero, true).unwrap();
    assert!(report.losses.windows(2).all(|p| p[1] <= p[0]), "loss increased");

    let label = gaussian_label(16, 16, &label_cfg()).unwrap();
    let weight = reg.spatial_weight(16, 16);
    let oracle = dense_spatial_solve(&samples, &[0.7, 0.3], &[label.clone(), label], &weight);
    let mut num = 0.0;
    let mut den = 0.0;
    for (f, o) in m.filters().iter().zip(&oracle) {
        num += idft(f).sub(o).unwrap().norm_sq();
        den += o.norm_sq();
    }
    let rel = (num / den).sqrt();
    assert!(rel <= 1e-5, "relative parameter error {rel}");
}

#[test]
fn trained_filter_reproduces_label_on_its_sample() {
    let x = random_map(2, 8, 8, 31);
    let mut m = model(2, (8, 8), SpatialRegularizer::ridge(1e-6));
    m.add_samples(std::slice::from_ref(&x), None).unwrap();
    m.train(500, 1e-14, WarmStart::Zero, true).unwrap();
    let score = m.predict_score(&x).unwrap();
    let label = gaussian_label(8, 8, &label_cfg()).unwrap();
    assert!(score.max_abs_diff(&label).unwrap() <= 1e-3);
}

#[test]
fn warm_and_cold_start_reach_the_same_loss() {
    let reg = SpatialRegularizer::bowl((12, 12), (3.0, 3.0), &RegularizerConfig::default()).unwrap();
    let mut warm = model(3, (12, 12), reg.clone());
    warm.add_samples(&[random_map(3, 12, 12, 41)], None).unwrap();
    warm.train(20, 1e-12, WarmStart::Zero, true).unwrap();
    warm.add_samples(&[random_map(3, 12, 12, 42)], None).unwrap();
    let mut cold = warm.clone();
    warm.train(300, 1e-13, WarmStart::Current, true).unwrap();
    cold.train(300, 1e-13, WarmStart::Zero, true).unwrap();
    assert!((warm.fourier_loss() - cold.fourier_loss()).abs() <= 1e-6);
}

#[test]
fn duplicate_update_leaves_filter_unchanged() {
    let x = random_map(2, 10, 10, 51);
    let mut m = model(2, (10, 10), SpatialRegularizer::ridge(0.1));
    m.add_samples(std::slice::from_ref(&x), None).unwrap();
    m.train(300, 1e-14, WarmStart::Zero, true).unwrap();
    let before = m.filters().to_vec();
    m.update(&x, None, &TrainConfig::default()).unwrap();
    assert_eq!(m.memory_len(), 2);
    for (a, b) in before.iter().zip(m.filters()) {
        let diff = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-6, "{diff}");
    }
}

#[test]
fn memory_is_capped_by_evicting_oldest() {
    let cfg = TrainConfig { memory_size: 3, ..TrainConfig::default() };
    let mut m = model(2, (8, 8), SpatialRegularizer::ridge(0.1));
    let first = random_map(2, 8, 8, 60);
    m.add_samples(std::slice::from_ref(&first), None).unwrap();
    m.train_initial(&cfg).unwrap();
    let first_prepared = m.memory()[0].clone();
    for s in 61..66 {
        m.update(&random_map(2, 8, 8, s), None, &cfg).unwrap();
        assert!(m.memory_len() <= 3);
    }
    assert_eq!(m.memory_len(), 3);
    assert!(m.memory().iter().all(|s| *s != first_prepared));
    let w = m.sample_weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w.windows(2).all(|p| p[0] < p[1]), "older samples must weigh less");
}

#[test]
fn training_is_deterministic_and_scale_invariant_in_weights() {
    let reg = SpatialRegularizer::bowl((12, 12), (3.0, 3.0), &RegularizerConfig::default()).unwrap();
    let build = |scale: f64| {
        let mut m = model(3, (12, 12), reg.clone());
        m.add_samples(&[random_map(3, 12, 12, 70), random_map(3, 12, 12, 71)], None).unwrap();
        m.set_sample_weights(&[2.0 * scale, 1.0 * scale]).unwrap();
        m.train(40, 1e-12, WarmStart::Zero, true).unwrap();
        m
    };
    let a = build(1.0);
    let b = build(1.0);
    assert_eq!(a, b);
    let c = build(7.5);
    for (x, y) in a.filters().iter().zip(c.filters()) {
        assert!(x.sub(y).unwrap().norm_sq().sqrt() <= 1e-10 * x.norm_sq().sqrt().max(1.0));
    }
}

#[test]
fn projection_retained_energy_matches_eigen_oracle() {
    let s = random_map(8, 10, 10, 80);
    let p = init_projection(&s, 4).unwrap();
    // Orthonormal columns.
    for a in 0..4 {
        for b in 0..4 {
            let dot: f64 = (0..8).map(|r| p.get(r, a) * p.get(r, b)).sum();
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((dot - expected).abs() < 1e-10);
        }
    }
    let n = 100.0;
    let means: Vec<f64> = s.channels().iter().map(|g| g.sum() / n).collect();
    let cov = DMatrix::from_fn(8, 8, |a, b| {
        s.channels()[a]
            .as_slice()
            .iter()
            .zip(s.channels()[b].as_slice())
            .map(|(x, y)| (x - means[a]) * (y - means[b]))
            .sum::<f64>()
            / n
    });
    let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let expected = ev[..4].iter().sum::<f64>() / ev.iter().sum::<f64>();
    assert!((p.retained_energy() - expected).abs() < 1e-9);
}

#[test]
fn random_three_by_three_regularizer_agrees_in_both_domains() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for _ in 0..20 {
        let coeffs: Vec<Complex<f64>> = (0..9).map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let reg = SpatialRegularizer::from_coeffs(1, coeffs).unwrap();
        let f = Grid::from_fn(9, 8, |_, _| rng.gen_range(-1.0..1.0));
        let w = reg.spatial_weight(9, 8);
        let spatial = f.zip_map(&w, |a, b| a * b).unwrap().norm_sq();
        let fourier = spatial_reg_term(&dft(&f), &reg);
        assert!((spatial - fourier).abs() <= 1e-9 * spatial.max(1.0), "{spatial} vs {fourier}");
    }
    assert_eq!(spatial_reg_term(&Spectrum::<f64>::zeros(5, 5), &SpatialRegularizer::ridge(2.0)), 0.0);
}

#[test]
fn update_requires_nonempty_memory_to_train() {
    let mut m = model(1, (8, 8), SpatialRegularizer::ridge(0.1));
    assert!(m.train(5, 1e-6, WarmStart::Zero, true).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spatial_and_fourier_losses_agree(seed in 0u64..10_000, dims in 1usize..4, iters in 0usize..6) {
        let reg = SpatialRegularizer::bowl((10, 12), (3.0, 4.0), &RegularizerConfig::default()).unwrap();
        let mut m = FilterModel::new(Projection::identity(dims), reg, label_cfg(), (10, 12), 0.05, 0.25).unwrap();
        m.add_samples(&[random_map(dims, 10, 12, seed), random_map(dims, 10, 12, seed + 1)], None).unwrap();
        if iters > 0 {
            m.train(iters, 1e-12, WarmStart::Zero, true).unwrap();
        }
        let a = m.fourier_loss();
        let b = m.spatial_loss();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn loss_history_is_monotone(seed in 0u64..10_000, precondition in any::<bool>()) {
        let reg = SpatialRegularizer::bowl((12, 12), (3.0, 3.0), &RegularizerConfig::default()).unwrap();
        let mut m = model(3, (12, 12), reg);
        m.add_samples(&[random_map(3, 12, 12, seed)], None).unwrap();
        let report = m.train(60, 1e-10, WarmStart::Zero, precondition).unwrap();
        prop_assert!(report.losses.windows(2).all(|p| p[1] <= p[0]));
    }
}
