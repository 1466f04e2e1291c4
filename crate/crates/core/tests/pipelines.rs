use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use lidkit::features::{
    extract, BandShaping, CepstralStep, FeatureConfig, FeatureKind, FeatureMatrix, Pipeline,
};
use lidkit::frontend::{build_bark_filterbank, equal_loudness_weights};
use lidkit::Waveform;

fn white_noise(seed: u64, n: usize) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    Waveform::new((0..n).map(|_| 0.1 * normal.sample(&mut rng)).collect(), 16000).unwrap()
}

/// 120 Hz pulse train through formants at 700, 1220 and 2600 Hz.
fn vowel(n: usize) -> Waveform {
    let mut a = vec![1.0];
    for (f, r) in [(700.0, 0.97), (1220.0, 0.96), (2600.0, 0.95)] {
        let theta = 2.0 * std::f64::consts::PI * f / 16000.0;
        let s = [1.0, -2.0 * r * f64::cos(theta), r * r];
        let mut next = vec![0.0; a.len() + 2];
        for (i, p) in a.iter().enumerate() {
            for (j, q) in s.iter().enumerate() {
                next[i + j] += p * q;
            }
        }
        a = next;
    }
    let period = 16000 / 120;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = if i % period == 0 { 1.0 } else { 0.0 };
        for k in 1..a.len() {
            if i >= k {
                v -= a[k] * y[i - k];
            }
        }
        y[i] = v;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Waveform::new(y.iter().map(|v| 0.9 * v / peak).collect(), 16000).unwrap()
}

fn mean_vector(fm: &FeatureMatrix) -> Vec<f64> {
    let n = fm.n_frames() as f64;
    (0..fm.dim()).map(|d| fm.vectors.iter().map(|v| v[d]).sum::<f64>() / n).collect()
}

fn scaled(w: &Waveform, g: f64) -> Waveform {
    Waveform::new(w.samples.iter().map(|v| v * g).collect(), w.sample_rate).unwrap()
}

#[test]
fn plp_vowel_has_more_spectral_shape_than_noise() {
    let cfg = FeatureConfig::default();
    let shape = |w: &Waveform| -> f64 {
        mean_vector(&extract(FeatureKind::Plp, w, &cfg).unwrap())[1..].iter().map(|c| c.abs()).sum()
    };
    let (noise, voiced) = (shape(&white_noise(0, 16000)), shape(&vowel(16000)));
    assert!(voiced > noise, "vowel {voiced} vs noise {noise}");
}

#[test]
fn log_dct_gain_only_moves_c0() {
    let cfg = FeatureConfig::default();
    let w = white_noise(1, 8000);
    let g: f64 = 4.0;
    for (kind, c0_shift) in [
        // power scales by g^2 in every band; DCT row 0 has weight 1/sqrt(24)
        (FeatureKind::Mfcc, (g * g).ln() * 24f64.sqrt()),
        // cube-root loudness turns g^2 into g^(2/3) across 19 bands
        (FeatureKind::Bfcc, (g * g).ln() / 3.0 * 19f64.sqrt()),
    ] {
        let a = extract(kind, &w, &cfg).unwrap();
        let b = extract(kind, &scaled(&w, g), &cfg).unwrap();
        for (x, y) in a.vectors.iter().zip(&b.vectors) {
            assert!((y[0] - x[0] - c0_shift).abs() < 1e-6, "{kind}: c0 moved {}", y[0] - x[0]);
            for (p, q) in x[1..].iter().zip(&y[1..]) {
                assert!((p - q).abs() < 1e-6, "{kind}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn lp_cepstra_ignore_gain() {
    let cfg = FeatureConfig::default();
    let w = vowel(8000);
    for kind in [FeatureKind::Plp, FeatureKind::Rplp] {
        let a = extract(kind, &w, &cfg).unwrap();
        // gains that keep every band above the energy floor
        for g in [0.05, 0.25, 7.0] {
            let b = extract(kind, &scaled(&w, g), &cfg).unwrap();
            for (x, y) in a.vectors.iter().zip(&b.vectors) {
                for (p, q) in x[1..].iter().zip(&y[1..]) {
                    assert!((p - q).abs() < 1e-6, "{kind} gain {g}: {p} vs {q}");
                }
            }
        }
    }
}

#[test]
fn plp_and_rplp_agree_on_noise_tilt() {
    let cfg = FeatureConfig::default();
    for seed in 0..5 {
        let w = white_noise(seed, 16000);
        let plp = mean_vector(&extract(FeatureKind::Plp, &w, &cfg).unwrap())[1];
        let rplp = mean_vector(&extract(FeatureKind::Rplp, &w, &cfg).unwrap())[1];
        assert_eq!(plp.signum(), rplp.signum(), "seed {seed}: plp c1 {plp}, rplp c1 {rplp}");
    }
}

#[test]
fn bfcc_is_bark_auditory_spectrum_with_log_dct() {
    let cfg = FeatureConfig::default();
    let w = vowel(6000);
    let bank = build_bark_filterbank(cfg.nfft(), cfg.sample_rate).unwrap();
    let weights = equal_loudness_weights(&bank.center_freqs);
    let rebuilt = Pipeline::custom(
        FeatureKind::Bfcc,
        &cfg,
        Some(cfg.preemphasis),
        bank.clone(),
        BandShaping { loudness_weights: Some(weights), cube_root: true },
        CepstralStep::LogDct,
    )
    .unwrap();
    assert_eq!(rebuilt.extract(&w).unwrap(), extract(FeatureKind::Bfcc, &w, &cfg).unwrap());

    // dropping the auditory shaping changes the features
    let plain = Pipeline::custom(
        FeatureKind::Bfcc,
        &cfg,
        Some(cfg.preemphasis),
        bank,
        BandShaping { loudness_weights: None, cube_root: false },
        CepstralStep::LogDct,
    )
    .unwrap();
    assert_ne!(plain.extract(&w).unwrap().vectors, rebuilt.extract(&w).unwrap().vectors);
}

#[test]
fn feature_kinds_differ_on_the_same_signal() {
    let cfg = FeatureConfig::default();
    let w = vowel(4000);
    let all: Vec<_> = FeatureKind::ALL.iter().map(|&k| extract(k, &w, &cfg).unwrap().vectors).collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            assert_ne!(all[i], all[j]);
        }
    }
}
