mod common;

use timing_core::information::qfi_matrix;
use timing_core::{
    canonical_projectors, channel_probabilities, crlb, direct_fisher, povm_fisher, CountingMode, FisherMatrix,
    Nuisance, ParamMask, PulseParams, PulseShape,
};

fn unit(tau0: f64, tau: f64, q: f64) -> PulseParams {
    PulseParams::unit(tau0, tau, q).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn min_eigenvalue(a: &FisherMatrix, b: &FisherMatrix) -> f64 {
    let d = a.matrix() - b.matrix();
    d.symmetric_eigenvalues().min()
}

#[test]
fn quantum_information_dominates_the_projector_measurement() {
    let set = canonical_projectors();
    for tau0 in [-0.5, 0.0, 0.5] {
        for q in [0.125, 0.25, 0.5] {
            for i in 0..=20 {
                let tau = 0.05 + (3.0 - 0.05) * i as f64 / 20.0;
                let p = unit(tau0, tau, q);
                let qfi = qfi_matrix(&p, 32).unwrap();
                let povm = povm_fisher(&p, &set, 1.0, CountingMode::Multinomial);
                let direct = direct_fisher(&p, 1.0);
                assert!(min_eigenvalue(&qfi, &povm) >= -1e-8, "{p:?}");
                assert!(min_eigenvalue(&qfi, &direct) >= -1e-8, "{p:?}");
            }
        }
    }
}

#[test]
fn ordering_survives_the_separation_floors() {
    let set = canonical_projectors();
    for tau0 in [-1.0, 0.0, 0.5] {
        for q in [0.125, 0.5, 0.75] {
            for tau in [0.0, 1e-7, 1e-6, 1e-5, 5e-5, 1e-4, 2e-4] {
                let p = unit(tau0, tau, q);
                let qfi = qfi_matrix(&p, 32).unwrap();
                let povm = povm_fisher(&p, &set, 1.0, CountingMode::Multinomial);
                assert!(min_eigenvalue(&qfi, &povm) >= -1e-8, "{p:?}: {}", min_eigenvalue(&qfi, &povm));
            }
        }
    }
}

#[test]
fn qfi_is_continuous_at_its_floor() {
    let below = qfi_matrix(&unit(0.1, 0.99999e-4, 0.3), 32).unwrap();
    let above = qfi_matrix(&unit(0.1, 1.00001e-4, 0.3), 32).unwrap();
    assert!(below.flags.tau_floor_applied && !above.flags.tau_floor_applied);
    for k in 0..3 {
        for l in 0..3 {
            let (a, b) = (below.entries[k][l], above.entries[k][l]);
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-6), "[{k}][{l}]: {a} vs {b}");
        }
    }
}

#[test]
fn qfi_is_stable_under_truncation() {
    for q in [0.125, 0.5, 0.9] {
        for tau in [0.01, 0.3, 1.0, 2.0, 3.0] {
            let p = unit(0.2, tau, q);
            let (a, b) = (qfi_matrix(&p, 20).unwrap(), qfi_matrix(&p, 40).unwrap());
            let scale = b.entries.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for k in 0..3 {
                for l in 0..3 {
                    let (x, y) = (a.entries[k][l], b.entries[k][l]);
                    assert!((x - y).abs() <= 1e-6 * scale, "{p:?} [{k}][{l}]: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn balanced_separation_qfi_is_flat() {
    let reference = qfi_matrix(&unit(0.0, 0.01, 0.5), 32).unwrap().entries[1][1];
    for tau in logspace(0.01, 1.0, 15) {
        let q = qfi_matrix(&unit(0.0, tau, 0.5), 32).unwrap().entries[1][1];
        assert!((q / reference - 1.0).abs() < 0.01, "tau={tau}: {q} vs {reference}");
    }
    assert!((reference - 0.25).abs() < 1e-6);
}

#[test]
fn qfi_q_row_vanishes_at_coincidence() {
    let f = qfi_matrix(&unit(0.3, 0.0, 0.4), 32).unwrap();
    assert!(f.flags.tau_floor_applied);
    for k in 0..3 {
        assert_eq!((f.entries[2][k], f.entries[k][2]), (0.0, 0.0));
    }
}

#[test]
fn direct_detection_suffers_rayleighs_curse() {
    let taus = logspace(1e-3, 1e-1, 9);
    let info: Vec<f64> = taus.iter().map(|&t| direct_fisher(&unit(0.0, t, 0.5), 1.0).entries[1][1]).collect();
    let bound: Vec<f64> = taus
        .iter()
        .map(|&t| crlb(&direct_fisher(&unit(0.0, t, 0.5), 1.0), ParamMask::TAU, Nuisance::Fixed).variance(1))
        .collect();
    assert!((loglog_slope(&taus, &info) - 2.0).abs() < 0.05);
    assert!((loglog_slope(&taus, &bound) + 2.0).abs() < 0.1);

    let quantum: Vec<f64> = taus
        .iter()
        .filter(|&&t| t >= 0.01)
        .map(|&t| crlb(&qfi_matrix(&unit(0.0, t, 0.5), 32).unwrap(), ParamMask::TAU, Nuisance::Fixed).variance(1))
        .collect();
    for b in &quantum {
        assert!((b / quantum[0] - 1.0).abs() < 0.01);
    }
}

#[test]
fn direct_location_information_and_symmetry() {
    for sigma in [0.5, 1.0, 3.0] {
        let p = PulseParams::new(0.0, 0.0, 0.3, PulseShape::new(sigma).unwrap()).unwrap();
        let f = direct_fisher(&p, 1000.0);
        assert!((f.entries[0][0] - 1000.0 / (sigma * sigma)).abs() < 1e-8 * f.entries[0][0]);
    }
    let f = direct_fisher(&unit(0.0, 0.9, 0.5), 1.0);
    assert!(f.entries[0][1].abs() < 1e-9);
}

#[test]
fn povm_separation_information_has_a_finite_limit() {
    let set = canonical_projectors();
    let a = povm_fisher(&unit(0.0, 1e-4, 0.5), &set, 1.0, CountingMode::Multinomial).entries[1][1];
    let b = povm_fisher(&unit(0.0, 1e-5, 0.5), &set, 1.0, CountingMode::Multinomial).entries[1][1];
    assert!(a > 0.0 && (a - b).abs() < 1e-6 * a, "{a} vs {b}");
    let zero = povm_fisher(&unit(0.0, 0.0, 0.5), &set, 1.0, CountingMode::Multinomial);
    assert!(zero.flags.tau_floor_applied);
    assert!(zero.entries[2][2].abs() < 1e-10);
}

#[test]
fn povm_fisher_matches_finite_differences_at_reference_point() {
    let set = canonical_projectors();
    let theta = [0.0, 1.0, 0.25];
    let probs = |th: [f64; 3]| channel_probabilities(&unit(th[0], th[1], th[2]), &set).outcomes().to_vec();
    let want = common::outcome_fisher(probs, theta, [1e-5; 3]);
    let got = povm_fisher(&unit(theta[0], theta[1], theta[2]), &set, 1.0, CountingMode::Multinomial).entries;
    for k in 0..3 {
        for l in 0..3 {
            assert!((got[k][l] - want[k][l]).abs() <= 1e-6 * want[k][l].abs().max(1e-3), "[{k}][{l}]");
        }
    }
}

#[test]
fn order_of_magnitude_gap_at_a_tenth_of_the_width() {
    let p = unit(0.0, 0.1, 0.5);
    let direct = crlb(&direct_fisher(&p, 69000.0), ParamMask::TAU, Nuisance::Fixed).variance(1);
    let quantum = crlb(&qfi_matrix(&p, 32).unwrap().rescaled(69000.0), ParamMask::TAU, Nuisance::Fixed).variance(1);
    assert!(direct / quantum >= 10.0, "{direct} / {quantum}");
}

#[test]
fn bounds_scale_inversely_with_photons() {
    let set = canonical_projectors();
    let p = unit(0.1, 0.7, 0.3);
    for nuisance in [Nuisance::Fixed, Nuisance::Joint] {
        let one = crlb(&povm_fisher(&p, &set, 1000.0, CountingMode::Multinomial), ParamMask::ALL, nuisance);
        let two = crlb(&povm_fisher(&p, &set, 2000.0, CountingMode::Multinomial), ParamMask::ALL, nuisance);
        for k in 0..3 {
            assert!((one.variance(k) / two.variance(k) - 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dark_channels_turn_on_quadratically() {
    let set = canonical_projectors();
    let taus = logspace(1e-3, 1e-1, 9);
    for j in 0..2 {
        let p: Vec<f64> = taus.iter().map(|&t| channel_probabilities(&unit(0.0, t, 0.5), &set).p[j]).collect();
        assert!((loglog_slope(&taus, &p) - 2.0).abs() < 0.05, "channel {j}");
    }
}

#[test]
fn mirror_symmetry_swaps_dark_channels() {
    let set = canonical_projectors();
    for tau0 in [-0.7, 0.0, 0.4] {
        for tau in [0.1, 1.0, 2.5] {
            for q in [0.1, 0.5, 0.85] {
                let a = channel_probabilities(&unit(tau0, tau, q), &set).p;
                let b = channel_probabilities(&unit(-tau0, tau, 1.0 - q), &set).p;
                assert!((a[0] - b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12);
            }
        }
    }
}
