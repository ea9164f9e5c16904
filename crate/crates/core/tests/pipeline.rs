//! Simulation through correlation matrix to per-delay tomography.

use qdpair::correlator::{build_correlation_matrix, CorrelationMode, CorrelatorConfig};
use qdpair::polarization::negativity_of_matrix;
use qdpair::sim::{simulate, BasisSchedule, CascadeParams, SimOptions};
use qdpair::tomography::{negativity_vs_delay, BootstrapOptions, NegativitySeries, TomographyInput};

fn tomography_input(n_pulses: u64, seed: u64) -> TomographyInput {
    let mut p = CascadeParams::reference();
    for c in &mut p.channels {
        c.eta_det = 0.5;
    }
    p.schedule = Some(BasisSchedule::tomography(100_000));
    let sim = simulate(&p, &SimOptions::new(n_pulses, seed)).unwrap();
    let cfg = CorrelatorConfig::new(1, 1000, CorrelationMode::TtrSifted, p.rep_rate_ghz);
    let m = build_correlation_matrix(&sim.records, &p.effective_schedule(), n_pulses, &cfg).unwrap();
    TomographyInput::from_matrix(&m, 8).unwrap()
}

fn tomography_run(n_pulses: u64, seed: u64) -> NegativitySeries {
    let input = tomography_input(n_pulses, seed);
    negativity_vs_delay(&input, (0.0, 2.5 * 200.4), &BootstrapOptions { resamples: 100, seed }).unwrap()
}

/// Weighted least-squares slope of y(x) and its standard error.
fn slope(pts: &[(f64, f64, f64)]) -> (f64, f64) {
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / p.2.max(1e-6).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let mx = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

#[test]
fn ideal_projections_give_near_unit_fidelity_and_flat_negativity() {
    let input = tomography_input(160_000_000, 31);
    // Bell fidelity of the linear-inversion estimate, which is unbiased; the
    // physical projection pulls noisy near-pure states towards lower purity.
    let bins = input.bins_where(|c| (0.0..=150.0).contains(&c));
    let opts = BootstrapOptions { resamples: 0, seed: 0 };
    let fidelity = bins
        .iter()
        .map(|&i| {
            let r = input.point(&[i], &opts, 0).unwrap().raw;
            0.5 * (r[(0, 0)].re + r[(3, 3)].re) + r[(0, 3)].norm()
        })
        .sum::<f64>()
        / bins.len() as f64;
    assert!(fidelity >= 0.99, "mean fidelity {fidelity}");

    let s = negativity_vs_delay(&input, (0.0, 2.5 * 200.4), &BootstrapOptions { resamples: 100, seed: 31 }).unwrap();
    assert!(s.omitted.is_empty(), "{:?}", s.omitted);
    for p in &s.points {
        assert!(p.negativity > 0.45, "{} at {} ps", p.negativity, p.x_ps);
    }
    // Flatness on the linear-inversion negativity, which carries no
    // count-dependent projection bias. Below ~3 jitter widths the delay
    // distribution is truncated at zero and the precession blur is smaller.
    let pts: Vec<(f64, f64, f64)> = s
        .points
        .iter()
        .filter(|p| p.x_ps >= 100.0)
        .map(|p| {
            let i = input.bins_where(|c| c == p.x_ps)[0];
            let raw = input.point(&[i], &opts, 0).unwrap().raw;
            (p.x_ps, negativity_of_matrix(&raw).unwrap(), p.sigma)
        })
        .collect();
    let (b, sb) = slope(&pts);
    assert!(b.abs() <= 2.0 * sb, "slope {b:e} ± {sb:e} per ps");
}

#[test]
fn same_seed_reproduces_the_series() {
    let a = tomography_run(1_000_000, 5);
    let b = tomography_run(1_000_000, 5);
    assert_eq!(a, b);
}
