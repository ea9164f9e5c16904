//! End-to-end drivers: simulate a data set and run the analysis chain behind
//! one figure, writing plot-ready CSV and JSON.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use qdpair::correlator::{build_correlation_matrix, cross_correlate, CorrelationMode, CorrelatorConfig, SIFT_GUARD_PS};
use qdpair::estimators::blinking::blinking_envelope;
use qdpair::estimators::{fit_blinking, fit_lifetimes, folded_decay, LifetimeSpec, PeakEnvelope};
use qdpair::interferometry::{fit_hom, hom_model, hom_model_nc, synthetic_hom, HomFitSpec, HomParams, HomPolarization};
use qdpair::polarization::Basis;
use qdpair::record::channel_timestamps;
use qdpair::sim::{simulate, BasisSchedule, CascadeParams, SimOptions, Simulation};
use qdpair::tomography::{
    fit_cascade_model, model_traces, negativity_vs_delay, negativity_vs_window, BootstrapOptions, CascadeFitSpec,
    CascadeModel, TomographyInput,
};

use crate::commands::{default_windows, density_matrices, write_negativity};
use crate::io::{load_params, write_columns, write_histogram, write_json, write_matrix, Run};
use crate::{Figure, ReproduceArgs};

/// Detection efficiency of the presets, raised from the measured ≈1 % so
/// that desk-scale runs carry enough coincidences.
pub const PRESET_ETA_DET: f64 = 0.5;

const TOMOGRAPHY_BIN_PS: i64 = 8;
const TOMOGRAPHY_RESAMPLES: usize = 100;
const HOM_BIN_PS: f64 = 16.0;
const HOM_HALF_SPAN_PS: f64 = 4000.0;
const HOM_REP_GHZ: f64 = 0.076;

fn figure_name(f: Figure) -> &'static str {
    match f {
        Figure::Fig2 => "fig2",
        Figure::Fig3b => "fig3b",
        Figure::Fig3c => "fig3c",
        Figure::Fig4c => "fig4c",
        Figure::S2 => "s2",
        Figure::S5 => "s5",
    }
}

/// Reference device with bright detection; lifetimes are taken at 76 MHz
/// and the blinking data set uses β = 0.61.
pub fn preset(f: Figure) -> CascadeParams {
    let mut p = CascadeParams::reference();
    for c in &mut p.channels {
        c.eta_det = PRESET_ETA_DET;
    }
    match f {
        Figure::S2 | Figure::Fig4c => p.rep_rate_ghz = HOM_REP_GHZ,
        Figure::S5 => p.beta = 0.61,
        _ => {}
    }
    p
}

pub fn run(a: &ReproduceArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("reproduce", argv);
    let mut p = match &a.config {
        Some(c) => {
            run.input(c);
            load_params(Some(c))?
        }
        None => preset(a.figure),
    };
    if matches!(a.figure, Figure::Fig2 | Figure::Fig3b | Figure::Fig3c) && p.schedule.is_none() {
        p.schedule = Some(BasisSchedule::tomography((a.scale / 90).clamp(1, 100_000)));
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    run.output_dir(&a.out);
    let written = match a.figure {
        Figure::Fig2 => fig2(&p, a, &a.out)?,
        Figure::Fig3b => fig3(&p, a, &a.out, false)?,
        Figure::Fig3c => fig3(&p, a, &a.out, true)?,
        Figure::Fig4c => fig4c(&p, a, &a.out)?,
        Figure::S2 => s2(&p, a, &a.out)?,
        Figure::S5 => s5(&p, a, &a.out)?,
    };
    for f in &written {
        run.output(f);
    }
    run.finish(json!({ "figure": figure_name(a.figure), "scale": a.scale, "params": p }), Some(a.seed))
}

fn sim(p: &CascadeParams, a: &ReproduceArgs) -> Result<Simulation> {
    Ok(simulate(p, &SimOptions::new(a.scale, a.seed))?)
}

fn tomography_matrix(p: &CascadeParams, a: &ReproduceArgs) -> Result<qdpair::correlator::CorrelationMatrix> {
    let s = sim(p, a)?;
    let window = p.period_ps().floor() as i64;
    let cfg = CorrelatorConfig::new(1, window, CorrelationMode::TtrSifted, p.rep_rate_ghz);
    Ok(build_correlation_matrix(&s.records, &p.effective_schedule(), a.scale, &cfg)?)
}

fn slot_channels(input: &TomographyInput) -> Vec<(u8, u8)> {
    (0..36).map(|s| input.channels(Basis::ALL[s / 6], Basis::ALL[s % 6])).collect()
}

fn jitters(p: &CascadeParams) -> [f64; 4] {
    std::array::from_fn(|c| p.channels[c].jitter_fwhm_ps)
}

/// Correlation matrix at 1 ps, the phase-offset model fit and the fitted
/// traces next to the measured ones.
fn fig2(p: &CascadeParams, a: &ReproduceArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let m = tomography_matrix(p, a)?;
    let matrix_dir = out.join("matrix");
    write_matrix(&matrix_dir, &m)?;
    let input = TomographyInput::from_matrix(&m, 1)?;
    let spec = CascadeFitSpec {
        precession_period_ns: p.precession_period_ns(),
        t1_x_ps: p.t1_x_ps,
        t2star_x_ps: p.t2star_x_ps,
        channel_jitter_fwhm_ps: jitters(p),
        range_ps: (-200.0, 800.0),
    };
    let fit = fit_cascade_model(&input, &spec)?;
    let model = CascadeModel {
        precession_period_ns: spec.precession_period_ns,
        t1_x_ps: spec.t1_x_ps,
        t2star_x_ps: spec.t2star_x_ps,
        dphi_rad: fit.value("dphi_deg").to_radians(),
    };
    let traces = model_traces(&model, &spec.channel_jitter_fwhm_ps, &input.binning, &slot_channels(&input));
    let amp = fit.value("amplitude");
    let traces_path = out.join("traces.csv");
    let mut w = csv::Writer::from_path(&traces_path)?;
    w.write_record(["xx", "x", "delay_ps", "rate_hz", "model_hz"])?;
    let centers = input.centers();
    for (s, model) in traces.iter().enumerate() {
        let (bx, b) = (Basis::ALL[s / 6], Basis::ALL[s % 6]);
        let data = input.trace(bx, b);
        for i in 0..centers.len() {
            w.write_record([bx.to_string(), b.to_string(), centers[i].to_string(), data[i].to_string(), (amp * model[i]).to_string()])?;
        }
    }
    w.flush()?;
    let fit_path = out.join("fit.json");
    write_json(&fit_path, &fit.to_params_sigma_json())?;
    Ok(vec![matrix_dir.join("matrix.json"), traces_path, fit_path])
}

/// Negativity against delay (8 ps bins) or against the integration window.
fn fig3(p: &CascadeParams, a: &ReproduceArgs, out: &Path, window: bool) -> Result<Vec<PathBuf>> {
    let m = tomography_matrix(p, a)?;
    let input = TomographyInput::from_matrix(&m, TOMOGRAPHY_BIN_PS)?;
    let opts = BootstrapOptions { resamples: TOMOGRAPHY_RESAMPLES, seed: a.seed };
    let (series, name, x) = if window {
        let max = input.centers().iter().fold(0.0f64, |m, c| m.max(c.abs()));
        (negativity_vs_window(&input, &default_windows(TOMOGRAPHY_BIN_PS, max), &opts)?, "neg_window.csv", "window_ps")
    } else {
        (negativity_vs_delay(&input, (0.0, 3.0 * p.t1_x_ps), &opts)?, "neg.csv", "delay_ps")
    };
    let neg = out.join(name);
    write_negativity(&neg, x, &series)?;
    let rho = out.join("rho.json");
    write_json(&rho, &density_matrices(&input, &series, window)?)?;
    Ok(vec![neg, rho])
}

/// Central HOM manifold with the fitted and non-convolved model curves.
fn fig4c(p: &CascadeParams, a: &ReproduceArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let jitter = p.combined_jitter_fwhm(0, 1);
    let truth = HomParams::new(p.t1_xx_ps, p.t2star_xx_ps, jitter);
    let pairs = a.scale as f64 * p.eta_ex * p.channels[0].eta_det * p.channels[1].eta_det;
    let (co, cross) = synthetic_hom(&truth, HOM_BIN_PS, HOM_HALF_SPAN_PS, pairs, a.seed)?;
    let fit = fit_hom(&co, &cross, &HomFitSpec::new(p.t1_xx_ps, jitter))?;
    let fitted = HomParams::new(p.t1_xx_ps, fit.value("t2star_ps"), jitter);
    let curve = |amp: f64, pol, nc: bool| -> Vec<f64> {
        co.x.iter()
            .map(|&t| amp * if nc { hom_model_nc(t, &fitted, pol) } else { hom_model(t, &fitted, pol) })
            .collect()
    };
    let (ac, ax) = (fit.value("amp_co"), fit.value("amp_cross"));
    let cols = [
        curve(ac, HomPolarization::Co, false),
        curve(ax, HomPolarization::Cross, false),
        curve(ac, HomPolarization::Co, true),
        curve(ax, HomPolarization::Cross, true),
    ];
    let hom = out.join("hom.csv");
    write_columns(
        &hom,
        &["delay_ps", "co", "cross", "model_co", "model_cross", "model_co_nc", "model_cross_nc"],
        &[&co.x, &co.y, &cross.y, &cols[0], &cols[1], &cols[2], &cols[3]],
    )?;
    let fit_path = out.join("fit.json");
    let mut v = fit.to_params_sigma_json();
    v["pairs"] = json!(pairs);
    write_json(&fit_path, &v)?;
    Ok(vec![hom, fit_path])
}

/// Folded XX and X decays, the XX-conditioned X decay and the joint fit.
fn s2(p: &CascadeParams, a: &ReproduceArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let s = sim(p, a)?;
    let grid = s.pulse_grid().shifted_earlier(SIFT_GUARD_PS);
    let xx = folded_decay(&channel_timestamps(&s.records, 0), &grid, 4.0);
    let x = folded_decay(&channel_timestamps(&s.records, 2), &grid, 4.0);
    let cfg = CorrelatorConfig::new(4, 2000, CorrelationMode::Histogram, p.rep_rate_ghz);
    let cond = cross_correlate(&s.records, 0, 2, &cfg)?;
    let mut spec = LifetimeSpec::new(p.channels[0].jitter_fwhm_ps, p.channels[2].jitter_fwhm_ps);
    spec.period_ps = Some(p.period_ps());
    let fit = fit_lifetimes(&xx, &x, &cond.to_series(), &spec)?;
    let paths: Vec<PathBuf> = ["xx.csv", "x.csv", "cond.csv", "lifetime.json"].iter().map(|f| out.join(f)).collect();
    write_columns(&paths[0], &["t_ps", "counts"], &[&xx.x, &xx.y])?;
    write_columns(&paths[1], &["t_ps", "counts"], &[&x.x, &x.y])?;
    write_histogram(&paths[2], &cond)?;
    write_json(&paths[3], &fit.to_value_sigma_json())?;
    Ok(paths)
}

/// XX auto-correlation over ±60 periods and its peak-area envelope fit.
fn s5(p: &CascadeParams, a: &ReproduceArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let s = sim(p, a)?;
    let period = p.period_ps();
    let cfg = CorrelatorConfig::new(16, (60.5 * period) as i64, CorrelationMode::Histogram, p.rep_rate_ghz);
    let h = cross_correlate(&s.records, 0, 1, &cfg)?;
    let env = PeakEnvelope::from_histogram(&h, period);
    let fit = fit_blinking(&env, p.rep_rate_ghz)?;
    let (beta, td, scale) = (fit.value("beta"), fit.value("t_decay_ns"), fit.value("scale"));
    let n: Vec<f64> = env.n.iter().map(|&k| k as f64).collect();
    let model: Vec<f64> = env
        .n
        .iter()
        .map(|&k| if td.is_finite() { scale * blinking_envelope(k, beta, td, period * 1e-3) } else { scale })
        .collect();
    let paths: Vec<PathBuf> = ["auto.csv", "envelope.csv", "blinking.json"].iter().map(|f| out.join(f)).collect();
    write_histogram(&paths[0], &h)?;
    write_columns(&paths[1], &["n", "area", "sigma", "model"], &[&n, &env.area, &env.sigma, &model])?;
    let mut v = fit.to_value_sigma_json();
    v["flags"] = json!(fit.flags);
    write_json(&paths[2], &v)?;
    Ok(paths)
}
