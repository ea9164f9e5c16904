//! Single-step subcommands.

use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use qdpair::correlator::{
    build_correlation_matrix, cross_correlate, CorrelationMode, CorrelatorConfig, SIFT_GUARD_PS,
};
use qdpair::estimators::{
    estimate_efficiencies, fit_blinking, fit_fss, fit_lifetimes, LifetimeSpec, PeakEnvelope, RateSummary,
};
use qdpair::fit::json_number;
use qdpair::interferometry::{bootstrap_hom, fit_hom, fit_michelson, HomFitSpec};
use qdpair::sim::{simulate as run_simulation, CascadeParams, SimOptions, CHANNEL_COUNT, XX_CHANNELS, X_CHANNELS};
use qdpair::tomography::{
    density_matrix_json, negativity_vs_delay, negativity_vs_window, BootstrapOptions, NegativitySeries,
    TomographyInput,
};
use qdpair::ttr::{read_stream, write_stream, TtrHeader};
use qdpair::{PeriodGrid, TimeTagRecord};

use crate::io::{
    emit_json, load_params, read_histogram, read_matrix, read_series, usage, write_columns, write_histogram,
    write_json, write_matrix, Run,
};
use crate::{
    BlinkingFitArgs, CorrelateArgs, EstimateArgs, FssFitArgs, HomFitArgs, LifetimeFitArgs, MichelsonFitArgs, ModeArg,
    SimulateArgs, TomographyArgs, TomographyMode,
};

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("simulate", argv);
    let p = load_params(a.config.as_deref())?;
    if let Some(c) = &a.config {
        run.input(c);
    }
    let mut opts = SimOptions::new(a.pulses, a.seed);
    opts.sync_every = a.sync_every;
    let sim = run_simulation(&p, &opts)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let header = TtrHeader::new(CHANNEL_COUNT as u32, sim.records.len() as u64);
    write_stream(&a.out, &header, &sim.records).with_context(|| format!("writing {}", a.out.display()))?;
    run.output(&a.out);
    println!("{} records, {} emitted pairs, {:.6} s", sim.records.len(), sim.emitted_pairs, sim.acquisition_s());
    run.finish(json!({ "params": p, "pulses": a.pulses, "sync_every": a.sync_every }), Some(a.seed))
}

fn mode_of(m: ModeArg) -> CorrelationMode {
    match m {
        ModeArg::Ttr => CorrelationMode::TtrSifted,
        ModeArg::Histogram => CorrelationMode::Histogram,
    }
}

/// Pulses covered by a stream: given explicitly, or up to the last tag.
fn pulse_count(records: &[TimeTagRecord], period_ps: f64, given: Option<u64>) -> Result<u64> {
    if let Some(n) = given {
        return Ok(n);
    }
    let last = records.last().ok_or_else(|| usage("stream is empty; pass --pulses"))?;
    Ok((last.timestamp_ps as f64 / period_ps).floor() as u64 + 1)
}

fn rep_rate(given: Option<f64>, params: Option<&CascadeParams>) -> f64 {
    given.or(params.map(|p| p.rep_rate_ghz)).unwrap_or(CascadeParams::reference().rep_rate_ghz)
}

/// Co-polarized (XX channel, X channel) pairs of a static setting.
fn co_pairs(p: &CascadeParams) -> Vec<(u8, u8)> {
    let mut out = Vec::new();
    for &a in &XX_CHANNELS {
        for &b in &X_CHANNELS {
            if p.channels[a as usize].basis == p.channels[b as usize].basis {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn correlate(a: &CorrelateArgs, argv: &[String]) -> Result<()> {
    if a.out.is_none() && a.matrix_out.is_none() {
        return Err(usage("nothing to write: pass --out and/or --matrix-out"));
    }
    let mut run = Run::start("correlate", argv);
    let params = match &a.config {
        Some(c) => {
            run.input(c);
            Some(load_params(Some(c))?)
        }
        None => None,
    };
    let rep_ghz = rep_rate(a.rep_ghz, params.as_ref());
    let window_ps = (a.window_ns * 1e3).round() as i64;
    let cfg = CorrelatorConfig::new(a.bin_ps, window_ps, mode_of(a.mode), rep_ghz);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    run.input(&a.input);
    let (_, records) = read_stream(&a.input)?;
    let mut config = json!({
        "bin_ps": a.bin_ps,
        "window_ps": window_ps,
        "mode": cfg.mode,
        "rep_ghz": rep_ghz,
        "sift_guard_ps": SIFT_GUARD_PS,
    });
    if let Some(out) = &a.out {
        let h = cross_correlate(&records, a.ch_a, a.ch_b, &cfg)?;
        write_histogram(out, &h)?;
        run.output(out);
        config["ch_a"] = json!(a.ch_a);
        config["ch_b"] = json!(a.ch_b);
    }
    if let Some(dir) = &a.matrix_out {
        let p = params.as_ref().ok_or_else(|| usage("--matrix-out needs --config for the basis schedule"))?;
        let n = pulse_count(&records, cfg.grid.period_ps, a.pulses)?;
        let m = build_correlation_matrix(&records, &p.effective_schedule(), n, &cfg)?;
        write_matrix(dir, &m)?;
        run.output_dir(dir);
        config["schedule"] = serde_json::to_value(p.effective_schedule())?;
        config["pulses"] = json!(n);
    }
    run.finish(config, None)
}

fn pair(name: &str, v: &[f64]) -> Result<(f64, f64)> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("--{name} takes two comma-separated values, got {}", v.len()))),
    }
}

fn series_columns(s: &NegativitySeries) -> [Vec<f64>; 5] {
    let col = |f: fn(&qdpair::tomography::NegativityPoint) -> f64| s.points.iter().map(f).collect::<Vec<f64>>();
    [col(|p| p.x_ps), col(|p| p.negativity), col(|p| p.sigma), col(|p| p.fidelity), col(|p| p.coincidences)]
}

/// `x_name,negativity,sigma,fidelity,coincidences`
pub fn write_negativity(path: &Path, x_name: &str, s: &NegativitySeries) -> Result<()> {
    let c = series_columns(s);
    write_columns(path, &[x_name, "negativity", "sigma", "fidelity", "coincidences"], &[&c[0], &c[1], &c[2], &c[3], &c[4]])
}

/// Reconstructed and raw density matrices for each point of a series.
pub fn density_matrices(input: &TomographyInput, s: &NegativitySeries, window: bool) -> Result<Value> {
    let none = BootstrapOptions { resamples: 0, seed: 0 };
    let mut out = Vec::new();
    for p in &s.points {
        let bins = if window {
            input.bins_where(|c| c.abs() <= p.x_ps)
        } else {
            input.bins_where(|c| c == p.x_ps)
        };
        let t = input.point(&bins, &none, 0)?;
        out.push(json!({
            "x_ps": p.x_ps,
            "negativity": json_number(t.negativity),
            "fidelity": json_number(t.fidelity),
            "fidelity_phase_rad": json_number(t.fidelity_phase),
            "rho": density_matrix_json(t.rho.matrix()),
            "raw": density_matrix_json(&t.raw),
        }));
    }
    Ok(Value::Array(out))
}

pub fn default_windows(bin_ps: i64, max_ps: f64) -> Vec<f64> {
    let step = (25.0 / bin_ps as f64).ceil().max(1.0) * bin_ps as f64;
    (1..).map(|k| k as f64 * step).take_while(|&w| w <= max_ps).collect()
}

pub fn tomography(a: &TomographyArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("tomography", argv);
    run.input(&a.matrix);
    let m = read_matrix(&a.matrix)?;
    let input = TomographyInput::from_matrix(&m, a.bin_ps).map_err(|e| usage(e.to_string()))?;
    let opts = BootstrapOptions { resamples: a.resamples, seed: a.seed };
    let (series, x_name, config) = match a.mode {
        TomographyMode::Delay => {
            let range = pair("range-ps", &a.range_ps)?;
            (negativity_vs_delay(&input, range, &opts)?, "delay_ps", json!({ "range_ps": a.range_ps }))
        }
        TomographyMode::Window => {
            let max = input.centers().iter().fold(0.0f64, |m, c| m.max(c.abs()));
            let windows = a.windows_ps.clone().unwrap_or_else(|| default_windows(a.bin_ps, max));
            (negativity_vs_window(&input, &windows, &opts)?, "window_ps", json!({ "windows_ps": windows }))
        }
    };
    if !series.omitted.is_empty() {
        eprintln!("omitted for lack of coincidences: {:?}", series.omitted);
    }
    write_negativity(&a.out, x_name, &series)?;
    run.output(&a.out);
    if let Some(rho) = &a.rho_out {
        write_json(rho, &density_matrices(&input, &series, a.mode == TomographyMode::Window)?)?;
        run.output(rho);
    }
    let mut config = config;
    config["bin_ps"] = json!(a.bin_ps);
    config["resamples"] = json!(a.resamples);
    run.finish(config, Some(a.seed))
}

pub fn estimate(a: &EstimateArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("estimate", argv);
    if let Some(c) = &a.config {
        run.input(c);
    }
    let p = load_params(a.config.as_deref())?;
    run.input(&a.input);
    let (_, records) = read_stream(&a.input)?;
    let grid = PeriodGrid::from_rate_ghz(p.rep_rate_ghz);
    let n = pulse_count(&records, grid.period_ps, a.pulses)?;
    let acquisition_s = n as f64 * grid.period_ps * 1e-12;
    let pairs = co_pairs(&p);
    let r = RateSummary::measure(&records, &grid.shifted_earlier(SIFT_GUARD_PS), acquisition_s, &XX_CHANNELS, &pairs)?;
    let mut fit = estimate_efficiencies(&r)?.to_fit_result();
    fit.push("single_counts", r.single_counts, r.single_counts.sqrt());
    fit.push("coinc_counts", r.coinc_counts, r.coinc_counts.sqrt());
    fit.push("acquisition_s", acquisition_s, 0.0);
    emit_json(a.out.as_deref(), &fit.to_value_sigma_json())?;
    if let Some(o) = &a.out {
        run.output(o);
    }
    run.finish(json!({ "rep_ghz": p.rep_rate_ghz, "pulses": n, "co_pairs": pairs }), None)
}

pub fn fss_fit(a: &FssFitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("fss-fit", argv);
    run.input(&a.input);
    let s = read_series(&a.input)?;
    let fit = fit_fss(&s.x, &s.y, a.noise_uev)?;
    emit_json(a.out.as_deref(), &fit.to_value_sigma_json())?;
    if let Some(o) = &a.out {
        run.output(o);
    }
    run.finish(json!({ "noise_uev": a.noise_uev }), None)
}

pub fn lifetime_fit(a: &LifetimeFitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("lifetime-fit", argv);
    let mut curves = Vec::new();
    for p in [&a.xx, &a.x, &a.cond] {
        run.input(p);
        curves.push(read_series(p)?);
    }
    let (jxx, jx) = pair("jitter-ps", &a.jitter_ps)?;
    let mut spec = LifetimeSpec::new(jxx, jx);
    spec.period_ps = a.period_ps;
    if let Some(r) = &a.range_ps {
        spec.range_ps = pair("range-ps", r)?;
    }
    let fit = fit_lifetimes(&curves[0], &curves[1], &curves[2], &spec)?;
    emit_json(a.out.as_deref(), &fit.to_value_sigma_json())?;
    if let Some(o) = &a.out {
        run.output(o);
    }
    run.finish(
        json!({ "jitter_ps": a.jitter_ps, "period_ps": spec.period_ps, "range_ps": [spec.range_ps.0, spec.range_ps.1] }),
        None,
    )
}

pub fn blinking_fit(a: &BlinkingFitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("blinking-fit", argv);
    if !(a.rep_ghz > 0.0) {
        return Err(usage("--rep-ghz must be positive"));
    }
    run.input(&a.input);
    let h = read_histogram(&a.input, CorrelationMode::Histogram)?;
    let env = PeakEnvelope::from_histogram(&h, 1e3 / a.rep_ghz);
    let fit = fit_blinking(&env, a.rep_ghz)?;
    let mut out = fit.to_value_sigma_json();
    out["flags"] = json!(fit.flags);
    emit_json(a.out.as_deref(), &out)?;
    if let Some(o) = &a.out {
        run.output(o);
    }
    run.finish(json!({ "rep_ghz": a.rep_ghz }), None)
}

pub fn hom_fit(a: &HomFitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("hom-fit", argv);
    run.input(&a.co);
    run.input(&a.cross);
    let co = read_series(&a.co)?;
    let cross = read_series(&a.cross)?;
    let mut spec = HomFitSpec::new(a.t1_ps, a.jitter_ps);
    spec.delay_ns = a.delay_ns;
    let fit = fit_hom(&co, &cross, &spec)?;
    let mut out = fit.to_params_sigma_json();
    if a.bootstrap > 0 {
        let b = bootstrap_hom(&co, &cross, &spec, &BootstrapOptions { resamples: a.bootstrap, seed: a.seed })?;
        out["bootstrap"] = serde_json::to_value(b)?;
    }
    write_json(&a.out, &out)?;
    run.output(&a.out);
    let config = json!({ "t1_ps": a.t1_ps, "jitter_ps": a.jitter_ps, "delay_ns": a.delay_ns, "bootstrap": a.bootstrap });
    run.finish(config, (a.bootstrap > 0).then_some(a.seed))
}

fn parse_beat(s: &str) -> Result<(f64, f64)> {
    let bad = || usage(format!("--beat {s:?}: expected amplitude:omega"));
    let (a, w) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

pub fn michelson_fit(a: &MichelsonFitArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::start("michelson-fit", argv);
    let beats = a.beats.iter().map(|b| parse_beat(b)).collect::<Result<Vec<_>>>()?;
    run.input(&a.vis);
    let data = read_series(&a.vis)?;
    let fit = fit_michelson(&data, &beats)?;
    write_json(&a.out, &fit.to_params_sigma_json())?;
    run.output(&a.out);
    run.finish(json!({ "beats": beats }), None)
}
