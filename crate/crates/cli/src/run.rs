use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use shf_core::certificate::tail_certificate;
use shf_core::fk::{independence_check, noise_for, simulate_mass, simulate_mass_with_noise, tail_estimate, FkConfig, NoiseMode, RegionSpec};
use shf_core::moments::{log_divergence_scan, mean_mass, variance_mass, VarianceIntegrand};
use shf_core::plane::ORIGIN;
use shf_core::special::{DickmanGrid, DickmanOptions, GreenEvaluator, GreenSample};
use shf_core::tubes::{disjointness_check_with_target, separation_profile, tube_samples, TubeFamily, TubeId};
use shf_core::Error;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::output::Outputs;

/// `G_θ` evaluator covering `(0, t_max]`; beyond `t = 1` it is backed by a
/// Dickman table on the `s` grid `0, s_step, …, s_max`.
fn evaluator(theta: f64, t_max: f64, s_step: f64, s_max: f64) -> CliResult<GreenEvaluator> {
    if t_max <= 1.0 {
        return Ok(GreenEvaluator::new(theta));
    }
    if !(s_step > 0.0 && s_max > s_step) {
        return Err(CliError::config(format!("need 0 < s_step < s_max, got {s_step}, {s_max}")));
    }
    let n = (s_max / s_step).round() as usize;
    let s: Vec<f64> = (0..=n).map(|i| i as f64 * s_step).collect();
    let grid = DickmanGrid::build(&s, t_max, DickmanOptions::default())?;
    Ok(GreenEvaluator::with_dickman(theta, Arc::new(grid)))
}

fn noise_derived(out: &mut Outputs, cfg: &FkConfig, region: &RegionSpec, dt: f64) -> CliResult<()> {
    out.derive("h", cfg.spacing())?;
    if cfg.coupling_off {
        out.derive("beta", 0.0)?;
        return Ok(());
    }
    out.derive("beta", cfg.beta()?)?;
    out.derive("j_eff", noise_for(cfg, region, dt, 0)?.variance_rate(ORIGIN)?)?;
    Ok(())
}

fn family_derived(out: &mut Outputs, fam: &TubeFamily, searched: bool) -> CliResult<()> {
    out.derive("b_N", fam.b_n())?;
    out.derive("C_drift", fam.c_drift)?;
    out.derive("C_drift_searched", searched)
}

#[derive(Serialize)]
struct NormalizationRow {
    s: f64,
    mass: f64,
    tail_bound: f64,
}

pub fn dickman(c: &DickmanConfig, out: &mut Outputs) -> CliResult<()> {
    let d = DickmanOptions::default();
    let opts = DickmanOptions {
        panel_width: c.panel_width.unwrap_or(d.panel_width),
        abs_tol: c.abs_tol.unwrap_or(d.abs_tol),
        rel_tol: c.rel_tol.unwrap_or(d.rel_tol),
        ..d
    };
    let grid = DickmanGrid::build(&c.s, c.t_max, opts)?;
    let table = grid.table(c.t_step)?;
    let norms: Vec<NormalizationRow> = c
        .s
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let (mass, tail_bound) = grid.normalization(i);
            NormalizationRow { s, mass, tail_bound }
        })
        .collect();
    out.csv("dickman.csv", table)?;
    out.csv("dickman_normalization.csv", norms)
}

pub fn green(c: &GreenConfig, out: &mut Outputs) -> CliResult<()> {
    if c.theta.is_empty() || c.t.is_empty() {
        return Err(CliError::config("theta and t lists must be non-empty"));
    }
    let t_max = c.t.iter().copied().fold(0.0, f64::max);
    let evs = c
        .theta
        .iter()
        .map(|&th| evaluator(th, t_max, c.s_step, c.s_max))
        .collect::<CliResult<Vec<_>>>()?;
    let pairs: Vec<(usize, f64)> = (0..evs.len()).flat_map(|i| c.t.iter().map(move |&t| (i, t))).collect();
    let rows = pairs
        .par_iter()
        .map(|&(i, t)| {
            Ok(GreenSample {
                theta: c.theta[i],
                t,
                g: evs[i].value(t)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    out.csv("green.csv", rows)
}

pub fn moments(c: &MomentsConfig, out: &mut Outputs) -> CliResult<()> {
    let ev = evaluator(c.theta, c.t, c.s_step, c.s_max)?;
    let mean = mean_mass(&c.u0, &c.phi, c.t)?;
    let variance = variance_mass(
        &VarianceIntegrand {
            theta: c.theta,
            t: c.t,
            u0: c.u0,
            phi: c.phi,
            reduction: c.reduction,
        },
        &ev,
    )?;
    out.json("moments.json", &json!({ "mean": mean, "variance": variance }))
}

pub fn scan(c: &ScanConfig, out: &mut Outputs) -> CliResult<()> {
    let ev = GreenEvaluator::new(c.theta);
    let scan = log_divergence_scan(&c.epsilons, c.t, &ev, c.factor)?;
    out.csv("scan.csv", &scan.rows)?;
    out.json(
        "scan.json",
        &json!({
            "t": scan.t,
            "theta": scan.theta,
            "factor": scan.factor,
            "sharp_ratio": scan.sharp_ratio,
            "bound_ratio": scan.bound_ratio,
            "bounded": scan.bounded(),
            "ordered": scan.ordered(),
        }),
    )
}

pub fn simulate(c: &SimulateConfig, seed: u64, out: &mut Outputs) -> CliResult<()> {
    let cfg = c.fk();
    let ens = c.ensemble(seed);
    let mut est = match (c.noise_seed, cfg.mode) {
        (Some(_), NoiseMode::Annealed) => return Err(CliError::config("noise_seed applies to quenched runs only")),
        (Some(ns), NoiseMode::Quenched) if !cfg.coupling_off => {
            c.region.validate(cfg.t)?;
            let noise = noise_for(&cfg, &c.region, c.dt, ns)?;
            simulate_mass_with_noise(&cfg, &c.region, &ens, &noise)?
        }
        _ => simulate_mass(&cfg, &c.region, &ens)?,
    };
    est.digest = Some(out.digest().to_string());
    noise_derived(out, &cfg, &c.region, c.dt)?;
    out.json("simulate.json", &est)
}

#[derive(Serialize)]
struct MarginRow {
    first_n: usize,
    first_j: usize,
    second_n: usize,
    second_j: usize,
    s: f64,
    margin: f64,
}

pub fn tubes(c: &TubesConfig, out: &mut Outputs) -> CliResult<()> {
    if c.samples == 0 {
        return Err(CliError::config("samples must be positive"));
    }
    let (fam, searched) = resolve_family(c.n_big, c.alpha, c.r, c.t, c.a, c.c_drift, c.margin_target, c.s_resolution, c.cap)?;
    let report = disjointness_check_with_target(&fam, c.s_resolution, c.margin_target)?;
    if !report.ok {
        let w = report.witness.expect("failure carries a witness");
        return Err(Error::Infeasible(format!(
            "tubes {:?} and {:?} overlap at s = {} (margin {}) with C_drift = {}",
            w.first, w.second, w.s, w.margin, fam.c_drift
        ))
        .into());
    }
    family_derived(out, &fam, searched)?;
    out.json("tubes.json", &json!({ "family": fam, "b_N": fam.b_n(), "disjointness": report }))?;
    out.csv("separation.csv", tube_samples(&fam, c.samples))?;
    let margins = separation_profile(&fam, c.samples).into_iter().map(|m| MarginRow {
        first_n: m.first.0,
        first_j: m.first.1,
        second_n: m.second.0,
        second_j: m.second.1,
        s: m.s,
        margin: m.margin,
    });
    out.csv("margins.csv", margins)
}

#[derive(Serialize)]
struct PnRow {
    n: usize,
    p_n: f64,
}

pub fn certificate(c: &CertificateConfig, seed: u64, out: &mut Outputs) -> CliResult<()> {
    let (fam, searched) = resolve_family(c.n_big, c.alpha, c.r, c.t, c.a, c.c_drift, c.margin_target, c.s_resolution, c.cap)?;
    let ev = evaluator(c.theta, c.t, 0.025, 20.0)?;
    let mut cert = tail_certificate(&fam, c.theta, c.paths, c.dt, seed, &ev)?;
    cert.digest = Some(out.digest().to_string());
    family_derived(out, &fam, searched)?;
    out.derive("threshold", cert.threshold)?;
    out.json("certificate.json", &cert)?;
    out.csv("p_n.csv", cert.p_n.iter().map(|&(n, p_n)| PnRow { n, p_n }))
}

pub fn tail(c: &TailConfig, seed: u64, out: &mut Outputs) -> CliResult<()> {
    let cfg = c.fk();
    let est = tail_estimate(&cfg, &c.region, &c.thresholds, c.realizations, &c.ensemble(seed))?;
    noise_derived(out, &cfg, &c.region, c.dt)?;
    out.csv("tail.csv", &est.rows)?;
    out.json("tail.json", &est)
}

#[derive(Serialize)]
struct CorrelationRow {
    first_n: usize,
    first_j: usize,
    second_n: usize,
    second_j: usize,
    correlation: f64,
}

pub fn independence(c: &IndependenceConfig, seed: u64, out: &mut Outputs) -> CliResult<()> {
    let (fam, searched) = resolve_family(c.n_big, c.alpha, c.r, c.t, c.a, c.c_drift, 0.0, c.s_resolution, c.cap)?;
    let cfg = c.fk();
    let tubes: Vec<TubeId> = c.tubes.iter().map(|&[n, j]| (n, j)).collect();
    let ens = shf_core::fk::PathEnsemble {
        sampling: c.sampling,
        ..shf_core::fk::PathEnsemble::new(c.paths, c.dt, seed)
    };
    let rep = independence_check(&cfg, &fam, &tubes, &ens, c.realizations)?;
    family_derived(out, &fam, searched)?;
    noise_derived(out, &cfg, &RegionSpec::tube(fam, tubes[0]), c.dt)?;
    let mut rows = Vec::new();
    for (i, p) in tubes.iter().enumerate() {
        for (k, q) in tubes.iter().enumerate().skip(i + 1) {
            rows.push(CorrelationRow {
                first_n: p.0,
                first_j: p.1,
                second_n: q.0,
                second_j: q.1,
                correlation: rep.correlation[i][k],
            });
        }
    }
    out.csv("correlation.csv", rows)?;
    out.json("independence.json", &rep)
}
