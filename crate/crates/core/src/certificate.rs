//! Confinement probabilities of the centered cones, Paley-Zygmund ratios and
//! the lower-tail certificate assembled from them.
//!
//! For each tube, with probability at least `p` the cone mass exceeds half
//! its mean; on that event the Girsanov lower bound keeps `log Z` above
//! `−3C²N^{α+1}` (checked, not assumed). Tubes in a family are independent,
//! so `P(log Z ≤ −3C²N^{α+1}) ≤ exp(−(N/15) Σ_n p_n)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fk::{paths_only_refinement, MassEstimate, PathEnsemble, RegionSpec};
use crate::moments::{ball_second_moment_reduced, mean_mass, ProfileSpec};
use crate::plane::{Point, ORIGIN};
use crate::special::GreenEvaluator;
use crate::tubes::{disjointness_check, TubeFamily};

/// Cone `C_n` of a family with its radius schedule scaled by `radius_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub family: TubeFamily,
    pub n: usize,
    #[serde(default = "unit")]
    pub radius_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl ConeSpec {
    pub fn new(family: TubeFamily, n: usize) -> Self {
        Self {
            family,
            n,
            radius_scale: 1.0,
        }
    }

    fn region(&self) -> RegionSpec {
        RegionSpec::Cone {
            family: self.family,
            n: self.n,
            radius_scale: self.radius_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfinementEstimate {
    /// `∫_{B_{r/(20N)}} P_x(ω ∈ C_n) dx` at the fine step.
    pub integral: f64,
    pub std_error: f64,
    /// `integral / area(B_{r/(20N)})`.
    pub probability: f64,
    pub dt: f64,
    pub coarse: MassEstimate,
    pub fine: MassEstimate,
    /// `|coarse − fine|` and the tolerance `2·sqrt(se_c² + se_f²)` it must stay under.
    pub refinement_shift: f64,
    pub refinement_tolerance: f64,
}

/// Endpoint-conditioned, bridge-corrected estimate of the cone confinement
/// integral. Evaluates the same paths at `dt` and `dt/2`; fails unless halving
/// the step moves the estimate by less than two combined standard errors.
pub fn confinement_probability(cone: &ConeSpec, paths: usize, dt: f64, seed: u64) -> Result<ConfinementEstimate> {
    let region = cone.region();
    // Condition on the endpoint only when the terminal disc is small on the
    // diffusive scale; otherwise free paths already hit it.
    let end_radius = cone.radius_scale * cone.family.base_radius();
    let ens = PathEnsemble::new(paths, dt, seed).corrected();
    let ens = if end_radius < cone.family.t.sqrt() { ens.bridged() } else { ens };
    let (coarse, fine) = paths_only_refinement(&region, cone.family.t, &ens)?;
    let shift = (coarse.mean - fine.mean).abs();
    let tol = 2.0 * coarse.std_error.hypot(fine.std_error);
    if !(shift <= tol) {
        return Err(Error::Accuracy {
            achieved: shift,
            requested: tol,
            context: format!("confinement estimate moved under dt refinement ({dt} → {}); use a smaller dt", 0.5 * dt),
        });
    }
    let rho = cone.family.base_radius();
    Ok(ConfinementEstimate {
        integral: fine.mean,
        std_error: fine.std_error,
        probability: fine.mean / (PI * rho * rho),
        dt: 0.5 * dt,
        coarse,
        fine,
        refinement_shift: shift,
        refinement_tolerance: tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PzReport {
    /// `ρ = r/(20N)`, the start disc radius and the mollification scale of the ball bound.
    pub rho: f64,
    pub cone: ConfinementEstimate,
    /// `max(0, mean − 3·se)` of the cone mean.
    pub cone_mean_lower: f64,
    /// `E Z(B_ρ, B_ρ)`.
    pub ball_mean: f64,
    /// Upper bound on `Var Z(B_ρ, B_ρ) / (2πρ²)⁴` (sharp form plus its error estimate).
    pub ball_variance_normalized: f64,
    /// `E[Z(B_ρ, B_ρ)]² + (2πρ²)⁴ · ball_variance_normalized`.
    pub second_moment_bound: f64,
    /// `¼ mean² / second_moment_bound` at the point estimate.
    pub ratio: f64,
    /// Same with the lower confidence mean: the probability used downstream.
    pub ratio_lower: f64,
    /// `log(10N/r)`.
    pub log_factor: f64,
    /// `(mean² / second moment) · log(10N/r)²`, the constant in `C̃/log(10N/r)²`.
    pub implied_constant: f64,
}

/// Paley-Zygmund lower bound on `P(Z(C_n) ≥ ½ E Z(C_n))`.
pub fn pz_ratio(family: &TubeFamily, n: usize, paths: usize, dt: f64, seed: u64, ev: &GreenEvaluator) -> Result<PzReport> {
    let cone = confinement_probability(&ConeSpec::new(*family, n), paths, dt, seed)?;
    let rho = family.base_radius();
    let ball = ProfileSpec::ball(rho, ORIGIN)?;
    let ball_mean = mean_mass(&ball, &ball, family.t)?.value;
    let sm = ball_second_moment_reduced(rho, family.t, ev)?;
    let var_norm = sm.sharp.value + sm.sharp.abs_error_estimate;
    let second = ball_mean * ball_mean + (2.0 * PI * rho * rho).powi(4) * var_norm;
    let lower = (cone.integral - 3.0 * cone.std_error).max(0.0);
    let ratio = 0.25 * cone.integral * cone.integral / second;
    let log_factor = (10.0 * family.n_big as f64 / family.r).ln();
    Ok(PzReport {
        rho,
        cone_mean_lower: lower,
        ball_mean,
        ball_variance_normalized: var_norm,
        second_moment_bound: second,
        ratio,
        ratio_lower: 0.25 * lower * lower / second,
        log_factor,
        implied_constant: 4.0 * ratio * log_factor * log_factor,
        cone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    #[serde(rename = "N")]
    pub n_big: usize,
    pub alpha: f64,
    pub r: f64,
    pub t: f64,
    pub a: Point,
    #[serde(rename = "C_drift")]
    pub c_drift: f64,
    pub theta: f64,
    /// `x = 3 C² N^{α+1}`.
    pub threshold: f64,
    /// `(n, p_n)`: lower bounds on the per-tube success probabilities.
    pub p_n: Vec<(usize, f64)>,
    /// `exp(−(N/15) Σ p_n)`.
    pub bound: f64,
    /// Certified pairwise tube margin.
    pub min_margin: f64,
    /// Whether `log(½ E Z(C_n)) − (3/2)C²N^{α+1} ≥ −x`, so that a successful
    /// tube indeed lifts `log Z` above the threshold.
    pub threshold_covers_mean: bool,
    pub pz: PzReport,
    pub seed: u64,
    pub paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub digest: Option<String>,
}

/// `exp(−(N/15) Σ p_n)`.
pub fn product_bound(n_big: usize, p_n: &[f64]) -> f64 {
    (-(n_big as f64 / 15.0) * p_n.iter().sum::<f64>()).exp()
}

/// Builds the lower-tail certificate for a family whose drift constant is set.
pub fn tail_certificate(family: &TubeFamily, theta: f64, paths: usize, dt: f64, seed: u64, ev: &GreenEvaluator) -> Result<Certificate> {
    family.validate()?;
    if (ev.theta() - theta).abs() > 0.0 {
        return Err(crate::error::config(format!("evaluator θ = {} differs from θ = {theta}", ev.theta())));
    }
    let disjoint = disjointness_check(family, 1000)?;
    if !disjoint.ok {
        let w = disjoint.witness.expect("failure carries a witness");
        return Err(Error::Infeasible(format!(
            "tubes {:?} and {:?} overlap at s = {} (margin {}); raise the drift constant",
            w.first, w.second, w.s, w.margin
        )));
    }
    let nb = family.n_big as f64;
    let threshold = 3.0 * family.c_drift * family.c_drift * nb.powf(family.alpha + 1.0);
    // The cone, hence the success probability, does not depend on n.
    let pz = pz_ratio(family, family.n_big, paths, dt, seed, ev)?;
    let p_n: Vec<(usize, f64)> = family.n_range().map(|n| (n, pz.ratio_lower)).collect();
    let bound = product_bound(family.n_big, &p_n.iter().map(|&(_, p)| p).collect::<Vec<_>>());
    let log_lift = (0.5 * pz.cone_mean_lower).ln() - 0.5 * threshold;
    Ok(Certificate {
        n_big: family.n_big,
        alpha: family.alpha,
        r: family.r,
        t: family.t,
        a: family.a,
        c_drift: family.c_drift,
        theta,
        threshold,
        p_n,
        bound,
        min_margin: disjoint.min_margin,
        threshold_covers_mean: log_lift >= -threshold,
        pz,
        seed,
        paths,
        dt,
        digest: None,
    })
}
