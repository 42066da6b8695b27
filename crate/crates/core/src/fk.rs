//! Feynman-Kac Monte Carlo for the mollified equation at critical coupling.
//!
//! A path contributes `area(start)·[area(end)·p_t(y−x)]·1{contained}·exp(β Σ_k W_k(X_{k dt}) − ½β² Σ_k J_eff(X_{k dt}) dt)`,
//! where the bracket appears only under endpoint-conditioned (bridge) sampling.
//! The normalizer uses the exact discrete variance rate, so for a fixed path
//! the noise average of the exponential is exactly one.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::noise::{coupling_beta, GridSpec, MollifierSpec, NoiseSlabStack};
use crate::plane::{add, dist, norm, sub, Point, ORIGIN};
use crate::rng::{derive_seed, stream, Purpose};
use crate::special::heat_kernel_unchecked;
use crate::stats::{correlation, wilson_interval, Running, Z95};
use crate::tubes::{GirsanovDrift, TubeFamily, TubeId};

/// Space-time region whose paths are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    /// No constraint; initial data `1_{B_r(0)}`.
    Full { start_radius: f64 },
    /// Start in `B_{r0}(0)`, end in `B_{r1}(a)` (strict inequality).
    BallToBall {
        start_radius: f64,
        end_radius: f64,
        #[serde(default)]
        end_center: Point,
    },
    /// `U_n^{(N,j)}`: within the tube disc at every monitored time.
    Tube { family: TubeFamily, n: usize, j: usize },
    /// Centered cone `C_n`, radius optionally scaled; start disc `B_{r/(20N)}(0)`.
    Cone {
        family: TubeFamily,
        n: usize,
        #[serde(default = "unit")]
        radius_scale: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// A disc `(center, radius)`.
pub type Disc = (Point, f64);

impl RegionSpec {
    pub fn full(start_radius: f64) -> Self {
        RegionSpec::Full { start_radius }
    }

    pub fn ball_to_ball(r: f64, a: Point) -> Self {
        RegionSpec::BallToBall {
            start_radius: r,
            end_radius: r,
            end_center: a,
        }
    }

    pub fn tube(family: TubeFamily, id: TubeId) -> Self {
        RegionSpec::Tube { family, n: id.0, j: id.1 }
    }

    pub fn cone(family: TubeFamily, n: usize) -> Self {
        RegionSpec::Cone {
            family,
            n,
            radius_scale: 1.0,
        }
    }

    pub fn validate(&self, t: f64) -> Result<()> {
        let pos = |x: f64, what: &str| -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(config(format!("{what} must be positive and finite, got {x}")))
            }
        };
        match self {
            RegionSpec::Full { start_radius } => pos(*start_radius, "start radius"),
            RegionSpec::BallToBall {
                start_radius,
                end_radius,
                end_center,
            } => {
                pos(*start_radius, "start radius")?;
                pos(*end_radius, "end radius")?;
                if !(end_center[0].is_finite() && end_center[1].is_finite()) {
                    return Err(config("end center must be finite"));
                }
                Ok(())
            }
            RegionSpec::Tube { family, n, j } => {
                family.validate()?;
                same_horizon(family, t)?;
                family.center((*n, *j), 0.0).map(|_| ())
            }
            RegionSpec::Cone { family, n, radius_scale } => {
                family.validate()?;
                same_horizon(family, t)?;
                pos(*radius_scale, "radius scale")?;
                if !family.n_range().contains(n) {
                    return Err(Error::OutOfRange(format!("cone index {n} outside {:?}", family.n_range())));
                }
                Ok(())
            }
        }
    }

    pub fn start_disc(&self) -> Disc {
        match self {
            RegionSpec::Full { start_radius } => (ORIGIN, *start_radius),
            RegionSpec::BallToBall { start_radius, .. } => (ORIGIN, *start_radius),
            RegionSpec::Tube { family, n, j } => (family.center_unchecked((*n, *j), 0.0), family.base_radius()),
            RegionSpec::Cone { family, .. } => (ORIGIN, family.base_radius()),
        }
    }

    pub fn end_disc(&self) -> Option<Disc> {
        match self {
            RegionSpec::Full { .. } => None,
            RegionSpec::BallToBall {
                end_radius, end_center, ..
            } => Some((*end_center, *end_radius)),
            RegionSpec::Tube { family, n, j } => Some((family.center_unchecked((*n, *j), family.t), family.base_radius())),
            RegionSpec::Cone {
                family, radius_scale, ..
            } => Some((ORIGIN, radius_scale * family.base_radius())),
        }
    }

    /// Times at which the geometry changes slope; always monitored.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            RegionSpec::Tube { family, .. } | RegionSpec::Cone { family, .. } => family.breakpoints().to_vec(),
            _ => Vec::new(),
        }
    }

    /// Whether `x` is admissible at time `s` (the horizon is `t`).
    pub fn contains(&self, s: f64, t: f64, x: Point) -> bool {
        match self {
            RegionSpec::Full { .. } => true,
            RegionSpec::BallToBall {
                end_radius, end_center, ..
            } => s < t || dist(x, *end_center) < *end_radius,
            RegionSpec::Tube { family, n, j } => dist(x, family.center_unchecked((*n, *j), s)) <= family.radius_unchecked(s),
            RegionSpec::Cone {
                family, radius_scale, ..
            } => norm(x) <= radius_scale * family.radius_unchecked(s),
        }
    }

    /// Distance from `x` to the lateral boundary at time `s`, for regions
    /// constrained at every time.
    pub fn boundary_gap(&self, s: f64, x: Point) -> Option<f64> {
        match self {
            RegionSpec::Tube { family, n, j } => Some(family.radius_unchecked(s) - dist(x, family.center_unchecked((*n, *j), s))),
            RegionSpec::Cone {
                family, radius_scale, ..
            } => Some(radius_scale * family.radius_unchecked(s) - norm(x)),
            _ => None,
        }
    }

    /// Extra monitored times for bridge-corrected containment: geometric
    /// grading toward both ends, where the radius opens like `s^{1/α}` and a
    /// straight-boundary correction is poor. Reaches down to `10⁻⁴ r_0²`.
    pub fn graded_times(&self, t: f64, dt: f64) -> Vec<f64> {
        let r0 = match self {
            RegionSpec::Tube { family, .. } => family.base_radius(),
            RegionSpec::Cone {
                family, radius_scale, ..
            } => radius_scale * family.base_radius(),
            _ => return Vec::new(),
        };
        let floor = 1e-4 * r0 * r0;
        let mut out = Vec::new();
        let mut s = 0.5 * dt.min(0.5 * t);
        while s > floor {
            out.push(s);
            out.push(t - s);
            s *= 0.5;
        }
        out
    }

    /// Radius of a box centered at the origin that monitored positions stay in
    /// (up to rare excursions for unconstrained paths).
    pub fn reach(&self, t: f64) -> f64 {
        let slack = 3.0 * (3.0 * t.sqrt() + 1.0);
        match self {
            RegionSpec::Full { start_radius } => start_radius + slack,
            RegionSpec::BallToBall {
                start_radius,
                end_radius,
                end_center,
            } => start_radius.max(norm(*end_center) + end_radius) + slack,
            RegionSpec::Tube { family, .. } => family.max_extent() + family.base_radius(),
            RegionSpec::Cone {
                family, radius_scale, ..
            } => radius_scale * family.radius_unchecked(0.5 * family.t) + family.base_radius(),
        }
    }

    /// Total mass of the initial indicator, `π r0²`.
    pub fn initial_mass(&self) -> f64 {
        let (_, r) = self.start_disc();
        PI * r * r
    }
}

fn same_horizon(family: &TubeFamily, t: f64) -> Result<()> {
    if (family.t - t).abs() > 1e-12 * t {
        return Err(config(format!("family horizon {} differs from simulation horizon {t}", family.t)));
    }
    Ok(())
}

/// How path endpoints are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Free Brownian motion from a uniform start.
    #[default]
    Free,
    /// Uniform start and uniform end in the region's terminal disc, joined by a
    /// Brownian bridge and weighted by `area(end)·p_t(y−x)`; unbiased for the
    /// same quantity and far less noisy when the terminal disc is small.
    Bridge,
}

/// How containment between monitored times is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitoring {
    /// Containment at monitored times only.
    #[default]
    Discrete,
    /// Additionally weight each step by the probability `1 − exp(−2 d₀d₁/Δ)`
    /// that the Brownian bridge between monitored points does not cross the
    /// boundary (exact for a straight boundary, `d` the gaps at the ends).
    BridgeCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    #[serde(rename = "M")]
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub monitoring: Monitoring,
}

impl PathEnsemble {
    pub fn new(paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            paths,
            dt,
            seed,
            sampling: Sampling::Free,
            monitoring: Monitoring::Discrete,
        }
    }

    pub fn bridged(self) -> Self {
        Self {
            sampling: Sampling::Bridge,
            ..self
        }
    }

    pub fn corrected(self) -> Self {
        Self {
            monitoring: Monitoring::BridgeCorrected,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One noise realization shared by all paths.
    #[default]
    Quenched,
    /// A fresh noise realization per path (estimates the annealed mean).
    Annealed,
}

/// Physical and discretization parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkConfig {
    pub theta: f64,
    pub epsilon: f64,
    pub t: f64,
    #[serde(default)]
    pub rho_offset: f64,
    /// Lattice spacing; defaults to `ε/4`.
    #[serde(default)]
    pub h: Option<f64>,
    /// Switch the noise off (`β = 0`).
    #[serde(default)]
    pub coupling_off: bool,
    #[serde(default)]
    pub mode: NoiseMode,
}

impl FkConfig {
    pub fn new(theta: f64, epsilon: f64, t: f64) -> Self {
        Self {
            theta,
            epsilon,
            t,
            rho_offset: 0.0,
            h: None,
            coupling_off: false,
            mode: NoiseMode::Quenched,
        }
    }

    pub fn annealed(self) -> Self {
        Self {
            mode: NoiseMode::Annealed,
            ..self
        }
    }

    pub fn without_noise(self) -> Self {
        Self {
            coupling_off: true,
            ..self
        }
    }

    pub fn beta(&self) -> Result<f64> {
        if self.coupling_off {
            Ok(0.0)
        } else {
            coupling_beta(self.theta, self.epsilon, self.rho_offset)
        }
    }

    pub fn spacing(&self) -> f64 {
        self.h.unwrap_or(self.epsilon / 4.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(config(format!("horizon must be positive, got {}", self.t)));
        }
        if !self.coupling_off {
            MollifierSpec::bump(self.epsilon).map_err(|e| config(e.to_string()))?;
            self.beta()?;
        }
        Ok(())
    }
}

/// Noise stack covering `region`'s reach, seeded with `noise_seed`.
pub fn noise_for(cfg: &FkConfig, region: &RegionSpec, dt: f64, noise_seed: u64) -> Result<NoiseSlabStack> {
    let spec = MollifierSpec::bump(cfg.epsilon).map_err(|e| config(e.to_string()))?;
    let side = 2.0 * (region.reach(cfg.t) + 2.0 * cfg.epsilon);
    NoiseSlabStack::new(
        GridSpec {
            h: cfg.spacing(),
            side,
        },
        cfg.t,
        dt,
        spec,
        noise_seed,
    )
}

/// Largest tolerated fraction of paths leaving the noise extent.
pub const MAX_ABORT_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `log mean`, accurate even when `mean` underflows.
    pub log_mean: f64,
    /// `std_error / mean`.
    pub relative_error: f64,
    #[serde(rename = "M")]
    pub paths: usize,
    /// Paths that stayed in the region at every monitored time.
    pub confined: usize,
    /// Paths that left the noise extent (counted as zero).
    pub aborts: usize,
    pub seed: u64,
    pub noise_seed: u64,
    #[serde(default)]
    pub digest: Option<String>,
}

impl MassEstimate {
}

/// Mean of `exp(l_i)` computed relative to the largest `l_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSpaceMean {
    pub mean: f64,
    pub std_error: f64,
    pub log_mean: f64,
    pub relative_error: f64,
}

pub fn log_space_mean(logs: &[f64]) -> LogSpaceMean {
    let m = logs.iter().copied().filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return LogSpaceMean {
            mean: 0.0,
            std_error: 0.0,
            log_mean: f64::NEG_INFINITY,
            relative_error: f64::INFINITY,
        };
    }
    let r: Running = logs.iter().map(|&l| (l - m).exp()).collect();
    let scale = m.exp();
    LogSpaceMean {
        mean: scale * r.mean(),
        std_error: scale * r.std_error(),
        log_mean: m + r.mean().ln(),
        relative_error: r.std_error() / r.mean(),
    }
}

/// Monitored times `{k dt} ∪ breakpoints`, with the slab index of each lattice time.
#[derive(Debug, Clone)]
struct Skeleton {
    times: Vec<f64>,
    slab: Vec<Option<usize>>,
    /// Indices of `0, b_N, t/2, t−b_N, t` when breakpoints exist.
    marks: Option<[usize; 5]>,
}

impl Skeleton {
    fn new(t: f64, dt: f64, breakpoints: &[f64], extra: &[f64]) -> Result<Self> {
        let ratio = t / dt;
        let k = ratio.round();
        if !(dt > 0.0) || (ratio - k).abs() > 1e-9 * ratio.max(1.0) || k < 1.0 {
            return Err(config(format!("dt = {dt} does not divide t = {t}")));
        }
        let k = k as usize;
        let mut pts: Vec<(f64, Option<usize>)> = (0..=k).map(|i| (t * i as f64 / k as f64, (i < k).then_some(i))).collect();
        for &b in breakpoints {
            if pts.iter().all(|&(s, _)| (s - b).abs() > 1e-12 * t) {
                pts.push((b, None));
            }
        }
        for &e in extra {
            if e > 0.0 && e < t && pts.iter().all(|&(s, _)| (s - e).abs() > 1e-12 * t) {
                pts.push((e, None));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let marks = if breakpoints.len() == 3 {
            let find = |x: f64| pts.iter().position(|&(s, _)| (s - x).abs() <= 1e-12 * t).expect("breakpoint present");
            Some([0, find(breakpoints[0]), find(breakpoints[1]), find(breakpoints[2]), pts.len() - 1])
        } else {
            None
        };
        Ok(Self {
            times: pts.iter().map(|p| p.0).collect(),
            slab: pts.iter().map(|p| p.1).collect(),
            marks,
        })
    }
}

/// How monitored cone-frame positions are carried to noise coordinates.
#[derive(Debug, Clone, Copy)]
enum Transport {
    Identity,
    Girsanov { family: TubeFamily, id: TubeId, drift: GirsanovDrift },
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    /// Log of the contribution without any Girsanov factor (`−∞` for zero).
    log_value: f64,
    log_girsanov: f64,
    confined: bool,
    aborted: bool,
}

/// Uniform point in a disc.
fn uniform_in_disc(rng: &mut ChaCha8Rng, (c, r): Disc) -> Point {
    let rad = r * rng.random::<f64>().sqrt();
    let ang = 2.0 * PI * rng.random::<f64>();
    [c[0] + rad * ang.cos(), c[1] + rad * ang.sin()]
}

fn normal2(rng: &mut ChaCha8Rng) -> Point {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

struct Engine<'a> {
    region: &'a RegionSpec,
    t: f64,
    beta: f64,
    skeleton: Skeleton,
    sampling: Sampling,
    monitoring: Monitoring,
    transport: Transport,
}

enum NoiseSource<'a> {
    Off,
    Shared(&'a NoiseSlabStack),
    PerPath(&'a NoiseSlabStack),
}

impl Engine<'_> {
    /// Start point, log of the start (and bridge end) weight, and the bridge end.
    fn begin(&self, rng: &mut ChaCha8Rng) -> (Point, f64, Option<Point>) {
        let start = self.region.start_disc();
        let x = uniform_in_disc(rng, start);
        let mut base = (PI * start.1 * start.1).ln();
        let end = match (self.sampling, self.region.end_disc()) {
            (Sampling::Bridge, Some(disc)) => {
                let y = uniform_in_disc(rng, disc);
                base += (PI * disc.1 * disc.1).ln() + heat_kernel_unchecked(self.t, crate::plane::norm_sq(sub(y, x))).ln();
                Some(y)
            }
            _ => None,
        };
        (x, base, end)
    }

    /// Start/end log-weight and the positions at every skeleton time.
    fn draw_path(&self, rng: &mut ChaCha8Rng) -> (f64, Vec<Point>) {
        let (mut x, base, end) = self.begin(rng);
        let times = &self.skeleton.times;
        let mut path = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            path.push(x);
            if i + 1 < times.len() {
                x = self.step(rng, x, end, times[i], times[i + 1]);
            }
        }
        (base, path)
    }

    fn step(&self, rng: &mut ChaCha8Rng, x: Point, end: Option<Point>, s: f64, next: f64) -> Point {
        let ds = next - s;
        let z = normal2(rng);
        match end {
            None => add(x, [ds.sqrt() * z[0], ds.sqrt() * z[1]]),
            Some(y) => {
                let rem = self.t - s;
                let next_rem = self.t - next;
                if next_rem <= 0.0 {
                    y
                } else {
                    let frac = ds / rem;
                    let sd = (ds * next_rem / rem).sqrt();
                    [x[0] + (y[0] - x[0]) * frac + sd * z[0], x[1] + (y[1] - x[1]) * frac + sd * z[1]]
                }
            }
        }
    }

    /// Containment (and bridge correction) of a drawn path at the skeleton
    /// indices `monitored`.
    fn judge(&self, base: f64, path: &[Point], monitored: &[usize]) -> PathOutcome {
        let times = &self.skeleton.times;
        let mut log_value = base;
        let mut prev: Option<(f64, f64)> = None;
        for &i in monitored {
            let (s, x) = (times[i], path[i]);
            if !self.region.contains(s, self.t, x) {
                return PathOutcome {
                    log_value: f64::NEG_INFINITY,
                    log_girsanov: 0.0,
                    confined: false,
                    aborted: false,
                };
            }
            if self.monitoring == Monitoring::BridgeCorrected {
                if let Some(gap) = self.region.boundary_gap(s, x) {
                    let gap = gap.max(0.0);
                    if let Some((s0, g0)) = prev {
                        log_value += (-(-2.0 * g0 * gap / (s - s0)).exp()).ln_1p();
                    }
                    prev = Some((s, gap));
                }
            }
        }
        PathOutcome {
            log_value,
            log_girsanov: 0.0,
            confined: true,
            aborted: false,
        }
    }

    fn run_path(&self, rng: &mut ChaCha8Rng, noise: Option<&NoiseSlabStack>) -> PathOutcome {
        let (mut x, mut log_value, end) = self.begin(rng);
        let times = &self.skeleton.times;
        let mut marks_pos = [ORIGIN; 5];
        let mut mark_i = 0;
        let mut noise_log = 0.0;
        let mut prev_gap: Option<f64> = None;
        for i in 0..times.len() {
            let s = times[i];
            if !self.region.contains(s, self.t, x) {
                return PathOutcome {
                    log_value: f64::NEG_INFINITY,
                    log_girsanov: 0.0,
                    confined: false,
                    aborted: false,
                };
            }
            if self.monitoring == Monitoring::BridgeCorrected {
                if let Some(gap) = self.region.boundary_gap(s, x) {
                    let gap = gap.max(0.0);
                    if let Some(g0) = prev_gap {
                        let ds = s - times[i - 1];
                        log_value += (-(-2.0 * g0 * gap / ds).exp()).ln_1p();
                    }
                    prev_gap = Some(gap);
                }
            }
            if let Some(m) = self.skeleton.marks {
                if mark_i < 5 && m[mark_i] == i {
                    marks_pos[mark_i] = x;
                    mark_i += 1;
                }
            }
            if let (Some(k), Some(stack)) = (self.skeleton.slab[i], noise) {
                let world = match &self.transport {
                    Transport::Identity => x,
                    Transport::Girsanov { family, id, drift } => drift.transport(family.center_unchecked(*id, s), x),
                };
                match stack.field_and_rate(k, world) {
                    Some((w, rate)) => noise_log += self.beta * w - 0.5 * self.beta * self.beta * rate * stack.dt(),
                    None => {
                        return PathOutcome {
                            log_value: f64::NEG_INFINITY,
                            log_girsanov: 0.0,
                            confined: false,
                            aborted: true,
                        }
                    }
                }
            }
            if i + 1 < times.len() {
                x = self.step(rng, x, end, s, times[i + 1]);
            }
        }
        let log_girsanov = match &self.transport {
            Transport::Identity => 0.0,
            Transport::Girsanov { drift, .. } => {
                let inc = [0, 1, 2, 3].map(|k| sub(marks_pos[k + 1], marks_pos[k]));
                drift.log_weight(&inc)
            }
        };
        PathOutcome {
            log_value: log_value + noise_log,
            log_girsanov,
            confined: true,
            aborted: false,
        }
    }

    fn run(&self, ens: &PathEnsemble, noise: NoiseSource<'_>) -> Vec<PathOutcome> {
        (0..ens.paths)
            .into_par_iter()
            .with_min_len(64)
            .map(|idx| {
                let idx = idx as u64;
                let mut rng = stream(ens.seed, Purpose::Paths, idx);
                match &noise {
                    NoiseSource::Off => self.run_path(&mut rng, None),
                    NoiseSource::Shared(s) => self.run_path(&mut rng, Some(s)),
                    NoiseSource::PerPath(template) => {
                        let own = template.reseeded(derive_seed(template.seed(), Purpose::Noise, idx));
                        self.run_path(&mut rng, Some(&own))
                    }
                }
            })
            .collect()
    }
}

fn check_ensemble(ens: &PathEnsemble) -> Result<()> {
    if ens.paths == 0 {
        return Err(config("need at least one path"));
    }
    Ok(())
}

fn summarize(outcomes: &[PathOutcome], with_girsanov: bool, seed: u64, noise_seed: u64) -> Result<MassEstimate> {
    let aborts = outcomes.iter().filter(|o| o.aborted).count();
    if aborts as f64 > MAX_ABORT_FRACTION * outcomes.len() as f64 {
        return Err(Error::Precondition(format!(
            "{aborts} of {} paths left the noise extent (limit {:.1}%)",
            outcomes.len(),
            100.0 * MAX_ABORT_FRACTION
        )));
    }
    let logs: Vec<f64> = outcomes
        .iter()
        .map(|o| if with_girsanov { o.log_value + o.log_girsanov } else { o.log_value })
        .collect();
    let lm = log_space_mean(&logs);
    Ok(MassEstimate {
        mean: lm.mean,
        std_error: lm.std_error,
        log_mean: lm.log_mean,
        relative_error: lm.relative_error,
        paths: outcomes.len(),
        confined: outcomes.iter().filter(|o| o.confined).count(),
        aborts,
        seed,
        noise_seed,
        digest: None,
    })
}

/// Noise seed used by quenched runs with path seed `seed`.
pub fn default_noise_seed(seed: u64) -> u64 {
    derive_seed(seed, Purpose::Noise, 0)
}

fn engine<'a>(cfg: &FkConfig, region: &'a RegionSpec, ens: &PathEnsemble, transport: Transport) -> Result<Engine<'a>> {
    cfg.validate()?;
    region.validate(cfg.t)?;
    check_ensemble(ens)?;
    Ok(Engine {
        region,
        t: cfg.t,
        beta: cfg.beta()?,
        skeleton: Skeleton::new(
            cfg.t,
            ens.dt,
            &region.breakpoints(),
            &match ens.monitoring {
                Monitoring::Discrete => Vec::new(),
                Monitoring::BridgeCorrected => region.graded_times(cfg.t, ens.dt),
            },
        )?,
        sampling: ens.sampling,
        monitoring: ens.monitoring,
        transport,
    })
}

fn materialize_if_cheap(stack: &mut NoiseSlabStack, paths: usize) {
    let nodes = stack.side_nodes() * stack.side_nodes();
    if nodes < 4 * paths && nodes * stack.slab_count() <= 20_000_000 {
        stack.materialize();
    }
}

fn execute(
    cfg: &FkConfig,
    region: &RegionSpec,
    ens: &PathEnsemble,
    transport: Transport,
    shared: Option<&NoiseSlabStack>,
    noise_reach: &RegionSpec,
) -> Result<(Vec<PathOutcome>, u64)> {
    let eng = engine(cfg, region, ens, transport)?;
    if eng.beta == 0.0 {
        return Ok((eng.run(ens, NoiseSource::Off), 0));
    }
    match (cfg.mode, shared) {
        (NoiseMode::Quenched, Some(stack)) => {
            check_stack(cfg, ens, stack)?;
            Ok((eng.run(ens, NoiseSource::Shared(stack)), stack.seed()))
        }
        (NoiseMode::Quenched, None) => {
            let mut stack = noise_for(cfg, noise_reach, ens.dt, default_noise_seed(ens.seed))?;
            materialize_if_cheap(&mut stack, ens.paths);
            Ok((eng.run(ens, NoiseSource::Shared(&stack)), stack.seed()))
        }
        (NoiseMode::Annealed, _) => {
            let stack = noise_for(cfg, noise_reach, ens.dt, default_noise_seed(ens.seed))?;
            Ok((eng.run(ens, NoiseSource::PerPath(&stack)), stack.seed()))
        }
    }
}

fn check_stack(cfg: &FkConfig, ens: &PathEnsemble, stack: &NoiseSlabStack) -> Result<()> {
    if (stack.dt() - ens.dt).abs() > 1e-12 * ens.dt || (stack.mollifier().epsilon - cfg.epsilon).abs() > 1e-15 {
        return Err(config("shared noise stack does not match the run's ε or dt"));
    }
    Ok(())
}

/// Estimate of `∫_{start} dx E_x[exp(FK weight); path ∈ region]`.
pub fn simulate_mass(cfg: &FkConfig, region: &RegionSpec, ens: &PathEnsemble) -> Result<MassEstimate> {
    let (out, ns) = execute(cfg, region, ens, Transport::Identity, None, region)?;
    summarize(&out, false, ens.seed, ns)
}

/// As [`simulate_mass`], on a given quenched noise realization.
pub fn simulate_mass_with_noise(cfg: &FkConfig, region: &RegionSpec, ens: &PathEnsemble, noise: &NoiseSlabStack) -> Result<MassEstimate> {
    let cfg = FkConfig {
        mode: NoiseMode::Quenched,
        ..*cfg
    };
    let (out, ns) = execute(&cfg, region, ens, Transport::Identity, Some(noise), region)?;
    summarize(&out, false, ens.seed, ns)
}

/// Paths-only estimates at steps `dt` and `dt/2` from the same paths: each
/// path is drawn on the fine skeleton and the coarse estimate reads it at the
/// coarse monitored times only, so the difference isolates the step bias.
pub fn paths_only_refinement(region: &RegionSpec, t: f64, ens: &PathEnsemble) -> Result<(MassEstimate, MassEstimate)> {
    region.validate(t)?;
    check_ensemble(ens)?;
    let extra = |dt: f64| match ens.monitoring {
        Monitoring::Discrete => Vec::new(),
        Monitoring::BridgeCorrected => region.graded_times(t, dt),
    };
    let coarse = Skeleton::new(t, ens.dt, &region.breakpoints(), &extra(ens.dt))?;
    let fine = Skeleton::new(t, 0.5 * ens.dt, &region.breakpoints(), &extra(0.5 * ens.dt))?;
    let subset: Vec<usize> = coarse
        .times
        .iter()
        .map(|&c| {
            fine.times
                .iter()
                .position(|&f| (f - c).abs() <= 1e-12 * t)
                .ok_or_else(|| Error::Precondition(format!("coarse time {c} missing from the refined skeleton")))
        })
        .collect::<Result<_>>()?;
    let all: Vec<usize> = (0..fine.times.len()).collect();
    let eng = Engine {
        region,
        t,
        beta: 0.0,
        skeleton: fine,
        sampling: ens.sampling,
        monitoring: ens.monitoring,
        transport: Transport::Identity,
    };
    let pairs: Vec<(PathOutcome, PathOutcome)> = (0..ens.paths)
        .into_par_iter()
        .with_min_len(64)
        .map(|idx| {
            let mut rng = stream(ens.seed, Purpose::Paths, idx as u64);
            let (base, path) = eng.draw_path(&mut rng);
            (eng.judge(base, &path, &subset), eng.judge(base, &path, &all))
        })
        .collect();
    let (c, f): (Vec<PathOutcome>, Vec<PathOutcome>) = pairs.into_iter().unzip();
    Ok((summarize(&c, false, ens.seed, 0)?, summarize(&f, false, ens.seed, 0)?))
}

/// Drift used to carry cone paths into a tube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSchedule {
    /// No transport, unit weight: reproduces [`simulate_mass`] on the cone.
    Identity,
    /// Transport into tube `(n, j)` with its Girsanov weight.
    Tube { j: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftedMass {
    /// Noise evaluated along the transported path, no Girsanov factor.
    pub plain: MassEstimate,
    /// With the Girsanov factor: the tube mass.
    pub weighted: MassEstimate,
    /// Smallest `log E_n` over confined paths (`+∞` if none).
    pub min_log_weight: f64,
    /// `−(3/2) C² N^{α+1}`.
    pub log_lower_bound: f64,
}

fn drift_transport(family: &TubeFamily, n: usize, schedule: DriftSchedule) -> Transport {
    match schedule {
        DriftSchedule::Identity => Transport::Identity,
        DriftSchedule::Tube { j } => Transport::Girsanov {
            family: *family,
            id: (n, j),
            drift: GirsanovDrift::for_tube(family, (n, j)),
        },
    }
}

fn drifted_from(outcomes: &[PathOutcome], family: &TubeFamily, seed: u64, noise_seed: u64) -> Result<DriftedMass> {
    let plain = summarize(outcomes, false, seed, noise_seed)?;
    let weighted = summarize(outcomes, true, seed, noise_seed)?;
    let min_log_weight = outcomes
        .iter()
        .filter(|o| o.confined)
        .map(|o| o.log_girsanov)
        .fold(f64::INFINITY, f64::min);
    Ok(DriftedMass {
        plain,
        weighted,
        min_log_weight,
        log_lower_bound: -1.5 * family.c_drift * family.c_drift * (family.n_big as f64).powf(family.alpha + 1.0),
    })
}

/// Cone paths for ring `n`, with noise read along their image in the tube.
pub fn simulate_drifted_mass(
    cfg: &FkConfig,
    family: &TubeFamily,
    n: usize,
    schedule: DriftSchedule,
    ens: &PathEnsemble,
) -> Result<DriftedMass> {
    let region = RegionSpec::cone(*family, n);
    let reach = match schedule {
        DriftSchedule::Identity => region.clone(),
        DriftSchedule::Tube { j } => RegionSpec::tube(*family, (n, j)),
    };
    reach.validate(cfg.t)?;
    let (out, ns) = execute(cfg, &region, ens, drift_transport(family, n, schedule), None, &reach)?;
    drifted_from(&out, family, ens.seed, ns)
}

/// As [`simulate_drifted_mass`] on a given quenched noise realization.
pub fn simulate_drifted_mass_with_noise(
    cfg: &FkConfig,
    family: &TubeFamily,
    n: usize,
    schedule: DriftSchedule,
    ens: &PathEnsemble,
    noise: &NoiseSlabStack,
) -> Result<DriftedMass> {
    let cfg = FkConfig {
        mode: NoiseMode::Quenched,
        ..*cfg
    };
    let region = RegionSpec::cone(*family, n);
    let (out, ns) = execute(&cfg, &region, ens, drift_transport(family, n, schedule), Some(noise), &region)?;
    drifted_from(&out, family, ens.seed, ns)
}

/// Noise-only weights `exp(β Σ W_k − ½β² Σ J_eff dt)` along one frozen path
/// (path 0 of the ensemble, free sampling) over `realizations` noise draws.
pub fn frozen_path_weights(cfg: &FkConfig, region: &RegionSpec, ens: &PathEnsemble, realizations: usize) -> Result<Running> {
    let eng = engine(cfg, region, ens, Transport::Identity)?;
    let mut rng = stream(ens.seed, Purpose::Paths, 0);
    let start = region.start_disc();
    let mut x = uniform_in_disc(&mut rng, start);
    let mut path = Vec::with_capacity(eng.skeleton.times.len());
    for i in 0..eng.skeleton.times.len() {
        if let Some(k) = eng.skeleton.slab[i] {
            path.push((k, x));
        }
        if i + 1 < eng.skeleton.times.len() {
            let ds = eng.skeleton.times[i + 1] - eng.skeleton.times[i];
            let z = normal2(&mut rng);
            x = add(x, [ds.sqrt() * z[0], ds.sqrt() * z[1]]);
        }
    }
    let template = noise_for(cfg, region, ens.dt, default_noise_seed(ens.seed))?;
    if let Some(&(_, p)) = path.iter().find(|&&(_, p)| template.variance_rate(p).is_err()) {
        return Err(Error::Precondition(format!("frozen path leaves the noise extent at ({}, {})", p[0], p[1])));
    }
    let beta = eng.beta;
    let weights: Vec<f64> = (0..realizations)
        .into_par_iter()
        .with_min_len(256)
        .map(|r| {
            let stack = template.reseeded(derive_seed(template.seed(), Purpose::Realizations, r as u64));
            let mut l = 0.0;
            for &(k, p) in &path {
                let (w, rate) = stack.field_and_rate(k, p).expect("checked extent");
                l += beta * w - 0.5 * beta * beta * rate * stack.dt();
            }
            l.exp()
        })
        .collect();
    let total: Running = weights.into_iter().collect();
    Ok(total)
}

/// Samples of `E_n` on unconstrained paths: the four increments are exact
/// Brownian increments over the pieces of the drift schedule.
pub fn girsanov_weight_samples(family: &TubeFamily, id: TubeId, paths: usize, seed: u64) -> Vec<f64> {
    let drift = GirsanovDrift::for_tube(family, id);
    (0..paths)
        .into_par_iter()
        .with_min_len(1024)
        .map(|idx| {
            let mut rng = stream(seed, Purpose::Auxiliary, idx as u64);
            let inc = drift.lengths.map(|len| {
                let z = normal2(&mut rng);
                [len.sqrt() * z[0], len.sqrt() * z[1]]
            });
            drift.log_weight(&inc).exp()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub threshold: f64,
    pub count: u64,
    pub realizations: u64,
    pub fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub rows: Vec<TailRow>,
    /// `log` of each realization's mass estimate.
    pub log_masses: Vec<f64>,
    /// Realizations whose inner relative standard error exceeds 10%.
    pub flagged: usize,
    pub aborts: usize,
}

/// Largest inner relative error before a realization is flagged.
pub const TAIL_FLAG_RELATIVE_ERROR: f64 = 0.1;

/// `P(log Z ≤ −x)` over `realizations` independent noise draws, each mass
/// estimated with the inner ensemble.
pub fn tail_estimate(cfg: &FkConfig, region: &RegionSpec, thresholds: &[f64], realizations: usize, inner: &PathEnsemble) -> Result<TailEstimate> {
    if realizations == 0 {
        return Err(config("need at least one realization"));
    }
    let cfg = FkConfig {
        mode: NoiseMode::Quenched,
        ..*cfg
    };
    let base = noise_for(&cfg, region, inner.dt, default_noise_seed(inner.seed))?;
    let masses: Vec<MassEstimate> = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let stack = base.reseeded(derive_seed(inner.seed, Purpose::Realizations, r));
            let ens = PathEnsemble {
                seed: derive_seed(inner.seed, Purpose::Paths, r),
                ..*inner
            };
            simulate_mass_with_noise(&cfg, region, &ens, &stack)
        })
        .collect::<Result<_>>()?;
    let log_masses: Vec<f64> = masses.iter().map(|m| m.log_mean).collect();
    let rows = thresholds
        .iter()
        .map(|&x| {
            let count = log_masses.iter().filter(|&&l| l <= -x).count() as u64;
            let n = realizations as u64;
            let (lo, hi) = wilson_interval(count, n, Z95);
            TailRow {
                threshold: x,
                count,
                realizations: n,
                fraction: count as f64 / n as f64,
                wilson_low: lo,
                wilson_high: hi,
            }
        })
        .collect();
    Ok(TailEstimate {
        rows,
        log_masses,
        flagged: masses.iter().filter(|m| !(m.relative_error <= TAIL_FLAG_RELATIVE_ERROR)).count(),
        aborts: masses.iter().map(|m| m.aborts).sum(),
    })
}

/// Tube masses under shared noise and their correlations across realizations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub tubes: Vec<TubeId>,
    /// `log_masses[r][i]`: log-mass of tube `i` in realization `r`.
    pub log_masses: Vec<Vec<f64>>,
    /// Correlation of log-masses.
    pub correlation: Vec<Vec<f64>>,
    pub max_abs_off_diagonal: f64,
    /// `1/√R`, the null standard deviation of a sample correlation.
    pub sigma: f64,
    /// Smallest certified margin between distinct tubes.
    pub min_margin: f64,
}

/// Masses of tubes of one family under shared noise (quenched, Girsanov
/// representation, common path numbers across realizations). Distinct tubes
/// must be separated by more than the noise's dependence range
/// `2ε + 2√2 h` (mollifier support plus bilinear interpolation stencil).
pub fn independence_check(
    cfg: &FkConfig,
    family: &TubeFamily,
    tubes: &[TubeId],
    ens: &PathEnsemble,
    realizations: usize,
) -> Result<IndependenceReport> {
    if realizations < 3 || tubes.is_empty() {
        return Err(config("need at least one tube and three realizations"));
    }
    family.validate()?;
    let range = 2.0 * cfg.epsilon + 2.0 * std::f64::consts::SQRT_2 * cfg.spacing();
    let mut min_margin = f64::INFINITY;
    for (a, &p) in tubes.iter().enumerate() {
        for &q in &tubes[a + 1..] {
            if p == q {
                continue;
            }
            let margin = crate::tubes::pair_margin(family, p, q, 1000)?;
            if !(margin > range) {
                return Err(Error::Precondition(format!(
                    "tubes {p:?} and {q:?} are {margin:.6} apart, not beyond the noise range {range:.6}"
                )));
            }
            min_margin = min_margin.min(margin);
        }
    }
    let cfg = FkConfig {
        mode: NoiseMode::Quenched,
        ..*cfg
    };
    let reach = tubes
        .iter()
        .map(|&id| RegionSpec::tube(*family, id).reach(cfg.t))
        .fold(0.0, f64::max);
    let base = noise_for(&cfg, &RegionSpec::full(reach), ens.dt, default_noise_seed(ens.seed))?;
    let log_masses: Vec<Vec<f64>> = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let stack = base.reseeded(derive_seed(ens.seed, Purpose::Realizations, r));
            tubes
                .iter()
                .map(|&(n, j)| {
                    simulate_drifted_mass_with_noise(&cfg, family, n, DriftSchedule::Tube { j }, ens, &stack).map(|d| d.weighted.log_mean)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let k = tubes.len();
    let logs: Vec<Vec<f64>> = (0..k).map(|i| log_masses.iter().map(|row| row[i]).collect()).collect();
    if logs.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::Accuracy {
            achieved: 0.0,
            requested: 1.0,
            context: "a tube mass estimate vanished; increase the number of paths".into(),
        });
    }
    let correlation: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| correlation(&logs[i], &logs[j])).collect())
        .collect();
    let max_abs_off_diagonal = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|&(i, j)| tubes[i] != tubes[j])
        .map(|(i, j)| correlation[i][j].abs())
        .fold(0.0, f64::max);
    Ok(IndependenceReport {
        tubes: tubes.to_vec(),
        log_masses,
        correlation,
        max_abs_off_diagonal,
        sigma: 1.0 / (realizations as f64).sqrt(),
        min_margin,
    })
}
