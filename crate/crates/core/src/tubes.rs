//! Space-time tubes: discs whose centers drift outward and whose radii open
//! like `(2s)^{1/α}`, rotated copies of them, certified pairwise disjointness,
//! and the Girsanov weight that straightens a tube into a centered cone.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::plane::{add, dist, norm, rotate, scale, sub, Point};

/// Parameters of the tube family `U_n^{(N,j)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeFamily {
    #[serde(rename = "N")]
    pub n_big: usize,
    pub alpha: f64,
    pub r: f64,
    pub t: f64,
    #[serde(default)]
    pub a: Point,
    pub c_drift: f64,
}

/// Tube label `(n, j)`: ring index and rotation index.
pub type TubeId = (usize, usize);

impl TubeFamily {
    pub fn new(n_big: usize, alpha: f64, r: f64, t: f64, a: Point, c_drift: f64) -> Result<Self> {
        let f = Self {
            n_big,
            alpha,
            r,
            t,
            a,
            c_drift,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_big < 2 {
            return Err(config(format!("N must be at least 2, got {}", self.n_big)));
        }
        if !(self.alpha > 2.0) || !self.alpha.is_finite() {
            return Err(config(format!("α must exceed 2, got {}", self.alpha)));
        }
        if !(self.r > 0.0) || !(self.t > 0.0) || !self.r.is_finite() || !self.t.is_finite() {
            return Err(config(format!("need r > 0 and t > 0, got r = {}, t = {}", self.r, self.t)));
        }
        if !(self.c_drift >= 0.0) || !self.c_drift.is_finite() {
            return Err(config(format!("drift constant must be finite and >= 0, got {}", self.c_drift)));
        }
        if !(self.a[0].is_finite() && self.a[1].is_finite()) {
            return Err(config("terminal center must be finite"));
        }
        if self.b_n() >= 0.5 * self.t {
            return Err(config(format!(
                "b_N = {} must be below t/2 = {} for N = {}",
                self.b_n(),
                0.5 * self.t,
                self.n_big
            )));
        }
        Ok(())
    }

    pub fn with_drift(&self, c_drift: f64) -> Self {
        Self { c_drift, ..*self }
    }

    /// `b_N = N^{−(α−1)}`.
    pub fn b_n(&self) -> f64 {
        (self.n_big as f64).powf(-(self.alpha - 1.0))
    }

    pub fn n_range(&self) -> std::ops::RangeInclusive<usize> {
        self.n_big / 2..=self.n_big
    }

    pub fn j_range(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.n_big / 15
    }

    pub fn tubes(&self) -> Vec<TubeId> {
        self.n_range().flat_map(|n| self.j_range().map(move |j| (n, j))).collect()
    }

    pub fn rotation_angle(&self, j: usize) -> f64 {
        20.0 * PI * j as f64 / self.n_big as f64
    }

    /// Times where the center's velocity changes: `b_N`, `t/2`, `t − b_N`.
    pub fn breakpoints(&self) -> [f64; 3] {
        let b = self.b_n();
        [b, 0.5 * self.t, self.t - b]
    }

    fn check(&self, id: TubeId, s: f64) -> Result<()> {
        if !self.n_range().contains(&id.0) || !self.j_range().contains(&id.1) {
            return Err(Error::OutOfRange(format!("tube {id:?} outside n ∈ {:?}, j ∈ {:?}", self.n_range(), self.j_range())));
        }
        if !(0.0..=self.t).contains(&s) {
            return Err(Error::OutOfRange(format!("time {s} outside [0, {}]", self.t)));
        }
        Ok(())
    }

    /// Drift speed `C n^α` of ring `n` on `[0, b_N]`.
    pub fn speed(&self, n: usize) -> f64 {
        self.c_drift * (n as f64).powf(self.alpha)
    }

    /// First coordinate of the unrotated center on `[0, t/2]`, mirrored after.
    fn axial(&self, n: usize, s: f64) -> f64 {
        let s = s.min(self.t - s);
        let b = self.b_n();
        let base = 4.0 * self.r * n as f64 / (5.0 * self.n_big as f64);
        if s <= b {
            base + self.speed(n) * s
        } else {
            base + self.speed(n) * b + (s - b)
        }
    }

    /// Center of `U_n^{(N,j)}` at time `s` (no range checks).
    pub fn center_unchecked(&self, id: TubeId, s: f64) -> Point {
        let c = rotate([self.axial(id.0, s), 0.0], self.rotation_angle(id.1));
        add(c, scale(self.a, s / self.t))
    }

    pub fn center(&self, id: TubeId, s: f64) -> Result<Point> {
        self.check(id, s)?;
        Ok(self.center_unchecked(id, s))
    }

    /// Center velocity on the open piece containing `s`.
    pub fn velocity(&self, id: TubeId, s: f64) -> Point {
        let b = self.b_n();
        let half = 0.5 * self.t;
        let v = if s < b {
            self.speed(id.0)
        } else if s < half {
            1.0
        } else if s < self.t - b {
            -1.0
        } else {
            -self.speed(id.0)
        };
        add(rotate([v, 0.0], self.rotation_angle(id.1)), scale(self.a, 1.0 / self.t))
    }

    /// `r/(20N) + (2 min(s, t−s))^{1/α}` (no range check).
    pub fn radius_unchecked(&self, s: f64) -> f64 {
        let s = s.min(self.t - s).max(0.0);
        self.base_radius() + (2.0 * s).powf(1.0 / self.alpha)
    }

    pub fn radius(&self, s: f64) -> Result<f64> {
        if !(0.0..=self.t).contains(&s) {
            return Err(Error::OutOfRange(format!("time {s} outside [0, {}]", self.t)));
        }
        Ok(self.radius_unchecked(s))
    }

    /// `r/(20N)`.
    pub fn base_radius(&self) -> f64 {
        self.r / (20.0 * self.n_big as f64)
    }

    /// Distance between centers minus the two radii; positive iff the discs are disjoint.
    pub fn separation(&self, p: TubeId, q: TubeId, s: f64) -> Result<f64> {
        self.check(p, s)?;
        self.check(q, s)?;
        Ok(self.separation_unchecked(p, q, s))
    }

    fn separation_unchecked(&self, p: TubeId, q: TubeId, s: f64) -> f64 {
        dist(self.center_unchecked(p, s), self.center_unchecked(q, s)) - 2.0 * self.radius_unchecked(s)
    }

    /// Bound on `sup |ω_s|` for paths confined to the centered cone: `3t^{1/α} + 1`.
    pub fn cone_excursion_bound(&self) -> f64 {
        3.0 * self.t.powf(1.0 / self.alpha) + 1.0
    }

    /// Largest distance of any tube point from the origin, used to size noise grids.
    pub fn max_extent(&self) -> f64 {
        let b = self.b_n();
        let n = self.n_big;
        let far = self.axial(n, 0.5 * self.t).max(self.axial(n, b));
        far + norm(self.a) + self.radius_unchecked(0.5 * self.t)
    }
}

/// Outcome of the disjointness certification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisjointnessReport {
    pub ok: bool,
    /// Certified lower bound on the pairwise margin (over all pairs and times);
    /// on failure, the most negative sampled margin.
    pub min_margin: f64,
    pub witness: Option<Witness>,
    pub pairs: usize,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub first: TubeId,
    pub second: TubeId,
    pub s: f64,
    pub margin: f64,
}

/// Sample times on `[0, t]`: a uniform grid merged with the center breakpoints.
fn sample_times(fam: &TubeFamily, resolution: usize) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..=resolution).map(|i| fam.t * i as f64 / resolution as f64).collect();
    ts.extend(fam.breakpoints());
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * fam.t);
    ts
}

/// Distance from the origin to the segment `[p, q]`.
fn segment_distance(p: Point, q: Point) -> f64 {
    let d = sub(q, p);
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return norm(p);
    }
    let lambda = (-(p[0] * d[0] + p[1] * d[1]) / len2).clamp(0.0, 1.0);
    norm(add(p, scale(d, lambda)))
}

const MAX_REFINE_DEPTH: u32 = 40;

/// Certifies that every pair of tubes keeps margin above `target` on `[s0, s1]`,
/// where both centers are affine. The center difference sweeps a segment, so its
/// smallest norm is the segment's distance to the origin; the radius is monotone
/// on each half of `[0, t]`, so its largest value sits at an endpoint. Intervals
/// whose bound is inconclusive are bisected.
fn certify_interval(
    fam: &TubeFamily,
    p: TubeId,
    q: TubeId,
    s0: f64,
    s1: f64,
    target: f64,
    depth: u32,
) -> std::result::Result<(f64, usize), Witness> {
    let d0 = sub(fam.center_unchecked(q, s0), fam.center_unchecked(p, s0));
    let d1 = sub(fam.center_unchecked(q, s1), fam.center_unchecked(p, s1));
    let rmax = fam.radius_unchecked(s0).max(fam.radius_unchecked(s1));
    let lower = segment_distance(d0, d1) - 2.0 * rmax;
    if lower > target {
        return Ok((lower, 1));
    }
    let m0 = norm(d0) - 2.0 * fam.radius_unchecked(s0);
    let m1 = norm(d1) - 2.0 * fam.radius_unchecked(s1);
    let (ms, mm) = if m0 <= m1 { (s0, m0) } else { (s1, m1) };
    if mm <= target || depth >= MAX_REFINE_DEPTH {
        return Err(Witness {
            first: p,
            second: q,
            s: ms,
            margin: mm,
        });
    }
    let mid = 0.5 * (s0 + s1);
    let (a, na) = certify_interval(fam, p, q, s0, mid, target, depth + 1)?;
    let (b, nb) = certify_interval(fam, p, q, mid, s1, target, depth + 1)?;
    Ok((a.min(b), na + nb))
}

/// Pairwise disjointness of all tubes of the family, certified between samples.
pub fn disjointness_check(fam: &TubeFamily, s_resolution: usize) -> Result<DisjointnessReport> {
    disjointness_check_with_target(fam, s_resolution, 0.0)
}

/// As [`disjointness_check`], requiring the certified margin to exceed `target`.
pub fn disjointness_check_with_target(fam: &TubeFamily, s_resolution: usize, target: f64) -> Result<DisjointnessReport> {
    fam.validate()?;
    if s_resolution < 1000 {
        return Err(config(format!("disjointness needs at least 1000 time samples, got {s_resolution}")));
    }
    let ts = sample_times(fam, s_resolution);
    let tubes = fam.tubes();
    let pairs: Vec<(TubeId, TubeId)> = tubes
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| tubes[i + 1..].iter().map(move |&q| (p, q)))
        .collect();
    let results: Vec<std::result::Result<(f64, usize), Witness>> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let mut best = f64::INFINITY;
            let mut count = 0;
            for w in ts.windows(2) {
                let (m, c) = certify_interval(fam, p, q, w[0], w[1], target, 0)?;
                best = best.min(m);
                count += c;
            }
            Ok((best, count))
        })
        .collect();
    let mut min_margin = f64::INFINITY;
    let mut intervals = 0;
    let mut witness: Option<Witness> = None;
    for r in results {
        match r {
            Ok((m, c)) => {
                min_margin = min_margin.min(m);
                intervals += c;
            }
            Err(w) => {
                if witness.is_none_or(|old| w.margin < old.margin) {
                    witness = Some(w);
                }
            }
        }
    }
    Ok(match witness {
        Some(w) => DisjointnessReport {
            ok: false,
            min_margin: w.margin,
            witness: Some(w),
            pairs: pairs.len(),
            intervals,
        },
        None => DisjointnessReport {
            ok: true,
            min_margin: if pairs.is_empty() { f64::INFINITY } else { min_margin },
            witness: None,
            pairs: pairs.len(),
            intervals,
        },
    })
}

/// Certified lower bound on the margin between two tubes over `[0, t]`; when
/// the tubes touch, the most negative sampled margin instead.
pub fn pair_margin(fam: &TubeFamily, p: TubeId, q: TubeId, s_resolution: usize) -> Result<f64> {
    fam.check(p, 0.0)?;
    fam.check(q, 0.0)?;
    let ts = sample_times(fam, s_resolution.max(1000));
    let mut best = f64::INFINITY;
    for w in ts.windows(2) {
        match certify_interval(fam, p, q, w[0], w[1], 0.0, 0) {
            Ok((m, _)) => best = best.min(m),
            Err(wit) => return Ok(wit.margin),
        }
    }
    Ok(best)
}

/// Smallest drift constant (to `1e−3` relative) for which the family is
/// certified disjoint with margin above `margin_target`.
pub fn min_drift_constant(
    n_big: usize,
    alpha: f64,
    r: f64,
    t: f64,
    a: Point,
    margin_target: f64,
    s_resolution: usize,
    cap: f64,
) -> Result<f64> {
    if !(margin_target >= 0.0) {
        return Err(domain("margin target must be nonnegative"));
    }
    let fam = TubeFamily::new(n_big, alpha, r, t, a, 0.0)?;
    let passes = |c: f64| -> Result<bool> { Ok(disjointness_check_with_target(&fam.with_drift(c), s_resolution, margin_target)?.ok) };
    if passes(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while !passes(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return Err(Error::Infeasible(format!(
                "no drift constant up to {cap} separates the family (N = {n_big}, α = {alpha}, r = {r}, t = {t})"
            )));
        }
    }
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Feasibility must be monotone at least across the final bracket.
    if passes(lo)? || !passes(hi)? {
        return Err(Error::Accuracy {
            achieved: lo,
            requested: hi,
            context: "drift feasibility is not monotone on the final bracket".into(),
        });
    }
    Ok(hi)
}

/// Drift of the tube center in the cone frame on the four pieces
/// `[0,b_N]`, `[b_N,t/2]`, `[t/2,t−b_N]`, `[t−b_N,t]`.
///
/// Paths `ω` in the centered cone are carried to the tube by
/// `h(s, ω) = center(s) + M ω` with `M` the tube rotation composed with the
/// reflection of the first axis; under the law of `ω` the transported path is
/// Brownian exactly when weighted by `E_n(ω) = Π exp(b_i·Δω_i − |b_i|²ℓ_i/2)`
/// with `b_i = −Mᵀ v_i` and `v_i` the center velocity on piece `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirsanovDrift {
    pub drifts: [Point; 4],
    pub lengths: [f64; 4],
    /// Columns of `M`: images of the unit vectors.
    pub frame: [Point; 2],
}

impl GirsanovDrift {
    pub fn for_tube(fam: &TubeFamily, id: TubeId) -> Self {
        let b = fam.b_n();
        let half = 0.5 * fam.t;
        let angle = fam.rotation_angle(id.1);
        let e1 = rotate([-1.0, 0.0], angle);
        let e2 = rotate([0.0, 1.0], angle);
        let mids = [0.5 * b, 0.5 * (b + half), 0.5 * (half + fam.t - b), fam.t - 0.5 * b];
        let drifts = mids.map(|s| {
            let v = fam.velocity(id, s);
            [-(e1[0] * v[0] + e1[1] * v[1]), -(e2[0] * v[0] + e2[1] * v[1])]
        });
        Self {
            drifts,
            lengths: [b, half - b, half - b, b],
            frame: [e1, e2],
        }
    }

    /// `h(s, ω) = center(s) + M ω`.
    #[inline]
    pub fn transport(&self, center: Point, omega: Point) -> Point {
        [
            center[0] + self.frame[0][0] * omega[0] + self.frame[1][0] * omega[1],
            center[1] + self.frame[0][1] * omega[0] + self.frame[1][1] * omega[1],
        ]
    }

    /// `log E_n` from the cone-path increments over the four pieces.
    pub fn log_weight(&self, increments: &[Point; 4]) -> f64 {
        (0..4)
            .map(|i| {
                let b = self.drifts[i];
                b[0] * increments[i][0] + b[1] * increments[i][1] - 0.5 * (b[0] * b[0] + b[1] * b[1]) * self.lengths[i]
            })
            .sum()
    }
}

/// `E_n(ω)` for ring `n` from first-coordinate increments of the cone path
/// over the four pieces: drifts `C n^α, 1, −1, −C n^α`.
pub fn girsanov_weight(fam: &TubeFamily, n: usize, increments: [f64; 4]) -> f64 {
    let b = fam.b_n();
    let c = fam.speed(n);
    let drifts = [c, 1.0, -1.0, -c];
    let lengths = [b, 0.5 * fam.t - b, 0.5 * fam.t - b, b];
    (0..4)
        .map(|i| drifts[i] * increments[i] - 0.5 * drifts[i] * drifts[i] * lengths[i])
        .sum::<f64>()
        .exp()
}

/// `E_n(ω)` for tube `(n, j)` from planar cone-path increments (general
/// rotation and tilt).
pub fn girsanov_weight_planar(fam: &TubeFamily, id: TubeId, increments: &[Point; 4]) -> f64 {
    GirsanovDrift::for_tube(fam, id).log_weight(increments).exp()
}

/// `exp(−(3/2) C² N^{α+1})`, the lower bound of `E_n` on confined paths.
pub fn girsanov_lower_bound(fam: &TubeFamily) -> f64 {
    (-1.5 * fam.c_drift * fam.c_drift * (fam.n_big as f64).powf(fam.alpha + 1.0)).exp()
}

/// One row of a separation profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationSample {
    pub first: TubeId,
    pub second: TubeId,
    pub s: f64,
    pub margin: f64,
}

/// Margins of every pair at `samples + 1` uniform times.
pub fn separation_profile(fam: &TubeFamily, samples: usize) -> Vec<SeparationSample> {
    let tubes = fam.tubes();
    let mut out = Vec::new();
    for (i, &p) in tubes.iter().enumerate() {
        for &q in &tubes[i + 1..] {
            for k in 0..=samples {
                let s = fam.t * k as f64 / samples as f64;
                out.push(SeparationSample {
                    first: p,
                    second: q,
                    s,
                    margin: fam.separation_unchecked(p, q, s),
                });
            }
        }
    }
    out
}

/// Disc envelope of one tube at one time (for plotting).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TubeSample {
    pub n: usize,
    pub j: usize,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

pub fn tube_samples(fam: &TubeFamily, samples: usize) -> Vec<TubeSample> {
    let mut out = Vec::new();
    for (n, j) in fam.tubes() {
        for k in 0..=samples {
            let s = fam.t * k as f64 / samples as f64;
            let c = fam.center_unchecked((n, j), s);
            out.push(TubeSample {
                n,
                j,
                s,
                x: c[0],
                y: c[1],
                radius: fam.radius_unchecked(s),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam(c: f64) -> TubeFamily {
        TubeFamily::new(16, 3.0, 1.0, 1.0, [0.0, 0.0], c).unwrap()
    }

    #[test]
    fn centers_and_radii() {
        let f = fam(2.0);
        for n in f.n_range() {
            let base = 4.0 * n as f64 / 80.0;
            assert_eq!(f.center((n, 0), 0.0).unwrap(), [base, 0.0]);
            let end = f.center((n, 0), 1.0).unwrap();
            assert!((end[0] - base).abs() < 1e-14 && end[1].abs() < 1e-14);
            let rot = f.center((n, 1), 0.0).unwrap();
            assert!((norm(rot) - base).abs() < 1e-14);
        }
        assert_eq!(f.radius(0.0).unwrap(), 1.0 / 320.0);
        assert!((f.radius(0.5).unwrap() - (1.0 / 320.0 + 1.0)).abs() < 1e-15);
        assert!((f.radius(0.3).unwrap() - f.radius(0.7).unwrap()).abs() < 1e-15);
        assert!(f.radius(1.5).is_err());
        assert!(f.center((3, 0), 0.1).is_err());
        // Continuity at the breakpoints.
        for &b in &f.breakpoints() {
            let l = f.center_unchecked((12, 0), b - 1e-12);
            let r = f.center_unchecked((12, 0), b + 1e-12);
            assert!(dist(l, r) < 3e-12 * f.speed(12).max(1.0));
        }
        assert!(TubeFamily::new(2, 2.0, 1.0, 1.0, [0.0, 0.0], 1.0).is_err());
        assert!(TubeFamily::new(2, 2.5, 1.0, 0.5, [0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn base_separations() {
        let f = fam(2.0);
        let m = f.separation((8, 0), (9, 0), 0.0).unwrap();
        assert!((m - (4.0 / 80.0 - 1.0 / 160.0)).abs() < 1e-14);
        assert!((f.separation((8, 0), (8, 0), 0.3).unwrap() + 2.0 * f.radius(0.3).unwrap()).abs() < 1e-14);
        let big = TubeFamily::new(30, 3.0, 1.0, 1.0, [0.0, 0.0], 1.0).unwrap();
        let n = 20;
        let chord = 2.0 * (4.0 * n as f64 / 150.0) * (10.0 * PI / 30.0).sin() - 1.0 / 300.0;
        assert!((big.separation((n, 0), (n, 1), 0.0).unwrap() - chord).abs() < 1e-14);
        assert!(chord > 0.0);
    }

    #[test]
    fn rotation_invariance() {
        let f = TubeFamily::new(45, 3.0, 1.0, 1.0, [0.0, 0.0], 1.0).unwrap();
        for &s in &[0.0, 0.01, 0.4, 0.9] {
            let a = f.separation((30, 0), (33, 1), s).unwrap();
            let b = f.separation((30, 1), (33, 2), s).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_increment_weight() {
        // Log space: at C = 2 the weights themselves underflow.
        let f = fam(2.0);
        for n in [8, 16] {
            let c = f.speed(n);
            let exact = -c * c * f.b_n() - (f.t - 2.0 * f.b_n()) / 2.0;
            for j in [0, 1] {
                let log_w = GirsanovDrift::for_tube(&f, (n, j)).log_weight(&[[0.0; 2]; 4]);
                assert!((log_w - exact).abs() <= 1e-12 * exact.abs(), "{log_w} vs {exact}");
            }
        }
        let f = fam(0.01);
        let c = f.speed(9);
        let exact = (-c * c * f.b_n() - (f.t - 2.0 * f.b_n()) / 2.0).exp();
        let w = girsanov_weight(&f, 9, [0.0; 4]);
        assert!(exact > 1e-3 && (w - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn scalar_and_planar_weights_agree_unrotated() {
        let f = fam(0.05);
        let inc = [0.01, -0.3, 0.2, 0.004];
        let planar = inc.map(|d| [d, 0.7]);
        let a = girsanov_weight(&f, 9, inc);
        let b = girsanov_weight_planar(&f, (9, 0), &planar);
        assert!(a > 0.0 && (a / b - 1.0).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn girsanov_drifts_unrotated() {
        let f = fam(2.0);
        let g = GirsanovDrift::for_tube(&f, (10, 0));
        let c = f.speed(10);
        let expect = [[c, 0.0], [1.0, 0.0], [-1.0, 0.0], [-c, 0.0]];
        for i in 0..4 {
            assert!((g.drifts[i][0] - expect[i][0]).abs() < 1e-9 * c.max(1.0));
            assert!(g.drifts[i][1].abs() < 1e-12 * c.max(1.0));
        }
    }

    #[test]
    fn drift_constant_separates_and_zero_drift_fails() {
        let base = TubeFamily::new(16, 3.0, 1.0, 1.0, [0.0, 0.0], 0.0).unwrap();
        let rep = disjointness_check(&base, 1000).unwrap();
        assert!(!rep.ok && rep.witness.is_some());
        let c = min_drift_constant(16, 3.0, 1.0, 1.0, [0.0, 0.0], 0.0, 1000, 1e4).unwrap();
        let ok = disjointness_check(&base.with_drift(c), 1000).unwrap();
        assert!(ok.ok && ok.min_margin > 0.0, "{ok:?}");
        assert!(!disjointness_check(&base.with_drift(0.99 * c), 1000).unwrap().ok);
        // Sampled margins never undercut the certificate.
        for row in separation_profile(&base.with_drift(c), 400) {
            assert!(row.margin >= ok.min_margin - 1e-12);
        }
        assert!(disjointness_check(&base, 999).is_err());
    }
}
