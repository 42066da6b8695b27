//! Mollified space-time white noise, discretized into independent time slabs
//! on a square lattice, and the critical coupling constant.

use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::plane::{norm, Point};
use crate::quadrature::{integrate, AdaptiveOptions, GaussLegendre};
use crate::rng::{counter_normal, noise_key};

/// `β = sqrt(2π/L + ρ/L²)` with `L = −log ε` and `ρ = πθ + rho_offset`.
pub fn coupling_beta(theta: f64, epsilon: f64, rho_offset: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain(format!("ε must lie in (0,1), got {epsilon}")));
    }
    let l = -epsilon.ln();
    let rho = std::f64::consts::PI * theta + rho_offset;
    let radicand = 2.0 * std::f64::consts::PI / l + rho / (l * l);
    if !(radicand > 0.0) {
        return Err(domain(format!(
            "coupling radicand {radicand:e} is not positive at ε = {epsilon} (ρ = {rho})"
        )));
    }
    Ok(radicand.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MollifierKind {
    /// `exp(−1/(1−|x|²))` on the unit disc, normalized.
    #[default]
    Bump,
}

/// Unit-scale radial tables shared by every `ε`.
#[derive(Debug)]
struct UnitBump {
    norm: f64,
    /// `∫ j²`.
    int_j2: f64,
    /// `J₁(d) = (j∗j)(d)` sampled on `[0, 2]`.
    conv: Vec<f64>,
}

const CONV_POINTS: usize = 1025;

fn raw_bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

fn unit_bump() -> &'static UnitBump {
    static CELL: OnceLock<UnitBump> = OnceLock::new();
    CELL.get_or_init(|| {
        let tau = std::f64::consts::TAU;
        let opts = AdaptiveOptions::new(1e-16, 1e-13);
        let norm = tau * integrate(|r| r * raw_bump(r * r), 0.0, 1.0, opts).expect("bump normalization").value;
        let j = |r2: f64| raw_bump(r2) / norm;
        let int_j2 = tau * integrate(|r| r * j(r * r).powi(2), 0.0, 1.0, opts).expect("∫j²").value;
        // J₁(d) = 2∫₀¹ r j(r) ∫₀^π j(r² + d² − 2rd cos φ) dφ dr, composite Gauss-Legendre.
        let gl = GaussLegendre::new(24);
        let panels = 8;
        let nodes = |a: f64, b: f64| -> Vec<(f64, f64)> {
            (0..panels)
                .flat_map(|p| {
                    let w = (b - a) / panels as f64;
                    gl.mapped(a + p as f64 * w, a + (p + 1) as f64 * w).collect::<Vec<_>>()
                })
                .collect()
        };
        let rs = nodes(0.0, 1.0);
        let phis = nodes(0.0, std::f64::consts::PI);
        let conv = (0..CONV_POINTS)
            .into_par_iter()
            .map(|k| {
                let d = 2.0 * k as f64 / (CONV_POINTS - 1) as f64;
                let mut acc = 0.0;
                for &(r, wr) in &rs {
                    let jr = j(r * r);
                    let inner: f64 = phis.iter().map(|&(p, wp)| wp * j(r * r + d * d - 2.0 * r * d * p.cos())).sum();
                    acc += wr * r * jr * inner;
                }
                2.0 * acc
            })
            .collect();
        UnitBump { norm, int_j2, conv }
    })
}

/// Radially symmetric mollifier `j_ε(x) = ε^{−2} j(x/ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    #[serde(default)]
    pub kind: MollifierKind,
    pub epsilon: f64,
}

impl MollifierSpec {
    pub fn bump(epsilon: f64) -> Result<Self> {
        let m = Self {
            kind: MollifierKind::Bump,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(domain(format!("mollifier scale must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Unit-scale density at `|x| = r`.
    pub fn unit_density(&self, r: f64) -> f64 {
        raw_bump(r * r) / unit_bump().norm
    }

    /// `j_ε(x)`.
    pub fn density(&self, x: Point) -> f64 {
        let e = self.epsilon;
        self.unit_density(norm(x) / e) / (e * e)
    }

    /// `∫ j²` at unit scale.
    pub fn unit_square_integral(&self) -> f64 {
        unit_bump().int_j2
    }

    /// `J_ε(0) = ε^{−2} ∫ j²`.
    pub fn j_at_zero(&self) -> f64 {
        self.unit_square_integral() / (self.epsilon * self.epsilon)
    }

    /// Support radius of `j_ε`.
    pub fn support(&self) -> f64 {
        self.epsilon
    }
}

/// `J_ε(z) = (j_ε ∗ j_ε)(z)` from the radial table (cubic interpolation);
/// exactly zero for `|z| ≥ 2ε`.
pub fn convolved_mollifier(spec: &MollifierSpec, displacement: Point) -> f64 {
    let e = spec.epsilon;
    let d = norm(displacement) / e;
    if d >= 2.0 {
        return 0.0;
    }
    let tab = &unit_bump().conv;
    let step = 2.0 / (CONV_POINTS - 1) as f64;
    let pos = d / step;
    let i = (pos.floor() as usize).clamp(1, CONV_POINTS - 3);
    let x = pos - i as f64;
    // Four-point Lagrange on nodes i−1..i+2; by symmetry the table extends evenly below 0.
    let at = |k: isize| tab[k.unsigned_abs()];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    let v = -x * (x - 1.0) * (x - 2.0) / 6.0 * p0 + (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0 * p1
        - (x + 1.0) * x * (x - 2.0) / 2.0 * p2
        + (x + 1.0) * x * (x - 1.0) / 6.0 * p3;
    v.max(0.0) / (e * e)
}

/// Spatial lattice `{(i h, j h) : |i|, |j| ≤ m}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lattice spacing.
    pub h: f64,
    /// Side length `L`; the lattice covers `[−L/2, L/2]²` (rounded up to whole cells).
    #[serde(rename = "L")]
    pub side: f64,
}

/// Per-unit-time covariances between the lattice values at node offsets
/// (0,0), (1,0), (0,1), (1,1), (1,−1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeCovariance {
    pub c00: f64,
    pub c10: f64,
    pub c01: f64,
    pub c11: f64,
    pub c1m1: f64,
}

#[derive(Debug)]
struct Kernel {
    /// `(a, b, κ)` with `κ = h·j_ε((a,b)h)`.
    taps: Vec<(i64, i64, f64)>,
    cov: NodeCovariance,
}

impl Kernel {
    fn build(spec: &MollifierSpec, h: f64) -> Self {
        let reach = (spec.support() / h).ceil() as i64;
        let mut taps = Vec::new();
        for a in -reach..=reach {
            for b in -reach..=reach {
                let k = h * spec.density([a as f64 * h, b as f64 * h]);
                if k > 0.0 {
                    taps.push((a, b, k));
                }
            }
        }
        let lookup: std::collections::HashMap<(i64, i64), f64> = taps.iter().map(|&(a, b, k)| ((a, b), k)).collect();
        let c = |da: i64, db: i64| -> f64 {
            taps.iter()
                .map(|&(a, b, k)| k * lookup.get(&(a + da, b + db)).copied().unwrap_or(0.0))
                .sum()
        };
        let cov = NodeCovariance {
            c00: c(0, 0),
            c10: c(1, 0),
            c01: c(0, 1),
            c11: c(1, 1),
            c1m1: c(1, -1),
        };
        Self { taps, cov }
    }
}

/// Independent Gaussian slabs `W_k(x) ≈ ∫_{k dt}^{(k+1) dt} Ẇ^ε(s, x) ds` on a lattice.
///
/// Lattice values are `√dt Σ_{a,b} κ(a,b) η_k(i−a, j−b)` with i.i.d. standard
/// normals `η_k` indexed by integer sites, so their covariance is
/// `dt·Σ κ(d)κ(d+Δ) ≈ dt·J_ε(Δh)`. Values are generated on demand from the
/// counter-based hash (or read from a materialized copy) and interpolated
/// bilinearly in between.
#[derive(Debug, Clone)]
pub struct NoiseSlabStack {
    mollifier: MollifierSpec,
    h: f64,
    m: i64,
    dt: f64,
    slabs: usize,
    seed: u64,
    kernel: Arc<Kernel>,
    materialized: Option<Arc<Vec<f64>>>,
}

/// Builds a slab stack after validating the geometry.
pub fn sample_slabs(grid: GridSpec, t: f64, dt: f64, spec: MollifierSpec, seed: u64) -> Result<NoiseSlabStack> {
    NoiseSlabStack::new(grid, t, dt, spec, seed)
}

impl NoiseSlabStack {
    pub fn new(grid: GridSpec, t: f64, dt: f64, spec: MollifierSpec, seed: u64) -> Result<Self> {
        spec.validate().map_err(|e| config(e.to_string()))?;
        let eps = spec.epsilon;
        if !(grid.h > 0.0) || grid.h > eps / 4.0 * (1.0 + 1e-12) {
            return Err(config(format!("grid spacing h = {} must satisfy 0 < h <= ε/4 = {}", grid.h, eps / 4.0)));
        }
        if !(grid.side > 4.0 * eps) || !grid.side.is_finite() {
            return Err(config(format!("grid side L = {} must exceed 4ε = {}", grid.side, 4.0 * eps)));
        }
        if !(t > 0.0) || !(dt > 0.0) {
            return Err(config(format!("need t > 0 and dt > 0, got t = {t}, dt = {dt}")));
        }
        let ratio = t / dt;
        let slabs = ratio.round();
        if (ratio - slabs).abs() > 1e-9 * ratio.max(1.0) || slabs < 1.0 {
            return Err(config(format!("dt = {dt} does not divide t = {t}")));
        }
        let m = (0.5 * grid.side / grid.h).ceil() as i64;
        Ok(Self {
            mollifier: spec,
            h: grid.h,
            m,
            dt,
            slabs: slabs as usize,
            seed,
            kernel: Arc::new(Kernel::build(&spec, grid.h)),
            materialized: None,
        })
    }

    /// Same geometry and kernel, different noise realization.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            seed,
            materialized: None,
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn slab_count(&self) -> usize {
        self.slabs
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn mollifier(&self) -> &MollifierSpec {
        &self.mollifier
    }
    /// Fields are defined on `[−half_extent, half_extent]²`.
    pub fn half_extent(&self) -> f64 {
        self.m as f64 * self.h
    }
    /// Lattice points per side.
    pub fn side_nodes(&self) -> usize {
        (2 * self.m + 1) as usize
    }
    pub fn node_covariance(&self) -> NodeCovariance {
        self.kernel.cov
    }
    pub fn tap_count(&self) -> usize {
        self.kernel.taps.len()
    }

    fn check_slab(&self, slab: usize) -> Result<()> {
        if slab >= self.slabs {
            return Err(Error::OutOfRange(format!("slab {slab} of {}", self.slabs)));
        }
        Ok(())
    }

    fn node_lazy(&self, slab: usize, i: i64, j: i64) -> f64 {
        let s = slab as u64;
        let acc: f64 = self
            .kernel
            .taps
            .iter()
            .map(|&(a, b, k)| k * counter_normal(noise_key(self.seed, s, i - a, j - b)))
            .sum();
        self.dt.sqrt() * acc
    }

    #[inline]
    fn node_unchecked(&self, slab: usize, i: i64, j: i64) -> f64 {
        match &self.materialized {
            Some(v) => {
                let n = self.side_nodes();
                v[slab * n * n + (j + self.m) as usize * n + (i + self.m) as usize]
            }
            None => self.node_lazy(slab, i, j),
        }
    }

    /// Lattice value at node `(i, j)` (position `(i h, j h)`).
    pub fn node_value(&self, slab: usize, i: i64, j: i64) -> Result<f64> {
        self.check_slab(slab)?;
        if i.abs() > self.m || j.abs() > self.m {
            return Err(Error::OutOfRange(format!("node ({i}, {j}) outside ±{}", self.m)));
        }
        Ok(self.node_unchecked(slab, i, j))
    }

    /// Cell of `x` and the bilinear fractions, or `None` outside the extent.
    #[inline]
    fn locate(&self, x: Point) -> Option<(i64, i64, f64, f64)> {
        let ext = self.half_extent();
        if !(x[0].abs() <= ext && x[1].abs() <= ext) {
            return None;
        }
        let gx = x[0] / self.h + self.m as f64;
        let gy = x[1] / self.h + self.m as f64;
        let top = 2 * self.m - 1;
        let ix = (gx.floor() as i64).clamp(0, top);
        let iy = (gy.floor() as i64).clamp(0, top);
        Some((ix - self.m, iy - self.m, gx - ix as f64, gy - iy as f64))
    }

    /// Bilinear interpolation of slab `slab` at `x`; errors outside the extent.
    pub fn field_at(&self, slab: usize, x: Point) -> Result<f64> {
        self.check_slab(slab)?;
        self.field_and_rate(slab, x)
            .map(|(v, _)| v)
            .ok_or_else(|| Error::OutOfRange(format!("point ({}, {}) outside the noise extent ±{}", x[0], x[1], self.half_extent())))
    }

    /// Field value and its exact variance rate `J_eff(x)` (variance per unit time)
    /// under the discrete model; `None` outside the extent.
    #[inline]
    pub fn field_and_rate(&self, slab: usize, x: Point) -> Option<(f64, f64)> {
        let (i, j, fx, fy) = self.locate(x)?;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let v = w00 * self.node_unchecked(slab, i, j)
            + w10 * self.node_unchecked(slab, i + 1, j)
            + w01 * self.node_unchecked(slab, i, j + 1)
            + w11 * self.node_unchecked(slab, i + 1, j + 1);
        Some((v, self.rate_from_weights(w00, w10, w01, w11)))
    }

    fn rate_from_weights(&self, w00: f64, w10: f64, w01: f64, w11: f64) -> f64 {
        let c = &self.kernel.cov;
        c.c00 * (w00 * w00 + w10 * w10 + w01 * w01 + w11 * w11)
            + 2.0 * c.c10 * (w00 * w10 + w01 * w11)
            + 2.0 * c.c01 * (w00 * w01 + w10 * w11)
            + 2.0 * c.c11 * (w00 * w11)
            + 2.0 * c.c1m1 * (w10 * w01)
    }

    /// `J_eff(x)`: variance per unit time of the interpolated field at `x`.
    pub fn variance_rate(&self, x: Point) -> Result<f64> {
        let (_, _, fx, fy) = self
            .locate(x)
            .ok_or_else(|| Error::OutOfRange(format!("point ({}, {}) outside the noise extent", x[0], x[1])))?;
        Ok(self.rate_from_weights((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy))
    }

    /// Computes and stores every lattice value (parallel over slabs).
    pub fn materialize(&mut self) {
        if self.materialized.is_some() {
            return;
        }
        let n = self.side_nodes();
        let m = self.m;
        let this = &*self;
        let data: Vec<f64> = (0..self.slabs)
            .into_par_iter()
            .flat_map_iter(|k| {
                (0..n).flat_map(move |row| (0..n).map(move |col| this.node_lazy(k, col as i64 - m, row as i64 - m)))
            })
            .collect();
        self.materialized = Some(Arc::new(data));
    }

    pub fn is_materialized(&self) -> bool {
        self.materialized.is_some()
    }

    /// Binary dump: magic, header (ε, h, L, dt, seed, slab count, side nodes) in
    /// little endian, then row-major `f32` lattice values slab by slab.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Config(format!("noise dump: {e}"));
        w.write_all(DUMP_MAGIC).map_err(io)?;
        for v in [self.mollifier.epsilon, self.h, 2.0 * self.half_extent(), self.dt] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in [self.seed, self.slabs as u64, self.side_nodes() as u64] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        let n = self.side_nodes() as i64;
        for k in 0..self.slabs {
            for row in 0..n {
                for col in 0..n {
                    let v = self.node_unchecked(k, col - self.m, row - self.m) as f32;
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        Ok(())
    }

    /// Reads a dump back as a materialized stack (values rounded to `f32`).
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Config(format!("noise dump: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != DUMP_MAGIC {
            return Err(config("not a noise dump"));
        }
        let mut b8 = [0u8; 8];
        let mut f = || -> Result<f64> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(f64::from_le_bytes(b8))
        };
        let (eps, h, side, dt) = (f()?, f()?, f()?, f()?);
        let mut u = || -> Result<u64> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let (seed, slabs, n) = (u()?, u()?, u()?);
        let mut stack = Self::new(GridSpec { h, side }, dt * slabs as f64, dt, MollifierSpec::bump(eps)?, seed)?;
        if stack.side_nodes() as u64 != n {
            return Err(config("noise dump lattice size mismatch"));
        }
        let count = (slabs * n * n) as usize;
        let mut data = Vec::with_capacity(count);
        let mut b4 = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(io)?;
            data.push(f32::from_le_bytes(b4) as f64);
        }
        stack.materialized = Some(Arc::new(data));
        Ok(stack)
    }
}

const DUMP_MAGIC: &[u8; 8] = b"SHFNOISE";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_values() {
        let e1 = (-1f64).exp();
        assert!((coupling_beta(0.0, e1, 0.0).unwrap() - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
        let e100 = (-100f64).exp();
        assert!((coupling_beta(0.0, e100, 0.0).unwrap() - (2.0 * std::f64::consts::PI / 100.0).sqrt()).abs() < 1e-14);
        assert!(coupling_beta(1.0, e1, 0.0).unwrap() > coupling_beta(0.0, e1, 0.0).unwrap());
        let err = coupling_beta(-10.0, 0.5, 0.0).unwrap_err();
        assert!(err.to_string().contains("0.5"));
        assert!(coupling_beta(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bump_is_normalized() {
        // Independent rule: composite Gauss-Legendre at two resolutions.
        let spec = MollifierSpec::bump(0.3).unwrap();
        let gl = GaussLegendre::new(40);
        let total = |panels: usize| -> f64 {
            (0..panels)
                .map(|p| {
                    let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
                    gl.integrate(a, b, |r| std::f64::consts::TAU * r * spec.unit_density(r))
                })
                .sum()
        };
        assert!((total(16) - 1.0).abs() < 1e-10);
        assert!((total(32) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn convolution_table() {
        let spec = MollifierSpec::bump(0.2).unwrap();
        assert_eq!(convolved_mollifier(&spec, [0.6, 0.0]), 0.0);
        assert_eq!(convolved_mollifier(&spec, [0.0, 0.4]), 0.0);
        let z = [0.05, -0.11];
        assert_eq!(convolved_mollifier(&spec, z), convolved_mollifier(&spec, [-z[0], -z[1]]));
        let j0 = convolved_mollifier(&spec, [0.0, 0.0]);
        assert!((j0 - spec.j_at_zero()).abs() < 1e-9 * j0, "{j0} {}", spec.j_at_zero());
        // Total mass of J is 1.
        let gl = GaussLegendre::new(40);
        let mass: f64 = (0..20)
            .map(|p| {
                let (a, b) = (p as f64 * 0.02, (p + 1) as f64 * 0.02);
                gl.integrate(a, b, |r| std::f64::consts::TAU * r * convolved_mollifier(&spec, [r, 0.0]))
            })
            .sum();
        assert!((mass - 1.0).abs() < 1e-7, "{mass}");
    }

    #[test]
    fn interpolation_contract() {
        let spec = MollifierSpec::bump(0.2).unwrap();
        let s = sample_slabs(GridSpec { h: 0.05, side: 2.0 }, 1.0, 0.5, spec, 3).unwrap();
        let node = s.node_value(1, 2, -3).unwrap();
        assert_eq!(s.field_at(1, [0.1, -0.15]).unwrap(), node);
        let corners = [
            s.node_value(0, 2, 2).unwrap(),
            s.node_value(0, 3, 2).unwrap(),
            s.node_value(0, 2, 3).unwrap(),
            s.node_value(0, 3, 3).unwrap(),
        ];
        let mid = s.field_at(0, [0.125, 0.125]).unwrap();
        assert!((mid - corners.iter().sum::<f64>() / 4.0).abs() < 1e-14);
        assert!(s.field_at(0, [1.2, 0.0]).is_err());
        assert!(s.field_at(2, [0.0, 0.0]).is_err());
    }

    #[test]
    fn geometry_is_validated() {
        let spec = MollifierSpec::bump(0.2).unwrap();
        assert!(sample_slabs(GridSpec { h: 0.06, side: 2.0 }, 1.0, 0.5, spec, 3).is_err());
        assert!(sample_slabs(GridSpec { h: 0.05, side: 2.0 }, 1.0, 0.3, spec, 3).is_err());
        assert!(sample_slabs(GridSpec { h: 0.05, side: 0.5 }, 1.0, 0.5, spec, 3).is_err());
    }

    #[test]
    fn materialized_matches_lazy_and_dump_roundtrips() {
        let spec = MollifierSpec::bump(0.2).unwrap();
        let lazy = sample_slabs(GridSpec { h: 0.05, side: 1.0 }, 0.4, 0.2, spec, 11).unwrap();
        let mut mat = lazy.clone();
        mat.materialize();
        for &(i, j) in &[(0, 0), (-10, 10), (3, -7)] {
            assert_eq!(lazy.node_value(1, i, j).unwrap(), mat.node_value(1, i, j).unwrap());
        }
        let mut buf = Vec::new();
        mat.write_dump(&mut buf).unwrap();
        let back = NoiseSlabStack::read_dump(buf.as_slice()).unwrap();
        let a = mat.field_at(0, [0.13, -0.27]).unwrap();
        let b = back.field_at(0, [0.13, -0.27]).unwrap();
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn discrete_rate_matches_continuum() {
        let spec = MollifierSpec::bump(0.2).unwrap();
        let rel = |h: f64| {
            let s = sample_slabs(GridSpec { h, side: 2.0 }, 1.0, 0.5, spec, 3).unwrap();
            let c = s.node_covariance();
            assert_eq!(c.c10, c.c01);
            assert!((c.c11 - c.c1m1).abs() < 1e-12 * c.c11);
            let jh = convolved_mollifier(&spec, [h, 0.0]);
            assert!((c.c10 - jh).abs() < 1e-2 * jh);
            (c.c00 - spec.j_at_zero()).abs() / spec.j_at_zero()
        };
        let (coarse, fine) = (rel(0.05), rel(0.025));
        assert!(coarse < 1e-2 && fine < coarse, "{coarse} {fine}");
    }
}
