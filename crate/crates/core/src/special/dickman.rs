//! Marginal density of the Dickman subordinator.
//!
//! On `(0, 1]` the density is the closed form `s·t^{s−1}·e^{−γs}/Γ(s+1)`.
//! Beyond 1 it satisfies the delay equation
//!
//! ```text
//! f_s(t) = s·t^{s−1}·( e^{−γs}/Γ(s+1) − ∫₀^{t−1} f_s(a)(1+a)^{−s} da ),
//! ```
//!
//! which is solved by marching panels of width `w ≤ 1`. Every panel carries
//! the same sub-interval layout (geometrically graded toward its left end, a
//! Gauss-Legendre rule on each sub-interval), so a node `t` of panel `p` maps
//! to the node `t − 1` of panel `p − 1/w` and the cumulative integral is read
//! off directly. The reduced quantity `q_s(t) = f_s(t)/(s·t^{s−1})` is what is
//! stored and interpolated: it is bounded and continuous in `s`, including
//! the `s → 0` limit.

use serde::Serialize;

use super::gamma::{ein, ln_gamma, EULER_GAMMA};
use crate::error::{domain, Error, Result};
use crate::quadrature::{GaussLegendre, NeumaierSum};

#[derive(Debug, Clone, Copy)]
pub struct DickmanOptions {
    /// Marching panel width, clamped to `≤ 1` and rounded so `1/w` is an integer.
    pub panel_width: f64,
    /// Gauss-Legendre nodes per sub-interval.
    pub order: usize,
    /// Number of dyadic grading levels toward each panel's left end.
    pub grading_levels: u32,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for DickmanOptions {
    fn default() -> Self {
        Self {
            panel_width: 1.0,
            order: 16,
            grading_levels: 36,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
        }
    }
}

/// Tabulated `f_s(t)` on a set of subordinator times.
#[derive(Debug, Clone)]
pub struct DickmanGrid {
    s_values: Vec<f64>,
    t_max: f64,
    panel_width: f64,
    panels_per_unit: usize,
    panels: usize,
    /// Relative sub-interval boundaries within one panel, in [0, 1].
    rel_breaks: Vec<f64>,
    gl: GaussLegendre,
    bary: Vec<f64>,
    /// `q` values for panels `p ≥ panels_per_unit`, flattened as [panel][sub][node].
    q: Vec<Vec<f64>>,
    abs_tol: f64,
    rel_tol: f64,
    euler_gamma: f64,
}

/// Row of the exported `(s, t, f)` table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DickmanSample {
    pub s: f64,
    pub t: f64,
    pub f: f64,
}

/// `e^{−γs}/Γ(s+1)`.
#[inline]
pub fn dickman_constant(s: f64) -> f64 {
    (-EULER_GAMMA * s - ln_gamma(s + 1.0)).exp()
}

/// Closed form of `f_s(t)` valid on `t ∈ (0, 1]`; also a pointwise majorant for `t > 1`.
#[inline]
pub fn dickman_leading_term(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    (s.ln() + (s - 1.0) * t.ln() - EULER_GAMMA * s - ln_gamma(s + 1.0)).exp()
}

/// `∫₀^x s·c·a^{s−1}(1+a)^{−s} da` for tiny `x`, two terms of the binomial series.
#[inline]
fn first_panel_head_integral(s: f64, c: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    c * x.powf(s) * (1.0 - s * s * x / (s + 1.0))
}

/// Chernoff bound on `P(Y_s > t) = ∫_t^∞ f_s`, from the Laplace exponent
/// `s·∫₀¹ (e^{λx} − 1)/x dx` of the subordinator.
pub fn dickman_tail_bound(s: f64, t: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let h = |l: f64| -l * t + s * ein(l);
    // h is convex in λ; golden-section search on [0, 80].
    let (mut a, mut b) = (0.0f64, 80.0f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = h(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = h(x2);
        }
    }
    f1.min(f2).min(0.0).exp()
}

impl DickmanGrid {
    /// Marches the delay equation for every `s` in `s_values` up to `t_max`.
    pub fn build(s_values: &[f64], t_max: f64, opts: DickmanOptions) -> Result<Self> {
        if s_values.is_empty() {
            return Err(domain("Dickman grid needs at least one s value"));
        }
        if s_values.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(domain("Dickman grid s values must be finite and >= 0"));
        }
        if s_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("Dickman grid s values must be strictly ascending"));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(domain(format!("t_max must be positive, got {t_max}")));
        }
        if !(opts.panel_width > 0.0) || opts.order < 2 {
            return Err(domain("panel width must be positive and order >= 2"));
        }
        let panels_per_unit = (1.0 / opts.panel_width.min(1.0)).ceil() as usize;
        let panel_width = 1.0 / panels_per_unit as f64;
        let panels = ((t_max / panel_width).ceil() as usize).max(panels_per_unit);

        let levels = opts.grading_levels.max(1);
        let mut rel_breaks = vec![0.0];
        for k in (1..=levels).rev() {
            rel_breaks.push(0.5f64.powi(k as i32));
        }
        rel_breaks.push(1.0);

        let gl = GaussLegendre::new(opts.order);
        let bary = barycentric_weights(&gl.nodes);
        let int_matrix = integration_matrix(&gl, &bary);

        let mut grid = DickmanGrid {
            s_values: s_values.to_vec(),
            t_max,
            panel_width,
            panels_per_unit,
            panels,
            rel_breaks,
            gl,
            bary,
            q: Vec::with_capacity(s_values.len()),
            abs_tol: opts.abs_tol,
            rel_tol: opts.rel_tol,
            euler_gamma: EULER_GAMMA,
        };
        for &s in s_values {
            let q = grid.march(s, &int_matrix);
            grid.q.push(q);
        }
        grid.check_positivity()?;
        Ok(grid)
    }

    fn subs_per_panel(&self) -> usize {
        self.rel_breaks.len() - 1
    }

    fn nodes_per_panel(&self) -> usize {
        self.subs_per_panel() * self.gl.len()
    }

    /// Absolute position of node `i` of sub-interval `k` in panel `p`.
    fn node_position(&self, p: usize, k: usize, i: usize) -> f64 {
        let start = p as f64 * self.panel_width;
        let a = start + self.rel_breaks[k] * self.panel_width;
        let b = start + self.rel_breaks[k + 1] * self.panel_width;
        0.5 * (a + b) + 0.5 * (b - a) * self.gl.nodes[i]
    }

    fn march(&self, s: f64, int_matrix: &[Vec<f64>]) -> Vec<f64> {
        let m = self.panels_per_unit;
        let n_order = self.gl.len();
        let per_panel = self.nodes_per_panel();
        let c = dickman_constant(s);
        let stored_panels = self.panels - m;
        let integral_panels = stored_panels; // I(a) needed for a ≤ t_max − 1
        let mut q = vec![0.0; stored_panels * per_panel];
        let mut cum = vec![0.0; integral_panels * per_panel];
        let mut running = 0.0;
        let mut g = vec![0.0; n_order];
        for p in 0..self.panels {
            if p >= m {
                let dst = (p - m) * per_panel;
                let src = (p - m) * per_panel;
                for idx in 0..per_panel {
                    q[dst + idx] = c - cum[src + idx];
                }
            }
            if p >= integral_panels {
                continue;
            }
            for k in 0..self.subs_per_panel() {
                let start = p as f64 * self.panel_width;
                let a = start + self.rel_breaks[k] * self.panel_width;
                let b = start + self.rel_breaks[k + 1] * self.panel_width;
                let half = 0.5 * (b - a);
                let base = p * per_panel + k * n_order;
                if p == 0 && k == 0 {
                    // a^{s−1} endpoint singularity: integrate the head analytically.
                    for i in 0..n_order {
                        let x = self.node_position(0, 0, i);
                        cum[base + i] = first_panel_head_integral(s, c, x);
                    }
                    running = first_panel_head_integral(s, c, b);
                    continue;
                }
                for (i, gi) in g.iter_mut().enumerate() {
                    let x = self.node_position(p, k, i);
                    let f = if p < m {
                        dickman_leading_term(s, x)
                    } else {
                        let qv = q[(p - m) * per_panel + k * n_order + i];
                        if s == 0.0 {
                            0.0
                        } else {
                            s * x.powf(s - 1.0) * qv
                        }
                    };
                    *gi = f * (1.0 + x).powf(-s);
                }
                for i in 0..n_order {
                    let mut acc = NeumaierSum::new();
                    for (j, gj) in g.iter().enumerate() {
                        acc.add(int_matrix[i][j] * gj);
                    }
                    cum[base + i] = running + half * acc.value();
                }
                let full: f64 = self
                    .gl
                    .weights
                    .iter()
                    .zip(&g)
                    .map(|(w, gj)| w * gj)
                    .collect::<NeumaierSum>()
                    .value();
                running += half * full;
            }
        }
        q
    }

    fn check_positivity(&self) -> Result<()> {
        let per_panel = self.nodes_per_panel();
        let n_order = self.gl.len();
        for (si, &s) in self.s_values.iter().enumerate() {
            for (idx, &qv) in self.q[si].iter().enumerate() {
                let p = idx / per_panel + self.panels_per_unit;
                let k = (idx % per_panel) / n_order;
                let i = idx % n_order;
                let t = self.node_position(p, k, i);
                let f = if s == 0.0 { 0.0 } else { s * t.powf(s - 1.0) * qv };
                if f < -self.abs_tol {
                    return Err(Error::Accuracy {
                        achieved: -f,
                        requested: self.abs_tol,
                        context: format!("negative Dickman density f_{s}({t}) = {f:.3e} during marching"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn panel_width(&self) -> f64 {
        self.panel_width
    }

    pub fn abs_tol(&self) -> f64 {
        self.abs_tol
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn euler_gamma(&self) -> f64 {
        self.euler_gamma
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s_values[0], *self.s_values.last().expect("non-empty"))
    }

    fn locate(&self, t: f64) -> (usize, usize, f64) {
        let p = ((t / self.panel_width).floor() as usize).min(self.panels - 1);
        let rel = ((t - p as f64 * self.panel_width) / self.panel_width).clamp(0.0, 1.0);
        let k = match self
            .rel_breaks
            .binary_search_by(|b| b.partial_cmp(&rel).expect("finite"))
        {
            Ok(k) => k.min(self.subs_per_panel() - 1),
            Err(k) => k - 1,
        };
        let a = self.rel_breaks[k];
        let b = self.rel_breaks[k + 1];
        let x = (2.0 * (rel - a) / (b - a) - 1.0).clamp(-1.0, 1.0);
        (p, k, x)
    }

    /// `q_s(t)` at a tabulated `s` for `t > 1`.
    fn reduced_at_node(&self, si: usize, t: f64) -> f64 {
        let (p, k, x) = self.locate(t);
        let per_panel = self.nodes_per_panel();
        let n_order = self.gl.len();
        let off = (p - self.panels_per_unit) * per_panel + k * n_order;
        barycentric_eval(&self.gl.nodes, &self.bary, &self.q[si][off..off + n_order], x)
    }

    fn check_query(&self, s: f64, t: f64) -> Result<()> {
        if !(s >= 0.0) {
            return Err(domain(format!("Dickman density needs s >= 0, got {s}")));
        }
        if !(t > 0.0) {
            return Err(domain(format!("Dickman density needs t > 0, got {t}")));
        }
        if t > self.t_max {
            return Err(Error::OutOfRange(format!("t = {t} exceeds grid t_max = {}", self.t_max)));
        }
        Ok(())
    }

    /// `f_s(t)`. Between tabulated `s` values the reduced density is
    /// interpolated with a four-point (cubic) Lagrange stencil.
    pub fn density(&self, s: f64, t: f64) -> Result<f64> {
        self.check_query(s, t)?;
        if t <= 1.0 {
            return Ok(dickman_leading_term(s, t));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let (lo, hi) = self.s_range();
        if s < lo || s > hi {
            return Err(Error::OutOfRange(format!("s = {s} outside grid coverage [{lo}, {hi}]")));
        }
        let q = match self
            .s_values
            .binary_search_by(|v| v.partial_cmp(&s).expect("finite"))
        {
            Ok(i) => self.reduced_at_node(i, t),
            Err(i) => {
                let n = self.s_values.len();
                let width = n.min(4);
                let start = (i as isize - 2).clamp(0, (n - width) as isize) as usize;
                let idx: Vec<usize> = (start..start + width).collect();
                let mut acc = 0.0;
                for &a in &idx {
                    let mut l = 1.0;
                    for &b in &idx {
                        if a != b {
                            l *= (s - self.s_values[b]) / (self.s_values[a] - self.s_values[b]);
                        }
                    }
                    acc += l * self.reduced_at_node(a, t);
                }
                acc
            }
        };
        Ok(s * t.powf(s - 1.0) * q)
    }

    /// `f_s(t)` at the `i`-th tabulated `s`.
    pub fn density_at(&self, s_index: usize, t: f64) -> Result<f64> {
        let s = *self
            .s_values
            .get(s_index)
            .ok_or_else(|| Error::OutOfRange(format!("s index {s_index}")))?;
        self.check_query(s, t)?;
        if t <= 1.0 {
            return Ok(dickman_leading_term(s, t));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(s * t.powf(s - 1.0) * self.reduced_at_node(s_index, t))
    }

    /// `∫₀^{t_max} t^k f_s(t) dt` for `k ∈ {0, 1}` at the `i`-th tabulated `s`,
    /// using the marching nodes themselves as the quadrature rule.
    pub fn moment_on_grid(&self, s_index: usize, k: i32) -> f64 {
        let s = self.s_values[s_index];
        if s == 0.0 {
            return 0.0;
        }
        let c = dickman_constant(s);
        let mut acc = NeumaierSum::new();
        // ∫₀¹ t^k s c t^{s−1} dt
        acc.add(s * c / (s + k as f64));
        let per_panel = self.nodes_per_panel();
        let n_order = self.gl.len();
        for p in self.panels_per_unit..self.panels {
            for kk in 0..self.subs_per_panel() {
                let start = p as f64 * self.panel_width;
                let a = start + self.rel_breaks[kk] * self.panel_width;
                let b = start + self.rel_breaks[kk + 1] * self.panel_width;
                let half = 0.5 * (b - a);
                for i in 0..n_order {
                    let t = self.node_position(p, kk, i);
                    if t > self.t_max {
                        continue;
                    }
                    let qv = self.q[s_index][(p - self.panels_per_unit) * per_panel + kk * n_order + i];
                    acc.add(half * self.gl.weights[i] * t.powi(k) * s * t.powf(s - 1.0) * qv);
                }
            }
        }
        acc.value()
    }

    /// Total mass of `f_s` on `(0, t_max]` plus the certified tail bound beyond.
    pub fn normalization(&self, s_index: usize) -> (f64, f64) {
        let covered = self.panels as f64 * self.panel_width;
        let s = self.s_values[s_index];
        (self.moment_on_grid(s_index, 0), dickman_tail_bound(s, covered))
    }

    /// Samples `(s, t, f)` for export on a uniform `t` grid.
    pub fn table(&self, t_step: f64) -> Result<Vec<DickmanSample>> {
        if !(t_step > 0.0) {
            return Err(domain("t_step must be positive"));
        }
        let n = (self.t_max / t_step).floor() as usize;
        let mut out = Vec::with_capacity(n * self.s_values.len());
        for (si, &s) in self.s_values.iter().enumerate() {
            for i in 1..=n {
                let t = i as f64 * t_step;
                out.push(DickmanSample {
                    s,
                    t,
                    f: self.density_at(si, t)?,
                });
            }
        }
        Ok(out)
    }
}

fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            let prod: f64 = (0..nodes.len())
                .filter(|&k| k != j)
                .map(|k| nodes[j] - nodes[k])
                .product();
            1.0 / prod
        })
        .collect()
}

fn barycentric_eval(nodes: &[f64], w: &[f64], values: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let d = x - nodes[j];
        if d == 0.0 {
            return values[j];
        }
        let c = w[j] / d;
        num += c * values[j];
        den += c;
    }
    num / den
}

fn lagrange_basis(nodes: &[f64], w: &[f64], j: usize, x: f64) -> f64 {
    let mut den = 0.0;
    for k in 0..nodes.len() {
        let d = x - nodes[k];
        if d == 0.0 {
            return if k == j { 1.0 } else { 0.0 };
        }
        den += w[k] / d;
    }
    (w[j] / (x - nodes[j])) / den
}

/// `W[i][j] = ∫_{−1}^{x_i} ℓ_j(x) dx` for the Lagrange basis on the GL nodes.
fn integration_matrix(gl: &GaussLegendre, bary: &[f64]) -> Vec<Vec<f64>> {
    let n = gl.len();
    (0..n)
        .map(|i| {
            let upper = gl.nodes[i];
            (0..n)
                .map(|j| gl.integrate(-1.0, upper, |x| lagrange_basis(&gl.nodes, bary, j, x)))
                .collect()
        })
        .collect()
}
