//! Periodic convex Hamiltonians of the form `H(x, p) = |p|^2 - V(x)`.
//!
//! A [`HamiltonianSpec`] stores the *original* potential together with a
//! normalization shift `a`. The working Hamiltonian used everywhere in the
//! pipeline is `|p|^2 - (V(x) - a)`; solutions of the original Cauchy
//! problem are recovered by adding `t * a` to working solutions. After
//! [`normalize`], the working potential satisfies `V - a >= 1`, so
//! `H(x, 0) <= -1` and the Lagrangian is bounded below by one.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{domain, Result};

/// One term `amplitude * cos(2 pi k . x)` of a cosine series.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineTerm {
    pub amplitude: f64,
    pub wave: Vec<i64>,
}

/// `a0 + sum_i a_i cos(2 pi k_i . x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSeries {
    pub a0: f64,
    pub terms: Vec<CosineTerm>,
}

impl CosineSeries {
    pub fn constant(a0: f64) -> Self {
        CosineSeries {
            a0,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.a0;
        for term in &self.terms {
            let phase: f64 = term.wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
            v += term.amplitude * (2.0 * PI * phase).cos();
        }
        v
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for term in &self.terms {
            let phase: f64 = term.wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
            let s = -2.0 * PI * term.amplitude * (2.0 * PI * phase).sin();
            for (g, &k) in out.iter_mut().zip(&term.wave) {
                *g += s * k as f64;
            }
        }
    }

    /// `a0 - sum |a_i|`, a certified lower bound for the series.
    pub fn coefficient_lower_bound(&self) -> f64 {
        self.a0 - self.terms.iter().map(|t| t.amplitude.abs()).sum::<f64>()
    }

    pub fn coefficient_upper_bound(&self) -> f64 {
        self.a0 + self.terms.iter().map(|t| t.amplitude.abs()).sum::<f64>()
    }
}

/// Potential values on a uniform `n^d` grid of the unit torus, row-major with
/// the last axis fastest, evaluated by periodic multilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl TabulatedPotential {
    pub fn new(n: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || dim == 0 {
            return domain("tabulated potential needs n >= 1 and dimension >= 1");
        }
        if values.len() != n.pow(dim as u32) {
            return domain(format!(
                "tabulated potential expects {} values, got {}",
                n.pow(dim as u32),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("tabulated potential contains non-finite values");
        }
        Ok(TabulatedPotential { n, dim, values })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.n as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        let d = self.dim;
        debug_assert!(d <= 3);
        for k in 0..d {
            let s = (x[k].rem_euclid(1.0)) * n;
            let i = s.floor();
            base[k] = (i as usize) % self.n;
            frac[k] = s - i;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                let i = (base[k] + bit) % self.n;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * self.n + i;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Cosine(CosineSeries),
    Tabulated(TabulatedPotential),
}

impl Potential {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Cosine(s) => s.eval(x),
            Potential::Tabulated(t) => t.eval(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `H(x, p) = |p|^2 - V(x)`.
    QuadraticMinusPotential,
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::QuadraticMinusPotential => "quadratic_minus_potential",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "quadratic_minus_potential" => Some(Family::QuadraticMinusPotential),
            _ => None,
        }
    }
}

/// Grids used by the runtime invariant checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationGrid {
    /// Points per axis on the unit torus.
    pub torus_points: usize,
    /// Points per axis on the momentum box `[-momentum_box, momentum_box]^d`.
    pub momentum_points: usize,
    pub momentum_box: f64,
}

impl Default for VerificationGrid {
    fn default() -> Self {
        VerificationGrid {
            torus_points: 64,
            momentum_points: 65,
            momentum_box: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub dimension: usize,
    pub family: Family,
    pub potential: Potential,
    /// Shift `a`; the working potential is `V - a`.
    pub normalization_shift: f64,
    /// Momentum radius beyond which the working Hamiltonian is `|p|^2`.
    /// `None` disables the cap.
    pub momentum_cap: Option<f64>,
}

impl HamiltonianSpec {
    pub fn new(dimension: usize, potential: Potential) -> Result<Self> {
        if dimension == 0 || dimension > 3 {
            return domain(format!("dimension must be 1, 2 or 3, got {dimension}"));
        }
        match &potential {
            Potential::Cosine(s) => {
                for t in &s.terms {
                    if t.wave.len() != dimension {
                        return domain(format!(
                            "cosine term has {} wave components, dimension is {dimension}",
                            t.wave.len()
                        ));
                    }
                    if !t.amplitude.is_finite() {
                        return domain("non-finite cosine amplitude");
                    }
                }
                if !s.a0.is_finite() {
                    return domain("non-finite potential.a0");
                }
            }
            Potential::Tabulated(t) => {
                if t.dim != dimension {
                    return domain("tabulated potential dimension mismatch");
                }
            }
        }
        Ok(HamiltonianSpec {
            dimension,
            family: Family::QuadraticMinusPotential,
            potential,
            normalization_shift: 0.0,
            momentum_cap: None,
        })
    }

    /// Constant potential `V = c`.
    pub fn constant(dimension: usize, c: f64) -> Result<Self> {
        Self::new(dimension, Potential::Cosine(CosineSeries::constant(c)))
    }

    /// `a0 + sum amplitude cos(2 pi k . x)` from `(amplitude, k)` pairs.
    pub fn cosine(dimension: usize, a0: f64, terms: &[(f64, &[i64])]) -> Result<Self> {
        let terms = terms
            .iter()
            .map(|(a, k)| CosineTerm {
                amplitude: *a,
                wave: k.to_vec(),
            })
            .collect();
        Self::new(dimension, Potential::Cosine(CosineSeries { a0, terms }))
    }

    pub fn with_momentum_cap(mut self, cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return domain("momentum_cap must be positive and finite");
        }
        self.momentum_cap = Some(cap);
        Ok(self)
    }

    /// Original potential `V(x)`.
    pub fn potential_at(&self, x: &[f64]) -> f64 {
        self.potential.eval(x)
    }

    /// Working potential `V(x) - a`.
    pub fn working_potential(&self, x: &[f64]) -> f64 {
        self.potential.eval(x) - self.normalization_shift
    }

    /// Working Hamiltonian without input validation.
    pub(crate) fn eval_unchecked(&self, x: &[f64], p: &[f64]) -> f64 {
        let p2: f64 = p.iter().map(|v| v * v).sum();
        let base = p2 - self.working_potential(x);
        match self.momentum_cap {
            None => base,
            Some(cap) => {
                let r = p2.sqrt();
                if r >= cap {
                    p2
                } else {
                    // convex, continuous, and equal to |p|^2 from the cap on
                    base.max(2.0 * cap * r - cap * cap)
                }
            }
        }
    }

    /// Evaluates the working Hamiltonian `H(x mod 1, p)`.
    pub fn evaluate(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        evaluate_hamiltonian(self, x, p)
    }

    /// True when the Lagrangian has the closed form `|v|^2/4 + V(x) - a`.
    pub fn has_closed_form_lagrangian(&self) -> bool {
        self.momentum_cap.is_none()
    }

    /// Minimum of the original potential over the torus.
    pub fn min_potential(&self) -> f64 {
        extremum(self, -1.0)
    }

    /// Maximum of the original potential over the torus.
    pub fn max_potential(&self) -> f64 {
        extremum(self, 1.0)
    }

    pub fn min_working_potential(&self) -> f64 {
        self.min_potential() - self.normalization_shift
    }

    pub fn max_working_potential(&self) -> f64 {
        self.max_potential() - self.normalization_shift
    }

    /// Largest speed `2 sqrt(P^2 + max V - min V)` of an optimal trajectory
    /// whose momentum starts in the ball of radius `momentum_bound`.
    pub fn speed_bound(&self, momentum_bound: f64) -> f64 {
        let osc = self.max_potential() - self.min_potential();
        2.0 * (momentum_bound * momentum_bound + osc).sqrt()
    }

    /// Stable 64-bit FNV-1a digest of the canonical description.
    pub fn digest(&self) -> u64 {
        let text = self.canonical_string();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "d={};family={};", self.dimension, self.family.tag());
        match &self.potential {
            Potential::Cosine(c) => {
                let _ = write!(s, "a0={:e};", c.a0);
                for t in &c.terms {
                    let _ = write!(s, "term={:e}", t.amplitude);
                    for k in &t.wave {
                        let _ = write!(s, ",{k}");
                    }
                    s.push(';');
                }
            }
            Potential::Tabulated(t) => {
                let _ = write!(s, "table_n={};", t.n);
                for v in &t.values {
                    let _ = write!(s, "{v:e},");
                }
                s.push(';');
            }
        }
        let _ = write!(s, "shift={:e};", self.normalization_shift);
        if let Some(c) = self.momentum_cap {
            let _ = write!(s, "cap={c:e};");
        }
        s
    }

    /// Runs the runtime invariant checks on the given grids.
    pub fn check(&self, grid: &VerificationGrid) -> SpecReport {
        let d = self.dimension;
        let torus = torus_grid(d, grid.torus_points);
        let min_v = torus
            .iter()
            .map(|x| self.working_potential(x))
            .fold(f64::INFINITY, f64::min);
        let max_v = torus
            .iter()
            .map(|x| self.working_potential(x))
            .fold(f64::NEG_INFINITY, f64::max);
        let coefficient_bound = match &self.potential {
            Potential::Cosine(c) => Some(c.coefficient_lower_bound() - self.normalization_shift),
            Potential::Tabulated(_) => None,
        };

        // Midpoint convexity along axis-aligned momentum lines.
        let m = grid.momentum_points.max(3);
        let h = 2.0 * grid.momentum_box / (m - 1) as f64;
        let mut convexity_violation: f64 = 0.0;
        let xs = torus_grid(d, grid.torus_points.min(16));
        let mut p = vec![0.0; d];
        for x in &xs {
            for_each_index(d, m, |idx| {
                for (k, &i) in idx.iter().enumerate() {
                    p[k] = -grid.momentum_box + h * i as f64;
                }
                let centre = self.eval_unchecked(x, &p);
                for axis in 0..d {
                    if idx[axis] == 0 || idx[axis] == m - 1 {
                        continue;
                    }
                    let c = p[axis];
                    p[axis] = c - h;
                    let lo = self.eval_unchecked(x, &p);
                    p[axis] = c + h;
                    let hi = self.eval_unchecked(x, &p);
                    p[axis] = c;
                    convexity_violation = convexity_violation.max(centre - 0.5 * (lo + hi));
                }
            });
        }

        // Smallest radius on the momentum grid beyond which min_x H >= |p|^2 / 2.
        let mut coercivity_radius: f64 = 0.0;
        for_each_index(d, m, |idx| {
            for (k, &i) in idx.iter().enumerate() {
                p[k] = -grid.momentum_box + h * i as f64;
            }
            let r2: f64 = p.iter().map(|v| v * v).sum();
            let worst = xs
                .iter()
                .map(|x| self.eval_unchecked(x, &p))
                .fold(f64::INFINITY, f64::min);
            if worst < 0.5 * r2 {
                coercivity_radius = coercivity_radius.max(r2.sqrt() + h);
            }
        });

        SpecReport {
            min_working_potential: min_v,
            max_working_potential: max_v,
            coefficient_bound,
            convexity_violation,
            coercivity_radius,
        }
    }
}

/// Outcome of [`HamiltonianSpec::check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpecReport {
    pub min_working_potential: f64,
    pub max_working_potential: f64,
    /// `a0 - sum |a_i| - a` for cosine series.
    pub coefficient_bound: Option<f64>,
    /// Largest midpoint-convexity defect along momentum axis lines.
    pub convexity_violation: f64,
    pub coercivity_radius: f64,
}

impl SpecReport {
    /// `H(x, 0) <= -1` on the verification grid.
    pub fn is_normalized(&self) -> bool {
        self.min_working_potential >= 1.0 - 1e-12
    }

    pub fn is_convex(&self, tol: f64) -> bool {
        self.convexity_violation <= tol
    }
}

/// Working Hamiltonian at `(x mod 1, p)`, normalization shift included.
pub fn evaluate_hamiltonian(spec: &HamiltonianSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    if x.len() != spec.dimension || p.len() != spec.dimension {
        return domain(format!(
            "expected points of dimension {}, got x:{} p:{}",
            spec.dimension,
            x.len(),
            p.len()
        ));
    }
    if x.iter().chain(p).any(|v| !v.is_finite()) {
        return domain("non-finite x or p");
    }
    let xr: Vec<f64> = x.iter().map(|v| v.rem_euclid(1.0)).collect();
    Ok(spec.eval_unchecked(&xr, p))
}

/// Chooses the shift so that the working potential is at least one.
///
/// Returns the shifted spec and the shift `a`; working solutions become
/// solutions of the original problem after adding `t * a`. A spec that
/// already satisfies the bound is returned unchanged with shift zero.
pub fn normalize(spec: &HamiltonianSpec) -> (HamiltonianSpec, f64) {
    let min_v = spec.min_potential();
    let shift = if min_v >= 1.0 { 0.0 } else { min_v - 1.0 };
    let mut out = spec.clone();
    out.normalization_shift = shift;
    (out, shift)
}

fn torus_grid(d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(n.pow(d as u32));
    for_each_index(d, n, |idx| {
        pts.push(idx.iter().map(|&i| i as f64 / n as f64).collect());
    });
    pts
}

/// Calls `f` on every multi-index of `{0..n}^d` in row-major order.
pub(crate) fn for_each_index(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    if n == 0 {
        return;
    }
    let mut idx = vec![0usize; d];
    loop {
        f(&idx);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Grid scan followed by golden-section coordinate refinement.
/// `sign = -1` finds the minimum, `+1` the maximum.
fn extremum(spec: &HamiltonianSpec, sign: f64) -> f64 {
    let d = spec.dimension;
    match &spec.potential {
        Potential::Tabulated(t) => {
            // multilinear interpolation attains extrema at the nodes
            t.values.iter().fold(-sign * f64::INFINITY, |acc, &v| {
                if sign * v > sign * acc {
                    v
                } else {
                    acc
                }
            })
        }
        Potential::Cosine(series) => {
            if series.terms.is_empty() {
                return series.a0;
            }
            let n = match d {
                1 => 256,
                2 => 64,
                _ => 24,
            };
            let mut best = Vec::new();
            let mut best_v = -sign * f64::INFINITY;
            for x in torus_grid(d, n) {
                let v = series.eval(&x);
                if sign * v > sign * best_v {
                    best_v = v;
                    best = x;
                }
            }
            let h = 1.0 / n as f64;
            let mut x = best;
            for _ in 0..4 {
                for k in 0..d {
                    let centre = x[k];
                    let g = |s: f64| {
                        let mut y = x.clone();
                        y[k] = s;
                        -sign * series.eval(&y)
                    };
                    let s = golden_section_min(g, centre - h, centre + h, 1e-12);
                    let mut y = x.clone();
                    y[k] = s;
                    let v = series.eval(&y);
                    if sign * v >= sign * best_v {
                        best_v = v;
                        x = y;
                    }
                }
            }
            best_v
        }
    }
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a).abs() > tol && iter < 200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
        iter += 1;
    }
    let m = 0.5 * (a + b);
    // keep the best of the bracket interior and its ends
    [m, c, d]
        .into_iter()
        .min_by(|x, y| {
            f(*x)
                .partial_cmp(&f(*y))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_plus_cos() -> HamiltonianSpec {
        HamiltonianSpec::cosine(1, 2.0, &[(1.0, &[1])]).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let flat = HamiltonianSpec::constant(1, 1.0).unwrap();
        assert_eq!(evaluate_hamiltonian(&flat, &[0.3], &[0.0]).unwrap(), -1.0);
        assert_eq!(evaluate_hamiltonian(&flat, &[0.0], &[2.0]).unwrap(), 3.0);
        let h = evaluate_hamiltonian(&two_plus_cos(), &[0.5], &[1.0]).unwrap();
        assert!(h.abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_non_finite() {
        let flat = HamiltonianSpec::constant(1, 1.0).unwrap();
        assert!(matches!(
            evaluate_hamiltonian(&flat, &[f64::NAN], &[0.0]),
            Err(crate::Error::Domain(_))
        ));
        assert!(evaluate_hamiltonian(&flat, &[0.0], &[f64::INFINITY]).is_err());
    }

    #[test]
    fn periodicity_in_x() {
        let spec = HamiltonianSpec::cosine(2, 3.0, &[(1.0, &[1, 0]), (0.5, &[1, 2])]).unwrap();
        for &(x0, x1) in &[(0.1, 0.7), (0.33, -0.25), (0.9, 0.01)] {
            let p = [0.4, -1.3];
            let a = spec.evaluate(&[x0, x1], &p).unwrap();
            let b = spec.evaluate(&[x0 + 1.0, x1], &p).unwrap();
            let c = spec.evaluate(&[x0, x1 - 3.0], &p).unwrap();
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        let (s, a) = normalize(&HamiltonianSpec::constant(1, 0.0).unwrap());
        assert_eq!(a, -1.0);
        assert_eq!(s.working_potential(&[0.4]), 1.0);

        let orig = HamiltonianSpec::constant(1, 1.0).unwrap();
        let (s, a) = normalize(&orig);
        assert_eq!(a, 0.0);
        assert_eq!(s, orig);

        let cos = HamiltonianSpec::cosine(1, 0.0, &[(1.0, &[1])]).unwrap();
        let (s, a) = normalize(&cos);
        assert!((a + 2.0).abs() < 1e-12, "shift {a}");
        // new V = 2 + cos: grid scan confirms min 1 at x = 1/2
        let min = (0..1000)
            .map(|i| s.working_potential(&[i as f64 / 1000.0]))
            .fold(f64::INFINITY, f64::min);
        assert!((min - 1.0).abs() < 1e-12);
        assert!((s.working_potential(&[0.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_specs_pass_checks() {
        let grid = VerificationGrid {
            torus_points: 16,
            momentum_points: 17,
            momentum_box: 8.0,
        };
        let raw = HamiltonianSpec::cosine(2, -0.5, &[(1.0, &[1, 0]), (1.0, &[0, 1])]).unwrap();
        assert!(!raw.check(&grid).is_normalized());
        let (s, _) = normalize(&raw);
        let rep = s.check(&grid);
        assert!(rep.is_normalized());
        assert!(rep.is_convex(1e-9));
        assert!(rep.coefficient_bound.unwrap() <= rep.min_working_potential + 1e-12);
        assert!(rep.coercivity_radius < 8.0);
    }

    #[test]
    fn cap_is_convex_and_quadratic_beyond() {
        let spec = two_plus_cos().with_momentum_cap(3.0).unwrap();
        for &p in &[3.0, 3.5, -4.0] {
            let h = spec.evaluate(&[0.2], &[p]).unwrap();
            assert_eq!(h, p * p);
        }
        // unchanged well inside the cap
        let inner = spec.evaluate(&[0.2], &[0.5]).unwrap();
        let plain = two_plus_cos().evaluate(&[0.2], &[0.5]).unwrap();
        assert_eq!(inner, plain);
        let grid = VerificationGrid {
            torus_points: 16,
            momentum_points: 65,
            momentum_box: 8.0,
        };
        assert!(spec.check(&grid).is_convex(1e-9));
    }

    #[test]
    fn tabulated_potential_interpolates_periodically() {
        let t = TabulatedPotential::new(4, 1, vec![1.0, 2.0, 3.0, 2.0]).unwrap();
        assert_eq!(t.eval(&[0.0]), 1.0);
        assert_eq!(t.eval(&[0.125]), 1.5);
        assert_eq!(t.eval(&[0.875]), 1.5);
        assert_eq!(t.eval(&[1.25]), 2.0);
        let spec = HamiltonianSpec::new(1, Potential::Tabulated(t)).unwrap();
        assert_eq!(spec.min_potential(), 1.0);
        assert_eq!(spec.max_potential(), 3.0);
    }

    #[test]
    fn extrema_of_two_dimensional_series() {
        let spec = HamiltonianSpec::cosine(2, 3.0, &[(1.0, &[1, 0]), (1.0, &[0, 1])]).unwrap();
        assert!((spec.min_potential() - 1.0).abs() < 1e-10);
        assert!((spec.max_potential() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = two_plus_cos();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.normalization_shift = -1.0;
        assert_ne!(a.digest(), b.digest());
    }
}
