//! Discrete Legendre-Fenchel transform on product grids and the Lagrangian
//! `L(x, v) = sup_p p.v - H(x, p)`.

use std::fmt::Write as _;

use crate::error::{domain, Result};
use crate::hamiltonian::{for_each_index, HamiltonianSpec};

/// Uniform grid on `[lo, hi]` with `n` nodes (`n == 1` puts the node at `lo`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        AxisGrid { lo, hi, n }
    }

    /// Symmetric grid `[-r, r]` with spacing `h` (rounded so that 0 is a node).
    pub fn symmetric(r: f64, h: f64) -> Self {
        let half = (r / h).round().max(1.0) as usize;
        AxisGrid {
            lo: -(half as f64) * h,
            hi: half as f64 * h,
            n: 2 * half + 1,
        }
    }

    pub fn step(&self) -> f64 {
        if self.n > 1 {
            (self.hi - self.lo) / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        if self.n == 1 {
            self.lo
        } else {
            // exact at both ends
            if i + 1 == self.n {
                self.hi
            } else {
                self.lo + self.step() * i as f64
            }
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductGrid {
    pub axes: Vec<AxisGrid>,
}

impl ProductGrid {
    pub fn cube(d: usize, axis: AxisGrid) -> Self {
        ProductGrid {
            axes: vec![axis; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.node(i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for_each_multi(&self.shape(), |idx| out.push(self.point(idx)));
        out
    }
}

/// Which side of the duality a table lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualDomain {
    Momentum,
    Velocity,
}

impl DualDomain {
    pub fn dual(self) -> Self {
        match self {
            DualDomain::Momentum => DualDomain::Velocity,
            DualDomain::Velocity => DualDomain::Momentum,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DualDomain::Momentum => "momentum-domain",
            DualDomain::Velocity => "velocity-domain",
        }
    }
}

/// Function values on a product grid; `+inf` marks nodes outside the
/// effective domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexFunctionTable {
    pub grid: ProductGrid,
    pub values: Vec<f64>,
    pub domain: DualDomain,
    /// For transform outputs: whether the maximizing input node sat on the
    /// boundary of the input box. Empty for tables not produced by a transform.
    pub boundary_attained: Vec<bool>,
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// The query left the grid box and was clamped onto it.
    pub clamped: bool,
}

impl ConvexFunctionTable {
    pub fn new(grid: ProductGrid, values: Vec<f64>, domain: DualDomain) -> Result<Self> {
        if values.len() != grid.len() {
            return domain_err(grid.len(), values.len());
        }
        Ok(ConvexFunctionTable {
            grid,
            values,
            domain,
            boundary_attained: Vec::new(),
        })
    }

    /// Tabulates `f` on the grid.
    pub fn from_fn(grid: ProductGrid, domain: DualDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.points().iter().map(|p| f(p)).collect();
        ConvexFunctionTable {
            grid,
            values,
            domain,
            boundary_attained: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flat_index(idx)]
    }

    /// Multilinear interpolation; out-of-box queries are clamped and flagged.
    pub fn eval(&self, x: &[f64]) -> Lookup {
        let d = self.dim();
        let mut clamped = false;
        let mut base = [0usize; 4];
        let mut frac = [0f64; 4];
        for k in 0..d {
            let a = &self.grid.axes[k];
            let mut xk = x[k];
            if xk < a.lo {
                xk = a.lo;
                clamped = true;
            } else if xk > a.hi {
                xk = a.hi;
                clamped = true;
            }
            if a.n == 1 {
                base[k] = 0;
                frac[k] = 0.0;
                continue;
            }
            let s = (xk - a.lo) / a.step();
            let i = (s.floor() as usize).min(a.n - 2);
            base[k] = i;
            frac[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                let a = &self.grid.axes[k];
                let i = if a.n == 1 { 0 } else { base[k] + bit };
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * a.n + i;
            }
            if w > 0.0 {
                let v = self.values[flat];
                if v == f64::INFINITY {
                    return Lookup {
                        value: f64::INFINITY,
                        clamped,
                    };
                }
                acc += w * v;
            }
        }
        Lookup {
            value: acc,
            clamped,
        }
    }

    /// Largest midpoint-convexity defect along axis lines over finite nodes.
    pub fn convexity_defect(&self) -> f64 {
        let shape = self.grid.shape();
        let d = self.dim();
        let mut worst: f64 = 0.0;
        let mut nb = vec![0usize; d];
        for_each_multi(&shape, |idx| {
            let c = self.value_at(idx);
            if !c.is_finite() {
                return;
            }
            for axis in 0..d {
                if idx[axis] == 0 || idx[axis] + 1 == shape[axis] {
                    continue;
                }
                nb.copy_from_slice(idx);
                nb[axis] -= 1;
                let lo = self.value_at(&nb);
                nb[axis] += 2;
                let hi = self.value_at(&nb);
                if lo.is_finite() && hi.is_finite() {
                    worst = worst.max(c - 0.5 * (lo + hi));
                }
            }
        });
        worst
    }

    pub fn any_boundary_attained(&self) -> bool {
        self.boundary_attained.iter().any(|&b| b)
    }

    /// CSV with one row per node: coordinates then value.
    pub fn to_csv(&self, value_name: &str) -> String {
        let d = self.dim();
        let mut s = String::new();
        let _ = writeln!(s, "# schema=homog-table-v1 domain={}", self.domain.tag());
        let coord = match self.domain {
            DualDomain::Momentum => "p",
            DualDomain::Velocity => "v",
        };
        for k in 1..=d {
            let _ = write!(s, "{coord}{k},");
        }
        let _ = writeln!(s, "{value_name}");
        for_each_multi(&self.grid.shape(), |idx| {
            for x in self.grid.point(idx) {
                let _ = write!(s, "{x},");
            }
            let _ = writeln!(s, "{}", self.value_at(idx));
        });
        s
    }
}

fn domain_err<T>(expected: usize, got: usize) -> Result<T> {
    domain(format!("table expects {expected} values, got {got}"))
}

/// Row-major iteration over a non-uniform shape.
pub(crate) fn for_each_multi(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let d = shape.len();
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
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformMethod {
    /// Maximization over every input node, `O(N M)` per axis line.
    #[default]
    Direct,
    /// Lower convex hull followed by a monotone slope walk, `O(N + M)`.
    Linear,
}

/// `g(v) = max over grid nodes p of p.v - f(p)`, on the product grid
/// `out_box` x `out_resolution`.
pub fn legendre_transform(
    f: &ConvexFunctionTable,
    out_box: &[(f64, f64)],
    out_resolution: &[usize],
) -> Result<ConvexFunctionTable> {
    legendre_transform_with(f, out_box, out_resolution, TransformMethod::Direct)
}

pub fn legendre_transform_with(
    f: &ConvexFunctionTable,
    out_box: &[(f64, f64)],
    out_resolution: &[usize],
    method: TransformMethod,
) -> Result<ConvexFunctionTable> {
    let d = f.dim();
    if f.grid.is_empty() || d == 0 {
        return domain("legendre transform of an empty grid");
    }
    if out_box.len() != d || out_resolution.len() != d {
        return domain("output box dimension does not match the input table");
    }
    if out_resolution.contains(&0) {
        return domain("output resolution must be positive");
    }
    if f.values
        .iter()
        .any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
    {
        return domain("input table must be finite or +inf");
    }
    if f.values.iter().all(|v| !v.is_finite()) {
        return domain("input table has no finite node");
    }
    let out_grid = ProductGrid {
        axes: out_box
            .iter()
            .zip(out_resolution)
            .map(|(&(lo, hi), &n)| AxisGrid::new(lo, hi, n))
            .collect(),
    };

    // Work array h holds -f initially; axes are replaced one at a time.
    let mut shape = f.grid.shape();
    let mut h: Vec<f64> = f.values.iter().map(|v| -v).collect();
    let mut flag = vec![false; h.len()];
    for axis in 0..d {
        let in_axis = f.grid.axes[axis];
        let out_axis = out_grid.axes[axis];
        let n_in = shape[axis];
        let n_out = out_axis.n;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut next = vec![f64::NEG_INFINITY; outer * n_out * inner];
        let mut next_flag = vec![false; next.len()];
        let p_nodes = in_axis.nodes();
        let v_nodes = out_axis.nodes();
        let mut line = vec![0.0; n_in];
        let mut line_flag = vec![false; n_in];
        let mut res = vec![(f64::NEG_INFINITY, usize::MAX); n_out];
        for o in 0..outer {
            for i in 0..inner {
                for j in 0..n_in {
                    let src = (o * n_in + j) * inner + i;
                    line[j] = h[src];
                    line_flag[j] = flag[src];
                }
                match method {
                    TransformMethod::Direct => {
                        conjugate_direct(&p_nodes, &line, &v_nodes, &mut res)
                    }
                    TransformMethod::Linear => {
                        conjugate_linear(&p_nodes, &line, &v_nodes, &mut res)
                    }
                }
                for (k, &(val, arg)) in res.iter().enumerate() {
                    let dst = (o * n_out + k) * inner + i;
                    next[dst] = val;
                    if arg != usize::MAX {
                        next_flag[dst] = line_flag[arg] || arg == 0 || arg + 1 == n_in;
                    }
                }
            }
        }
        shape[axis] = n_out;
        h = next;
        flag = next_flag;
    }
    let values = h
        .into_iter()
        .map(|v| {
            if v == f64::NEG_INFINITY {
                f64::INFINITY
            } else {
                v
            }
        })
        .collect();
    Ok(ConvexFunctionTable {
        grid: out_grid,
        values,
        domain: f.domain.dual(),
        boundary_attained: flag,
    })
}

/// `res[k] = max_j p_j v_k + h_j` with the first maximizing index.
fn conjugate_direct(p: &[f64], h: &[f64], v: &[f64], res: &mut [(f64, usize)]) {
    for (k, &vk) in v.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (j, (&pj, &hj)) in p.iter().zip(h).enumerate() {
            if hj == f64::NEG_INFINITY {
                continue;
            }
            let val = pj * vk + hj;
            if val > best {
                best = val;
                arg = j;
            }
        }
        res[k] = (best, arg);
    }
}

/// Same contract as [`conjugate_direct`] via the lower convex hull of
/// `(p_j, -h_j)`; requires increasing `p` and `v`.
fn conjugate_linear(p: &[f64], h: &[f64], v: &[f64], res: &mut [(f64, usize)]) {
    let mut hull: Vec<usize> = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        if h[j] == f64::NEG_INFINITY {
            continue;
        }
        // F_j = -h_j; keep the lower hull of (p_j, F_j)
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let (fa, fb, fj) = (-h[a], -h[b], -h[j]);
            let cross = (p[b] - p[a]) * (fj - fa) - (fb - fa) * (p[j] - p[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(j);
    }
    if hull.is_empty() {
        res.iter_mut()
            .for_each(|r| *r = (f64::NEG_INFINITY, usize::MAX));
        return;
    }
    let mut pos = 0;
    for (k, &vk) in v.iter().enumerate() {
        // advance while the next hull vertex is strictly better
        while pos + 1 < hull.len() {
            let a = hull[pos];
            let b = hull[pos + 1];
            if p[b] * vk + h[b] > p[a] * vk + h[a] {
                pos += 1;
            } else {
                break;
            }
        }
        let j = hull[pos];
        res[k] = (p[j] * vk + h[j], j);
    }
}

/// Options for tabulating a Lagrangian numerically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianOptions {
    pub torus_points: usize,
    pub momentum_box: f64,
    pub momentum_points: usize,
    pub velocity_box: f64,
    pub velocity_points: usize,
}

impl LagrangianOptions {
    pub fn for_dimension(d: usize, velocity_box: f64) -> Self {
        let torus_points = match d {
            1 => 64,
            2 => 16,
            _ => 8,
        };
        LagrangianOptions {
            torus_points,
            momentum_box: 8.0,
            momentum_points: 65,
            velocity_box,
            velocity_points: if d == 1 { 257 } else { 65 },
        }
    }
}

/// The running cost `L(x, v)`.
#[derive(Debug, Clone)]
pub struct LagrangianField {
    pub spec: HamiltonianSpec,
    pub closed_form: bool,
    tables: Option<TorusTables>,
}

#[derive(Debug, Clone)]
struct TorusTables {
    n: usize,
    tables: Vec<ConvexFunctionTable>,
}

impl LagrangianField {
    pub fn dim(&self) -> usize {
        self.spec.dimension
    }

    /// `L(x, v)`; tabulated fields clamp velocities to their box.
    pub fn eval(&self, x: &[f64], v: &[f64]) -> f64 {
        self.eval_flagged(x, v).value
    }

    pub fn eval_flagged(&self, x: &[f64], v: &[f64]) -> Lookup {
        match &self.tables {
            None => {
                let v2: f64 = v.iter().map(|a| a * a).sum();
                Lookup {
                    value: 0.25 * v2 + self.spec.working_potential(x),
                    clamped: false,
                }
            }
            Some(t) => t.eval(x, v),
        }
    }

    /// Minimum of `L` over a torus grid and a velocity box.
    pub fn min_on_grid(
        &self,
        torus_points: usize,
        velocity_box: f64,
        velocity_points: usize,
    ) -> f64 {
        let d = self.dim();
        let vaxis = AxisGrid::new(-velocity_box, velocity_box, velocity_points);
        let vgrid = ProductGrid::cube(d, vaxis).points();
        let mut best = f64::INFINITY;
        for_each_index(d, torus_points, |idx| {
            let x: Vec<f64> = idx
                .iter()
                .map(|&i| i as f64 / torus_points as f64)
                .collect();
            for v in &vgrid {
                best = best.min(self.eval(&x, v));
            }
        });
        best
    }
}

impl TorusTables {
    fn eval(&self, x: &[f64], v: &[f64]) -> Lookup {
        let d = v.len();
        let n = self.n as f64;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for k in 0..d {
            let s = x[k].rem_euclid(1.0) * n;
            let i = s.floor();
            base[k] = (i as usize) % self.n;
            frac[k] = s - i;
        }
        let mut acc = 0.0;
        let mut clamped = false;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * self.n + (base[k] + bit) % self.n;
            }
            if w > 0.0 {
                let l = self.tables[idx].eval(v);
                clamped |= l.clamped;
                acc += w * l.value;
            }
        }
        Lookup {
            value: acc,
            clamped,
        }
    }
}

/// Builds `L` for a normalized spec: closed form `|v|^2/4 + V(x) - a` for the
/// uncapped quadratic family, otherwise a numerical transform per torus node.
pub fn build_lagrangian(spec: &HamiltonianSpec) -> Result<LagrangianField> {
    let vbox = 8.0;
    build_lagrangian_with(
        spec,
        &LagrangianOptions::for_dimension(spec.dimension, vbox),
    )
}

pub fn build_lagrangian_with(
    spec: &HamiltonianSpec,
    opts: &LagrangianOptions,
) -> Result<LagrangianField> {
    if spec.min_working_potential() < 1.0 - 1e-9 {
        return domain(format!(
            "spec is not normalized: min working potential {} < 1",
            spec.min_working_potential()
        ));
    }
    if spec.has_closed_form_lagrangian() {
        return Ok(LagrangianField {
            spec: spec.clone(),
            closed_form: true,
            tables: None,
        });
    }
    let d = spec.dimension;
    let n = opts.torus_points.max(1);
    let paxis = AxisGrid::new(-opts.momentum_box, opts.momentum_box, opts.momentum_points);
    let pgrid = ProductGrid::cube(d, paxis);
    let out_box = vec![(-opts.velocity_box, opts.velocity_box); d];
    let out_res = vec![opts.velocity_points; d];
    let mut tables = Vec::with_capacity(n.pow(d as u32));
    let mut err = None;
    for_each_index(d, n, |idx| {
        if err.is_some() {
            return;
        }
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 / n as f64).collect();
        let h = ConvexFunctionTable::from_fn(pgrid.clone(), DualDomain::Momentum, |p| {
            spec.eval_unchecked(&x, p)
        });
        match legendre_transform_with(&h, &out_box, &out_res, TransformMethod::Linear) {
            Ok(t) => tables.push(t),
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(LagrangianField {
        spec: spec.clone(),
        closed_form: false,
        tables: Some(TorusTables { n, tables }),
    })
}
