//! Homogenized quantities: `m̄(t, 0, x) = lim n⁻¹ m(nt, 0, nx)`, the
//! effective Lagrangian `L̄(v) = m̄(1, 0, v)` and its conjugate `H̄`.

use std::fmt::Write as _;

use crate::error::{config, domain, Error, Result};
use crate::lattice::{relax, Discretization, LatticeBox, Layer, StepCosts};
use crate::legendre::{
    for_each_multi, legendre_transform_with, AxisGrid, ConvexFunctionTable, DualDomain,
    LagrangianField, ProductGrid, TransformMethod,
};
use crate::metric::{metric_table_from_costs, Cone, MetricTable, Retention};

/// The sequence `g_n = m(nt, 0, nx) / n` along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    /// `(n, g_n)` for doubling `n`.
    pub levels: Vec<(usize, f64)>,
    /// `2 g_{2n} - g_n` from the last two levels.
    pub limit: f64,
    /// Set when the table horizon stopped the doubling before `n_max`.
    pub truncated: bool,
}

impl RayEstimate {
    pub fn gaps(&self) -> Vec<f64> {
        self.levels.iter().map(|&(_, g)| g - self.limit).collect()
    }
}

/// Smallest `q <= 8` that puts `(q t, q x)` on the table lattice.
fn lattice_multiplier(disc: &Discretization, t: f64, x: &[f64]) -> Option<usize> {
    let on = |v: f64, n: usize| {
        let s = v * n as f64;
        (s - s.round()).abs() < 1e-9 * s.abs().max(1.0)
    };
    (1..=8).find(|&q| {
        on(q as f64 * t, disc.steps) && x.iter().all(|&xi| on(q as f64 * xi, disc.cells))
    })
}

/// `g_n` for `n = q, 2q, 4q, ...` up to `n_max` (and the horizon).
pub fn effective_metric(
    table: &MetricTable,
    t: f64,
    x: &[f64],
    n_max: usize,
) -> Result<RayEstimate> {
    if x.len() != table.dim() {
        return domain("direction dimension does not match the table");
    }
    if !(t > 0.0) || !t.is_finite() {
        return domain("effective_metric needs t > 0");
    }
    if !table.cone.contains(t, x) {
        return domain("ray lies outside the cone");
    }
    let q = lattice_multiplier(&table.disc, t, x).unwrap_or(1);
    let horizon = table.horizon();
    let mut levels = Vec::new();
    let mut n = q;
    let mut truncated = false;
    while n <= n_max.max(q) {
        if n as f64 * t > horizon + 1e-9 {
            truncated = true;
            break;
        }
        let nt = n as f64 * t;
        let nx: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
        let m = crate::metric::metric_point(table, nt, &vec![0.0; x.len()], &nx)?;
        levels.push((n, m / n as f64));
        n *= 2;
    }
    if levels.is_empty() {
        return Err(Error::Resolution(format!(
            "table horizon {horizon} is shorter than the first level {q} * {t}"
        )));
    }
    let limit = match levels.len() {
        1 => levels[0].1,
        k => 2.0 * levels[k - 1].1 - levels[k - 2].1,
    };
    Ok(RayEstimate {
        t,
        x: x.to_vec(),
        levels,
        limit,
        truncated,
    })
}

/// Resolution of the effective model.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveOptions {
    pub disc: Discretization,
    /// Largest time multiplier `n`; also the table horizon.
    pub n_max: usize,
    /// Velocity grid `[-b, b]^d` with this many nodes per axis.
    pub velocity_box: f64,
    pub velocity_points: usize,
    pub momentum_box: f64,
    pub momentum_points: usize,
    pub method: TransformMethod,
}

impl EffectiveOptions {
    /// Velocity grid whose nodes times `n_max / 2` are integers, as far as
    /// the point budget allows.
    pub fn new(disc: Discretization, n_max: usize, velocity_box: f64, momentum_box: f64) -> Self {
        let h = 2.0 / n_max as f64;
        let velocity_points = 2 * (velocity_box / h).floor() as usize + 1;
        EffectiveOptions {
            disc,
            n_max,
            velocity_box: h * ((velocity_points - 1) / 2) as f64,
            velocity_points,
            momentum_box,
            momentum_points: 2 * (momentum_box * 20.0).round() as usize + 1,
            method: TransformMethod::Direct,
        }
    }
}

/// Per-ray convergence record kept with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionDiagnostic {
    pub velocity: Vec<f64>,
    pub levels: Vec<(usize, f64)>,
    pub limit: f64,
}

#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub lbar: ConvexFunctionTable,
    pub hbar: ConvexFunctionTable,
    pub diagnostics: Vec<DirectionDiagnostic>,
    pub options: EffectiveOptions,
    pub spec_digest: u64,
    /// Shift `a` of the working Hamiltonian (added back as `+t a`).
    pub shift: f64,
}

impl EffectiveModel {
    pub fn dim(&self) -> usize {
        self.lbar.dim()
    }

    /// `H̄(p)` of the working Hamiltonian; `Err` outside the momentum box.
    pub fn hbar_at(&self, p: &[f64]) -> Result<f64> {
        let l = self.hbar.eval(p);
        if l.clamped {
            return domain(format!("momentum {p:?} is outside the tabulated box"));
        }
        Ok(l.value)
    }

    /// `L̄(v)`, `+inf` outside the velocity box.
    pub fn lbar_at(&self, v: &[f64]) -> f64 {
        let l = self.lbar.eval(v);
        if l.clamped {
            f64::INFINITY
        } else {
            l.value
        }
    }

    /// Largest `|v|` per axis where `L̄` is finite on the grid.
    pub fn velocity_reach(&self) -> f64 {
        self.options.velocity_box
    }

    /// Half-width of the set where `H̄` stays within `tol` of its minimum
    /// along the first momentum axis (other coordinates at zero).
    pub fn flat_piece_radius(&self, tol: f64) -> f64 {
        flat_piece_radius(&self.hbar, tol)
    }

    pub fn lbar_csv(&self) -> String {
        self.lbar.to_csv("lbar")
    }

    pub fn hbar_csv(&self) -> String {
        self.hbar.to_csv("hbar")
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from("# schema=homog-rays-v1\n");
        let d = self.dim();
        for i in 1..=d {
            let _ = write!(s, "v{i},");
        }
        s.push_str("n,g_n,limit\n");
        for diag in &self.diagnostics {
            for &(n, g) in &diag.levels {
                for v in &diag.velocity {
                    let _ = write!(s, "{v},");
                }
                let _ = writeln!(s, "{n},{g},{}", diag.limit);
            }
        }
        s
    }
}

/// See [`EffectiveModel::flat_piece_radius`]; the crossing of `min + tol`
/// is located by linear interpolation between nodes.
pub fn flat_piece_radius(hbar: &ConvexFunctionTable, tol: f64) -> f64 {
    let axis = hbar.grid.axes[0];
    let d = hbar.dim();
    let mut idx = vec![0usize; d];
    for k in 1..d {
        let a = hbar.grid.axes[k];
        idx[k] = ((0.0 - a.lo) / a.step()).round() as usize;
    }
    let line: Vec<(f64, f64)> = (0..axis.n)
        .map(|i| {
            idx[0] = i;
            (axis.node(i), hbar.value_at(&idx))
        })
        .collect();
    let min = line.iter().map(|&(_, h)| h).fold(f64::INFINITY, f64::min);
    let level = min + tol;
    let i0 = line.iter().position(|&(p, _)| p >= 0.0).unwrap_or(0);
    let mut radius = axis.hi;
    for i in i0..line.len() - 1 {
        let (p0, h0) = line[i];
        let (p1, h1) = line[i + 1];
        if h0 <= level && h1 > level {
            radius = p0 + (level - h0) / (h1 - h0) * (p1 - p0);
            break;
        }
    }
    radius
}

/// `L̄` from one long metric table, then `H̄` by the discrete transform.
pub fn build_effective_model(
    lagrangian: &LagrangianField,
    opts: &EffectiveOptions,
) -> Result<EffectiveModel> {
    let costs = StepCosts::new(lagrangian, &opts.disc)?;
    build_effective_model_from_costs(
        costs,
        opts,
        lagrangian.spec.digest(),
        lagrangian.spec.normalization_shift,
    )
}

pub fn build_effective_model_from_costs(
    costs: StepCosts,
    opts: &EffectiveOptions,
    spec_digest: u64,
    shift: f64,
) -> Result<EffectiveModel> {
    let d = opts.disc.dim;
    if opts.n_max < 2 {
        return config("effective model needs n_max >= 2");
    }
    if opts.velocity_points < 3 || opts.momentum_points < 3 {
        return config("velocity and momentum grids need at least 3 points per axis");
    }
    if opts.velocity_box > opts.disc.vmax {
        return config(format!(
            "velocity box {} exceeds the speed cap {}",
            opts.velocity_box, opts.disc.vmax
        ));
    }
    let cone = Cone::new(opts.disc.vmax)?;
    let table = metric_table_from_costs(
        costs,
        opts.n_max as f64,
        cone,
        spec_digest,
        Retention::IntegerTimes,
    )?;
    let vgrid = ProductGrid::cube(
        d,
        AxisGrid::new(-opts.velocity_box, opts.velocity_box, opts.velocity_points),
    );
    let mut values = vec![f64::INFINITY; vgrid.len()];
    let mut diagnostics = Vec::new();
    let mut err = None;
    for_each_multi(&vgrid.shape(), |idx| {
        if err.is_some() {
            return;
        }
        let v = vgrid.point(idx);
        let flat = vgrid.flat_index(idx);
        if !cone.contains(1.0, &v) {
            return;
        }
        match effective_metric(&table, 1.0, &v, opts.n_max) {
            Ok(ray) if ray.limit.is_finite() => {
                values[flat] = ray.limit;
                diagnostics.push(DirectionDiagnostic {
                    velocity: v,
                    levels: ray.levels,
                    limit: ray.limit,
                });
            }
            Ok(_) => {}
            Err(Error::Unreachable(_)) => {}
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let lbar = ConvexFunctionTable::new(vgrid, values, DualDomain::Velocity)?;
    let pb = opts.momentum_box;
    let hbar = legendre_transform_with(
        &lbar,
        &vec![(-pb, pb); d],
        &vec![opts.momentum_points; d],
        opts.method,
    )?;
    Ok(EffectiveModel {
        lbar,
        hbar,
        diagnostics,
        options: opts.clone(),
        spec_digest,
        shift,
    })
}

/// Result of the torus cell-problem iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEstimate {
    /// `-(w(T) - w(T/2)) / (T/2)` at the minimum over the torus.
    pub value: f64,
    /// `-min w(T) / T`, the plain long-time average.
    pub average: f64,
    /// `|value - average|` exceeded the tolerance: `T` is too short.
    pub flagged: bool,
}

/// `H̄(p) ≈ -w(T)/T` where `w` is the torus value function with running
/// cost `L(x, v) - p.v` and `w(0) = 0`.
pub fn cell_problem_oracle(
    lagrangian: &LagrangianField,
    disc: &Discretization,
    p: &[f64],
    t_long: usize,
) -> Result<CellEstimate> {
    let costs = StepCosts::new(lagrangian, disc)?;
    cell_problem_from_costs(&costs, p, t_long)
}

pub fn cell_problem_from_costs(
    costs: &StepCosts,
    p: &[f64],
    t_long: usize,
) -> Result<CellEstimate> {
    let disc = costs.disc;
    let d = disc.dim;
    if p.len() != d {
        return domain("momentum dimension does not match the lattice");
    }
    if t_long < 2 {
        return domain("t_long must be at least 2");
    }
    let tilted = costs.tilted(p);
    let n = disc.cells as i64;
    let r = tilted.stencil.radius;
    let torus = LatticeBox {
        lo: vec![0; d],
        hi: vec![n - 1; d],
    };
    let mut w = Layer::filled(torus.clone(), 0.0);
    let total = t_long * disc.steps;
    let mut half_min = 0.0;
    for k in 1..=total {
        let halo = crate::lattice::periodic_halo(&w, n, r);
        w = relax(&halo, torus.clone(), &tilted);
        if k == total / 2 {
            half_min = w.min();
        }
    }
    let end_min = w.min();
    let t = t_long as f64;
    let value = -(end_min - half_min) / (t - (total / 2) as f64 * disc.dt());
    let average = -end_min / t;
    let flagged = (value - average).abs() > 0.05;
    Ok(CellEstimate {
        value,
        average,
        flagged,
    })
}
