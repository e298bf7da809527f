//! The metric `m(t, x, y)`: least cost of a path from `x` to `y` in time
//! `t`, computed on the space-time lattice by value iteration from the
//! origin, `M(0, .) = +inf` except `M(0, 0) = 0`.

use std::fmt::Write as _;

use crate::error::{domain, Error, Result};
use crate::lattice::{
    argmin_offset, relax, Discretization, LatticeBox, Layer, Quadrature, StepCosts,
};
use crate::legendre::LagrangianField;

/// `{(t, x) : |x| <= speed * t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub speed: f64,
}

impl Cone {
    pub fn new(speed: f64) -> Result<Self> {
        if !(speed.is_finite() && speed > 0.0) {
            return domain("cone speed must be positive");
        }
        Ok(Cone { speed })
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        t >= 0.0 && norm(x) <= self.speed * t * (1.0 + 1e-12) + 1e-12
    }

    pub fn contains_lattice(&self, t: i64, x: &[i64]) -> bool {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        self.contains(t as f64, &xf)
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A lattice path with uniform time step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub dt: f64,
    pub dx: f64,
    /// Node positions in lattice units.
    pub nodes: Vec<Vec<i64>>,
    pub cost: f64,
    pub quadrature: Quadrature,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        self.nodes[i].iter().map(|&z| z as f64 * self.dx).collect()
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        (0..self.nodes.len()).map(|i| self.position(i)).collect()
    }

    /// Largest increment speed, i.e. the Lipschitz constant of the polyline.
    pub fn lipschitz(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1]
                    .iter()
                    .zip(&w[0])
                    .map(|(a, b)| (a - b) as f64 * self.dx)
                    .collect();
                norm(&d) / self.dt
            })
            .fold(0.0, f64::max)
    }

    /// Path cost re-evaluated from `L` with the recorded quadrature.
    pub fn recompute_cost(&self, lagrangian: &LagrangianField) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| {
                let a: Vec<f64> = w[0].iter().map(|&z| z as f64 * self.dx).collect();
                let b: Vec<f64> = w[1].iter().map(|&z| z as f64 * self.dx).collect();
                self.quadrature.segment_cost(lagrangian, &a, &b, self.dt)
            })
            .sum()
    }

    /// Path cost from a step-cost table (exactly the table arithmetic).
    pub fn cost_from_table(&self, costs: &StepCosts) -> Result<f64> {
        let mut total = 0.0;
        for w in self.nodes.windows(2) {
            let j: Vec<i64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            let ji = costs
                .stencil
                .index_of(&j)
                .ok_or_else(|| Error::Domain(format!("increment {j:?} exceeds the speed cap")))?;
            total += costs.cost(&w[1], ji);
        }
        Ok(total)
    }

    /// Increments in lattice units.
    pub fn increments(&self) -> Vec<Vec<i64>> {
        self.nodes
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
            .collect()
    }
}

/// Values `m(k dt, 0, z dx)` for every reachable lattice node up to the horizon.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub disc: Discretization,
    pub cone: Cone,
    pub spec_digest: u64,
    pub retention: Retention,
    layers: Vec<Layer>,
    costs: StepCosts,
}

/// Which time layers a table keeps after the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retention {
    /// Every layer; required for path extraction.
    #[default]
    All,
    /// Layers at integer times only; the others read as `+inf`.
    IntegerTimes,
}

impl MetricTable {
    pub fn dim(&self) -> usize {
        self.disc.dim
    }

    pub fn horizon_steps(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_steps() as f64 * self.disc.dt()
    }

    pub fn costs(&self) -> &StepCosts {
        &self.costs
    }

    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k]
    }

    /// `m(k dt, 0, z dx)`, `+inf` outside the cone or the horizon.
    pub fn value(&self, k: usize, z: &[i64]) -> f64 {
        if k >= self.layers.len() {
            return f64::INFINITY;
        }
        if !self.in_cone(k, z) {
            return f64::INFINITY;
        }
        self.layers[k].get(z)
    }

    fn in_cone(&self, k: usize, z: &[i64]) -> bool {
        let x: Vec<f64> = z.iter().map(|&v| v as f64 * self.disc.dx()).collect();
        self.cone.contains(k as f64 * self.disc.dt(), &x)
    }

    /// `f(t, x) = m(t, 0, x)` at an integer space-time point.
    pub fn f(&self, t: i64, x: &[i64]) -> f64 {
        if t < 0 {
            return f64::INFINITY;
        }
        let k = t as usize * self.disc.steps;
        let z: Vec<i64> = x.iter().map(|&v| v * self.disc.cells as i64).collect();
        self.value(k, &z)
    }

    /// Largest integer time with a stored layer.
    pub fn integer_horizon(&self) -> i64 {
        (self.horizon_steps() / self.disc.steps) as i64
    }

    /// Spatial Lipschitz estimate of `m(t, 0, .)` over finite neighbours in
    /// the last layer (per unit length).
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz_within(1.0)
    }

    /// Spatial Lipschitz constant of the last layer restricted to
    /// `|x| <= fraction * speed * t`.
    pub fn lipschitz_within(&self, fraction: f64) -> f64 {
        let k = self.horizon_steps();
        let reach = fraction * self.cone.speed * k as f64 * self.disc.dt();
        let layer = &self.layers[k];
        let d = self.dim();
        let dx = self.disc.dx();
        let mut lip: f64 = 0.0;
        for i in 0..layer.values.len() {
            let z = layer.bx.node(i);
            let a = self.value(k, &z);
            let x: Vec<f64> = z.iter().map(|&v| v as f64 * dx).collect();
            if !a.is_finite() || norm(&x) > reach + 1e-12 {
                continue;
            }
            let mut w = z.clone();
            for axis in 0..d {
                w[axis] += 1;
                let b = self.value(k, &w);
                if b.is_finite() {
                    lip = lip.max((b - a).abs() / dx);
                }
                w[axis] -= 1;
            }
        }
        lip
    }

    /// Lowers or raises one stored value (fault injection for the checks).
    pub fn corrupt(&mut self, k: usize, z: &[i64], delta: f64) {
        let v = self.layers[k].get(z);
        self.layers[k].set(z, v + delta);
    }

    pub fn memory_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.memory_bytes()).sum()
    }

    /// CSV export of every `stride`-th layer: `k, z1..zd, value` in lattice units.
    pub fn to_csv(&self, stride: usize) -> String {
        let mut s = String::new();
        let d = self.dim();
        let _ = writeln!(
            s,
            "# schema=homog-metric-v1 dt={} dx={} vmax={} quadrature={} spec={:016x}",
            self.disc.dt(),
            self.disc.dx(),
            self.disc.vmax,
            self.disc.quadrature.tag(),
            self.spec_digest
        );
        s.push('k');
        for i in 1..=d {
            let _ = write!(s, ",z{i}");
        }
        s.push_str(",value\n");
        let stride = stride.max(1);
        for k in (0..self.layers.len()).step_by(stride) {
            let layer = &self.layers[k];
            for i in 0..layer.values.len() {
                let z = layer.bx.node(i);
                let v = self.value(k, &z);
                if v.is_finite() {
                    let _ = write!(s, "{k}");
                    for c in &z {
                        let _ = write!(s, ",{c}");
                    }
                    let _ = writeln!(s, ",{v}");
                }
            }
        }
        s
    }
}

/// Value iteration from the origin up to `horizon` (a multiple of `dt`).
pub fn compute_metric_table(
    lagrangian: &LagrangianField,
    horizon: f64,
    cone: Cone,
    disc: &Discretization,
) -> Result<MetricTable> {
    let costs = StepCosts::new(lagrangian, disc)?;
    metric_table_from_costs(
        costs,
        horizon,
        cone,
        lagrangian.spec.digest(),
        Retention::All,
    )
}

pub fn metric_table_from_costs(
    costs: StepCosts,
    horizon: f64,
    cone: Cone,
    spec_digest: u64,
    retention: Retention,
) -> Result<MetricTable> {
    let disc = costs.disc;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return domain("horizon must be non-negative");
    }
    let ks = horizon * disc.steps as f64;
    let k_max = ks.round() as usize;
    if (ks - k_max as f64).abs() > 1e-6 {
        return domain(format!(
            "horizon {horizon} is not a multiple of dt = {}",
            disc.dt()
        ));
    }
    let d = disc.dim;
    let r = costs.stencil.radius;
    let mut layers = Vec::with_capacity(k_max + 1);
    let mut first = Layer::filled(LatticeBox::centered(d, 0), f64::INFINITY);
    first.values[0] = 0.0;
    let mut prev = first.clone();
    layers.push(first);
    let empty = LatticeBox {
        lo: vec![1; d],
        hi: vec![0; d],
    };
    for k in 1..=k_max {
        let bx = LatticeBox::centered(d, r * k as i64);
        let next = relax(&prev, bx, &costs);
        let keep = retention == Retention::All || k % disc.steps == 0;
        layers.push(if keep {
            next.clone()
        } else {
            Layer::filled(empty.clone(), f64::INFINITY)
        });
        prev = next;
    }
    Ok(MetricTable {
        disc,
        cone,
        spec_digest,
        retention,
        layers,
        costs,
    })
}

/// Backtracks the argmin choices from `(t, x)`; ties go to the
/// lexicographically smallest increment.
pub fn extract_minimizing_path(table: &MetricTable, t: f64, x: &[f64]) -> Result<DiscretePath> {
    let (k, z) = lattice_point(table, t, x)?;
    extract_lattice_path(table, k, &z)
}

pub fn extract_lattice_path(table: &MetricTable, k: usize, z: &[i64]) -> Result<DiscretePath> {
    if table.retention != Retention::All {
        return domain("path extraction needs a table that retains every layer");
    }
    let value = table.value(k, z);
    if !value.is_finite() {
        return Err(Error::Unreachable(format!(
            "m is infinite at step {k}, node {z:?}"
        )));
    }
    let mut nodes = vec![z.to_vec()];
    let mut cur = z.to_vec();
    for step in (1..=k).rev() {
        let ji = argmin_offset(
            &table.layers[step - 1],
            &table.layers[step],
            &cur,
            &table.costs,
        )
        .ok_or_else(|| Error::Unreachable(format!("backtracking failed at step {step}")))?;
        let j = table.costs.stencil.offsets[ji];
        for (c, jk) in cur.iter_mut().zip(j) {
            *c -= jk;
        }
        nodes.push(cur.clone());
    }
    nodes.reverse();
    Ok(DiscretePath {
        dt: table.disc.dt(),
        dx: table.disc.dx(),
        nodes,
        cost: value,
        quadrature: table.disc.quadrature,
    })
}

fn lattice_point(table: &MetricTable, t: f64, x: &[f64]) -> Result<(usize, Vec<i64>)> {
    if x.len() != table.dim() {
        return domain("point dimension does not match the table");
    }
    let ks = t * table.disc.steps as f64;
    let k = ks.round();
    if !(k >= 0.0) || (ks - k).abs() > 1e-9 * ks.max(1.0) {
        return domain(format!("t = {t} is not on the time lattice"));
    }
    let mut z = Vec::with_capacity(x.len());
    for &xi in x {
        let s = xi * table.disc.cells as f64;
        let r = s.round();
        if (s - r).abs() > 1e-9 * s.abs().max(1.0) {
            return domain(format!("x = {xi} is not on the spatial lattice"));
        }
        z.push(r as i64);
    }
    Ok((k as usize, z))
}

/// Rounds half-integers toward zero, everything else to nearest.
fn round_ties_to_zero(v: f64) -> i64 {
    let t = v.trunc();
    if ((v - t).abs() - 0.5).abs() < 1e-12 {
        t as i64
    } else {
        v.round() as i64
    }
}

/// `(ceil t, [x])` with ties rounded toward zero; coordinates that rounding
/// pushed away from the origin are pulled back one unit while the result
/// leaves the cone.
pub fn round_into_cone(t: f64, x: &[f64], cone: &Cone) -> Result<(i64, Vec<i64>)> {
    if !(t.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return domain("non-finite input to round_into_cone");
    }
    if t < 1.0 {
        return domain(format!("round_into_cone needs t >= 1, got {t}"));
    }
    if !cone.contains(t, x) {
        return domain("point lies outside the cone");
    }
    let tc = (t - 1e-12).ceil() as i64;
    let mut z: Vec<i64> = x.iter().map(|&v| round_ties_to_zero(v)).collect();
    while !cone.contains_lattice(tc, &z) {
        // the coordinate whose rounding moved it furthest away from zero
        let mut worst = None;
        let mut excess = 0.0;
        for (k, (&zk, &xk)) in z.iter().zip(x).enumerate() {
            let e = (zk as f64).abs() - xk.abs();
            if e > excess {
                excess = e;
                worst = Some(k);
            }
        }
        match worst {
            Some(k) => z[k] -= z[k].signum(),
            // truncation is inside since |trunc x| <= |x| <= C t <= C ceil t
            None => break,
        }
    }
    Ok((tc, z))
}

/// `m(t, x, y)` from a table of `m(., 0, .)`.
///
/// Integer `x` reduces exactly by periodicity to `m(t, 0, y - x)`, read by
/// interpolation between lattice nodes and time layers. Otherwise the
/// endpoints are rounded to `(ceil t, [x], [y])` first.
pub fn metric_point(table: &MetricTable, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = table.dim();
    if x.len() != d || y.len() != d {
        return domain("point dimension does not match the table");
    }
    if !t.is_finite() || t < 0.0 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return domain("non-finite or negative input to metric_point");
    }
    let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    if !table.cone.contains(t, &diff) {
        return domain(format!(
            "(t, y - x) = ({t}, {diff:?}) lies outside the cone"
        ));
    }
    let integral_x = x.iter().all(|v| (v - v.round()).abs() < 1e-9);
    let v = if integral_x {
        interpolate(table, t, &diff)
    } else {
        if t < 1.0 {
            return domain("non-integer base point needs t >= 1 for the rounding reduction");
        }
        let tc = (t - 1e-12).ceil() as i64;
        let rx: Vec<i64> = x.iter().map(|&v| round_ties_to_zero(v)).collect();
        let ry: Vec<i64> = y.iter().map(|&v| round_ties_to_zero(v)).collect();
        let rel: Vec<f64> = ry.iter().zip(&rx).map(|(a, b)| (a - b) as f64).collect();
        let z = if table.cone.contains(tc as f64, &rel) {
            ry.iter().zip(&rx).map(|(a, b)| a - b).collect()
        } else {
            round_into_cone(tc as f64, &diff, &table.cone)?.1
        };
        table.f(tc, &z)
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Unreachable(format!(
            "m({t}, {x:?}, {y:?}) is not covered by the table"
        )))
    }
}

/// Multilinear interpolation of `m(., 0, .)` in space, linear in time.
fn interpolate(table: &MetricTable, t: f64, x: &[f64]) -> f64 {
    let ks = t * table.disc.steps as f64;
    let k0 = ks.floor();
    let wt = ks - k0;
    let k0 = k0 as usize;
    let at_layer = |k: usize| -> f64 {
        let d = x.len();
        let mut base = vec![0i64; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let s = x[i] * table.disc.cells as f64;
            let r = s.round();
            if (s - r).abs() < 1e-9 {
                base[i] = r as i64;
                frac[i] = 0.0;
            } else {
                base[i] = s.floor() as i64;
                frac[i] = s - s.floor();
            }
        }
        let mut acc = 0.0;
        let mut z = vec![0i64; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                let bit = (corner >> i) & 1;
                z[i] = base[i] + bit as i64;
                w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
            }
            if w > 0.0 {
                acc += w * table.value(k, &z);
            }
        }
        acc
    };
    if wt < 1e-9 {
        at_layer(k0)
    } else if wt > 1.0 - 1e-9 {
        at_layer(k0 + 1)
    } else {
        (1.0 - wt) * at_layer(k0) + wt * at_layer(k0 + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianSpec;
    use crate::legendre::build_lagrangian;

    fn free_table(horizon: f64) -> MetricTable {
        let l = build_lagrangian(&HamiltonianSpec::constant(1, 1.0).unwrap()).unwrap();
        let disc = Discretization::new(1, 16, 8, 8.0).unwrap();
        compute_metric_table(&l, horizon, Cone::new(8.0).unwrap(), &disc).unwrap()
    }

    #[test]
    fn free_case_values() {
        let t = free_table(2.0);
        // lattice velocities 2 are exact, so the closed form is reproduced
        assert!((t.f(1, &[2]) - 2.0).abs() < 1e-12);
        assert!((t.f(2, &[4]) - 4.0).abs() < 1e-12);
        assert!((t.f(1, &[0]) - 1.0).abs() < 1e-12);
        assert!((t.f(2, &[4]) - 2.0 * t.f(1, &[2])).abs() < 1e-12);
    }

    #[test]
    fn values_respect_cost_floor() {
        let spec = HamiltonianSpec::cosine(1, 2.0, &[(1.0, &[1])]).unwrap();
        let l = build_lagrangian(&spec).unwrap();
        let disc = Discretization::new(1, 16, 8, 5.0).unwrap();
        let table = compute_metric_table(&l, 2.0, Cone::new(5.0).unwrap(), &disc).unwrap();
        for k in 0..=table.horizon_steps() {
            let layer = table.layer(k);
            for i in 0..layer.values.len() {
                let z = layer.bx.node(i);
                let v = table.value(k, &z);
                if v.is_finite() {
                    assert!(v >= k as f64 * disc.dt() - 1e-12);
                }
            }
        }
        // stationary upper bound
        assert!(table.f(2, &[0]) <= 2.0 * 3.0 + 1e-12);
    }

    #[test]
    fn path_extraction_examples() {
        let t = free_table(1.0);
        let l = build_lagrangian(&HamiltonianSpec::constant(1, 1.0).unwrap()).unwrap();
        let p = extract_minimizing_path(&t, 1.0, &[2.0]).unwrap();
        assert_eq!(p.nodes.first().unwrap(), &vec![0]);
        assert_eq!(p.nodes.last().unwrap(), &vec![32]);
        assert!((p.lipschitz() - 2.0).abs() < 1e-12);
        assert!(p.increments().iter().all(|j| j[0] == 4));
        assert_eq!(p.cost, t.f(1, &[2]));
        assert_eq!(p.cost_from_table(t.costs()).unwrap(), p.cost);
        assert!((p.recompute_cost(&l) - p.cost).abs() < 1e-9);

        let s = extract_minimizing_path(&t, 1.0, &[0.0]).unwrap();
        assert!(s.nodes.iter().all(|z| z[0] == 0));
        assert!((s.cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let t = free_table(1.0);
        assert!(matches!(
            extract_minimizing_path(&t, 1.0, &[20.0]),
            Err(Error::Unreachable(_))
        ));
        assert!(matches!(
            extract_minimizing_path(&t, 1.0, &[0.01]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rounding_examples() {
        let cone = Cone::new(2.0).unwrap();
        assert_eq!(
            round_into_cone(3.0, &[2.0, 1.0], &cone).unwrap(),
            (3, vec![2, 1])
        );
        assert_eq!(
            round_into_cone(2.2, &[0.6, -0.2], &cone).unwrap(),
            (3, vec![1, 0])
        );
        assert_eq!(
            round_into_cone(1.0, &[2.0, 0.0], &cone).unwrap(),
            (1, vec![2, 0])
        );
        assert!(round_into_cone(0.5, &[0.1, 0.0], &cone).is_err());
        // ties go toward zero
        assert_eq!(
            round_into_cone(2.0, &[0.5, -1.5], &cone).unwrap().1,
            vec![0, -1]
        );
    }

    #[test]
    fn rounding_pulls_back_into_cone() {
        let cone = Cone::new(1.0).unwrap();
        // nearest rounding of 1.6 gives 2 > 1 * ceil(1.0)
        let (t, z) = round_into_cone(1.0, &[0.8, 0.55], &cone).unwrap();
        assert_eq!(t, 1);
        assert!(cone.contains_lattice(t, &z), "{z:?}");
    }

    #[test]
    fn metric_point_examples() {
        let spec = HamiltonianSpec::cosine(1, 2.0, &[(1.0, &[1])]).unwrap();
        let l = build_lagrangian(&spec).unwrap();
        let disc = Discretization::new(1, 16, 8, 5.0).unwrap();
        let table = compute_metric_table(&l, 2.0, Cone::new(5.0).unwrap(), &disc).unwrap();
        let a = metric_point(&table, 1.0, &[5.0], &[7.0]).unwrap();
        assert_eq!(a, table.f(1, &[2]));
        let b = metric_point(&table, 1.5, &[-3.0], &[-1.75]).unwrap();
        assert_eq!(b, metric_point(&table, 1.5, &[0.0], &[1.25]).unwrap());
        assert!(metric_point(&table, 1.0, &[0.0], &[6.0]).is_err());

        let free = free_table(1.0);
        let c = metric_point(&free, 1.0, &[0.5], &[2.5]).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_header_records_resolution() {
        let t = free_table(1.0);
        let csv = t.to_csv(8);
        assert!(csv.starts_with("# schema=homog-metric-v1 dt=0.125 dx=0.0625 vmax=8"));
        assert!(csv.lines().nth(1).unwrap() == "k,z1,value");
    }
}
