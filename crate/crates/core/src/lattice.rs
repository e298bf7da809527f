//! Space-time lattice dynamic programming.
//!
//! Space is discretized with spacing `dx = 1/cells` and time with
//! `dt = 1/steps`, so integer translations and integer times are lattice
//! symmetries. One step moves a node by an offset `j` from the stencil
//! `|j| dx <= vmax dt` at cost `dt * L(segment, j dx / dt)`, and the cost
//! only depends on the arrival node through its residue modulo `cells`.

use rayon::prelude::*;

use crate::error::{config, Result};
use crate::legendre::LagrangianField;

/// Quadrature for the running cost of one lattice step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `L` at the segment midpoint.
    Midpoint,
    /// Three-point Gauss-Legendre rule along the segment.
    #[default]
    Gauss3,
}

impl Quadrature {
    pub fn tag(&self) -> &'static str {
        match self {
            Quadrature::Midpoint => "midpoint",
            Quadrature::Gauss3 => "gauss3",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "midpoint" => Some(Quadrature::Midpoint),
            "gauss3" => Some(Quadrature::Gauss3),
            _ => None,
        }
    }

    /// `dt * avg_{segment} L(., v)` for the straight segment `start -> end`.
    pub fn segment_cost(
        &self,
        lagrangian: &LagrangianField,
        start: &[f64],
        end: &[f64],
        dt: f64,
    ) -> f64 {
        let d = start.len();
        let mut v = [0.0; 3];
        for k in 0..d {
            v[k] = (end[k] - start[k]) / dt;
        }
        let v = &v[..d];
        let mut x = [0.0; 3];
        let mut at = |s: f64| {
            for k in 0..d {
                x[k] = (start[k] + s * (end[k] - start[k])).rem_euclid(1.0);
            }
            lagrangian.eval(&x[..d], v)
        };
        match self {
            Quadrature::Midpoint => dt * at(0.5),
            Quadrature::Gauss3 => {
                let r = 0.5 * (3.0f64 / 5.0).sqrt();
                let w = dt / 18.0;
                w * (5.0 * at(0.5 - r) + 8.0 * at(0.5) + 5.0 * at(0.5 + r))
            }
        }
    }
}

/// Lattice resolution and speed cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub dim: usize,
    /// Nodes per unit length, `dx = 1/cells`.
    pub cells: usize,
    /// Steps per unit time, `dt = 1/steps`.
    pub steps: usize,
    pub vmax: f64,
    pub quadrature: Quadrature,
}

impl Discretization {
    pub fn new(dim: usize, cells: usize, steps: usize, vmax: f64) -> Result<Self> {
        let d = Discretization {
            dim,
            cells,
            steps,
            vmax,
            quadrature: Quadrature::default(),
        };
        d.validate()?;
        Ok(d)
    }

    /// From spacings; both must be reciprocals of integers.
    pub fn from_spacings(dim: usize, dx: f64, dt: f64, vmax: f64) -> Result<Self> {
        let cells = reciprocal_integer(dx, "grid.dx")?;
        let steps = reciprocal_integer(dt, "grid.dt")?;
        Self::new(dim, cells, steps, vmax)
    }

    pub fn with_quadrature(mut self, q: Quadrature) -> Self {
        self.quadrature = q;
        self
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Same speed cap, both spacings halved.
    pub fn refined(&self) -> Self {
        Discretization {
            cells: self.cells * 2,
            steps: self.steps * 2,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return config(format!("lattice dimension must be 1..=3, got {}", self.dim));
        }
        if self.cells == 0 || self.steps == 0 {
            return config("grid.dx and grid.dt must be positive");
        }
        if !(self.vmax.is_finite() && self.vmax > 0.0) {
            return config("vmax must be positive and finite");
        }
        if self.vmax * self.dt() < self.dx() * (1.0 - 1e-12) {
            return config(format!(
                "vmax*dt = {} is below dx = {}: no neighbour is reachable",
                self.vmax * self.dt(),
                self.dx()
            ));
        }
        Ok(())
    }

    /// Largest per-axis offset of one step.
    pub fn stencil_radius(&self) -> i64 {
        (self.vmax * self.cells as f64 / self.steps as f64 * (1.0 + 1e-12)).floor() as i64
    }

    pub fn stencil(&self) -> Stencil {
        Stencil::new(
            self.dim,
            self.stencil_radius(),
            self.vmax * self.cells as f64 / self.steps as f64,
        )
    }
}

fn reciprocal_integer(h: f64, key: &str) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return config(format!("{key} must be positive"));
    }
    let n = (1.0 / h).round();
    if n < 1.0 || ((1.0 / h) - n).abs() > 1e-6 * n {
        return config(format!("{key} = {h} is not the reciprocal of an integer"));
    }
    Ok(n as usize)
}

/// Step offsets in lattice units, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub dim: usize,
    pub radius: i64,
    pub offsets: Vec<[i64; 3]>,
}

impl Stencil {
    /// All integer `j` with `|j| <= reach` (Euclidean, lattice units).
    pub fn new(dim: usize, radius: i64, reach: f64) -> Self {
        let mut offsets = Vec::new();
        let r = radius;
        let reach2 = reach * reach * (1.0 + 1e-12);
        let range = |k: usize| if k < dim { -r..=r } else { 0..=0 };
        for a in range(0) {
            for b in range(1) {
                for c in range(2) {
                    let n2 = (a * a + b * b + c * c) as f64;
                    if n2 <= reach2 {
                        offsets.push([a, b, c]);
                    }
                }
            }
        }
        Stencil {
            dim,
            radius,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn index_of(&self, j: &[i64]) -> Option<usize> {
        let mut key = [0i64; 3];
        key[..j.len()].copy_from_slice(j);
        self.offsets.binary_search(&key).ok()
    }
}

/// Step costs indexed by offset and arrival residue.
#[derive(Debug, Clone)]
pub struct StepCosts {
    pub disc: Discretization,
    pub stencil: Stencil,
    /// `[j][residue prefix][residue last]`, see [`StepCosts::slice`].
    costs: Vec<f64>,
}

impl StepCosts {
    pub fn new(lagrangian: &LagrangianField, disc: &Discretization) -> Result<Self> {
        disc.validate()?;
        if lagrangian.dim() != disc.dim {
            return config("lagrangian and lattice dimensions differ");
        }
        let stencil = disc.stencil();
        if stencil.len() <= 1 {
            return config("empty reachable set: the stencil only contains the zero offset");
        }
        let d = disc.dim;
        let n = disc.cells;
        let nres = n.pow(d as u32);
        let dx = disc.dx();
        let dt = disc.dt();
        let mut costs = vec![0.0; stencil.len() * nres];
        costs
            .par_chunks_mut(nres)
            .zip(stencil.offsets.par_iter())
            .for_each(|(chunk, j)| {
                let mut end = [0.0; 3];
                let mut start = [0.0; 3];
                for (r, slot) in chunk.iter_mut().enumerate() {
                    let mut rem = r;
                    for k in (0..d).rev() {
                        let rk = rem % n;
                        rem /= n;
                        end[k] = rk as f64 * dx;
                        start[k] = end[k] - j[k] as f64 * dx;
                    }
                    *slot = disc
                        .quadrature
                        .segment_cost(lagrangian, &start[..d], &end[..d], dt);
                }
            });
        Ok(StepCosts {
            disc: *disc,
            stencil,
            costs,
        })
    }

    /// Costs for offset `j` and the residue prefix (all axes but the last),
    /// indexed by the residue of the last axis.
    #[inline]
    pub fn slice(&self, j: usize, prefix_residue: usize) -> &[f64] {
        let n = self.disc.cells;
        let per_j = n.pow(self.disc.dim as u32);
        let base = j * per_j + prefix_residue * n;
        &self.costs[base..base + n]
    }

    /// Cost of the step ending at lattice node `z` with offset index `j`.
    pub fn cost(&self, z: &[i64], j: usize) -> f64 {
        let n = self.disc.cells as i64;
        let d = self.disc.dim;
        let mut prefix = 0usize;
        for &zk in &z[..d - 1] {
            prefix = prefix * n as usize + zk.rem_euclid(n) as usize;
        }
        self.slice(j, prefix)[z[d - 1].rem_euclid(n) as usize]
    }

    /// Same table with `c(j) - p . j dx` (tilted costs for the cell problem).
    pub fn tilted(&self, p: &[f64]) -> StepCosts {
        let mut out = self.clone();
        let per_j = self.disc.cells.pow(self.disc.dim as u32);
        let dx = self.disc.dx();
        for (ji, j) in self.stencil.offsets.iter().enumerate() {
            let shift: f64 = p.iter().zip(j).map(|(pk, &jk)| pk * jk as f64 * dx).sum();
            for c in &mut out.costs[ji * per_j..(ji + 1) * per_j] {
                *c -= shift;
            }
        }
        out
    }

    /// Same table scaled by `s` (for `eps * m` accumulation).
    pub fn scaled(&self, s: f64) -> StepCosts {
        let mut out = self.clone();
        out.costs.iter_mut().for_each(|c| *c *= s);
        out
    }
}

/// Inclusive box of lattice nodes, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl LatticeBox {
    pub fn centered(dim: usize, radius: i64) -> Self {
        LatticeBox {
            lo: vec![-radius; dim],
            hi: vec![radius; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, k: usize) -> usize {
        (self.hi[k] - self.lo[k] + 1).max(0) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|k| self.side(k)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, z: &[i64]) -> bool {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn index(&self, z: &[i64]) -> Option<usize> {
        if !self.contains(z) {
            return None;
        }
        let mut idx = 0usize;
        for k in 0..self.dim() {
            idx = idx * self.side(k) + (z[k] - self.lo[k]) as usize;
        }
        Some(idx)
    }

    pub fn node(&self, mut idx: usize) -> Vec<i64> {
        let d = self.dim();
        let mut z = vec![0; d];
        for k in (0..d).rev() {
            let s = self.side(k);
            z[k] = self.lo[k] + (idx % s) as i64;
            idx /= s;
        }
        z
    }

    pub fn grown(&self, r: i64) -> Self {
        LatticeBox {
            lo: self.lo.iter().map(|v| v - r).collect(),
            hi: self.hi.iter().map(|v| v + r).collect(),
        }
    }

    pub fn intersect(&self, other: &LatticeBox) -> Self {
        LatticeBox {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| *a.max(b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| *a.min(b))
                .collect(),
        }
    }

    /// Number of nodes per row (the last axis).
    pub fn row_len(&self) -> usize {
        self.side(self.dim() - 1)
    }
}

/// Values on a lattice box; nodes outside the box read as `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub bx: LatticeBox,
    pub values: Vec<f64>,
}

impl Layer {
    pub fn filled(bx: LatticeBox, v: f64) -> Self {
        let n = bx.len();
        Layer {
            bx,
            values: vec![v; n],
        }
    }

    pub fn from_fn(bx: LatticeBox, f: impl Fn(&[i64]) -> f64) -> Self {
        let values = (0..bx.len()).map(|i| f(&bx.node(i))).collect();
        Layer { bx, values }
    }

    pub fn get(&self, z: &[i64]) -> f64 {
        match self.bx.index(z) {
            Some(i) => self.values[i],
            None => f64::INFINITY,
        }
    }

    pub fn set(&mut self, z: &[i64], v: f64) {
        if let Some(i) = self.bx.index(z) {
            self.values[i] = v;
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn memory_bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<f64>()
    }
}

/// One dynamic-programming step:
/// `next(z) = min_j prev(z - j) + cost(z, j)` over the nodes of `next_box`.
pub fn relax(prev: &Layer, next_box: LatticeBox, costs: &StepCosts) -> Layer {
    let d = next_box.dim();
    let n = costs.disc.cells as i64;
    let row = next_box.row_len();
    let mut out = Layer::filled(next_box, f64::INFINITY);
    if row == 0 || out.values.is_empty() {
        return out;
    }
    let nb = out.bx.clone();
    let pb = &prev.bx;
    let prow_len = pb.row_len();
    let offsets = &costs.stencil.offsets;
    out.values
        .par_chunks_mut(row)
        .enumerate()
        .for_each(|(ri, orow)| {
            // prefix coordinates of this row
            let mut prefix = [0i64; 3];
            let mut rem = ri;
            for k in (0..d - 1).rev() {
                let s = nb.side(k);
                prefix[k] = nb.lo[k] + (rem % s) as i64;
                rem /= s;
            }
            let mut prefix_res = 0usize;
            for &pk in &prefix[..d - 1] {
                prefix_res = prefix_res * n as usize + pk.rem_euclid(n) as usize;
            }
            let nlo = nb.lo[d - 1];
            let nhi = nb.hi[d - 1];
            for (ji, j) in offsets.iter().enumerate() {
                // source row prefix
                let mut pidx = 0usize;
                let mut inside = true;
                for k in 0..d - 1 {
                    let w = prefix[k] - j[k];
                    if w < pb.lo[k] || w > pb.hi[k] {
                        inside = false;
                        break;
                    }
                    pidx = pidx * pb.side(k) + (w - pb.lo[k]) as usize;
                }
                if !inside {
                    continue;
                }
                let jl = j[d - 1];
                let z0 = nlo.max(pb.lo[d - 1] + jl);
                let z1 = nhi.min(pb.hi[d - 1] + jl);
                if z0 > z1 {
                    continue;
                }
                let prow = &prev.values[pidx * prow_len..(pidx + 1) * prow_len];
                let c = costs.slice(ji, prefix_res);
                let mut z = z0;
                while z <= z1 {
                    let r = z.rem_euclid(n) as usize;
                    let len = ((n as usize - r) as i64).min(z1 - z + 1) as usize;
                    let o0 = (z - nlo) as usize;
                    let p0 = (z - jl - pb.lo[d - 1]) as usize;
                    for ((o, &p), &cc) in orow[o0..o0 + len]
                        .iter_mut()
                        .zip(&prow[p0..p0 + len])
                        .zip(&c[r..r + len])
                    {
                        let cand = p + cc;
                        if cand < *o {
                            *o = cand;
                        }
                    }
                    z += len as i64;
                }
            }
        });
    out
}

/// The offset index of the step that produced `next(z)`: the
/// lexicographically smallest `j` whose candidate equals the stored value.
pub fn argmin_offset(prev: &Layer, next: &Layer, z: &[i64], costs: &StepCosts) -> Option<usize> {
    let target = next.get(z);
    if !target.is_finite() {
        return None;
    }
    let d = z.len();
    let mut w = [0i64; 3];
    for (ji, j) in costs.stencil.offsets.iter().enumerate() {
        for k in 0..d {
            w[k] = z[k] - j[k];
        }
        let p = prev.get(&w[..d]);
        if p.is_finite() && p + costs.cost(z, ji) == target {
            return Some(ji);
        }
    }
    None
}

/// Torus layer `[0, cells)^d` extended periodically by `halo` nodes.
pub fn periodic_halo(torus: &Layer, cells: i64, halo: i64) -> Layer {
    let d = torus.bx.dim();
    let bx = LatticeBox {
        lo: vec![-halo; d],
        hi: vec![cells - 1 + halo; d],
    };
    Layer::from_fn(bx, |z| {
        let w: Vec<i64> = z.iter().map(|v| v.rem_euclid(cells)).collect();
        torus.get(&w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianSpec;
    use crate::legendre::build_lagrangian;

    fn free_costs(cells: usize, steps: usize, vmax: f64) -> StepCosts {
        let l = build_lagrangian(&HamiltonianSpec::constant(1, 1.0).unwrap()).unwrap();
        StepCosts::new(&l, &Discretization::new(1, cells, steps, vmax).unwrap()).unwrap()
    }

    #[test]
    fn spacings_must_be_reciprocal_integers() {
        assert!(Discretization::from_spacings(1, 0.25, 0.125, 4.0).is_ok());
        assert!(matches!(
            Discretization::from_spacings(1, 0.3, 0.125, 4.0),
            Err(crate::Error::Config(_))
        ));
        // vmax * dt < dx
        assert!(Discretization::new(1, 4, 8, 1.0).is_err());
    }

    #[test]
    fn stencil_is_sorted_and_capped() {
        let s = Stencil::new(2, 2, 2.0);
        assert!(s.offsets.windows(2).all(|w| w[0] < w[1]));
        assert!(s.index_of(&[2, 0]).is_some());
        assert!(s.index_of(&[2, 1]).is_none());
        assert_eq!(s.len(), 13);
    }

    #[test]
    fn free_step_cost_is_exact() {
        let c = free_costs(4, 2, 4.0);
        // offset +2 over dt = 1/2: v = 1, cost = (1/4 + 1)/2
        let j = c.stencil.index_of(&[2]).unwrap();
        assert!((c.cost(&[3], j) - 0.625).abs() < 1e-14);
        assert!((c.cost(&[-5], j) - 0.625).abs() < 1e-14);
    }

    #[test]
    fn relax_matches_brute_force() {
        let spec = HamiltonianSpec::cosine(2, 3.0, &[(1.0, &[1, 0]), (0.5, &[1, 1])]).unwrap();
        let l = build_lagrangian(&spec).unwrap();
        let disc = Discretization::new(2, 4, 2, 3.0).unwrap();
        let costs = StepCosts::new(&l, &disc).unwrap();
        let prev = Layer::from_fn(LatticeBox::centered(2, 3), |z| {
            (z[0] * 3 + z[1]) as f64 * 0.1
        });
        let nb = LatticeBox {
            lo: vec![-4, -2],
            hi: vec![3, 5],
        };
        let next = relax(&prev, nb.clone(), &costs);
        for i in 0..nb.len() {
            let z = nb.node(i);
            let mut best = f64::INFINITY;
            for (ji, j) in costs.stencil.offsets.iter().enumerate() {
                let w = [z[0] - j[0], z[1] - j[1]];
                best = best.min(prev.get(&w) + costs.cost(&z, ji));
            }
            assert_eq!(next.get(&z), best, "node {z:?}");
            if best.is_finite() {
                let ji = argmin_offset(&prev, &next, &z, &costs).unwrap();
                let j = costs.stencil.offsets[ji];
                assert_eq!(
                    prev.get(&[z[0] - j[0], z[1] - j[1]]) + costs.cost(&z, ji),
                    best
                );
            }
        }
    }

    #[test]
    fn tilt_and_scale() {
        let c = free_costs(4, 2, 4.0);
        let j = c.stencil.index_of(&[2]).unwrap();
        let t = c.tilted(&[1.0]);
        assert!((t.cost(&[0], j) - (0.625 - 0.5)).abs() < 1e-14);
        let s = c.scaled(0.5);
        assert!((s.cost(&[0], j) - 0.3125).abs() < 1e-14);
    }

    #[test]
    fn halo_wraps() {
        let torus = Layer::from_fn(
            LatticeBox {
                lo: vec![0],
                hi: vec![3],
            },
            |z| z[0] as f64,
        );
        let h = periodic_halo(&torus, 4, 2);
        assert_eq!(h.get(&[-1]), 3.0);
        assert_eq!(h.get(&[5]), 1.0);
    }
}
