//! Solutions of the oscillatory problem `u_t + H(x/ε, Du) = 0` and of the
//! effective problem `ū_t + H̄(Dū) = 0`.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::effective::EffectiveModel;
use crate::error::{config, domain, Result};
use crate::hamiltonian::{golden_section_min, HamiltonianSpec};
use crate::lattice::{relax, Discretization, LatticeBox, Layer, StepCosts};
use crate::legendre::{for_each_multi, LagrangianField};
use crate::metric::norm;

/// A Gaussian bump `amplitude * exp(-|x - center|^2 / width^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

#[derive(Clone)]
pub enum InitialKind {
    /// `scale * |x|`.
    Cone { scale: f64 },
    /// `p . x`.
    Affine { p: Vec<f64> },
    /// Sum of bumps plus `slope * |x|`.
    Bumps { slope: f64, bumps: Vec<Bump> },
    /// Arbitrary evaluator with a caller-certified Lipschitz constant.
    Custom {
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        lipschitz: f64,
        tag: String,
    },
}

impl fmt::Debug for InitialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialKind::Cone { scale } => write!(f, "Cone {{ scale: {scale} }}"),
            InitialKind::Affine { p } => write!(f, "Affine {{ p: {p:?} }}"),
            InitialKind::Bumps { slope, bumps } => {
                write!(f, "Bumps {{ slope: {slope}, bumps: {bumps:?} }}")
            }
            InitialKind::Custom { lipschitz, tag, .. } => {
                write!(f, "Custom {{ tag: {tag}, lipschitz: {lipschitz} }}")
            }
        }
    }
}

/// Initial data `u₀` with a certified Lipschitz constant.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub kind: InitialKind,
    /// Constant added to every value.
    pub offset: f64,
}

impl InitialData {
    pub fn cone(scale: f64) -> Self {
        InitialData {
            kind: InitialKind::Cone { scale },
            offset: 0.0,
        }
    }

    pub fn affine(p: &[f64]) -> Self {
        InitialData {
            kind: InitialKind::Affine { p: p.to_vec() },
            offset: 0.0,
        }
    }

    pub fn zero() -> Self {
        InitialData::cone(0.0)
    }

    pub fn bumps(slope: f64, bumps: Vec<Bump>) -> Self {
        InitialData {
            kind: InitialKind::Bumps { slope, bumps },
            offset: 0.0,
        }
    }

    pub fn custom(
        tag: &str,
        lipschitz: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        InitialData {
            kind: InitialKind::Custom {
                f: Arc::new(f),
                lipschitz,
                tag: tag.to_string(),
            },
            offset: 0.0,
        }
    }

    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset += c;
        self
    }

    pub fn tag(&self) -> String {
        match &self.kind {
            InitialKind::Cone { .. } => "cone".into(),
            InitialKind::Affine { .. } => "affine".into(),
            InitialKind::Bumps { .. } => "bumps".into(),
            InitialKind::Custom { tag, .. } => tag.clone(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = match &self.kind {
            InitialKind::Cone { scale } => scale * norm(x),
            InitialKind::Affine { p } => p.iter().zip(x).map(|(a, b)| a * b).sum(),
            InitialKind::Bumps { slope, bumps } => {
                slope * norm(x)
                    + bumps
                        .iter()
                        .map(|b| {
                            let r2: f64 = x
                                .iter()
                                .zip(&b.center)
                                .map(|(a, c)| (a - c) * (a - c))
                                .sum();
                            b.amplitude * (-r2 / (b.width * b.width)).exp()
                        })
                        .sum::<f64>()
            }
            InitialKind::Custom { f, .. } => f(x),
        };
        v + self.offset
    }

    /// Certified bound on `Lip(u₀)`.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            InitialKind::Cone { scale } => scale.abs(),
            InitialKind::Affine { p } => norm(p),
            InitialKind::Bumps { slope, bumps } => {
                // max |d/dr a exp(-r^2/w^2)| = |a| sqrt(2) e^{-1/2} / w
                slope.abs()
                    + bumps
                        .iter()
                        .map(|b| {
                            b.amplitude.abs() * std::f64::consts::SQRT_2 * (-0.5f64).exp() / b.width
                        })
                        .sum::<f64>()
            }
            InitialKind::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// Largest `|u₀(x) - u₀(y)| / |x - y|` over random pairs in `[-r, r]^d`.
    pub fn sampled_lipschitz(&self, dim: usize, radius: f64, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
            let dxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let r = norm(&dxy);
            if r > 1e-12 {
                worst = worst.max((self.eval(&x) - self.eval(&y)).abs() / r);
            }
        }
        worst
    }
}

/// Solution values at a list of points.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub t: f64,
    /// `0` for the effective solution.
    pub eps: f64,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Shift `a` already added back as `t a`.
    pub shift: f64,
    pub resolution: String,
}

impl SolutionField {
    pub fn sup_distance(&self, other: &SolutionField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest difference quotient between distinct points.
    pub fn lipschitz(&self) -> f64 {
        let mut lip: f64 = 0.0;
        for i in 0..self.points.len() {
            for j in i + 1..self.points.len() {
                let d: Vec<f64> = self.points[i]
                    .iter()
                    .zip(&self.points[j])
                    .map(|(a, b)| a - b)
                    .collect();
                let r = norm(&d);
                if r > 1e-12 {
                    lip = lip.max((self.values[i] - self.values[j]).abs() / r);
                }
            }
        }
        lip
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# schema=homog-solution-v1 eps={} t={} shift={} resolution={}",
            self.eps, self.t, self.shift, self.resolution
        );
        let d = self.points.first().map_or(1, |p| p.len());
        for i in 1..=d {
            let _ = write!(s, "y{i},");
        }
        s.push_str("u\n");
        for (p, v) in self.points.iter().zip(&self.values) {
            for c in p {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{v}");
        }
        s
    }
}

/// `33`-style target sets: `count` points evenly spanning `[-r, r]` on the
/// first axis (other coordinates zero).
pub fn line_targets(dim: usize, count: usize, r: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let mut y = vec![0.0; dim];
            y[0] = if count == 1 {
                0.0
            } else {
                -r + 2.0 * r * i as f64 / (count - 1) as f64
            };
            y
        })
        .collect()
}

/// `u^ε(t, y) = inf_x u₀(x) + ε m(t/ε, x/ε, y/ε) + t a` on the lattice of
/// spacing `ε dx`, by forward value iteration from `u₀`.
pub fn solve_oscillatory(
    u0: &InitialData,
    lagrangian: &LagrangianField,
    disc: &Discretization,
    eps: f64,
    t: f64,
    targets: &[Vec<f64>],
) -> Result<SolutionField> {
    let costs = StepCosts::new(lagrangian, disc)?;
    solve_oscillatory_from_costs(
        u0,
        &costs,
        lagrangian.spec.normalization_shift,
        eps,
        t,
        targets,
    )
}

pub fn solve_oscillatory_from_costs(
    u0: &InitialData,
    costs: &StepCosts,
    shift: f64,
    eps: f64,
    t: f64,
    targets: &[Vec<f64>],
) -> Result<SolutionField> {
    let disc = costs.disc;
    let d = disc.dim;
    if !(eps > 0.0 && eps <= 1.0) {
        return domain(format!("eps must lie in (0, 1], got {eps}"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return domain("t must be positive");
    }
    if targets
        .iter()
        .any(|y| y.len() != d || y.iter().any(|v| !v.is_finite()))
    {
        return domain("targets must be finite points of the lattice dimension");
    }
    let ks = t / eps * disc.steps as f64;
    let k_total = ks.round();
    if (ks - k_total).abs() > 1e-6 * ks.max(1.0) {
        return config(format!(
            "horizon t/eps = {} is not a multiple of dt = {}; choose t/eps on the time lattice",
            t / eps,
            disc.dt()
        ));
    }
    let k_total = k_total as usize;
    let h = eps * disc.dx();
    // lattice coordinates of the targets and the box that holds their corners
    let scaled: Vec<Vec<f64>> = targets
        .iter()
        .map(|y| y.iter().map(|v| v / h).collect())
        .collect();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for s in &scaled {
        for k in 0..d {
            lo[k] = lo[k].min(s[k].floor() as i64);
            hi[k] = hi[k].max(s[k].ceil() as i64);
        }
    }
    if targets.is_empty() {
        lo = vec![0; d];
        hi = vec![0; d];
    }
    let final_box = LatticeBox { lo, hi };
    let r = costs.stencil.radius;
    let step_costs = costs.scaled(eps);
    let start_box = final_box.grown(r * k_total as i64);
    let mut layer = Layer::from_fn(start_box, |z| {
        let x: Vec<f64> = z.iter().map(|&zk| zk as f64 * h).collect();
        u0.eval(&x)
    });
    for k in 1..=k_total {
        let bx = final_box.grown(r * (k_total - k) as i64);
        layer = relax(&layer, bx, &step_costs);
    }
    let values = scaled
        .iter()
        .map(|s| interpolate_layer(&layer, s) + t * shift)
        .collect();
    Ok(SolutionField {
        t,
        eps,
        points: targets.to_vec(),
        values,
        shift,
        resolution: format!("dx={} dt={} vmax={}", disc.dx(), disc.dt(), disc.vmax),
    })
}

fn interpolate_layer(layer: &Layer, s: &[f64]) -> f64 {
    let d = s.len();
    let mut base = vec![0i64; d];
    let mut frac = vec![0.0; d];
    for k in 0..d {
        let r = s[k].round();
        if (s[k] - r).abs() < 1e-9 {
            base[k] = r as i64;
        } else {
            base[k] = s[k].floor() as i64;
            frac[k] = s[k] - s[k].floor();
        }
    }
    let mut acc = 0.0;
    let mut z = vec![0i64; d];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        for k in 0..d {
            let bit = (corner >> k) & 1;
            z[k] = base[k] + bit as i64;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
        }
        if w > 0.0 {
            acc += w * layer.get(&z);
        }
    }
    acc
}

/// `ū(t, y) = inf_x u₀(x) + t L̄((y - x)/t) + t a`: minimum over the
/// velocity grid, then golden-section refinement around the best node.
pub fn solve_effective(
    u0: &InitialData,
    model: &EffectiveModel,
    t: f64,
    targets: &[Vec<f64>],
) -> Result<SolutionField> {
    let d = model.dim();
    if !(t > 0.0 && t.is_finite()) {
        return domain("t must be positive");
    }
    if targets.iter().any(|y| y.len() != d) {
        return domain("target dimension does not match the effective model");
    }
    let grid = &model.lbar.grid;
    let shape = grid.shape();
    let values = targets
        .iter()
        .map(|y| {
            let objective = |v: &[f64]| {
                let x: Vec<f64> = y.iter().zip(v).map(|(yk, vk)| yk - t * vk).collect();
                u0.eval(&x) + t * model.lbar_at(v)
            };
            let mut best = f64::INFINITY;
            let mut arg = vec![0.0; d];
            for_each_multi(&shape, |idx| {
                let flat = grid.flat_index(idx);
                if !model.lbar.values[flat].is_finite() {
                    return;
                }
                let v = grid.point(idx);
                let val = objective(&v);
                if val < best {
                    best = val;
                    arg = v;
                }
            });
            // coordinate refinement inside the neighbouring cells
            for _ in 0..if d == 1 { 1 } else { 4 } {
                for k in 0..d {
                    let h = grid.axes[k].step();
                    let a = (arg[k] - h).max(grid.axes[k].lo);
                    let b = (arg[k] + h).min(grid.axes[k].hi);
                    let s = golden_section_min(
                        |s| {
                            let mut v = arg.clone();
                            v[k] = s;
                            objective(&v)
                        },
                        a,
                        b,
                        1e-10,
                    );
                    let mut w = arg.clone();
                    w[k] = s;
                    let val = objective(&w);
                    if val < best {
                        best = val;
                        arg = w;
                    }
                }
            }
            best + t * model.shift
        })
        .collect();
    Ok(SolutionField {
        t,
        eps: 0.0,
        points: targets.to_vec(),
        values,
        shift: model.shift,
        resolution: format!(
            "dx={} dt={} vmax={} n_max={}",
            model.options.disc.dx(),
            model.options.disc.dt(),
            model.options.disc.vmax,
            model.options.n_max
        ),
    })
}

/// Grid for the finite-difference oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub dx: f64,
    /// Time step; `None` picks `cfl * dx / (2 d P)`.
    pub dt: Option<f64>,
    pub cfl: f64,
}

impl FdGrid {
    pub fn new(dx: f64) -> Self {
        FdGrid {
            dx,
            dt: None,
            cfl: 0.8,
        }
    }
}

/// Monotone upwind (Godunov) scheme for `u_t + |Du|^2 - V(x/ε) = 0` on a
/// box large enough that the boundary cannot reach the targets.
pub fn solve_fd_oracle(
    u0: &InitialData,
    spec: &HamiltonianSpec,
    eps: f64,
    t: f64,
    targets: &[Vec<f64>],
    grid: &FdGrid,
) -> Result<SolutionField> {
    let d = spec.dimension;
    if !(eps > 0.0) || !(t > 0.0) || !(grid.dx > 0.0) {
        return domain("eps, t and dx must be positive");
    }
    if spec.momentum_cap.is_some() {
        return config("the finite-difference oracle supports the uncapped quadratic family only");
    }
    let osc = spec.max_working_potential() - spec.min_working_potential();
    // |p|^2 - V is conserved along characteristics
    let pmax = (u0.lipschitz().powi(2) + osc).sqrt().max(1e-3);
    let stable = grid.dx / (2.0 * d as f64 * pmax);
    let dt_req = grid.dt.unwrap_or(grid.cfl * stable);
    if dt_req > stable * (1.0 + 1e-12) {
        return config(format!(
            "CFL violated: dt = {dt_req} exceeds dx / (2 d P) = {stable}"
        ));
    }
    let n_steps = (t / dt_req).ceil() as usize;
    let dt = t / n_steps as f64;
    let reach = n_steps as i64 + 2;
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for y in targets {
        for k in 0..d {
            lo[k] = lo[k].min((y[k] / grid.dx).floor() as i64 - reach);
            hi[k] = hi[k].max((y[k] / grid.dx).ceil() as i64 + reach);
        }
    }
    let bx = LatticeBox { lo, hi };
    let len = bx.len();
    if len > 50_000_000 {
        return config("finite-difference box too large; coarsen dx or shorten t");
    }
    let mut u: Vec<f64> = (0..len)
        .map(|i| {
            let z = bx.node(i);
            let x: Vec<f64> = z.iter().map(|&v| v as f64 * grid.dx).collect();
            u0.eval(&x)
        })
        .collect();
    let pot: Vec<f64> = (0..len)
        .map(|i| {
            let z = bx.node(i);
            let x: Vec<f64> = z.iter().map(|&v| v as f64 * grid.dx / eps).collect();
            spec.working_potential(&x)
        })
        .collect();
    let strides: Vec<usize> = (0..d)
        .map(|k| {
            bx.hi[k + 1..]
                .iter()
                .zip(&bx.lo[k + 1..])
                .map(|(h, l)| (h - l + 1) as usize)
                .product()
        })
        .collect();
    let sides: Vec<usize> = (0..d).map(|k| bx.side(k)).collect();
    let mut next = u.clone();
    for _ in 0..n_steps {
        for i in 0..len {
            let mut rem = i;
            let mut g = 0.0;
            for k in 0..d {
                let pos = (rem / strides[k]) % sides[k];
                rem %= strides[k];
                // one-sided differences; boundary nodes extrapolate linearly
                let (pm, pp) = if pos == 0 {
                    let q = (u[i + strides[k]] - u[i]) / grid.dx;
                    (q, q)
                } else if pos + 1 == sides[k] {
                    let q = (u[i] - u[i - strides[k]]) / grid.dx;
                    (q, q)
                } else {
                    (
                        (u[i] - u[i - strides[k]]) / grid.dx,
                        (u[i + strides[k]] - u[i]) / grid.dx,
                    )
                };
                g += pm.max(0.0).powi(2).max(pp.min(0.0).powi(2));
            }
            next[i] = u[i] - dt * (g - pot[i]);
        }
        std::mem::swap(&mut u, &mut next);
    }
    let layer = Layer { bx, values: u };
    let values = targets
        .iter()
        .map(|y| {
            let s: Vec<f64> = y.iter().map(|v| v / grid.dx).collect();
            interpolate_layer(&layer, &s) + t * spec.normalization_shift
        })
        .collect();
    Ok(SolutionField {
        t,
        eps,
        points: targets.to_vec(),
        values,
        shift: spec.normalization_shift,
        resolution: format!("fd dx={} dt={dt}", grid.dx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::normalize;
    use crate::legendre::build_lagrangian;

    fn free1() -> (LagrangianField, Discretization) {
        let l = build_lagrangian(&HamiltonianSpec::constant(1, 1.0).unwrap()).unwrap();
        (l, Discretization::new(1, 8, 4, 6.0).unwrap())
    }

    #[test]
    fn zero_data_gives_t() {
        let (l, disc) = free1();
        let s = solve_oscillatory(
            &InitialData::zero(),
            &l,
            &disc,
            0.25,
            1.0,
            &line_targets(1, 5, 1.0),
        )
        .unwrap();
        for v in &s.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cone_data_free_case() {
        let (l, disc) = free1();
        for eps in [0.5, 0.25] {
            let s = solve_oscillatory(
                &InitialData::cone(1.0),
                &l,
                &disc,
                eps,
                1.0,
                &[vec![3.0], vec![0.0]],
            )
            .unwrap();
            assert!((s.values[0] - 3.0).abs() < 1e-9, "{:?}", s.values);
            // y = 0: inf |x| + x^2/4 + 1 = 1
            assert!((s.values[1] - 1.0).abs() < 1e-9, "{:?}", s.values);
        }
    }

    #[test]
    fn affine_data_plane_wave() {
        let (l, disc) = free1();
        let p = 1.0;
        let s = solve_oscillatory(
            &InitialData::affine(&[p]),
            &l,
            &disc,
            0.5,
            1.0,
            &line_targets(1, 3, 1.0),
        )
        .unwrap();
        for (y, v) in s.points.iter().zip(&s.values) {
            assert!((v - (p * y[0] - (p * p - 1.0))).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_is_added_back() {
        let (spec, a) = normalize(&HamiltonianSpec::constant(1, 0.0).unwrap());
        assert_eq!(a, -1.0);
        let l = build_lagrangian(&spec).unwrap();
        let disc = Discretization::new(1, 8, 4, 6.0).unwrap();
        // H = p^2 with zero data: u = 0
        let s = solve_oscillatory(&InitialData::zero(), &l, &disc, 0.5, 2.0, &[vec![0.0]]).unwrap();
        assert!(s.values[0].abs() < 1e-12);
    }

    #[test]
    fn off_lattice_horizon_is_a_config_error() {
        let (l, disc) = free1();
        let r = solve_oscillatory(&InitialData::zero(), &l, &disc, 0.3, 1.0, &[vec![0.0]]);
        assert!(matches!(r, Err(crate::Error::Config(_))));
    }

    #[test]
    fn fd_oracle_plane_wave_and_zero() {
        let spec = HamiltonianSpec::constant(1, 1.0).unwrap();
        let g = FdGrid::new(1.0 / 64.0);
        let s = solve_fd_oracle(
            &InitialData::affine(&[0.5]),
            &spec,
            0.5,
            1.0,
            &[vec![0.0], vec![0.5]],
            &g,
        )
        .unwrap();
        assert!((s.values[0] - 0.75).abs() < 1e-9);
        assert!((s.values[1] - 1.0).abs() < 1e-9);
        let z = solve_fd_oracle(&InitialData::zero(), &spec, 0.5, 1.0, &[vec![0.0]], &g).unwrap();
        assert!((z.values[0] - 1.0).abs() < 1e-9);
        let bad = FdGrid { dt: Some(1.0), ..g };
        assert!(matches!(
            solve_fd_oracle(
                &InitialData::affine(&[0.5]),
                &spec,
                0.5,
                1.0,
                &[vec![0.0]],
                &bad
            ),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn bump_lipschitz_bound_holds() {
        let u = InitialData::bumps(
            0.5,
            vec![
                Bump {
                    amplitude: 1.0,
                    center: vec![0.3, 0.0],
                    width: 0.5,
                },
                Bump {
                    amplitude: -0.4,
                    center: vec![-1.0, 1.0],
                    width: 0.3,
                },
            ],
        );
        assert!(u.sampled_lipschitz(2, 2.0, 2000, 7) <= u.lipschitz());
    }
}
