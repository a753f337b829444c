//! Level-set transport problems `∂_t φ + a(X)·∇_Y φ = 0` with inflow data on
//! `{0} x Ω`.
//!
//! Three formulations are supported, differing in which auxiliary variables
//! augment `x`:
//!
//! | formulation   | `Y`         | components |
//! |---------------|-------------|------------|
//! | balance law   | `(x, z)`    | 1          |
//! | HJ gradient   | `(x, p)`    | `d`        |
//! | HJ full       | `(x, z, p)` | `d + 1`    |

mod catalog;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{case_ids, catalog, catalog_listing, ex4_grad_s0, ex4_s0, CaseParams, CaseSpec, GrowthSpec};

/// A point `X = (t, Y)` of the augmented space-time domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint(pub Vec<f64>);

impl ExtendedPoint {
    pub fn new(t: f64, y: &[f64]) -> Self {
        let mut v = Vec::with_capacity(y.len() + 1);
        v.push(t);
        v.extend_from_slice(y);
        Self(v)
    }

    pub fn t(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    BalanceLaw,
    HjGradient,
    HjFull,
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::BalanceLaw => "balance_law",
            Formulation::HjGradient => "hj_gradient",
            Formulation::HjFull => "hj_full",
        })
    }
}

/// Space-time box `(0, T) x Ω` plus the sub-box where results are assessed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub t_final: f64,
    pub omega: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
}

impl DomainBox {
    pub fn new(t_final: f64, omega: Vec<[f64; 2]>) -> Result<Self> {
        let target = omega.clone();
        Self::with_target(t_final, omega, target)
    }

    pub fn with_target(t_final: f64, omega: Vec<[f64; 2]>, target: Vec<[f64; 2]>) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        if omega.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidParameter("every Ω interval needs lo < hi".into()));
        }
        if target.len() != omega.len() {
            return Err(Error::Dimension {
                context: "target box",
                expected: omega.len(),
                found: target.len(),
            });
        }
        let inside = target
            .iter()
            .zip(&omega)
            .all(|(t, o)| t[0] >= o[0] && t[1] <= o[1] && t[0] < t[1]);
        if !inside {
            return Err(Error::InvalidParameter("target box must lie inside Ω".into()));
        }
        Ok(Self {
            t_final,
            omega,
            target,
        })
    }

    /// Dimension of `Y`.
    pub fn y_dim(&self) -> usize {
        self.omega.len()
    }

    /// `|Ω|`, which is also `|Γ|`.
    pub fn omega_volume(&self) -> f64 {
        self.omega.iter().map(|[lo, hi]| hi - lo).product()
    }

    /// `|D| = T |Ω|`.
    pub fn space_time_volume(&self) -> f64 {
        self.t_final * self.omega_volume()
    }

    /// Whether `X = (t, Y)` lies in the closed box `[0, T] x Ω`.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.omega.len() + 1
            && x[0] >= 0.0
            && x[0] <= self.t_final
            && x[1..]
                .iter()
                .zip(&self.omega)
                .all(|(v, [lo, hi])| v >= lo && v <= hi)
    }
}

/// Separable Hamiltonian-type function `H(x, p)` with analytic gradients.
pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], p: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], p: &[f64], out: &mut [f64]);
    fn grad_p(&self, x: &[f64], p: &[f64], out: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `V(x) = |x|² / 2`.
    Harmonic,
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Potential::Zero => out.fill(0.0),
            Potential::Harmonic => out.copy_from_slice(x),
        }
    }
}

/// `H(x, p) = |p|²/2 + V(x)`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticHamiltonian {
    pub dim: usize,
    pub potential: Potential,
}

impl Hamiltonian for QuadraticHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + self.potential.value(x)
    }

    fn grad_x(&self, x: &[f64], _p: &[f64], out: &mut [f64]) {
        self.potential.gradient(x, out);
    }

    fn grad_p(&self, _x: &[f64], p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p);
    }
}

pub type VelocityFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Jump of one-dimensional initial data at `location`, from `left` to `right`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub location: f64,
    pub left: f64,
    pub right: f64,
}

/// A linear transport problem for `K` level-set components sharing one
/// velocity field.
#[derive(Clone)]
pub struct LevelSetProblem {
    formulation: Formulation,
    spatial_dim: usize,
    velocity: VelocityFn,
    boundary: Vec<ScalarFn>,
    /// Maps a foot point `x₀` to the initial state `Y₀` on the solution
    /// manifold.
    initial_state: VectorFn,
    jumps: Vec<Jump>,
    domain: DomainBox,
    names: Vec<String>,
    strict: bool,
}

impl fmt::Debug for LevelSetProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSetProblem")
            .field("formulation", &self.formulation)
            .field("spatial_dim", &self.spatial_dim)
            .field("components", &self.boundary.len())
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

fn spatial_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=d).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn check_domain(domain: &DomainBox, y_dim: usize) -> Result<()> {
    if domain.y_dim() != y_dim {
        return Err(Error::Dimension {
            context: "domain Ω dimension",
            expected: y_dim,
            found: domain.y_dim(),
        });
    }
    Ok(())
}

/// Balance law `u_t + F(u)·∇u + q(x, u) = 0`: `Y = (x, z)`, velocity
/// `(F(z), −q(x, z))`, data `z − u₀(x)`.
pub fn make_balance_law(
    spatial_dim: usize,
    flux: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    source: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    u0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    domain: DomainBox,
) -> Result<LevelSetProblem> {
    let d = spatial_dim;
    check_domain(&domain, d + 1)?;
    let source = Arc::new(source);
    let u0 = Arc::new(u0);
    let velocity: VelocityFn = {
        let source = source.clone();
        Arc::new(move |x: &[f64], a: &mut [f64]| {
            let z = x[1 + d];
            flux(z, &mut a[..d]);
            a[d] = -source(&x[1..=d], z);
        })
    };
    let g: ScalarFn = {
        let u0 = u0.clone();
        Arc::new(move |y: &[f64]| y[d] - u0(&y[..d]))
    };
    let initial_state: VectorFn = Arc::new(move |x0: &[f64], out: &mut [f64]| {
        out[..d].copy_from_slice(x0);
        out[d] = u0(x0);
    });
    let mut names = vec!["t".to_string()];
    if d == 2 {
        names.extend(["x".to_string(), "y".to_string()]);
    } else {
        names.extend(spatial_names("x", d));
    }
    names.push("z".into());
    Ok(LevelSetProblem {
        formulation: Formulation::BalanceLaw,
        spatial_dim: d,
        velocity,
        boundary: vec![g],
        initial_state,
        jumps: Vec::new(),
        domain,
        names,
        strict: false,
    })
}

/// Gradient-only Hamilton–Jacobi system: `Y = (x, p)`, velocity
/// `(∇_p H, −∇_x H)`, data `p_i − ∂_i S₀(x)`.
pub fn make_hj_gradient(
    hamiltonian: Arc<dyn Hamiltonian>,
    grad_s0: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    domain: DomainBox,
) -> Result<LevelSetProblem> {
    let d = hamiltonian.dim();
    check_domain(&domain, 2 * d)?;
    let velocity: VelocityFn = {
        let h = hamiltonian.clone();
        Arc::new(move |x: &[f64], a: &mut [f64]| {
            let (xs, ps) = x[1..].split_at(d);
            let (ax, ap) = a.split_at_mut(d);
            h.grad_p(xs, ps, ax);
            h.grad_x(xs, ps, ap);
            ap.iter_mut().for_each(|v| *v = -*v);
        })
    };
    let grad_s0 = Arc::new(grad_s0);
    let boundary = (0..d)
        .map(|i| {
            let gs = grad_s0.clone();
            Arc::new(move |y: &[f64]| {
                let mut g = vec![0.0; d];
                gs(&y[..d], &mut g);
                y[d + i] - g[i]
            }) as ScalarFn
        })
        .collect();
    let initial_state: VectorFn = Arc::new(move |x0: &[f64], out: &mut [f64]| {
        out[..d].copy_from_slice(x0);
        grad_s0(x0, &mut out[d..2 * d]);
    });
    let mut names = vec!["t".to_string()];
    names.extend(spatial_names("x", d));
    names.extend(spatial_names("p", d));
    Ok(LevelSetProblem {
        formulation: Formulation::HjGradient,
        spatial_dim: d,
        velocity,
        boundary,
        initial_state,
        jumps: Vec::new(),
        domain,
        names,
        strict: false,
    })
}

/// Full Hamilton–Jacobi system: `Y = (x, z, p)`, velocity
/// `(∇_p H, p·∇_p H − H, −∇_x H)`, data `z − S₀(x)` and `p_i − ∂_i S₀(x)`.
pub fn make_hj_full(
    hamiltonian: Arc<dyn Hamiltonian>,
    s0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    grad_s0: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    domain: DomainBox,
) -> Result<LevelSetProblem> {
    let d = hamiltonian.dim();
    check_domain(&domain, 2 * d + 1)?;
    let velocity: VelocityFn = {
        let h = hamiltonian.clone();
        Arc::new(move |x: &[f64], a: &mut [f64]| {
            let xs = &x[1..=d];
            let ps = &x[d + 2..];
            h.grad_p(xs, ps, &mut a[..d]);
            let pdotv: f64 = ps.iter().zip(&a[..d]).map(|(p, v)| p * v).sum();
            a[d] = pdotv - h.value(xs, ps);
            let ap = &mut a[d + 1..];
            h.grad_x(xs, ps, ap);
            ap.iter_mut().for_each(|v| *v = -*v);
        })
    };
    let s0 = Arc::new(s0);
    let grad_s0 = Arc::new(grad_s0);
    let mut boundary: Vec<ScalarFn> = Vec::with_capacity(d + 1);
    {
        let s0 = s0.clone();
        boundary.push(Arc::new(move |y: &[f64]| y[d] - s0(&y[..d])));
    }
    for i in 0..d {
        let gs = grad_s0.clone();
        boundary.push(Arc::new(move |y: &[f64]| {
            let mut g = vec![0.0; d];
            gs(&y[..d], &mut g);
            y[d + 1 + i] - g[i]
        }));
    }
    let initial_state: VectorFn = Arc::new(move |x0: &[f64], out: &mut [f64]| {
        out[..d].copy_from_slice(x0);
        out[d] = s0(x0);
        grad_s0(x0, &mut out[d + 1..2 * d + 1]);
    });
    let mut names = vec!["t".to_string()];
    names.extend(spatial_names("x", d));
    names.push("z".into());
    names.extend(spatial_names("p", d));
    Ok(LevelSetProblem {
        formulation: Formulation::HjFull,
        spatial_dim: d,
        velocity,
        boundary,
        initial_state,
        jumps: Vec::new(),
        domain,
        names,
        strict: false,
    })
}

impl LevelSetProblem {
    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    /// Number of level-set components `K`.
    pub fn n_components(&self) -> usize {
        self.boundary.len()
    }

    /// Dimension of `X = (t, Y)`.
    pub fn input_dim(&self) -> usize {
        self.domain.y_dim() + 1
    }

    pub fn y_dim(&self) -> usize {
        self.domain.y_dim()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    /// Coordinate names of `X` in storage order, starting with `t`.
    pub fn coordinate_names(&self) -> &[String] {
        &self.names
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn with_jumps(mut self, jumps: Vec<Jump>) -> Self {
        self.jumps = jumps;
        self
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Result<Self> {
        check_domain(&domain, self.y_dim())?;
        self.domain = domain;
        Ok(self)
    }

    /// Reject points outside `D` in [`eval_velocity`](Self::eval_velocity).
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    /// Velocity `a(X)`, unchecked. `out` has `dim Y` entries.
    #[inline]
    pub fn velocity_into(&self, x: &[f64], out: &mut [f64]) {
        (self.velocity)(x, out)
    }

    pub fn eval_velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "velocity argument",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if self.strict && !self.domain.contains(x) {
            return Err(Error::InvalidParameter(format!("point {x:?} lies outside the domain")));
        }
        let mut a = vec![0.0; self.y_dim()];
        self.velocity_into(x, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("velocity at {x:?}")));
        }
        Ok(a)
    }

    /// Characteristic direction `(1, a(X))`.
    pub fn characteristic_direction(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        self.velocity_into(x, &mut out[1..]);
    }

    /// Inflow data `g_k(Y)` on `{0} x Ω`.
    pub fn boundary_value(&self, k: usize, y: &[f64]) -> f64 {
        (self.boundary[k])(y)
    }

    /// All `K` inflow values at `Y`.
    pub fn boundary_values(&self, y: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|g| g(y)).collect()
    }

    /// Initial manifold point `Y₀` over the foot point `x₀`.
    pub fn initial_state(&self, x0: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.y_dim()];
        (self.initial_state)(x0, &mut out);
        out
    }
}
