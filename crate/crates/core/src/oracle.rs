//! Reference solutions from characteristics, and cloud distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::KdTree;
use crate::problems::{Hamiltonian, LevelSetProblem};
use crate::zeroset::PointCloud;

pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;

/// Classical fourth-order Runge–Kutta for the autonomous system `ẏ = f(y)`.
pub fn rk4_flow<F>(field: F, y0: &[f64], t_final: f64, steps: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if steps == 0 {
        return Err(Error::InvalidParameter("RK4 needs at least one step".into()));
    }
    let n = y0.len();
    let h = t_final / steps as f64;
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for step in 0..steps {
        field(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        field(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        field(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        field(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("RK4 state after step {} of {steps}", step + 1)));
        }
    }
    Ok(y)
}

fn steps_for(t: f64, steps_per_unit: usize) -> usize {
    ((t.abs() * steps_per_unit as f64).ceil() as usize).max(1)
}

/// Flows `(0, Y₀)` along `(1, a(X))` to time `t`; returns `X(t)`.
pub fn characteristic_flow(problem: &LevelSetProblem, y0: &[f64], t: f64, steps_per_unit: usize) -> Result<Vec<f64>> {
    let mut x0 = Vec::with_capacity(y0.len() + 1);
    x0.push(0.0);
    x0.extend_from_slice(y0);
    rk4_flow(|x, out| problem.characteristic_direction(x, out), &x0, t, steps_for(t, steps_per_unit))
}

/// Points `(x(t), z)` of the multivalued Burgers solution with
/// `ẋ = z, ż = −V′(x)`. `V = 0` uses the closed form `x = x₀ + t u₀(x₀)`.
pub fn burgers_manifold<U, V>(u0: U, v_prime: Option<V>, t: f64, x0s: &[f64], steps_per_unit: usize) -> Result<Vec<[f64; 2]>>
where
    U: Fn(f64) -> f64 + Sync,
    V: Fn(f64) -> f64 + Sync,
{
    let from_start = |x0: f64, z0: f64| -> Result<[f64; 2]> {
        match &v_prime {
            None => Ok([x0 + t * z0, z0]),
            Some(vp) => {
                let y = rk4_flow(
                    |y, out| {
                        out[0] = y[1];
                        out[1] = -vp(y[0]);
                    },
                    &[x0, z0],
                    t,
                    steps_for(t, steps_per_unit),
                )?;
                Ok([y[0], y[1]])
            }
        }
    };
    x0s.par_iter().map(|&x0| from_start(x0, u0(x0))).collect()
}

/// Same as [`burgers_manifold`] for a vertical segment `{x₀} x [z_a, z_b]`
/// of initial data (a jump).
pub fn burgers_jump_segment<V>(location: f64, za: f64, zb: f64, n: usize, v_prime: Option<V>, t: f64, steps_per_unit: usize) -> Result<Vec<[f64; 2]>>
where
    V: Fn(f64) -> f64 + Sync,
{
    let zs: Vec<f64> = (0..n).map(|i| za + (zb - za) * i as f64 / (n.max(2) - 1) as f64).collect();
    zs.iter()
        .map(|&z0| {
            burgers_manifold(|_| z0, v_prime.as_ref(), t, &[location], steps_per_unit).map(|v| v[0])
        })
        .collect()
}

/// Hamiltonian flow from `(x₀, ∇S₀(x₀), S₀(x₀))`:
/// `ẋ = ∇_pH, ṗ = −∇_xH, ż = p·∇_pH − H`. Returns `(x, z, p)`.
pub fn hj_manifold<S, G>(
    ham: &dyn Hamiltonian,
    s0: S,
    grad_s0: G,
    t: f64,
    x0s: &[Vec<f64>],
    steps_per_unit: usize,
) -> Result<Vec<Vec<f64>>>
where
    S: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    let d = ham.dim();
    x0s.par_iter()
        .map(|x0| {
            let mut y0 = vec![0.0; 2 * d + 1];
            y0[..d].copy_from_slice(x0);
            y0[d] = s0(x0);
            grad_s0(x0, &mut y0[d + 1..]);
            rk4_flow(|y, out| hamiltonian_field(ham, y, out), &y0, t, steps_for(t, steps_per_unit))
        })
        .collect()
}

/// Right-hand side on the state `(x, z, p)`.
fn hamiltonian_field(ham: &dyn Hamiltonian, y: &[f64], out: &mut [f64]) {
    let d = ham.dim();
    let x = &y[..d];
    let p = &y[d + 1..];
    let (ox, rest) = out.split_at_mut(d);
    let (oz, op) = rest.split_at_mut(1);
    ham.grad_p(x, p, ox);
    oz[0] = p.iter().zip(ox.iter()).map(|(a, b)| a * b).sum::<f64>() - ham.value(x, p);
    ham.grad_x(x, p, op);
    op.iter_mut().for_each(|v| *v = -*v);
}

/// `|H(end) − H(start)|` along the flow from `(x₀, p₀)`.
pub fn hamiltonian_drift(ham: &dyn Hamiltonian, x0: &[f64], p0: &[f64], t: f64, steps: usize) -> Result<f64> {
    let d = ham.dim();
    let mut y0 = vec![0.0; 2 * d + 1];
    y0[..d].copy_from_slice(x0);
    y0[d + 1..].copy_from_slice(p0);
    let y = rk4_flow(|y, out| hamiltonian_field(ham, y, out), &y0, t, steps)?;
    Ok((ham.value(&y[..d], &y[d + 1..]) - ham.value(x0, p0)).abs())
}

/// Manifold of a catalog problem sampled from foot points `x0s`: each
/// point is `X = (t, Y(t))`. Discontinuities listed on the problem are
/// filled with `n_jump` states spanning the jump.
pub fn problem_manifold(
    problem: &LevelSetProblem,
    times: &[f64],
    x0s: &[Vec<f64>],
    n_jump: usize,
    steps_per_unit: usize,
) -> Result<PointCloud> {
    let mut starts: Vec<Vec<f64>> = x0s.iter().map(|x0| problem.initial_state(x0)).collect();
    for j in problem.jumps() {
        let d = problem.spatial_dim();
        for i in 0..n_jump {
            let z = j.left + (j.right - j.left) * i as f64 / (n_jump.max(2) - 1) as f64;
            let mut y = problem.initial_state(&vec![j.location; d]);
            y[d] = z;
            starts.push(y);
        }
    }
    let mut points = Vec::with_capacity(starts.len() * times.len());
    for &t in times {
        let batch: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|y0| {
                // Time is integrated exactly up to roundoff; pin it.
                characteristic_flow(problem, y0, t, steps_per_unit).map(|mut x| {
                    x[0] = t;
                    x
                })
            })
            .collect::<Result<_>>()?;
        points.extend(batch);
    }
    let n = points.len();
    PointCloud::new(problem.coordinate_names().to_vec(), points, vec![0.0; n])
}

/// Newton steps for `v = v₀(x − t v)` from `v`.
fn newton_implicit<F>(v0: &F, t: f64, x: &[f64], v: &mut [f64], tol: f64) -> bool
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = x.len();
    let mut f = vec![0.0; d];
    let mut arg = vec![0.0; d];
    let mut g = vec![0.0; d];
    let residual = |v: &[f64], arg: &mut [f64], g: &mut [f64], f: &mut [f64]| {
        for i in 0..d {
            arg[i] = x[i] - t * v[i];
        }
        v0(arg, g);
        for i in 0..d {
            f[i] = v[i] - g[i];
        }
        f.iter().map(|a| a * a).sum::<f64>().sqrt()
    };
    for _ in 0..50 {
        let r = residual(v, &mut arg, &mut g, &mut f);
        if !r.is_finite() {
            return false;
        }
        if r <= tol {
            return true;
        }
        // J = I + t Dv₀(x − t v), Dv₀ by central differences.
        let mut jac = vec![0.0; d * d];
        let h = 1e-7;
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for c in 0..d {
            let mut ap = arg.clone();
            let mut am = arg.clone();
            ap[c] += h;
            am[c] -= h;
            v0(&ap, &mut gp);
            v0(&am, &mut gm);
            for r_ in 0..d {
                jac[r_ * d + c] = t * (gp[r_] - gm[r_]) / (2.0 * h) + if r_ == c { 1.0 } else { 0.0 };
            }
        }
        let Some(step) = solve_small(&mut jac, &f, d) else {
            return false;
        };
        for i in 0..d {
            v[i] -= step[i];
        }
    }
    residual(v, &mut arg, &mut g, &mut f) <= tol
}

/// Gaussian elimination with partial pivoting for tiny systems.
fn solve_small(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut b = b.to_vec();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))?;
        if a[p * n + c].abs() < 1e-300 {
            return None;
        }
        for k in 0..n {
            a.swap(c * n + k, p * n + k);
        }
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

/// Solves `v = v₀(x − t v)` on the branch connected to `v₀(x)` at `t = 0`,
/// continuing in `t` and refining the continuation step on failure.
pub fn implicit_velocity<F>(v0: F, t: f64, x: &[f64], initial_guess: Option<&[f64]>) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
    }
    let d = x.len();
    let tol = 1e-13;
    let mut v = vec![0.0; d];
    v0(x, &mut v);
    if t == 0.0 {
        return Ok(v);
    }
    if let Some(g) = initial_guess {
        let mut w = g.to_vec();
        if newton_implicit(&v0, t, x, &mut w, tol) {
            return Ok(w);
        }
    }
    for &pieces in &[1usize, 4, 16, 64, 256] {
        let mut w = v.clone();
        let ok = (1..=pieces).all(|i| newton_implicit(&v0, t * i as f64 / pieces as f64, x, &mut w, tol));
        if ok {
            return Ok(w);
        }
    }
    Err(Error::NonConvergence(format!(
        "implicit velocity at x={x:?}, t={t}: Newton failed along the continuation path (caustic nearby?)"
    )))
}

/// Nearest-neighbour distance statistics between two clouds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    /// `A → B`: mean and max over `a ∈ A` of `min_b |a − b|`.
    pub mean_ab: f64,
    pub max_ab: f64,
    /// `B → A`.
    pub mean_ba: f64,
    pub max_ba: f64,
    /// Average of the two directed means.
    pub mean: f64,
    /// Larger of the two directed maxima.
    pub max: f64,
}

/// Directed distances from every point of `from` to the set `to`.
pub fn directed_distances<P: AsRef<[f64]> + Sync, Q: AsRef<[f64]>>(from: &[P], to: &[Q]) -> Result<Vec<f64>> {
    if from.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(to)?;
    if let Some(p) = from.iter().find(|p| p.as_ref().len() != tree.dim()) {
        return Err(Error::Dimension {
            context: "chamfer point",
            expected: tree.dim(),
            found: p.as_ref().len(),
        });
    }
    Ok(from.par_iter().map(|p| tree.nearest(p.as_ref())).collect())
}

pub fn chamfer<P: AsRef<[f64]> + Sync, Q: AsRef<[f64]> + Sync>(a: &[P], b: &[Q]) -> Result<Chamfer> {
    let ab = directed_distances(a, b)?;
    let ba = directed_distances(b, a)?;
    let stats = |d: &[f64]| (d.iter().sum::<f64>() / d.len() as f64, d.iter().cloned().fold(0.0, f64::max));
    let (mean_ab, max_ab) = stats(&ab);
    let (mean_ba, max_ba) = stats(&ba);
    Ok(Chamfer {
        mean_ab,
        max_ab,
        mean_ba,
        max_ba,
        mean: 0.5 * (mean_ab + mean_ba),
        max: max_ab.max(max_ba),
    })
}

/// Foot points on a tensor grid over `bounds` with `n` points per dimension.
pub fn foot_grid(bounds: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut i| {
            let mut p = vec![0.0; d];
            for k in (0..d).rev() {
                let j = i % n;
                i /= n;
                let [lo, hi] = bounds[k];
                p[k] = if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 };
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{catalog, Potential, QuadraticHamiltonian};
    use std::f64::consts::PI;

    fn oscillator(y: &[f64], out: &mut [f64]) {
        out[0] = y[1];
        out[1] = -y[0];
    }

    #[test]
    fn quarter_and_half_rotation() {
        let q = rk4_flow(oscillator, &[1.0, 0.0], PI / 2.0, 1000).unwrap();
        assert!((q[0]).abs() < 1e-8 && (q[1] + 1.0).abs() < 1e-8);
        let h = rk4_flow(oscillator, &[1.0, 0.0], PI, 1000).unwrap();
        assert!((h[0] + 1.0).abs() < 1e-8 && h[1].abs() < 1e-8);
    }

    #[test]
    fn free_drift_exact() {
        let y = rk4_flow(|y, o| {
            o[0] = y[1];
            o[1] = 0.0;
        }, &[1.0, 2.0], 3.0, 7)
        .unwrap();
        assert!((y[0] - 7.0).abs() < 1e-13 && y[1] == 2.0);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n| {
            let y = rk4_flow(oscillator, &[1.0, 0.0], 2.0, n).unwrap();
            ((y[0] - 2f64.cos()).powi(2) + (y[1] + 2f64.sin()).powi(2)).sqrt()
        };
        let mut prev = err(10);
        for n in [20, 40, 80] {
            let e = err(n);
            assert!(prev / e >= 15.0, "{}", prev / e);
            prev = e;
        }
    }

    #[test]
    fn hamiltonian_drift_order() {
        let h = QuadraticHamiltonian {
            dim: 1,
            potential: Potential::Harmonic,
        };
        // Pendulum-free harmonic energy drift shrinks at fourth order or
        // better.
        let d1 = hamiltonian_drift(&h, &[1.0], &[0.5], 5.0, 20).unwrap();
        let d2 = hamiltonian_drift(&h, &[1.0], &[0.5], 5.0, 40).unwrap();
        assert!((d1 / d2).log2() >= 3.8);
        assert!(hamiltonian_drift(&h, &[1.0], &[0.0], PI / 2.0, 1571).unwrap() <= 1e-8);
    }

    #[test]
    fn burgers_closed_form() {
        let u0 = |x: f64| -(PI * x).sin();
        let m = burgers_manifold(u0, None::<fn(f64) -> f64>, 1.0, &[0.5], 1000).unwrap();
        assert!((m[0][0] + 0.5).abs() < 1e-15 && (m[0][1] + 1.0).abs() < 1e-15);
        // RK4 with V' = 0 agrees with the closed form.
        let x0s: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
        let a = burgers_manifold(u0, None::<fn(f64) -> f64>, 1.0, &x0s, 1000).unwrap();
        let b = burgers_manifold(u0, Some(|_| 0.0), 1.0, &x0s, 1000).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0] - q[0]).abs() < 1e-13 && p[1] == q[1]);
        }
    }

    #[test]
    fn three_branches_at_origin() {
        // Roots of x0 = sin(π x0) on (0, 1) by bisection.
        let f = |x: f64| x - (PI * x).sin();
        let (mut a, mut b) = (0.5, 1.0);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m
            } else {
                a = m
            }
        }
        assert!((a - 0.7365).abs() < 1e-4);
        // Count sign changes of x(x0) = x0 − sin(π x0) along a dense grid.
        let xs: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
        let m = burgers_manifold(|x| -(PI * x).sin(), None::<fn(f64) -> f64>, 1.0, &xs, 1).unwrap();
        let changes = m.windows(2).filter(|w| w[0][0] * w[1][0] < 0.0).count() + m.iter().filter(|p| p[0] == 0.0).count();
        assert_eq!(changes, 3);
    }

    #[test]
    fn harmonic_burgers_half_period_rotates() {
        let u0 = |x: f64| -(5.0 * x).tanh();
        let x0s: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let m = burgers_manifold(u0, Some(|x: f64| x), PI, &x0s, 1000).unwrap();
        for (x0, p) in x0s.iter().zip(&m) {
            assert!((p[0] + x0).abs() < 1e-8 && (p[1] - (5.0 * x0).tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn hj_free_and_harmonic() {
        let free = QuadraticHamiltonian {
            dim: 1,
            potential: Potential::Zero,
        };
        let x0s: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
        let t = 2.0;
        let m = hj_manifold(&free, |x| 0.5 * x[0] * x[0], |x, g| g[0] = x[0], t, &x0s, 1000).unwrap();
        for (x0, y) in x0s.iter().zip(&m) {
            // p = x/(t+1), z = S0 + p0² t / 2 = x²/(2(t+1)).
            assert!((y[2] - y[0] / (t + 1.0)).abs() < 1e-12);
            assert!((y[1] - (0.5 * x0[0] * x0[0] + 0.5 * x0[0] * x0[0] * t)).abs() < 1e-12);
            assert!((y[1] - y[0] * y[0] / (2.0 * (t + 1.0))).abs() < 1e-12);
        }
        let harm = QuadraticHamiltonian {
            dim: 1,
            potential: Potential::Harmonic,
        };
        let t = 0.7;
        let m = hj_manifold(&harm, |x| x[0], |_, g| g[0] = 1.0, t, &x0s, 1000).unwrap();
        for y in &m {
            assert!((y[2] - (-y[0] * t.tan() + 1.0 / t.cos())).abs() < 1e-9);
        }
    }

    #[test]
    fn implicit_solves() {
        let v = implicit_velocity(|x, o| o[0] = x[0], 0.0, &[0.7], None).unwrap();
        assert_eq!(v, vec![0.7]);
        let v = implicit_velocity(|x, o| o[0] = x[0], 2.0, &[0.9], None).unwrap();
        assert!((v[0] - 0.3).abs() < 1e-12);
        let grad = crate::problems::ex4_grad_s0;
        for i in 0..6 {
            for j in 0..6 {
                let x = [-1.0 + 0.4 * i as f64, -1.0 + 0.4 * j as f64];
                if let Ok(v) = implicit_velocity(grad, 1.0, &x, None) {
                    let mut g = [0.0; 2];
                    grad(&[x[0] - v[0], x[1] - v[1]], &mut g);
                    assert!((v[0] - g[0]).abs() <= 1e-10 && (v[1] - g[1]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn implicit_matches_parametric_branch() {
        // Pre-caustic: free motion with S0 = x²/2 has p = x/(1+t).
        let free = QuadraticHamiltonian {
            dim: 1,
            potential: Potential::Zero,
        };
        let x0s = vec![vec![0.4]];
        let m = hj_manifold(&free, |x| 0.5 * x[0] * x[0], |x, g| g[0] = x[0], 1.5, &x0s, 1000).unwrap();
        let v = implicit_velocity(|x, o| o[0] = x[0], 1.5, &[m[0][0]], None).unwrap();
        assert!((v[0] - m[0][2]).abs() < 1e-8);
    }

    #[test]
    fn chamfer_basics() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![3.0, 4.0]];
        let c = chamfer(&a, &b).unwrap();
        assert_eq!((c.mean, c.max), (5.0, 5.0));
        let z = chamfer(&b, &b).unwrap();
        assert_eq!((z.mean, z.max), (0.0, 0.0));
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(chamfer(&empty, &b), Err(Error::EmptyCloud)));
        assert!(matches!(chamfer(&a, &[vec![1.0]]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn catalog_manifold_matches_closed_form() {
        let p = catalog("ex1.case1").unwrap().problem;
        let x0s = foot_grid(&[[-1.0, 1.0]], 21);
        let m = problem_manifold(&p, &[1.0], &x0s, 0, 200).unwrap();
        for (x0, pt) in x0s.iter().zip(&m.points) {
            let z0 = -(PI * x0[0]).sin();
            assert!((pt[0] - 1.0).abs() < 1e-12);
            assert!((pt[1] - (x0[0] + z0)).abs() < 1e-12);
            assert!((pt[2] - z0).abs() < 1e-15);
        }
        let c3 = catalog("ex1.case3").unwrap().problem;
        let m = problem_manifold(&c3, &[0.5], &foot_grid(&[[-1.0, 1.0]], 3), 5, 100).unwrap();
        assert_eq!(m.len(), 8);
    }
}
