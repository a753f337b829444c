//! Reference cases with their sampling and network parameters.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    make_balance_law, make_hj_full, make_hj_gradient, DomainBox, Formulation, Jump, LevelSetProblem, Potential,
    QuadraticHamiltonian,
};
use crate::error::{Error, Result};

/// One grown layer: width `m_l` and per-coordinate range `r_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub width: usize,
    pub range: Vec<f64>,
}

/// Table parameters for one case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseParams {
    pub id: String,
    pub description: String,
    pub formulation: Formulation,
    pub spatial_dim: usize,
    pub t_final: f64,
    pub omega: Vec<[f64; 2]>,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_candidates: usize,
    /// `n_candidates` written as a power, e.g. `51^3`.
    pub n_candidates_label: String,
    pub eps_a: f64,
    pub m1: usize,
    pub r1: Vec<f64>,
    pub growth: Vec<GrowthSpec>,
    pub eta: f64,
    pub seed_grid: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CaseSpec {
    pub params: CaseParams,
    pub problem: LevelSetProblem,
}

const IDS: [&str; 15] = [
    "ex1.case1",
    "ex1.case2",
    "ex1.case3",
    "ex1.case4",
    "ex2.case1",
    "ex2.case2",
    "ex3.case1",
    "ex3.case2",
    "ex3.case3",
    "ex3.case4",
    "ex3b.case1",
    "ex3b.case2",
    "ex3b.case3",
    "ex3b.case4",
    "ex4",
];

pub fn case_ids() -> Vec<String> {
    IDS.iter().map(|s| s.to_string()).collect()
}

/// Parameters of every case, in id order.
pub fn catalog_listing() -> Vec<CaseParams> {
    IDS.iter().map(|id| params(id).expect("catalog ids are valid")).collect()
}

pub fn catalog(id: &str) -> Result<CaseSpec> {
    let params = params(id)?;
    let problem = build_problem(&params)?;
    Ok(CaseSpec { params, problem })
}

fn default_seed_grid(dim: usize) -> Vec<usize> {
    vec![if dim <= 3 { 50 } else { 20 }; dim]
}

fn square(half: f64, n: usize) -> Vec<[f64; 2]> {
    vec![[-half, half]; n]
}

#[allow(clippy::too_many_arguments)]
fn base(
    id: &str,
    description: &str,
    formulation: Formulation,
    spatial_dim: usize,
    t_final: f64,
    omega: Vec<[f64; 2]>,
    (n_interior, n_boundary): (usize, usize),
    (mean, variance): (Vec<f64>, Vec<f64>),
    (side, eps_a): (usize, f64),
    r1: Vec<f64>,
) -> CaseParams {
    let dim = omega.len() + 1;
    CaseParams {
        id: id.into(),
        description: description.into(),
        formulation,
        spatial_dim,
        t_final,
        omega,
        n_interior,
        n_boundary,
        mean,
        variance,
        n_candidates: side.pow(dim as u32),
        n_candidates_label: format!("{side}^{dim}"),
        eps_a,
        m1: 2000,
        r1,
        growth: Vec::new(),
        eta: 15.0,
        seed_grid: default_seed_grid(dim),
    }
}

fn params(id: &str) -> Result<CaseParams> {
    use Formulation::*;
    let bl = |id, desc, t, omega, var: (f64, f64), mean: (f64, f64), eps| {
        let mut p = base(
            id,
            desc,
            BalanceLaw,
            1,
            t,
            omega,
            (64000, 5000),
            (vec![mean.0, mean.1], vec![var.0, var.1]),
            (51, eps),
            vec![3.0; 3],
        );
        p.growth = vec![GrowthSpec {
            width: 1000,
            range: vec![5.0; 3],
        }];
        p
    };
    let hj1 = |id, desc, t, half, eps| {
        base(
            id,
            desc,
            HjGradient,
            1,
            t,
            square(half, 2),
            (20000, 5000),
            (vec![0.0; 2], vec![2.0; 2]),
            (51, eps),
            vec![2.0; 3],
        )
    };
    let hjf = |id, desc| {
        base(
            id,
            desc,
            HjFull,
            1,
            2.0,
            square(1.5, 3),
            (100000, 5000),
            (vec![0.0; 3], vec![1.5; 3]),
            (21, 0.5),
            vec![3.0; 4],
        )
    };
    let p = match id {
        "ex1.case1" => bl(
            id,
            "Burgers, V=0, u0=-sin(pi x)",
            1.0,
            square(1.0, 2),
            (1.0, 1.0),
            (0.0, 0.0),
            0.4,
        ),
        "ex1.case2" => bl(
            id,
            "Burgers, V=0, u0=-1 (x<0), 1 (x>0)",
            1.0,
            vec![[-1.0, 1.0], [-1.1, 1.1]],
            (1.5, 1.5),
            (0.0, 0.0),
            0.2,
        ),
        "ex1.case3" => bl(
            id,
            "Burgers, V=0, u0=1 (x<0), 0 (x>0)",
            1.0,
            vec![[-1.3, 1.3], [-0.3, 1.3]],
            (2.0, 1.5),
            (0.0, 0.5),
            0.6,
        ),
        "ex1.case4" => bl(
            id,
            "Burgers, V=x^2/2, u0=-tanh(5x)",
            PI,
            square(2.0, 2),
            (1.5, 1.5),
            (0.0, 0.0),
            0.9,
        ),
        "ex2.case1" | "ex2.case2" => {
            let case1 = id == "ex2.case1";
            let mut p = base(
                id,
                if case1 {
                    "2-D Burgers, u0=0.45 cos(pi x)(sin(pi y)-1)"
                } else {
                    "2-D Burgers, four-quadrant Riemann data"
                },
                BalanceLaw,
                2,
                if case1 { 1.0 } else { 0.5 },
                square(1.0, 3),
                (200000, 20000),
                (vec![0.0; 3], vec![if case1 { 1.0 } else { 2.0 }; 3]),
                (31, 0.5),
                vec![if case1 { 3.0 } else { 2.0 }; 4],
            );
            if !case1 {
                p.growth = vec![
                    GrowthSpec {
                        width: 1000,
                        range: vec![2.0; 4],
                    };
                    2
                ];
            }
            p
        }
        "ex3.case1" => hj1(id, "H=p^2/2, S0=x^2/2", 10.0, 2.0, 1.0),
        "ex3.case2" => hj1(id, "H=p^2/2, S0=-x^2/2", 10.0, 2.0, 1.0),
        "ex3.case3" => hj1(id, "H=p^2/2, S0=-ln cosh x", 2.0, 2.0, 0.6),
        "ex3.case4" => hj1(id, "H=p^2/2+x^2/2, S0=x", 2.0 * PI, 3.0, 0.6),
        "ex3b.case1" => hjf(id, "H=p^2/2, S0=x^2/2, with z"),
        "ex3b.case2" => hjf(id, "H=p^2/2, S0=-x^2/2, with z"),
        "ex3b.case3" => hjf(id, "H=p^2/2, S0=-ln cosh x, with z"),
        "ex3b.case4" => base(
            id,
            "H=p^2/2+x^2/2, S0=x, with z",
            HjFull,
            1,
            2.0 * PI,
            square(2.5, 3),
            (200000, 20000),
            (vec![0.0; 3], vec![3.0; 3]),
            (21, 1.0),
            vec![0.3; 4],
        ),
        "ex4" => base(
            id,
            "H=|p|^2/2 in 2-D, S0=(0.45/pi)(sin(pi x1)-1)(sin(pi x2)-1)",
            HjGradient,
            2,
            1.0,
            square(1.2, 4),
            (500000, 50000),
            (vec![0.0; 4], vec![1.0; 4]),
            (20, 0.5),
            vec![2.0; 5],
        ),
        _ => {
            return Err(Error::UnknownCase {
                id: id.into(),
                valid: case_ids(),
            })
        }
    };
    Ok(p)
}

/// Piecewise-constant data with the average of the one-sided limits at the
/// jump.
fn step(j: Jump) -> impl Fn(&[f64]) -> f64 + Send + Sync + Copy {
    move |x: &[f64]| {
        if x[0] < j.location {
            j.left
        } else if x[0] > j.location {
            j.right
        } else {
            0.5 * (j.left + j.right)
        }
    }
}

/// Four-quadrant Riemann data; on the axes the value is the average over
/// every adjacent quadrant.
fn quadrants(x: &[f64]) -> f64 {
    // (x > 0, y > 0), (x < 0, y > 0), (x < 0, y < 0), (x > 0, y < 0)
    const Q: [((f64, f64), f64); 4] = [((1.0, 1.0), -1.0), ((-1.0, 1.0), -0.2), ((-1.0, -1.0), 0.5), ((1.0, -1.0), 0.0)];
    let sx = sign(x[0]);
    let sy = sign(x[1]);
    let mut sum = 0.0;
    let mut n = 0.0;
    for ((qx, qy), v) in Q {
        if (sx == 0.0 || sx == qx) && (sy == 0.0 || sy == qy) {
            sum += v;
            n += 1.0;
        }
    }
    sum / n
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

type Initial = (Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>);

fn hj_data(case: &str) -> (Potential, Initial) {
    match case {
        "case1" => (
            Potential::Zero,
            (Arc::new(|x: &[f64]| 0.5 * x[0] * x[0]), Arc::new(|x: &[f64], g: &mut [f64]| g[0] = x[0])),
        ),
        "case2" => (
            Potential::Zero,
            (Arc::new(|x: &[f64]| -0.5 * x[0] * x[0]), Arc::new(|x: &[f64], g: &mut [f64]| g[0] = -x[0])),
        ),
        "case3" => (
            Potential::Zero,
            (
                Arc::new(|x: &[f64]| -ln_cosh(x[0])),
                Arc::new(|x: &[f64], g: &mut [f64]| g[0] = -x[0].tanh()),
            ),
        ),
        _ => (
            Potential::Harmonic,
            (Arc::new(|x: &[f64]| x[0]), Arc::new(|_: &[f64], g: &mut [f64]| g[0] = 1.0)),
        ),
    }
}

/// `ln cosh x` without overflow for large `|x|`.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn build_problem(p: &CaseParams) -> Result<LevelSetProblem> {
    let domain = DomainBox::new(p.t_final, p.omega.clone())?;
    let (group, case) = p.id.split_once('.').unwrap_or((p.id.as_str(), ""));
    match group {
        "ex1" => {
            let potential = if case == "case4" {
                Potential::Harmonic
            } else {
                Potential::Zero
            };
            let source = move |x: &[f64], _z: f64| {
                let mut g = [0.0];
                potential.gradient(x, &mut g);
                g[0]
            };
            let flux = |z: f64, out: &mut [f64]| out[0] = z;
            match case {
                "case1" => make_balance_law(1, flux, source, |x: &[f64]| -(PI * x[0]).sin(), domain),
                "case2" | "case3" => {
                    let j = if case == "case2" {
                        Jump {
                            location: 0.0,
                            left: -1.0,
                            right: 1.0,
                        }
                    } else {
                        Jump {
                            location: 0.0,
                            left: 1.0,
                            right: 0.0,
                        }
                    };
                    Ok(make_balance_law(1, flux, source, step(j), domain)?.with_jumps(vec![j]))
                }
                _ => make_balance_law(1, flux, source, |x: &[f64]| -(5.0 * x[0]).tanh(), domain),
            }
        }
        "ex2" => {
            let flux = |z: f64, out: &mut [f64]| {
                out[0] = z;
                out[1] = z;
            };
            let source = |_: &[f64], _: f64| 0.0;
            if case == "case1" {
                make_balance_law(
                    2,
                    flux,
                    source,
                    |x: &[f64]| 0.45 * (PI * x[0]).cos() * ((PI * x[1]).sin() - 1.0),
                    domain,
                )
            } else {
                make_balance_law(2, flux, source, quadrants, domain)
            }
        }
        "ex3" | "ex3b" => {
            let (potential, (s0, grad)) = hj_data(case);
            let h = Arc::new(QuadraticHamiltonian { dim: 1, potential });
            let grad = move |x: &[f64], g: &mut [f64]| grad(x, g);
            if group == "ex3" {
                make_hj_gradient(h, grad, domain)
            } else {
                make_hj_full(h, move |x: &[f64]| s0(x), grad, domain)
            }
        }
        _ => {
            let h = Arc::new(QuadraticHamiltonian {
                dim: 2,
                potential: Potential::Zero,
            });
            make_hj_gradient(h, ex4_grad_s0, domain)
        }
    }
}

/// `S₀(x) = (0.45/π)(sin πx₁ − 1)(sin πx₂ − 1)`.
pub fn ex4_s0(x: &[f64]) -> f64 {
    0.45 / PI * ((PI * x[0]).sin() - 1.0) * ((PI * x[1]).sin() - 1.0)
}

pub fn ex4_grad_s0(x: &[f64], g: &mut [f64]) {
    let (s1, c1) = (PI * x[0]).sin_cos();
    let (s2, c2) = (PI * x[1]).sin_cos();
    g[0] = 0.45 * c1 * (s2 - 1.0);
    g[1] = 0.45 * (s1 - 1.0) * c2;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_speed(problem: &LevelSetProblem, n: usize) -> f64 {
        let dom = problem.domain().clone();
        let dim = problem.input_dim();
        let mut a = vec![0.0; dim - 1];
        let mut best: f64 = 0.0;
        let mut x = vec![0.0; dim];
        // Tensor grid including the box corners.
        let total = n.pow(dim as u32 - 1);
        for idx in 0..total {
            let mut r = idx;
            x[0] = 0.5 * dom.t_final;
            for (k, [lo, hi]) in dom.omega.iter().enumerate() {
                let i = r % n;
                r /= n;
                x[k + 1] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            }
            problem.velocity_into(&x, &mut a);
            best = best.max(a.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        best
    }

    #[test]
    fn every_id_builds() {
        for id in case_ids() {
            let spec = catalog(&id).unwrap();
            let p = &spec.params;
            assert_eq!(spec.problem.input_dim(), p.omega.len() + 1, "{id}");
            assert_eq!(p.mean.len(), p.omega.len(), "{id}");
            assert_eq!(p.variance.len(), p.omega.len(), "{id}");
            assert_eq!(p.r1.len(), p.omega.len() + 1, "{id}");
            assert_eq!(p.seed_grid.len(), p.omega.len() + 1, "{id}");
            for g in &p.growth {
                assert_eq!(g.range.len(), p.omega.len() + 1, "{id}");
            }
            assert_eq!(spec.problem.formulation(), p.formulation);
        }
    }

    #[test]
    fn unknown_id_lists_valid() {
        let err = catalog("ex9").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ex9") && msg.contains("ex3b.case4") && msg.contains("ex1.case1"));
    }

    #[test]
    fn ex1_case4_parameters() {
        let spec = catalog("ex1.case4").unwrap();
        assert_eq!(spec.params.t_final, PI);
        assert_eq!(spec.params.omega, vec![[-2.0, 2.0]; 2]);
        assert_eq!(spec.params.eps_a, 0.9);
        // u0 = -tanh(5x), V = x^2/2
        let y0 = spec.problem.initial_state(&[0.1]);
        assert!((y0[1] + (0.5f64).tanh()).abs() < 1e-15);
        let a = spec.problem.eval_velocity(&[0.0, 1.5, 0.25]).unwrap();
        assert_eq!(a, vec![0.25, -1.5]);
        assert!((max_speed(&spec.problem, 41) - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ex3_case3_parameters() {
        let spec = catalog("ex3.case3").unwrap();
        assert_eq!(spec.params.t_final, 2.0);
        assert_eq!(spec.params.eps_a, 0.6);
        // g = p + tanh(x)
        let g = spec.problem.boundary_value(0, &[0.7, 0.1]);
        assert!((g - (0.1 + 0.7f64.tanh())).abs() < 1e-15);
    }

    #[test]
    fn ex4_parameters() {
        let p = catalog("ex4").unwrap().params;
        assert_eq!((p.n_interior, p.n_boundary), (500000, 50000));
        assert_eq!(p.omega, vec![[-1.2, 1.2]; 4]);
        assert_eq!(p.r1, vec![2.0; 5]);
        assert_eq!(p.n_candidates, 20usize.pow(5));
        assert_eq!(p.n_candidates_label, "20^5");
        assert_eq!(p.seed_grid, vec![20; 5]);
    }

    #[test]
    fn ex3b_case4_parameters() {
        let p = catalog("ex3b.case4").unwrap().params;
        assert_eq!(p.variance, vec![3.0; 3]);
        assert_eq!((p.n_interior, p.n_boundary), (200000, 20000));
        assert_eq!(p.r1, vec![0.3; 4]);
    }

    #[test]
    fn ex4_gradient_matches_finite_difference() {
        let x = [0.3, -0.4];
        let mut g = [0.0; 2];
        ex4_grad_s0(&x, &mut g);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (ex4_s0(&xp) - ex4_s0(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn hj_initial_gradients_match_potentials() {
        for case in ["case1", "case2", "case3", "case4"] {
            let (_, (s0, grad)) = hj_data(case);
            for x in [-1.3, 0.2, 0.9] {
                let mut g = [0.0];
                grad(&[x], &mut g);
                let h = 1e-6;
                let fd = (s0(&[x + h]) - s0(&[x - h])) / (2.0 * h);
                assert!((fd - g[0]).abs() < 1e-8, "{case} at {x}");
            }
        }
        assert!((ln_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn discontinuous_data_averages_at_jump() {
        let c2 = catalog("ex1.case2").unwrap().problem;
        assert_eq!(c2.initial_state(&[0.0])[1], 0.0);
        assert_eq!(c2.initial_state(&[-0.1])[1], -1.0);
        let c3 = catalog("ex1.case3").unwrap().problem;
        assert_eq!(c3.initial_state(&[0.0])[1], 0.5);
        assert_eq!(c3.jumps().len(), 1);
        assert_eq!(quadrants(&[0.3, 0.4]), -1.0);
        assert_eq!(quadrants(&[0.0, 0.4]), -0.6);
        assert_eq!(quadrants(&[0.0, 0.0]), -0.175);
    }

    #[test]
    fn speed_bounds() {
        // ex1.case1: |a| = |z| ≤ 1 on [-1,1]^2.
        assert!((max_speed(&catalog("ex1.case1").unwrap().problem, 21) - 1.0).abs() < 1e-12);
        // ex3.case4: a = (p, -x) on [-3,3]^2.
        assert!((max_speed(&catalog("ex3.case4").unwrap().problem, 21) - 18f64.sqrt()).abs() < 1e-12);
        // ex2: a = (z, z, 0), max sqrt(2).
        assert!((max_speed(&catalog("ex2.case1").unwrap().problem, 11) - 2f64.sqrt()).abs() < 1e-12);
        // ex3b.case1: a = (p, p^2/2, 0), max at p = 1.5.
        let b = (1.5f64.powi(2) + (0.5 * 1.5f64.powi(2)).powi(2)).sqrt();
        assert!((max_speed(&catalog("ex3b.case1").unwrap().problem, 11) - b).abs() < 1e-12);
    }

    #[test]
    fn listing_round_trips_through_json() {
        let list = catalog_listing();
        assert_eq!(list.len(), 15);
        let s = serde_json::to_string(&list).unwrap();
        let back: Vec<CaseParams> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, list);
    }
}
