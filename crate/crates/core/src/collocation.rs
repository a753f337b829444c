//! Collocation sets: initial sampling, the adaptive tube around the zero set
//! of a coarse fit, and error-indicator selection.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::problems::DomainBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `t ~ U(0, T)`, `Y ~ N(E, diag(Var))`.
    #[default]
    NormalInitial,
    /// `t ~ U(0, T)`, `Y ~ U(Ω)`.
    UniformBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default)]
    pub mode: SamplingMode,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_interior: usize,
    pub n_boundary: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub n_candidates: usize,
    pub eps_a: f64,
    #[serde(default = "one")]
    pub update_cycles: usize,
    /// Defaults to `round(N^(dimY/(dimY+1)))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boundary_candidates: Option<usize>,
}

fn one() -> usize {
    1
}

impl TubeConfig {
    pub fn new(n_candidates: usize, eps_a: f64) -> Self {
        Self {
            n_candidates,
            eps_a,
            update_cycles: 1,
            n_boundary_candidates: None,
        }
    }

    pub fn boundary_candidates(&self, y_dim: usize) -> usize {
        self.n_boundary_candidates.unwrap_or_else(|| {
            let e = y_dim as f64 / (y_dim as f64 + 1.0);
            ((self.n_candidates as f64).powf(e).round() as usize).max(1)
        })
    }
}

/// Interior points `(t, Y)` with `t ∈ (0, T)` and boundary points `(0, Y)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub interior: Vec<Vec<f64>>,
    pub boundary: Vec<Vec<f64>>,
}

impl CollocationSet {
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty() && self.boundary.is_empty()
    }

    /// CSV with the coordinate columns and a trailing `boundary` flag.
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut header = names.to_vec();
        header.push("boundary".into());
        let rows: Vec<Vec<f64>> = self
            .interior
            .iter()
            .map(|p| (p, 0.0))
            .chain(self.boundary.iter().map(|p| (p, 1.0)))
            .map(|(p, f)| {
                let mut r = p.clone();
                r.push(f);
                r
            })
            .collect();
        io::write_csv(path, &header, &rows)
    }

    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Self)> {
        let t = io::read_csv(path)?;
        if t.header.last().map(String::as_str) != Some("boundary") {
            return Err(Error::InvalidParameter(format!(
                "{}: last column must be `boundary`",
                path.display()
            )));
        }
        let mut set = CollocationSet::default();
        for mut r in t.rows {
            let flag = r.pop().unwrap_or(0.0);
            if flag != 0.0 {
                set.boundary.push(r);
            } else {
                set.interior.push(r);
            }
        }
        let mut names = t.header;
        names.pop();
        Ok((names, set))
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn check_sampling(config: &SamplingConfig, domain: &DomainBox) -> Result<()> {
    let n = domain.y_dim();
    if config.mean.len() != n {
        return Err(Error::Dimension {
            context: "sampling mean",
            expected: n,
            found: config.mean.len(),
        });
    }
    if config.variance.len() != n {
        return Err(Error::Dimension {
            context: "sampling variance",
            expected: n,
            found: config.variance.len(),
        });
    }
    if config.mode == SamplingMode::NormalInitial && config.variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sampling variance must be positive, got {:?}",
            config.variance
        )));
    }
    if config.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("sampling mean must be finite".into()));
    }
    Ok(())
}

/// Initial collocation set; a deterministic function of `(config, seed)`.
pub fn sample_initial(config: &SamplingConfig, domain: &DomainBox, seed: u64) -> Result<CollocationSet> {
    check_sampling(config, domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Normal<f64>> = config
        .mean
        .iter()
        .zip(&config.variance)
        .map(|(m, v)| Normal::new(*m, v.abs().sqrt()).map_err(|e| Error::InvalidParameter(e.to_string())))
        .collect::<Result<_>>()?;
    let draw_y = |rng: &mut ChaCha8Rng, out: &mut Vec<f64>| match config.mode {
        SamplingMode::NormalInitial => out.extend(normals.iter().map(|n| n.sample(rng))),
        SamplingMode::UniformBox => out.extend(domain.omega.iter().map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())),
    };
    let mut set = CollocationSet::default();
    for _ in 0..config.n_interior {
        let mut p = Vec::with_capacity(domain.y_dim() + 1);
        p.push(domain.t_final * open_unit(&mut rng));
        draw_y(&mut rng, &mut p);
        set.interior.push(p);
    }
    for _ in 0..config.n_boundary {
        let mut p = Vec::with_capacity(domain.y_dim() + 1);
        p.push(0.0);
        draw_y(&mut rng, &mut p);
        set.boundary.push(p);
    }
    Ok(set)
}

/// Result of one tube update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    /// Points where every component satisfies `|φ_k| ≤ ε_A`.
    pub joint: CollocationSet,
    /// Per-component tubes `|φ_k| ≤ ε_A`.
    pub components: Vec<CollocationSet>,
    pub candidates_interior: usize,
    pub candidates_boundary: usize,
}

impl Tube {
    /// Collocation set used to fit component `k`.
    pub fn for_component(&self, k: usize) -> &CollocationSet {
        &self.components[k]
    }
}

/// Draws uniform candidates in `(0,T) x Ω` and on `{0} x Ω` and keeps those
/// inside the `ε_A` tube of the coarse `K`-component evaluator.
pub fn adapt_tube<E>(evaluator: E, k: usize, domain: &DomainBox, tube: &TubeConfig, seed: u64) -> Result<Tube>
where
    E: Fn(&[f64], &mut [f64]) + Sync,
{
    if !(tube.eps_a > 0.0) {
        return Err(Error::InvalidParameter(format!("tube half-width must be positive, got {}", tube.eps_a)));
    }
    if tube.n_candidates == 0 || k == 0 {
        return Err(Error::InvalidParameter("tube needs at least one candidate and one component".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = domain.y_dim() + 1;
    let draw = |rng: &mut ChaCha8Rng, t: Option<f64>| {
        let mut p = Vec::with_capacity(dim);
        p.push(t.unwrap_or_else(|| domain.t_final * open_unit(rng)));
        p.extend(domain.omega.iter().map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>()));
        p
    };
    let interior: Vec<Vec<f64>> = (0..tube.n_candidates).map(|_| draw(&mut rng, None)).collect();
    let nb = tube.boundary_candidates(domain.y_dim());
    let boundary: Vec<Vec<f64>> = (0..nb).map(|_| draw(&mut rng, Some(0.0))).collect();

    let eval = |pts: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        pts.par_iter()
            .map(|p| {
                let mut v = vec![0.0; k];
                evaluator(p, &mut v);
                if v.iter().all(|x| x.is_finite()) {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("tube evaluator at {p:?}")))
                }
            })
            .collect()
    };
    let vi = eval(&interior)?;
    let vb = eval(&boundary)?;

    let mut out = Tube {
        joint: CollocationSet::default(),
        components: vec![CollocationSet::default(); k],
        candidates_interior: interior.len(),
        candidates_boundary: boundary.len(),
    };
    let eps = tube.eps_a;
    for (pts, vals, is_boundary) in [(&interior, &vi, false), (&boundary, &vb, true)] {
        for (p, v) in pts.iter().zip(vals) {
            let target = |s: &mut CollocationSet| {
                if is_boundary {
                    s.boundary.push(p.clone())
                } else {
                    s.interior.push(p.clone())
                }
            };
            if v.iter().all(|x| x.abs() <= eps) {
                target(&mut out.joint);
            }
            for (c, x) in out.components.iter_mut().zip(v) {
                if x.abs() <= eps {
                    target(c);
                }
            }
        }
    }
    for c in &out.components {
        if c.n_interior() == 0 {
            return Err(Error::EmptyTube {
                eps,
                candidates: interior.len(),
            });
        }
        if c.n_boundary() == 0 {
            return Err(Error::EmptyTube {
                eps,
                candidates: boundary.len(),
            });
        }
    }
    Ok(out)
}

/// Indices of the `m` largest residuals, descending; ties go to the earlier
/// index.
pub fn select_error_points(residuals: &[f64], m: usize) -> Result<Vec<usize>> {
    if residuals.len() < m {
        return Err(Error::PoolTooSmall {
            needed: m,
            available: residuals.len(),
        });
    }
    if let Some(i) = residuals.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("residual at pool index {i}")));
    }
    let mut idx: Vec<usize> = (0..residuals.len()).collect();
    idx.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]).then(a.cmp(&b)));
    idx.truncate(m);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex1_domain() -> DomainBox {
        DomainBox::new(1.0, vec![[-1.0, 1.0]; 2]).unwrap()
    }

    fn ex1_sampling() -> SamplingConfig {
        SamplingConfig {
            mode: SamplingMode::NormalInitial,
            mean: vec![0.0, 0.0],
            variance: vec![1.0, 1.0],
            n_interior: 64000,
            n_boundary: 5000,
        }
    }

    #[test]
    fn initial_counts_and_time_range() {
        let s = sample_initial(&ex1_sampling(), &ex1_domain(), 1).unwrap();
        assert_eq!(s.n_interior(), 64000);
        assert_eq!(s.n_boundary(), 5000);
        assert!(s.interior.iter().all(|p| p[0] > 0.0 && p[0] < 1.0));
        assert!(s.boundary.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn initial_mean_within_three_sigma() {
        let mut cfg = ex1_sampling();
        cfg.mean = vec![0.0, 0.5];
        cfg.variance = vec![2.0, 1.5];
        let s = sample_initial(&cfg, &ex1_domain(), 7).unwrap();
        let n = s.n_interior() as f64;
        for c in 0..2 {
            let m: f64 = s.interior.iter().map(|p| p[c + 1]).sum::<f64>() / n;
            let bound = 3.0 * (cfg.variance[c] / n).sqrt();
            assert!((m - cfg.mean[c]).abs() <= bound, "coord {c}: {m}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_initial(&ex1_sampling(), &ex1_domain(), 3).unwrap();
        let b = sample_initial(&ex1_sampling(), &ex1_domain(), 3).unwrap();
        let c = sample_initial(&ex1_sampling(), &ex1_domain(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn nonpositive_variance_rejected() {
        let mut cfg = ex1_sampling();
        cfg.variance[1] = 0.0;
        assert!(matches!(sample_initial(&cfg, &ex1_domain(), 1), Err(Error::InvalidParameter(_))));
        cfg.variance = vec![1.0];
        assert!(matches!(sample_initial(&cfg, &ex1_domain(), 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn uniform_mode_stays_in_box() {
        let mut cfg = ex1_sampling();
        cfg.mode = SamplingMode::UniformBox;
        cfg.n_interior = 2000;
        let d = ex1_domain();
        let s = sample_initial(&cfg, &d, 1).unwrap();
        assert!(s.interior.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn tube_kept_fraction_matches_measure() {
        // φ = z on z ∈ [-1, 1]: P(|z| ≤ 0.4) = 0.4.
        let d = ex1_domain();
        let cfg = TubeConfig::new(51usize.pow(3), 0.4);
        let t = adapt_tube(|x, v| v[0] = x[2], 1, &d, &cfg, 11).unwrap();
        let n = t.candidates_interior as f64;
        let frac = t.joint.n_interior() as f64 / n;
        let sigma = (0.4 * 0.6 / n).sqrt();
        assert!((frac - 0.4).abs() <= 3.0 * sigma, "{frac}");
        assert!(t.joint.interior.iter().all(|p| p[2].abs() <= 0.4));
        assert_eq!(t.candidates_boundary, (132651f64.powf(2.0 / 3.0)).round() as usize);
    }

    #[test]
    fn wide_tube_keeps_everything() {
        let d = ex1_domain();
        let cfg = TubeConfig::new(1000, 5.0);
        let t = adapt_tube(|x, v| v[0] = x[1] + x[2], 1, &d, &cfg, 2).unwrap();
        assert_eq!(t.joint.n_interior(), 1000);
        assert_eq!(t.joint.n_boundary(), t.candidates_boundary);
    }

    #[test]
    fn empty_tube_is_an_error() {
        let d = ex1_domain();
        let err = adapt_tube(|_, v| v[0] = 10.0, 1, &d, &TubeConfig::new(100, 0.5), 2).unwrap_err();
        assert!(matches!(err, Error::EmptyTube { .. }));
        assert!(err.to_string().contains("increase"));
    }

    #[test]
    fn per_component_tubes() {
        let d = DomainBox::new(1.0, vec![[-1.0, 1.0]; 2]).unwrap();
        let cfg = TubeConfig::new(5000, 0.3);
        let t = adapt_tube(
            |x, v| {
                v[0] = x[1];
                v[1] = x[2];
            },
            2,
            &d,
            &cfg,
            5,
        )
        .unwrap();
        assert!(t.components[0].interior.iter().all(|p| p[1].abs() <= 0.3));
        assert!(t.components[1].interior.iter().all(|p| p[2].abs() <= 0.3));
        assert!(t.joint.interior.iter().all(|p| p[1].abs() <= 0.3 && p[2].abs() <= 0.3));
        assert!(t.joint.n_interior() < t.components[0].n_interior());
    }

    #[test]
    fn top_m_selection() {
        assert_eq!(select_error_points(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(select_error_points(&[1.0; 5], 3).unwrap(), vec![0, 1, 2]);
        let err = select_error_points(&[1.0; 2], 5).unwrap_err();
        assert!(err.to_string().contains("short by 3"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let mut cfg = ex1_sampling();
        cfg.n_interior = 10;
        cfg.n_boundary = 4;
        let s = sample_initial(&cfg, &ex1_domain(), 1).unwrap();
        let names: Vec<String> = ["t", "x", "z"].iter().map(|s| s.to_string()).collect();
        s.write_csv(&p, &names).unwrap();
        let (n2, s2) = CollocationSet::read_csv(&p).unwrap();
        assert_eq!(n2, names);
        assert_eq!(s2, s);
    }

    proptest! {
        #[test]
        fn selection_is_sorted_subset(r in proptest::collection::vec(0.0f64..10.0, 1..60), frac in 0.0f64..1.0) {
            let m = ((r.len() as f64) * frac) as usize;
            let idx = select_error_points(&r, m).unwrap();
            prop_assert_eq!(idx.len(), m);
            for w in idx.windows(2) {
                prop_assert!(r[w[0]] >= r[w[1]]);
            }
            let mut u = idx.clone();
            u.sort();
            u.dedup();
            prop_assert_eq!(u.len(), m);
            // Nothing left out beats the smallest selected value.
            if let Some(&last) = idx.last() {
                for (i, v) in r.iter().enumerate() {
                    if !idx.contains(&i) {
                        prop_assert!(*v <= r[last]);
                    }
                }
            }
        }
    }
}
