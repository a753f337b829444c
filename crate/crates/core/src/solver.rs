//! Least-squares assembly and the coarse / tube / growth pipeline.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collocation::{adapt_tube, sample_initial, select_error_points, CollocationSet, SamplingConfig, Tube, TubeConfig};
use crate::error::{Error, Result};
use crate::network::{grow_layer_grouped, init_first_layer, FeatureBasis, GrowthGroup, GrowthParams, ScaleSource};
use crate::numerics::{dot, optimality_scale, residual_orthogonality, solve_lsq, DenseMatrix, LsqReport};
use crate::problems::{GrowthSpec, LevelSetProblem};
use crate::zeroset::{extract, Grid, ZeroSetConfig};

pub const DEFAULT_ETA: f64 = 15.0;

/// Weighted least-squares system `‖Aα − b_k‖²` for all `K` components.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub interior_weight: f64,
    pub boundary_weight: f64,
}

fn weights(problem: &LevelSetProblem, n_interior: usize, n_boundary: usize, eta: f64) -> (f64, f64) {
    let dom = problem.domain();
    let wi = if n_interior > 0 {
        (dom.space_time_volume() / n_interior as f64).sqrt()
    } else {
        0.0
    };
    let wb = if n_boundary > 0 {
        (eta * dom.omega_volume() / n_boundary as f64).sqrt()
    } else {
        0.0
    };
    (wi, wb)
}

fn check_point(problem: &LevelSetProblem, p: &[f64]) -> Result<()> {
    if p.len() != problem.input_dim() {
        return Err(Error::Dimension {
            context: "collocation point",
            expected: problem.input_dim(),
            found: p.len(),
        });
    }
    Ok(())
}

/// Rows are interior points (`w_I·Gψ_j`) followed by boundary points
/// (`w_B·ψ_j`), with `w_I² = |D|/N^I` and `w_B² = η|Γ|/N^B`.
pub fn assemble(problem: &LevelSetProblem, basis: &FeatureBasis, colloc: &CollocationSet, eta: f64) -> Result<AssembledSystem> {
    if colloc.is_empty() {
        return Err(Error::InvalidParameter("empty collocation set".into()));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("boundary penalty must be nonnegative, got {eta}")));
    }
    if basis.input_dim() != problem.input_dim() {
        return Err(Error::Dimension {
            context: "basis input dimension",
            expected: problem.input_dim(),
            found: basis.input_dim(),
        });
    }
    for p in colloc.interior.iter().chain(&colloc.boundary) {
        check_point(problem, p)?;
    }
    let (ni, nb) = (colloc.n_interior(), colloc.n_boundary());
    let m = basis.feature_count();
    let k = problem.n_components();
    if ni + nb < m {
        log::warn!("underdetermined system: {} rows for {m} features", ni + nb);
    }
    let (wi, wb) = weights(problem, ni, nb, eta);
    let mut a = DenseMatrix::zeros(ni + nb, m);
    let mut b = DenseMatrix::zeros(ni + nb, k);
    let dim = problem.input_dim();

    let (a_int, a_bnd) = a.as_mut_slice().split_at_mut(ni * m);
    a_int
        .par_chunks_mut(m)
        .zip(&colloc.interior)
        .for_each_init(
            || (vec![0.0; m], vec![0.0; dim]),
            |(val, dir), (row, x)| {
                problem.characteristic_direction(x, dir);
                basis.forward(x, Some(dir), val, row);
                row.iter_mut().for_each(|v| *v *= wi);
            },
        );
    if m > 0 {
        a_bnd.par_chunks_mut(m).zip(&colloc.boundary).for_each(|(row, x)| {
            basis.forward(x, None, row, &mut []);
            row.iter_mut().for_each(|v| *v *= wb);
        });
    }
    for (i, x) in colloc.boundary.iter().enumerate() {
        let g = problem.boundary_values(&x[1..]);
        b.row_mut(ni + i).iter_mut().zip(g).for_each(|(o, v)| *o = wb * v);
    }

    for i in 0..ni + nb {
        if a.row(i).iter().chain(b.row(i)).any(|v| !v.is_finite()) {
            let p = if i < ni { &colloc.interior[i] } else { &colloc.boundary[i - ni] };
            return Err(Error::NonFinite(format!("assembled row {i} at point {p:?}")));
        }
    }
    Ok(AssembledSystem {
        a,
        b,
        n_interior: ni,
        n_boundary: nb,
        interior_weight: wi,
        boundary_weight: wb,
    })
}

/// Coefficients for every right-hand side of an assembled system.
#[derive(Clone, Debug)]
pub struct Fit {
    pub coefficients: Vec<Vec<f64>>,
    pub report: LsqReport,
    /// `‖Aᵀ(Aα − b)‖∞ / (‖A‖∞‖b‖∞)` per component.
    pub orthogonality: Vec<f64>,
}

pub fn fit(system: &AssembledSystem) -> Result<Fit> {
    let (x, report) = solve_lsq(&system.a, &system.b)?;
    let k = system.b.cols();
    let mut coefficients = Vec::with_capacity(k);
    let mut orthogonality = Vec::with_capacity(k);
    for c in 0..k {
        let alpha = x.column_vec(c);
        let rhs = system.b.column_vec(c);
        let scale = optimality_scale(&system.a, &rhs);
        let defect = residual_orthogonality(&system.a, &alpha, &rhs)?;
        orthogonality.push(if scale > 0.0 { defect / scale } else { defect });
        coefficients.push(alpha);
    }
    Ok(Fit {
        coefficients,
        report,
        orthogonality,
    })
}

/// Empirical loss per component, evaluated pointwise (independently of any
/// assembled matrix).
pub fn empirical_loss(
    problem: &LevelSetProblem,
    basis: &FeatureBasis,
    alphas: &[Vec<f64>],
    colloc: &CollocationSet,
    eta: f64,
) -> Result<Vec<f64>> {
    for a in alphas {
        basis.check_coefficients(a)?;
    }
    let (ni, nb) = (colloc.n_interior(), colloc.n_boundary());
    let (wi, wb) = weights(problem, ni, nb, eta);
    let r = transport_residuals(problem, basis, alphas, &colloc.interior)?;
    let mut loss = vec![0.0; alphas.len()];
    for row in &r {
        for (l, v) in loss.iter_mut().zip(row) {
            *l += wi * wi * v * v;
        }
    }
    for x in &colloc.boundary {
        check_point(problem, x)?;
        let psi = basis.features(x)?;
        let g = problem.boundary_values(&x[1..]);
        for (c, l) in loss.iter_mut().enumerate() {
            let d = dot(&alphas[c], &psi) - g[c];
            *l += wb * wb * d * d;
        }
    }
    Ok(loss)
}

/// Signed `Gφ_k(X)` for every point and component.
fn transport_residuals(
    problem: &LevelSetProblem,
    basis: &FeatureBasis,
    alphas: &[Vec<f64>],
    points: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    for p in points {
        check_point(problem, p)?;
    }
    let m = basis.feature_count();
    let dim = problem.input_dim();
    Ok(points
        .par_iter()
        .map_init(
            || (vec![0.0; m], vec![0.0; m], vec![0.0; dim]),
            |(val, dval, dir), x| {
                problem.characteristic_direction(x, dir);
                basis.forward(x, Some(dir), val, dval);
                alphas.iter().map(|a| dot(a, dval)).collect()
            },
        )
        .collect())
}

/// `|Gφ(X)|` for one coefficient vector.
pub fn residuals(problem: &LevelSetProblem, basis: &FeatureBasis, alpha: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    basis.check_coefficients(alpha)?;
    Ok(transport_residuals(problem, basis, std::slice::from_ref(&alpha.to_vec()), points)?
        .into_iter()
        .map(|r| r[0].abs())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Coarse,
    Adapted,
    Grown,
}

/// Fitted level-set functions `φ_k = α_k·ψ` on a shared basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub basis: FeatureBasis,
    pub coefficients: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    pub stage: Stage,
}

impl Solution {
    pub fn n_components(&self) -> usize {
        self.coefficients.len()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.input_dim()
    }

    /// Unchecked evaluation of all components into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut psi = vec![0.0; self.basis.feature_count()];
        self.basis.forward(x, None, &mut psi, &mut []);
        for (o, a) in out.iter_mut().zip(&self.coefficients) {
            *o = dot(a, &psi);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let psi = self.basis.features(x)?;
        Ok(self.coefficients.iter().map(|a| dot(a, &psi)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sol: Solution = serde_json::from_str(s)?;
        for a in &sol.coefficients {
            sol.basis.check_coefficients(a)?;
        }
        Ok(sol)
    }
}

/// Where error-indicator candidates for layer growth come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthPoolConfig {
    /// Seed grid for the per-component zero-set extraction.
    pub seed_grid: Vec<usize>,
    #[serde(default = "five")]
    pub iterations: usize,
}

fn five() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampling: SamplingConfig,
    pub tube: TubeConfig,
    pub m1: usize,
    pub r1: Vec<f64>,
    #[serde(default)]
    pub growth: Vec<GrowthSpec>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    pub pool: GrowthPoolConfig,
    pub seed: u64,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_sharpness() -> f64 {
    crate::network::DEFAULT_SHARPNESS
}

/// Seeds of every random stream, derived from the master seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub first_layer: u64,
    pub sampling: u64,
    pub tube: Vec<u64>,
    pub growth: Vec<u64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StageSeeds {
    pub fn derive(master: u64, cycles: usize, growth: usize) -> Self {
        let s = |tag: u64| splitmix(master ^ splitmix(tag));
        Self {
            first_layer: s(1),
            sampling: s(2),
            tube: (0..cycles as u64).map(|c| s(100 + c)).collect(),
            growth: (0..growth as u64).map(|g| s(1000 + g)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub features: usize,
    /// Interior and boundary rows per component fit.
    pub n_interior: Vec<usize>,
    pub n_boundary: Vec<usize>,
    pub loss: Vec<f64>,
    /// Loss of the previous stage's coefficients on this stage's collocation
    /// (growth stages only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_loss: Option<Vec<f64>>,
    pub rank: Vec<usize>,
    pub orthogonality: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<Vec<usize>>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub solution: Solution,
    pub reports: Vec<StageReport>,
    pub seeds: StageSeeds,
    pub initial: CollocationSet,
    pub tube: Tube,
}

/// A pipeline failure with the reports of every completed stage.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: String,
    pub error: Error,
    pub reports: Vec<StageReport>,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineError {}

fn validate(problem: &LevelSetProblem, cfg: &PipelineConfig) -> Result<()> {
    let m0 = problem.input_dim();
    if cfg.r1.len() != m0 {
        return Err(Error::Dimension {
            context: "first-layer range r1",
            expected: m0,
            found: cfg.r1.len(),
        });
    }
    for g in &cfg.growth {
        if g.range.len() != m0 {
            return Err(Error::Dimension {
                context: "growth range",
                expected: m0,
                found: g.range.len(),
            });
        }
        if g.width < problem.n_components() {
            return Err(Error::InvalidParameter(format!(
                "growth width {} is smaller than the number of components {}",
                g.width,
                problem.n_components()
            )));
        }
    }
    if cfg.pool.seed_grid.len() != m0 {
        return Err(Error::Dimension {
            context: "growth pool grid",
            expected: m0,
            found: cfg.pool.seed_grid.len(),
        });
    }
    if cfg.tube.update_cycles == 0 {
        return Err(Error::InvalidParameter("tube update_cycles must be at least 1".into()));
    }
    Ok(())
}

/// Fits every component on its own collocation set. Components sharing one
/// set share one factorization.
fn fit_components(
    problem: &LevelSetProblem,
    basis: &FeatureBasis,
    sets: &[&CollocationSet],
    eta: f64,
    stage: Stage,
    started: Instant,
) -> Result<(Solution, StageReport)> {
    let k = problem.n_components();
    let mut coefficients = vec![Vec::new(); k];
    let mut loss = vec![0.0; k];
    let mut rank = vec![0; k];
    let mut orthogonality = vec![0.0; k];
    let mut done = vec![false; k];
    for c in 0..k {
        if done[c] {
            continue;
        }
        let same: Vec<usize> = (c..k).filter(|&j| !done[j] && sets[j] == sets[c]).collect();
        let system = assemble(problem, basis, sets[c], eta)?;
        let f = fit(&system)?;
        for &j in &same {
            let r = &f.report.residual_norms;
            loss[j] = r[j] * r[j];
            rank[j] = f.report.rank_estimate;
            orthogonality[j] = f.orthogonality[j];
            coefficients[j] = f.coefficients[j].clone();
            done[j] = true;
        }
    }
    let report = StageReport {
        stage,
        features: basis.feature_count(),
        n_interior: sets.iter().map(|s| s.n_interior()).collect(),
        n_boundary: sets.iter().map(|s| s.n_boundary()).collect(),
        loss: loss.clone(),
        previous_loss: None,
        rank,
        orthogonality,
        pool_size: None,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((
        Solution {
            basis: basis.clone(),
            coefficients,
            loss,
            stage,
        },
        report,
    ))
}

/// Candidate points near the zero set of component `c`: the refined cloud
/// inside `D`, topped up with the tube points of smallest `|φ_c|`.
pub fn growth_pool(
    problem: &LevelSetProblem,
    solution: &Solution,
    c: usize,
    tube_set: &CollocationSet,
    pool: &GrowthPoolConfig,
    needed: usize,
) -> Result<Vec<Vec<f64>>> {
    let dom = problem.domain();
    let mut bounds = vec![[0.0, dom.t_final]];
    bounds.extend(dom.omega.iter().copied());
    let grid = Grid::inflated(&bounds, pool.seed_grid.clone(), 0.1)?;
    let alpha = &solution.coefficients[c];
    let basis = &solution.basis;
    let m = basis.feature_count();
    let eval = |x: &[f64], out: &mut [f64]| {
        let mut psi = vec![0.0; m];
        basis.forward(x, None, &mut psi, &mut []);
        out[0] = dot(alpha, &psi);
    };
    let names = problem.coordinate_names().to_vec();
    let (cloud, _) = extract(eval, 1, &grid, pool.iterations, None, names)?;
    let mut points: Vec<Vec<f64>> = cloud.points.into_iter().filter(|p| dom.contains(p) && p[0] > 0.0).collect();
    if points.len() < needed {
        let vals: Vec<f64> = tube_set
            .interior
            .par_iter()
            .map(|x| {
                let mut v = [0.0];
                eval(x, &mut v);
                v[0].abs()
            })
            .collect();
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        let extra = needed - points.len();
        log::info!("growth pool for component {c}: adding {extra} tube points to {} zero-set points", points.len());
        points.extend(idx.into_iter().take(extra).map(|i| tube_set.interior[i].clone()));
    }
    Ok(points)
}

/// Neuron counts per component for a layer of width `m` split over `k`.
fn split_width(m: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| m / k + usize::from(c < m % k)).collect()
}

/// Coarse fit on the initial samples, refit on the tube, then one refit per
/// grown layer.
pub fn solve_pipeline(problem: &LevelSetProblem, cfg: &PipelineConfig) -> std::result::Result<PipelineRun, PipelineError> {
    let mut reports = Vec::new();
    macro_rules! stage {
        ($name:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(PipelineError {
                        stage: $name.to_string(),
                        error,
                        reports,
                    })
                }
            }
        };
    }
    stage!("config", validate(problem, cfg));
    let k = problem.n_components();
    let seeds = StageSeeds::derive(cfg.seed, cfg.tube.update_cycles, cfg.growth.len());

    let t0 = Instant::now();
    let basis = stage!("coarse", init_first_layer(problem.input_dim(), cfg.m1, &cfg.r1, seeds.first_layer));
    let initial = stage!("coarse", sample_initial(&cfg.sampling, problem.domain(), seeds.sampling));
    let (mut solution, report) = stage!("coarse", fit_components(problem, &basis, &vec![&initial; k], cfg.eta, Stage::Coarse, t0));
    reports.push(report);

    let mut tube = None;
    for (cycle, &seed) in seeds.tube.iter().enumerate() {
        let t0 = Instant::now();
        let current = solution.clone();
        let t = stage!(
            "adapted",
            adapt_tube(|x, v| current.eval_into(x, v), k, problem.domain(), &cfg.tube, seed)
        );
        log::info!(
            "tube cycle {cycle}: kept interior {:?}, boundary {:?}",
            t.components.iter().map(|c| c.n_interior()).collect::<Vec<_>>(),
            t.components.iter().map(|c| c.n_boundary()).collect::<Vec<_>>()
        );
        let sets: Vec<&CollocationSet> = t.components.iter().collect();
        let (s, report) = stage!("adapted", fit_components(problem, &basis, &sets, cfg.eta, Stage::Adapted, t0));
        reports.push(report);
        solution = s;
        tube = Some(t);
    }
    let tube = tube.expect("at least one tube cycle");
    let sets: Vec<&CollocationSet> = tube.components.iter().collect();

    for (l, (g, &seed)) in cfg.growth.iter().zip(&seeds.growth).enumerate() {
        let t0 = Instant::now();
        let name = format!("grown[{l}]");
        let widths = split_width(g.width, k);
        let mut chosen = Vec::with_capacity(k);
        let mut pool_sizes = Vec::with_capacity(k);
        for c in 0..k {
            let pool = stage!(name, growth_pool(problem, &solution, c, sets[c], &cfg.pool, widths[c]));
            pool_sizes.push(pool.len());
            let res = stage!(name, residuals(problem, &solution.basis, &solution.coefficients[c], &pool));
            let idx = stage!(name, select_error_points(&res, widths[c]));
            chosen.push(idx.into_iter().map(|i| pool[i].clone()).collect::<Vec<_>>());
        }
        let groups: Vec<GrowthGroup<'_>> = (0..k)
            .map(|c| GrowthGroup {
                coefficients: &solution.coefficients[c],
                points: &chosen[c],
            })
            .collect();
        let params = GrowthParams {
            width: g.width,
            range: g.range.clone(),
            sharpness: cfg.sharpness,
            scale_source: ScaleSource::RandomUniform,
        };
        let grown = stage!(name, grow_layer_grouped(&solution.basis, &groups, &params, seed));
        let (s, mut report) = stage!(name, fit_components(problem, &grown, &sets, cfg.eta, Stage::Grown, t0));
        report.previous_loss = Some(solution.loss.clone());
        report.pool_size = Some(pool_sizes);
        reports.push(report);
        solution = s;
    }

    Ok(PipelineRun {
        solution,
        reports,
        seeds,
        initial,
        tube,
    })
}

/// Zero-set extraction config for the `K` components of a solution over the
/// inflated space-time box.
pub fn extract_zero_set(
    problem: &LevelSetProblem,
    solution: &Solution,
    config: &ZeroSetConfig,
) -> Result<crate::zeroset::PointCloud> {
    let dom = problem.domain();
    let mut bounds = vec![[0.0, dom.t_final]];
    bounds.extend(dom.omega.iter().copied());
    let grid = Grid::inflated(&bounds, config.seed_grid.clone(), config.inflation)?;
    let (cloud, _) = extract(
        |x, v| solution.eval_into(x, v),
        solution.n_components(),
        &grid,
        config.iterations,
        config.eps0,
        problem.coordinate_names().to_vec(),
    )?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::SamplingMode;
    use crate::problems::{catalog, make_hj_gradient, DomainBox, Potential, QuadraticHamiltonian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn free_hj() -> LevelSetProblem {
        let h = Arc::new(QuadraticHamiltonian {
            dim: 1,
            potential: Potential::Zero,
        });
        make_hj_gradient(h, |x, g| g[0] = x[0], DomainBox::new(1.0, vec![[-1.0, 1.0]; 2]).unwrap()).unwrap()
    }

    fn small_colloc(problem: &LevelSetProblem, ni: usize, nb: usize, seed: u64) -> CollocationSet {
        let cfg = SamplingConfig {
            mode: SamplingMode::UniformBox,
            mean: vec![0.0; problem.y_dim()],
            variance: vec![1.0; problem.y_dim()],
            n_interior: ni,
            n_boundary: nb,
        };
        sample_initial(&cfg, problem.domain(), seed).unwrap()
    }

    #[test]
    fn shapes_and_weights() {
        let p = free_hj();
        let basis = init_first_layer(3, 40, &[1.0; 3], 1).unwrap();
        let c = small_colloc(&p, 30, 10, 2);
        let s = assemble(&p, &basis, &c, 15.0).unwrap();
        assert_eq!((s.a.rows(), s.a.cols()), (40, 40));
        assert_eq!((s.b.rows(), s.b.cols()), (40, 1));
        // |D| = 4, |Γ| = 4.
        let ratio = s.boundary_weight.powi(2) / s.interior_weight.powi(2);
        assert!((ratio - 15.0 * 4.0 * 30.0 / (4.0 * 10.0)).abs() < 1e-12);
        assert!((0..30).all(|i| s.b.get(i, 0) == 0.0));
    }

    #[test]
    fn single_feature_entry_matches_finite_difference() {
        let p = free_hj();
        let basis = init_first_layer(3, 1, &[2.0; 3], 5).unwrap();
        let x = vec![0.4, 0.3, -0.6];
        let c = CollocationSet {
            interior: vec![x.clone()],
            boundary: vec![],
        };
        let s = assemble(&p, &basis, &c, 15.0).unwrap();
        let mut dir = vec![0.0; 3];
        p.characteristic_direction(&x, &mut dir);
        let h = 1e-5;
        let f = |e: f64| {
            let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + e * d).collect();
            basis.features(&y).unwrap()[0]
        };
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((s.a.get(0, 0) / s.interior_weight - fd).abs() < 1e-6);
    }

    #[test]
    fn loss_matches_matrix_residual() {
        let p = free_hj();
        let basis = init_first_layer(3, 30, &[1.5; 3], 3).unwrap();
        let c = small_colloc(&p, 60, 20, 4);
        let s = assemble(&p, &basis, &c, 15.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let alpha: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r: Vec<f64> = s
                .a
                .matvec(&alpha)
                .unwrap()
                .iter()
                .zip(s.b.column_vec(0))
                .map(|(a, b)| a - b)
                .collect();
            let direct = r.iter().map(|v| v * v).sum::<f64>();
            let loss = empirical_loss(&p, &basis, &[alpha], &c, 15.0).unwrap()[0];
            assert!((loss - direct).abs() <= 1e-10 * direct);
        }
    }

    #[test]
    fn zero_alpha_and_eta_linearity() {
        let p = free_hj();
        let basis = init_first_layer(3, 10, &[1.5; 3], 3).unwrap();
        let c = small_colloc(&p, 20, 15, 4);
        let zero = vec![vec![0.0; 10]];
        let l = empirical_loss(&p, &basis, &zero, &c, 15.0).unwrap()[0];
        let g2: f64 = c.boundary.iter().map(|x| p.boundary_value(0, &x[1..]).powi(2)).sum();
        let expected = 15.0 * 4.0 / 15.0 * g2;
        assert!((l - expected).abs() <= 1e-12 * expected);
        let alpha = vec![(0..10).map(|i| 0.1 * i as f64).collect::<Vec<_>>()];
        let l0 = empirical_loss(&p, &basis, &alpha, &c, 0.0).unwrap()[0];
        let l1 = empirical_loss(&p, &basis, &alpha, &c, 15.0).unwrap()[0];
        let l2 = empirical_loss(&p, &basis, &alpha, &c, 30.0).unwrap()[0];
        assert!(((l2 - l0) - 2.0 * (l1 - l0)).abs() <= 1e-12 * l2);
    }

    #[test]
    fn fit_is_optimal_and_recovers_manufactured() {
        let p = free_hj();
        let basis = init_first_layer(3, 20, &[1.0; 3], 11).unwrap();
        let c = small_colloc(&p, 150, 50, 12);
        let mut s = assemble(&p, &basis, &c, 15.0).unwrap();
        let f = fit(&s).unwrap();
        assert!(f.orthogonality[0] <= 1e-8);
        let best = f.report.residual_norms[0].powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let alpha: Vec<f64> = f.coefficients[0].iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            let l = empirical_loss(&p, &basis, &[alpha], &c, 15.0).unwrap()[0];
            assert!(best <= l * (1.0 + 1e-12));
        }
        // B := A α* recovers α*.
        let star: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = s.a.matvec(&star).unwrap();
        s.b = DenseMatrix::column(&b);
        let r = fit(&s).unwrap();
        let err = r.coefficients[0].iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = star.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r.report.condition_estimate.is_some_and(|c| c < 1e6) {
            assert!(err <= 1e-8 * norm, "{err}");
        }
        s.b = DenseMatrix::zeros(s.a.rows(), 1);
        assert!(fit(&s).unwrap().coefficients[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residuals_order_invariant() {
        let p = free_hj();
        let basis = init_first_layer(3, 15, &[1.0; 3], 2).unwrap();
        let alpha: Vec<f64> = (0..15).map(|i| (i as f64).sin()).collect();
        let pts = small_colloc(&p, 20, 0, 3).interior;
        let mut rev = pts.clone();
        rev.reverse();
        let mut a = residuals(&p, &basis, &alpha, &pts).unwrap();
        let b = residuals(&p, &basis, &alpha, &rev).unwrap();
        a.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_velocity_rejected() {
        let p = free_hj();
        let basis = init_first_layer(3, 5, &[1.0; 3], 2).unwrap();
        let c = CollocationSet {
            interior: vec![vec![0.5, 0.0, f64::NAN]],
            boundary: vec![],
        };
        let err = assemble(&p, &basis, &c, 15.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    fn tiny_config(problem: &LevelSetProblem, growth: Vec<GrowthSpec>) -> PipelineConfig {
        let n = problem.y_dim();
        PipelineConfig {
            sampling: SamplingConfig {
                mode: SamplingMode::NormalInitial,
                mean: vec![0.0; n],
                variance: vec![1.0; n],
                n_interior: 600,
                n_boundary: 150,
            },
            tube: TubeConfig::new(4000, 0.5),
            m1: 60,
            r1: vec![1.5; n + 1],
            growth,
            eta: 15.0,
            sharpness: 15.0,
            pool: GrowthPoolConfig {
                seed_grid: vec![12; n + 1],
                iterations: 3,
            },
            seed: 7,
        }
    }

    #[test]
    fn pipeline_without_growth_stops_at_adapted() {
        let p = free_hj();
        let run = solve_pipeline(&p, &tiny_config(&p, vec![])).unwrap();
        assert_eq!(run.solution.stage, Stage::Adapted);
        assert_eq!(run.reports.len(), 2);
    }

    #[test]
    fn growth_does_not_increase_loss_on_fixed_collocation() {
        let p = free_hj();
        let g = vec![GrowthSpec {
            width: 20,
            range: vec![2.0; 3],
        }];
        let run = solve_pipeline(&p, &tiny_config(&p, g)).unwrap();
        assert_eq!(run.solution.stage, Stage::Grown);
        let last = run.reports.last().unwrap();
        let prev = last.previous_loss.as_ref().unwrap();
        assert!(last.loss[0] <= prev[0] + 1e-12, "{:?} vs {prev:?}", last.loss);
        assert_eq!(last.features, 80);
        // Loss before growth is the adapted stage's, on the same tube.
        assert_eq!(prev, &run.reports[1].loss);
    }

    #[test]
    fn multi_component_pipeline_is_deterministic() {
        let p = catalog("ex3b.case1").unwrap().problem;
        let g = vec![GrowthSpec {
            width: 10,
            range: vec![2.0; 4],
        }];
        let mut cfg = tiny_config(&p, g);
        cfg.pool.seed_grid = vec![6; 4];
        let a = solve_pipeline(&p, &cfg).unwrap();
        let b = solve_pipeline(&p, &cfg).unwrap();
        assert_eq!(a.solution.coefficients, b.solution.coefficients);
        assert_eq!(a.solution.n_components(), 2);
        assert_eq!(a.reports[1].n_interior.len(), 2);
        assert_eq!(split_width(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn bad_config_reports_stage() {
        let p = free_hj();
        let mut cfg = tiny_config(&p, vec![]);
        cfg.r1 = vec![1.0];
        let err = solve_pipeline(&p, &cfg).unwrap_err();
        assert_eq!(err.stage, "config");
        assert!(err.reports.is_empty());
    }

    #[test]
    fn solution_json_round_trip() {
        let p = free_hj();
        let run = solve_pipeline(&p, &tiny_config(&p, vec![])).unwrap();
        let s = run.solution.to_json().unwrap();
        let back = Solution::from_json(&s).unwrap();
        let x = [0.3, 0.1, -0.2];
        assert_eq!(back.evaluate(&x).unwrap(), run.solution.evaluate(&x).unwrap());
    }
}
