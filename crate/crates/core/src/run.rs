//! End-to-end runs: pipeline, zero-set extraction, manifest and comparison
//! against the characteristics oracle.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collocation::CollocationSet;
use crate::config::{CollocationFilter, OracleConfig, ResolvedRun, RunConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::oracle::{chamfer, foot_grid, problem_manifold, Chamfer};
use crate::problems::LevelSetProblem;
use crate::solver::{extract_zero_set, solve_pipeline, PipelineRun, Solution, StageReport, StageSeeds};
use crate::zeroset::{extract, fix_coordinate, project, Grid, NeighborFilter, PointCloud, ZeroSetConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SOLUTION_FILE: &str = "solution.json";
pub const CLOUD_FILE: &str = "cloud.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub pipeline_seconds: f64,
    pub extraction_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<StageSeeds>,
    pub stages: Vec<StageReport>,
    /// Realized tube sizes per component.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tube_interior: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tube_boundary: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer: Option<Comparison>,
    pub timings: Timings,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::write_atomic(&dir.join(MANIFEST_FILE), self.to_json()?.as_bytes())
    }
}

pub struct RunOutput {
    pub run: PipelineRun,
    pub cloud: PointCloud,
    pub manifest: Manifest,
}

/// A failed run with whatever was produced before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub manifest: Manifest,
}

/// Zero set of a solution restricted to the closed box `[0,T] x Ω`: either
/// the full space-time set or fixed-time slices.
pub fn extract_cloud(
    problem: &LevelSetProblem,
    solution: &Solution,
    config: &ZeroSetConfig,
    slice_times: Option<&[f64]>,
) -> Result<PointCloud> {
    let cloud = match slice_times {
        None => extract_zero_set(problem, solution, config)?,
        Some(times) => {
            let names = problem.coordinate_names();
            let grid = Grid::inflated(&problem.domain().omega, config.seed_grid.clone(), config.inflation)?;
            let mut all = PointCloud {
                names: names.to_vec(),
                ..Default::default()
            };
            for &t in times {
                let eval = fix_coordinate(|x: &[f64], v: &mut [f64]| solution.eval_into(x, v), 0, t);
                let (c, _) = extract(
                    eval,
                    solution.n_components(),
                    &grid,
                    config.iterations,
                    config.eps0,
                    names[1..].to_vec(),
                )?;
                let c = c.with_coordinate(0, &names[0], t);
                all.points.extend(c.points);
                all.values.extend(c.values);
            }
            all
        }
    };
    Ok(clip(problem, cloud))
}

fn clip(problem: &LevelSetProblem, cloud: PointCloud) -> PointCloud {
    let dom = problem.domain();
    let mut out = PointCloud {
        names: cloud.names,
        ..Default::default()
    };
    for (p, v) in cloud.points.into_iter().zip(cloud.values) {
        if dom.contains(&p) {
            out.points.push(p);
            out.values.push(v);
        }
    }
    out
}

/// Oracle manifold at the configured times, restricted to `[0,T] x Ω`.
pub fn oracle_cloud(problem: &LevelSetProblem, config: &OracleConfig) -> Result<PointCloud> {
    let d = problem.spatial_dim();
    let x_box = &problem.domain().omega[..d];
    let feet = foot_grid(x_box, config.foot_points);
    let m = problem_manifold(problem, &config.times, &feet, config.jump_points, config.steps_per_unit)?;
    Ok(clip(problem, m))
}

/// Keeps the points of `cloud` whose `k`-th nearest point of the tube
/// (interior and inflow boundary) lies within `max_dist`.
pub fn filter_near_tube(cloud: &PointCloud, tube: &CollocationSet, filter: CollocationFilter) -> Result<PointCloud> {
    let reference: Vec<Vec<f64>> = tube.interior.iter().chain(&tube.boundary).cloned().collect();
    let keep: Vec<usize> = (0..cloud.dim()).collect();
    project(
        cloud,
        &keep,
        Some(NeighborFilter {
            reference: &reference,
            k: filter.k,
            max_dist: filter.max_dist,
        }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceComparison {
    pub t: f64,
    pub chamfer: Chamfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub overall: Chamfer,
    pub slices: Vec<SliceComparison>,
}

/// Chamfer distances overall and per reference time slice (`|t − t_i| ≤ δ`,
/// distances measured in the remaining coordinates).
pub fn compare(cloud: &PointCloud, reference: &PointCloud, delta: f64) -> Result<Comparison> {
    if cloud.names != reference.names {
        return Err(Error::SchemaMismatch {
            left: cloud.names.join(","),
            right: reference.names.join(","),
        });
    }
    let overall = chamfer(&cloud.points, &reference.points)?;
    let mut times: Vec<f64> = Vec::new();
    if cloud.names.first().map(String::as_str) == Some("t") {
        for p in &reference.points {
            if !times.iter().any(|t| (t - p[0]).abs() <= delta) {
                times.push(p[0]);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    let mut slices = Vec::new();
    for t in times {
        let a = cloud.slice(0, t, delta)?;
        let b = reference.slice(0, t, delta)?;
        if a.is_empty() || b.is_empty() {
            continue;
        }
        slices.push(SliceComparison {
            t,
            chamfer: chamfer(&a.points, &b.points)?,
        });
    }
    Ok(Comparison { overall, slices })
}

fn manifest_skeleton(resolved: &ResolvedRun) -> Manifest {
    Manifest {
        status: "ok".into(),
        failed_stage: None,
        error: None,
        config: resolved.echo.clone(),
        seeds: None,
        stages: Vec::new(),
        tube_interior: Vec::new(),
        tube_boundary: Vec::new(),
        cloud_points: None,
        chamfer: None,
        timings: Timings {
            pipeline_seconds: 0.0,
            extraction_seconds: 0.0,
        },
    }
}

/// Runs the pipeline and the zero-set extraction.
pub fn execute(resolved: &ResolvedRun) -> std::result::Result<RunOutput, Box<RunFailure>> {
    let mut manifest = manifest_skeleton(resolved);
    let t0 = Instant::now();
    let run = match solve_pipeline(&resolved.problem, &resolved.pipeline) {
        Ok(r) => r,
        Err(e) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some(e.stage.clone());
            manifest.error = Some(e.error.to_string());
            manifest.stages = e.reports;
            manifest.timings.pipeline_seconds = t0.elapsed().as_secs_f64();
            return Err(Box::new(RunFailure { error: e.error, manifest }));
        }
    };
    manifest.timings.pipeline_seconds = t0.elapsed().as_secs_f64();
    manifest.seeds = Some(run.seeds.clone());
    manifest.stages = run.reports.clone();
    manifest.tube_interior = run.tube.components.iter().map(|c| c.n_interior()).collect();
    manifest.tube_boundary = run.tube.components.iter().map(|c| c.n_boundary()).collect();

    let t1 = Instant::now();
    let cloud = match extract_cloud(
        &resolved.problem,
        &run.solution,
        &resolved.zeroset,
        resolved.slice_times.as_deref(),
    )
    .and_then(|c| match resolved.filter {
        Some(f) => filter_near_tube(&c, &run.tube.joint, f),
        None => Ok(c),
    }) {
        Ok(c) => c,
        Err(error) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some("zeroset".into());
            manifest.error = Some(error.to_string());
            return Err(Box::new(RunFailure { error, manifest }));
        }
    };
    manifest.timings.extraction_seconds = t1.elapsed().as_secs_f64();
    manifest.cloud_points = Some(cloud.len());
    Ok(RunOutput { run, cloud, manifest })
}

/// Writes `solution.json`, `cloud.csv` and `manifest.json` into `dir`.
pub fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<()> {
    io::write_atomic(&dir.join(SOLUTION_FILE), out.run.solution.to_json()?.as_bytes())?;
    out.cloud.write_csv(&dir.join(CLOUD_FILE))?;
    out.manifest.write(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(case: &str) -> RunConfig {
        let mut c = RunConfig::for_case(case);
        c.sampling.n_interior = Some(800);
        c.sampling.n_boundary = Some(200);
        c.tube.n_candidates = Some(4000);
        c.network.m1 = Some(80);
        c.network.growth_enabled = Some(false);
        c.zeroset.seed_grid = Some(vec![15; 2]);
        c.zeroset.slice_times = Some(vec![0.0, 0.5]);
        c.oracle.foot_points = Some(101);
        c
    }

    #[test]
    fn execute_and_compare() {
        let r = tiny("ex3.case1").resolve().unwrap();
        let out = execute(&r).unwrap();
        assert!(!out.cloud.is_empty());
        assert!(out.cloud.points.iter().all(|p| r.problem.domain().contains(p)));
        let reference = oracle_cloud(&r.problem, &r.oracle).unwrap();
        let cmp = compare(&out.cloud, &reference, 1e-12).unwrap();
        assert_eq!(cmp.slices.len(), 2);
        let same = compare(&reference, &reference, 1e-12).unwrap();
        assert_eq!(same.overall.mean, 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(dir.path(), &out).unwrap();
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.status, "ok");
        assert_eq!(m.stages.len(), 2);
    }

    #[test]
    fn tube_filter_drops_far_points() {
        let tube = CollocationSet {
            interior: vec![vec![0.5, 0.0, 0.0]],
            boundary: vec![vec![0.0, 1.0, 1.0]],
        };
        let names = vec!["t".to_string(), "x".into(), "z".into()];
        let cloud = PointCloud::new(
            names,
            vec![vec![0.5, 0.05, 0.0], vec![0.0, 1.0, 0.95], vec![0.5, 0.5, 0.5]],
            vec![0.0; 3],
        )
        .unwrap();
        let kept = filter_near_tube(&cloud, &tube, CollocationFilter { k: 1, max_dist: 0.1 }).unwrap();
        assert_eq!(kept.points, vec![vec![0.5, 0.05, 0.0], vec![0.0, 1.0, 0.95]]);
        assert_eq!(kept.names, cloud.names);
    }

    #[test]
    fn schema_mismatch_names_both() {
        let a = PointCloud::new(vec!["t".into(), "x".into()], vec![vec![0.0, 0.0]], vec![0.0]).unwrap();
        let b = PointCloud::new(vec!["t".into(), "x".into(), "z".into()], vec![vec![0.0, 0.0, 0.0]], vec![0.0]).unwrap();
        let err = compare(&a, &b, 0.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t,x") && msg.contains("t,x,z"), "{msg}");
    }

    #[test]
    fn failure_keeps_partial_manifest() {
        let mut c = tiny("ex3.case1");
        c.tube.eps_a = Some(1e-12);
        let r = c.resolve().unwrap();
        let err = execute(&r).err().unwrap();
        assert_eq!(err.manifest.status, "failed");
        assert_eq!(err.manifest.failed_stage.as_deref(), Some("adapted"));
        assert_eq!(err.manifest.stages.len(), 1);
        assert!(err.error.is_numerical());
    }
}
