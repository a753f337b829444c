//! Run configuration: a catalog case plus optional overrides of any table
//! parameter. `resolve` fills the gaps from the catalog.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collocation::{SamplingConfig, SamplingMode, TubeConfig};
use crate::error::{Error, Result};
use crate::network::DEFAULT_SHARPNESS;
use crate::oracle::DEFAULT_STEPS_PER_UNIT;
use crate::problems::{catalog, CaseParams, DomainBox, GrowthSpec, LevelSetProblem};
use crate::solver::{GrowthPoolConfig, PipelineConfig};
use crate::zeroset::ZeroSetConfig;

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SamplingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_interior: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boundary: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_candidates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_boundary_candidates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_cycles: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<f64>,
    /// `false` drops the growth schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<Vec<GrowthSpec>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroSetOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    /// Extract fixed-time slices instead of the full space-time set. The
    /// seed grid then covers `Y` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<CollocationFilter>,
}

/// Drops extracted points whose `k`-th nearest tube collocation point is
/// farther than `max_dist`. The fit is only trusted near the tube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationFilter {
    pub k: usize,
    pub max_dist: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOverrides {
    /// Foot points per spatial dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foot_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_unit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Samples across each jump of the initial data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_points: Option<usize>,
}

/// One run: a catalog case, a seed, and overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default)]
    pub sampling: SamplingOverrides,
    #[serde(default)]
    pub tube: TubeOverrides,
    #[serde(default)]
    pub network: NetworkOverrides,
    #[serde(default)]
    pub pool: PoolOverrides,
    #[serde(default)]
    pub zeroset: ZeroSetOverrides,
    #[serde(default)]
    pub oracle: OracleOverrides,
}

/// Oracle sampling options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub foot_points: usize,
    pub steps_per_unit: usize,
    pub times: Vec<f64>,
    pub jump_points: usize,
}

/// Everything needed to execute a run.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub params: CaseParams,
    pub problem: LevelSetProblem,
    pub pipeline: PipelineConfig,
    pub zeroset: ZeroSetConfig,
    pub slice_times: Option<Vec<f64>>,
    pub filter: Option<CollocationFilter>,
    pub oracle: OracleConfig,
    pub output: PathBuf,
    /// The config with every field filled in.
    pub echo: RunConfig,
}

impl RunConfig {
    pub fn for_case(case: &str) -> Self {
        Self {
            case: case.to_string(),
            seed: default_seed(),
            output: None,
            t_final: None,
            omega: None,
            eta: None,
            sampling: Default::default(),
            tube: Default::default(),
            network: Default::default(),
            pool: Default::default(),
            zeroset: Default::default(),
            oracle: Default::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Fills every field from the catalog and validates the result.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        self.resolve_inner(true)
    }

    fn resolve_inner(&self, require_eps0: bool) -> Result<ResolvedRun> {
        let spec = catalog(&self.case).map_err(|e| Error::Config(e.to_string()))?;
        let mut params = spec.params;
        let y_dim = params.omega.len();
        let m0 = y_dim + 1;
        let bad = |msg: String| Err(Error::Config(msg));

        if let Some(t) = self.t_final {
            params.t_final = t;
        }
        if let Some(o) = &self.omega {
            if o.len() != y_dim {
                return bad(format!("omega has {} intervals, case `{}` needs {y_dim}", o.len(), self.case));
            }
            params.omega = o.clone();
        }
        let domain = DomainBox::new(params.t_final, params.omega.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let problem = spec.problem.with_domain(domain).map_err(|e| Error::Config(e.to_string()))?;

        let s = &self.sampling;
        let sampling = SamplingConfig {
            mode: s.mode.unwrap_or_default(),
            mean: s.mean.clone().unwrap_or_else(|| params.mean.clone()),
            variance: s.variance.clone().unwrap_or_else(|| params.variance.clone()),
            n_interior: s.n_interior.unwrap_or(params.n_interior),
            n_boundary: s.n_boundary.unwrap_or(params.n_boundary),
        };
        for (name, v) in [("sampling.mean", &sampling.mean), ("sampling.variance", &sampling.variance)] {
            if v.len() != y_dim {
                return bad(format!("{name} has {} entries, expected {y_dim}", v.len()));
            }
        }
        if sampling.variance.iter().any(|v| !(*v > 0.0)) {
            return bad(format!("sampling.variance must be positive, got {:?}", sampling.variance));
        }

        let t = &self.tube;
        let mut tube = TubeConfig::new(t.n_candidates.unwrap_or(params.n_candidates), t.eps_a.unwrap_or(params.eps_a));
        tube.update_cycles = t.update_cycles.unwrap_or(1);
        tube.n_boundary_candidates = Some(t.n_boundary_candidates.unwrap_or_else(|| tube.boundary_candidates(y_dim)));
        if !(tube.eps_a > 0.0) || tube.n_candidates == 0 || tube.update_cycles == 0 {
            return bad("tube needs eps_a > 0, n_candidates ≥ 1 and update_cycles ≥ 1".into());
        }

        let n = &self.network;
        let growth_enabled = n.growth_enabled.unwrap_or(true);
        let growth = if growth_enabled {
            n.growth.clone().unwrap_or_else(|| params.growth.clone())
        } else {
            Vec::new()
        };
        let r1 = n.r1.clone().unwrap_or_else(|| params.r1.clone());
        if r1.len() != m0 {
            return bad(format!("network.r1 has {} entries, expected {m0}", r1.len()));
        }
        for g in &growth {
            if g.range.len() != m0 {
                return bad(format!("network.growth range has {} entries, expected {m0}", g.range.len()));
            }
        }
        let m1 = n.m1.unwrap_or(params.m1);
        if m1 == 0 {
            return bad("network.m1 must be positive".into());
        }

        let pool = GrowthPoolConfig {
            seed_grid: self.pool.seed_grid.clone().unwrap_or_else(|| params.seed_grid.clone()),
            iterations: self.pool.iterations.unwrap_or(5),
        };
        if pool.seed_grid.len() != m0 {
            return bad(format!("pool.seed_grid has {} entries, expected {m0}", pool.seed_grid.len()));
        }

        let eta = self.eta.unwrap_or(params.eta);
        let pipeline = PipelineConfig {
            sampling,
            tube,
            m1,
            r1,
            growth,
            eta,
            sharpness: n.sharpness.unwrap_or(DEFAULT_SHARPNESS),
            pool,
            seed: self.seed,
        };

        let z = &self.zeroset;
        let slice_times = z.slice_times.clone();
        let grid_dim = if slice_times.is_some() { y_dim } else { m0 };
        let default_grid = if slice_times.is_some() {
            params.seed_grid[1..].to_vec()
        } else {
            params.seed_grid.clone()
        };
        let zeroset = ZeroSetConfig {
            seed_grid: z.seed_grid.clone().unwrap_or(default_grid),
            iterations: z.iterations.unwrap_or(5),
            inflation: z.inflation.unwrap_or(0.1),
            eps0: z.eps0,
        };
        if zeroset.seed_grid.len() != grid_dim {
            return bad(format!(
                "zeroset.seed_grid has {} entries, expected {grid_dim}",
                zeroset.seed_grid.len()
            ));
        }
        if zeroset.iterations == 0 {
            return bad("zeroset.iterations must be at least 1".into());
        }
        if require_eps0 && problem.n_components() > 1 && zeroset.eps0.is_none() {
            return bad(format!(
                "case `{}` has {} level-set components; set zeroset.eps0 (no default is assumed)",
                self.case,
                problem.n_components()
            ));
        }
        if let Some(ts) = &slice_times {
            if ts.iter().any(|t| !(0.0..=params.t_final).contains(t)) {
                return bad(format!("zeroset.slice_times must lie in [0, {}]", params.t_final));
            }
        }

        if let Some(f) = z.filter {
            if f.k == 0 || !(f.max_dist > 0.0) {
                return bad("zeroset.filter needs k >= 1 and max_dist > 0".into());
            }
        }

        let o = &self.oracle;
        let oracle = OracleConfig {
            foot_points: o.foot_points.unwrap_or(if problem.spatial_dim() == 1 { 2001 } else { 101 }),
            steps_per_unit: o.steps_per_unit.unwrap_or(DEFAULT_STEPS_PER_UNIT),
            times: o
                .times
                .clone()
                .or_else(|| slice_times.clone())
                .unwrap_or_else(|| vec![params.t_final]),
            jump_points: o.jump_points.unwrap_or(201),
        };

        let output = self
            .output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", self.case, self.seed)));

        let echo = RunConfig {
            case: self.case.clone(),
            seed: self.seed,
            output: Some(output.clone()),
            t_final: Some(params.t_final),
            omega: Some(params.omega.clone()),
            eta: Some(eta),
            sampling: SamplingOverrides {
                mode: Some(pipeline.sampling.mode),
                mean: Some(pipeline.sampling.mean.clone()),
                variance: Some(pipeline.sampling.variance.clone()),
                n_interior: Some(pipeline.sampling.n_interior),
                n_boundary: Some(pipeline.sampling.n_boundary),
            },
            tube: TubeOverrides {
                n_candidates: Some(pipeline.tube.n_candidates),
                n_boundary_candidates: pipeline.tube.n_boundary_candidates,
                eps_a: Some(pipeline.tube.eps_a),
                update_cycles: Some(pipeline.tube.update_cycles),
            },
            network: NetworkOverrides {
                m1: Some(pipeline.m1),
                r1: Some(pipeline.r1.clone()),
                sharpness: Some(pipeline.sharpness),
                growth_enabled: Some(growth_enabled),
                growth: Some(pipeline.growth.clone()),
            },
            pool: PoolOverrides {
                seed_grid: Some(pipeline.pool.seed_grid.clone()),
                iterations: Some(pipeline.pool.iterations),
            },
            zeroset: ZeroSetOverrides {
                seed_grid: Some(zeroset.seed_grid.clone()),
                iterations: Some(zeroset.iterations),
                inflation: Some(zeroset.inflation),
                eps0: zeroset.eps0,
                slice_times: slice_times.clone(),
                filter: z.filter,
            },
            oracle: OracleOverrides {
                foot_points: Some(oracle.foot_points),
                steps_per_unit: Some(oracle.steps_per_unit),
                times: Some(oracle.times.clone()),
                jump_points: Some(oracle.jump_points),
            },
        };

        Ok(ResolvedRun {
            params,
            problem,
            pipeline,
            zeroset,
            slice_times,
            filter: z.filter,
            oracle,
            output,
            echo,
        })
    }
}

/// Every catalog case as a fully specified run config (K > 1 cases get no
/// `eps0`, which must be supplied before running).
pub fn catalog_configs() -> Vec<RunConfig> {
    crate::problems::case_ids()
        .into_iter()
        .map(|id| {
            let c = RunConfig::for_case(&id);
            let mut echo = c.resolve_inner(false).map(|r| r.echo).unwrap_or(c);
            echo.output = None;
            echo
        })
        .collect()
}
