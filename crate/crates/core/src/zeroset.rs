//! Zero-level-set extraction: sign-change seeds on a grid, then a local
//! stencil search with step halving.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::neighbors::KdTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroSetConfig {
    /// Grid points per dimension of the (inflated) search box.
    pub seed_grid: Vec<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Relative inflation of each side of the box.
    #[serde(default = "default_inflation")]
    pub inflation: f64,
    /// Residual threshold for vector-valued seeds. Required when `K > 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
}

fn default_iterations() -> usize {
    5
}

fn default_inflation() -> f64 {
    0.1
}

impl ZeroSetConfig {
    pub fn new(seed_grid: Vec<usize>) -> Self {
        Self {
            seed_grid,
            iterations: default_iterations(),
            inflation: default_inflation(),
            eps0: None,
        }
    }
}

/// Points with their objective values `|φ|` or `‖Φ‖₂`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub names: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl PointCloud {
    pub fn new(names: Vec<String>, points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Dimension {
                context: "cloud values",
                expected: points.len(),
                found: values.len(),
            });
        }
        if let Some(p) = points.iter().find(|p| p.len() != names.len()) {
            return Err(Error::Dimension {
                context: "cloud point",
                expected: names.len(),
                found: p.len(),
            });
        }
        Ok(Self { names, points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Header `names..., value`.
    pub fn header(&self) -> Vec<String> {
        let mut h = self.names.clone();
        h.push("value".into());
        h
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<f64>> = self
            .points
            .iter()
            .zip(&self.values)
            .map(|(p, v)| {
                let mut r = p.clone();
                r.push(*v);
                r
            })
            .collect();
        io::csv_bytes(&self.header(), &rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_csv_bytes()?)
    }

    /// Reads a cloud; a trailing `value` column is optional.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut t = io::read_csv(path)?;
        let has_value = t.header.last().map(String::as_str) == Some("value");
        let mut values = Vec::with_capacity(t.rows.len());
        if has_value {
            t.header.pop();
            for r in &mut t.rows {
                values.push(r.pop().unwrap_or(0.0));
            }
        } else {
            values.resize(t.rows.len(), 0.0);
        }
        Self::new(t.header, t.rows, values)
    }

    /// Points with `|x_dim − value| ≤ delta`, with that coordinate dropped.
    pub fn slice(&self, dim: usize, value: f64, delta: f64) -> Result<Self> {
        if dim >= self.dim() {
            return Err(Error::Dimension {
                context: "slice coordinate",
                expected: self.dim(),
                found: dim,
            });
        }
        let keep: Vec<usize> = (0..self.dim()).filter(|&d| d != dim).collect();
        let mut out = PointCloud {
            names: keep.iter().map(|&d| self.names[d].clone()).collect(),
            ..Default::default()
        };
        for (p, v) in self.points.iter().zip(&self.values) {
            if (p[dim] - value).abs() <= delta {
                out.points.push(keep.iter().map(|&d| p[d]).collect());
                out.values.push(*v);
            }
        }
        Ok(out)
    }

    /// Inserts a constant coordinate at position `dim`.
    pub fn with_coordinate(&self, dim: usize, name: &str, value: f64) -> Self {
        let mut names = self.names.clone();
        names.insert(dim, name.to_string());
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.insert(dim, value);
                q
            })
            .collect();
        PointCloud {
            names,
            points,
            values: self.values.clone(),
        }
    }
}

/// Regular grid over a box: per-dimension counts and bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub bounds: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: Vec<[f64; 2]>, counts: Vec<usize>) -> Result<Self> {
        if bounds.len() != counts.len() {
            return Err(Error::Dimension {
                context: "grid counts",
                expected: bounds.len(),
                found: counts.len(),
            });
        }
        if counts.iter().any(|&n| n < 2) || bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(Error::InvalidParameter(
                "grid needs at least two points per dimension and lo < hi".into(),
            ));
        }
        Ok(Self { bounds, counts })
    }

    /// Box inflated by `inflation` times its width on each side.
    pub fn inflated(bounds: &[[f64; 2]], counts: Vec<usize>, inflation: f64) -> Result<Self> {
        let b = bounds
            .iter()
            .map(|[lo, hi]| {
                let w = hi - lo;
                [lo - inflation * w, hi + inflation * w]
            })
            .collect();
        Self::new(b, counts)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(&self.counts)
            .map(|([lo, hi], n)| (hi - lo) / (*n as f64 - 1.0))
            .collect()
    }

    /// Point with linear index `i`; the last dimension varies fastest.
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut p = vec![0.0; self.dim()];
        for d in (0..self.dim()).rev() {
            let k = i % self.counts[d];
            i /= self.counts[d];
            p[d] = self.bounds[d][0] + k as f64 * h[d];
        }
        p
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.counts[d + 1];
        }
        s
    }
}

/// Whether the values at `i` and its axis neighbours do not all share a sign
/// (a zero counts as mixed).
fn mixed_sign(values: &[f64], grid: &Grid, strides: &[usize], i: usize) -> bool {
    let c = values[i];
    if c == 0.0 {
        return true;
    }
    let mut rem = i;
    for d in 0..grid.dim() {
        let k = rem / strides[d];
        rem %= strides[d];
        if k > 0 && values[i - strides[d]] * c <= 0.0 {
            return true;
        }
        if k + 1 < grid.counts[d] && values[i + strides[d]] * c <= 0.0 {
            return true;
        }
    }
    false
}

fn eval_grid<F>(f: &F, grid: &Grid) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect()
}

/// Grid points of a scalar evaluator with a mixed sign pattern.
pub fn detect_seeds_scalar<F>(phi: F, grid: &Grid) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values = eval_grid(&phi, grid);
    let strides = grid.strides();
    (0..grid.len())
        .filter(|&i| mixed_sign(&values, grid, &strides, i))
        .map(|i| grid.point(i))
        .collect()
}

/// Grid points with `‖Φ‖₂ ≤ ε₀` and a mixed sign pattern in every component.
pub fn detect_seeds_vector<F>(phi: F, k: usize, grid: &Grid, eps0: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let all: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut v = vec![0.0; k];
            phi(&grid.point(i), &mut v);
            v
        })
        .collect();
    let comps: Vec<Vec<f64>> = (0..k).map(|c| all.iter().map(|v| v[c]).collect()).collect();
    let strides = grid.strides();
    (0..grid.len())
        .filter(|&i| {
            let norm = all[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            norm <= eps0 && comps.iter().all(|c| mixed_sign(c, grid, &strides, i))
        })
        .map(|i| grid.point(i))
        .collect()
}

/// Output of [`refine`].
#[derive(Clone, Debug)]
pub struct Refined {
    pub points: Vec<Vec<f64>>,
    /// Objective per point after each iteration; entry 0 is the seed value.
    pub history: Vec<Vec<f64>>,
    /// Stencil radius after the last halving, `h₀ / 2ⁿ`.
    pub final_step: Vec<f64>,
}

/// Stencil offsets in lexicographic order over `{−1, 0, 1}^dim`.
fn stencil(dim: usize) -> Vec<Vec<i8>> {
    let n = 3usize.pow(dim as u32);
    (0..n)
        .map(|mut i| {
            let mut o = vec![0i8; dim];
            for d in (0..dim).rev() {
                o[d] = (i % 3) as i8 - 1;
                i /= 3;
            }
            o
        })
        .collect()
}

/// Moves every seed to the argmin of `objective` over the tensor stencil,
/// halving the step after each iteration. Ties go to the lexicographically
/// smallest offset.
pub fn refine<F>(objective: F, seeds: &[Vec<f64>], h0: &[f64], iterations: usize) -> Result<Refined>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if iterations == 0 {
        return Err(Error::InvalidParameter("refinement needs at least one iteration".into()));
    }
    if h0.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidParameter("initial steps must be positive".into()));
    }
    let dim = h0.len();
    if let Some(s) = seeds.iter().find(|s| s.len() != dim) {
        return Err(Error::Dimension {
            context: "refinement seed",
            expected: dim,
            found: s.len(),
        });
    }
    let offsets = stencil(dim);
    let per_seed: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|seed| {
            let mut x = seed.clone();
            let mut fx = objective(&x);
            let mut trace = Vec::with_capacity(iterations + 1);
            trace.push(fx);
            let mut h = h0.to_vec();
            let mut cand = vec![0.0; dim];
            for _ in 0..iterations {
                let mut best: Option<(f64, usize)> = None;
                for (j, o) in offsets.iter().enumerate() {
                    let v = if o.iter().all(|&c| c == 0) {
                        fx
                    } else {
                        for d in 0..dim {
                            cand[d] = x[d] + f64::from(o[d]) * h[d];
                        }
                        objective(&cand)
                    };
                    // NaN never wins.
                    if best.is_none_or(|(b, _)| v < b) {
                        best = Some((v, j));
                    }
                }
                if let Some((v, j)) = best {
                    if v <= fx {
                        for d in 0..dim {
                            x[d] += f64::from(offsets[j][d]) * h[d];
                        }
                        fx = v;
                    }
                }
                trace.push(fx);
                h.iter_mut().for_each(|v| *v *= 0.5);
            }
            (x, trace)
        })
        .collect();
    let mut history = vec![Vec::with_capacity(seeds.len()); iterations + 1];
    let mut points = Vec::with_capacity(seeds.len());
    for (x, trace) in per_seed {
        points.push(x);
        for (k, v) in trace.into_iter().enumerate() {
            history[k].push(v);
        }
    }
    let scale = 0.5f64.powi(iterations as i32);
    Ok(Refined {
        points,
        history,
        final_step: h0.iter().map(|h| h * scale).collect(),
    })
}

/// Seeds plus refinement for a `K`-component evaluator on `grid`. Scalar
/// sign-change seeds are used for `K = 1`, the `ε₀` rule otherwise.
pub fn extract<F>(phi: F, k: usize, grid: &Grid, iterations: usize, eps0: Option<f64>, names: Vec<String>) -> Result<(PointCloud, Refined)>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if names.len() != grid.dim() {
        return Err(Error::Dimension {
            context: "zero-set coordinate names",
            expected: grid.dim(),
            found: names.len(),
        });
    }
    let seeds = if k == 1 {
        detect_seeds_scalar(
            |x| {
                let mut v = [0.0];
                phi(x, &mut v);
                v[0]
            },
            grid,
        )
    } else {
        let eps0 = eps0.ok_or_else(|| {
            Error::Config("vector zero-set extraction needs `eps0` (no default is assumed)".into())
        })?;
        detect_seeds_vector(&phi, k, grid, eps0)
    };
    let objective = |x: &[f64]| {
        let mut v = vec![0.0; k];
        phi(x, &mut v);
        v.iter().map(|a| a * a).sum::<f64>().sqrt()
    };
    let refined = refine(objective, &seeds, &grid.spacing(), iterations)?;
    let cloud = PointCloud::new(names, refined.points.clone(), refined.history[iterations].clone())?;
    Ok((cloud, refined))
}

/// Evaluator on the subspace where coordinate `dim` is fixed to `value`.
pub fn fix_coordinate<F>(phi: F, dim: usize, value: f64) -> impl Fn(&[f64], &mut [f64]) + Sync
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    move |x: &[f64], out: &mut [f64]| {
        let mut full = Vec::with_capacity(x.len() + 1);
        full.extend_from_slice(&x[..dim]);
        full.push(value);
        full.extend_from_slice(&x[dim..]);
        phi(&full, out)
    }
}

/// Nearest-neighbour filter against a reference point set: drop points whose
/// `k`-th nearest reference point is farther than `max_dist`.
pub struct NeighborFilter<'a> {
    pub reference: &'a [Vec<f64>],
    pub k: usize,
    pub max_dist: f64,
}

/// Keeps the coordinates in `keep` (in that order), optionally filtering
/// against reference points in the original coordinates.
pub fn project(cloud: &PointCloud, keep: &[usize], filter: Option<NeighborFilter<'_>>) -> Result<PointCloud> {
    if let Some(&d) = keep.iter().find(|&&d| d >= cloud.dim()) {
        return Err(Error::Dimension {
            context: "projection coordinate",
            expected: cloud.dim(),
            found: d,
        });
    }
    let mask: Vec<bool> = match filter {
        Some(f) if f.max_dist.is_finite() => {
            let tree = KdTree::new(f.reference)?;
            if tree.dim() != cloud.dim() {
                return Err(Error::Dimension {
                    context: "filter reference",
                    expected: cloud.dim(),
                    found: tree.dim(),
                });
            }
            cloud
                .points
                .par_iter()
                .map(|p| tree.kth_nearest(p, f.k) <= f.max_dist)
                .collect()
        }
        _ => vec![true; cloud.len()],
    };
    let mut out = PointCloud {
        names: keep.iter().map(|&d| cloud.names[d].clone()).collect(),
        ..Default::default()
    };
    for ((p, v), m) in cloud.points.iter().zip(&cloud.values).zip(mask) {
        if m {
            out.points.push(keep.iter().map(|&d| p[d]).collect());
            out.values.push(*v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn example_grid() -> Grid {
        Grid::new(vec![[-0.1, 1.1]; 2], vec![50, 50]).unwrap()
    }

    fn sine(x: &[f64]) -> f64 {
        (PI * x[0]).sin() - x[1]
    }

    /// Distance from `p` to the curve `y = sin(πx)` by dense sampling plus a
    /// local golden-section polish.
    fn curve_distance(p: &[f64]) -> f64 {
        let d2 = |x: f64| (x - p[0]).powi(2) + ((PI * x).sin() - p[1]).powi(2);
        let n = 4000;
        let (mut bx, mut bd) = (0.0, f64::INFINITY);
        for i in 0..=n {
            let x = -0.5 + 2.0 * i as f64 / n as f64;
            if d2(x) < bd {
                bd = d2(x);
                bx = x;
            }
        }
        let (mut a, mut b) = (bx - 1e-3, bx + 1e-3);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if d2(c) < d2(d) {
                b = d;
            } else {
                a = c;
            }
        }
        d2(0.5 * (a + b)).min(bd).sqrt()
    }

    #[test]
    fn sine_seeds_near_curve() {
        let g = example_grid();
        let seeds = detect_seeds_scalar(sine, &g);
        assert!(!seeds.is_empty());
        let h = g.spacing();
        let diag = (h[0] * h[0] + h[1] * h[1]).sqrt();
        for s in &seeds {
            assert!(curve_distance(s) <= diag, "{s:?}");
        }
    }

    #[test]
    fn constant_has_no_seeds() {
        assert!(detect_seeds_scalar(|_| 1.0, &example_grid()).is_empty());
    }

    #[test]
    fn one_dimensional_seeds_bracket_origin() {
        let g = Grid::new(vec![[-1.0, 1.0]], vec![10]).unwrap();
        let seeds = detect_seeds_scalar(|x| x[0], &g);
        assert_eq!(seeds.len(), 2);
        assert!(seeds[0][0] < 0.0 && seeds[1][0] > 0.0);
    }

    #[test]
    fn vector_seeds_at_origin() {
        let g = Grid::new(vec![[-1.0, 1.0]; 2], vec![21, 21]).unwrap();
        let f = |x: &[f64], v: &mut [f64]| {
            v[0] = x[0];
            v[1] = x[1];
        };
        let seeds = detect_seeds_vector(f, 2, &g, 0.5);
        assert!(!seeds.is_empty());
        assert!(seeds.iter().all(|s| s[0].abs() <= 0.1 + 1e-12 && s[1].abs() <= 0.1 + 1e-12));
        // ε₀ = 0 keeps exact zeros only; the grid contains the origin.
        let exact = detect_seeds_vector(f, 2, &g, 0.0);
        assert_eq!(exact.len(), 1);
        assert!(exact[0].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn one_dimensional_walk() {
        // Hand walk: 0.3 → 0.1 (h=.2) → 0.0 (h=.1) → stays at 0.0.
        let r = refine(|x| x[0].abs(), &[vec![0.3]], &[0.2], 5).unwrap();
        assert!(r.points[0][0].abs() <= 0.0125);
        assert_eq!(r.final_step, vec![0.2 / 32.0]);
    }

    #[test]
    fn refinement_is_monotone_and_accurate() {
        let g = example_grid();
        let seeds = detect_seeds_scalar(sine, &g);
        let r = refine(|x| sine(x).abs(), &seeds, &g.spacing(), 5).unwrap();
        for k in 1..r.history.len() {
            for (a, b) in r.history[k].iter().zip(&r.history[k - 1]) {
                assert!(a <= b);
            }
        }
        let median = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s[s.len() / 2]
        };
        assert!(median(&r.history[5]) <= median(&r.history[0]) / 8.0);
    }

    #[test]
    fn ties_prefer_lexicographic_offset() {
        // Constant objective: every offset ties, so each step takes the
        // smallest offset (-1, -1).
        let r = refine(|_| 1.0, &[vec![0.0, 0.0]], &[0.1, 0.1], 3).unwrap();
        assert!(r.points[0].iter().all(|v| (v + 0.175).abs() < 1e-15));
        // Symmetric pair: the left one wins.
        let r = refine(|x| (x[0].abs() - 0.1).abs(), &[vec![0.0]], &[0.1], 1).unwrap();
        assert_eq!(r.points[0], vec![-0.1]);
    }

    #[test]
    fn vector_extraction_needs_eps0() {
        let g = Grid::new(vec![[-1.0, 1.0]; 2], vec![5, 5]).unwrap();
        let err = extract(|x, v| v.copy_from_slice(x), 2, &g, 2, None, vec!["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn projection_identity_and_filter() {
        let cloud = PointCloud::new(
            vec!["t".into(), "x".into()],
            vec![vec![0.0, 1.0], vec![0.5, 5.0]],
            vec![0.1, 0.2],
        )
        .unwrap();
        assert_eq!(project(&cloud, &[0, 1], None).unwrap(), cloud);
        let reference = vec![vec![0.0, 1.0]];
        let inf = NeighborFilter {
            reference: &reference,
            k: 1,
            max_dist: f64::INFINITY,
        };
        assert_eq!(project(&cloud, &[0, 1], Some(inf)).unwrap(), cloud);
        let tight = NeighborFilter {
            reference: &reference,
            k: 1,
            max_dist: 0.5,
        };
        let p = project(&cloud, &[1], Some(tight)).unwrap();
        assert_eq!(p.points, vec![vec![1.0]]);
        assert_eq!(p.names, vec!["x"]);
    }

    #[test]
    fn slicing_and_csv() {
        let cloud = PointCloud::new(
            vec!["t".into(), "x".into(), "z".into()],
            vec![vec![0.5, 1.0, 2.0], vec![0.7, 3.0, 4.0]],
            vec![0.0, 1e-3],
        )
        .unwrap();
        let s = cloud.slice(0, 0.49, 0.02).unwrap();
        assert_eq!(s.names, vec!["x", "z"]);
        assert_eq!(s.points, vec![vec![1.0, 2.0]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        cloud.write_csv(&p).unwrap();
        assert_eq!(PointCloud::read_csv(&p).unwrap(), cloud);
    }

    #[test]
    fn fixed_coordinate_evaluator() {
        let f = fix_coordinate(|x: &[f64], v: &mut [f64]| v[0] = x[0] + 10.0 * x[1] + 100.0 * x[2], 1, 2.0);
        let mut v = [0.0];
        f(&[1.0, 3.0], &mut v);
        assert_eq!(v[0], 1.0 + 20.0 + 300.0);
    }

    #[test]
    fn grid_indexing() {
        let g = Grid::new(vec![[0.0, 1.0], [0.0, 2.0]], vec![2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.point(0), vec![0.0, 0.0]);
        assert_eq!(g.point(1), vec![0.0, 1.0]);
        assert_eq!(g.point(5), vec![1.0, 2.0]);
        let gi = Grid::inflated(&[[0.0, 1.0]], vec![3], 0.1).unwrap();
        assert_eq!(gi.bounds, vec![[-0.1, 1.1]]);
    }
}
