//! Randomized feature basis with Gaussian activations and layer growth.
//!
//! A basis is an ordered stack of layers. The first layer maps the input
//! point `X` through a random affine map; every later layer maps the full
//! feature vector of all previous layers through an affine map and multiplies
//! the activation by a Gaussian bump centred at an error-indicator point.
//! Only the outer coefficients are ever fitted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseMatrix};

/// Localization sharpness used by every grown layer.
pub const DEFAULT_SHARPNESS: f64 = 15.0;

pub const BASIS_FORMAT_VERSION: u32 = 1;

/// `exp(-x²/2)`.
#[inline]
pub fn gaussian(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

/// Derivative of [`gaussian`]: `-x exp(-x²/2)`.
#[inline]
pub fn gaussian_derivative(x: f64) -> f64 {
    -x * gaussian(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weights {
    /// Row-major `rows x cols`.
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    /// Row `j` is `scales[j] * directions[groups[j]]`: the outer product of a
    /// scaling column with fitted coefficient rows, one row per group.
    Projected {
        scales: Vec<f64>,
        directions: Vec<Vec<f64>>,
        groups: Vec<usize>,
    },
}

impl Weights {
    pub fn rows(&self) -> usize {
        match self {
            Weights::Dense { rows, .. } => *rows,
            Weights::Projected { scales, .. } => scales.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Weights::Dense { cols, .. } => *cols,
            Weights::Projected { directions, .. } => directions.first().map_or(0, Vec::len),
        }
    }

    /// Materialize the weight matrix.
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Weights::Dense { rows, cols, data } => {
                DenseMatrix::from_row_major(*rows, *cols, data.clone()).expect("validated shape")
            }
            Weights::Projected {
                scales,
                directions,
                groups,
            } => {
                let mut m = DenseMatrix::zeros(self.rows(), self.cols());
                for (j, (&h, &g)) in scales.iter().zip(groups).enumerate() {
                    for (dst, &a) in m.row_mut(j).iter_mut().zip(&directions[g]) {
                        *dst = h * a;
                    }
                }
                m
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Weights::Dense { data, .. } => data.iter().all(|v| v.is_finite()),
            Weights::Projected {
                scales, directions, ..
            } => {
                scales.iter().all(|v| v.is_finite())
                    && directions.iter().flatten().all(|v| v.is_finite())
            }
        }
    }
}

/// Gaussian bumps `G_j(X) = exp(-‖sharpness · scales[j] ⊙ (X − centers[j])‖² / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub centers: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
    pub sharpness: f64,
}

impl Localization {
    /// Value of bump `j` at `x`.
    pub fn bump(&self, j: usize, x: &[f64]) -> f64 {
        let e = self.exponent(j, x);
        (-0.5 * e).exp()
    }

    #[inline]
    fn exponent(&self, j: usize, x: &[f64]) -> f64 {
        let c = &self.centers[j];
        let h = &self.scales[j];
        let mut e = 0.0;
        for i in 0..x.len() {
            let w = self.sharpness * h[i] * (x[i] - c[i]);
            e += w * w;
        }
        e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Weights,
    pub biases: Vec<f64>,
    pub localization: Option<Localization>,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.biases.len()
    }

    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    fn validate(&self, input_dim: usize, consumes: usize, is_first: bool) -> Result<()> {
        let width = self.width();
        if width == 0 {
            return Err(Error::InvalidParameter("layer width must be at least 1".into()));
        }
        if self.weights.rows() != width {
            return Err(Error::Dimension {
                context: "layer weight rows",
                expected: width,
                found: self.weights.rows(),
            });
        }
        if self.input_width() != consumes {
            return Err(Error::Dimension {
                context: "layer input width",
                expected: consumes,
                found: self.input_width(),
            });
        }
        match &self.weights {
            Weights::Dense { rows, cols, data } if data.len() != rows * cols => {
                return Err(Error::Dimension {
                    context: "dense weights",
                    expected: rows * cols,
                    found: data.len(),
                })
            }
            Weights::Projected {
                directions, groups, ..
            } => {
                if directions.iter().any(|d| d.len() != consumes)
                    || groups.iter().any(|&g| g >= directions.len())
                    || groups.len() != width
                {
                    return Err(Error::InvalidParameter("malformed projected weights".into()));
                }
            }
            _ => {}
        }
        if !self.weights.is_finite() || !self.biases.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        match (&self.localization, is_first) {
            (Some(_), true) => {
                return Err(Error::InvalidParameter(
                    "the first layer carries no localization".into(),
                ))
            }
            (None, false) => {
                return Err(Error::InvalidParameter(
                    "grown layers require a localization".into(),
                ))
            }
            (Some(loc), false) => {
                if loc.centers.len() != width || loc.scales.len() != width {
                    return Err(Error::Dimension {
                        context: "localization count",
                        expected: width,
                        found: loc.centers.len().min(loc.scales.len()),
                    });
                }
                if loc
                    .centers
                    .iter()
                    .chain(&loc.scales)
                    .any(|v| v.len() != input_dim)
                {
                    return Err(Error::InvalidParameter(format!(
                        "localization centers and scales must have dimension {input_dim}"
                    )));
                }
                if !(loc.sharpness > 0.0) {
                    return Err(Error::InvalidParameter("sharpness must be positive".into()));
                }
            }
            (None, true) => {}
        }
        Ok(())
    }
}

/// The fixed feature map `ψ(X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    input_dim: usize,
    layers: Vec<Layer>,
    /// RNG seed used to build each layer.
    seeds: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    format_version: u32,
    basis: FeatureBasis,
}

impl FeatureBasis {
    /// Build a basis from explicit layers, validating the nesting contract.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>, seeds: Vec<u64>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a basis needs at least one layer".into()));
        }
        let mut consumes = input_dim;
        let mut total = 0;
        for (l, layer) in layers.iter().enumerate() {
            layer.validate(input_dim, consumes, l == 0)?;
            total += layer.width();
            consumes = total;
        }
        let mut seeds = seeds;
        seeds.resize(layers.len(), 0);
        Ok(Self {
            input_dim,
            layers,
            seeds,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Total number of features `M`.
    pub fn feature_count(&self) -> usize {
        self.layers.iter().map(Layer::width).sum()
    }

    /// Basis truncated to its first `n` layers.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate a {}-layer basis to {n} layers",
                self.layers.len()
            )));
        }
        Ok(Self {
            input_dim: self.input_dim,
            layers: self.layers[..n].to_vec(),
            seeds: self.seeds[..n].to_vec(),
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "feature input",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut val = vec![0.0; self.feature_count()];
        self.forward(x, None, &mut val, &mut []);
        Ok(val)
    }

    /// Features and their derivatives along direction `v`.
    pub fn features_directional(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(x)?;
        self.check_point(v)?;
        let m = self.feature_count();
        let mut val = vec![0.0; m];
        let mut dval = vec![0.0; m];
        self.forward(x, Some(v), &mut val, &mut dval);
        Ok((val, dval))
    }

    /// `∂ψ/∂X` as an `M x m₀` matrix.
    pub fn feature_jacobian(&self, x: &[f64]) -> Result<DenseMatrix> {
        self.check_point(x)?;
        let m = self.feature_count();
        let mut jac = DenseMatrix::zeros(m, self.input_dim);
        let mut val = vec![0.0; m];
        let mut dval = vec![0.0; m];
        let mut e = vec![0.0; self.input_dim];
        for i in 0..self.input_dim {
            e.fill(0.0);
            e[i] = 1.0;
            self.forward(x, Some(&e), &mut val, &mut dval);
            for (r, &d) in dval.iter().enumerate() {
                jac.set(r, i, d);
            }
        }
        Ok(jac)
    }

    /// `φ(X) = α · ψ(X)`.
    pub fn evaluate(&self, alpha: &[f64], x: &[f64]) -> Result<f64> {
        self.check_coefficients(alpha)?;
        Ok(dot(alpha, &self.features(x)?))
    }

    /// `∇φ(X)`.
    pub fn gradient(&self, alpha: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_coefficients(alpha)?;
        let jac = self.feature_jacobian(x)?;
        jac.transpose_matvec(alpha)
    }

    pub(crate) fn check_coefficients(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.feature_count() {
            return Err(Error::Dimension {
                context: "coefficient vector",
                expected: self.feature_count(),
                found: alpha.len(),
            });
        }
        Ok(())
    }

    /// Unchecked forward pass. `val` must hold `M` entries; `dval` too when a
    /// direction is given.
    pub(crate) fn forward(&self, x: &[f64], dir: Option<&[f64]>, val: &mut [f64], dval: &mut [f64]) {
        let mut offset = 0;
        let mut group_s = Vec::new();
        let mut group_ds = Vec::new();
        for layer in &self.layers {
            let width = layer.width();
            let (prev_val, rest_val) = val.split_at_mut(offset);
            let out_val = &mut rest_val[..width];
            let (prev_dval, out_dval) = if dir.is_some() {
                let (p, r) = dval.split_at_mut(offset);
                (&*p, &mut r[..width])
            } else {
                (&[][..], &mut [][..])
            };
            // Input of this layer: X itself for the first layer, all previous
            // features otherwise.
            let (input, dinput): (&[f64], &[f64]) = if offset == 0 {
                (x, dir.unwrap_or(&[]))
            } else {
                (prev_val, prev_dval)
            };

            match &layer.weights {
                Weights::Dense { cols, data, .. } => {
                    for j in 0..width {
                        let w = &data[j * cols..(j + 1) * cols];
                        let pre = dot(w, input) + layer.biases[j];
                        out_val[j] = pre;
                        if dir.is_some() {
                            out_dval[j] = dot(w, dinput);
                        }
                    }
                }
                Weights::Projected {
                    scales,
                    directions,
                    groups,
                } => {
                    group_s.clear();
                    group_ds.clear();
                    for d in directions {
                        group_s.push(dot(d, input));
                        if dir.is_some() {
                            group_ds.push(dot(d, dinput));
                        }
                    }
                    for j in 0..width {
                        let g = groups[j];
                        out_val[j] = scales[j] * group_s[g] + layer.biases[j];
                        if dir.is_some() {
                            out_dval[j] = scales[j] * group_ds[g];
                        }
                    }
                }
            }

            // Activation, then localization.
            for j in 0..width {
                let pre = out_val[j];
                let act = gaussian(pre);
                out_val[j] = act;
                if dir.is_some() {
                    out_dval[j] *= -pre * act;
                }
            }
            if let Some(loc) = &layer.localization {
                for j in 0..width {
                    let g = loc.bump(j, x);
                    if let Some(v) = dir {
                        // dG = -G Σ (s h_i)² (x_i − c_i) v_i
                        let c = &loc.centers[j];
                        let h = &loc.scales[j];
                        let mut slope = 0.0;
                        for i in 0..x.len() {
                            let sh = loc.sharpness * h[i];
                            slope += sh * sh * (x[i] - c[i]) * v[i];
                        }
                        let dg = -g * slope;
                        out_dval[j] = out_dval[j] * g + out_val[j] * dg;
                    }
                    out_val[j] *= g;
                }
            }
            offset += width;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BasisFile {
            format_version: BASIS_FORMAT_VERSION,
            basis: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: BasisFile = serde_json::from_str(s)?;
        if file.format_version != BASIS_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported basis format version {}",
                file.format_version
            )));
        }
        let b = file.basis;
        Self::from_layers(b.input_dim, b.layers, b.seeds)
    }
}

/// First layer with weights `U(−r, r)` per input coordinate and biases
/// `U(−r_last, r_last)`.
pub fn init_first_layer(input_dim: usize, width: usize, range: &[f64], seed: u64) -> Result<FeatureBasis> {
    if width == 0 {
        return Err(Error::InvalidParameter("first layer width must be at least 1".into()));
    }
    if range.len() != input_dim {
        return Err(Error::Dimension {
            context: "first-layer sampling range",
            expected: input_dim,
            found: range.len(),
        });
    }
    if range.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter("sampling ranges must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(width * input_dim);
    for _ in 0..width {
        for &r in range {
            data.push(rng.random_range(-r..r));
        }
    }
    let rb = range[input_dim - 1];
    let biases = (0..width).map(|_| rng.random_range(-rb..rb)).collect();
    let layer = Layer {
        weights: Weights::Dense {
            rows: width,
            cols: input_dim,
            data,
        },
        biases,
        localization: None,
    };
    FeatureBasis::from_layers(input_dim, vec![layer], vec![seed])
}

/// How the per-neuron scaling rows `H⁰` are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleSource {
    /// `h_j ~ U(−r, r)` per coordinate.
    RandomUniform,
    /// `h_j = η₁ ∇φ(x_j)`.
    GradientScaled { eta1: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub width: usize,
    pub range: Vec<f64>,
    pub sharpness: f64,
    pub scale_source: ScaleSource,
}

impl GrowthParams {
    pub fn new(width: usize, range: Vec<f64>) -> Self {
        Self {
            width,
            range,
            sharpness: DEFAULT_SHARPNESS,
            scale_source: ScaleSource::RandomUniform,
        }
    }
}

/// Coefficients and error-indicator points for one group of new neurons.
pub struct GrowthGroup<'a> {
    pub coefficients: &'a [f64],
    pub points: &'a [Vec<f64>],
}

/// Append one localized layer built from the current approximation
/// `φ = α·ψ` and its error-indicator points.
pub fn grow_layer(
    basis: &FeatureBasis,
    coefficients: &[f64],
    error_points: &[Vec<f64>],
    params: &GrowthParams,
    seed: u64,
) -> Result<FeatureBasis> {
    grow_layer_grouped(
        basis,
        &[GrowthGroup {
            coefficients,
            points: error_points,
        }],
        params,
        seed,
    )
}

/// Layer growth for several level-set components at once: neurons are split
/// into groups, each built from its own coefficients and error points, and
/// stacked into one layer so the basis stays shared.
pub fn grow_layer_grouped(
    basis: &FeatureBasis,
    groups: &[GrowthGroup<'_>],
    params: &GrowthParams,
    seed: u64,
) -> Result<FeatureBasis> {
    let dim = basis.input_dim();
    let total: usize = groups.iter().map(|g| g.points.len()).sum();
    if groups.is_empty() || total != params.width {
        return Err(Error::Dimension {
            context: "error-indicator point count",
            expected: params.width,
            found: total,
        });
    }
    if params.width == 0 {
        return Err(Error::InvalidParameter("growth width must be at least 1".into()));
    }
    if params.range.len() != dim {
        return Err(Error::Dimension {
            context: "growth sampling range",
            expected: dim,
            found: params.range.len(),
        });
    }
    if params.range.iter().any(|&r| !(r > 0.0)) || !(params.sharpness > 0.0) {
        return Err(Error::InvalidParameter(
            "growth ranges and sharpness must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scales = Vec::with_capacity(total);
    let mut biases = Vec::with_capacity(total);
    let mut centers = Vec::with_capacity(total);
    let mut bump_scales = Vec::with_capacity(total);
    let mut group_of = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(groups.len());

    for (g, group) in groups.iter().enumerate() {
        basis.check_coefficients(group.coefficients)?;
        let duplicates = count_duplicates(group.points);
        if duplicates > 0 {
            log::info!("layer growth: {duplicates} duplicate error-indicator points in group {g}");
        }
        for p in group.points {
            let psi = basis.features(p)?;
            let phi = dot(group.coefficients, &psi);
            let h0: Vec<f64> = match &params.scale_source {
                ScaleSource::RandomUniform => {
                    params.range.iter().map(|&r| rng.random_range(-r..r)).collect()
                }
                ScaleSource::GradientScaled { eta1 } => basis
                    .gradient(group.coefficients, p)?
                    .into_iter()
                    .map(|v| eta1 * v)
                    .collect(),
            };
            let h = h0.iter().map(|v| v * v).sum::<f64>().sqrt();
            scales.push(h);
            biases.push(-(h * phi));
            centers.push(p.clone());
            bump_scales.push(h0);
            group_of.push(g);
        }
        directions.push(group.coefficients.to_vec());
    }

    let layer = Layer {
        weights: Weights::Projected {
            scales,
            directions,
            groups: group_of,
        },
        biases,
        localization: Some(Localization {
            centers,
            scales: bump_scales,
            sharpness: params.sharpness,
        }),
    };
    let mut layers = basis.layers.clone();
    layers.push(layer);
    let mut seeds = basis.seeds.clone();
    seeds.push(seed);
    FeatureBasis::from_layers(dim, layers, seeds)
}

fn count_duplicates(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.windows(2).filter(|w| w[0] == w[1]).count()
}
