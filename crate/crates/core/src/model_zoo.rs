//! Small differentiable classifiers and the data they train on.
//!
//! Every model maps features to `C` logits; the surrogate loss is softmax
//! cross-entropy and the true loss is the 0-1 loss of the argmax. Parameters
//! are stored layer by layer: the weight matrix `out × in` in row-major
//! order, then the `out` biases. Logistic regression is the zero-hidden-layer
//! case of the same layout.

use std::ops::Deref;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{splitmix64, stream_rng};

/// Largest parameter count a model may have.
pub const MAX_PARAMETERS: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

impl DataPoint {
    pub fn new(features: Vec<f64>, label: usize) -> Result<Self> {
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("data point has a non-finite feature"));
        }
        Ok(Self { features, label })
    }
}

/// A finite parameter vector. Dereferences to its slice of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("parameter vector has a non-finite entry"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activated value `y = σ(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Multinomial logistic regression.
    Logistic { input_dim: usize, classes: usize },
    /// Fully connected network with at most two hidden layers.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        classes: usize,
        #[serde(default)]
        activation: Activation,
    },
    /// Mean estimation with `ℓ̃(w, z) = ½‖w − x‖²`, whose gradient `w − x`
    /// makes the candidate difference `ζ` independent of `w`. Labels are
    /// ignored; the bounded loss is `1{‖w − x‖ > radius}`.
    Quadratic { input_dim: usize, radius: f64 },
}

impl Model {
    pub fn logistic(input_dim: usize, classes: usize) -> Result<Self> {
        let m = Model::Logistic { input_dim, classes };
        m.validate()?;
        Ok(m)
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, classes: usize, activation: Activation) -> Result<Self> {
        let m = Model::Mlp {
            input_dim,
            hidden,
            classes,
            activation,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 {
            return Err(Error::validation("model input dimension must be positive"));
        }
        if let Model::Quadratic { radius, .. } = self {
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(Error::validation(format!("radius must be positive, got {radius}")));
            }
            return Ok(());
        }
        if self.classes() < 2 {
            return Err(Error::validation("a classifier needs at least two classes"));
        }
        if let Model::Mlp { hidden, .. } = self {
            if hidden.len() > 2 {
                return Err(Error::validation("at most two hidden layers are supported"));
            }
            if hidden.contains(&0) {
                return Err(Error::validation("hidden layers must be nonempty"));
            }
        }
        if self.dim() > MAX_PARAMETERS {
            return Err(Error::validation(format!(
                "model has {} parameters, limit is {MAX_PARAMETERS}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Logistic { input_dim, .. } | Model::Mlp { input_dim, .. } | Model::Quadratic { input_dim, .. } => {
                *input_dim
            }
        }
    }

    /// Number of label classes; `None` when labels are ignored.
    pub fn label_classes(&self) -> Option<usize> {
        match self {
            Model::Logistic { classes, .. } | Model::Mlp { classes, .. } => Some(*classes),
            Model::Quadratic { .. } => None,
        }
    }

    /// Number of logits; zero for the quadratic model.
    pub fn classes(&self) -> usize {
        self.label_classes().unwrap_or(0)
    }

    fn widths(&self) -> Vec<usize> {
        match self {
            Model::Logistic { input_dim, classes } => vec![*input_dim, *classes],
            Model::Quadratic { input_dim, .. } => vec![*input_dim],
            Model::Mlp {
                input_dim,
                hidden,
                classes,
                ..
            } => std::iter::once(*input_dim)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(*classes))
                .collect(),
        }
    }

    fn activation(&self) -> Activation {
        match self {
            Model::Logistic { .. } | Model::Quadratic { .. } => Activation::Tanh,
            Model::Mlp { activation, .. } => *activation,
        }
    }

    /// Total parameter count.
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic { input_dim, .. } => *input_dim,
            _ => self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum(),
        }
    }

    fn quadratic_parts(&self, w: &[f64], z: &DataPoint) -> Option<(f64, f64)> {
        match self {
            Model::Quadratic { radius, .. } => {
                let d2: f64 = w.iter().zip(&z.features).map(|(a, b)| (a - b) * (a - b)).sum();
                Some((0.5 * d2, if d2.sqrt() > *radius { 1.0 } else { 0.0 }))
            }
            _ => None,
        }
    }

    fn check(&self, w: &[f64], z: &DataPoint) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        if z.features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: z.features.len(),
            });
        }
        if self.label_classes().is_some_and(|c| z.label >= c) {
            return Err(Error::validation(format!(
                "label {} outside 0..{}",
                z.label,
                self.classes()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input first, logits last.
    fn forward(&self, w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let widths = self.widths();
        let act = self.activation();
        let layers = widths.len() - 1;
        let mut outs = Vec::with_capacity(widths.len());
        outs.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let weights = &w[offset..offset + fan_in * fan_out];
            let biases = &w[offset + fan_in * fan_out..offset + fan_out * (fan_in + 1)];
            offset += fan_out * (fan_in + 1);
            let input = &outs[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + biases[o]
                })
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            outs.push(out);
        }
        outs
    }

    pub fn logits(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if self.label_classes().is_none() {
            return Err(Error::validation("the quadratic model has no logits"));
        }
        if w.len() != self.dim() || x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(self.forward(w, x).pop().expect("forward yields logits"))
    }

    /// Softmax cross-entropy `log Σ_c e^{f_c} − f_y`.
    pub fn surrogate_loss(&self, w: &[f64], z: &DataPoint) -> Result<f64> {
        self.check(w, z)?;
        if let Some((loss, _)) = self.quadratic_parts(w, z) {
            return Ok(loss);
        }
        let logits = self.forward(w, &z.features).pop().expect("logits");
        Ok(log_sum_exp(&logits) - logits[z.label])
    }

    /// Analytic gradient of [`Model::surrogate_loss`].
    pub fn surrogate_grad(&self, w: &[f64], z: &DataPoint) -> Result<ParameterVector> {
        let mut grad = vec![0.0; self.dim()];
        self.accumulate_grad(w, z, 1.0, &mut grad)?;
        Ok(ParameterVector::from_vec_unchecked(grad))
    }

    /// Adds `scale · ∇ℓ̃(z, w)` to `out` and returns the loss.
    pub fn accumulate_grad(&self, w: &[f64], z: &DataPoint, scale: f64, out: &mut [f64]) -> Result<f64> {
        self.check(w, z)?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        if let Some((loss, _)) = self.quadratic_parts(w, z) {
            for ((g, a), b) in out.iter_mut().zip(w).zip(&z.features) {
                *g += scale * (a - b);
            }
            return Ok(loss);
        }
        let widths = self.widths();
        let act = self.activation();
        let layers = widths.len() - 1;
        let outs = self.forward(w, &z.features);
        let logits = &outs[layers];
        let lse = log_sum_exp(logits);
        let loss = lse - logits[z.label];
        // δ at the logits: softmax − one-hot
        let mut delta: Vec<f64> = logits.iter().map(|f| (f - lse).exp()).collect();
        delta[z.label] -= 1.0;

        let offsets: Vec<usize> = widths
            .windows(2)
            .scan(0, |acc, w| {
                let start = *acc;
                *acc += w[1] * (w[0] + 1);
                Some(start)
            })
            .collect();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let start = offsets[l];
            let input = &outs[l];
            for o in 0..fan_out {
                let d = scale * delta[o];
                if d != 0.0 {
                    let row = &mut out[start + o * fan_in..start + (o + 1) * fan_in];
                    row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
                out[start + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let weights = &w[start..start + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    prev.iter_mut().zip(row).for_each(|(p, wv)| *p += delta[o] * wv);
                }
                for (p, y) in prev.iter_mut().zip(input) {
                    *p *= act.derivative_from_output(*y);
                }
                delta = prev;
            }
        }
        Ok(loss)
    }

    /// Predicted class: the argmax of the logits, ties to the lowest index.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> Result<usize> {
        let logits = self.logits(w, x)?;
        Ok(argmax(&logits))
    }

    /// `1{prediction ≠ label}`.
    pub fn true_loss(&self, w: &[f64], z: &DataPoint) -> Result<f64> {
        self.check(w, z)?;
        if let Some((_, zo)) = self.quadratic_parts(w, z) {
            return Ok(zo);
        }
        let logits = self.forward(w, &z.features).pop().expect("logits");
        Ok(if argmax(&logits) == z.label { 0.0 } else { 1.0 })
    }

    /// Mean surrogate and mean 0-1 loss over a nonempty sample.
    pub fn empirical_risks(&self, w: &[f64], sample: &[DataPoint]) -> Result<(f64, f64)> {
        if sample.is_empty() {
            return Err(Error::validation("empirical risk of an empty sample"));
        }
        let mut sur = 0.0;
        let mut zo = 0.0;
        for z in sample {
            self.check(w, z)?;
            if let Some((l, e)) = self.quadratic_parts(w, z) {
                sur += l;
                zo += e;
                continue;
            }
            let logits = self.forward(w, &z.features).pop().expect("logits");
            sur += log_sum_exp(&logits) - logits[z.label];
            if argmax(&logits) != z.label {
                zo += 1.0;
            }
        }
        let m = sample.len() as f64;
        Ok((sur / m, zo / m))
    }

    /// Mean 0-1 loss only.
    pub fn zero_one_risk(&self, w: &[f64], sample: &[DataPoint]) -> Result<f64> {
        Ok(self.empirical_risks(w, sample)?.1)
    }

    /// `W_0`: zeros for logistic regression and the quadratic model, `U(±1/√fan_in)` weights and
    /// biases for an MLP, drawn from `seed`.
    pub fn init_params(&self, seed: u64) -> ParameterVector {
        match self {
            Model::Logistic { .. } | Model::Quadratic { .. } => ParameterVector::zeros(self.dim()),
            Model::Mlp { .. } => {
                let mut rng = stream_rng(seed, 0);
                let mut values = Vec::with_capacity(self.dim());
                for w in self.widths().windows(2) {
                    let bound = 1.0 / (w[0] as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    values.extend((0..w[1] * (w[0] + 1)).map(|_| dist.sample(&mut rng)));
                }
                ParameterVector::from_vec_unchecked(values)
            }
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn default_normalize() -> f64 {
    255.0
}

/// Where training and evaluation points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Class `c ~ priors`, features `means[c] + scale·N(0, I)`.
    GaussianBlobs {
        means: Vec<Vec<f64>>,
        scale: f64,
        priors: Vec<f64>,
        seed: u64,
    },
    /// IDX image/label pair; pixel values are divided by `normalize` and only
    /// the first `subset` records are kept.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_normalize")]
        normalize: f64,
        #[serde(default)]
        subset: Option<usize>,
    },
}

impl DataSource {
    /// Two symmetric blobs at `±separation/(2√d)·1` with unit prior mass each.
    pub fn symmetric_blobs(dim: usize, separation: f64, scale: f64, seed: u64) -> Self {
        let offset = separation / (2.0 * (dim as f64).sqrt());
        DataSource::GaussianBlobs {
            means: vec![vec![-offset; dim], vec![offset; dim]],
            scale,
            priors: vec![0.5, 0.5],
            seed,
        }
    }

    pub fn feature_dim(&self) -> Result<usize> {
        match self {
            DataSource::GaussianBlobs { means, .. } => means
                .first()
                .map(Vec::len)
                .ok_or_else(|| Error::validation("blob source has no classes")),
            DataSource::Idx { images, .. } => {
                let header = read_idx_header(images, 0x0803)?;
                Ok(header.iter().skip(1).product())
            }
        }
    }

    pub fn classes(&self) -> Result<usize> {
        match self {
            DataSource::GaussianBlobs { means, .. } => Ok(means.len()),
            DataSource::Idx { .. } => Ok(self.materialize()?.classes),
        }
    }

    /// Validates the source and loads any file-backed data.
    pub fn materialize(&self) -> Result<Sampler> {
        match self {
            DataSource::GaussianBlobs {
                means,
                scale,
                priors,
                seed,
            } => {
                if means.is_empty() || means.len() != priors.len() {
                    return Err(Error::validation("blob means and priors must be nonempty and aligned"));
                }
                let dim = means[0].len();
                if dim == 0 || means.iter().any(|m| m.len() != dim || m.iter().any(|x| !x.is_finite())) {
                    return Err(Error::validation("blob means must share a positive finite dimension"));
                }
                if !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::validation("blob scale must be finite and nonnegative"));
                }
                let classes = WeightedIndex::new(priors)
                    .map_err(|e| Error::validation(format!("invalid class priors: {e}")))?;
                Ok(Sampler {
                    kind: SamplerKind::Blobs {
                        means: means.clone(),
                        scale: *scale,
                        classes,
                    },
                    seed: *seed,
                    classes: means.len(),
                })
            }
            DataSource::Idx {
                images,
                labels,
                normalize,
                subset,
            } => {
                if !(normalize.is_finite() && *normalize > 0.0) {
                    return Err(Error::validation("idx normalization must be positive"));
                }
                let points = load_idx(images, labels, *normalize, *subset)?;
                let classes = points.iter().map(|p| p.label + 1).max().unwrap_or(0).max(2);
                Ok(Sampler {
                    kind: SamplerKind::Pool(points),
                    seed: 0,
                    classes,
                })
            }
        }
    }
}

/// A ready-to-draw data source.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
    seed: u64,
    classes: usize,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Blobs {
        means: Vec<Vec<f64>>,
        scale: f64,
        classes: WeightedIndex<f64>,
    },
    Pool(Vec<DataPoint>),
}

impl Sampler {
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Draws `count` IID points (synthetic) or `count` distinct records
    /// (file-backed) from stream `stream` of `seed`.
    pub fn draw(&self, count: usize, seed: u64, stream: u64) -> Result<Vec<DataPoint>> {
        let mut rng = stream_rng(splitmix64(seed ^ self.seed), stream);
        match &self.kind {
            SamplerKind::Blobs { means, scale, classes } => Ok((0..count)
                .map(|_| {
                    let c = classes.sample(&mut rng);
                    let features = means[c]
                        .iter()
                        .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    DataPoint { features, label: c }
                })
                .collect()),
            SamplerKind::Pool(points) => {
                if count > points.len() {
                    return Err(Error::InsufficientData {
                        needed: count,
                        available: points.len(),
                    });
                }
                Ok(sample_indices(&mut rng, points.len(), count)
                    .into_iter()
                    .map(|i| points[i].clone())
                    .collect())
            }
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_idx(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let bad = |msg: &str| Error::validation(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("file too short for an IDX header"));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(bad(&format!("expected IDX magic {magic:#010x}, found {found:#010x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated IDX header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    if bytes.len() < header + dims.iter().product::<usize>() {
        return Err(bad("IDX payload shorter than its header declares"));
    }
    Ok((dims, header))
}

fn read_idx_header(path: &Path, magic: u32) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    Ok(parse_idx(&bytes, magic, path)?.0)
}

/// Reads an unsigned-byte IDX pair (`0x803` images, `0x801` labels).
pub fn load_idx(images: &Path, labels: &Path, normalize: f64, subset: Option<usize>) -> Result<Vec<DataPoint>> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;
    let (idims, ioff) = parse_idx(&img, 0x0803, images)?;
    let (ldims, loff) = parse_idx(&lab, 0x0801, labels)?;
    if idims[0] != ldims[0] {
        return Err(Error::DimensionMismatch {
            expected: idims[0],
            got: ldims[0],
        });
    }
    let pixels = idims[1] * idims[2];
    let count = subset.map_or(idims[0], |s| s.min(idims[0]));
    Ok((0..count)
        .map(|r| DataPoint {
            features: img[ioff + r * pixels..ioff + (r + 1) * pixels]
                .iter()
                .map(|&b| b as f64 / normalize)
                .collect(),
            label: lab[loff + r] as usize,
        })
        .collect())
}
