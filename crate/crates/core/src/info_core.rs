//! Entropy, KL divergence and (conditional) mutual information over finite
//! probability spaces, computed by full enumeration.
//!
//! Conventions: natural logarithms, `0·log 0 = 0`, and `KL(q‖p) = +∞` as soon
//! as some `q_i > 0` meets `p_i = 0`. Inputs are validated against a
//! normalization tolerance of [`NORMALIZATION_TOL`]; renormalization only
//! happens through the explicit [`FinitePmf::normalized`] constructor.

use std::path::Path;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of the total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

fn check_weights(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::validation("pmf has empty support"));
    }
    if let Some((i, &p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(Error::validation(format!("weight {i} is {p}, expected a finite value >= 0")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::validation(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// A probability mass function on `{0, …, support_size-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FinitePmf {
    probs: Vec<f64>,
}

impl FinitePmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_weights(&probs)?;
        Ok(Self { probs })
    }

    /// Divides nonnegative weights by their total.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation("weights have zero total mass"));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(support_size: usize) -> Result<Self> {
        if support_size == 0 {
            return Err(Error::validation("pmf has empty support"));
        }
        Ok(Self {
            probs: vec![1.0 / support_size as f64; support_size],
        })
    }

    pub fn point_mass(support_size: usize, at: usize) -> Result<Self> {
        if at >= support_size {
            return Err(Error::validation(format!("point mass at {at} outside support of size {support_size}")));
        }
        let mut probs = vec![0.0; support_size];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

impl TryFrom<Vec<f64>> for FinitePmf {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        FinitePmf::new(probs)
    }
}

impl From<FinitePmf> for Vec<f64> {
    fn from(p: FinitePmf) -> Self {
        p.probs
    }
}

#[derive(Deserialize)]
struct RawJoint {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl TryFrom<RawJoint> for FiniteJointPmf {
    type Error = Error;

    fn try_from(raw: RawJoint) -> Result<Self> {
        FiniteJointPmf::new(raw.dims, raw.probs)
    }
}

/// Joint pmf over several finite axes, stored flat in row-major order (the
/// last axis varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJoint")]
pub struct FiniteJointPmf {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl FiniteJointPmf {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::validation(format!("invalid axis sizes {dims:?}")));
        }
        let size: usize = dims.iter().product();
        if size != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: size,
                got: probs.len(),
            });
        }
        check_weights(&probs)?;
        Ok(Self { dims, probs })
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), probs.len());
        Self { dims, probs }
    }

    /// Product law of independent axes.
    pub fn independent(marginals: &[FinitePmf]) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::validation("need at least one marginal"));
        }
        let mut probs = vec![1.0];
        for m in marginals {
            probs = probs
                .iter()
                .flat_map(|&a| m.probs().iter().map(move |&b| a * b))
                .collect();
        }
        Ok(Self {
            dims: marginals.iter().map(FinitePmf::support_size).collect(),
            probs,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json_str(&text)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for a in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        strides
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        if axes.iter().any(|&a| a >= self.ndim()) || !axes.iter().all_unique() {
            return Err(Error::validation(format!(
                "axes {axes:?} invalid for a {}-axis joint",
                self.ndim()
            )));
        }
        Ok(())
    }

    /// Marginal over `keep`, with axes in the order given.
    pub fn marginal(&self, keep: &[usize]) -> Result<FiniteJointPmf> {
        self.check_axes(keep)?;
        if keep.is_empty() {
            return Ok(Self::from_parts_unchecked(vec![1], vec![self.probs.iter().sum()]));
        }
        let strides = self.strides();
        let out_dims: Vec<usize> = keep.iter().map(|&a| self.dims[a]).collect();
        let mut out_strides = vec![1; keep.len()];
        for a in (0..keep.len() - 1).rev() {
            out_strides[a] = out_strides[a + 1] * out_dims[a + 1];
        }
        let mut out = vec![0.0; out_dims.iter().product()];
        for (flat, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let idx: usize = keep
                .iter()
                .zip(&out_strides)
                .map(|(&a, &os)| ((flat / strides[a]) % self.dims[a]) * os)
                .sum();
            out[idx] += p;
        }
        Ok(Self::from_parts_unchecked(out_dims, out))
    }

    /// Reorders the axes; `order[i]` is the source axis of new axis `i`.
    pub fn permute_axes(&self, order: &[usize]) -> Result<FiniteJointPmf> {
        if order.len() != self.ndim() {
            return Err(Error::validation("permutation must list every axis"));
        }
        self.marginal(order)
    }

    /// Conditional joint of the remaining axes given `axis = value`, with
    /// the probability of the conditioning event.
    pub fn condition_on(&self, axis: usize, value: usize) -> Result<(f64, FiniteJointPmf)> {
        self.check_axes(&[axis])?;
        if value >= self.dims[axis] {
            return Err(Error::validation(format!("value {value} outside axis {axis}")));
        }
        let strides = self.strides();
        let rest: Vec<usize> = (0..self.ndim()).filter(|&a| a != axis).collect();
        let mut slice = Vec::with_capacity(self.probs.len() / self.dims[axis]);
        for (flat, &p) in self.probs.iter().enumerate() {
            if (flat / strides[axis]) % self.dims[axis] == value {
                slice.push(p);
            }
        }
        let mass: f64 = slice.iter().sum();
        if mass <= 0.0 {
            return Err(Error::Domain(format!("Pr[axis {axis} = {value}] is zero")));
        }
        slice.iter_mut().for_each(|p| *p /= mass);
        let dims = if rest.is_empty() {
            vec![1]
        } else {
            rest.iter().map(|&a| self.dims[a]).collect()
        };
        Ok((mass, Self::from_parts_unchecked(dims, slice)))
    }
}

/// Probability kernel: one pmf over the target for each configuration of the
/// conditioning variables (row-major over `given_dims`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    given_dims: Vec<usize>,
    target_dim: usize,
    rows: Vec<FinitePmf>,
}

impl ConditionalTable {
    pub fn new(given_dims: Vec<usize>, target_dim: usize, rows: Vec<FinitePmf>) -> Result<Self> {
        let expected: usize = given_dims.iter().product();
        if rows.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: rows.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.support_size() != target_dim) {
            return Err(Error::DimensionMismatch {
                expected: target_dim,
                got: r.support_size(),
            });
        }
        Ok(Self {
            given_dims,
            target_dim,
            rows,
        })
    }

    pub fn given_dims(&self) -> &[usize] {
        &self.given_dims
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn rows(&self) -> &[FinitePmf] {
        &self.rows
    }

    pub fn row(&self, flat_index: usize) -> &FinitePmf {
        &self.rows[flat_index]
    }
}

/// `-Σ p log p` over raw weights.
pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// `Σ q log(q/p)` over raw weights of equal length.
pub(crate) fn kl_of(q: &[f64], p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            acc += qi * (qi / pi).ln();
        }
    }
    acc
}

/// Mixture `Σ_x input[x]·rows[x]`.
pub(crate) fn mixture_of(input: &[f64], rows: &[&[f64]]) -> Vec<f64> {
    let mut mix = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for (&px, row) in input.iter().zip(rows) {
        if px > 0.0 {
            for (m, &r) in mix.iter_mut().zip(row.iter()) {
                *m += px * r;
            }
        }
    }
    mix
}

/// Mutual information of `(X, Y)` with `X ~ input` and `Y | X=x ~ rows[x]`,
/// i.e. `Σ_x input[x]·KL(rows[x] ‖ mixture)`.
pub(crate) fn channel_information(input: &[f64], rows: &[&[f64]]) -> f64 {
    let mix = mixture_of(input, rows);
    input
        .iter()
        .zip(rows)
        .filter(|(&px, _)| px > 0.0)
        .map(|(&px, row)| px * kl_of(row, &mix))
        .sum()
}

pub fn entropy(p: &FinitePmf) -> f64 {
    entropy_of(p.probs())
}

pub fn kl_divergence(q: &FinitePmf, p: &FinitePmf) -> Result<f64> {
    if q.support_size() != p.support_size() {
        return Err(Error::DimensionMismatch {
            expected: q.support_size(),
            got: p.support_size(),
        });
    }
    Ok(kl_of(q.probs(), p.probs()))
}

/// Mutual information of a two-axis joint: `KL(P_XY ‖ P_X ⊗ P_Y)`.
pub fn mutual_information(joint: &FiniteJointPmf) -> Result<f64> {
    if joint.ndim() != 2 {
        return Err(Error::validation(format!("expected a 2-axis joint, got {} axes", joint.ndim())));
    }
    mutual_information_between(joint, &[0], &[1])
}

/// Mutual information between two disjoint groups of axes.
pub fn mutual_information_between(joint: &FiniteJointPmf, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() || a.iter().any(|x| b.contains(x)) {
        return Err(Error::validation("axis groups must be nonempty and disjoint"));
    }
    let axes: Vec<usize> = a.iter().chain(b).copied().collect();
    let pab = joint.marginal(&axes)?;
    let pa = joint.marginal(a)?;
    let pb = joint.marginal(b)?;
    let nb = pb.probs().len();
    let mut acc = 0.0;
    for (flat, &p) in pab.probs().iter().enumerate() {
        if p > 0.0 {
            let q = pa.probs()[flat / nb] * pb.probs()[flat % nb];
            acc += p * (p / q).ln();
        }
    }
    Ok(acc)
}

/// `H(target | given)` for groups of axes.
pub fn conditional_entropy(joint: &FiniteJointPmf, target: &[usize], given: &[usize]) -> Result<f64> {
    let axes: Vec<usize> = target.iter().chain(given).copied().collect();
    let h_all = entropy_of(joint.marginal(&axes)?.probs());
    let h_given = if given.is_empty() {
        0.0
    } else {
        entropy_of(joint.marginal(given)?.probs())
    };
    Ok(h_all - h_given)
}

/// `I(X;Y|Z)` of a three-axis joint, via
/// `H(X,Z) + H(Y,Z) − H(X,Y,Z) − H(Z)`.
pub fn conditional_mutual_information(joint: &FiniteJointPmf) -> Result<f64> {
    if joint.ndim() != 3 {
        return Err(Error::validation(format!("expected a 3-axis joint, got {} axes", joint.ndim())));
    }
    conditional_mutual_information_between(joint, &[0], &[1], &[2])
}

pub fn conditional_mutual_information_between(
    joint: &FiniteJointPmf,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<f64> {
    let ac: Vec<usize> = a.iter().chain(c).copied().collect();
    let bc: Vec<usize> = b.iter().chain(c).copied().collect();
    let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
    joint.check_axes(&abc)?;
    let h = |axes: &[usize]| -> Result<f64> { Ok(entropy_of(joint.marginal(axes)?.probs())) };
    let hc = if c.is_empty() { 0.0 } else { h(c)? };
    Ok(h(&ac)? + h(&bc)? - h(&abc)? - hc)
}

/// Mutual information of `(X, Y)` under the conditional law given `Z = z`.
pub fn disintegrated_mi(joint: &FiniteJointPmf, z_index: usize) -> Result<f64> {
    if joint.ndim() != 3 {
        return Err(Error::validation(format!("expected a 3-axis joint, got {} axes", joint.ndim())));
    }
    let (_, slice) = joint.condition_on(2, z_index)?;
    mutual_information(&slice)
}

/// `(1/(k·C(n,k))) Σ_{|T|=k} H(X_T | Y)` for a joint over `(X_1..X_n, Y)`
/// (the last axis is `Y`).
pub fn averaged_subset_entropy(joint: &FiniteJointPmf, k: usize) -> Result<f64> {
    if joint.ndim() < 2 {
        return Err(Error::validation("joint must have at least one X axis and a Y axis"));
    }
    let n = joint.ndim() - 1;
    if k == 0 || k > n {
        return Err(Error::validation(format!("subset size {k} outside 1..={n}")));
    }
    let y = [n];
    let h_y = entropy_of(joint.marginal(&y)?.probs());
    let mut total = 0.0;
    let mut count = 0usize;
    for subset in (0..n).combinations(k) {
        let axes: Vec<usize> = subset.into_iter().chain(y).collect();
        total += entropy_of(joint.marginal(&axes)?.probs()) - h_y;
        count += 1;
    }
    Ok(total / (k as f64 * count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn joint(dims: &[usize], probs: &[f64]) -> FiniteJointPmf {
        FiniteJointPmf::new(dims.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&FinitePmf::new(vec![1.0, 0.0]).unwrap()), 0.0);
        assert_abs_diff_eq!(entropy(&FinitePmf::uniform(2).unwrap()), LN_2, epsilon = 1e-15);
        // -0.4 ln 0.4 - 0.6 ln 0.6
        assert_abs_diff_eq!(
            entropy(&FinitePmf::new(vec![0.4, 0.6]).unwrap()),
            0.673_011_667_009_256_5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn invalid_pmfs_are_rejected() {
        assert!(FinitePmf::new(vec![0.5, 0.6]).is_err());
        assert!(FinitePmf::new(vec![-0.1, 1.1]).is_err());
        assert!(FinitePmf::new(vec![]).is_err());
        assert!(FinitePmf::new(vec![f64::NAN, 1.0]).is_err());
        assert!(FiniteJointPmf::new(vec![2, 2], vec![0.25; 3]).is_err());
        // explicit renormalization is the only way to fix a bad total
        let p = FinitePmf::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn kl_examples() {
        let p = FinitePmf::new(vec![0.6, 0.4]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let point = FinitePmf::new(vec![1.0, 0.0]).unwrap();
        let unif = FinitePmf::uniform(2).unwrap();
        assert_abs_diff_eq!(kl_divergence(&point, &unif).unwrap(), LN_2, epsilon = 1e-15);
        // 0.3 ln 0.5 + 0.7 ln 1.75
        let q = FinitePmf::new(vec![0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(kl_divergence(&q, &p).unwrap(), 0.183_786_897_386_812_2, epsilon = 1e-12);
        assert_eq!(kl_divergence(&unif, &point).unwrap(), f64::INFINITY);
        assert!(kl_divergence(&unif, &FinitePmf::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn mi_examples() {
        let indep = FiniteJointPmf::independent(&[
            FinitePmf::new(vec![0.2, 0.8]).unwrap(),
            FinitePmf::new(vec![0.5, 0.3, 0.2]).unwrap(),
        ])
        .unwrap();
        assert_abs_diff_eq!(mutual_information(&indep).unwrap(), 0.0, epsilon = 1e-15);
        let diag = joint(&[2, 2], &[0.5, 0.0, 0.0, 0.5]);
        assert_abs_diff_eq!(mutual_information(&diag).unwrap(), LN_2, epsilon = 1e-15);
        let noisy = joint(&[2, 2], &[0.4, 0.1, 0.1, 0.4]);
        assert_abs_diff_eq!(mutual_information(&noisy).unwrap(), 0.192_744_757_021_757_5, epsilon = 1e-12);
        assert!(mutual_information(&joint(&[2, 1, 2], &[0.25; 4])).is_err());
    }

    #[test]
    fn cmi_degenerate_cases() {
        // X ⫫ Y | Z: build p(z) p(x|z) p(y|z)
        let pz = [0.3, 0.7];
        let px = [[0.9, 0.1], [0.2, 0.8]];
        let py = [[0.6, 0.4], [0.1, 0.9]];
        let mut probs = vec![0.0; 8];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    probs[x * 4 + y * 2 + z] = pz[z] * px[z][x] * py[z][y];
                }
            }
        }
        let j = joint(&[2, 2, 2], &probs);
        assert_abs_diff_eq!(conditional_mutual_information(&j).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(disintegrated_mi(&j, 0).unwrap(), 0.0, epsilon = 1e-14);

        // constant Z: CMI reduces to MI
        let xy = [0.4, 0.1, 0.1, 0.4];
        let j = joint(&[2, 2, 1], &xy);
        assert_abs_diff_eq!(
            conditional_mutual_information(&j).unwrap(),
            mutual_information(&joint(&[2, 2], &xy)).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn disintegrated_mi_rejects_null_slices() {
        let j = joint(&[2, 2, 2], &[0.25, 0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0]);
        assert!(matches!(disintegrated_mi(&j, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn averaged_subset_entropy_cases() {
        // n = 1: single subset, H(X|Y)
        let j = joint(&[2, 2], &[0.4, 0.1, 0.1, 0.4]);
        let h = averaged_subset_entropy(&j, 1).unwrap();
        assert_abs_diff_eq!(h, conditional_entropy(&j, &[0], &[1]).unwrap(), epsilon = 1e-15);
        // IID X_i independent of Y: H(X_1) for every k
        let x = FinitePmf::new(vec![0.3, 0.7]).unwrap();
        let y = FinitePmf::new(vec![0.5, 0.25, 0.25]).unwrap();
        let j = FiniteJointPmf::independent(&[x.clone(), x.clone(), x.clone(), y]).unwrap();
        for k in 1..=3 {
            assert_abs_diff_eq!(averaged_subset_entropy(&j, k).unwrap(), entropy(&x), epsilon = 1e-13);
        }
        assert!(averaged_subset_entropy(&j, 0).is_err());
        assert!(averaged_subset_entropy(&j, 4).is_err());
    }

    #[test]
    fn channel_information_matches_joint_mi() {
        let input = [0.2, 0.5, 0.3];
        let rows: [&[f64]; 3] = [&[0.1, 0.9], &[0.5, 0.5], &[0.7, 0.3]];
        let mut probs = vec![];
        for (px, row) in input.iter().zip(rows) {
            probs.extend(row.iter().map(|r| px * r));
        }
        let j = joint(&[3, 2], &probs);
        assert_abs_diff_eq!(
            channel_information(&input, &rows),
            mutual_information(&j).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn joint_loads_from_json() {
        let j = FiniteJointPmf::from_json_str(r#"{"dims":[2,2],"probs":[0.5,0,0,0.5]}"#).unwrap();
        assert_eq!(j.dims(), &[2, 2]);
        assert!(FiniteJointPmf::from_json_str(r#"{"dims":[2,2],"probs":[0.5,0,0,0.6]}"#).is_err());
        assert!(FiniteJointPmf::from_json_str(r#"{"dims":[2],"probs":[1.0]}"#).is_err());
    }
}
