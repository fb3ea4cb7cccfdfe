use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info_core::{ConditionalTable, FinitePmf};

/// Data pmf, sample size, loss table `loss[w][z] ∈ [0,1]` and algorithm kernel.
///
/// Samples `S = (z_1, …, z_n)` are indexed row-major with `z_1` the most
/// significant digit; `algorithm` holds one pmf over hypotheses per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct FiniteLearningProblem {
    data_pmf: FinitePmf,
    n: usize,
    loss: Vec<Vec<f64>>,
    algorithm: ConditionalTable,
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    data_pmf: FinitePmf,
    n: usize,
    loss: Vec<Vec<f64>>,
    algorithm: Vec<FinitePmf>,
}

impl TryFrom<RawProblem> for FiniteLearningProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        FiniteLearningProblem::new(raw.data_pmf, raw.n, raw.loss, raw.algorithm)
    }
}

impl From<FiniteLearningProblem> for RawProblem {
    fn from(p: FiniteLearningProblem) -> Self {
        RawProblem {
            data_pmf: p.data_pmf,
            n: p.n,
            loss: p.loss,
            algorithm: p.algorithm.rows().to_vec(),
        }
    }
}

impl FiniteLearningProblem {
    pub fn new(data_pmf: FinitePmf, n: usize, loss: Vec<Vec<f64>>, algorithm: Vec<FinitePmf>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("sample size must be at least 1"));
        }
        let z_card = data_pmf.support_size();
        let w_card = loss.len();
        if w_card == 0 {
            return Err(Error::validation("loss table has no hypotheses"));
        }
        for (w, row) in loss.iter().enumerate() {
            if row.len() != z_card {
                return Err(Error::DimensionMismatch {
                    expected: z_card,
                    got: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::validation(format!("loss[{w}] contains {v}, outside [0, 1]")));
            }
        }
        let samples = (z_card as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if samples > super::ENUMERATION_LIMIT {
            return Err(Error::Resource {
                terms: samples,
                limit: super::ENUMERATION_LIMIT,
            });
        }
        let algorithm = ConditionalTable::new(vec![z_card; n], w_card, algorithm)?;
        Ok(Self {
            data_pmf,
            n,
            loss,
            algorithm,
        })
    }

    /// Builds the algorithm kernel from a function of the sample digits.
    pub fn from_fn(
        data_pmf: FinitePmf,
        n: usize,
        loss: Vec<Vec<f64>>,
        kernel: impl Fn(&[usize]) -> Vec<f64>,
    ) -> Result<Self> {
        let z_card = data_pmf.support_size();
        let count = z_card.checked_pow(n as u32).ok_or_else(|| Error::validation("sample space too large"))?;
        let rows = (0..count)
            .map(|s| FinitePmf::new(kernel(&decode_digits(s, z_card, n))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(data_pmf, n, loss, rows)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json_str(&text)
    }

    /// `n = 1`, `Z ~ Bern(1/2)`, `W = Z`, 0-1 loss `1{z ≠ w}`.
    pub fn identity_bernoulli() -> Self {
        Self::from_fn(FinitePmf::uniform(2).unwrap(), 1, zero_one_loss(2), |s| {
            let mut row = vec![0.0; 2];
            row[s[0]] = 1.0;
            row
        })
        .unwrap()
    }

    /// An algorithm whose output law does not depend on the sample.
    pub fn constant(data_pmf: FinitePmf, n: usize, loss: Vec<Vec<f64>>, output: FinitePmf) -> Result<Self> {
        Self::from_fn(data_pmf, n, loss, |_| output.probs().to_vec())
    }

    /// Binary `n = 1` problem whose output is the sample point flipped with
    /// probability `flip`.
    pub fn randomized_response(flip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip) {
            return Err(Error::validation("flip probability must lie in [0, 1]"));
        }
        Self::from_fn(FinitePmf::uniform(2)?, 1, zero_one_loss(2), |s| {
            let mut row = vec![flip; 2];
            row[s[0]] = 1.0 - flip;
            row
        })
    }

    /// Seeded random problem: Dirichlet(1,…,1) data pmf and kernel rows,
    /// uniform `[0,1]` loss entries.
    pub fn random(rng: &mut impl Rng, n: usize, z_card: usize, w_card: usize) -> Result<Self> {
        let data_pmf = dirichlet_ones(rng, z_card);
        let loss = (0..w_card)
            .map(|_| (0..z_card).map(|_| rng.random::<f64>()).collect())
            .collect();
        let count = z_card.pow(n as u32);
        let rows = (0..count).map(|_| dirichlet_ones(rng, w_card)).collect();
        Self::new(data_pmf, n, loss, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z_card(&self) -> usize {
        self.data_pmf.support_size()
    }

    pub fn w_card(&self) -> usize {
        self.loss.len()
    }

    pub fn data_pmf(&self) -> &FinitePmf {
        &self.data_pmf
    }

    pub fn loss(&self, w: usize, z: usize) -> f64 {
        self.loss[w][z]
    }

    pub fn loss_table(&self) -> &[Vec<f64>] {
        &self.loss
    }

    pub fn algorithm(&self) -> &ConditionalTable {
        &self.algorithm
    }

    pub fn sample_count(&self) -> usize {
        self.algorithm.rows().len()
    }

    /// `A(· | S)` for a sample given by its flat index.
    pub fn output_law(&self, sample: usize) -> &[f64] {
        self.algorithm.row(sample).probs()
    }

    pub fn sample_index(&self, digits: &[usize]) -> usize {
        digits.iter().fold(0, |acc, &d| acc * self.z_card() + d)
    }

    pub fn sample_digits(&self, sample: usize) -> Vec<usize> {
        decode_digits(sample, self.z_card(), self.n)
    }

    /// Probability of an ordered sample under `D^{⊗n}`.
    pub fn sample_prob(&self, sample: usize) -> f64 {
        self.sample_digits(sample).iter().map(|&z| self.data_pmf.prob(z)).product()
    }

    /// `R_D(w) = Σ_z p(z) ℓ(w, z)`.
    pub fn population_risk(&self, w: usize) -> f64 {
        self.loss[w].iter().zip(self.data_pmf.probs()).map(|(l, p)| l * p).sum()
    }

    pub fn empirical_risk(&self, w: usize, digits: &[usize]) -> f64 {
        digits.iter().map(|&z| self.loss[w][z]).sum::<f64>() / digits.len() as f64
    }
}

/// 0-1 loss table on a common alphabet of size `card`.
pub fn zero_one_loss(card: usize) -> Vec<Vec<f64>> {
    (0..card)
        .map(|w| (0..card).map(|z| if w == z { 0.0 } else { 1.0 }).collect())
        .collect()
}

fn dirichlet_ones(rng: &mut impl Rng, size: usize) -> FinitePmf {
    let draws: Vec<f64> = (0..size).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    FinitePmf::normalized(draws).expect("exponential draws are positive")
}

/// Base-`radix` digits of `index`, most significant first.
pub(crate) fn decode_digits(mut index: usize, radix: usize, len: usize) -> Vec<usize> {
    let mut digits = vec![0; len];
    for d in digits.iter_mut().rev() {
        *d = index % radix;
        index /= radix;
    }
    digits
}

/// Supersample width `k` and number of columns `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperSampleSpec {
    k: usize,
    n: usize,
}

impl SuperSampleSpec {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::validation(format!("supersample width k = {k} must be at least 2")));
        }
        if n == 0 {
            return Err(Error::validation("supersample needs at least one column"));
        }
        Ok(Self { k, n })
    }

    pub fn for_problem(problem: &FiniteLearningProblem, k: usize) -> Result<Self> {
        Self::new(k, problem.n())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;

    #[test]
    fn digits_roundtrip() {
        let p = FiniteLearningProblem::random(&mut stream_rng(1, 0), 3, 3, 2).unwrap();
        for s in 0..p.sample_count() {
            assert_eq!(p.sample_index(&p.sample_digits(s)), s);
        }
        assert_eq!(p.sample_digits(5), vec![0, 1, 2]);
    }

    #[test]
    fn loss_outside_unit_interval_is_rejected() {
        let pmf = FinitePmf::uniform(2).unwrap();
        let bad = vec![vec![0.0, 1.5], vec![0.0, 0.0]];
        let rows = vec![pmf.clone(), pmf.clone()];
        assert!(FiniteLearningProblem::new(pmf, 1, bad, rows).is_err());
    }

    #[test]
    fn kernel_row_count_must_match_sample_space() {
        let pmf = FinitePmf::uniform(2).unwrap();
        let rows = vec![pmf.clone(); 3];
        assert!(FiniteLearningProblem::new(pmf, 2, zero_one_loss(2), rows).is_err());
    }

    #[test]
    fn supersample_spec_validation() {
        assert!(SuperSampleSpec::new(1, 3).is_err());
        assert!(SuperSampleSpec::new(2, 0).is_err());
        assert!(SuperSampleSpec::new(2, 1).is_ok());
    }

    #[test]
    fn problem_json_roundtrip() {
        let p = FiniteLearningProblem::identity_bernoulli();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(FiniteLearningProblem::from_json_str(&text).unwrap(), p);
        assert!(FiniteLearningProblem::from_json_str(r#"{"data_pmf":[0.5,0.5],"n":1}"#).is_err());
    }
}
