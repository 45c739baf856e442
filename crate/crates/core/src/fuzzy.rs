//! Fuzzy attributes induced by wide autoencoders, the per-party rule base and
//! the plaintext two-stage global classifier.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::autoencoder::WideCdmmaModel;
use crate::gates::encode_unit_interval;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipKind {
    /// `exp(-e / (2p))`
    Gaussian,
    /// `(1 + e / (nu - 2))^(-(nu + p) / 2)`
    StudentT { nu: f64 },
}

impl Default for MembershipKind {
    fn default() -> Self {
        MembershipKind::Gaussian
    }
}

impl MembershipKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MembershipKind::StudentT { nu } if !(nu > 2.0) => {
                Err(Error::input(format!("Student-t membership needs nu > 2, got {nu}")))
            }
            _ => Ok(()),
        }
    }

    /// Membership degree of a point whose squared reconstruction error is
    /// `err2` in a `p`-dimensional data space.
    pub fn degree(&self, err2: f64, p: usize) -> f64 {
        let p = p as f64;
        match *self {
            MembershipKind::Gaussian => libm::exp(-err2 / (2.0 * p)),
            MembershipKind::StudentT { nu } => libm::pow(1.0 + err2 / (nu - 2.0), -(nu + p) / 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyAttribute {
    pub model: WideCdmmaModel,
    pub kind: MembershipKind,
}

impl FuzzyAttribute {
    pub fn dim(&self) -> usize {
        self.model.output_dim()
    }

    /// Memberships of every row of `y`.
    pub fn membership_batch(&self, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.dim();
        Ok(self.model.reconstruction_errors(y)?.into_iter().map(|e| self.kind.degree(e, p)).collect())
    }
}

pub fn attribute_membership(y: &[f64], attr: &FuzzyAttribute) -> Result<f64> {
    let row = DMatrix::from_row_slice(1, y.len(), y);
    Ok(attr.membership_batch(&row)?[0])
}

/// A party's best class and its score `mu_bar = 1 - mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalScore {
    pub label: u32,
    pub mu_bar: f64,
}

/// One party's rule base: an attribute per locally held class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBank {
    pub entries: Vec<(u32, FuzzyAttribute)>,
}

impl AttributeBank {
    pub fn new(entries: Vec<(u32, FuzzyAttribute)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::input("attribute bank needs at least one class"));
        }
        let p = entries[0].1.dim();
        if entries.iter().any(|(_, a)| a.dim() != p) {
            return Err(Error::input("attributes in a bank disagree on the data dimension"));
        }
        Ok(Self { entries })
    }

    pub fn labels(&self) -> Vec<u32> {
        self.entries.iter().map(|(l, _)| *l).collect()
    }

    /// `mu[c][i]`: membership of row `i` of `y` in class entry `c`.
    pub fn memberships(&self, y: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        self.entries.iter().map(|(_, a)| a.membership_batch(y)).collect()
    }

    pub fn classify_batch(&self, y: &DMatrix<f64>) -> Result<Vec<LocalScore>> {
        let mu = self.memberships(y)?;
        let labels = self.labels();
        Ok((0..y.nrows())
            .map(|i| {
                let col: Vec<f64> = mu.iter().map(|m| m[i]).collect();
                select_local(&labels, &col)
            })
            .collect())
    }
}

/// Highest membership wins; ties go to the earliest entry.
pub fn select_local(labels: &[u32], mu: &[f64]) -> LocalScore {
    let mut best = 0;
    for c in 1..mu.len() {
        if mu[c] > mu[best] {
            best = c;
        }
    }
    LocalScore { label: labels[best], mu_bar: 1.0 - mu[best] }
}

pub fn local_classify(y: &[f64], bank: &AttributeBank) -> Result<LocalScore> {
    let row = DMatrix::from_row_slice(1, y.len(), y);
    Ok(bank.classify_batch(&row)?[0])
}

/// Index of the party with the smallest `mu_bar`; ties go to the earliest.
pub fn select_global(scores: &[LocalScore]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::input("no party scores"));
    }
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k].mu_bar < scores[best].mu_bar {
            best = k;
        }
    }
    Ok(best)
}

/// The same selection on `n_b`-bit quantised scores, which is what the
/// encrypted circuit computes.
pub fn select_global_quantized(scores: &[LocalScore], n_b: u32) -> Result<usize> {
    let codes = scores.iter().map(|s| encode_unit_interval(s.mu_bar, n_b)).collect::<Result<Vec<_>>>()?;
    if codes.is_empty() {
        return Err(Error::input("no party scores"));
    }
    let mut best = 0;
    for k in 1..codes.len() {
        if codes[k] < codes[best] {
            best = k;
        }
    }
    Ok(best)
}

pub fn global_classify_plain(y: &[f64], parties: &[AttributeBank]) -> Result<u32> {
    let scores = parties.iter().map(|b| local_classify(y, b)).collect::<Result<Vec<_>>>()?;
    Ok(scores[select_global(&scores)?].label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{learn_cdmma, CdmmaModel};
    use crate::kernel::KernelParams;
    use crate::learner::{LearnConfig, MembershipMappingModel};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// A one-layer model that reconstructs every input as `centre`.
    fn constant_attr(centre: &[f64], kind: MembershipKind) -> FuzzyAttribute {
        let p = centre.len();
        let layer = MembershipMappingModel {
            alpha: DMatrix::from_row_slice(1, p, centre),
            inducing: DMatrix::zeros(1, 1),
            kernel: KernelParams::new(1.0, vec![0.0]).unwrap(),
            nu: 2.1,
            beta_inv: 1.0,
        };
        let mut proj = DMatrix::zeros(1, p);
        proj[(0, 0)] = 1.0;
        FuzzyAttribute {
            model: WideCdmmaModel { submodels: vec![CdmmaModel { layers: vec![layer], projections: vec![proj] }] },
            kind,
        }
    }

    fn bank(centres: &[&[f64]]) -> AttributeBank {
        AttributeBank::new(
            centres
                .iter()
                .enumerate()
                .map(|(c, x)| (c as u32 + 1, constant_attr(x, MembershipKind::Gaussian)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_reconstruction_is_full_membership() {
        for kind in [MembershipKind::Gaussian, MembershipKind::StudentT { nu: 2.001 }] {
            let a = constant_attr(&[0.5, -1.0], kind);
            assert_eq!(attribute_membership(&[0.5, -1.0], &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn gaussian_value() {
        let a = constant_attr(&[0.0, 0.0], MembershipKind::Gaussian);
        let mu = attribute_membership(&[1.0, 1.0], &a).unwrap();
        assert!((mu - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn student_t_value() {
        let kind = MembershipKind::StudentT { nu: 2.001 };
        // (1 + 0.001 / 0.001)^(-(2.001 + 2) / 2) = 2^-2.0005
        let oracle = 1.0 / (4.0 * libm::exp2(0.0005));
        assert!((kind.degree(0.001, 2) - oracle).abs() < 1e-12);
        assert!(MembershipKind::StudentT { nu: 2.0 }.validate().is_err());
        assert!(kind.validate().is_ok());
    }

    #[test]
    fn local_rules() {
        let b = bank(&[&[0.0, 0.0]]);
        let s = local_classify(&[1.0, 1.0], &b).unwrap();
        assert_eq!(s.label, 1);
        assert!((s.mu_bar - (1.0 - libm::exp(-0.5))).abs() < 1e-15);

        assert_eq!(select_local(&[4, 7, 9], &[0.3, 0.3, 0.3]).label, 4);
        let b = bank(&[&[0.0, 0.0], &[3.0, 3.0]]);
        let s = local_classify(&[2.9, 3.2], &b).unwrap();
        assert_eq!(s.label, 2);
        assert!(s.mu_bar < 0.5);
    }

    #[test]
    fn local_matches_direct_argmax_on_blobs() {
        let mut rng = StdRng::seed_from_u64(11);
        let cfg = LearnConfig::default();
        let mut entries = Vec::new();
        for (c, centre) in [[0.0, 0.0], [4.0, 4.0]].iter().enumerate() {
            let y = DMatrix::from_fn(40, 2, |_, k| centre[k] + rng.random_range(-0.7..0.7));
            let model = WideCdmmaModel { submodels: vec![learn_cdmma(&y, 2, 20, 2, &cfg).unwrap()] };
            entries.push((c as u32 + 1, FuzzyAttribute { model, kind: MembershipKind::Gaussian }));
        }
        let b = AttributeBank::new(entries).unwrap();
        let mut blob2 = 0;
        for _ in 0..50 {
            let y = [4.0 + rng.random_range(-0.7..0.7), 4.0 + rng.random_range(-0.7..0.7)];
            let s = local_classify(&y, &b).unwrap();
            let mu: Vec<f64> = b.entries.iter().map(|(_, a)| attribute_membership(&y, a).unwrap()).collect();
            let direct = if mu[1] > mu[0] { 2 } else { 1 };
            assert_eq!(s.label, direct);
            if s.label == 2 && s.mu_bar < 0.5 {
                blob2 += 1;
            }
        }
        assert!(blob2 >= 45, "{blob2}");
    }

    #[test]
    fn global_rules() {
        let b = bank(&[&[0.0, 0.0], &[3.0, 3.0]]);
        assert_eq!(global_classify_plain(&[2.9, 3.2], core::slice::from_ref(&b)).unwrap(), 2);
        let same = [LocalScore { label: 3, mu_bar: 0.2 }, LocalScore { label: 8, mu_bar: 0.2 }];
        assert_eq!(select_global(&same).unwrap(), 0);
        assert!(select_global(&[]).is_err());
    }

    /// Direct double argmax over every (party, class) membership.
    fn brute_force(mu: &[Vec<f64>], labels: &[Vec<u32>]) -> u32 {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, row) in mu.iter().enumerate() {
            for (c, &m) in row.iter().enumerate() {
                if m > best.0 {
                    best = (m, labels[k][c]);
                }
            }
        }
        best.1
    }

    proptest! {
        #[test]
        fn two_stage_equals_double_argmax(
            mu in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 5),
        ) {
            let labels: Vec<Vec<u32>> = (0..5).map(|k| (0..4).map(|c| (k * 4 + c) as u32).collect()).collect();
            let scores: Vec<LocalScore> = mu.iter().zip(&labels).map(|(m, l)| select_local(l, m)).collect();
            let two_stage = scores[select_global(&scores).unwrap()].label;
            prop_assert_eq!(two_stage, brute_force(&mu, &labels));
        }

        #[test]
        fn argmax_mu_is_argmin_mu_bar(mu in proptest::collection::vec(0.0f64..1.0, 1..8)) {
            let labels: Vec<u32> = (0..mu.len() as u32).collect();
            let s = select_local(&labels, &mu);
            let mu_bar: Vec<f64> = mu.iter().map(|m| 1.0 - m).collect();
            let mut best = 0;
            for c in 1..mu_bar.len() {
                if mu_bar[c] < mu_bar[best] { best = c; }
            }
            prop_assert_eq!(s.label, best as u32);
        }

        #[test]
        fn membership_strictly_decreasing(e1 in 0.0f64..50.0, d in 1e-6f64..10.0, p in 1usize..800) {
            for kind in [MembershipKind::Gaussian, MembershipKind::StudentT { nu: 2.5 }] {
                let a = kind.degree(e1, p);
                let b = kind.degree(e1 + d, p);
                prop_assert!(a > b || (a == 0.0 && b == 0.0));
                prop_assert!(a <= 1.0 && b >= 0.0);
            }
        }

        #[test]
        fn worse_party_does_not_change_winner(
            mu in proptest::collection::vec(0.0f64..0.9, 2..6),
            extra in 0.0f64..0.1,
        ) {
            let scores: Vec<LocalScore> =
                mu.iter().enumerate().map(|(k, m)| LocalScore { label: k as u32, mu_bar: *m }).collect();
            let winner = select_global(&scores).unwrap();
            let mut more = scores.clone();
            more.push(LocalScore { label: 99, mu_bar: scores[winner].mu_bar + extra + 1e-9 });
            prop_assert_eq!(select_global(&more).unwrap(), winner);
        }
    }
}
