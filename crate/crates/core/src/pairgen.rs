//! Pairing-based augmentation: stratified sampling of (aa, au, uu) instance
//! pairs with ordinal targets, and closed-form calculators for what those
//! batches look like under contamination of the unlabeled pool.

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{WeakSupervisionSplit, ANOMALY};
use crate::error::{Error, Result};
use crate::ndcore::{Matrix, RunRng};

/// Ordinal targets for anomaly-anomaly, anomaly-unlabeled and unlabeled-unlabeled pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalLabels {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for OrdinalLabels {
    fn default() -> Self {
        OrdinalLabels {
            c1: 8.0,
            c2: 4.0,
            c3: 0.0,
        }
    }
}

impl OrdinalLabels {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        if !(c1 > c2 && c2 > c3 && c3 >= 0.0 && c1.is_finite()) {
            return Err(Error::Argument(format!(
                "ordinal labels need c1 > c2 > c3 >= 0, got ({c1}, {c2}, {c3})"
            )));
        }
        Ok(OrdinalLabels { c1, c2, c3 })
    }

    /// Parses `c1,c2,c3`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Argument(format!("labels must be three numbers, got '{s}'")))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::Argument(format!(
                "labels must be three numbers, got '{s}'"
            ))),
        }
    }

    pub fn pair_targets(&self) -> PairTargets {
        PairTargets {
            aa: self.c1,
            au: self.c2,
            uu: self.c3,
        }
    }
}

/// Per-class regression targets used when filling a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTargets {
    pub aa: f64,
    pub au: f64,
    pub uu: f64,
}

impl PairTargets {
    pub fn of(&self, class: PairClass) -> f64 {
        match class {
            PairClass::AA => self.aa,
            PairClass::AU => self.au,
            PairClass::UU => self.uu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairClass {
    AA,
    AU,
    UU,
}

/// A block-ordered batch: `b/4` AA rows, then `b/4` AU rows, then `b/2` UU rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub left: Matrix,
    pub right: Matrix,
    pub targets: Vec<f64>,
    pub classes: Vec<PairClass>,
    /// Feature-store rows behind `left` and `right`.
    pub left_rows: Vec<usize>,
    pub right_rows: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn count(&self, class: PairClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

fn check_pools(split: &WeakSupervisionSplit) -> Result<()> {
    if split.labeled_anomalies.is_empty() || split.unlabeled.is_empty() {
        return Err(Error::Domain(format!(
            "pair sampling needs non-empty pools, got |A|={} |U|={}",
            split.labeled_anomalies.len(),
            split.unlabeled.len()
        )));
    }
    Ok(())
}

/// Stratified batch of `b` ordered pairs, sampled uniformly with replacement within each pool.
pub fn sample_pair_batch(
    split: &WeakSupervisionSplit,
    b: usize,
    targets: PairTargets,
    rng: &mut RunRng,
) -> Result<PairBatch> {
    if b < 4 || !b.is_multiple_of(4) {
        return Err(Error::Argument(format!(
            "pair batch size must be a positive multiple of 4, got {b}"
        )));
    }
    check_pools(split)?;
    let a = &split.labeled_anomalies;
    let u = &split.unlabeled;
    let quarter = b / 4;

    let mut left_rows = Vec::with_capacity(b);
    let mut right_rows = Vec::with_capacity(b);
    let mut classes = Vec::with_capacity(b);
    let blocks = [
        (PairClass::AA, quarter, a, a),
        (PairClass::AU, quarter, a, u),
        (PairClass::UU, b / 2, u, u),
    ];
    for (class, count, lpool, rpool) in blocks {
        for _ in 0..count {
            left_rows.push(lpool[rng.random_range(0..lpool.len())]);
            right_rows.push(rpool[rng.random_range(0..rpool.len())]);
            classes.push(class);
        }
    }
    Ok(PairBatch {
        left: split.features.select_rows(&left_rows),
        right: split.features.select_rows(&right_rows),
        targets: classes.iter().map(|&c| targets.of(c)).collect(),
        classes,
        left_rows,
        right_rows,
    })
}

/// Single-instance batch for the one-stream ablation: `b/2` rows from `A` then `b/2` from `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleBatch {
    pub features: Matrix,
    pub targets: Vec<f64>,
    pub from_anomalies: Vec<bool>,
    pub rows: Vec<usize>,
}

impl SingleBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn sample_single_batch(
    split: &WeakSupervisionSplit,
    b: usize,
    anomaly_target: f64,
    unlabeled_target: f64,
    rng: &mut RunRng,
) -> Result<SingleBatch> {
    if b < 2 || !b.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "single-instance batch size must be a positive even number, got {b}"
        )));
    }
    check_pools(split)?;
    let mut rows = Vec::with_capacity(b);
    let mut from_anomalies = Vec::with_capacity(b);
    for (pool, is_a) in [(&split.labeled_anomalies, true), (&split.unlabeled, false)] {
        for _ in 0..b / 2 {
            rows.push(pool[rng.random_range(0..pool.len())]);
            from_anomalies.push(is_a);
        }
    }
    Ok(SingleBatch {
        features: split.features.select_rows(&rows),
        targets: from_anomalies
            .iter()
            .map(|&a| if a { anomaly_target } else { unlabeled_target })
            .collect(),
        from_anomalies,
        rows,
    })
}

/// Size of the space of independently drawn (aa, au, uu) relation triples: `K³·N³`.
pub fn training_pair_space_size(k: u64, n: u64) -> BigUint {
    BigUint::from(k).pow(3u32) * BigUint::from(n).pow(3u32)
}

/// Expected shares of true anomaly-anomaly, anomaly-normal and normal-normal relations in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelationProportions {
    pub anomaly_anomaly: f64,
    pub anomaly_normal: f64,
    pub normal_normal: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!(
            "contamination must lie in [0, 1), got {eps}"
        )));
    }
    Ok(())
}

pub fn expected_true_relation_proportions(eps: f64) -> Result<RelationProportions> {
    check_eps(eps)?;
    Ok(RelationProportions {
        anomaly_anomaly: 0.25 + 0.25 * eps + 0.5 * eps * eps,
        anomaly_normal: 0.25 + 0.75 * eps - eps * eps,
        normal_normal: 0.5 - eps + 0.5 * eps * eps,
    })
}

/// Share of relations that may carry a wrong ordinal label: `2ε − ε²`.
pub fn mislabel_fraction(eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(2.0 * eps - eps * eps)
}

/// Expected ensemble scores of a true anomaly and a true normal under a perfect regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedScores {
    pub anomaly_mean: f64,
    pub normal_mean: f64,
}

pub fn expected_scores(labels: &OrdinalLabels, eps: f64) -> Result<ExpectedScores> {
    check_eps(eps)?;
    Ok(ExpectedScores {
        anomaly_mean: (labels.c1 + labels.c2) / 2.0,
        normal_mean: (labels.c2 + labels.c3 - 2.0 * eps * labels.c1) / 2.0,
    })
}

/// Observed true-relation shares of a batch, judged by the hidden truth of `U` members.
///
/// Returns (relation counts `[aa, an, nn]`, number of UU rows holding at least one true anomaly).
pub fn tally_true_relations(split: &WeakSupervisionSplit, batch: &PairBatch) -> ([usize; 3], usize) {
    use std::collections::HashMap;
    let truth: HashMap<usize, bool> = split
        .unlabeled
        .iter()
        .zip(&split.unlabeled_truth)
        .map(|(&r, &t)| (r, t == ANOMALY))
        .collect();
    let is_anomaly = |row: usize| truth.get(&row).copied().unwrap_or(true);
    let mut counts = [0usize; 3];
    let mut contaminated_uu = 0;
    for i in 0..batch.len() {
        let n_anom =
            usize::from(is_anomaly(batch.left_rows[i])) + usize::from(is_anomaly(batch.right_rows[i]));
        counts[2 - n_anom] += 1;
        if batch.classes[i] == PairClass::UU && n_anom > 0 {
            contaminated_uu += 1;
        }
    }
    (counts, contaminated_uu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::seeded_rng;
    use proptest::prelude::*;

    fn pools(k: usize, n: usize) -> WeakSupervisionSplit {
        let rows = k + n;
        let features = Matrix::from_vec(rows, 1, (0..rows).map(|i| i as f64).collect()).unwrap();
        WeakSupervisionSplit::from_parts(features, (0..k).collect(), (k..rows).collect(), vec![0; n])
            .unwrap()
    }

    #[test]
    fn default_batch_composition() {
        let split = pools(10, 100);
        let batch = sample_pair_batch(&split, 512, OrdinalLabels::default().pair_targets(), &mut seeded_rng(1))
            .unwrap();
        assert_eq!(batch.count(PairClass::AA), 128);
        assert_eq!(batch.count(PairClass::AU), 128);
        assert_eq!(batch.count(PairClass::UU), 256);
        assert!(batch.classes[..128].iter().all(|&c| c == PairClass::AA));
        assert!(batch.classes[128..256].iter().all(|&c| c == PairClass::AU));
        for i in 128..256 {
            assert!(batch.left_rows[i] < 10, "AU left must come from A");
            assert!(batch.right_rows[i] >= 10, "AU right must come from U");
        }
    }

    #[test]
    fn singleton_pools() {
        let split = pools(1, 1);
        let b = sample_pair_batch(&split, 4, OrdinalLabels::default().pair_targets(), &mut seeded_rng(0)).unwrap();
        assert_eq!(b.left_rows, vec![0, 0, 1, 1]);
        assert_eq!(b.right_rows, vec![0, 1, 1, 1]);
        assert_eq!(b.targets, vec![8.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn sampler_errors() {
        let t = OrdinalLabels::default().pair_targets();
        assert!(matches!(
            sample_pair_batch(&pools(2, 2), 6, t, &mut seeded_rng(0)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            sample_pair_batch(&pools(0, 2), 8, t, &mut seeded_rng(0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sample_single_batch(&pools(2, 0), 8, 4.0, 0.0, &mut seeded_rng(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn aa_left_side_is_uniform() {
        let split = pools(3, 5);
        let mut rng = seeded_rng(17);
        let mut hits = [0usize; 3];
        let mut total = 0;
        for _ in 0..10_000 {
            let b = sample_pair_batch(&split, 4, OrdinalLabels::default().pair_targets(), &mut rng).unwrap();
            hits[b.left_rows[0]] += 1;
            total += 1;
        }
        for h in hits {
            let f = h as f64 / total as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn single_batch_halves() {
        let split = pools(3, 7);
        let b = sample_single_batch(&split, 8, 4.0, 0.0, &mut seeded_rng(2)).unwrap();
        assert_eq!(b.targets, vec![4.0, 4.0, 4.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(b.rows[..4].iter().all(|&r| r < 3));
        assert!(b.rows[4..].iter().all(|&r| r >= 3));
    }

    #[test]
    fn pair_space_size() {
        assert_eq!(training_pair_space_size(1, 1), BigUint::from(1u32));
        assert_eq!(training_pair_space_size(2, 3), BigUint::from(216u32));
        assert_eq!(
            training_pair_space_size(60, 5000).to_string(),
            "27000000000000000"
        );
        // beyond u64
        assert_eq!(
            training_pair_space_size(100_000, 1_000_000).to_string(),
            format!("1{}", "0".repeat(33))
        );
    }

    #[test]
    fn relation_proportions() {
        let p = expected_true_relation_proportions(0.0).unwrap();
        assert_eq!((p.anomaly_anomaly, p.anomaly_normal, p.normal_normal), (0.25, 0.25, 0.5));
        let p = expected_true_relation_proportions(0.05).unwrap();
        assert!((p.anomaly_anomaly - 0.26375).abs() < 1e-12);
        assert!((p.anomaly_normal - 0.285).abs() < 1e-12);
        assert!((p.normal_normal - 0.45125).abs() < 1e-12);
        assert!(expected_true_relation_proportions(1.0).is_err());
    }

    #[test]
    fn mislabel_values() {
        assert_eq!(mislabel_fraction(0.0).unwrap(), 0.0);
        assert!((mislabel_fraction(0.05).unwrap() - 0.0975).abs() < 1e-12);
        assert!((mislabel_fraction(0.02).unwrap() - 0.0396).abs() < 1e-12);
    }

    #[test]
    fn expected_score_values() {
        let s = expected_scores(&OrdinalLabels::default(), 0.02).unwrap();
        assert!((s.anomaly_mean - 6.0).abs() < 1e-12);
        assert!((s.normal_mean - 1.84).abs() < 1e-12);
        let l = OrdinalLabels::new(9.0, 5.0, 1.0).unwrap();
        let s = expected_scores(&l, 0.0).unwrap();
        assert_eq!((s.anomaly_mean, s.normal_mean), (7.0, 3.0));
    }

    #[test]
    fn labels_validation() {
        assert!(OrdinalLabels::new(4.0, 4.0, 0.0).is_err());
        assert!(OrdinalLabels::new(8.0, 4.0, -1.0).is_err());
        assert_eq!(OrdinalLabels::parse("8,4,0").unwrap(), OrdinalLabels::default());
        assert!(OrdinalLabels::parse("8,4").is_err());
    }

    proptest! {
        #[test]
        fn proportions_sum_to_one(eps in 0.0f64..0.999) {
            let p = expected_true_relation_proportions(eps).unwrap();
            prop_assert!((p.anomaly_anomaly + p.anomaly_normal + p.normal_normal - 1.0).abs() < 1e-12);
        }

        #[test]
        fn anomaly_expected_above_normal(c3 in 0.0f64..5.0, d2 in 0.1f64..5.0, d1 in 0.1f64..5.0, u in 0.0f64..1.0) {
            let labels = OrdinalLabels::new(c3 + d2 + d1, c3 + d2, c3).unwrap();
            let bound = (labels.c1 - labels.c3) / (2.0 * labels.c1);
            let eps = u * bound.min(0.999);
            let s = expected_scores(&labels, eps).unwrap();
            prop_assert!(s.anomaly_mean > s.normal_mean);
        }

        #[test]
        fn default_label_separation(eps in 0.0f64..0.999) {
            let s = expected_scores(&OrdinalLabels::default(), eps).unwrap();
            let gap = s.anomaly_mean - s.normal_mean;
            prop_assert!((gap - (4.0 + 8.0 * eps)).abs() < 1e-12);
            prop_assert!(gap > 0.0);
        }

        #[test]
        fn composition_exact_for_any_multiple_of_four(q in 1usize..64, seed in any::<u64>()) {
            let b = sample_pair_batch(&pools(3, 9), 4 * q, OrdinalLabels::default().pair_targets(), &mut seeded_rng(seed)).unwrap();
            prop_assert_eq!(b.count(PairClass::AA), q);
            prop_assert_eq!(b.count(PairClass::AU), q);
            prop_assert_eq!(b.count(PairClass::UU), 2 * q);
            for i in 0..b.len() {
                prop_assert_eq!(b.targets[i], OrdinalLabels::default().pair_targets().of(b.classes[i]));
            }
        }
    }
}
