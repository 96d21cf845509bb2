//! Local discretization of feature values and grouping of encrypted IDs.
//!
//! Bin edges are computed from each party's local min/max; no cross-party
//! statistics are exchanged. The grouped form is the only representation of
//! data that ever leaves a party.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ident::EncryptedId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinStrategy {
    EqualWidth,
    CategoricalPassthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BinningSpec {
    pub bin_count: usize,
    pub strategy: BinStrategy,
}

impl BinningSpec {
    pub fn equal_width(bin_count: usize) -> Result<Self> {
        if bin_count < 1 {
            return Err(Error::Input("bin_count must be at least 1".into()));
        }
        Ok(BinningSpec {
            bin_count,
            strategy: BinStrategy::EqualWidth,
        })
    }

    pub fn categorical() -> Self {
        BinningSpec {
            bin_count: 1,
            strategy: BinStrategy::CategoricalPassthrough,
        }
    }
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec {
            bin_count: 5,
            strategy: BinStrategy::EqualWidth,
        }
    }
}

/// One feature's partition of encrypted IDs into value bins.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureGroups {
    pub feature_label: String,
    pub owner: String,
    pub is_label: bool,
    /// Sorted by bin index; empty bins omitted.
    pub groups: Vec<(u32, BTreeSet<EncryptedId>)>,
}

impl FeatureGroups {
    pub fn member_count(&self) -> usize {
        self.groups.iter().map(|(_, m)| m.len()).sum()
    }

    /// Union of all group members.
    pub fn all_members(&self) -> BTreeSet<EncryptedId> {
        self.groups
            .iter()
            .flat_map(|(_, m)| m.iter().copied())
            .collect()
    }

    /// Checks the partition invariant: groups pairwise disjoint (the union
    /// size equals the member-count sum) and bin indices strictly increasing.
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Input(format!(
                "feature {} has no groups",
                self.feature_label
            )));
        }
        let mut prev: Option<u32> = None;
        for (bin, members) in &self.groups {
            if members.is_empty() {
                return Err(Error::Input(format!(
                    "feature {} bin {bin} is empty",
                    self.feature_label
                )));
            }
            if let Some(p) = prev {
                if *bin <= p {
                    return Err(Error::Input(format!(
                        "feature {} bins not strictly increasing",
                        self.feature_label
                    )));
                }
            }
            prev = Some(*bin);
        }
        if self.all_members().len() != self.member_count() {
            return Err(Error::Input(format!(
                "feature {} bins overlap",
                self.feature_label
            )));
        }
        Ok(())
    }
}

/// Maps each value to its bin index.
///
/// Equal-width: edges at min + k*(max-min)/bin_count; value v maps to
/// floor((v-min)*bin_count/(max-min)) clamped so the maximum lands in the
/// last bin. Categorical passthrough: bin index is the rank of the distinct
/// value in ascending order.
pub fn make_bins(values: &[f64], spec: &BinningSpec) -> Result<Vec<u32>> {
    if values.is_empty() {
        return Err(Error::Input("cannot bin an empty value list".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite value {v} in column")));
    }
    match spec.strategy {
        BinStrategy::EqualWidth => {
            if spec.bin_count < 1 {
                return Err(Error::Input("bin_count must be at least 1".into()));
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            let k = spec.bin_count as f64;
            Ok(values
                .iter()
                .map(|&v| {
                    if range == 0.0 {
                        0
                    } else {
                        let raw = ((v - min) * k / range).floor() as i64;
                        raw.clamp(0, spec.bin_count as i64 - 1) as u32
                    }
                })
                .collect())
        }
        BinStrategy::CategoricalPassthrough => {
            let mut distinct: Vec<f64> = values.to_vec();
            distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            distinct.dedup();
            Ok(values
                .iter()
                .map(|v| {
                    distinct
                        .binary_search_by(|d| d.partial_cmp(v).expect("finite values"))
                        .expect("value came from the same column") as u32
                })
                .collect())
        }
    }
}

/// Groups encrypted IDs by bin assignment. Group k contains exactly the IDs
/// whose assignment is k; empty bins are omitted.
pub fn build_feature_groups(
    feature_label: impl Into<String>,
    owner: impl Into<String>,
    encrypted_ids: &[EncryptedId],
    bin_assignments: &[u32],
    is_label: bool,
) -> Result<FeatureGroups> {
    if encrypted_ids.len() != bin_assignments.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} IDs vs {} bin assignments",
            encrypted_ids.len(),
            bin_assignments.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut by_bin: BTreeMap<u32, BTreeSet<EncryptedId>> = BTreeMap::new();
    for (id, bin) in encrypted_ids.iter().zip(bin_assignments) {
        if !seen.insert(*id) {
            return Err(Error::Input(format!("duplicate encrypted ID {id}")));
        }
        by_bin.entry(*bin).or_default().insert(*id);
    }
    Ok(FeatureGroups {
        feature_label: feature_label.into(),
        owner: owner.into(),
        is_label,
        groups: by_bin.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{encrypt_column, SecretKey};
    use proptest::prelude::*;

    #[test]
    fn values_1_to_20_five_bins() {
        let values: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let bins = make_bins(&values, &BinningSpec::equal_width(5).unwrap()).unwrap();
        // Intervals [1-4], [5-8], [9-12], [13-16], [17-20].
        for (v, b) in values.iter().zip(&bins) {
            let expected = match *v as u32 {
                1..=4 => 0,
                5..=8 => 1,
                9..=12 => 2,
                13..=16 => 3,
                _ => 4,
            };
            assert_eq!(*b, expected, "value {v}");
        }
    }

    #[test]
    fn constant_column_single_bin() {
        let bins = make_bins(&[7.0; 6], &BinningSpec::default()).unwrap();
        assert!(bins.iter().all(|&b| b == 0));
    }

    #[test]
    fn derived_floor_formula_with_clamp() {
        let bins = make_bins(
            &[0.0, 2.5, 5.0, 7.5, 10.0],
            &BinningSpec::equal_width(4).unwrap(),
        )
        .unwrap();
        assert_eq!(bins, vec![0, 1, 2, 3, 3]);
    }

    #[test]
    fn categorical_ranks_distinct_values() {
        let bins = make_bins(
            &[3.0, 1.0, 3.0, 2.0],
            &BinningSpec::categorical(),
        )
        .unwrap();
        assert_eq!(bins, vec![2, 0, 2, 1]);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(make_bins(&[], &BinningSpec::default()).is_err());
        assert!(make_bins(&[1.0, f64::NAN], &BinningSpec::default()).is_err());
        assert!(make_bins(&[f64::INFINITY], &BinningSpec::default()).is_err());
    }

    fn ids(n: usize) -> Vec<crate::ident::EncryptedId> {
        let key = SecretKey::from_bytes(vec![7u8; 16]).unwrap();
        encrypt_column(&key, (0..n).map(|i| format!("id_{i}")))
    }

    #[test]
    fn grouping_basics() {
        let ids = ids(3);
        let fg = build_feature_groups("p1.f1", "p1", &ids, &[0, 0, 1], false).unwrap();
        assert_eq!(fg.groups.len(), 2);
        assert_eq!(fg.groups[0].1.len(), 2);
        assert_eq!(fg.groups[1].1, BTreeSet::from([ids[2]]));
        fg.validate().unwrap();
    }

    #[test]
    fn grouping_rejects_mismatch_and_duplicates() {
        let ids = ids(2);
        assert!(build_feature_groups("f", "p", &ids, &[0], false).is_err());
        let dup = vec![ids[0], ids[0]];
        assert!(build_feature_groups("f", "p", &dup, &[0, 1], false).is_err());
    }

    proptest! {
        #[test]
        fn partition_property(values in prop::collection::vec(-1e6..1e6f64, 1..200), bin_count in 1usize..8) {
            let spec = BinningSpec::equal_width(bin_count).unwrap();
            let bins = make_bins(&values, &spec).unwrap();
            let ids = ids(values.len());
            let fg = build_feature_groups("f", "p", &ids, &bins, false).unwrap();
            prop_assert_eq!(fg.member_count(), values.len());
            prop_assert_eq!(fg.all_members().len(), values.len());
            fg.validate().unwrap();
        }

        #[test]
        fn equal_width_monotone(values in prop::collection::vec(-1e6..1e6f64, 2..100), bin_count in 1usize..8) {
            let spec = BinningSpec::equal_width(bin_count).unwrap();
            let bins = make_bins(&values, &spec).unwrap();
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] <= values[j] {
                        prop_assert!(bins[i] <= bins[j]);
                    }
                }
            }
        }

        #[test]
        fn rebinning_is_deterministic(values in prop::collection::vec(-1e3..1e3f64, 1..50)) {
            let spec = BinningSpec::default();
            prop_assert_eq!(make_bins(&values, &spec).unwrap(), make_bins(&values, &spec).unwrap());
        }
    }
}
