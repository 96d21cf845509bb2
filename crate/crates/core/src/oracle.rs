//! Centralized brute-force valuation, computed directly from discretized
//! columns with no protocol involved. This is the unencrypted baseline the
//! protocol pipeline is checked against.

use std::collections::{BTreeMap, HashMap};

use crate::cmi::{compensated_sum, ShapleyEstimate};
use crate::error::{Error, Result};

fn check_rectangular(columns: &BTreeMap<String, Vec<u32>>, label: &[u32]) -> Result<usize> {
    let n = label.len();
    if n == 0 {
        return Err(Error::Input("label column is empty".into()));
    }
    for (name, col) in columns {
        if col.len() != n {
            return Err(Error::Input(format!(
                "column {name} has {} rows, label has {n}",
                col.len()
            )));
        }
    }
    Ok(n)
}

/// Plug-in conditional mutual information I(X; Y | Z) by direct joint
/// counting over the rows, in nats.
pub fn conditional_mi(feature: &[u32], conditioning: &[&[u32]], label: &[u32]) -> f64 {
    let n = label.len();
    debug_assert!(feature.len() == n && conditioning.iter().all(|c| c.len() == n));

    let mut joint: HashMap<(Vec<u32>, u32, u32), u64> = HashMap::new();
    let mut sig_y: HashMap<(Vec<u32>, u32), u64> = HashMap::new();
    let mut sig_x: HashMap<(Vec<u32>, u32), u64> = HashMap::new();
    let mut sig: HashMap<Vec<u32>, u64> = HashMap::new();
    for row in 0..n {
        let z: Vec<u32> = conditioning.iter().map(|c| c[row]).collect();
        let (x, y) = (feature[row], label[row]);
        *joint.entry((z.clone(), x, y)).or_default() += 1;
        *sig_y.entry((z.clone(), y)).or_default() += 1;
        *sig_x.entry((z.clone(), x)).or_default() += 1;
        *sig.entry(z).or_default() += 1;
    }
    let total = compensated_sum(joint.iter().map(|((z, x, y), &a)| {
        let b = sig_y[&(z.clone(), *y)] as f64;
        let c = sig_x[&(z.clone(), *x)] as f64;
        let d = sig[z] as f64;
        a as f64 * ((a as f64 * d) / (b * c)).ln()
    }));
    total / n as f64
}

/// Plug-in mutual information between the full feature tuple and the label,
/// in nats. The chain rule makes this equal the CMI sum along any single
/// feature ordering.
pub fn joint_mi(columns: &BTreeMap<String, Vec<u32>>, label: &[u32]) -> Result<f64> {
    let n = check_rectangular(columns, label)?;
    let mut joint: HashMap<(Vec<u32>, u32), u64> = HashMap::new();
    let mut xs: HashMap<Vec<u32>, u64> = HashMap::new();
    let mut ys: HashMap<u32, u64> = HashMap::new();
    for row in 0..n {
        let x: Vec<u32> = columns.values().map(|c| c[row]).collect();
        let y = label[row];
        *joint.entry((x.clone(), y)).or_default() += 1;
        *xs.entry(x).or_default() += 1;
        *ys.entry(y).or_default() += 1;
    }
    let total = compensated_sum(joint.iter().map(|((x, y), &nxy)| {
        let px = xs[x] as f64;
        let py = ys[y] as f64;
        nxy as f64 * ((nxy as f64 * n as f64) / (px * py)).ln()
    }));
    Ok(total / n as f64)
}

/// Permutation-sampled Shapley-CMI computed centrally: for each permutation,
/// each feature's CMI is conditioned on the features preceding it, then
/// values are averaged per feature.
pub fn oracle_shapley_cmi(
    columns: &BTreeMap<String, Vec<u32>>,
    label: &[u32],
    permutations: &[Vec<String>],
) -> Result<Vec<ShapleyEstimate>> {
    check_rectangular(columns, label)?;
    if permutations.is_empty() {
        return Err(Error::Input("at least one permutation required".into()));
    }
    for perm in permutations {
        if perm.len() != columns.len() || perm.iter().any(|f| !columns.contains_key(f)) {
            return Err(Error::Input(
                "each permutation must cover exactly the feature labels".into(),
            ));
        }
    }
    let mut per_feature: BTreeMap<String, Vec<f64>> =
        columns.keys().map(|k| (k.clone(), Vec::new())).collect();
    for perm in permutations {
        for (pos, feature) in perm.iter().enumerate() {
            let conditioning: Vec<&[u32]> =
                perm[..pos].iter().map(|f| columns[f].as_slice()).collect();
            let cmi = conditional_mi(&columns[feature], &conditioning, label);
            per_feature.get_mut(feature).unwrap().push(cmi);
        }
    }
    crate::cmi::shapley_from_permutations(&per_feature)
}

/// Exact factorial-weighted Shapley values by brute force over all subsets
/// of the other features. Exponential; intended for small feature counts.
pub fn exact_shapley_cmi(
    columns: &BTreeMap<String, Vec<u32>>,
    label: &[u32],
) -> Result<BTreeMap<String, f64>> {
    check_rectangular(columns, label)?;
    let labels: Vec<&String> = columns.keys().collect();
    let m = labels.len();
    if m > 16 {
        return Err(Error::Input(format!(
            "exact Shapley is exponential; refusing {m} features"
        )));
    }
    let factorial = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut out = BTreeMap::new();
    for (di, d) in labels.iter().enumerate() {
        let others: Vec<usize> = (0..m).filter(|&i| i != di).collect();
        let mut value = 0.0;
        for mask in 0u32..(1 << others.len()) {
            let subset: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask >> bit & 1 == 1)
                .map(|(_, &i)| i)
                .collect();
            let conditioning: Vec<&[u32]> = subset
                .iter()
                .map(|&i| columns[labels[i]].as_slice())
                .collect();
            let weight =
                factorial(subset.len()) * factorial(m - subset.len() - 1) / factorial(m);
            value += weight * conditional_mi(&columns[*d], &conditioning, label);
        }
        out.insert((*d).clone(), value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(pairs: &[(&str, &[u32])]) -> BTreeMap<String, Vec<u32>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect()
    }

    #[test]
    fn feature_identical_to_label_is_ln2() {
        let columns = cols(&[("f1", &[0, 0, 1, 1])]);
        let label = [0, 0, 1, 1];
        let est = oracle_shapley_cmi(&columns, &label, &[vec!["f1".to_string()]]).unwrap();
        assert!((est[0].value - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn constant_feature_is_zero_in_every_permutation() {
        let columns = cols(&[("f1", &[0, 1, 0, 1]), ("f2", &[0, 0, 0, 0])]);
        let label = [0, 1, 1, 0];
        let perms = vec![
            vec!["f1".to_string(), "f2".to_string()],
            vec!["f2".to_string(), "f1".to_string()],
        ];
        let est = oracle_shapley_cmi(&columns, &label, &perms).unwrap();
        let f2 = est.iter().find(|e| e.feature_label == "f2").unwrap();
        assert!(f2.per_permutation_cmi.iter().all(|&v| v == 0.0));
        assert_eq!(f2.value, 0.0);
    }

    #[test]
    fn unconditioned_mi_equals_conditional_mi_with_empty_set() {
        let x = [0, 1, 2, 0, 1, 2, 1, 1];
        let y = [0, 1, 1, 0, 1, 0, 1, 1];
        let mi = conditional_mi(&x, &[], &y);
        let columns = cols(&[("x", &x)]);
        assert!((mi - joint_mi(&columns, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_single_permutation() {
        let columns = cols(&[("f1", &[0, 1, 0, 1, 1, 0]), ("f2", &[0, 0, 1, 1, 0, 1])]);
        let label = [0, 1, 1, 0, 1, 1];
        let perm = vec![vec!["f2".to_string(), "f1".to_string()]];
        let est = oracle_shapley_cmi(&columns, &label, &perm).unwrap();
        let total: f64 = est.iter().map(|e| e.value).sum();
        assert!((total - joint_mi(&columns, &label).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exact_shapley_matches_full_enumeration_average() {
        let columns = cols(&[
            ("f1", &[0, 1, 0, 1, 1, 0, 0, 1]),
            ("f2", &[0, 0, 1, 1, 0, 1, 0, 1]),
            ("f3", &[1, 1, 0, 0, 1, 0, 1, 0]),
        ]);
        let label = [0, 1, 1, 0, 1, 1, 0, 0];
        // All 6 orderings of 3 features.
        let names = ["f1", "f2", "f3"];
        let mut perms = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if j == i {
                    continue;
                }
                let k = 3 - i - j;
                perms.push(vec![
                    names[i].to_string(),
                    names[j].to_string(),
                    names[k].to_string(),
                ]);
            }
        }
        let avg = oracle_shapley_cmi(&columns, &label, &perms).unwrap();
        let exact = exact_shapley_cmi(&columns, &label).unwrap();
        for est in avg {
            assert!(
                (est.value - exact[&est.feature_label]).abs() < 1e-12,
                "{}: {} vs {}",
                est.feature_label,
                est.value,
                exact[&est.feature_label]
            );
        }
    }

    #[test]
    fn ragged_columns_rejected() {
        let columns = cols(&[("f1", &[0, 1])]);
        assert!(joint_mi(&columns, &[0, 1, 0]).is_err());
    }
}
