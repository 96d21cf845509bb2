//! Shared helpers for the integration suites: synthetic discretized tables,
//! an in-process protocol driver, the naive all-bin-combination intersection
//! oracle, a reference HMAC built by hand from SHA-256, and access to the
//! Wine dataset.
//!
//! Compiled once per test binary; not every binary uses every helper.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use shapcmi_core::binning::{build_feature_groups, FeatureGroups};
use shapcmi_core::cmi::{cmi_from_quads, shapley_from_permutations, PsiQuad, ShapleyEstimate};
use shapcmi_core::coordinator::{compute_session, PartySpec, SessionConfig, SessionOutcome};
use shapcmi_core::ident::{encrypt_column, EncryptedId, SecretKey};

pub fn test_key() -> SecretKey {
    SecretKey::from_bytes(vec![0x5a; 16]).unwrap()
}

pub fn row_ids(n: usize) -> Vec<EncryptedId> {
    encrypt_column(&test_key(), (0..n).map(|i| format!("row_{i}")))
}

/// A discretized table: named feature columns plus a label column.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: BTreeMap<String, Vec<u32>>,
    pub label: Vec<u32>,
}

impl Table {
    pub fn n(&self) -> usize {
        self.label.len()
    }

    pub fn feature_labels(&self) -> Vec<String> {
        self.columns.keys().cloned().collect()
    }
}

/// Random table with `features` columns of up to `max_bins` bins each.
pub fn random_table(rng: &mut ChaCha20Rng, features: usize, max_bins: u32, rows: usize) -> Table {
    let mut columns = BTreeMap::new();
    for f in 0..features {
        let bins = rng.random_range(1..=max_bins);
        let col: Vec<u32> = (0..rows).map(|_| rng.random_range(0..bins)).collect();
        columns.insert(format!("f{}", f + 1), col);
    }
    let label_bins = rng.random_range(2..=max_bins.max(2));
    let label: Vec<u32> = (0..rows).map(|_| rng.random_range(0..label_bins)).collect();
    Table { columns, label }
}

/// Builds per-feature submissions for two parties (features split
/// round-robin, label on p1) and runs the coordinator's computation phase
/// in-process with the given permutations.
pub fn run_protocol(table: &Table, permutations: Vec<Vec<String>>) -> SessionOutcome {
    let ids = row_ids(table.n());
    let mut submissions: BTreeMap<String, Vec<FeatureGroups>> = BTreeMap::new();
    submissions.insert(
        "p1".to_string(),
        vec![build_feature_groups("p1.label", "p1", &ids, &table.label, true).unwrap()],
    );
    submissions.insert("p2".to_string(), Vec::new());
    for (i, (name, bins)) in table.columns.iter().enumerate() {
        let owner = if i % 2 == 0 { "p2" } else { "p1" };
        submissions
            .get_mut(owner)
            .unwrap()
            .push(build_feature_groups(name, owner, &ids, bins, false).unwrap());
    }
    let parties: Vec<PartySpec> = submissions
        .keys()
        .map(|id| PartySpec {
            id: id.clone(),
            is_task_party: id == "p1",
        })
        .collect();
    let config = SessionConfig {
        session_id: "test".to_string(),
        expected_parties: parties,
        permutation_count: permutations.len() as u32,
        rng_seed: 0,
        created_at: 0,
        imported_permutations: Some(permutations),
    };
    compute_session(&config, &submissions).unwrap()
}

/// Client-side reconstruction: quads -> per-permutation CMI -> mean.
pub fn estimates_from_outcome(outcome: &SessionOutcome) -> Vec<ShapleyEstimate> {
    let n = outcome.common_id_count;
    let mut per_feature: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for features in outcome.results.values() {
        for fr in features {
            let cmis: Vec<f64> = fr
                .permutations
                .iter()
                .map(|p| cmi_from_quads(&p.quads, n).unwrap())
                .collect();
            per_feature.insert(fr.feature_label.clone(), cmis);
        }
    }
    shapley_from_permutations(&per_feature).unwrap()
}

/// The rejected-as-inefficient alternative to the processed-ID skip:
/// enumerate every combination of bin values across the conditioning
/// features, the current feature and the label, computing the four
/// intersections by literal set filtering; combinations nobody exhibits
/// (a = 0) are discarded.
pub fn naive_quads(
    table: &Table,
    feature: &str,
    conditioning: &[String],
) -> Vec<PsiQuad> {
    let n = table.n();
    let fcol = &table.columns[feature];
    let ccols: Vec<&Vec<u32>> = conditioning.iter().map(|c| &table.columns[c]).collect();
    let distinct = |col: &[u32]| -> Vec<u32> {
        let mut v: Vec<u32> = col.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let f_vals = distinct(fcol);
    let y_vals = distinct(&table.label);
    let c_vals: Vec<Vec<u32>> = ccols.iter().map(|c| distinct(c)).collect();

    let mut combos: Vec<Vec<u32>> = vec![Vec::new()];
    for vals in &c_vals {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(*v);
                    next
                }).collect::<Vec<_>>()
            })
            .collect();
    }

    let mut quads = Vec::new();
    for combo in &combos {
        let in_sig = |row: usize| ccols.iter().zip(combo).all(|(c, v)| c[row] == *v);
        for &fv in &f_vals {
            for &yv in &y_vals {
                let a = (0..n)
                    .filter(|&r| in_sig(r) && fcol[r] == fv && table.label[r] == yv)
                    .count() as u64;
                if a == 0 {
                    continue;
                }
                let b = (0..n).filter(|&r| in_sig(r) && table.label[r] == yv).count() as u64;
                let c = (0..n).filter(|&r| in_sig(r) && fcol[r] == fv).count() as u64;
                let d = (0..n).filter(|&r| in_sig(r)).count() as u64;
                quads.push(PsiQuad { a, b, c, d });
            }
        }
    }
    quads
}

/// HMAC-SHA256 written out by hand from the construction, independent of
/// the implementation path under test.
pub fn reference_hmac_sha256(key: &[u8], message: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut block = if key.len() > 64 {
        Sha256::digest(key).to_vec()
    } else {
        key.to_vec()
    };
    block.resize(64, 0);
    let mut inner = Sha256::new();
    inner.update(block.iter().map(|b| b ^ 0x36).collect::<Vec<u8>>());
    inner.update(message);
    let inner = inner.finalize();
    let mut outer = Sha256::new();
    outer.update(block.iter().map(|b| b ^ 0x5c).collect::<Vec<u8>>());
    outer.update(inner);
    outer.finalize().into()
}

/// All orderings of the given labels.
pub fn all_permutations(labels: &[String]) -> Vec<Vec<String>> {
    use itertools::Itertools;
    labels
        .iter()
        .permutations(labels.len())
        .map(|p| p.into_iter().cloned().collect())
        .collect()
}

/// Locates the Wine dataset as a CSV with an `id` column, 13 feature
/// columns and a `class` label: the WINE_CSV environment variable, a
/// data/wine.csv checkout, a cached copy, or generation from scikit-learn.
pub fn wine_csv() -> Result<PathBuf, String> {
    if let Ok(p) = std::env::var("WINE_CSV") {
        return Ok(PathBuf::from(p));
    }
    let checkout = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wine.csv");
    if checkout.exists() {
        return Ok(checkout);
    }
    let cache = std::env::temp_dir().join("shapcmi_wine.csv");
    if cache.exists() {
        return Ok(cache);
    }
    let script = r#"
import csv, sys
from sklearn.datasets import load_wine
d = load_wine()
with open(sys.argv[1], "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["id"] + list(d.feature_names) + ["class"])
    for i, (row, y) in enumerate(zip(d.data, d.target)):
        w.writerow([f"id_{i:03d}"] + [repr(float(v)) for v in row] + [int(y)])
"#;
    let status = std::process::Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(&cache)
        .status()
        .map_err(|e| format!("cannot run python3 to materialize Wine: {e}"))?;
    if !status.success() {
        return Err(
            "Wine dataset unavailable: set WINE_CSV or place data/wine.csv (UCI Wine, \
             178 rows x 13 features + class, with an added id column)"
                .to_string(),
        );
    }
    Ok(cache)
}
