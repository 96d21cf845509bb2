//! PSI coordinator: session state machine, common-ID identification, seeded
//! feature permutations, and the permutation-driven intersection counting
//! that parties reconstruct CMI values from.
//!
//! The coordinator only ever sees encrypted IDs, pseudonymous feature labels
//! and bin indices; responses carry counts alone.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::binning::FeatureGroups;
use crate::cmi::{PermutationResult, PsiQuad};
use crate::error::{Error, ErrorCode, Result};
use crate::ident::EncryptedId;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PartySpec {
    pub id: String,
    pub is_task_party: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub expected_parties: Vec<PartySpec>,
    pub permutation_count: u32,
    pub rng_seed: u64,
    /// Unix seconds; informational.
    pub created_at: u64,
    /// Verbatim permutations to use instead of seed-generated ones.
    pub imported_permutations: Option<Vec<Vec<String>>>,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expected_parties.len() < 2 {
            return Err(Error::Config("at least 2 parties required".into()));
        }
        let task_count = self
            .expected_parties
            .iter()
            .filter(|p| p.is_task_party)
            .count();
        if task_count != 1 {
            return Err(Error::Config(format!(
                "exactly one task party required, got {task_count}"
            )));
        }
        let distinct: HashSet<&str> = self
            .expected_parties
            .iter()
            .map(|p| p.id.as_str())
            .collect();
        if distinct.len() != self.expected_parties.len() {
            return Err(Error::Config("duplicate party identifiers".into()));
        }
        if self.permutation_count < 1 && self.imported_permutations.is_none() {
            return Err(Error::Config("permutation_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn task_party(&self) -> &str {
        &self
            .expected_parties
            .iter()
            .find(|p| p.is_task_party)
            .expect("validated config has a task party")
            .id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Collecting,
    Computing,
    Done,
    Failed,
}

/// All permutation results for one feature.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureResults {
    pub feature_label: String,
    pub permutations: Vec<PermutationResult>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SessionState {
    pub config: SessionConfig,
    pub submissions: BTreeMap<String, Vec<FeatureGroups>>,
    pub phase: Phase,
    pub permutations: Vec<Vec<String>>,
    pub results: BTreeMap<String, Vec<FeatureResults>>,
    pub common_id_count: u64,
    pub failure: Option<(ErrorCode, String)>,
}

impl SessionState {
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        Ok(SessionState {
            config,
            submissions: BTreeMap::new(),
            phase: Phase::Collecting,
            permutations: Vec::new(),
            results: BTreeMap::new(),
            common_id_count: 0,
            failure: None,
        })
    }

    pub fn parties_remaining(&self) -> u32 {
        (self.config.expected_parties.len() - self.submissions.len()) as u32
    }

    fn is_expected(&self, party: &str) -> bool {
        self.config.expected_parties.iter().any(|p| p.id == party)
    }

    /// Stores one party's feature groups. When the last expected party
    /// submits, the phase flips to `Computing`.
    pub fn accept_submission(&mut self, party: &str, groups: Vec<FeatureGroups>) -> Result<u32> {
        if !self.is_expected(party) {
            return Err(Error::protocol(
                ErrorCode::UnauthorizedParty,
                format!("party {party} is not expected in this session"),
            ));
        }
        if self.submissions.contains_key(party) || self.phase != Phase::Collecting {
            return Err(Error::protocol(
                ErrorCode::DuplicateSubmission,
                format!("party {party} already submitted"),
            ));
        }
        self.validate_groups(party, &groups)?;
        self.submissions.insert(party.to_string(), groups);
        let remaining = self.parties_remaining();
        if remaining == 0 {
            self.phase = Phase::Computing;
        }
        Ok(remaining)
    }

    fn validate_groups(&self, party: &str, groups: &[FeatureGroups]) -> Result<()> {
        let malformed = |msg: String| Error::protocol(ErrorCode::MalformedGroups, msg);
        if groups.is_empty() {
            return Err(malformed(format!("party {party} submitted no features")));
        }
        let is_task = party == self.config.task_party();
        let label_count = groups.iter().filter(|g| g.is_label).count();
        if label_count > 0 && !is_task {
            return Err(Error::protocol(
                ErrorCode::LabelFromDataParty,
                format!("data party {party} may not submit a label"),
            ));
        }
        if is_task && label_count != 1 {
            return Err(malformed(format!(
                "task party must submit exactly one label, got {label_count}"
            )));
        }
        let mut labels = HashSet::new();
        let mut id_set: Option<BTreeSet<EncryptedId>> = None;
        for g in groups {
            if g.owner != party {
                return Err(malformed(format!(
                    "feature {} declares owner {} but was submitted by {party}",
                    g.feature_label, g.owner
                )));
            }
            if !labels.insert(g.feature_label.as_str()) {
                return Err(malformed(format!(
                    "duplicate feature label {}",
                    g.feature_label
                )));
            }
            for others in self.submissions.values() {
                if others.iter().any(|o| o.feature_label == g.feature_label) {
                    return Err(malformed(format!(
                        "feature label {} already submitted by another party",
                        g.feature_label
                    )));
                }
            }
            g.validate()
                .map_err(|e| malformed(format!("feature {}: {e}", g.feature_label)))?;
            let members = g.all_members();
            match &id_set {
                None => id_set = Some(members),
                Some(expected) => {
                    if members != *expected {
                        return Err(malformed(format!(
                            "feature {} covers a different ID set than this party's other features",
                            g.feature_label
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs permutation generation and the PSI computation, moving the
    /// session to `Done` or `Failed`. Call after the phase flips to
    /// `Computing`; the state may be cloned out, computed on, and written
    /// back through [`SessionState::install_outcome`].
    pub fn run_computation(&mut self) -> Result<()> {
        debug_assert_eq!(self.phase, Phase::Computing);
        match compute_session(&self.config, &self.submissions) {
            Ok(outcome) => {
                self.install_outcome(outcome);
                Ok(())
            }
            Err(e) => {
                let code = match &e {
                    Error::Protocol { code, .. } => *code,
                    _ => ErrorCode::Internal,
                };
                self.phase = Phase::Failed;
                self.failure = Some((code, e.to_string()));
                Err(e)
            }
        }
    }

    pub fn install_outcome(&mut self, outcome: SessionOutcome) {
        self.permutations = outcome.permutations;
        self.results = outcome.results;
        self.common_id_count = outcome.common_id_count;
        self.phase = Phase::Done;
    }

    /// Returns the results owned by `party`. Repeated fetches see the same
    /// state, so payloads are identical.
    pub fn fetch_results(&self, party: &str) -> Result<(&[FeatureResults], u64)> {
        if !self.is_expected(party) {
            return Err(Error::protocol(
                ErrorCode::UnauthorizedParty,
                format!("party {party} is not expected in this session"),
            ));
        }
        match self.phase {
            Phase::Done => {}
            Phase::Failed => {
                let (code, msg) = self
                    .failure
                    .clone()
                    .unwrap_or((ErrorCode::Internal, "session failed".into()));
                return Err(Error::protocol(code, msg));
            }
            _ => {
                return Err(Error::protocol(
                    ErrorCode::NotReady,
                    "results not ready yet, retry later",
                ));
            }
        }
        let results = self.results.get(party).map(|v| v.as_slice()).unwrap_or(&[]);
        Ok((results, self.common_id_count))
    }
}

/// Everything the computation phase produces.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub permutations: Vec<Vec<String>>,
    pub results: BTreeMap<String, Vec<FeatureResults>>,
    pub common_id_count: u64,
}

/// Intersection over every submitted feature's member union. Each party's
/// features partition the same ID set, so this equals the intersection over
/// parties.
pub fn compute_common_ids(
    submissions: &BTreeMap<String, Vec<FeatureGroups>>,
) -> Result<BTreeSet<EncryptedId>> {
    let mut iter = submissions.values().flatten();
    let first = iter
        .next()
        .ok_or_else(|| Error::Input("no submissions".into()))?;
    let mut common = first.all_members();
    for fg in iter {
        let members = fg.all_members();
        common.retain(|id| members.contains(id));
        if common.is_empty() {
            break;
        }
    }
    if common.is_empty() {
        return Err(Error::protocol(
            ErrorCode::NoOverlap,
            "parties share no common IDs; nothing to value",
        ));
    }
    Ok(common)
}

/// `count` Fisher-Yates shuffles of the sorted feature labels, driven by
/// ChaCha20 seeded from `seed`. The label is never among the inputs.
pub fn generate_permutations(feature_labels: &[String], count: u32, seed: u64) -> Result<Vec<Vec<String>>> {
    if count < 1 {
        return Err(Error::Config("permutation count must be at least 1".into()));
    }
    let mut base: Vec<String> = feature_labels.to_vec();
    base.sort();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut perm = base.clone();
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        out.push(perm);
    }
    Ok(out)
}

/// Bin lookup per feature, restricted to the common IDs, with rows indexed
/// by the sorted common-ID order.
struct CommonTable {
    /// Non-label features in deterministic submission order.
    features: Vec<(String, String, Vec<u32>)>, // (label, owner, bins per row)
    label_bins: Vec<u32>,
    n: usize,
}

fn build_common_table(
    submissions: &BTreeMap<String, Vec<FeatureGroups>>,
    common: &BTreeSet<EncryptedId>,
) -> Result<CommonTable> {
    let row_of: HashMap<EncryptedId, usize> = common
        .iter()
        .enumerate()
        .map(|(row, id)| (*id, row))
        .collect();
    let n = common.len();
    let resolve = |fg: &FeatureGroups| -> Result<Vec<u32>> {
        let mut bins = vec![u32::MAX; n];
        for (bin, members) in &fg.groups {
            for id in members {
                if let Some(&row) = row_of.get(id) {
                    bins[row] = *bin;
                }
            }
        }
        if bins.contains(&u32::MAX) {
            return Err(Error::Corruption(format!(
                "a common ID has no bin in feature {}",
                fg.feature_label
            )));
        }
        Ok(bins)
    };
    let mut features = Vec::new();
    let mut label_bins = None;
    for groups in submissions.values() {
        for fg in groups {
            let bins = resolve(fg)?;
            if fg.is_label {
                label_bins = Some(bins);
            } else {
                features.push((fg.feature_label.clone(), fg.owner.clone(), bins));
            }
        }
    }
    let label_bins =
        label_bins.ok_or_else(|| Error::Corruption("no label feature submitted".into()))?;
    Ok(CommonTable {
        features,
        label_bins,
        n,
    })
}

/// One permutation's walk: for each feature, group common IDs by the
/// signature of the already-walked features, count the four intersections
/// per observed (signature, feature-bin, label-bin) combination, and emit
/// one quad per combination in first-encounter order over the sorted common
/// IDs. The processed-ID skip of the sample-by-sample formulation reduces to
/// exactly this per-combination emission.
fn walk_permutation(
    table: &CommonTable,
    order: &[usize],
    permutation_index: u32,
) -> Result<Vec<PermutationResult>> {
    let n = table.n;
    let y = &table.label_bins;
    // Equivalence class of each row under the conditioning features walked
    // so far; every row starts in the single empty-signature class.
    let mut class: Vec<u32> = vec![0; n];
    let mut results = Vec::with_capacity(order.len());
    for &fi in order {
        let (ref label, _, ref fbins) = table.features[fi];
        let mut count_a: HashMap<(u32, u32, u32), u64> = HashMap::new();
        let mut count_b: HashMap<(u32, u32), u64> = HashMap::new();
        let mut count_c: HashMap<(u32, u32), u64> = HashMap::new();
        let mut count_d: HashMap<u32, u64> = HashMap::new();
        for row in 0..n {
            let key = (class[row], fbins[row], y[row]);
            *count_a.entry(key).or_default() += 1;
            *count_b.entry((class[row], y[row])).or_default() += 1;
            *count_c.entry((class[row], fbins[row])).or_default() += 1;
            *count_d.entry(class[row]).or_default() += 1;
        }
        let mut processed: HashSet<(u32, u32, u32)> = HashSet::new();
        let mut quads = Vec::new();
        let mut a_total = 0u64;
        for row in 0..n {
            let key = (class[row], fbins[row], y[row]);
            if !processed.insert(key) {
                continue;
            }
            let quad = PsiQuad {
                a: count_a[&key],
                b: count_b[&(key.0, key.2)],
                c: count_c[&(key.0, key.1)],
                d: count_d[&key.0],
            };
            quad.validate()?;
            a_total += quad.a;
            quads.push(quad);
        }
        if a_total != n as u64 {
            return Err(Error::Corruption(format!(
                "quads for feature {label} cover {a_total} of {n} common IDs"
            )));
        }
        results.push(PermutationResult {
            feature_label: label.clone(),
            permutation_index,
            quads,
        });
        // Refine classes with this feature's bins for the next step.
        let mut next_id: HashMap<(u32, u32), u32> = HashMap::new();
        for row in 0..n {
            let refined = next_id.len() as u32;
            class[row] = *next_id
                .entry((class[row], fbins[row]))
                .or_insert(refined);
        }
    }
    Ok(results)
}

/// The full computation phase: common IDs, permutations, and per-feature
/// intersection quads routed to each feature's owner.
pub fn compute_session(
    config: &SessionConfig,
    submissions: &BTreeMap<String, Vec<FeatureGroups>>,
) -> Result<SessionOutcome> {
    let common = compute_common_ids(submissions)?;
    let table = build_common_table(submissions, &common)?;
    let feature_labels: Vec<String> = table.features.iter().map(|(l, _, _)| l.clone()).collect();
    let permutations = match &config.imported_permutations {
        Some(perms) => {
            let expected: BTreeSet<&String> = feature_labels.iter().collect();
            for p in perms {
                if p.len() != expected.len() || !p.iter().all(|l| expected.contains(l)) {
                    return Err(Error::Config(
                        "imported permutation does not cover the submitted features".into(),
                    ));
                }
            }
            perms.clone()
        }
        None => generate_permutations(&feature_labels, config.permutation_count, config.rng_seed)?,
    };
    let index_of: HashMap<&String, usize> = feature_labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let orders: Vec<Vec<usize>> = permutations
        .iter()
        .map(|p| p.iter().map(|l| index_of[l]).collect())
        .collect();

    // Permutations are independent; results are keyed by permutation_index
    // so the reduction below is order-stable regardless of worker count.
    let per_permutation: Vec<Vec<PermutationResult>> = orders
        .par_iter()
        .enumerate()
        .map(|(idx, order)| walk_permutation(&table, order, idx as u32))
        .collect::<Result<_>>()?;

    let mut per_feature: BTreeMap<String, Vec<PermutationResult>> = BTreeMap::new();
    for results in per_permutation {
        for r in results {
            per_feature.entry(r.feature_label.clone()).or_default().push(r);
        }
    }
    let mut results: BTreeMap<String, Vec<FeatureResults>> = BTreeMap::new();
    for (label, owner, _) in &table.features {
        let mut perms = per_feature.remove(label).expect("every feature was walked");
        perms.sort_by_key(|r| r.permutation_index);
        results
            .entry(owner.clone())
            .or_default()
            .push(FeatureResults {
                feature_label: label.clone(),
                permutations: perms,
            });
    }
    Ok(SessionOutcome {
        permutations,
        results,
        common_id_count: common.len() as u64,
    })
}
