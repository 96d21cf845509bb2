//! A party's local agent: CSV ingestion, local pseudonymization and binning,
//! submission to the coordinator, and local Shapley-CMI reconstruction from
//! the returned intersection counts.
//!
//! Nothing leaves this module but encrypted IDs, bin indices and pseudonymous
//! feature labels.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use crate::binning::{build_feature_groups, make_bins, BinningSpec, FeatureGroups};
use crate::cmi::{cmi_from_quads, shapley_from_permutations, ShapleyEstimate};
use crate::error::{Error, ErrorCode, Result};
use crate::ident::{encrypt_column, SecretKey};
use crate::wire::{
    CreateSessionRequest, CreateSessionResponse, ErrorBody, FeatureGroupsWire, PartySpecWire,
    PermutationsResponse, ResultsResponse, StatusResponse, SubmissionRequest, SubmissionResponse,
};

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub spec: BinningSpec,
    pub is_label: bool,
}

/// One party's table: an ID column plus feature columns, and the label if
/// this is the task party.
#[derive(Debug, Clone)]
pub struct PartyDataset {
    pub party_id: String,
    pub ids: Vec<String>,
    pub columns: Vec<Column>,
}

impl PartyDataset {
    pub fn has_label(&self) -> bool {
        self.columns.iter().any(|c| c.is_label)
    }
}

/// Parses and validates a party's CSV: UTF-8, header row, configurable
/// delimiter. Numeric columns only; missing or non-numeric cells are
/// rejected with the offending row and column.
pub fn ingest_csv(
    path: &Path,
    party_id: &str,
    id_column: &str,
    label_column: Option<&str>,
    bin_specs: &BTreeMap<String, BinningSpec>,
    default_spec: BinningSpec,
    delimiter: u8,
) -> Result<PartyDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Input(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| Error::Input(format!("ID column {id_column} not found")))?;
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("label column {name} not found")))?,
        ),
        None => None,
    };

    let mut ids: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut columns: Vec<Column> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != id_idx)
        .map(|(i, name)| {
            let is_label = Some(i) == label_idx;
            let spec = if is_label {
                BinningSpec::categorical()
            } else {
                *bin_specs.get(name).unwrap_or(&default_spec)
            };
            Column {
                name: name.clone(),
                values: Vec::new(),
                spec,
                is_label,
            }
        })
        .collect();
    let value_indices: Vec<usize> = (0..headers.len()).filter(|i| *i != id_idx).collect();

    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 2; // 1-based, after the header
        let record =
            record.map_err(|e| Error::Input(format!("cannot parse row {row}: {e}")))?;
        let raw_id = record.get(id_idx).unwrap_or("").trim();
        if raw_id.is_empty() {
            return Err(Error::Ingestion {
                row,
                column: id_column.to_string(),
                message: "empty ID".into(),
            });
        }
        if !seen.insert(raw_id.to_string()) {
            return Err(Error::Ingestion {
                row,
                column: id_column.to_string(),
                message: format!("duplicate ID {raw_id}"),
            });
        }
        ids.push(raw_id.to_string());
        for (col, &idx) in columns.iter_mut().zip(&value_indices) {
            let cell = record.get(idx).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(Error::Ingestion {
                    row,
                    column: col.name.clone(),
                    message: "missing value".into(),
                });
            }
            let value: f64 = cell.parse().map_err(|_| Error::Ingestion {
                row,
                column: col.name.clone(),
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Ingestion {
                    row,
                    column: col.name.clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            col.values.push(value);
        }
    }
    if ids.is_empty() {
        return Err(Error::Input(format!("{} contains no data rows", path.display())));
    }
    if columns.is_empty() {
        return Err(Error::Input("dataset has no feature columns".into()));
    }
    Ok(PartyDataset {
        party_id: party_id.to_string(),
        ids,
        columns,
    })
}

/// Encrypts IDs, bins every column, and builds the grouped wire form.
/// Feature labels are positional pseudonyms ("p2.f1"), never column names;
/// the returned map recovers local column names for reporting.
pub fn prepare_submission(
    dataset: &PartyDataset,
    key: &SecretKey,
) -> Result<(Vec<FeatureGroups>, BTreeMap<String, String>)> {
    let encrypted = encrypt_column(key, dataset.ids.iter().map(|s| s.as_bytes()));
    let mut groups = Vec::with_capacity(dataset.columns.len());
    let mut name_map = BTreeMap::new();
    let mut ordinal = 0usize;
    for col in &dataset.columns {
        let pseudonym = if col.is_label {
            format!("{}.label", dataset.party_id)
        } else {
            ordinal += 1;
            format!("{}.f{ordinal}", dataset.party_id)
        };
        let bins = make_bins(&col.values, &col.spec)?;
        let fg = build_feature_groups(&pseudonym, &dataset.party_id, &encrypted, &bins, col.is_label)?;
        name_map.insert(pseudonym, col.name.clone());
        groups.push(fg);
    }
    Ok((groups, name_map))
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub initial: Duration,
    pub factor: f64,
    pub cap: Duration,
    /// Total poll/retry budget before aborting.
    pub max_attempts: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial: Duration::from_millis(250),
            factor: 2.0,
            cap: Duration::from_secs(8),
            max_attempts: 60,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: usize) -> Duration {
        let secs = self.initial.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }
}

/// Blocking HTTP client for the coordinator's wire protocol.
pub struct CoordinatorClient {
    base_url: String,
    http: reqwest::blocking::Client,
    token: Option<String>,
}

impl CoordinatorClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        CoordinatorClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::new(),
            token: None,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn decorate(&self, req: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.token {
            Some(t) => req.header("x-session-token", t),
            None => req,
        }
    }

    fn handle<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| Error::Transport(format!("reading response body: {e}")))?;
        if status.is_success() {
            serde_json::from_slice(&bytes)
                .map_err(|e| Error::Transport(format!("malformed response body: {e}")))
        } else if let Ok(body) = serde_json::from_slice::<ErrorBody>(&bytes) {
            Err(Error::Protocol {
                code: body.error_code,
                message: body.message,
            })
        } else {
            Err(Error::Transport(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            )))
        }
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<CreateSessionResponse> {
        let resp = self
            .decorate(self.http.post(format!("{}/sessions", self.base_url)))
            .json(req)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handle(resp)
    }

    pub fn submit(&self, session_id: &str, req: &SubmissionRequest) -> Result<SubmissionResponse> {
        let resp = self
            .decorate(
                self.http
                    .post(format!("{}/sessions/{session_id}/submissions", self.base_url)),
            )
            .json(req)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handle(resp)
    }

    pub fn status(&self, session_id: &str) -> Result<StatusResponse> {
        let resp = self
            .decorate(self.http.get(format!("{}/sessions/{session_id}/status", self.base_url)))
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handle(resp)
    }

    fn results_url(&self, session_id: &str, party_id: &str) -> Result<reqwest::Url> {
        reqwest::Url::parse_with_params(
            &format!("{}/sessions/{session_id}/results", self.base_url),
            &[("party", party_id)],
        )
        .map_err(|e| Error::Transport(format!("bad results URL: {e}")))
    }

    pub fn results(&self, session_id: &str, party_id: &str) -> Result<ResultsResponse> {
        let resp = self
            .decorate(
                self.http.get(self.results_url(session_id, party_id)?),
            )
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handle(resp)
    }

    /// Raw response bytes of the results endpoint; used by determinism checks.
    pub fn results_raw(&self, session_id: &str, party_id: &str) -> Result<Vec<u8>> {
        let resp = self
            .decorate(
                self.http.get(self.results_url(session_id, party_id)?),
            )
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Transport(format!("HTTP {}", resp.status())));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| Error::Transport(e.to_string()))
    }

    pub fn permutations(&self, session_id: &str) -> Result<PermutationsResponse> {
        let resp = self
            .decorate(
                self.http
                    .get(format!("{}/sessions/{session_id}/permutations", self.base_url)),
            )
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handle(resp)
    }
}

/// Helper for building a session creation request.
pub fn session_request(
    parties: &[(String, bool)],
    permutation_count: u32,
    rng_seed: u64,
    permutations: Option<Vec<Vec<String>>>,
) -> CreateSessionRequest {
    CreateSessionRequest {
        expected_parties: parties
            .iter()
            .map(|(id, is_task_party)| PartySpecWire {
                id: id.clone(),
                is_task_party: *is_task_party,
            })
            .collect(),
        permutation_count,
        rng_seed,
        permutations,
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LocalValuation {
    pub party_id: String,
    pub estimates: Vec<ShapleyEstimate>,
    pub common_id_count: u64,
}

fn with_transport_retries<T>(policy: &RetryPolicy, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0usize;
    loop {
        match call() {
            Err(Error::Transport(msg)) => {
                if attempt + 1 >= policy.max_attempts {
                    return Err(Error::Transport(format!(
                        "giving up after {} attempts: {msg}",
                        attempt + 1
                    )));
                }
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// The party's full session flow: submit, poll with exponential backoff
/// until the session is done, fetch this party's intersection results, and
/// reconstruct Shapley-CMI values locally.
pub fn run_party(
    dataset: &PartyDataset,
    key: &SecretKey,
    client: &CoordinatorClient,
    session_id: &str,
    policy: &RetryPolicy,
) -> Result<LocalValuation> {
    let (groups, _names) = prepare_submission(dataset, key)?;
    let request = SubmissionRequest {
        party_id: dataset.party_id.clone(),
        features: groups.iter().map(FeatureGroupsWire::from_domain).collect(),
    };
    with_transport_retries(policy, || client.submit(session_id, &request))?;

    let mut attempt = 0usize;
    loop {
        let status = with_transport_retries(policy, || client.status(session_id))?;
        match status.phase {
            crate::coordinator::Phase::Done => break,
            crate::coordinator::Phase::Failed => {
                // Results carry the terminal error code (e.g. NO_OVERLAP).
                return match client.results(session_id, &dataset.party_id) {
                    Ok(_) => Err(Error::protocol(ErrorCode::Internal, "session failed")),
                    Err(e) => Err(e),
                };
            }
            _ => {
                if attempt + 1 >= policy.max_attempts {
                    return Err(Error::Transport(format!(
                        "session {session_id} still {:?} after {} polls",
                        status.phase,
                        attempt + 1
                    )));
                }
                std::thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
        }
    }

    let results = with_transport_retries(policy, || client.results(session_id, &dataset.party_id))?;
    valuation_from_results(&dataset.party_id, &results)
}

/// Reconstructs per-feature Shapley-CMI estimates from a results payload.
pub fn valuation_from_results(
    party_id: &str,
    results: &ResultsResponse,
) -> Result<LocalValuation> {
    let n = results.common_id_count;
    let mut per_feature: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for feature in &results.features {
        let domain = feature.to_domain();
        let mut cmis = Vec::with_capacity(domain.permutations.len());
        for perm in &domain.permutations {
            cmis.push(cmi_from_quads(&perm.quads, n)?);
        }
        per_feature.insert(feature.feature_label.clone(), cmis);
    }
    let estimates = if per_feature.is_empty() {
        Vec::new()
    } else {
        shapley_from_permutations(&per_feature)?
    };
    Ok(LocalValuation {
        party_id: party_id.to_string(),
        estimates,
        common_id_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinStrategy;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn specs() -> BTreeMap<String, BinningSpec> {
        BTreeMap::new()
    }

    #[test]
    fn ingest_happy_path_with_label() {
        let f = write_csv("id,x,y,class\nr1,1.0,5,0\nr2,2.5,6,1\nr3,4.0,7,1\n");
        let ds = ingest_csv(f.path(), "p1", "id", Some("class"), &specs(), BinningSpec::default(), b',').unwrap();
        assert_eq!(ds.ids, vec!["r1", "r2", "r3"]);
        assert_eq!(ds.columns.len(), 3);
        assert!(ds.has_label());
        let label = ds.columns.iter().find(|c| c.is_label).unwrap();
        assert_eq!(label.spec.strategy, BinStrategy::CategoricalPassthrough);
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let f = write_csv("id,x\nr1,1.0\nr1,2.0\n");
        let err = ingest_csv(f.path(), "p1", "id", None, &specs(), BinningSpec::default(), b',').unwrap_err();
        assert!(err.to_string().contains("duplicate ID r1"), "{err}");
    }

    #[test]
    fn ingest_rejects_missing_and_non_numeric() {
        let f = write_csv("id,x\nr1,\n");
        let err = ingest_csv(f.path(), "p1", "id", None, &specs(), BinningSpec::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Ingestion { row: 2, .. }), "{err}");

        let f = write_csv("id,x\nr1,abc\n");
        let err = ingest_csv(f.path(), "p1", "id", None, &specs(), BinningSpec::default(), b',').unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");
    }

    #[test]
    fn ingest_rejects_empty_file() {
        let f = write_csv("id,x\n");
        assert!(ingest_csv(f.path(), "p1", "id", None, &specs(), BinningSpec::default(), b',').is_err());
    }

    #[test]
    fn submission_is_deterministic_and_covers_one_id_set() {
        let f = write_csv("id,x,y,z,w,class\nr1,1,9,3,4,0\nr2,2,8,2,4,1\nr3,3,7,1,4,0\n");
        let ds = ingest_csv(f.path(), "p1", "id", Some("class"), &specs(), BinningSpec::default(), b',').unwrap();
        let key = SecretKey::from_bytes(vec![1u8; 16]).unwrap();
        let (groups, names) = prepare_submission(&ds, &key).unwrap();
        assert_eq!(groups.len(), 5);
        let id_set = groups[0].all_members();
        assert!(groups.iter().all(|g| g.all_members() == id_set));
        assert_eq!(groups.iter().filter(|g| g.is_label).count(), 1);
        assert_eq!(names["p1.f1"], "x");
        assert_eq!(names["p1.label"], "class");

        let (groups2, _) = prepare_submission(&ds, &key).unwrap();
        assert_eq!(groups, groups2);
    }

    #[test]
    fn unreachable_coordinator_aborts_after_budget() {
        let client = CoordinatorClient::new("http://127.0.0.1:1");
        let policy = RetryPolicy {
            initial: Duration::from_millis(1),
            factor: 1.0,
            cap: Duration::from_millis(1),
            max_attempts: 3,
        };
        let err = with_transport_retries(&policy, || client.status("s1")).unwrap_err();
        assert!(matches!(err, Error::Transport(_)));
        assert!(err.to_string().contains("3 attempts"), "{err}");
    }
}
