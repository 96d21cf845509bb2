//! Single-machine experiment driver: splits a dataset among simulated
//! parties, runs the coordinator and all party clients, then checks the
//! protocol's valuations against the centralized direct computation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::binning::{make_bins, BinningSpec};
use crate::client::{
    ingest_csv, run_party, session_request, CoordinatorClient, LocalValuation,
    PartyDataset, RetryPolicy,
};
use crate::cmi::{normalize_report, ValuationReport};
use crate::coordinator::generate_permutations;
use crate::error::{Error, Result};
use crate::ident::SecretKey;
use crate::oracle::oracle_shapley_cmi;
use crate::server::{start_in_background, ServerConfig};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub id_column: String,
    pub label_column: String,
    pub party_count: usize,
    pub bin_count: usize,
    pub permutation_count: u32,
    pub rng_seed: u64,
    pub key: SecretKey,
    pub output_dir: PathBuf,
    pub tolerance: f64,
    /// 0 binds an ephemeral port.
    pub port: u16,
    pub retry: RetryPolicy,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.party_count < 2 {
            return Err(Error::Config("at least 2 parties required".into()));
        }
        if self.bin_count < 1 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        if self.permutation_count < 1 {
            return Err(Error::Config("permutation count must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonRow {
    pub feature: String,
    pub column_name: String,
    pub protocol_shapley_cmi: f64,
    pub oracle_shapley_cmi: f64,
    pub normalized_share: f64,
    pub abs_difference: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub protocol_total: f64,
    pub oracle_total: f64,
    pub max_abs_difference: f64,
    pub tolerance: f64,
    pub common_id_count: u64,
    pub permutation_count: usize,
    pub log_base: &'static str,
    /// The model-dependent SHAP comparison is not part of this artifact.
    pub note: &'static str,
}

impl ComparisonTable {
    pub fn within_tolerance(&self) -> bool {
        self.max_abs_difference <= self.tolerance
    }
}

/// Round-robin assignment of feature columns in original order; party 1 is
/// the task party and also receives the label. Every party receives the
/// full ID column.
pub fn split_dataset(central: &PartyDataset, party_count: usize) -> Result<Vec<PartyDataset>> {
    let features: Vec<&crate::client::Column> =
        central.columns.iter().filter(|c| !c.is_label).collect();
    if features.len() < party_count {
        return Err(Error::Config(format!(
            "{} features cannot be split among {party_count} parties",
            features.len()
        )));
    }
    let label = central
        .columns
        .iter()
        .find(|c| c.is_label)
        .ok_or_else(|| Error::Config("central dataset has no label column".into()))?;
    let mut parties: Vec<PartyDataset> = (0..party_count)
        .map(|i| PartyDataset {
            party_id: format!("p{}", i + 1),
            ids: central.ids.clone(),
            columns: Vec::new(),
        })
        .collect();
    for (i, col) in features.iter().enumerate() {
        parties[i % party_count].columns.push((*col).clone());
    }
    parties[0].columns.push(label.clone());
    Ok(parties)
}

/// Bins every party's columns the way the clients do and keys them by the
/// same positional pseudonyms, so the central computation sees the identical
/// discretized table. Rows are restricted to `keep` (indices into the
/// party-aligned row order).
fn binned_columns(
    parties: &[PartyDataset],
    keep: Option<&[usize]>,
) -> Result<(BTreeMap<String, Vec<u32>>, Vec<u32>, BTreeMap<String, String>)> {
    let mut columns = BTreeMap::new();
    let mut label_bins: Option<Vec<u32>> = None;
    let mut names = BTreeMap::new();
    for party in parties {
        let mut ordinal = 0usize;
        for col in &party.columns {
            let bins = make_bins(&col.values, &col.spec)?;
            let bins = match keep {
                Some(rows) => rows.iter().map(|&r| bins[r]).collect(),
                None => bins,
            };
            if col.is_label {
                label_bins = Some(bins);
            } else {
                ordinal += 1;
                let pseudonym = format!("{}.f{ordinal}", party.party_id);
                names.insert(pseudonym.clone(), col.name.clone());
                columns.insert(pseudonym, bins);
            }
        }
    }
    let label = label_bins.ok_or_else(|| Error::Config("no label column among parties".into()))?;
    Ok((columns, label, names))
}

/// Full end-to-end run: coordinator + concurrent party clients over HTTP,
/// then the centralized computation on the exact permutations the
/// coordinator generated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ComparisonTable, ValuationReport)> {
    config.validate()?;
    let default_spec = BinningSpec::equal_width(config.bin_count)?;
    let central = ingest_csv(
        &config.dataset,
        "central",
        &config.id_column,
        Some(&config.label_column),
        &BTreeMap::new(),
        default_spec,
        b',',
    )?;
    let parties = split_dataset(&central, config.party_count)?;

    let server = start_in_background(ServerConfig {
        listen_addr: format!("127.0.0.1:{}", config.port),
        ..ServerConfig::default()
    })?;
    let client = CoordinatorClient::new(server.base_url());
    let party_specs: Vec<(String, bool)> = parties
        .iter()
        .enumerate()
        .map(|(i, p)| (p.party_id.clone(), i == 0))
        .collect();
    let session = client.create_session(&session_request(
        &party_specs,
        config.permutation_count,
        config.rng_seed,
        None,
    ))?;

    let valuations = run_parties(&parties, &config.key, &server.base_url(), &session.session_id, &config.retry)?;
    let permutations = client.permutations(&session.session_id)?.permutations;
    server.shutdown();

    let (columns, label, names) = binned_columns(&parties, None)?;
    let oracle = oracle_shapley_cmi(&columns, &label, &permutations)?;
    build_comparison(&valuations, &oracle, &names, config.tolerance)
}

/// Runs every party client concurrently against an already-created session.
pub fn run_parties(
    parties: &[PartyDataset],
    key: &SecretKey,
    base_url: &str,
    session_id: &str,
    retry: &RetryPolicy,
) -> Result<Vec<LocalValuation>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = parties
            .iter()
            .map(|party| {
                let client = CoordinatorClient::new(base_url);
                scope.spawn(move || run_party(party, key, &client, session_id, retry))
            })
            .collect();
        let mut valuations = Vec::with_capacity(handles.len());
        for (party, handle) in parties.iter().zip(handles) {
            let valuation = handle
                .join()
                .map_err(|_| Error::Transport(format!("party {} thread panicked", party.party_id)))?
                .map_err(|e| match e {
                    // Keep protocol error codes intact for the caller.
                    Error::Protocol { code, message } => Error::Protocol {
                        code,
                        message: format!("party {}: {message}", party.party_id),
                    },
                    other => Error::Transport(format!("party {} failed: {other}", party.party_id)),
                })?;
            valuations.push(valuation);
        }
        Ok(valuations)
    })
}

pub fn build_comparison(
    valuations: &[LocalValuation],
    oracle: &[crate::cmi::ShapleyEstimate],
    names: &BTreeMap<String, String>,
    tolerance: f64,
) -> Result<(ComparisonTable, ValuationReport)> {
    let mut protocol: Vec<crate::cmi::ShapleyEstimate> = valuations
        .iter()
        .flat_map(|v| v.estimates.iter().cloned())
        .collect();
    protocol.sort_by(|a, b| a.feature_label.cmp(&b.feature_label));
    let oracle_by_label: BTreeMap<&str, f64> = oracle
        .iter()
        .map(|e| (e.feature_label.as_str(), e.value))
        .collect();
    if protocol.len() != oracle_by_label.len() {
        return Err(Error::Corruption(format!(
            "protocol produced {} features, centralized computation {}",
            protocol.len(),
            oracle_by_label.len()
        )));
    }
    let report = normalize_report(protocol.clone())?;
    let permutation_count = protocol.first().map(|e| e.permutation_count).unwrap_or(0);
    let mut rows = Vec::with_capacity(protocol.len());
    for est in &protocol {
        let oracle_value = *oracle_by_label
            .get(est.feature_label.as_str())
            .ok_or_else(|| {
                Error::Corruption(format!("feature {} missing centrally", est.feature_label))
            })?;
        rows.push(ComparisonRow {
            feature: est.feature_label.clone(),
            column_name: names.get(&est.feature_label).cloned().unwrap_or_default(),
            protocol_shapley_cmi: est.value,
            oracle_shapley_cmi: oracle_value,
            normalized_share: report.normalized_shares[&est.feature_label],
            abs_difference: (est.value - oracle_value).abs(),
        });
    }
    let table = ComparisonTable {
        protocol_total: rows.iter().map(|r| r.protocol_shapley_cmi).sum(),
        oracle_total: rows.iter().map(|r| r.oracle_shapley_cmi).sum(),
        max_abs_difference: rows.iter().map(|r| r.abs_difference).fold(0.0, f64::max),
        tolerance,
        common_id_count: valuations.first().map(|v| v.common_id_count).unwrap_or(0),
        permutation_count,
        log_base: "e",
        note: "model-dependent SHAP comparison not included",
        rows,
    };
    Ok((table, report))
}

/// Centralized valuation with no protocol: bins the whole table, generates
/// seeded permutations over the column names, and reports the direct
/// computation.
pub fn run_centralized(
    dataset: &Path,
    id_column: &str,
    label_column: &str,
    bin_count: usize,
    permutation_count: u32,
    rng_seed: u64,
) -> Result<ValuationReport> {
    let default_spec = BinningSpec::equal_width(bin_count)?;
    let central = ingest_csv(
        dataset,
        "central",
        id_column,
        Some(label_column),
        &BTreeMap::new(),
        default_spec,
        b',',
    )?;
    let mut columns = BTreeMap::new();
    let mut label = None;
    for col in &central.columns {
        let bins = make_bins(&col.values, &col.spec)?;
        if col.is_label {
            label = Some(bins);
        } else {
            columns.insert(col.name.clone(), bins);
        }
    }
    let label = label.expect("label column was declared");
    let feature_names: Vec<String> = columns.keys().cloned().collect();
    let permutations = generate_permutations(&feature_names, permutation_count, rng_seed)?;
    let estimates = oracle_shapley_cmi(&columns, &label, &permutations)?;
    normalize_report(estimates)
}

fn format_table(table: &ComparisonTable) -> String {
    let mut out = String::new();
    let name_width = table
        .rows
        .iter()
        .map(|r| r.feature.len().max(r.column_name.len()))
        .max()
        .unwrap_or(7)
        .max(7);
    out.push_str(&format!(
        "{:<name_width$}  {:<name_width$}  {:>18}  {:>18}  {:>10}  {:>12}\n",
        "feature", "column", "protocol", "centralized", "share", "abs_diff"
    ));
    for r in &table.rows {
        out.push_str(&format!(
            "{:<name_width$}  {:<name_width$}  {:>18.12}  {:>18.12}  {:>10.6}  {:>12.3e}\n",
            r.feature,
            r.column_name,
            r.protocol_shapley_cmi,
            r.oracle_shapley_cmi,
            r.normalized_share,
            r.abs_difference
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:<name_width$}  {:>18.12}  {:>18.12}  {:>10.6}  {:>12.3e}\n",
        "total",
        "",
        table.protocol_total,
        table.oracle_total,
        1.0,
        table.max_abs_difference
    ));
    out.push_str(&format!(
        "common IDs: {}; permutations: {}; log base: {}; tolerance: {:.1e}; {}\n",
        table.common_id_count,
        table.permutation_count,
        table.log_base,
        table.tolerance,
        table.note
    ));
    out
}

/// Writes the machine-readable report and an aligned plain-text table.
pub fn emit_report(
    table: &ComparisonTable,
    report: &ValuationReport,
    output_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if table.rows.is_empty() {
        return Err(Error::Input("comparison table has no feature rows".into()));
    }
    std::fs::create_dir_all(output_dir)?;
    let json_path = output_dir.join("report.json");
    let text_path = output_dir.join("report.txt");
    #[derive(serde::Serialize)]
    struct FullReport<'a> {
        comparison: &'a ComparisonTable,
        valuation: &'a ValuationReport,
    }
    let json = serde_json::to_string_pretty(&FullReport {
        comparison: table,
        valuation: report,
    })
    .map_err(|e| Error::Input(format!("serializing report: {e}")))?;
    std::fs::write(&json_path, json)?;
    std::fs::write(&text_path, format_table(table))?;
    Ok((json_path, text_path))
}
