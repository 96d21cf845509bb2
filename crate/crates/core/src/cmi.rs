//! Conditional mutual information from intersection quads, and Shapley
//! aggregation across permutations.
//!
//! Each quad carries the four intersection cardinalities (a, b, c, d) for
//! one observed value combination; a feature's CMI for one permutation is
//! (1/n) * sum over quads of a * ln(a*d / (b*c)), in nats.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// The four intersection cardinalities for one observed value combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PsiQuad {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl PsiQuad {
    /// A quad exists only for an observed combination, so
    /// 1 <= a <= min(b, c) and max(b, c) <= d.
    pub fn validate(&self) -> Result<()> {
        let PsiQuad { a, b, c, d } = *self;
        if a < 1 || a > b.min(c) || b.max(c) > d {
            return Err(Error::Corruption(format!(
                "quad ordering violated: a={a} b={b} c={c} d={d}"
            )));
        }
        Ok(())
    }
}

/// Per-feature, per-permutation intersection counts.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PermutationResult {
    pub feature_label: String,
    pub permutation_index: u32,
    pub quads: Vec<PsiQuad>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapleyEstimate {
    pub feature_label: String,
    /// Mean of `per_permutation_cmi`, in nats.
    pub value: f64,
    pub per_permutation_cmi: Vec<f64>,
    pub permutation_count: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValuationReport {
    pub estimates: Vec<ShapleyEstimate>,
    pub normalized_shares: BTreeMap<String, f64>,
    /// Set when the value total is zero and shares degenerate to zero.
    pub degenerate_total: bool,
    /// Logarithm base used for all CMI values.
    pub log_base: &'static str,
}

/// Neumaier-compensated sum; the quad sum can run to millions of log terms.
pub(crate) fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let new_sum = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - new_sum) + t;
        } else {
            comp += (t - new_sum) + sum;
        }
        sum = new_sum;
    }
    sum + comp
}

/// Plug-in CMI reconstructed from intersection quads: (1/n) * sum of
/// a * ln(a*d/(b*c)). Exactly 0 when every quad has a*d = b*c.
pub fn cmi_from_quads(quads: &[PsiQuad], n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Input("common-ID count must be at least 1".into()));
    }
    for q in quads {
        q.validate()?;
    }
    let total = compensated_sum(quads.iter().map(|q| {
        let ratio = (q.a as f64 * q.d as f64) / (q.b as f64 * q.c as f64);
        q.a as f64 * ratio.ln()
    }));
    Ok(total / n as f64)
}

/// Per-feature arithmetic mean over permutations; the unbiased Monte-Carlo
/// estimate of the factorial-weighted Shapley sum.
pub fn shapley_from_permutations(
    per_feature: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<ShapleyEstimate>> {
    let mut counts = per_feature.values().map(|v| v.len());
    let first = counts.next().unwrap_or(0);
    if first == 0 {
        return Err(Error::Protocol {
            code: crate::error::ErrorCode::Internal,
            message: "no permutation CMIs to aggregate".into(),
        });
    }
    if counts.any(|c| c != first) {
        return Err(Error::Protocol {
            code: crate::error::ErrorCode::Internal,
            message: "ragged per-permutation CMI lists".into(),
        });
    }
    Ok(per_feature
        .iter()
        .map(|(label, cmis)| ShapleyEstimate {
            feature_label: label.clone(),
            value: compensated_sum(cmis.iter().copied()) / cmis.len() as f64,
            per_permutation_cmi: cmis.clone(),
            permutation_count: cmis.len(),
        })
        .collect())
}

/// Normalizes estimates into per-feature shares of the total.
pub fn normalize_report(estimates: Vec<ShapleyEstimate>) -> Result<ValuationReport> {
    if estimates.is_empty() {
        return Err(Error::Input("no estimates to normalize".into()));
    }
    let total: f64 = compensated_sum(estimates.iter().map(|e| e.value));
    let degenerate = total == 0.0;
    let shares = estimates
        .iter()
        .map(|e| {
            let share = if degenerate { 0.0 } else { e.value / total };
            (e.feature_label.clone(), share)
        })
        .collect();
    Ok(ValuationReport {
        estimates,
        normalized_shares: shares,
        degenerate_total: degenerate,
        log_base: "e",
    })
}
