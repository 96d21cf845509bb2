//! JSON bodies of the coordinator's HTTP interface.
//!
//! Responses to parties carry only feature labels, permutation indices and
//! counts; encrypted IDs appear in submission requests only.

use serde::{Deserialize, Serialize};

use crate::binning::FeatureGroups;
use crate::cmi::{PermutationResult, PsiQuad};
use crate::coordinator::{FeatureResults, Phase};
use crate::error::{Error, ErrorCode, Result};
use crate::ident::EncryptedId;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartySpecWire {
    pub id: String,
    pub is_task_party: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub expected_parties: Vec<PartySpecWire>,
    pub permutation_count: u32,
    pub rng_seed: u64,
    /// Optional verbatim permutations; overrides seed generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutations: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupWire {
    pub bin_index: u32,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGroupsWire {
    pub feature_label: String,
    pub is_label: bool,
    pub groups: Vec<GroupWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmissionRequest {
    pub party_id: String,
    pub features: Vec<FeatureGroupsWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmissionResponse {
    pub accepted: bool,
    pub parties_remaining: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusResponse {
    pub phase: Phase,
    pub parties_remaining: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadWire {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationWire {
    pub permutation_index: u32,
    pub quads: Vec<QuadWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureResultsWire {
    pub feature_label: String,
    pub permutations: Vec<PermutationWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsResponse {
    pub common_id_count: u64,
    pub features: Vec<FeatureResultsWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationsResponse {
    pub permutations: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: ErrorCode,
    pub message: String,
}

impl FeatureGroupsWire {
    pub fn from_domain(fg: &FeatureGroups) -> Self {
        FeatureGroupsWire {
            feature_label: fg.feature_label.clone(),
            is_label: fg.is_label,
            groups: fg
                .groups
                .iter()
                .map(|(bin, members)| GroupWire {
                    bin_index: *bin,
                    members: members.iter().map(|m| m.to_hex()).collect(),
                })
                .collect(),
        }
    }

    /// Owner comes from the enclosing submission's party_id.
    pub fn into_domain(self, owner: &str) -> Result<FeatureGroups> {
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in self.groups {
            let mut members = std::collections::BTreeSet::new();
            for m in &g.members {
                let id = EncryptedId::from_hex(m)?;
                if !members.insert(id) {
                    return Err(Error::Input(format!(
                        "duplicate member {m} in bin {}",
                        g.bin_index
                    )));
                }
            }
            groups.push((g.bin_index, members));
        }
        groups.sort_by_key(|(bin, _)| *bin);
        Ok(FeatureGroups {
            feature_label: self.feature_label,
            owner: owner.to_string(),
            is_label: self.is_label,
            groups,
        })
    }
}

impl From<&PsiQuad> for QuadWire {
    fn from(q: &PsiQuad) -> Self {
        QuadWire { a: q.a, b: q.b, c: q.c, d: q.d }
    }
}

impl From<&QuadWire> for PsiQuad {
    fn from(q: &QuadWire) -> Self {
        PsiQuad { a: q.a, b: q.b, c: q.c, d: q.d }
    }
}

impl FeatureResultsWire {
    pub fn from_domain(fr: &FeatureResults) -> Self {
        FeatureResultsWire {
            feature_label: fr.feature_label.clone(),
            permutations: fr
                .permutations
                .iter()
                .map(|p| PermutationWire {
                    permutation_index: p.permutation_index,
                    quads: p.quads.iter().map(QuadWire::from).collect(),
                })
                .collect(),
        }
    }

    pub fn to_domain(&self) -> FeatureResults {
        FeatureResults {
            feature_label: self.feature_label.clone(),
            permutations: self
                .permutations
                .iter()
                .map(|p| PermutationResult {
                    feature_label: self.feature_label.clone(),
                    permutation_index: p.permutation_index,
                    quads: p.quads.iter().map(PsiQuad::from).collect(),
                })
                .collect(),
        }
    }
}
