use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::FunnelConfig;
use crate::error::{FunnelError, Result};

/// Where a patient is sent after a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Disposition {
    Discharge,
    /// Admit to the given (1-based) stage.
    Admit(usize),
}

impl Disposition {
    /// File code: 0 for discharge, `m` for admit-to-stage-`m`.
    pub fn code(self) -> usize {
        match self {
            Disposition::Discharge => 0,
            Disposition::Admit(m) => m,
        }
    }

    pub fn from_code(code: usize) -> Self {
        if code == 0 {
            Disposition::Discharge
        } else {
            Disposition::Admit(code)
        }
    }

    /// All dispositions available after `stage`: discharge, then each later
    /// stage in order.
    pub fn options(stage: usize, n_stages: usize) -> Vec<Disposition> {
        std::iter::once(Disposition::Discharge)
            .chain((stage + 1..=n_stages).map(Disposition::Admit))
            .collect()
    }

    /// Threshold indices (0-based, into `t_1..t_{K−1}`) bounding the risk
    /// interval that produces this disposition at `stage`. `None` stands for
    /// 0 below and 1 above.
    pub fn interval(self, stage: usize, n_stages: usize) -> (Option<usize>, Option<usize>) {
        match self {
            Disposition::Discharge => (None, Some(stage - 1)),
            Disposition::Admit(m) if m == n_stages => (Some(m - 2), None),
            Disposition::Admit(m) => (Some(m - 2), Some(m - 1)),
        }
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Disposition::Discharge => write!(f, "discharge"),
            Disposition::Admit(m) => write!(f, "stage{m}"),
        }
    }
}

/// One decision taken at a visited stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StageDecision {
    pub stage: usize,
    pub disposition: Disposition,
}

/// Sequence of decisions a patient went through.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pathway(pub Vec<StageDecision>);

impl Pathway {
    pub fn deepest_stage(&self, n_stages: usize) -> usize {
        match self.0.last() {
            None => 1,
            Some(StageDecision {
                stage,
                disposition: Disposition::Discharge,
            }) => *stage,
            Some(StageDecision {
                disposition: Disposition::Admit(m),
                ..
            }) => (*m).min(n_stages),
        }
    }

    /// Every complete pathway through a funnel with `n_stages` stages,
    /// starting at stage 1.
    pub fn enumerate(n_stages: usize) -> Vec<Pathway> {
        fn walk(stage: usize, k: usize, prefix: &mut Vec<StageDecision>, out: &mut Vec<Pathway>) {
            for disposition in Disposition::options(stage, k) {
                prefix.push(StageDecision { stage, disposition });
                match disposition {
                    Disposition::Admit(m) if m < k => walk(m, k, prefix, out),
                    _ => out.push(Pathway(prefix.clone())),
                }
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        walk(1, n_stages, &mut Vec::new(), &mut out);
        out
    }

    /// Short label such as `1:stage2>2:discharge`.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|d| format!("{}:{}", d.stage, d.disposition))
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// Observed data for one patient visit.
///
/// `features` covers the global feature vector; entries not revealed by the
/// deepest stage reached are `None`. `decisions[k − 1]` is the decision at
/// stage `k`, `None` when the stage was not visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub features: Vec<Option<f64>>,
    pub decisions: Vec<Option<Disposition>>,
    pub outcome: Option<bool>,
    /// Raw passthrough columns (e.g. acuity, group) that are never model
    /// features.
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        features: Vec<Option<f64>>,
        decisions: Vec<Option<Disposition>>,
        outcome: Option<bool>,
    ) -> Self {
        PatientRecord {
            id: id.into(),
            features,
            decisions,
            outcome,
            extras: BTreeMap::new(),
        }
    }

    /// Record built from a pathway and a fully observed feature vector; the
    /// features beyond the deepest stage's mask and a censored outcome are
    /// dropped according to `config`.
    pub fn from_pathway(
        id: impl Into<String>,
        features: &[f64],
        pathway: &Pathway,
        outcome: bool,
        config: &FunnelConfig,
    ) -> Self {
        let deepest = pathway.deepest_stage(config.n_stages);
        let mask = config.mask(deepest);
        let mut decisions = vec![None; config.n_decision_stages()];
        for d in &pathway.0 {
            decisions[d.stage - 1] = Some(d.disposition);
        }
        PatientRecord::new(
            id,
            features
                .iter()
                .zip(mask)
                .map(|(&x, &on)| on.then_some(x))
                .collect(),
            decisions,
            (deepest >= config.observation_stage).then_some(outcome),
        )
    }

    pub fn pathway(&self) -> Pathway {
        Pathway(
            self.decisions
                .iter()
                .enumerate()
                .filter_map(|(idx, d)| {
                    d.map(|disposition| StageDecision {
                        stage: idx + 1,
                        disposition,
                    })
                })
                .collect(),
        )
    }

    pub fn deepest_stage(&self, n_stages: usize) -> usize {
        self.pathway().deepest_stage(n_stages)
    }

    /// Checks decision consistency, censoring, and feature availability.
    pub fn validate(&self, config: &FunnelConfig) -> Result<()> {
        let k = config.n_stages;
        let fail = |msg: String| FunnelError::data(format!("record `{}`: {msg}", self.id));
        if self.decisions.len() != k - 1 {
            return Err(fail(format!(
                "expected {} decision slots, got {}",
                k - 1,
                self.decisions.len()
            )));
        }
        if self.features.len() != config.n_features() {
            return Err(fail(format!(
                "expected {} features, got {}",
                config.n_features(),
                self.features.len()
            )));
        }
        // walk the visited stages
        let mut stage = 1;
        let mut visited = vec![false; k - 1];
        let deepest = loop {
            let Some(decision) = self.decisions[stage - 1] else {
                return Err(fail(format!("stage {stage} was reached but has no decision")));
            };
            visited[stage - 1] = true;
            match decision {
                Disposition::Discharge => break stage,
                Disposition::Admit(m) if m <= stage || m > k => {
                    return Err(fail(format!("stage {stage} admits to invalid stage {m}")));
                }
                Disposition::Admit(m) if m == k => break k,
                Disposition::Admit(m) => stage = m,
            }
        };
        if let Some(idx) = (0..k - 1).find(|&i| !visited[i] && self.decisions[i].is_some()) {
            return Err(fail(format!("decision recorded at unvisited stage {}", idx + 1)));
        }
        let observed = deepest >= config.observation_stage;
        if observed != self.outcome.is_some() {
            return Err(fail(format!(
                "outcome must be {} when the deepest stage is {deepest}",
                if observed { "present" } else { "absent" }
            )));
        }
        for stage in self.pathway().0.iter().map(|d| d.stage) {
            self.require_features(stage, config)?;
        }
        Ok(())
    }

    pub(crate) fn require_features(&self, stage: usize, config: &FunnelConfig) -> Result<()> {
        for (j, &on) in config.mask(stage).iter().enumerate() {
            if on && self.features[j].is_none() {
                return Err(FunnelError::MissingFeature {
                    feature: config.feature_names[j].clone(),
                    stage,
                });
            }
        }
        Ok(())
    }
}
