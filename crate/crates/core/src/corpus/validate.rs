use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::dataset::{BiasType, CandidateLabel, Dataset, Example, TestKind};
use super::fill::{matches_fill, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    BlankCount,
    LabelSet,
    FillWordMisaligned,
    DuplicateId,
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub test_kind: TestKind,
    pub example_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub examples: usize,
    pub bias_types: BTreeMap<BiasType, usize>,
    pub unique_targets: usize,
    pub target_frequency_min: Option<usize>,
    pub target_frequency_max: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationCounts {
    pub intra: KindCounts,
    pub inter: KindCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub counts: ValidationCounts,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Summarises a dataset and lists every invariant violation. Never fails.
pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let intra = check_kind(&d.intra, TestKind::Intra, &mut violations);
    let inter = check_kind(&d.inter, TestKind::Inter, &mut violations);
    ValidationReport { counts: ValidationCounts { intra, inter }, violations }
}

fn check_kind(examples: &[Example], kind: TestKind, out: &mut Vec<Violation>) -> KindCounts {
    let mut counts = KindCounts { examples: examples.len(), ..Default::default() };
    let mut targets: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seen = HashSet::new();

    for ex in examples {
        *counts.bias_types.entry(ex.bias_type).or_default() += 1;
        *targets.entry(ex.target.as_str()).or_default() += 1;
        let mut flag = |vk: ViolationKind, detail: String| {
            out.push(Violation { test_kind: kind, example_id: ex.id.clone(), kind: vk, detail })
        };

        if !seen.insert(ex.id.as_str()) {
            flag(ViolationKind::DuplicateId, format!("id `{}` appears more than once", ex.id));
        }
        if ex.test_kind != kind {
            flag(ViolationKind::LabelSet, format!("listed as {kind} but marked {}", ex.test_kind));
        }

        let mut labels: Vec<CandidateLabel> = ex.candidates.iter().map(|c| c.label).collect();
        labels.sort();
        if labels != CandidateLabel::ALL {
            let names: Vec<_> = labels.iter().map(|l| l.as_str()).collect();
            flag(ViolationKind::LabelSet, format!("candidate labels are [{}]", names.join(", ")));
        }
        for c in &ex.candidates {
            if c.text.trim().is_empty() {
                flag(ViolationKind::EmptyText, format!("candidate `{}` has empty text", c.id));
            }
        }

        if kind == TestKind::Intra {
            let blanks = ex.context.matches(BLANK).count();
            if blanks != 1 {
                flag(ViolationKind::BlankCount, format!("context contains {blanks} BLANK tokens"));
            } else {
                for c in &ex.candidates {
                    let aligned = c.fill_word.as_deref().is_some_and(|f| matches_fill(&ex.context, f, &c.text));
                    if !aligned {
                        flag(
                            ViolationKind::FillWordMisaligned,
                            format!("candidate `{}` ({:?}) does not fill the context", c.id, c.text),
                        );
                    }
                }
            }
        }
    }

    counts.unique_targets = targets.len();
    counts.target_frequency_min = targets.values().min().copied();
    counts.target_frequency_max = targets.values().max().copied();
    counts
}
