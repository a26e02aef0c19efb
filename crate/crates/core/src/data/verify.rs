use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::data::split::{SplitManifest, SplitName};

/// Official split sizes of the known public datasets.
pub fn official_sizes(dataset: &str) -> Option<[(SplitName, usize); 3]> {
    match dataset.to_ascii_lowercase().as_str() {
        "tn3k" => Some([(SplitName::Train, 2303), (SplitName::Val, 576), (SplitName::Test, 614)]),
        "tn5000" => Some([(SplitName::Train, 3500), (SplitName::Val, 500), (SplitName::Test, 1000)]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub name: SplitName,
    pub entries: usize,
    pub benign: usize,
    pub malignant: usize,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overlap {
    pub path: String,
    pub splits: Vec<SplitName>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrityReport {
    pub root: String,
    pub splits: Vec<SplitSummary>,
    pub overlaps: Vec<Overlap>,
    pub violations: Vec<String>,
}

impl IntegrityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn render_text(&self) -> String {
        let mut s = format!("dataset root: {}\n", self.root);
        for sp in &self.splits {
            s.push_str(&format!(
                "{:<5} {:>6} entries  benign {:>6}  malignant {:>6}  missing {}\n",
                sp.name.as_str(),
                sp.entries,
                sp.benign,
                sp.malignant,
                sp.missing.len()
            ));
        }
        for v in &self.violations {
            s.push_str(&format!("violation: {v}\n"));
        }
        s.push_str(if self.passed() { "result: PASS\n" } else { "result: FAIL\n" });
        s
    }
}

/// Checks file presence, split disjointness and optionally the expected split sizes.
/// Violations are collected, never raised.
pub fn verify_dataset(manifests: &[SplitManifest], root: &Path, expected: Option<&[(SplitName, usize)]>) -> IntegrityReport {
    let mut violations = Vec::new();
    let mut splits = Vec::new();
    let mut owners: BTreeMap<&str, Vec<SplitName>> = BTreeMap::new();
    for m in manifests {
        let mut missing = Vec::new();
        for e in &m.entries {
            if !root.join(&e.path).is_file() {
                missing.push(e.path.clone());
            }
            owners.entry(&e.path).or_default().push(m.name);
        }
        for p in &missing {
            violations.push(format!("{}: missing file {p}", m.name));
        }
        let [benign, malignant] = m.class_counts();
        splits.push(SplitSummary {
            name: m.name,
            entries: m.len(),
            benign,
            malignant,
            missing,
        });
    }
    let overlaps: Vec<Overlap> = owners
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(p, s)| Overlap {
            path: p.to_string(),
            splits: s,
        })
        .collect();
    for o in &overlaps {
        let names: Vec<&str> = o.splits.iter().map(|s| s.as_str()).collect();
        violations.push(format!("{} appears in {}", o.path, names.join(" and ")));
    }
    if let Some(expected) = expected {
        for &(name, size) in expected {
            match splits.iter().find(|s| s.name == name) {
                Some(s) if s.entries != size => {
                    violations.push(format!("{name}: {} entries, expected {size}", s.entries));
                }
                None => violations.push(format!("{name}: split missing")),
                _ => {}
            }
        }
    }
    IntegrityReport {
        root: root.display().to_string(),
        splits,
        overlaps,
        violations,
    }
}
