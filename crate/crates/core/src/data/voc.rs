//! Image-level labels from Pascal VOC detection annotations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::split::SplitEntry;
use crate::error::{Error, Result};

/// How box classes of one image combine into a single label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    /// Malignant if any box maps to malignant.
    AnyMalignant,
    /// Label of the first box in document order.
    First,
    /// Error when boxes disagree.
    Unanimous,
}

/// User-supplied mapping from box class names to labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub classes: BTreeMap<String, usize>,
    pub combine: Combine,
}

impl LabelRule {
    /// Parses `name=label,name=label[;combine]`, e.g. `benign=0,malignant=1;any-malignant`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (pairs, combine) = match spec.split_once(';') {
            Some((p, c)) => (p, c.trim()),
            None => (spec, "any-malignant"),
        };
        let combine = match combine {
            "any-malignant" => Combine::AnyMalignant,
            "first" => Combine::First,
            "unanimous" => Combine::Unanimous,
            other => return Err(Error::Invalid(format!("unknown combine rule `{other}`"))),
        };
        let mut classes = BTreeMap::new();
        for pair in pairs.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, label) = pair
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("expected `name=label`, got `{pair}`")))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("label in `{pair}` is not an integer")))?;
            if label > 1 {
                return Err(Error::Invalid(format!("label {label} outside {{0, 1}}")));
            }
            classes.insert(name.trim().to_string(), label);
        }
        if classes.is_empty() {
            return Err(Error::Invalid("label rule maps no classes".into()));
        }
        Ok(Self { classes, combine })
    }

    pub fn describe(&self) -> String {
        let pairs: Vec<String> = self.classes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let combine = match self.combine {
            Combine::AnyMalignant => "any-malignant",
            Combine::First => "first",
            Combine::Unanimous => "unanimous",
        };
        format!("{};{combine}", pairs.join(","))
    }

    fn combine_labels(&self, labels: &[usize], source: &str) -> Result<usize> {
        let first = *labels
            .first()
            .ok_or_else(|| Error::Invalid(format!("{source}: annotation has no objects")))?;
        match self.combine {
            Combine::AnyMalignant => Ok(labels.iter().copied().max().unwrap_or(first)),
            Combine::First => Ok(first),
            Combine::Unanimous => {
                if labels.iter().all(|&l| l == first) {
                    Ok(first)
                } else {
                    Err(Error::Invalid(format!("{source}: boxes disagree on the label")))
                }
            }
        }
    }
}

/// Converts one annotation document to a split entry whose path is
/// `image_prefix/<filename>`.
pub fn convert_annotation(xml: &str, rule: &LabelRule, image_prefix: &str, source: &str) -> Result<SplitEntry> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Invalid(format!("{source}: {e}")))?;
    let root = doc.root_element();
    let filename = root
        .children()
        .find(|n| n.has_tag_name("filename"))
        .and_then(|n| n.text())
        .map(str::trim)
        .ok_or_else(|| Error::Invalid(format!("{source}: missing <filename>")))?;
    let mut labels = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let name = obj
            .children()
            .find(|n| n.has_tag_name("name"))
            .and_then(|n| n.text())
            .map(str::trim)
            .ok_or_else(|| Error::Invalid(format!("{source}: <object> without <name>")))?;
        let label = *rule
            .classes
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("{source}: class `{name}` not covered by the label rule")))?;
        labels.push(label);
    }
    let label = rule.combine_labels(&labels, source)?;
    let path = if image_prefix.is_empty() {
        filename.to_string()
    } else {
        format!("{}/{filename}", image_prefix.trim_end_matches('/'))
    };
    Ok(SplitEntry { path, label })
}

/// Converts every `*.xml` file in `dir`, sorted by file name.
pub fn convert_directory(dir: &Path, rule: &LabelRule, image_prefix: &str) -> Result<Vec<SplitEntry>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| convert_annotation(&fs::read_to_string(p)?, rule, image_prefix, &p.display().to_string()))
        .collect()
}

/// Per-split label rules, kept next to the split files so runs can report them.
pub const RULE_FILE: &str = "label_rule.txt";

/// Records `split: rule` in the split directory, replacing an earlier line for the same split.
pub fn record_rule(split_dir: &Path, split: &str, rule: &LabelRule) -> Result<()> {
    let path = split_dir.join(RULE_FILE);
    let prefix = format!("{split}: ");
    let mut lines: Vec<String> = match fs::read_to_string(&path) {
        Ok(text) => text.lines().filter(|l| !l.starts_with(&prefix)).map(str::to_string).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    lines.push(format!("{prefix}{}", rule.describe()));
    lines.sort();
    fs::create_dir_all(split_dir)?;
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

/// Reads the recorded rules, if any.
pub fn recorded_rules(split_dir: &Path) -> Option<Vec<String>> {
    let text = fs::read_to_string(split_dir.join(RULE_FILE)).ok()?;
    Some(text.lines().map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = "<annotation><filename>0001.jpg</filename>\
        <object><name>benign</name></object><object><name>malignant</name></object></annotation>";

    #[test]
    fn combine_rules() {
        let any = LabelRule::parse("benign=0,malignant=1").unwrap();
        assert_eq!(convert_annotation(DOC, &any, "JPEGImages", "d").unwrap(), SplitEntry {
            path: "JPEGImages/0001.jpg".into(),
            label: 1
        });
        let first = LabelRule::parse("benign=0,malignant=1;first").unwrap();
        assert_eq!(convert_annotation(DOC, &first, "", "d").unwrap().label, 0);
        let strict = LabelRule::parse("benign=0,malignant=1;unanimous").unwrap();
        assert!(convert_annotation(DOC, &strict, "", "d").is_err());
        assert_eq!(strict.describe(), "benign=0,malignant=1;unanimous");
    }

    #[test]
    fn unmapped_class_is_an_error() {
        let rule = LabelRule::parse("benign=0").unwrap();
        assert!(convert_annotation(DOC, &rule, "", "d").is_err());
        assert!(LabelRule::parse("a=2").is_err());
        assert!(LabelRule::parse("a=0;sometimes").is_err());
    }

    #[test]
    fn rules_are_recorded_per_split() {
        let dir = tempfile::tempdir().unwrap();
        let rule = LabelRule::parse("benign=0,malignant=1").unwrap();
        record_rule(dir.path(), "train", &rule).unwrap();
        record_rule(dir.path(), "test", &LabelRule::parse("benign=0,malignant=1;first").unwrap()).unwrap();
        record_rule(dir.path(), "train", &rule).unwrap();
        assert_eq!(recorded_rules(dir.path()).unwrap(), vec![
            "test: benign=0,malignant=1;first".to_string(),
            "train: benign=0,malignant=1;any-malignant".to_string(),
        ]);
    }
}
