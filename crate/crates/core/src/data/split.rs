use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub path: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: SplitName,
    pub entries: Vec<SplitEntry>,
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    /// One `<path> <label>` line per entry.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{} {}\n", e.path, e.label)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses split text. `source` is only used in error messages.
pub fn parse_split_text(text: &str, name: SplitName, source: &str) -> Result<SplitManifest> {
    let err = |line: usize, message: String| Error::SplitFile {
        path: source.to_string(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let (path, label) = line
            .rsplit_once(' ')
            .ok_or_else(|| err(lineno, format!("expected `<path> <label>`, got `{line}`")))?;
        if path.is_empty() || path.ends_with(' ') || path.starts_with(' ') {
            return Err(err(lineno, format!("expected `<path> <label>` separated by one space, got `{line}`")));
        }
        if path.starts_with('/') || path.split('/').any(|c| c == "..") {
            return Err(err(lineno, format!("path `{path}` must be relative to the dataset root")));
        }
        let label: usize = label
            .parse()
            .map_err(|_| err(lineno, format!("label `{label}` is not an integer")))?;
        if label > 1 {
            return Err(err(lineno, format!("label {label} outside {{0, 1}}")));
        }
        if !seen.insert(path.to_string()) {
            return Err(err(lineno, format!("duplicate path `{path}`")));
        }
        entries.push(SplitEntry {
            path: path.to_string(),
            label,
        });
    }
    Ok(SplitManifest { name, entries })
}

/// Reads a split file; the split name is taken from the file stem
/// (`train.txt`, `val.txt`, `test.txt`).
pub fn parse_split_file(path: &Path) -> Result<SplitManifest> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let name: SplitName = stem.parse()?;
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Invalid(format!("{} is not valid UTF-8", path.display())))?;
    parse_split_text(&text, name, &path.display().to_string())
}

/// Loads the three split files from `dir`.
pub fn load_splits(dir: &Path) -> Result<Vec<SplitManifest>> {
    SplitName::ALL
        .iter()
        .map(|s| parse_split_file(&dir.join(format!("{s}.txt"))))
        .collect()
}

/// Seeded train/val partition with `round(val_fraction * n)` validation
/// entries. Both halves keep the input order.
pub fn partition_train_val(entries: &[SplitEntry], val_fraction: f64, seed: u64) -> Result<(SplitManifest, SplitManifest)> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(Error::Invalid(format!("validation fraction {val_fraction} outside [0, 1]")));
    }
    let n = entries.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let pick = |want: bool| entries.iter().zip(&is_val).filter(|(_, &v)| v == want).map(|(e, _)| e.clone()).collect();
    Ok((
        SplitManifest {
            name: SplitName::Train,
            entries: pick(false),
        },
        SplitManifest {
            name: SplitName::Val,
            entries: pick(true),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_in_order() {
        let m = parse_split_text("a/1.png 0\nb/2.png 1\n", SplitName::Train, "t").unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0], SplitEntry { path: "a/1.png".into(), label: 0 });
        assert_eq!(m.entries[1].label, 1);
        assert_eq!(m.to_text(), "a/1.png 0\nb/2.png 1\n");
    }

    #[test]
    fn label_out_of_range_names_line() {
        let e = parse_split_text("a/1.png 2", SplitName::Test, "test.txt").unwrap_err();
        match e {
            Error::SplitFile { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("outside"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        for text in ["a.png", "a.png  1", "a.png x", "/abs.png 0", "../up.png 1"] {
            assert!(parse_split_text(text, SplitName::Val, "v").is_err(), "{text}");
        }
        let e = parse_split_text("a.png 0\n\nb.png 1\na.png 1\n", SplitName::Val, "v").unwrap_err();
        assert!(matches!(e, Error::SplitFile { line: 4, .. }), "{e}");
    }

    #[test]
    fn split_name_from_stem() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("val.txt");
        fs::write(&p, "x.png 1\r\n").unwrap();
        let m = parse_split_file(&p).unwrap();
        assert_eq!(m.name, SplitName::Val);
        assert_eq!(m.entries[0].path, "x.png");
        fs::write(dir.path().join("other.txt"), "").unwrap();
        assert!(parse_split_file(&dir.path().join("other.txt")).is_err());
    }

    #[test]
    fn eight_to_two_partition() {
        let entries: Vec<SplitEntry> = (0..2879)
            .map(|i| SplitEntry {
                path: format!("{i}.png"),
                label: i % 2,
            })
            .collect();
        let (train, val) = partition_train_val(&entries, 0.2, 0).unwrap();
        assert_eq!((train.len(), val.len()), (2303, 576));
        let again = partition_train_val(&entries, 0.2, 0).unwrap();
        assert_eq!(again.1, val);
        let all: HashSet<_> = train.entries.iter().chain(&val.entries).map(|e| &e.path).collect();
        assert_eq!(all.len(), 2879);
    }
}
