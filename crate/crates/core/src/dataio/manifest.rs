use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    #[serde(default)]
    pub visual_path: Option<PathBuf>,
    #[serde(default)]
    pub audio_path: Option<PathBuf>,
    #[serde(default)]
    pub captions: Vec<String>,
    pub split: Split,
}

/// Clip records with feature paths resolved against the manifest location.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ClipRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate clip id `{}`", r.id)));
            }
            if r.visual_path.is_none() && r.audio_path.is_none() {
                return Err(Error::InvalidManifest(format!(
                    "clip `{}` has neither visual_path nor audio_path",
                    r.id
                )));
            }
            if r.captions.is_empty() && r.split != Split::Test {
                return Err(Error::InvalidManifest(format!(
                    "{} clip `{}` has no captions",
                    r.split, r.id
                )));
            }
        }
        Ok(Manifest { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records: Vec<ClipRecord> = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut records {
            for p in [&mut r.visual_path, &mut r.audio_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Manifest::new(records)
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn captions(&self, split: Split) -> Vec<&str> {
        self.split(split)
            .into_iter()
            .flat_map(|r| r.captions.iter().map(String::as_str))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(
            &path,
            r#"[{"id":"c0","visual_path":"v0.mmcf","captions":["a dog"],"split":"train"},
                {"id":"c1","audio_path":"/abs/a1.mmcf","split":"test"}]"#,
        )
        .unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.records[0].visual_path.as_deref(), Some(dir.path().join("v0.mmcf").as_path()));
        assert_eq!(m.records[1].audio_path.as_deref(), Some(Path::new("/abs/a1.mmcf")));
        assert_eq!(m.split(Split::Test).len(), 1);
        assert_eq!(m.captions(Split::Train), ["a dog"]);
    }

    #[test]
    fn rejects_invalid_records() {
        let rec = |id: &str, v: bool, caps: &[&str], split| ClipRecord {
            id: id.into(),
            visual_path: v.then(|| PathBuf::from("x")),
            audio_path: None,
            captions: caps.iter().map(|s| s.to_string()).collect(),
            split,
        };
        assert!(Manifest::new(vec![rec("a", false, &["x"], Split::Train)]).is_err());
        assert!(Manifest::new(vec![rec("a", true, &[], Split::Val)]).is_err());
        assert!(Manifest::new(vec![rec("a", true, &["x"], Split::Train), rec("a", true, &["y"], Split::Train)]).is_err());
        assert!(Manifest::new(vec![rec("a", true, &[], Split::Test)]).is_ok());
        assert!("dev".parse::<Split>().is_err());
    }
}
