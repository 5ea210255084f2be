//! A directory of fixtures plus `manifest.json` listing each file's class
//! and split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_fixture, write_fixture, SceneRecipe, SyntheticScene};
use crate::error::{Error, Result};

pub const CORPUS_MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Relative to the corpus directory.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub recipe: SceneRecipe,
    pub entries: Vec<CorpusEntry>,
}

pub fn write_corpus(
    dir: &Path,
    recipe: &SceneRecipe,
    train: &[SyntheticScene],
    test: &[SyntheticScene],
) -> Result<CorpusManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(train.len() + test.len());
    for (split, scenes, tag) in [(Split::Train, train, "train"), (Split::Test, test, "test")] {
        for (i, s) in scenes.iter().enumerate() {
            let name = format!("{tag}_{i:05}.srrm");
            write_fixture(s, &dir.join(&name))?;
            entries.push(CorpusEntry {
                path: name,
                label: s.label,
                split,
            });
        }
    }
    let manifest = CorpusManifest {
        recipe: recipe.clone(),
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join(CORPUS_MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads every fixture listed in the manifest, returning `(manifest, train, test)`.
pub fn read_corpus(
    dir: &Path,
) -> Result<(CorpusManifest, Vec<SyntheticScene>, Vec<SyntheticScene>)> {
    let path = dir.join(CORPUS_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in &manifest.entries {
        let s = read_fixture(&dir.join(&e.path))?;
        if s.label != e.label {
            return Err(Error::Config(format!(
                "{}: manifest label {} but fixture label {}",
                e.path, e.label, s.label
            )));
        }
        match e.split {
            Split::Train => train.push(s),
            Split::Test => test.push(s),
        }
    }
    Ok((manifest, train, test))
}
