//! Dataset model, bit-exact on-disk formats, and the seeded synthetic
//! multi-view generator.

mod format;
mod synth;

pub use format::{
    load_basis, load_dataset, load_embeddings, load_prompt, save_basis, save_dataset,
    save_embeddings, save_prompt, DatasetManifest, PromptRecord, PALG_MAGIC,
};
pub use synth::{generate_synthetic, SyntheticGroundTruth, SyntheticSpec};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::vlm::{ImageFeature, Vocabulary};

/// Label space of one annotation view (e.g. "object" or "attribute").
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ViewLabelSpace {
    pub view_name: String,
    pub class_names: Vec<String>,
    /// Token ids into the vocabulary, one list per class.
    pub class_token_ids: Vec<Vec<usize>>,
}

impl ViewLabelSpace {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Input(format!(
                "view {:?} has no classes",
                self.view_name
            )));
        }
        if self.class_names.len() != self.class_token_ids.len() {
            return Err(Error::Dimension(format!(
                "view {:?}: {} class names but {} token lists",
                self.view_name,
                self.class_names.len(),
                self.class_token_ids.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &self.class_names {
            if !seen.insert(name) {
                return Err(Error::Input(format!(
                    "view {:?}: duplicate class name {name:?}",
                    self.view_name
                )));
            }
        }
        for (i, ids) in self.class_token_ids.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Input(format!(
                    "view {:?}: class {i} has no tokens",
                    self.view_name
                )));
            }
            for &id in ids {
                if id >= vocab.len() {
                    return Err(Error::Input(format!(
                        "view {:?}: token id {id} out of range",
                        self.view_name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Train/test tag for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Image features with per-sample labels in one or two views, plus the
/// seen/unseen pair partition for two-view data.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    pub images: Vec<ImageFeature>,
    pub views: Vec<ViewLabelSpace>,
    /// One label per view, per image.
    pub labels: Vec<Vec<usize>>,
    /// Pairs `(label in views[0], label in views[1])` that may appear in the
    /// train split. `None` for single-view datasets.
    pub pair_seen: Option<BTreeSet<(usize, usize)>>,
    pub split: Vec<Split>,
    /// Token ids of the class-agnostic common prefix.
    pub common_tokens: Vec<usize>,
}

impl MultiViewDataset {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.views.is_empty() || self.views.len() > 2 {
            return Err(Error::Input(format!(
                "dataset must have one or two views, got {}",
                self.views.len()
            )));
        }
        for v in &self.views {
            v.validate(vocab)?;
        }
        for &id in &self.common_tokens {
            if id >= vocab.len() {
                return Err(Error::Input(format!("common token id {id} out of range")));
            }
        }
        let n = self.images.len();
        if self.labels.len() != n || self.split.len() != n {
            return Err(Error::Dimension(format!(
                "{} images, {} label rows, {} split tags",
                n,
                self.labels.len(),
                self.split.len()
            )));
        }
        for (i, row) in self.labels.iter().enumerate() {
            if row.len() != self.views.len() {
                return Err(Error::Dimension(format!(
                    "image {i}: {} labels for {} views",
                    row.len(),
                    self.views.len()
                )));
            }
            for (v, &label) in row.iter().enumerate() {
                if label >= self.views[v].num_classes() {
                    return Err(Error::Input(format!(
                        "image {i}: label {label} out of range in view {v}"
                    )));
                }
            }
        }
        match (&self.pair_seen, self.views.len()) {
            (Some(_), 1) => {
                return Err(Error::Input("single-view dataset carries a pair mask".into()))
            }
            (Some(mask), 2) => {
                // Unseen pairs appear only during testing.
                for (i, row) in self.labels.iter().enumerate() {
                    if self.split[i] == Split::Train && !mask.contains(&(row[0], row[1])) {
                        return Err(Error::Input(format!(
                            "train image {i} carries unseen pair ({}, {})",
                            row[0], row[1]
                        )));
                    }
                }
            }
            (None, 2) => {
                return Err(Error::Input("two-view dataset is missing the seen-pair mask".into()))
            }
            (None, 1) => {}
            _ => unreachable!(),
        }
        if !self.split.iter().any(|s| *s == Split::Test) {
            return Err(Error::Input("dataset has no test images".into()));
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| self.split[i] == Split::Train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.images.len()).filter(|&i| self.split[i] == Split::Test).collect()
    }

    /// Index and label space of the view with the given name.
    pub fn view(&self, name: &str) -> Result<(usize, &ViewLabelSpace)> {
        self.views
            .iter()
            .enumerate()
            .find(|(_, v)| v.view_name == name)
            .ok_or_else(|| Error::Config(format!("dataset has no view named {name:?}")))
    }

    /// The other view of a two-view dataset.
    pub fn other_view(&self, view_index: usize) -> Result<(usize, &ViewLabelSpace)> {
        if self.views.len() != 2 {
            return Err(Error::Config(
                "operation needs a two-view dataset".into(),
            ));
        }
        let other = 1 - view_index;
        Ok((other, &self.views[other]))
    }

    pub fn is_pair_seen(&self, pair: (usize, usize)) -> bool {
        self.pair_seen.as_ref().is_some_and(|m| m.contains(&pair))
    }
}

/// Deterministic seed mixing for per-(epoch, image) draws.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = base ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
