//! Seeded synthetic multi-view generator with known ground truth.
//!
//! Images for pair (i, j) are unit-normalized mixtures
//! `alpha*o_i + beta*a_j + noise_sigma*g` of orthonormal concept directions
//! plus Gaussian noise. The vocabulary carries one concept-aligned token per
//! class, a common prefix token, the generic support-class tokens, and
//! random distractor tokens.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::regularize::SUPPORT_CLASS_NAMES;
use crate::vlm::{ImageFeature, Vocabulary};

use super::{MultiViewDataset, Split, ViewLabelSpace};

fn default_alpha() -> f64 {
    1.0
}

fn default_distractors() -> usize {
    16
}

fn default_unseen_fraction() -> f64 {
    0.3
}

fn default_train_fraction() -> f64 {
    0.75
}

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Embedding dimension.
    pub d: usize,
    pub n_objects: usize,
    /// Zero produces a single-view (object-only) dataset.
    pub n_attributes: usize,
    pub samples_per_pair: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub beta: f64,
    #[serde(default = "default_distractors")]
    pub distractor_tokens: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of (object, attribute) pairs held out of the train split.
    #[serde(default = "default_unseen_fraction")]
    pub unseen_fraction: f64,
    /// Fraction of each seen pair's samples assigned to the train split.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::Config("n_objects must be at least 1".into()));
        }
        if self.d < self.n_objects + self.n_attributes {
            return Err(Error::Config(format!(
                "d = {} is too small: orthogonal concept directions need d >= {}",
                self.d,
                self.n_objects + self.n_attributes
            )));
        }
        if self.samples_per_pair == 0 {
            return Err(Error::Config("samples_per_pair must be at least 1".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta must not both be zero".into()));
        }
        if self.n_attributes == 0 && self.alpha == 0.0 {
            return Err(Error::Config(
                "single-view spec needs a nonzero alpha".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.unseen_fraction) {
            return Err(Error::Config(format!(
                "unseen_fraction must lie in [0, 1), got {}",
                self.unseen_fraction
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// What the generator actually drew, for oracle tests.
#[derive(Debug, Clone)]
pub struct SyntheticGroundTruth {
    /// `n_objects x d`, orthonormal rows.
    pub object_dirs: Matrix,
    /// `n_attributes x d`, orthonormal rows, orthogonal to the object rows.
    pub attribute_dirs: Matrix,
    /// Embedding of the common prefix token.
    pub common_dir: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian_vec(rng, d);
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Orthonormalize `count` seeded Gaussian draws by modified Gram-Schmidt.
fn orthonormal_rows(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = gaussian_vec(rng, d);
        for _ in 0..2 {
            for prev in &rows {
                let proj = dot(&v, prev);
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= proj * p;
                }
            }
        }
        let n = norm(&v);
        if n < 1e-9 {
            return Err(Error::Numeric(
                "degenerate draw while orthonormalizing concept directions".into(),
            ));
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        rows.push(v);
    }
    Ok(rows)
}

/// Generate a vocabulary, a labelled multi-view dataset, and the ground
/// truth behind it. Deterministic given the spec.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(Vocabulary, MultiViewDataset, SyntheticGroundTruth)> {
    spec.validate()?;
    let d = spec.d;
    let no = spec.n_objects;
    let na = spec.n_attributes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Concept directions; the common token gets its own orthogonal direction
    // when the dimension allows, so prompt-free zero-noise classification is
    // exact by construction.
    let with_common = d > no + na;
    let dirs = orthonormal_rows(&mut rng, no + na + usize::from(with_common), d)?;
    let object_dirs = &dirs[..no];
    let attribute_dirs = &dirs[no..no + na];
    let common_dir: Vec<f64> = if with_common {
        dirs[no + na].clone()
    } else {
        vec![0.0; d]
    };

    let support_embeddings: Vec<Vec<f64>> = (0..SUPPORT_CLASS_NAMES.len())
        .map(|_| unit_gaussian(&mut rng, d))
        .collect();
    let distractor_embeddings: Vec<Vec<f64>> = (0..spec.distractor_tokens)
        .map(|_| unit_gaussian(&mut rng, d))
        .collect();

    // Token table: common prefix, object classes, attribute classes,
    // support classes, distractors.
    let mut token_names = vec!["image_of_a".to_string()];
    let mut rows: Vec<Vec<f64>> = vec![common_dir.clone()];
    for (i, dir) in object_dirs.iter().enumerate() {
        token_names.push(format!("obj{i}"));
        rows.push(dir.clone());
    }
    for (j, dir) in attribute_dirs.iter().enumerate() {
        token_names.push(format!("attr{j}"));
        rows.push(dir.clone());
    }
    for (name, emb) in SUPPORT_CLASS_NAMES.iter().zip(support_embeddings) {
        token_names.push((*name).to_string());
        rows.push(emb);
    }
    for (k, emb) in distractor_embeddings.into_iter().enumerate() {
        token_names.push(format!("tok{k}"));
        rows.push(emb);
    }
    let vocab = Vocabulary::new(token_names, Matrix::from_rows(&rows)?)?;

    let object_view = ViewLabelSpace {
        view_name: "object".into(),
        class_names: (0..no).map(|i| format!("obj{i}")).collect(),
        class_token_ids: (0..no).map(|i| vec![1 + i]).collect(),
    };
    let mut views = vec![object_view];
    if na > 0 {
        views.push(ViewLabelSpace {
            view_name: "attribute".into(),
            class_names: (0..na).map(|j| format!("attr{j}")).collect(),
            class_token_ids: (0..na).map(|j| vec![1 + no + j]).collect(),
        });
    }

    // Seen/unseen pair partition (two-view only).
    let pairs: Vec<(usize, usize)> = if na > 0 {
        (0..no).flat_map(|i| (0..na).map(move |j| (i, j))).collect()
    } else {
        (0..no).map(|i| (i, 0)).collect()
    };
    let pair_seen: Option<BTreeSet<(usize, usize)>> = if na > 0 {
        let n_unseen = (spec.unseen_fraction * pairs.len() as f64).floor() as usize;
        if n_unseen >= pairs.len() {
            return Err(Error::Config("unseen_fraction leaves no seen pairs".into()));
        }
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let unseen: BTreeSet<(usize, usize)> = shuffled[..n_unseen].iter().copied().collect();
        Some(pairs.iter().copied().filter(|p| !unseen.contains(p)).collect())
    } else {
        None
    };

    let train_per_pair = ((spec.samples_per_pair as f64) * spec.train_fraction)
        .round()
        .min(spec.samples_per_pair as f64) as usize;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for &(i, j) in &pairs {
        let seen = pair_seen.as_ref().map_or(true, |m| m.contains(&(i, j)));
        for s in 0..spec.samples_per_pair {
            let noise = gaussian_vec(&mut rng, d);
            let mut raw = vec![0.0; d];
            for k in 0..d {
                raw[k] = spec.alpha * object_dirs[i][k] + spec.noise_sigma * noise[k];
                if na > 0 {
                    raw[k] += spec.beta * attribute_dirs[j][k];
                }
            }
            let n = norm(&raw);
            if n < 1e-9 {
                return Err(Error::Numeric(format!(
                    "sample for pair ({i}, {j}) collapsed to the zero vector"
                )));
            }
            let idx = images.len();
            images.push(ImageFeature::new(
                raw.into_iter().map(|x| x / n).collect(),
                format!("img{idx:05}"),
            )?);
            labels.push(if na > 0 { vec![i, j] } else { vec![i] });
            split.push(if seen && s < train_per_pair { Split::Train } else { Split::Test });
        }
    }

    if !split.iter().any(|s| *s == Split::Test) {
        return Err(Error::Config(
            "spec produces no test images; lower train_fraction or raise unseen_fraction".into(),
        ));
    }

    let dataset = MultiViewDataset {
        images,
        views,
        labels,
        pair_seen,
        split,
        common_tokens: vec![0],
    };
    dataset.validate(&vocab)?;

    let truth = SyntheticGroundTruth {
        object_dirs: Matrix::from_rows(object_dirs)?,
        attribute_dirs: if na > 0 {
            Matrix::from_rows(attribute_dirs)?
        } else {
            Matrix::zeros(0, d)
        },
        common_dir,
    };
    Ok((vocab, dataset, truth))
}
