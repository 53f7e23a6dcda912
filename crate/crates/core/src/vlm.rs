//! Minimal differentiable vision-language scorer: token vocabulary, a
//! mean-pool text encoder with a fixed linear map and L2 normalization,
//! fixed unit-norm image features, and cosine-distance classification.
//!
//! The image side is not a network: image features arrive precomputed
//! (synthetic or imported) because prompt tuning never updates them.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Pretrained token embedding table, one row per token.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_names: Vec<String>,
    embeddings: Matrix,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(token_names: Vec<String>, embeddings: Matrix) -> Result<Self> {
        if token_names.is_empty() {
            return Err(Error::Input("vocabulary must contain at least one token".into()));
        }
        if token_names.len() != embeddings.rows() {
            return Err(Error::Dimension(format!(
                "{} token names for {} embedding rows",
                token_names.len(),
                embeddings.rows()
            )));
        }
        let mut index = HashMap::new();
        for (i, name) in token_names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate token name {name:?}")));
            }
        }
        Ok(Self { token_names, embeddings, index })
    }

    pub fn len(&self) -> usize {
        self.token_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn token_names(&self) -> &[String] {
        &self.token_names
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn token_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn embedding(&self, token_id: usize) -> Result<&[f64]> {
        if token_id >= self.len() {
            return Err(Error::Input(format!(
                "token id {token_id} out of range for vocabulary of {}",
                self.len()
            )));
        }
        Ok(self.embeddings.row(token_id))
    }
}

/// A learnable task prompt: one pseudo-token embedding vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Prompt {
    pub values: Vec<f64>,
    pub trained_with_projection: bool,
    pub source_task: String,
}

impl Prompt {
    pub fn new(values: Vec<f64>, trained_with_projection: bool, source_task: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("prompt values must be finite".into()));
        }
        Ok(Self { values, trained_with_projection, source_task: source_task.into() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Precomputed unit-norm image feature.
#[derive(Debug, Clone)]
pub struct ImageFeature {
    pub values: Vec<f64>,
    pub sample_id: String,
}

impl ImageFeature {
    pub fn new(values: Vec<f64>, sample_id: impl Into<String>) -> Result<Self> {
        let n = norm(&values);
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!(
                "image feature must be unit norm within 1e-6, got {n}"
            )));
        }
        Ok(Self { values, sample_id: sample_id.into() })
    }
}

/// Token sequence fed to the text encoder: common tokens, an optional prompt
/// pseudo-token, and class-label tokens.
#[derive(Debug, Clone)]
pub struct TextInput {
    pub common_tokens: Vec<usize>,
    pub prompt: Option<Vec<f64>>,
    pub class_tokens: Vec<usize>,
}

impl TextInput {
    pub fn new(common_tokens: Vec<usize>, prompt: Option<Vec<f64>>, class_tokens: Vec<usize>) -> Self {
        Self { common_tokens, prompt, class_tokens }
    }

    pub fn token_count(&self) -> usize {
        self.common_tokens.len() + self.class_tokens.len() + usize::from(self.prompt.is_some())
    }
}

/// Encoded text feature plus the intermediates needed for prompt gradients.
#[derive(Debug, Clone)]
pub struct EncodedText {
    /// Unit-norm output feature.
    pub feature: Vec<f64>,
    /// Total pooled token count, including the prompt pseudo-token.
    pub seq_len: usize,
    /// Norm of the pre-normalization vector `W·pooled`.
    pub pre_norm: f64,
}

/// Text encoder: mean-pool over token embeddings (with the prompt inserted
/// as one pseudo-token), a fixed linear map, then L2 normalization.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    weight: Option<Matrix>,
}

impl TextEncoder {
    /// Encoder whose linear map is the identity.
    pub fn identity() -> Self {
        Self { weight: None }
    }

    /// Encoder with a fixed square weight matrix.
    pub fn with_weight(weight: Matrix) -> Result<Self> {
        if weight.rows() != weight.cols() {
            return Err(Error::Dimension(format!(
                "encoder weight must be square, got {}x{}",
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight: Some(weight) })
    }

    /// Encoder with a seeded random orthogonal weight, for tests where an
    /// identity map would be too forgiving.
    pub fn random_orthogonal(dim: usize, seed: u64) -> Self {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while rows.len() < dim {
            let mut v: Vec<f64> =
                (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            for prev in &rows {
                let d = dot(&v, prev);
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= d * p;
                }
            }
            let n = norm(&v);
            if n > 1e-8 {
                for x in v.iter_mut() {
                    *x /= n;
                }
                rows.push(v);
            }
        }
        Self { weight: Some(Matrix::from_rows(&rows).expect("orthogonal rows")) }
    }

    /// Class-specific text feature for a token sequence; always unit norm.
    pub fn encode(&self, vocab: &Vocabulary, input: &TextInput) -> Result<Vec<f64>> {
        Ok(self.encode_full(vocab, input)?.feature)
    }

    /// Encode and keep the intermediates needed to backpropagate to the prompt.
    pub fn encode_full(&self, vocab: &Vocabulary, input: &TextInput) -> Result<EncodedText> {
        let seq_len = input.token_count();
        if seq_len == 0 {
            return Err(Error::Input("empty token sequence".into()));
        }
        let d = vocab.dim();
        if let Some(p) = &input.prompt {
            if p.len() != d {
                return Err(Error::Dimension(format!(
                    "prompt length {} does not match embedding dim {d}",
                    p.len()
                )));
            }
        }
        let mut pooled = vec![0.0; d];
        for &tid in input.common_tokens.iter().chain(&input.class_tokens) {
            let e = vocab.embedding(tid)?;
            for (a, b) in pooled.iter_mut().zip(e) {
                *a += b;
            }
        }
        if let Some(p) = &input.prompt {
            for (a, b) in pooled.iter_mut().zip(p) {
                *a += b;
            }
        }
        let inv_len = 1.0 / seq_len as f64;
        for a in pooled.iter_mut() {
            *a *= inv_len;
        }
        let mapped = match &self.weight {
            Some(w) => w.mul_vec(&pooled)?,
            None => pooled,
        };
        let n = norm(&mapped);
        if n < 1e-12 {
            return Err(Error::Numeric(
                "degenerate input: pooled text vector has zero norm".into(),
            ));
        }
        let feature = mapped.iter().map(|v| v / n).collect();
        Ok(EncodedText { feature, seq_len, pre_norm: n })
    }

    /// Gradient of `upstreamᵀ·feature` with respect to the prompt values,
    /// given the encode intermediates: chain rule through L2 normalization,
    /// the linear map, and the mean pool.
    pub fn grad_wrt_prompt(&self, enc: &EncodedText, upstream: &[f64]) -> Vec<f64> {
        let t = &enc.feature;
        let proj = dot(upstream, t);
        let scaled: Vec<f64> = upstream
            .iter()
            .zip(t)
            .map(|(u, ti)| (u - proj * ti) / enc.pre_norm)
            .collect();
        let back = match &self.weight {
            Some(w) => w.tr_mul_vec(&scaled).expect("shape fixed by encode"),
            None => scaled,
        };
        let inv_len = 1.0 / enc.seq_len as f64;
        back.into_iter().map(|v| v * inv_len).collect()
    }
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > 1e-5 {
        return Err(Error::Input(format!(
            "{what} must be unit norm within 1e-5, got {n}"
        )));
    }
    Ok(())
}

/// Cosine distance `1 - a·b` between unit vectors; lies in [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine distance over mismatched lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_unit(a, "left vector")?;
    check_unit(b, "right vector")?;
    Ok(1.0 - dot(a, b))
}

/// Index of the class text with the lowest cosine distance to the image;
/// ties break toward the lowest index.
pub fn classify(image: &ImageFeature, class_texts: &[Vec<f64>]) -> Result<usize> {
    if class_texts.is_empty() {
        return Err(Error::Input("classify needs at least one class text".into()));
    }
    let mut best = 0usize;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, t) in class_texts.iter().enumerate() {
        let sim = dot(&image.values, t);
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok(best)
}

/// Scaled cosine-similarity logits; `argmax` agrees with [`classify`] for
/// every positive scale.
pub fn logits(image: &ImageFeature, class_texts: &[Vec<f64>], scale: f64) -> Result<Vec<f64>> {
    if class_texts.is_empty() {
        return Err(Error::Input("logits need at least one class text".into()));
    }
    if scale <= 0.0 {
        return Err(Error::Config(format!("logit scale must be positive, got {scale}")));
    }
    Ok(class_texts.iter().map(|t| scale * dot(&image.values, t)).collect())
}

/// Numerically stable log-softmax cross-entropy at `target`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Input(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    Ok(max + sum.ln() - logits[target])
}

/// Softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
