//! On-disk formats: the PALG binary container for bulk float matrices, and
//! JSON documents for manifests, prompts, and projection bases.
//!
//! PALG layout: 16-byte header = magic `PALG`, format version u32 LE,
//! rows u32 LE, cols u32 LE; payload = rows*cols float32 LE, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, ProjectionBasis};
use crate::vlm::{ImageFeature, Prompt, Vocabulary};

use super::{MultiViewDataset, Split, ViewLabelSpace};

pub const PALG_MAGIC: &[u8; 4] = b"PALG";
const PALG_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Write a matrix as a PALG file. Values are stored as float32.
pub fn save_embeddings(matrix: &Matrix, path: &Path) -> Result<()> {
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| Error::Format("row count exceeds u32".into()))?;
    let cols = u32::try_from(matrix.cols())
        .map_err(|_| Error::Format("column count exceeds u32".into()))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + matrix.data().len() * 4);
    bytes.extend_from_slice(PALG_MAGIC);
    bytes.extend_from_slice(&PALG_VERSION.to_le_bytes());
    bytes.extend_from_slice(&rows.to_le_bytes());
    bytes.extend_from_slice(&cols.to_le_bytes());
    for &v in matrix.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a PALG file back into a matrix (float32 widened to f64).
pub fn load_embeddings(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header in {}: expected {HEADER_LEN} bytes, found {} (at byte offset {})",
            path.display(),
            bytes.len(),
            bytes.len()
        )));
    }
    if &bytes[..4] != PALG_MAGIC {
        return Err(Error::Format(format!(
            "bad magic in {} at byte offset 0: expected {:02x?}, found {:02x?}",
            path.display(),
            PALG_MAGIC,
            &bytes[..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PALG_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} in {} at byte offset 4",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(Error::Format(format!(
            "payload length mismatch in {}: expected {expected} bytes for {rows}x{cols} float32, \
             found {actual} (error at byte offset {})",
            path.display(),
            HEADER_LEN + actual.min(expected)
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "non-finite value in {} at byte offset {}",
                path.display(),
                HEADER_LEN + i * 4
            )));
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

/// JSON document describing a dataset directory. Bulk floats live in PALG
/// files referenced by relative path; everything else is auditable here.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Token name to embedding-row index.
    pub tokens: BTreeMap<String, usize>,
    pub vocab_embeddings_path: String,
    pub image_features_path: String,
    pub views: Vec<ViewLabelSpace>,
    pub common_token_ids: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
    pub split: Vec<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen_pairs: Option<Vec<(usize, usize)>>,
}

/// Write `manifest.json` plus the two PALG files into `dir`.
pub fn save_dataset(
    vocab: &Vocabulary,
    dataset: &MultiViewDataset,
    dir: &Path,
    config_hash: Option<String>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    save_embeddings(vocab.embeddings(), &dir.join("vocab.palg"))?;
    let image_rows: Vec<Vec<f64>> = dataset.images.iter().map(|im| im.values.clone()).collect();
    let image_matrix = Matrix::from_rows(&image_rows)?;
    save_embeddings(&image_matrix, &dir.join("images.palg"))?;

    let tokens: BTreeMap<String, usize> = vocab
        .token_names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let manifest = DatasetManifest {
        format_version: 1,
        config_hash,
        tokens,
        vocab_embeddings_path: "vocab.palg".into(),
        image_features_path: "images.palg".into(),
        views: dataset.views.clone(),
        common_token_ids: dataset.common_tokens.clone(),
        labels: dataset.labels.clone(),
        split: dataset.split.clone(),
        seen_pairs: dataset
            .pair_seen
            .as_ref()
            .map(|m| m.iter().copied().collect()),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Load a dataset directory through its manifest, validating shapes and
/// invariants along the way.
pub fn load_dataset(manifest_path: &Path) -> Result<(Vocabulary, MultiViewDataset)> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let embeddings = load_embeddings(&base.join(&manifest.vocab_embeddings_path))?;

    let n_tokens = manifest.tokens.len();
    let mut token_names = vec![String::new(); n_tokens];
    for (name, &idx) in &manifest.tokens {
        if idx >= n_tokens || !token_names[idx].is_empty() {
            return Err(Error::Format(format!(
                "token map is not a bijection onto 0..{n_tokens}: {name:?} -> {idx}"
            )));
        }
        token_names[idx] = name.clone();
    }
    if embeddings.rows() != n_tokens {
        return Err(Error::Format(format!(
            "manifest lists {n_tokens} tokens but embedding file has {} rows",
            embeddings.rows()
        )));
    }
    let vocab = Vocabulary::new(token_names, embeddings)?;

    let features = load_embeddings(&base.join(&manifest.image_features_path))?;
    if features.cols() != vocab.dim() {
        return Err(Error::Format(format!(
            "image feature dim {} does not match vocabulary dim {}",
            features.cols(),
            vocab.dim()
        )));
    }
    let images: Vec<ImageFeature> = (0..features.rows())
        .map(|i| ImageFeature::new(features.row(i).to_vec(), format!("img{i:05}")))
        .collect::<Result<_>>()?;

    let dataset = MultiViewDataset {
        images,
        views: manifest.views,
        labels: manifest.labels,
        pair_seen: manifest.seen_pairs.map(|p| p.into_iter().collect()),
        split: manifest.split,
        common_tokens: manifest.common_token_ids,
    };
    dataset.validate(&vocab)?;
    Ok((vocab, dataset))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFile {
    format_version: u32,
    values: Vec<f64>,
    trained_with_projection: bool,
    source_task: String,
    #[serde(default)]
    basis_fingerprint: Option<String>,
    #[serde(default)]
    config_hash: Option<String>,
}

/// A prompt together with the provenance needed to compose it safely.
#[derive(Debug, Clone)]
pub struct PromptRecord {
    pub prompt: Prompt,
    /// Fingerprint of the basis active when the prompt was trained, if any.
    pub basis_fingerprint: Option<String>,
    pub config_hash: Option<String>,
}

pub fn save_prompt(record: &PromptRecord, path: &Path) -> Result<()> {
    let file = PromptFile {
        format_version: 1,
        values: record.prompt.values.clone(),
        trained_with_projection: record.prompt.trained_with_projection,
        source_task: record.prompt.source_task.clone(),
        basis_fingerprint: record.basis_fingerprint.clone(),
        config_hash: record.config_hash.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_prompt(path: &Path) -> Result<PromptRecord> {
    let file: PromptFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported prompt file version {}",
            file.format_version
        )));
    }
    Ok(PromptRecord {
        prompt: Prompt::new(file.values, file.trained_with_projection, file.source_task)?,
        basis_fingerprint: file.basis_fingerprint,
        config_hash: file.config_hash,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisFile {
    format_version: u32,
    ambient_dim: usize,
    m: usize,
    energy_fraction: f64,
    eigenvalues: Vec<f64>,
    /// Row-major `ambient_dim x m` eigenvector matrix.
    basis_data: Vec<f64>,
    fingerprint: String,
    #[serde(default)]
    config_hash: Option<String>,
}

pub fn save_basis(basis: &ProjectionBasis, path: &Path, config_hash: Option<String>) -> Result<()> {
    let file = BasisFile {
        format_version: 1,
        ambient_dim: basis.ambient_dim(),
        m: basis.retained(),
        energy_fraction: basis.energy_fraction(),
        eigenvalues: basis.eigenvalues().to_vec(),
        basis_data: basis.basis().data().to_vec(),
        fingerprint: basis.fingerprint(),
        config_hash,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_basis(path: &Path) -> Result<ProjectionBasis> {
    let file: BasisFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format_version != 1 {
        return Err(Error::Format(format!(
            "unsupported basis file version {}",
            file.format_version
        )));
    }
    let matrix = Matrix::from_vec(file.ambient_dim, file.m, file.basis_data)?;
    let basis = ProjectionBasis::from_parts(matrix, file.eigenvalues, file.energy_fraction)?;
    if basis.fingerprint() != file.fingerprint {
        return Err(Error::Format(format!(
            "basis fingerprint mismatch in {}: file claims {}, content hashes to {}",
            path.display(),
            file.fingerprint,
            basis.fingerprint()
        )));
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f32_valued_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-2.0f32..2.0f32) as f64)
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn palg_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.palg");
        let m = f32_valued_matrix(5, 8, 1);
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(m, back);
        // Save-load-save is byte identical.
        let path2 = dir.path().join("m2.palg");
        save_embeddings(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn palg_truncation_reports_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.palg");
        let m = f32_valued_matrix(3, 4, 2);
        save_embeddings(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_embeddings(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 48"), "{msg}");
        assert!(msg.contains("found 43"), "{msg}");
    }

    #[test]
    fn palg_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.palg");
        let m = f32_valued_matrix(2, 2, 3);
        save_embeddings(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("byte offset 0"));
    }

    #[test]
    fn prompt_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let record = PromptRecord {
            prompt: Prompt::new(values.clone(), true, "object").unwrap(),
            basis_fingerprint: Some("deadbeef".into()),
            config_hash: None,
        };
        save_prompt(&record, &path).unwrap();
        let back = load_prompt(&path).unwrap();
        assert_eq!(back.prompt.values, values);
        assert!(back.prompt.trained_with_projection);
        assert_eq!(back.prompt.source_task, "object");
        assert_eq!(back.basis_fingerprint.as_deref(), Some("deadbeef"));
        // Byte-identical on re-save.
        let path2 = dir.path().join("p2.json");
        save_prompt(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn basis_round_trip_and_tamper_detection() {
        use crate::linalg::spectral_basis;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let vocab = f32_valued_matrix(10, 6, 5);
        let basis = spectral_basis(&vocab, 0.9).unwrap();
        save_basis(&basis, &path, None).unwrap();
        let back = load_basis(&path).unwrap();
        assert_eq!(back.fingerprint(), basis.fingerprint());
        assert_eq!(back.retained(), basis.retained());
        // Tampering with stored values breaks the fingerprint check.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
        file["energy_fraction"] = serde_json::json!(0.91);
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(load_basis(&path).is_err());
    }
}
