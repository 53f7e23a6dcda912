//! Dense real linear algebra: symmetric eigendecomposition via cyclic Jacobi
//! rotations, spectral-energy basis selection over a vocabulary correlation
//! matrix, and subspace projection.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build a matrix from row-major data, validating shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite matrix entry at flat index {i}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged row lengths".into()));
        }
        Self::from_vec(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ * self`, mirrored so the result is exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let d = self.cols;
        let mut g = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += self.data[r * d + i] * self.data[r * d + j];
                }
                g.data[i * d + j] = acc;
                g.data[j * d + i] = acc;
            }
        }
        g
    }

    /// `self * v` for a vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix-vector shape mismatch: {}x{} * len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), v))
            .collect())
    }

    /// `selfᵀ * v` for a vector `v` of length `rows`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::Dimension(format!(
                "transposed matrix-vector shape mismatch: {}x{} with len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let s = v[r];
            if s == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in descending order (ties keep original index order)
/// and the matching eigenvectors as columns of the second matrix.
pub fn sym_eig(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if m.rows != m.cols {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite entry at flat index {i}"
        )));
    }
    let n = m.rows;
    let scale = m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asym = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (m.at(i, j) - m.at(j, i)).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-9 * scale.max(1e-300) {
        return Err(Error::Dimension(format!(
            "matrix is not symmetric: max |a_ij - a_ji| = {asym:e}"
        )));
    }

    // Work on the symmetrized copy; accumulate rotations into `vecs`.
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (m.at(i, j) + m.at(j, i)));
        }
    }
    let mut vecs = Matrix::identity(n);
    let norm_f = a.frobenius_norm();
    let tol = 1e-12 * norm_f;

    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let v = a.at(i, j);
                    s += v * v;
                }
            }
        }
        s.sqrt()
    };

    let max_sweeps = 64;
    let mut sweep = 0;
    while off(&a) > tol && norm_f > 0.0 {
        sweep += 1;
        if sweep > max_sweeps {
            return Err(Error::Numeric(format!(
                "Jacobi iteration did not converge in {max_sweeps} sweeps"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- JᵀAJ over rows/cols p and q.
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                // Force the rotated pair exactly to the algebraic values.
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                for k in 0..n {
                    let vkp = vecs.at(k, p);
                    let vkq = vecs.at(k, q);
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.at(j, j)
            .partial_cmp(&a.at(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.at(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors.set(r, new_col, vecs.at(r, old_col));
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// Orthonormal basis of the top eigenvectors of a vocabulary correlation
/// matrix, retaining a target fraction of the spectral energy.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    ambient_dim: usize,
    m: usize,
    basis: Matrix,
    eigenvalues: Vec<f64>,
    energy_fraction: f64,
}

impl ProjectionBasis {
    /// Assemble a basis from parts, re-validating every invariant.
    pub fn from_parts(
        basis: Matrix,
        eigenvalues: Vec<f64>,
        energy_fraction: f64,
    ) -> Result<Self> {
        let d = basis.rows();
        let m = basis.cols();
        if m == 0 || m > d {
            return Err(Error::Dimension(format!(
                "basis must have between 1 and {d} columns, got {m}"
            )));
        }
        if eigenvalues.len() != d {
            return Err(Error::Dimension(format!(
                "expected {d} eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if !(0.0 < energy_fraction && energy_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "energy fraction must be in (0, 1], got {energy_fraction}"
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Numeric("eigenvalues are not descending".into()));
        }
        if eigenvalues.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numeric("eigenvalues must be finite and nonnegative".into()));
        }
        // Columns orthonormal within 1e-8.
        for i in 0..m {
            let ci = basis.column(i);
            for j in i..m {
                let cj = basis.column(j);
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(&ci, &cj) - want).abs() > 1e-8 {
                    return Err(Error::Numeric(format!(
                        "basis columns {i},{j} are not orthonormal"
                    )));
                }
            }
        }
        let total: f64 = eigenvalues.iter().sum();
        let kept: f64 = eigenvalues[..m].iter().sum();
        if kept < energy_fraction * total {
            return Err(Error::Numeric(
                "retained eigenvalue mass is below the energy bound".into(),
            ));
        }
        if m > 1 {
            let kept_less: f64 = eigenvalues[..m - 1].iter().sum();
            if kept_less >= energy_fraction * total {
                return Err(Error::Numeric(
                    "basis is not minimal: dropping the last eigenvector still meets the bound"
                        .into(),
                ));
            }
        }
        Ok(Self { ambient_dim: d, m, basis, eigenvalues, energy_fraction })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn retained(&self) -> usize {
        self.m
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn energy_fraction(&self) -> f64 {
        self.energy_fraction
    }

    /// Fraction of total eigenvalue mass actually retained by the basis.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.eigenvalues[..self.m].iter().sum::<f64>() / total
    }

    /// Content hash over the exact bit patterns of the basis, used to refuse
    /// composition of prompts trained in different subspaces.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.ambient_dim as u64).to_le_bytes());
        h.update((self.m as u64).to_le_bytes());
        h.update(self.energy_fraction.to_le_bytes());
        for v in &self.eigenvalues {
            h.update(v.to_le_bytes());
        }
        for v in self.basis.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Eigendecomposition of `vocabᵀ·vocab` keeping the smallest number of top
/// eigenvectors whose eigenvalue mass reaches `energy` times the total mass.
pub fn spectral_basis(vocab: &Matrix, energy: f64) -> Result<ProjectionBasis> {
    if !(0.0 < energy && energy <= 1.0) {
        return Err(Error::Config(format!(
            "energy fraction must be in (0, 1], got {energy}"
        )));
    }
    if vocab.rows() == 0 {
        return Err(Error::Input("vocabulary must have at least one row".into()));
    }
    let gram = vocab.gram();
    let (raw_vals, vecs) = sym_eig(&gram)?;
    // Gram eigenvalues are nonnegative up to roundoff.
    let eigenvalues: Vec<f64> = raw_vals.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric(
            "vocabulary correlation matrix has zero spectral mass".into(),
        ));
    }
    let mut kept = 0.0;
    let mut m = eigenvalues.len();
    for (i, &v) in eigenvalues.iter().enumerate() {
        kept += v;
        if kept >= energy * total {
            m = i + 1;
            break;
        }
    }
    let d = gram.rows();
    let mut basis = Matrix::zeros(d, m);
    for c in 0..m {
        for r in 0..d {
            basis.set(r, c, vecs.at(r, c));
        }
    }
    ProjectionBasis::from_parts(basis, eigenvalues, energy)
}

/// Orthogonal projection of `x` onto the span of the basis: `E·(Eᵀ·x)`.
pub fn project(basis: &ProjectionBasis, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != basis.ambient_dim {
        return Err(Error::Dimension(format!(
            "projection input has length {}, expected {}",
            x.len(),
            basis.ambient_dim
        )));
    }
    let coeffs = basis.basis.tr_mul_vec(x)?;
    basis.basis.mul_vec(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    fn reconstruct(vals: &[f64], vecs: &Matrix) -> Matrix {
        let n = vals.len();
        let mut lambda = Matrix::zeros(n, n);
        for i in 0..n {
            lambda.set(i, i, vals[i]);
        }
        vecs.matmul(&lambda).unwrap().matmul(&vecs.transpose()).unwrap()
    }

    #[test]
    fn eig_diagonal() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (vals, vecs) = sym_eig(&m).unwrap();
        assert_eq!(vals, vec![2.0, 1.0]);
        assert_eq!(vecs, Matrix::identity(2));
    }

    #[test]
    fn eig_exchange_matrix() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (vals, vecs) = sym_eig(&m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] + 1.0).abs() < 1e-12);
        let s = 1.0 / 2.0f64.sqrt();
        // Eigenvectors fixed up to sign.
        let c0 = vecs.column(0);
        let c1 = vecs.column(1);
        assert!(dot(&c0, &[s, s]).abs() > 1.0 - 1e-12);
        assert!(dot(&c1, &[s, -s]).abs() > 1.0 - 1e-12);
    }

    #[test]
    fn eig_reconstruction_8x8() {
        let m = random_symmetric(8, 7);
        let (vals, vecs) = sym_eig(&m).unwrap();
        let rec = reconstruct(&vals, &vecs);
        let mut diff = m.clone();
        for i in 0..diff.data.len() {
            diff.data[i] -= rec.data[i];
        }
        assert!(diff.frobenius_norm() <= 1e-7 * m.frobenius_norm());
        // Residual check M v = λ v.
        for k in 0..8 {
            let v = vecs.column(k);
            let mv = m.mul_vec(&v).unwrap();
            for i in 0..8 {
                assert!((mv[i] - vals[k] * v[i]).abs() <= 1e-7 * m.frobenius_norm());
            }
        }
    }

    #[test]
    fn eig_rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(sym_eig(&rect), Err(Error::Dimension(_))));
        let asym = Matrix::from_rows(&[vec![1.0, 5.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(Error::Dimension(_))));
        let mut nan = Matrix::identity(2);
        nan.data[1] = f64::NAN;
        assert!(matches!(sym_eig(&nan), Err(Error::Numeric(_))));
    }

    #[test]
    fn spectral_basis_hand_computed() {
        // rows (2,0),(0,1): VᵀV = diag(4,1); top-1 mass 0.8.
        let vocab = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = spectral_basis(&vocab, 0.9).unwrap();
        assert_eq!(b.retained(), 2);
        let b = spectral_basis(&vocab, 0.75).unwrap();
        assert_eq!(b.retained(), 1);
        assert!((b.basis().at(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(b.basis().at(1, 0).abs() < 1e-12);
    }

    #[test]
    fn spectral_basis_full_energy_needs_all_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for _ in 0..6 {
            rows.push((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let vocab = Matrix::from_rows(&rows).unwrap();
        let b = spectral_basis(&vocab, 1.0).unwrap();
        assert_eq!(b.retained(), 4);
    }

    #[test]
    fn spectral_basis_rejects_bad_energy() {
        let vocab = Matrix::identity(2);
        assert!(matches!(spectral_basis(&vocab, 0.0), Err(Error::Config(_))));
        assert!(matches!(spectral_basis(&vocab, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn project_axis_example() {
        let basis = ProjectionBasis::from_parts(
            Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap(),
            vec![4.0, 1.0],
            0.75,
        )
        .unwrap();
        assert_eq!(project(&basis, &[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert!(matches!(
            project(&basis, &[1.0, 2.0, 3.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn project_fixes_span_members() {
        let vocab = random_symmetric(6, 11);
        let b = spectral_basis(&vocab, 0.8).unwrap();
        let coeffs: Vec<f64> = (0..b.retained()).map(|i| (i as f64) - 1.5).collect();
        let x = b.basis().mul_vec(&coeffs).unwrap();
        let px = project(&b, &x).unwrap();
        let nx = norm(&x).max(1.0);
        for i in 0..x.len() {
            assert!((px[i] - x[i]).abs() <= 1e-9 * nx);
        }
    }

    proptest! {
        #[test]
        fn projector_idempotent_and_contractive(seed in 0u64..500, dim in 3usize..10) {
            let vocab = random_symmetric(dim, seed);
            let basis = spectral_basis(&vocab, 0.85).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let px = project(&basis, &x).unwrap();
            let ppx = project(&basis, &px).unwrap();
            let nx = norm(&x);
            for i in 0..dim {
                prop_assert!((ppx[i] - px[i]).abs() <= 1e-9 * nx.max(1.0));
            }
            prop_assert!(norm(&px) <= nx + 1e-9);
        }

        #[test]
        fn eig_reconstruction_random(seed in 0u64..200, dim in 2usize..17) {
            let m = random_symmetric(dim, seed);
            let (vals, vecs) = sym_eig(&m).unwrap();
            prop_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let rec = reconstruct(&vals, &vecs);
            let mut err = 0.0f64;
            for i in 0..m.data.len() {
                err += (m.data[i] - rec.data[i]).powi(2);
            }
            prop_assert!(err.sqrt() <= 1e-7 * m.frobenius_norm());
        }

        #[test]
        fn energy_bound_is_tight(seed in 0u64..200, dim in 2usize..9, energy in 0.3f64..0.999) {
            let vocab = random_symmetric(dim + 2, seed);
            // Rectangular vocab: more rows than columns.
            let vocab = Matrix::from_vec(dim + 2, dim, vocab.data()[..(dim + 2) * dim].to_vec()).unwrap();
            let b = spectral_basis(&vocab, energy).unwrap();
            let total: f64 = b.eigenvalues().iter().sum();
            let kept: f64 = b.eigenvalues()[..b.retained()].iter().sum();
            prop_assert!(kept >= energy * total);
            if b.retained() > 1 {
                let kept_less: f64 = b.eigenvalues()[..b.retained() - 1].iter().sum();
                prop_assert!(kept_less < energy * total);
            }
        }
    }
}
