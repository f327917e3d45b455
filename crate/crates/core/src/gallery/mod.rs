//! Test matrices and Matrix Market input.

mod mtx;

use std::path::Path;

use faer::{c64, Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StabError};
use crate::linalg::{from_real, thin_q};
use crate::structure::{SparsityMask, StructurePattern};

pub use mtx::{
    parse_matrix_market, write_matrix_market, MatrixMarketData, MatrixMarketError, MmErrorKind, MmField, MmFormat,
    MmSymmetry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Explicit,
    Formula,
    ExternalFile,
    Seeded,
}

#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub name: String,
    pub matrix: Mat<c64>,
    pub default_structure: Option<StructurePattern>,
    pub provenance: Provenance,
}

/// Names accepted by [`by_name`].
pub const NAMES: &[&str] = &["illustrative", "grcar", "smoke", "smoke_like", "pentadiagonal"];

const ILLUSTRATIVE: [[i8; 10]; 10] = [
    [0, 1, 1, 1, -1, 0, -1, 0, 0, 0],
    [1, -1, 0, 1, 1, 0, 1, 0, 0, 0],
    [-1, 0, -1, -1, -1, 1, 1, 1, 0, 0],
    [1, 0, 0, -1, 1, -1, -1, 1, 0, 0],
    [0, 0, -1, 1, 0, 1, 1, -1, 0, 0],
    [0, -1, 1, 1, -1, 0, 0, 1, 1, 0],
    [-1, 1, -1, 1, 1, 0, -1, 0, 1, 1],
    [0, 0, 1, -1, -1, 1, 1, 1, -1, 1],
    [0, 0, 0, 0, 0, 0, 0, -1, 1, -1],
    [0, 0, 0, 0, 0, 0, 0, 0, -1, 1],
];

/// The 10 x 10 integer matrix with six unstable eigenvalues.
pub fn illustrative() -> Mat<c64> {
    from_real(10, 10, |i, j| ILLUSTRATIVE[i][j] as f64)
}

/// Grcar matrix: -1 below the diagonal, 1 on the diagonal and three superdiagonals.
pub fn grcar(n: usize) -> Result<Mat<c64>> {
    if n < 5 {
        return Err(StabError::Precondition(format!("grcar needs n >= 5, got {n}")));
    }
    Ok(from_real(n, n, |i, j| {
        let d = j as isize - i as isize;
        match d {
            -1 => -1.0,
            0..=3 => 1.0,
            _ => 0.0,
        }
    }))
}

/// Roots of unity on the diagonal, a unit superdiagonal and a unit corner.
pub fn smoke(n: usize) -> Result<Mat<c64>> {
    if n < 2 {
        return Err(StabError::Precondition(format!("smoke needs n >= 2, got {n}")));
    }
    let mut m = Mat::<c64>::zeros(n, n);
    for j in 1..=n {
        // j = n maps to angle 0 so the last root is exactly 1
        let theta = 2.0 * std::f64::consts::PI * (j % n) as f64 / n as f64;
        m[(j - 1, j - 1)] = c64::new(theta.cos(), theta.sin());
    }
    for i in 0..n - 1 {
        m[(i, i + 1)] = c64::new(1.0, 0.0);
    }
    m[(n - 1, 0)] += c64::new(1.0, 0.0);
    Ok(m)
}

/// Unitary factor of the QR of a seeded complex standard-normal matrix.
pub fn random_unitary(n: usize, seed: u64) -> Mat<c64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut z = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let re = draw();
            let im = draw();
            z[(i, j)] = c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    thin_q(z.as_ref())
}

/// `Q smoke(n) Q*` with a seeded random unitary `Q`.
pub fn smoke_like(n: usize, seed: u64) -> Result<Mat<c64>> {
    let s = smoke(n)?;
    let q = random_unitary(n, seed);
    Ok(&q * &s * q.adjoint())
}

/// Symmetric pentadiagonal Toeplitz matrix with -1/2 on the diagonal.
pub fn pentadiagonal_toeplitz(n: usize) -> Result<Mat<c64>> {
    if n < 3 {
        return Err(StabError::Precondition(format!("pentadiagonal needs n >= 3, got {n}")));
    }
    Ok(from_real(n, n, |i, j| match (i as isize - j as isize).abs() {
        0 => -0.5,
        1 | 2 => 1.0,
        _ => 0.0,
    }))
}

/// `A - sigma I`.
pub fn shift(a: MatRef<'_, c64>, sigma: f64) -> Mat<c64> {
    let mut m = a.to_owned();
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] -= c64::new(sigma, 0.0);
    }
    m
}

/// Build a named gallery matrix. `n` overrides the default size where the
/// matrix family has one.
pub fn by_name(name: &str, n: Option<usize>, seed: u64) -> Result<GalleryEntry> {
    let key = name.to_ascii_lowercase().replace('-', "_");
    let (matrix, default_structure, provenance, label) = match key.as_str() {
        "illustrative" => {
            if let Some(n) = n.filter(|&n| n != 10) {
                return Err(StabError::Precondition(format!(
                    "illustrative matrix is 10 x 10, got n = {n}"
                )));
            }
            (illustrative(), None, Provenance::Explicit, "illustrative".to_string())
        }
        "grcar" => {
            let n = n.unwrap_or(20);
            (grcar(n)?, None, Provenance::Formula, format!("grcar({n})"))
        }
        "smoke" => {
            let n = n.unwrap_or(20);
            (smoke(n)?, None, Provenance::Formula, format!("smoke({n})"))
        }
        "smoke_like" | "smokelike" => {
            let n = n.unwrap_or(30);
            (
                smoke_like(n, seed)?,
                None,
                Provenance::Seeded,
                format!("smoke_like({n}, seed {seed})"),
            )
        }
        "pentadiagonal" | "pentadiagonal_toeplitz" => {
            let n = n.unwrap_or(20);
            let m = pentadiagonal_toeplitz(n)?;
            let pattern = StructurePattern::pattern_of(m.as_ref());
            (m, Some(pattern), Provenance::Formula, format!("pentadiagonal({n})"))
        }
        _ => {
            return Err(StabError::Precondition(format!(
                "unknown gallery matrix '{name}' (known: {})",
                NAMES.join(", ")
            )))
        }
    };
    Ok(GalleryEntry {
        name: label,
        matrix,
        default_structure,
        provenance,
    })
}

/// Read a Matrix Market file; the default structure is the stored pattern.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<GalleryEntry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let data = parse_matrix_market(&text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    entry_from_data(name, &data)
}

pub fn entry_from_data(name: String, data: &MatrixMarketData) -> Result<GalleryEntry> {
    if data.nrows != data.ncols {
        return Err(StabError::NotSquare {
            rows: data.nrows,
            cols: data.ncols,
        });
    }
    let mask = SparsityMask::from_entries(data.nrows, data.pattern())?;
    Ok(GalleryEntry {
        name,
        matrix: data.to_dense(),
        default_structure: Some(StructurePattern::sparsity(mask)),
        provenance: Provenance::ExternalFile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{count_delta_unstable, eig_triplets, eigenvalues};
    use crate::linalg::{max_abs_diff, orthonormality_defect};

    /// Largest distance under a greedy nearest-neighbour matching.
    fn matching_distance(a: &[c64], b: &[c64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let mut used = vec![false; b.len()];
        let mut worst = 0.0f64;
        for x in a {
            let (k, d) = b
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .map(|(k, y)| (k, (x - y).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            used[k] = true;
            worst = worst.max(d);
        }
        worst
    }

    #[test]
    fn illustrative_entries() {
        let a = illustrative();
        assert_eq!(a[(0, 1)], c64::new(1.0, 0.0));
        assert_eq!(a[(1, 1)], c64::new(-1.0, 0.0));
        assert_eq!(a[(9, 8)], c64::new(-1.0, 0.0));
        let trace: f64 = (0..10).map(|i| a[(i, i)].re).sum();
        assert_eq!(trace, -1.0);
        let spec = eig_triplets(a.as_ref()).unwrap();
        assert_eq!(count_delta_unstable(&spec, 0.0), 6);
    }

    #[test]
    fn grcar_band() {
        let g = grcar(5).unwrap();
        let row = |i: usize| (0..5).map(|j| g[(i, j)].re).collect::<Vec<_>>();
        assert_eq!(row(0), vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(row(4), vec![0.0, 0.0, 0.0, -1.0, 1.0]);
        assert!(grcar(4).is_err());
        let g = grcar(20).unwrap();
        for i in 1..20 {
            for j in 1..20 {
                assert_eq!(g[(i, j)], g[(i - 1, j - 1)]);
            }
        }
        let spec = eig_triplets(g.as_ref()).unwrap();
        assert_eq!(count_delta_unstable(&spec, 1e-3), 20);
    }

    #[test]
    fn smoke_spectrum() {
        for n in [4, 8, 20] {
            let s = smoke(n).unwrap();
            assert_eq!(s[(n - 1, n - 1)], c64::new(1.0, 0.0));
            let r = 2f64.powf(1.0 / n as f64);
            for l in eigenvalues(s.as_ref()).unwrap() {
                assert!((l.norm() - r).abs() < 1e-10, "n = {n}: |{l}| vs {r}");
            }
        }
        // exact spectrum: 9 roots right of the axis, 9 left, 2 on it at +-i r
        let vals = eigenvalues(smoke(20).unwrap().as_ref()).unwrap();
        let right = vals.iter().filter(|l| l.re > 1e-10).count();
        let axis = vals.iter().filter(|l| l.re.abs() <= 1e-10).count();
        assert_eq!((right, axis), (9, 2));
        assert_eq!(right + axis / 2, 10);
    }

    #[test]
    fn smoke_like_is_similar() {
        let q = random_unitary(30, 7);
        assert!(orthonormality_defect(q.as_ref()) < 1e-12);
        let a = eigenvalues(smoke_like(30, 7).unwrap().as_ref()).unwrap();
        let b = eigenvalues(smoke(30).unwrap().as_ref()).unwrap();
        assert!(matching_distance(&a, &b) < 1e-8);
        let again = smoke_like(30, 7).unwrap();
        assert_eq!(max_abs_diff(again.as_ref(), smoke_like(30, 7).unwrap().as_ref()), 0.0);
    }

    #[test]
    fn pentadiagonal_stencil() {
        let p = pentadiagonal_toeplitz(20).unwrap();
        let row: Vec<f64> = (0..5).map(|j| p[(0, j)].re).collect();
        assert_eq!(row, vec![-0.5, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(max_abs_diff(p.as_ref(), p.transpose()), 0.0);
    }

    #[test]
    fn shift_moves_spectrum() {
        let a = illustrative();
        assert_eq!(max_abs_diff(shift(a.as_ref(), 0.0).as_ref(), a.as_ref()), 0.0);
        let x: Vec<c64> = eigenvalues(a.as_ref())
            .unwrap()
            .into_iter()
            .map(|l| l - c64::new(0.75, 0.0))
            .collect();
        let y = eigenvalues(shift(a.as_ref(), 0.75).as_ref()).unwrap();
        assert!(matching_distance(&x, &y) < 1e-10);
    }

    #[test]
    fn lookup() {
        assert_eq!(by_name("grcar", Some(8), 0).unwrap().matrix.nrows(), 8);
        assert!(by_name("pentadiagonal", None, 0).unwrap().default_structure.is_some());
        assert!(by_name("nope", None, 0).is_err());
        assert!(by_name("illustrative", Some(5), 0).is_err());
    }
}
