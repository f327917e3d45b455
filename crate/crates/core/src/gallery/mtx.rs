//! Matrix Market exchange format (coordinate and array bodies).

use std::fmt;
use std::io::Write;

use faer::{c64, Mat, MatRef};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MmErrorKind {
    Header(String),
    SizeLine(String),
    Entry(String),
    IndexOutOfRange { row: usize, col: usize },
    CountMismatch { expected: usize, found: usize },
}

impl fmt::Display for MmErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Header(s) => write!(f, "bad header: {s}"),
            Self::SizeLine(s) => write!(f, "bad size line: {s}"),
            Self::Entry(s) => write!(f, "bad entry: {s}"),
            Self::IndexOutOfRange { row, col } => write!(f, "index ({row}, {col}) out of range"),
            Self::CountMismatch { expected, found } => {
                write!(f, "expected {expected} entries, found {found}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("matrix market line {line}: {kind}")]
pub struct MatrixMarketError {
    pub line: usize,
    pub kind: MmErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmField {
    Real,
    Integer,
    Complex,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmSymmetry {
    General,
    Symmetric,
    SkewSymmetric,
    Hermitian,
}

/// Parsed file contents; `entries` holds the stored entries with 0-based indices.
#[derive(Debug, Clone)]
pub struct MatrixMarketData {
    pub nrows: usize,
    pub ncols: usize,
    pub format: MmFormat,
    pub field: MmField,
    pub symmetry: MmSymmetry,
    pub entries: Vec<(usize, usize, c64)>,
}

impl MatrixMarketData {
    fn mirror(&self, i: usize, j: usize, v: c64) -> Option<(usize, usize, c64)> {
        if i == j {
            return None;
        }
        match self.symmetry {
            MmSymmetry::General => None,
            MmSymmetry::Symmetric => Some((j, i, v)),
            MmSymmetry::SkewSymmetric => Some((j, i, -v)),
            MmSymmetry::Hermitian => Some((j, i, v.conj())),
        }
    }

    /// Dense matrix with symmetric storage expanded.
    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if let Some((a, b, w)) = self.mirror(i, j, v) {
                m[(a, b)] += w;
            }
        }
        m
    }

    /// Stored positions, symmetrized for symmetric storage.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(i, j, v) in &self.entries {
            out.push((i, j));
            if let Some((a, b, _)) = self.mirror(i, j, v) {
                out.push((a, b));
            }
        }
        out
    }

    /// Number of stored entries.
    pub fn nnz_stored(&self) -> usize {
        self.entries.len()
    }
}

fn err(line: usize, kind: MmErrorKind) -> MatrixMarketError {
    MatrixMarketError { line, kind }
}

fn parse_header(line: &str) -> Result<(MmFormat, MmField, MmSymmetry), MatrixMarketError> {
    let toks: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(err(1, MmErrorKind::Header(line.trim().to_string())));
    }
    let format = match toks[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(err(1, MmErrorKind::Header(format!("unknown format '{other}'")))),
    };
    let field = match toks[3].as_str() {
        "real" | "double" => MmField::Real,
        "integer" => MmField::Integer,
        "complex" => MmField::Complex,
        "pattern" => MmField::Pattern,
        other => return Err(err(1, MmErrorKind::Header(format!("unknown field '{other}'")))),
    };
    let symmetry = match toks[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        "skew-symmetric" => MmSymmetry::SkewSymmetric,
        "hermitian" => MmSymmetry::Hermitian,
        other => return Err(err(1, MmErrorKind::Header(format!("unknown symmetry '{other}'")))),
    };
    if format == MmFormat::Array && field == MmField::Pattern {
        return Err(err(
            1,
            MmErrorKind::Header("pattern field requires coordinate format".into()),
        ));
    }
    if symmetry == MmSymmetry::Hermitian && field != MmField::Complex {
        return Err(err(
            1,
            MmErrorKind::Header("hermitian symmetry requires complex field".into()),
        ));
    }
    Ok((format, field, symmetry))
}

fn parse_value(toks: &[&str], field: MmField, line: usize) -> Result<c64, MatrixMarketError> {
    let num = |s: &str| -> Result<f64, MatrixMarketError> {
        s.parse::<f64>()
            .map_err(|_| err(line, MmErrorKind::Entry(format!("'{s}' is not a number"))))
    };
    let want = match field {
        MmField::Pattern => 0,
        MmField::Real | MmField::Integer => 1,
        MmField::Complex => 2,
    };
    if toks.len() != want {
        return Err(err(
            line,
            MmErrorKind::Entry(format!("expected {want} value field(s), found {}", toks.len())),
        ));
    }
    Ok(match field {
        MmField::Pattern => c64::new(1.0, 0.0),
        MmField::Real | MmField::Integer => c64::new(num(toks[0])?, 0.0),
        MmField::Complex => c64::new(num(toks[0])?, num(toks[1])?),
    })
}

fn parse_index(s: &str, line: usize) -> Result<usize, MatrixMarketError> {
    s.parse::<usize>()
        .map_err(|_| err(line, MmErrorKind::Entry(format!("'{s}' is not an index"))))
}

/// Parse Matrix Market text. Line numbers in errors are 1-based.
pub fn parse_matrix_market(text: &str) -> Result<MatrixMarketData, MatrixMarketError> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| err(1, MmErrorKind::Header("empty input".into())))?;
    let (format, field, symmetry) = parse_header(first)?;

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_no, size_line) = body
        .next()
        .ok_or_else(|| err(text.lines().count() + 1, MmErrorKind::SizeLine("missing".into())))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| parse_index(t, size_no))
        .collect::<Result<_, _>>()
        .map_err(|_| err(size_no, MmErrorKind::SizeLine(size_line.trim().to_string())))?;
    let want_dims = if format == MmFormat::Coordinate { 3 } else { 2 };
    if dims.len() != want_dims {
        return Err(err(size_no, MmErrorKind::SizeLine(size_line.trim().to_string())));
    }
    let (nrows, ncols) = (dims[0], dims[1]);
    if symmetry != MmSymmetry::General && nrows != ncols {
        return Err(err(
            size_no,
            MmErrorKind::SizeLine("symmetric storage needs a square matrix".into()),
        ));
    }

    // array bodies list the stored triangle column by column
    let array_positions: Vec<(usize, usize)> = match (format, symmetry) {
        (MmFormat::Coordinate, _) => Vec::new(),
        (MmFormat::Array, MmSymmetry::General) => (0..ncols).flat_map(|j| (0..nrows).map(move |i| (i, j))).collect(),
        (MmFormat::Array, MmSymmetry::SkewSymmetric) => {
            (0..ncols).flat_map(|j| (j + 1..nrows).map(move |i| (i, j))).collect()
        }
        (MmFormat::Array, _) => (0..ncols).flat_map(|j| (j..nrows).map(move |i| (i, j))).collect(),
    };
    let expected = match format {
        MmFormat::Coordinate => dims[2],
        MmFormat::Array => array_positions.len(),
    };

    let mut entries = Vec::with_capacity(expected);
    let mut last_line = size_no;
    for (no, line) in body {
        last_line = no;
        if entries.len() == expected {
            return Err(err(
                no,
                MmErrorKind::CountMismatch {
                    expected,
                    found: expected + 1,
                },
            ));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match format {
            MmFormat::Coordinate => {
                if toks.len() < 2 {
                    return Err(err(no, MmErrorKind::Entry(line.trim().to_string())));
                }
                let row = parse_index(toks[0], no)?;
                let col = parse_index(toks[1], no)?;
                if row == 0 || col == 0 || row > nrows || col > ncols {
                    return Err(err(no, MmErrorKind::IndexOutOfRange { row, col }));
                }
                let (i, j) = (row - 1, col - 1);
                let upper = match symmetry {
                    MmSymmetry::General => false,
                    MmSymmetry::SkewSymmetric => i <= j,
                    _ => i < j,
                };
                if upper {
                    return Err(err(
                        no,
                        MmErrorKind::Entry(format!("entry ({row}, {col}) outside the stored lower triangle")),
                    ));
                }
                let v = parse_value(&toks[2..], field, no)?;
                entries.push((i, j, v));
            }
            MmFormat::Array => {
                let (i, j) = array_positions[entries.len()];
                let v = parse_value(&toks, field, no)?;
                entries.push((i, j, v));
            }
        }
    }
    if entries.len() != expected {
        return Err(err(
            last_line + 1,
            MmErrorKind::CountMismatch {
                expected,
                found: entries.len(),
            },
        ));
    }
    Ok(MatrixMarketData {
        nrows,
        ncols,
        format,
        field,
        symmetry,
        entries,
    })
}

/// Write the nonzero entries of `m` as a general coordinate file; the field is
/// `real` when every entry is real. Values use the shortest round-trip form.
pub fn write_matrix_market(mut w: impl Write, m: MatRef<'_, c64>, comment: &str) -> std::io::Result<()> {
    let real = crate::linalg::is_real(m);
    let field = if real { "real" } else { "complex" };
    writeln!(w, "%%MatrixMarket matrix coordinate {field} general")?;
    for line in comment.lines() {
        writeln!(w, "% {line}")?;
    }
    let zero = c64::new(0.0, 0.0);
    let nnz = (0..m.ncols())
        .map(|j| (0..m.nrows()).filter(|&i| m[(i, j)] != zero).count())
        .sum::<usize>();
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v == zero {
                continue;
            }
            if real {
                writeln!(w, "{} {} {:?}", i + 1, j + 1, v.re)?;
            } else {
                writeln!(w, "{} {} {:?} {:?}", i + 1, j + 1, v.re, v.im)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_coordinate_file() {
        let text = "%%MatrixMarket matrix coordinate real general\n% two entries\n3 3 2\n1 2 5.5\n3 1 -2\n";
        let d = parse_matrix_market(text).unwrap();
        let m = d.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = match (i, j) {
                    (0, 1) => 5.5,
                    (2, 0) => -2.0,
                    _ => 0.0,
                };
                assert_eq!(m[(i, j)], c64::new(want, 0.0));
            }
        }
    }

    #[test]
    fn symmetric_expansion_and_pattern() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 2\n3 1 4\n2 2 1\n";
        let d = parse_matrix_market(text).unwrap();
        let m = d.to_dense();
        assert_eq!(m[(0, 2)], c64::new(4.0, 0.0));
        assert_eq!(m[(2, 0)], c64::new(4.0, 0.0));
        let mut p = d.pattern();
        p.sort();
        assert_eq!(p, vec![(0, 0), (0, 2), (1, 1), (2, 0)]);
    }

    #[test]
    fn complex_array_file() {
        let text = "%%MatrixMarket matrix array complex general\n2 2\n1 0\n0 1\n2 0\n3 -1\n";
        let m = parse_matrix_market(text).unwrap().to_dense();
        assert_eq!(m[(1, 0)], c64::new(0.0, 1.0));
        assert_eq!(m[(0, 1)], c64::new(2.0, 0.0));
        assert_eq!(m[(1, 1)], c64::new(3.0, -1.0));
    }

    #[test]
    fn symmetric_array_file() {
        let text = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n";
        let m = parse_matrix_market(text).unwrap().to_dense();
        assert_eq!(m[(0, 1)], c64::new(2.0, 0.0));
        assert_eq!(m[(1, 0)], c64::new(2.0, 0.0));
        assert_eq!(m[(1, 1)], c64::new(3.0, 0.0));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_header = "%%MatrixMarket tensor coordinate real general\n1 1 1\n1 1 1\n";
        let e = parse_matrix_market(bad_header).unwrap_err();
        assert_eq!(e.line, 1);
        assert!(matches!(e.kind, MmErrorKind::Header(_)));

        let out_of_range = "%%MatrixMarket matrix coordinate real general\n2 2 1\n% c\n3 1 1.0\n";
        let e = parse_matrix_market(out_of_range).unwrap_err();
        assert_eq!(e.line, 4);
        assert_eq!(e.kind, MmErrorKind::IndexOutOfRange { row: 3, col: 1 });

        let short = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        let e = parse_matrix_market(short).unwrap_err();
        assert_eq!(e.kind, MmErrorKind::CountMismatch { expected: 2, found: 1 });
        assert_eq!(e.line, 4);

        let long = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1.0\n2 2 1.0\n";
        let e = parse_matrix_market(long).unwrap_err();
        assert_eq!(e.line, 4);
        assert!(matches!(e.kind, MmErrorKind::CountMismatch { .. }));

        let bad_value = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n";
        let e = parse_matrix_market(bad_value).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(matches!(e.kind, MmErrorKind::Entry(_)));

        let bad_size = "%%MatrixMarket matrix coordinate real general\n2 2\n";
        let e = parse_matrix_market(bad_size).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, MmErrorKind::SizeLine(_)));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Mat::<c64>::from_fn(4, 4, |i, j| {
            if (i + j) % 3 == 0 {
                c64::new(0.1 * (i as f64 + 1.0) / (j as f64 + 3.0), 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, m.as_ref(), "round trip").unwrap();
        let back = parse_matrix_market(std::str::from_utf8(&buf).unwrap())
            .unwrap()
            .to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(back[(i, j)].re.to_bits(), m[(i, j)].re.to_bits());
            }
        }
    }
}
