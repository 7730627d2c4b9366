//! JSON file formats. Complex numbers are `[re, im]` pairs and matrices are
//! row-major lists of rows.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMat, CVec, Tolerances};
use crate::optuple::{OperatorTuple, TupleError};

pub type Pair = [f64; 2];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Tuple(#[from] TupleError),
}

fn field(field: &str, message: impl Into<String>) -> FormatError {
    FormatError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn pair(c: Complex64) -> Pair {
    [c.re, c.im]
}

pub fn complex(p: Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

pub fn matrix_rows(a: &CMat) -> Vec<Vec<Pair>> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| pair(a[(r, c)])).collect())
        .collect()
}

/// Parses a row-major matrix. `cols` is needed when there are no rows.
pub fn rows_matrix(
    name: &str,
    rows: &[Vec<Pair>],
    cols: Option<usize>,
) -> Result<CMat, FormatError> {
    let ncols = rows.first().map(|r| r.len()).or(cols).unwrap_or(0);
    let mut out = CMat::zeros(rows.len(), ncols);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(field(
                name,
                format!("row {r} has {} entries, expected {ncols}", row.len()),
            ));
        }
        for (c, &p) in row.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(field(name, format!("non-finite entry at ({r}, {c})")));
            }
            out[(r, c)] = complex(p);
        }
    }
    Ok(out)
}

pub fn vector_pairs(v: &CVec) -> Vec<Pair> {
    v.iter().map(|&c| pair(c)).collect()
}

pub fn pairs_vector(name: &str, pairs: &[Pair]) -> Result<CVec, FormatError> {
    if pairs.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(field(name, "non-finite entry"));
    }
    Ok(CVec::from_iterator(
        pairs.len(),
        pairs.iter().map(|&p| complex(p)),
    ))
}

/// `{"n", "dim", "matrices"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleFile {
    pub n: usize,
    pub dim: usize,
    pub matrices: Vec<Vec<Vec<Pair>>>,
}

impl TupleFile {
    pub fn from_tuple(t: &OperatorTuple) -> Self {
        TupleFile {
            n: t.n(),
            dim: t.dim(),
            matrices: t.mats().iter().map(matrix_rows).collect(),
        }
    }

    pub fn matrices(&self) -> Result<Vec<CMat>, FormatError> {
        if self.matrices.len() != self.n {
            return Err(field(
                "matrices",
                format!("{} matrices given but n = {}", self.matrices.len(), self.n),
            ));
        }
        self.matrices
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                let name = format!("matrices[{i}]");
                let a = rows_matrix(&name, rows, Some(self.dim))?;
                if a.nrows() != self.dim || a.ncols() != self.dim {
                    return Err(field(
                        &name,
                        format!(
                            "is {}×{}, expected {d}×{d}",
                            a.nrows(),
                            a.ncols(),
                            d = self.dim
                        ),
                    ));
                }
                Ok(a)
            })
            .collect()
    }

    pub fn to_tuple(&self, tol: &Tolerances) -> Result<OperatorTuple, FormatError> {
        Ok(OperatorTuple::new(self.matrices()?, tol)?)
    }
}

pub fn parse_tuple_file(text: &str) -> Result<TupleFile, FormatError> {
    Ok(serde_json::from_str(text)?)
}
