use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Tolerance on row sums accepted as "on the simplex".
pub const ROW_SUM_TOL: f64 = 1e-8;

/// An n × p data matrix whose rows are compositions, with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    names: Vec<String>,
    values: Array2<f64>,
}

impl CompositionMatrix {
    pub fn new(names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Dimension {
                expected: names.len(),
                found: values.ncols(),
            });
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::DuplicateLabel(name.clone()));
            }
        }
        Ok(Self { names, values })
    }

    /// Builds a matrix from rows, naming the columns `X1..Xp`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let names = (1..=p).map(|j| format!("X{j}")).collect();
        let mut flat = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let values = Array2::from_shape_vec((rows.len(), p), flat).expect("shape checked");
        Self::new(names, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Checks that every entry is strictly inside (0, 1).
    pub fn check_interior(&self) -> Result<()> {
        check_interior(self.values.view())
    }

    /// Copy of the matrix without row `i`.
    pub fn without_row(&self, i: usize) -> Self {
        let keep: Vec<usize> = (0..self.nrows()).filter(|&r| r != i).collect();
        Self {
            names: self.names.clone(),
            values: self.values.select(ndarray::Axis(0), &keep),
        }
    }
}

pub(crate) fn check_interior(values: ArrayView2<'_, f64>) -> Result<()> {
    for (row, r) in values.rows().into_iter().enumerate() {
        for (component, &value) in r.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::Boundary { row, component, value });
            }
        }
    }
    Ok(())
}
