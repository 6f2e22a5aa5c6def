use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::CfError;
use crate::corpus::{CatalogId, InteractionMatrix, ItemDatabase, ItemId};

const MAGIC: &[u8; 8] = b"CRAGWMAT";

/// Item-to-catalog similarity weights `W` (|items| x |catalog|) with the
/// optional popularity reweighting applied at score time.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityModel {
    w: DMatrix<f64>,
    lambda: f64,
    reid: Vec<ItemId>,
    catalog_of: Vec<Option<CatalogId>>,
    pop_weights: Option<Vec<f64>>,
    beta: f64,
}

impl SimilarityModel {
    /// Wraps an existing weight matrix. `reid[j]` is the item id of catalog column `j`.
    pub fn from_parts(w: DMatrix<f64>, lambda: f64, reid: Vec<ItemId>) -> Result<Self, CfError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(CfError::InvalidLambda(lambda));
        }
        if w.ncols() != reid.len() {
            return Err(CfError::DimensionMismatch {
                what: "catalog columns",
                expected: reid.len(),
                found: w.ncols(),
            });
        }
        let mut catalog_of = vec![None; w.nrows()];
        for (j, item) in reid.iter().enumerate() {
            let slot = catalog_of.get_mut(item.index()).ok_or(CfError::DimensionMismatch {
                what: "catalog item id",
                expected: w.nrows(),
                found: item.index(),
            })?;
            if slot.is_some() {
                return Err(CfError::ModelFormat(format!("item {} mapped to two catalog columns", item.0)));
            }
            *slot = Some(CatalogId(j as u32));
        }
        Ok(Self {
            w,
            lambda,
            reid,
            catalog_of,
            pop_weights: None,
            beta: 0.0,
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_items(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_catalog(&self) -> usize {
        self.w.ncols()
    }

    pub fn reid(&self) -> &[ItemId] {
        &self.reid
    }

    pub fn catalog_id(&self, item: ItemId) -> Option<CatalogId> {
        self.catalog_of.get(item.index()).copied().flatten()
    }

    pub fn pop_weights(&self) -> Option<&[f64]> {
        self.pop_weights.as_deref()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Attaches popularity weights used as `score[j] *= weights[j]^beta`.
    pub fn with_popularity(mut self, weights: Vec<f64>, beta: f64) -> Result<Self, CfError> {
        if weights.len() != self.n_catalog() {
            return Err(CfError::DimensionMismatch {
                what: "popularity weights",
                expected: self.n_catalog(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) || !beta.is_finite() {
            return Err(CfError::InvalidPopularity);
        }
        self.pop_weights = Some(weights);
        self.beta = beta;
        Ok(self)
    }

    /// `max_j |W[reid(j), j]|`.
    pub fn max_constraint_violation(&self) -> f64 {
        self.reid
            .iter()
            .enumerate()
            .map(|(j, i)| self.w[(i.index(), j)].abs())
            .fold(0.0, f64::max)
    }

    /// Writes the `CRAGWMAT` file: header, then `W` row-major as f64 LE.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.w.nrows() as u32).to_le_bytes())?;
        out.write_all(&(self.w.ncols() as u32).to_le_bytes())?;
        out.write_all(&self.lambda.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.w.ncols() * 8);
        for r in 0..self.w.nrows() {
            buf.clear();
            for c in 0..self.w.ncols() {
                buf.extend_from_slice(&self.w[(r, c)].to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()
    }

    /// Reads a model file; the catalog mapping comes from `db`.
    pub fn read_from<R: Read>(mut input: R, db: &ItemDatabase) -> Result<Self, CfError> {
        let mut header = [0u8; 24];
        input.read_exact(&mut header).map_err(|e| CfError::ModelFormat(format!("header: {e}")))?;
        if &header[..8] != MAGIC {
            return Err(CfError::ModelFormat("bad magic".into()));
        }
        let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let lambda = f64::from_le_bytes(header[16..24].try_into().unwrap());
        if rows != db.len() || cols != db.catalog_len() {
            return Err(CfError::ModelFormat(format!(
                "model is {rows}x{cols} but database has {} items and {} catalog items",
                db.len(),
                db.catalog_len()
            )));
        }
        let mut bytes = vec![0u8; rows * cols * 8];
        input.read_exact(&mut bytes).map_err(|e| CfError::ModelFormat(format!("body: {e}")))?;
        let mut w = DMatrix::zeros(rows, cols);
        for (k, chunk) in bytes.chunks_exact(8).enumerate() {
            w[(k / cols, k % cols)] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Self::from_parts(w, lambda, db.catalog_items().to_vec())
    }
}

/// Gram matrix `RᵀR` of a binary interaction matrix.
pub fn gram(r: &InteractionMatrix) -> DMatrix<f64> {
    let n = r.n_items();
    let mut g = DMatrix::zeros(n, n);
    for row in r.rows() {
        for a in row {
            for b in row {
                g[(a.index(), b.index())] += 1.0;
            }
        }
    }
    g
}

/// Fits `W` minimizing `‖R_Q − R W‖² + λ‖W‖²` subject to `W[reid(j), j] = 0`.
///
/// With `P = (RᵀR + λI)⁻¹` the constrained column has the closed form
/// `w_j = e_i − P[:, i] / P[i, i]` for `i = reid(j)`.
pub fn fit_ease_catalog(r: &InteractionMatrix, reid: &[ItemId], lambda: f64) -> Result<SimilarityModel, CfError> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(CfError::InvalidLambda(lambda));
    }
    let n = r.n_items();
    if let Some(bad) = reid.iter().find(|i| i.index() >= n) {
        return Err(CfError::DimensionMismatch {
            what: "catalog item id",
            expected: n,
            found: bad.index(),
        });
    }
    let mut g = gram(r);
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    let p = g.cholesky().ok_or(CfError::Singular)?.inverse();

    let columns: Vec<Vec<f64>> = reid
        .par_iter()
        .map(|item| {
            let i = item.index();
            let d = p[(i, i)];
            let mut col: Vec<f64> = p.column(i).iter().map(|v| -v / d).collect();
            col[i] = 0.0;
            col
        })
        .collect();
    let mut w = DMatrix::zeros(n, reid.len());
    for (j, col) in columns.into_iter().enumerate() {
        w.set_column(j, &nalgebra::DVector::from_vec(col));
    }
    SimilarityModel::from_parts(w, lambda, reid.to_vec())
}

pub fn fit_ease(r: &InteractionMatrix, db: &ItemDatabase, lambda: f64) -> Result<SimilarityModel, CfError> {
    if r.n_items() != db.len() {
        return Err(CfError::DimensionMismatch {
            what: "interaction columns",
            expected: db.len(),
            found: r.n_items(),
        });
    }
    fit_ease_catalog(r, db.catalog_items(), lambda)
}
