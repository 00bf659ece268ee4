//! Principal-component projection of mean text embeddings.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::modeling::ClassifierModel;

/// Mean classifier embedding row of each text.
pub fn mean_embeddings(texts: &[Vec<TokenId>], classifier: &ClassifierModel) -> Result<DMatrix<f64>> {
    let table = classifier.embedding_table();
    let d = table.cols();
    let mut x = DMatrix::zeros(texts.len(), d);
    for (i, t) in texts.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::Invalid(format!("text {i} is empty")));
        }
        for &id in t {
            if id >= table.rows() {
                return Err(Error::Vocab { id, size: table.rows() });
            }
            for c in 0..d {
                x[(i, c)] += table.get(id, c) as f64;
            }
        }
        for c in 0..d {
            x[(i, c)] /= t.len() as f64;
        }
    }
    Ok(x)
}

/// Projects mean-centered rows of `x` onto the top `dim` principal axes.
/// Each axis is signed so its largest-magnitude loading is positive.
pub fn project_rows(x: &DMatrix<f64>, dim: usize) -> Result<Vec<Vec<f64>>> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least two texts".into()));
    }
    if dim == 0 || dim > d {
        return Err(Error::Invalid(format!("PCA dimension {dim} outside 1..={d}")));
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    if cov.trace() <= 1e-18 {
        return Err(Error::UndefinedMetric("all texts have the same representation".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = DMatrix::zeros(d, dim);
    for (k, &j) in order.iter().take(dim).enumerate() {
        let mut v = eig.eigenvectors.column(j).into_owned();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        axes.set_column(k, &v);
    }
    let proj = centered * axes;
    Ok(proj.row_iter().map(|r| r.iter().copied().collect()).collect())
}

pub fn pca_project(texts: &[Vec<TokenId>], classifier: &ClassifierModel, dim: usize) -> Result<Vec<Vec<f64>>> {
    project_rows(&mean_embeddings(texts, classifier)?, dim)
}
