use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::feature::PromptFeature;
use crate::error::{Error, Result};

/// Relative ridge added to the within-class scatter when it is singular.
pub const LDA_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct LdaResult {
    /// First two discriminant coordinates of every sample.
    pub projection: Vec<[f64; 2]>,
    /// Class centroids in the projected plane.
    pub centroids: Vec<[f64; 2]>,
    /// Nearest-centroid class assignment of every sample.
    pub assignments: Vec<usize>,
    /// Fraction of samples assigned to their own class.
    pub purity: f64,
    pub ridge_applied: bool,
}

/// LDA on flattened prompt features.
pub fn lda_separability(features: &[PromptFeature], labels: &[usize], n_classes: usize) -> Result<LdaResult> {
    let rows: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.flatten().into_iter().map(f64::from).collect())
        .collect();
    lda_separability_vectors(&rows, labels, n_classes)
}

/// LDA on raw vectors: fit, project onto the top two discriminant axes and
/// score nearest-centroid purity there.
pub fn lda_separability_vectors(xs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<LdaResult> {
    if n_classes < 2 {
        return Err(Error::invalid("LDA needs at least 2 classes"));
    }
    if xs.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let d = xs.first().map_or(0, Vec::len);
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::invalid("features must share a nonzero width"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::invalid(format!("label {l} out of range for {n_classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c < 2) {
        return Err(Error::invalid(format!("class {c} has fewer than 2 samples")));
    }

    let n = xs.len() as f64;
    let mut means = vec![DVector::<f64>::zeros(d); n_classes];
    let mut global = DVector::<f64>::zeros(d);
    for (x, &l) in xs.iter().zip(labels) {
        let v = DVector::from_column_slice(x);
        means[l] += &v;
        global += &v;
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        *m /= c as f64;
    }
    global /= n;

    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (x, &l) in xs.iter().zip(labels) {
        let diff = DVector::from_column_slice(x) - &means[l];
        sw.ger(1.0, &diff, &diff, 1.0);
    }
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for (m, &c) in means.iter().zip(&counts) {
        let diff = m - &global;
        sb.ger(c as f64, &diff, &diff, 1.0);
    }

    let mut ridge_applied = false;
    let floor = 1e-12 * sw.diagonal().max();
    let chol = match sw.clone().cholesky() {
        Some(c) if c.l().diagonal().iter().all(|v| v * v > floor) => c,
        _ => {
            let scale = (sw.trace() / d as f64).max(f64::MIN_POSITIVE);
            let delta = LDA_RIDGE * scale;
            log::warn!("within-class scatter is singular; adding ridge {delta:e}");
            ridge_applied = true;
            (sw.clone() + DMatrix::identity(d, d) * delta)
                .cholesky()
                .ok_or_else(|| Error::Numerical {
                    context: "LDA".into(),
                    detail: "regularized scatter is not positive definite".into(),
                })?
        }
    };
    // whiten: L⁻¹ Sb L⁻ᵀ is symmetric
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::Numerical {
            context: "LDA".into(),
            detail: "triangular solve failed".into(),
        })?;
    let m = &linv * &sb * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<DVector<f64>> = order
        .iter()
        .take(2)
        .map(|&i| linv.transpose() * eig.eigenvectors.column(i))
        .collect();

    let project = |x: &Vec<f64>| -> [f64; 2] {
        let v = DVector::from_column_slice(x);
        let mut p = [0.0; 2];
        for (k, a) in axes.iter().enumerate() {
            p[k] = a.dot(&v);
        }
        p
    };
    let projection: Vec<[f64; 2]> = xs.iter().map(project).collect();
    let mut centroids = vec![[0.0f64; 2]; n_classes];
    for (p, &l) in projection.iter().zip(labels) {
        centroids[l][0] += p[0];
        centroids[l][1] += p[1];
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c[0] /= k as f64;
        c[1] /= k as f64;
    }
    let assignments: Vec<usize> = projection
        .iter()
        .map(|p| {
            (0..n_classes)
                .min_by(|&a, &b| {
                    let da = (p[0] - centroids[a][0]).powi(2) + (p[1] - centroids[a][1]).powi(2);
                    let db = (p[0] - centroids[b][0]).powi(2) + (p[1] - centroids[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least two classes")
        })
        .collect();
    let correct = assignments.iter().zip(labels).filter(|(a, l)| a == l).count();
    Ok(LdaResult {
        projection,
        centroids,
        assignments,
        purity: correct as f64 / n,
        ridge_applied,
    })
}
