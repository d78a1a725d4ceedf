//! In-batch contrastive loss (graph → text) and softmax cross-entropy.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Output of [`contrastive_loss_with_grad`].
#[derive(Debug, Clone)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub d_graph: Vec<Array1<f64>>,
    pub d_text: Vec<Array1<f64>>,
}

fn check_batch(z_graph: &[Array1<f64>], z_text: &[Array1<f64>], tau: f64) -> Result<()> {
    if z_graph.is_empty() || z_graph.len() != z_text.len() {
        return Err(Error::InvalidArgument(format!(
            "batch sizes {} and {}",
            z_graph.len(),
            z_text.len()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    let width = z_graph[0].len();
    for v in z_graph.iter().chain(z_text) {
        if v.len() != width {
            return Err(Error::Dimension("embedding widths differ within the batch".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding in contrastive batch".into()));
        }
    }
    Ok(())
}

/// Row-wise softmax of `logits`, plus `Σ_i (logsumexp_i − logits[i][i])`.
fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        total += max + sum.ln() - logits[[i, i]];
    }
    (probs, total)
}

fn similarity(z_graph: &[Array1<f64>], z_text: &[Array1<f64>], tau: f64) -> Array2<f64> {
    let b = z_graph.len();
    Array2::from_shape_fn((b, b), |(i, j)| z_graph[i].dot(&z_text[j]) / tau)
}

/// `−(1/B) Σ_i log softmax_j(z_graph[i] · z_text[j] / τ)[i]`.
pub fn contrastive_loss(z_graph: &[Array1<f64>], z_text: &[Array1<f64>], tau: f64) -> Result<f64> {
    check_batch(z_graph, z_text, tau)?;
    let (_, total) = softmax_rows(&similarity(z_graph, z_text, tau));
    Ok(total / z_graph.len() as f64)
}

pub fn contrastive_loss_with_grad(z_graph: &[Array1<f64>], z_text: &[Array1<f64>], tau: f64) -> Result<ContrastiveGrad> {
    check_batch(z_graph, z_text, tau)?;
    let b = z_graph.len();
    let (mut d_logits, total) = softmax_rows(&similarity(z_graph, z_text, tau));
    for i in 0..b {
        d_logits[[i, i]] -= 1.0;
    }
    d_logits /= b as f64 * tau;
    let width = z_graph[0].len();
    let mut d_graph = vec![Array1::zeros(width); b];
    let mut d_text = vec![Array1::zeros(width); b];
    for i in 0..b {
        for j in 0..b {
            let g = d_logits[[i, j]];
            d_graph[i].scaled_add(g, &z_text[j]);
            d_text[j].scaled_add(g, &z_graph[i]);
        }
    }
    Ok(ContrastiveGrad {
        loss: total / b as f64,
        d_graph,
        d_text,
    })
}

/// Mean softmax cross-entropy of `logits` rows against class targets, and
/// its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != targets.len() || targets.is_empty() {
        return Err(Error::InvalidArgument("logits and targets disagree".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::Label(format!("target {t} for {} classes", logits.ncols())));
    }
    let b = targets.len() as f64;
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss += max + sum.ln() - logits[[i, targets[i]]];
    }
    for (i, &t) in targets.iter().enumerate() {
        probs[[i, t]] -= 1.0;
    }
    probs /= b;
    Ok((loss / b, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_similarities_give_ln_b() {
        for b in [2usize, 3, 7] {
            let zg = vec![array![1.0, 0.0]; b];
            let zt = vec![array![0.5, 0.5]; b];
            let loss = contrastive_loss(&zg, &zt, 0.07).unwrap();
            assert!((loss - (b as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn plus_minus_one_closed_form() {
        let zg = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let zt = vec![array![1.0, -1.0], array![-1.0, 1.0]];
        // zg_i·zt_i = 1, zg_i·zt_j = −1
        let loss = contrastive_loss(&zg, &zt, 1.0).unwrap();
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.126_928_011_042_973).abs() < 1e-12);
    }

    #[test]
    fn vanishing_temperature_on_dominant_diagonal() {
        let zg = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let zt = zg.clone();
        let loss = contrastive_loss(&zg, &zt, 1e-3).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let zg = vec![array![f64::NAN]];
        assert!(matches!(contrastive_loss(&zg, &[array![1.0]], 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let zg: Vec<_> = (0..3).map(|i| Array1::from_shape_fn(4, |j| ((i * 4 + j) as f64).sin())).collect();
        let zt: Vec<_> = (0..3).map(|i| Array1::from_shape_fn(4, |j| ((i * 7 + j) as f64).cos())).collect();
        let tau = 0.5;
        let g = contrastive_loss_with_grad(&zg, &zt, tau).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..4 {
                let mut p = zg.clone();
                p[i][k] += h;
                let mut m = zg.clone();
                m[i][k] -= h;
                let fd = (contrastive_loss(&p, &zt, tau).unwrap() - contrastive_loss(&m, &zt, tau).unwrap()) / (2.0 * h);
                assert!((fd - g.d_graph[i][k]).abs() < 1e-8);
                let mut p = zt.clone();
                p[i][k] += h;
                let mut m = zt.clone();
                m[i][k] -= h;
                let fd = (contrastive_loss(&zg, &p, tau).unwrap() - contrastive_loss(&zg, &m, tau).unwrap()) / (2.0 * h);
                assert!((fd - g.d_text[i][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
        let targets = [1, 0];
        let (loss, grad) = cross_entropy_with_grad(&logits, &targets).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut m = logits.clone();
                m[[i, j]] -= h;
                let fd = (cross_entropy_with_grad(&p, &targets).unwrap().0
                    - cross_entropy_with_grad(&m, &targets).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad[[i, j]]).abs() < 1e-8);
            }
        }
        assert!(loss > 0.0);
    }
}
