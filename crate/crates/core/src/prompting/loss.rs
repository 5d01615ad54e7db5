//! Triplet hinge on L2-normalized features with Euclidean distance.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureVector};

/// Default hinge margin.
pub const DEFAULT_MARGIN: f64 = 0.2;

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `max(0, margin + |s - p| - |s - n|)` after normalizing each vector.
pub fn triplet_loss(
    sketch: &FeatureVector,
    positive: &FeatureVector,
    negative: &FeatureVector,
    margin: f64,
) -> Result<f64> {
    triplet_loss_values(&sketch.values, &positive.values, &negative.values, margin)
}

pub fn triplet_loss_values(s: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::Config(format!("margin {margin} must be positive")));
    }
    if s.len() != p.len() || s.len() != n.len() {
        return Err(Error::Shape(format!(
            "triplet dims differ: {}, {}, {}",
            s.len(),
            p.len(),
            n.len()
        )));
    }
    let (s, p, n) = (normalized(s), normalized(p), normalized(n));
    Ok((margin + (euclidean(&s, &p) - euclidean(&s, &n))).max(0.0))
}

/// Batch mean of the hinge over `(B, d)` rows; rows are normalized here.
pub fn triplet_loss_tensor(s: &Tensor, p: &Tensor, n: &Tensor, margin: f64) -> Result<Tensor> {
    if s.dims() != p.dims() || s.dims() != n.dims() {
        return Err(Error::Shape(format!(
            "triplet dims differ: {:?}, {:?}, {:?}",
            s.dims(),
            p.dims(),
            n.dims()
        )));
    }
    let (s, p, n) = (l2_normalize(s)?, l2_normalize(p)?, l2_normalize(n)?);
    let dist = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        Ok(((a - b)?.sqr()?.sum(D::Minus1)? + 1e-18)?.sqrt()?)
    };
    let hinge = ((dist(&s, &p)? - dist(&s, &n)?)? + margin)?.relu()?;
    Ok(hinge.mean_all()?)
}
