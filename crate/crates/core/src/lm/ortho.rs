use ndarray::Array1;

use super::params::{Checkpoint, Provenance};
use crate::error::{Error, Result};

pub const UNIT_TOLERANCE: f64 = 1e-6;

pub fn check_unit(direction: &Array1<f64>) -> Result<()> {
    let norm = direction.dot(direction).sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "direction must be unit norm (got {norm})"
        )));
    }
    Ok(())
}

/// Removes `direction` from every residual-writing matrix:
/// each row `r` becomes `r - (r . d) d`.
pub fn orthogonalize_checkpoint(
    ckpt: &Checkpoint,
    direction: &Array1<f64>,
    direction_id: &str,
) -> Result<Checkpoint> {
    let d_model = ckpt.config.d_model;
    if direction.len() != d_model {
        return Err(Error::InvalidArgument(format!(
            "direction has length {}, expected {d_model}",
            direction.len()
        )));
    }
    check_unit(direction)?;
    let d = direction.as_slice().expect("contiguous");
    let mut out = ckpt.clone();
    for (_, matrix) in out.weights.residual_writers_mut() {
        for row in matrix.chunks_exact_mut(d_model) {
            let proj: f64 = row.iter().zip(d).map(|(a, b)| a * b).sum();
            for (r, &di) in row.iter_mut().zip(d) {
                *r -= proj * di;
            }
        }
    }
    out.provenance = Provenance::Orthogonalized {
        direction_id: direction_id.to_string(),
        parent: Box::new(ckpt.provenance.clone()),
    };
    Ok(out)
}

/// Largest |row . d| over every residual-writing matrix.
pub fn max_write_component(ckpt: &Checkpoint, direction: &Array1<f64>) -> f64 {
    let d_model = ckpt.config.d_model;
    let d = direction.as_slice().expect("contiguous");
    ckpt.weights
        .residual_writers()
        .iter()
        .flat_map(|(_, m)| m.chunks_exact(d_model))
        .map(|row| row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}
