//! 2:4 magnitude pruning.

use crate::error::{LabError, Result};
use crate::model::{LinearWeight, Matrix, Model};

pub const GROUP: usize = 4;
pub const KEEP: usize = 2;

/// Zeroes the two smallest-magnitude entries of every aligned group of four
/// along each row. Among equal magnitudes the lower index survives.
pub fn prune_2_4(matrix: &Matrix) -> Result<Matrix> {
    if matrix.cols % GROUP != 0 {
        return Err(LabError::shape(format!(
            "row length {} is not a multiple of {GROUP}",
            matrix.cols
        )));
    }
    let mut out = matrix.clone();
    for group in out.data.chunks_exact_mut(GROUP) {
        let mut order = [0usize, 1, 2, 3];
        // Stable sort on descending magnitude keeps lower indices first on ties.
        order.sort_by(|&a, &b| {
            group[b]
                .abs()
                .partial_cmp(&group[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for &drop in &order[KEEP..] {
            group[drop] = 0.0;
        }
    }
    Ok(out)
}

/// Applies [`prune_2_4`] to the six projections of every block. Quantized
/// layers are dequantized first and come back dense.
pub fn prune_model_2_4(model: &Model) -> Result<Model> {
    let mut out = model.clone();
    for block in &mut out.blocks {
        for lin in block.linears_mut() {
            let pruned = prune_2_4(&lin.weight.to_dense())?;
            lin.weight = LinearWeight::Dense(pruned);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Matrix {
        Matrix::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn keeps_two_largest() {
        let out = prune_2_4(&row(&[0.1, -0.5, 0.3, 0.05])).unwrap();
        assert_eq!(out.data, vec![0.0, -0.5, 0.3, 0.0]);
    }

    #[test]
    fn ties_keep_lower_indices() {
        assert_eq!(prune_2_4(&row(&[1.0, 1.0, 1.0, 1.0])).unwrap().data, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(prune_2_4(&row(&[0.0, -2.0, 2.0, 2.0])).unwrap().data, vec![0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(matches!(prune_2_4(&row(&[1.0, 2.0, 3.0])), Err(LabError::Shape(_))));
    }

    #[test]
    fn groups_restart_per_row() {
        let m = Matrix::from_vec(2, 4, vec![4.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(prune_2_4(&m).unwrap().data, vec![4.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
    }
}
