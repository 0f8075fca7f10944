use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::rng;

const SUBSPACE_ITERATIONS: usize = 4;

/// Orthonormalizes the columns in place (modified Gram-Schmidt). Columns
/// that collapse to zero are left as zero.
fn orthonormalize(m: &mut Array2<f64>) {
    for j in 0..m.ncols() {
        for k in 0..j {
            let dot = m.column(j).dot(&m.column(k));
            let prev = m.column(k).to_owned();
            m.column_mut(j).scaled_add(-dot, &prev);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm > 1e-12 {
            m.column_mut(j).mapv_inplace(|v| v / norm);
        } else {
            m.column_mut(j).fill(0.0);
        }
    }
}

/// Coordinates of the centred rows in an orthonormal basis of their leading
/// `k`-dimensional principal subspace, found by randomized subspace
/// iteration. Pairwise distances inside the subspace do not depend on which
/// basis is returned.
pub fn principal_subspace(x: &Array2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centred = x - &mean;
    let d = x.ncols();
    if k == 0 || k >= d {
        return centred;
    }
    let mut rng = rng::keyed(seed, "pca-subspace");
    let mut basis = Array2::from_shape_simple_fn((d, k), || StandardNormal.sample(&mut rng));
    orthonormalize(&mut basis);
    for _ in 0..SUBSPACE_ITERATIONS {
        basis = centred.t().dot(&centred.dot(&basis));
        orthonormalize(&mut basis);
    }
    centred.dot(&basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_low_rank_distances() {
        // Rank-3 data embedded in 20 dimensions.
        let mut rng = rng::seeded(3);
        let latent = Array2::from_shape_simple_fn((30, 3), || StandardNormal.sample(&mut rng));
        let mix = Array2::from_shape_simple_fn((3, 20), || StandardNormal.sample(&mut rng));
        let x: Array2<f64> = latent.dot(&mix);
        let z = principal_subspace(&x, 3, 1);
        assert_eq!(z.dim(), (30, 3));
        for i in 0..30 {
            for j in 0..30 {
                let a = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
                let b = (&z.row(i) - &z.row(j)).mapv(|v| v * v).sum();
                assert!((a - b).abs() < 1e-8 * a.max(1.0));
            }
        }
        let q = {
            let mut m = Array2::from_shape_vec((3, 2), vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
            orthonormalize(&mut m);
            m
        };
        let gram = q.t().dot(&q);
        assert!((gram[[0, 1]]).abs() < 1e-12 && (gram[[1, 1]] - 1.0).abs() < 1e-12);
    }
}
