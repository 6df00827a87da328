use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Two-component principal component projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub variance: [f64; 2],
}

impl Pca2 {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyInput("pca points"));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::EmptyInput("pca dimension"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::dim("pca", d, p.len()));
        }
        let mut mean = vec![0.0; d];
        for p in points {
            crate::numeric::axpy(1.0 / n as f64, p, &mut mean);
        }
        let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
        let cov = (x.transpose() * &x) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let take = |rank: usize| -> (Vec<f64>, f64) {
            let Some(&col) = order.get(rank) else {
                return (vec![0.0; d], 0.0);
            };
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            // fix the sign so the largest-magnitude entry is positive
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (v, eig.eigenvalues[col].max(0.0))
        };
        let (c0, v0) = take(0);
        let (c1, v1) = take(1);
        Ok(Self {
            mean,
            components: [c0, c1],
            variance: [v0, v1],
        })
    }

    pub fn project(&self, x: &[f64]) -> [f64; 2] {
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [
            crate::numeric::dot(&centred, &self.components[0]),
            crate::numeric::dot(&centred, &self.components[1]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{dot, RngStream};

    #[test]
    fn components_are_orthonormal() {
        let mut rng = RngStream::new(3);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let p = Pca2::fit(&pts).unwrap();
        assert!((dot(&p.components[0], &p.components[0]) - 1.0).abs() < 1e-12);
        assert!((dot(&p.components[1], &p.components[1]) - 1.0).abs() < 1e-12);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-12);
        assert!(p.variance[0] >= p.variance[1]);
    }

    #[test]
    fn planar_points_keep_their_distances() {
        let mut rng = RngStream::new(4);
        let u = [0.6, 0.0, 0.8, 0.0, 0.0];
        let v = [0.0, 1.0, 0.0, 0.0, 0.0];
        let offset = [1.0, -2.0, 3.0, 0.5, 7.0];
        let pts: Vec<Vec<f64>> = (0..25)
            .map(|_| {
                let (a, b) = (rng.uniform(-3.0, 3.0), rng.uniform(-1.0, 1.0));
                (0..5).map(|j| offset[j] + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let p = Pca2::fit(&pts).unwrap();
        let proj: Vec<[f64; 2]> = pts.iter().map(|x| p.project(x)).collect();
        for i in 0..pts.len() {
            for j in 0..i {
                let d_hi: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let d_lo = ((proj[i][0] - proj[j][0]).powi(2) + (proj[i][1] - proj[j][1]).powi(2)).sqrt();
                assert!((d_hi - d_lo).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(Pca2::fit(&[]).is_err());
        assert!(Pca2::fit(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        let one = Pca2::fit(&[vec![5.0]]).unwrap();
        assert_eq!(one.project(&[5.0]), [0.0, 0.0]);
    }
}
