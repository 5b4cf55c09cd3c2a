use rand::Rng;

use super::{ClassSource, LabeledPool};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::normal_vec;

/// Synthetic class pool: class means on a sphere of radius `radius`, samples
/// are mean plus isotropic Gaussian noise of scale `noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFamily {
    means: Matrix,
    radius: f64,
    noise: f64,
}

impl GaussianFamily {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        radius: f64,
        noise: f64,
        pool_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || pool_size == 0 {
            return Err(Error::InvalidShape("empty Gaussian family".into()));
        }
        if !(radius > 0.0) || !(noise >= 0.0) || !radius.is_finite() || !noise.is_finite() {
            return Err(Error::InputDomain(format!(
                "radius {radius} must be positive and noise {noise} non-negative"
            )));
        }
        let mut means = Matrix::zeros(pool_size, dim);
        for c in 0..pool_size {
            let z = loop {
                let z = normal_vec(rng, dim);
                let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-12 {
                    break z.into_iter().map(|v| radius * v / n).collect::<Vec<_>>();
                }
            };
            means.row_mut(c).copy_from_slice(&z);
        }
        Ok(Self {
            means,
            radius,
            noise,
        })
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// A finite pool with `per_class` points of every class, labelled by class index.
    pub fn materialize<R: Rng + ?Sized>(
        &self,
        per_class: usize,
        rng: &mut R,
    ) -> Result<LabeledPool> {
        let mut rows = Vec::new();
        for c in 0..self.class_count() {
            for x in self.draw(c, per_class, rng)? {
                rows.push((c as i64, x));
            }
        }
        LabeledPool::from_rows(rows)
    }
}

impl ClassSource for GaussianFamily {
    fn class_count(&self) -> usize {
        self.means.rows()
    }

    fn dim(&self) -> usize {
        self.means.cols()
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        class: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let mean = self.means.row(class);
        Ok((0..count)
            .map(|_| {
                let z = normal_vec(rng, mean.len());
                mean.iter()
                    .zip(z)
                    .map(|(m, z)| m + self.noise * z)
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::tasks::EpisodeShape;

    #[test]
    fn means_lie_on_the_sphere() {
        let fam = GaussianFamily::new(16, 4.0, 1.0, 64, &mut rng_from_seed(2)).unwrap();
        for c in 0..64 {
            let n: f64 = fam.means().row(c).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_samples_equal_their_mean() {
        let fam = GaussianFamily::new(6, 2.0, 0.0, 10, &mut rng_from_seed(4)).unwrap();
        let ep = fam
            .sample_episode(EpisodeShape::new(3, 2, 2), &mut rng_from_seed(5))
            .unwrap();
        for c in 0..3 {
            let first = &ep.support_of(c).next().unwrap().x;
            assert!(ep
                .support
                .iter()
                .chain(&ep.query)
                .filter(|e| e.label == c)
                .all(|e| &e.x == first));
            assert!((0..10).any(|m| fam.means().row(m) == first.as_slice()));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = rng_from_seed(0);
        assert!(GaussianFamily::new(3, 0.0, 1.0, 4, &mut rng).is_err());
        assert!(GaussianFamily::new(3, 1.0, -1.0, 4, &mut rng).is_err());
        assert!(GaussianFamily::new(0, 1.0, 1.0, 4, &mut rng).is_err());
    }
}
