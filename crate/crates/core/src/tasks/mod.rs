//! Episodic task generation.
//!
//! Few-shot classification episodes come either from a synthetic
//! [`GaussianFamily`] or from a CSV [`LabeledPool`]. The linear-regression
//! meta-task and the two-task constructive example live alongside them.

mod dataset;
mod gaussian;
mod linear;
mod prop3;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};

pub use dataset::{load_dataset, LabeledPool};
pub use gaussian::GaussianFamily;
pub use linear::{
    sample_linear_task, task_sample, task_sample_moment_matched, LinearTask, RegressionData,
};
pub use prop3::{build_prop3, Prop3Construction};

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub label: usize,
}

/// Requested episode dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
}

impl EpisodeShape {
    pub fn new(n_way: usize, k_shot: usize, n_query: usize) -> Self {
        Self {
            n_way,
            k_shot,
            n_query,
        }
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.n_query
    }

    fn check(&self, available_classes: usize) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.n_query == 0 {
            return Err(Error::InvalidShape(format!(
                "n_way, k_shot and n_query must be positive (got {}, {}, {})",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        if self.n_way > available_classes {
            return Err(Error::InvalidShape(format!(
                "{}-way episode from {} classes",
                self.n_way, available_classes
            )));
        }
        Ok(())
    }
}

/// Support and query sets of one few-shot task, both ordered class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
}

impl Episode {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape::new(self.n_way, self.k_shot, self.n_query)
    }

    pub fn dim(&self) -> usize {
        self.support[0].x.len()
    }

    /// Support examples of class `c`.
    pub fn support_of(&self, c: usize) -> impl Iterator<Item = &Example> {
        self.support.iter().filter(move |e| e.label == c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidShape(msg));
        if self.support.len() != self.n_way * self.k_shot {
            return bad(format!(
                "{} support items for {}-way {}-shot",
                self.support.len(),
                self.n_way,
                self.k_shot
            ));
        }
        if self.query.len() != self.n_way * self.n_query {
            return bad(format!("{} query items", self.query.len()));
        }
        let mut counts = vec![(0usize, 0usize); self.n_way];
        let dim = self.dim();
        for (set, e) in self
            .support
            .iter()
            .map(|e| (0, e))
            .chain(self.query.iter().map(|e| (1, e)))
        {
            if e.label >= self.n_way {
                return bad(format!("label {} outside 0..{}", e.label, self.n_way));
            }
            if e.x.len() != dim {
                return bad("ragged feature vectors".into());
            }
            if set == 0 {
                counts[e.label].0 += 1;
            } else {
                counts[e.label].1 += 1;
            }
        }
        if counts
            .iter()
            .any(|&(s, q)| s != self.k_shot || q != self.n_query)
        {
            return bad("unbalanced classes".into());
        }
        Ok(())
    }
}

/// Anything episodes can be drawn from: a set of classes, each able to
/// produce fresh points.
pub trait ClassSource: Sync {
    fn class_count(&self) -> usize;
    fn dim(&self) -> usize;

    /// Draws `count` distinct points of class `class`.
    fn draw<R: Rng + ?Sized>(
        &self,
        class: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>>;

    /// Fails when some class in `pool` cannot supply `per_class` distinct points.
    fn check_capacity(&self, _pool: &[usize], _per_class: usize) -> Result<()> {
        Ok(())
    }

    /// An episode over the classes listed in `pool`. Classes are chosen without
    /// replacement; the order of selection assigns the episode labels.
    fn episode_from<R: Rng + ?Sized>(
        &self,
        pool: &[usize],
        shape: EpisodeShape,
        rng: &mut R,
    ) -> Result<Episode> {
        shape.check(pool.len())?;
        self.check_capacity(pool, shape.per_class())?;
        let chosen = sample_indices(rng, pool.len(), shape.n_way);
        let mut support = Vec::with_capacity(shape.n_way * shape.k_shot);
        let mut query = Vec::with_capacity(shape.n_way * shape.n_query);
        let mut draws = Vec::with_capacity(shape.n_way);
        for idx in chosen.iter() {
            draws.push(self.draw(pool[idx], shape.per_class(), rng)?);
        }
        for (label, points) in draws.iter().enumerate() {
            for x in &points[..shape.k_shot] {
                support.push(Example {
                    x: x.clone(),
                    label,
                });
            }
        }
        for (label, points) in draws.into_iter().enumerate() {
            for x in points.into_iter().skip(shape.k_shot) {
                query.push(Example { x, label });
            }
        }
        Ok(Episode {
            support,
            query,
            n_way: shape.n_way,
            k_shot: shape.k_shot,
            n_query: shape.n_query,
        })
    }

    fn sample_episode<R: Rng + ?Sized>(&self, shape: EpisodeShape, rng: &mut R) -> Result<Episode> {
        let all: Vec<usize> = (0..self.class_count()).collect();
        self.episode_from(&all, shape, rng)
    }
}

/// Train/evaluation partition of a class pool: the last `holdout` classes are
/// reserved for evaluation.
pub fn split_classes(total: usize, holdout: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if holdout >= total {
        return Err(Error::InvalidShape(format!(
            "holdout of {holdout} classes leaves none of {total} for training"
        )));
    }
    let cut = total - holdout;
    Ok(((0..cut).collect(), (cut..total).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn smallest_episode_has_declared_shape() {
        let fam = GaussianFamily::new(4, 4.0, 1.0, 8, &mut rng_from_seed(0)).unwrap();
        let ep = fam
            .sample_episode(EpisodeShape::new(2, 1, 1), &mut rng_from_seed(1))
            .unwrap();
        assert_eq!(ep.support.len(), 2);
        assert_eq!(ep.query.len(), 2);
        ep.validate().unwrap();
    }

    #[test]
    fn oversized_requests_are_rejected() {
        let fam = GaussianFamily::new(4, 4.0, 1.0, 3, &mut rng_from_seed(0)).unwrap();
        let err = fam.sample_episode(EpisodeShape::new(5, 1, 1), &mut rng_from_seed(1));
        assert!(matches!(err, Err(Error::InvalidShape(_))));
        let err = fam.sample_episode(EpisodeShape::new(2, 0, 1), &mut rng_from_seed(1));
        assert!(matches!(err, Err(Error::InvalidShape(_))));
    }

    #[test]
    fn class_split() {
        let (tr, ev) = split_classes(64, 16).unwrap();
        assert_eq!(tr.len(), 48);
        assert_eq!(ev, (48..64).collect::<Vec<_>>());
        assert!(split_classes(4, 4).is_err());
    }
}
