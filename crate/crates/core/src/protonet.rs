//! Prototypical-network loss with optional prototype normalization and a
//! spectral penalty on the prototype matrix.
//!
//! Scores are negative squared Euclidean distances at temperature 1. When
//! normalization is on, only the prototypes are projected to the unit sphere;
//! query embeddings are left as they are.

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::linalg::{softmax, Matrix};
use crate::regularizers::{total_penalty, PenaltyConfig};
use crate::tasks::Episode;

/// Smallest prototype norm accepted by [`normalize_rows`].
pub const MIN_PROTOTYPE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Matrix,
    pub normalized: bool,
}

/// Class means of the embedded support set.
pub fn compute_prototypes(episode: &Episode, encoder: &EncoderParams) -> Result<PrototypeSet> {
    let support = embed_all(encoder, episode.support.iter().map(|e| e.x.as_slice()))?;
    let labels: Vec<usize> = episode.support.iter().map(|e| e.label).collect();
    Ok(PrototypeSet {
        prototypes: class_means(&support, &labels, episode.n_way),
        normalized: false,
    })
}

pub fn normalize_rows(p: &PrototypeSet) -> Result<PrototypeSet> {
    let mut out = p.prototypes.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= MIN_PROTOTYPE_NORM) {
            return Err(Error::DegeneratePrototype { row: i, norm });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(PrototypeSet {
        prototypes: out,
        normalized: true,
    })
}

fn embed_all<'a>(encoder: &EncoderParams, xs: impl Iterator<Item = &'a [f64]>) -> Result<Matrix> {
    let rows = xs.map(|x| encoder.embed(x)).collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows))
}

fn class_means(emb: &Matrix, labels: &[usize], n_way: usize) -> Matrix {
    let mut sums = Matrix::zeros(n_way, emb.cols());
    let mut counts = vec![0usize; n_way];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(emb.row(i)) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
    }
    sums
}

/// Row-wise softmax of `−‖q − c_i‖²`.
pub fn class_probabilities(queries: &Matrix, prototypes: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(queries.rows(), prototypes.rows());
    for q in 0..queries.rows() {
        let logits: Vec<f64> = (0..prototypes.rows())
            .map(|i| {
                -queries
                    .row(q)
                    .iter()
                    .zip(prototypes.row(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        out.row_mut(q).copy_from_slice(&softmax(&logits));
    }
    out
}

/// Row-wise softmax of the expanded linear logits `2 c_iᵀq − ‖c_i‖²`. The
/// dropped `−‖q‖²` term is shared by all classes, so these probabilities equal
/// [`class_probabilities`].
pub fn class_probabilities_linear(queries: &Matrix, prototypes: &Matrix) -> Matrix {
    let weights = prototypes.scale(2.0);
    let bias: Vec<f64> = (0..prototypes.rows())
        .map(|i| -prototypes.row(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut out = Matrix::zeros(queries.rows(), prototypes.rows());
    for q in 0..queries.rows() {
        let logits: Vec<f64> = weights
            .matvec(queries.row(q))
            .into_iter()
            .zip(&bias)
            .map(|(a, b)| a + b)
            .collect();
        out.row_mut(q).copy_from_slice(&softmax(&logits));
    }
    out
}

/// Loss evaluated on precomputed embeddings, with gradients in embedding space.
#[derive(Debug, Clone)]
pub struct EmbeddingLoss {
    /// Cross-entropy plus penalty.
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub accuracy: f64,
    /// Prototypes used for scoring (normalized when requested).
    pub prototypes: Matrix,
    pub grad_support: Matrix,
    pub grad_query: Matrix,
}

/// Prototypical loss on embedded support and query sets.
#[allow(clippy::too_many_arguments)]
pub fn loss_from_embeddings(
    support: &Matrix,
    support_labels: &[usize],
    query: &Matrix,
    query_labels: &[usize],
    n_way: usize,
    normalize: bool,
    penalty: &PenaltyConfig,
) -> Result<EmbeddingLoss> {
    let k = support.cols();
    let raw = class_means(support, support_labels, n_way);
    let counts: Vec<usize> = (0..n_way)
        .map(|c| support_labels.iter().filter(|&&l| l == c).count())
        .collect();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidShape(format!(
            "class {c} has no support points"
        )));
    }
    let scoring = if normalize {
        normalize_rows(&PrototypeSet {
            prototypes: raw.clone(),
            normalized: false,
        })?
        .prototypes
    } else {
        raw.clone()
    };

    let probs = class_probabilities(query, &scoring);
    let nq = query.rows() as f64;
    let mut ce = 0.0;
    let mut correct = 0usize;
    let mut grad_query = Matrix::zeros(query.rows(), k);
    let mut grad_proto = Matrix::zeros(n_way, k);
    for q in 0..query.rows() {
        let p = probs.row(q);
        let y = query_labels[q];
        ce -= p[y].ln();
        let best = (0..n_way)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .expect("n_way > 0");
        correct += usize::from(best == y);
        let qv = query.row(q);
        for i in 0..n_way {
            let g = (p[i] - if i == y { 1.0 } else { 0.0 }) / nq;
            if g == 0.0 {
                continue;
            }
            let c = scoring.row(i);
            for j in 0..k {
                let diff = qv[j] - c[j];
                grad_query[(q, j)] -= 2.0 * g * diff;
                grad_proto[(i, j)] += 2.0 * g * diff;
            }
        }
    }
    ce /= nq;

    let mut pen_value = 0.0;
    if penalty.is_active() {
        let pen = total_penalty(&scoring, penalty)?;
        pen_value = pen.value;
        grad_proto.axpy(1.0, &pen.grad);
    }

    if normalize {
        // d(c/‖c‖) = (I − ĉĉᵀ) dc / ‖c‖
        for i in 0..n_way {
            let norm = raw.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let chat = scoring.row(i).to_vec();
            let g = grad_proto.row_mut(i);
            let along: f64 = g.iter().zip(&chat).map(|(a, b)| a * b).sum();
            for j in 0..k {
                g[j] = (g[j] - along * chat[j]) / norm;
            }
        }
    }

    let mut grad_support = Matrix::zeros(support.rows(), k);
    for (s, &l) in support_labels.iter().enumerate() {
        let scale = 1.0 / counts[l] as f64;
        for (gs, gp) in grad_support.row_mut(s).iter_mut().zip(grad_proto.row(l)) {
            *gs = gp * scale;
        }
    }

    Ok(EmbeddingLoss {
        loss: ce + pen_value,
        cross_entropy: ce,
        penalty: pen_value,
        accuracy: correct as f64 / nq,
        prototypes: scoring,
        grad_support,
        grad_query,
    })
}

/// Episode loss with the gradient pushed back into the encoder parameters.
#[derive(Debug, Clone)]
pub struct ProtoLoss {
    pub loss: f64,
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub prototypes: Matrix,
    pub grad: Vec<f64>,
}

pub fn proto_loss(
    episode: &Episode,
    encoder: &EncoderParams,
    normalize: bool,
    penalty: &PenaltyConfig,
) -> Result<ProtoLoss> {
    let mut tapes = Vec::with_capacity(episode.support.len() + episode.query.len());
    let mut s_rows = Vec::with_capacity(episode.support.len());
    let mut q_rows = Vec::with_capacity(episode.query.len());
    for e in &episode.support {
        let (emb, tape) = encoder.forward(&e.x)?;
        s_rows.push(emb);
        tapes.push(tape);
    }
    for e in &episode.query {
        let (emb, tape) = encoder.forward(&e.x)?;
        q_rows.push(emb);
        tapes.push(tape);
    }
    let s_labels: Vec<usize> = episode.support.iter().map(|e| e.label).collect();
    let q_labels: Vec<usize> = episode.query.iter().map(|e| e.label).collect();
    let out = loss_from_embeddings(
        &Matrix::from_rows(&s_rows),
        &s_labels,
        &Matrix::from_rows(&q_rows),
        &q_labels,
        episode.n_way,
        normalize,
        penalty,
    )?;
    let mut grad = vec![0.0; encoder.param_count()];
    let ns = s_rows.len();
    for (i, tape) in tapes.iter().enumerate() {
        let upstream = if i < ns {
            out.grad_support.row(i)
        } else {
            out.grad_query.row(i - ns)
        };
        if upstream.iter().all(|&v| v == 0.0) {
            continue;
        }
        let g = encoder.backward(tape, upstream)?;
        for (a, b) in grad.iter_mut().zip(&g.params) {
            *a += b;
        }
    }
    Ok(ProtoLoss {
        loss: out.loss,
        cross_entropy: out.cross_entropy,
        accuracy: out.accuracy,
        prototypes: out.prototypes,
        grad,
    })
}

/// Query accuracy of nearest-prototype classification, without gradients.
pub fn proto_accuracy(episode: &Episode, encoder: &EncoderParams, normalize: bool) -> Result<f64> {
    let mut protos = compute_prototypes(episode, encoder)?;
    if normalize {
        protos = normalize_rows(&protos)?;
    }
    let q = embed_all(encoder, episode.query.iter().map(|e| e.x.as_slice()))?;
    let probs = class_probabilities(&q, &protos.prototypes);
    let correct = episode
        .query
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            let p = probs.row(*i);
            (0..episode.n_way)
                .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
                .expect("n_way > 0")
                == e.label
        })
        .count();
    Ok(correct as f64 / episode.query.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Activation, Layer};
    use crate::tasks::Example;

    fn identity(k: usize) -> EncoderParams {
        EncoderParams::from_layers(
            vec![Layer {
                weight: Matrix::identity(k),
                bias: vec![0.0; k],
            }],
            Activation::Identity,
        )
        .unwrap()
    }

    fn episode(
        support: Vec<(Vec<f64>, usize)>,
        query: Vec<(Vec<f64>, usize)>,
        n_way: usize,
    ) -> Episode {
        let k_shot = support.len() / n_way;
        let n_query = query.len() / n_way;
        let ex = |v: Vec<(Vec<f64>, usize)>| {
            v.into_iter()
                .map(|(x, label)| Example { x, label })
                .collect()
        };
        Episode {
            support: ex(support),
            query: ex(query),
            n_way,
            k_shot,
            n_query,
        }
    }

    #[test]
    fn one_shot_prototypes_are_the_support_points() {
        let ep = episode(
            vec![(vec![1.0, 2.0], 0), (vec![-3.0, 0.5], 1)],
            vec![(vec![0.0, 0.0], 0), (vec![1.0, 1.0], 1)],
            2,
        );
        let p = compute_prototypes(&ep, &identity(2)).unwrap();
        assert_eq!(p.prototypes, Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]));
    }

    #[test]
    fn two_shot_prototypes_are_midpoints() {
        let ep = episode(
            vec![
                (vec![1.0, 2.0], 0),
                (vec![3.0, 4.0], 0),
                (vec![0.0, 0.0], 1),
                (vec![-2.0, 6.0], 1),
            ],
            vec![(vec![0.0, 0.0], 0), (vec![1.0, 1.0], 1)],
            2,
        );
        let p = compute_prototypes(&ep, &identity(2)).unwrap();
        assert_eq!(p.prototypes, Matrix::from_rows(&[[2.0, 3.0], [-1.0, 3.0]]));
    }

    #[test]
    fn normalization() {
        let p = PrototypeSet {
            prototypes: Matrix::from_rows(&[[3.0, 4.0], [0.0, -2.0]]),
            normalized: false,
        };
        let n = normalize_rows(&p).unwrap();
        assert!(n.normalized);
        assert_eq!(n.prototypes, Matrix::from_rows(&[[0.6, 0.8], [0.0, -1.0]]));
        let again = normalize_rows(&n).unwrap();
        assert!(again.prototypes.sub(&n.prototypes).max_abs() <= 1e-15);
        let zero = PrototypeSet {
            prototypes: Matrix::zeros(2, 2),
            normalized: false,
        };
        assert!(matches!(
            normalize_rows(&zero),
            Err(Error::DegeneratePrototype { row: 0, .. })
        ));
    }

    #[test]
    fn equidistant_query_contributes_log_n_way() {
        let ep = episode(
            vec![
                (vec![1.0, 0.0], 0),
                (vec![0.0, 1.0], 1),
                (vec![-1.0, 0.0], 2),
            ],
            vec![
                (vec![0.0, 0.0], 0),
                (vec![0.0, 0.0], 1),
                (vec![0.0, 0.0], 2),
            ],
            3,
        );
        let out = proto_loss(&ep, &identity(2), false, &PenaltyConfig::none()).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_way_distance_zero_and_one() {
        let s = Matrix::from_rows(&[[0.0], [1.0]]);
        let q = Matrix::from_rows(&[[0.0]]);
        let out =
            loss_from_embeddings(&s, &[0, 1], &q, &[0], 2, false, &PenaltyConfig::none()).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-15);
    }

    #[test]
    fn expanded_logits_give_the_same_probabilities() {
        let q = Matrix::from_rows(&[[0.3, -1.0, 2.0], [5.0, 0.1, -0.2]]);
        let c = Matrix::from_rows(&[[1.0, 1.0, 1.0], [-2.0, 0.5, 0.0], [0.0, 0.0, 3.0]]);
        let a = class_probabilities(&q, &c);
        let b = class_probabilities_linear(&q, &c);
        assert!(a.sub(&b).max_abs() < 1e-12);
        for r in 0..2 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
