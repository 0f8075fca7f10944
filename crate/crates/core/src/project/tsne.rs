use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{principal_subspace, ProjectError, ProjectionConfig, ProjectionPoint};
use crate::embedder::EmbeddingMatrix;
use crate::rng;

const BISECTION_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

/// Per-point Gaussian conditionals `P(j|i)` (rows) and the precision and
/// entropy (nats) each row settled on.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub conditional: Array2<f64>,
    pub betas: Vec<f64>,
    pub entropies: Vec<f64>,
}

fn row_distribution(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *p = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *p;
        weighted += (d - min) * *p;
    }
    out.iter_mut().for_each(|p| *p /= sum);
    // H = log Z + beta * E[d - min]
    sum.ln() + beta * weighted / sum
}

/// Bisects each row's precision until its entropy is `ln(perplexity)`.
pub fn conditional_affinities(sq_dist: &Array2<f64>, perplexity: f64) -> Affinities {
    let n = sq_dist.nrows();
    let target = perplexity.ln();
    let mut conditional = Array2::zeros((n, n));
    let mut betas = vec![1.0; n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let dist = sq_dist.row(i).to_vec();
        let mut row = vec![0.0; n];
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = row_distribution(&dist, i, beta, &mut row);
        for _ in 0..BISECTION_STEPS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = row_distribution(&dist, i, beta, &mut row);
        }
        conditional.row_mut(i).assign(&Array1::from(row));
        betas[i] = beta;
        entropies[i] = h;
    }
    Affinities {
        conditional,
        betas,
        entropies,
    }
}

/// `(P(j|i) + P(i|j)) / 2n`.
pub fn joint_affinities(conditional: &Array2<f64>) -> Array2<f64> {
    let n = conditional.nrows() as f64;
    (conditional + &conditional.t()) / (2.0 * n)
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectionPoint>,
    /// KL(P‖Q) of the unexaggerated P at each iteration.
    pub kl_trace: Vec<f64>,
    pub config: ProjectionConfig,
}

/// t-SNE on an embedding matrix; rows are processed in doc-id order so that
/// permuting the input permutes the output identically.
pub fn tsne(matrix: &EmbeddingMatrix, config: &ProjectionConfig) -> Result<Projection, ProjectError> {
    let ids: Vec<String> = matrix.rows.iter().map(|r| r.doc_id.clone()).collect();
    let (coords, kl_trace) = tsne_array(&matrix.to_array(), &ids, config)?;
    let points = matrix
        .rows
        .iter()
        .zip(coords.rows())
        .map(|(r, c)| ProjectionPoint {
            doc_id: r.doc_id.clone(),
            x: c[0],
            y: c[1],
            label: r.label,
        })
        .collect();
    Ok(Projection {
        points,
        kl_trace,
        config: config.clone(),
    })
}

/// Rows of `x` keyed by `ids`; returns `n × 2` coordinates in input order.
pub fn tsne_array(x: &Array2<f64>, ids: &[String], config: &ProjectionConfig) -> Result<(Array2<f64>, Vec<f64>), ProjectError> {
    let n = x.nrows();
    config.validate(n)?;
    if ids.len() != n {
        return Err(ProjectError::InvalidConfig(format!("{} ids for {n} rows", ids.len())));
    }
    if x.rows().into_iter().all(|r| r == x.row(0)) {
        return Err(ProjectError::DegenerateInput);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let sorted = x.select(ndarray::Axis(0), &order);
    let reduced = principal_subspace(&sorted, config.pca_predim, config.seed);
    let affinities = conditional_affinities(&squared_distances(&reduced), config.perplexity);
    let p = joint_affinities(&affinities.conditional);

    let normal = Normal::new(0.0, INIT_STD).unwrap();
    let mut y = Array2::zeros((n, 2));
    for (row, &i) in order.iter().enumerate() {
        let mut r = rng::keyed(config.seed, &format!("tsne-init:{}", ids[i]));
        y[[row, 0]] = normal.sample(&mut r);
        y[[row, 1]] = normal.sample(&mut r);
    }

    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut num = Array2::<f64>::zeros((n, n));
    let mut kl_trace = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[[i, 0]] - y[[j, 0]];
                let dy = y[[i, 1]] - y[[j, 1]];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[[i, j]] = v;
                num[[j, i]] = v;
                z += 2.0 * v;
            }
        }

        let mut kl = 0.0;
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[[i, j]];
                let qij = num[[i, j]] / z;
                if pij > 0.0 {
                    kl += pij * (pij / qij).ln();
                }
                let f = (exaggeration * pij - qij) * num[[i, j]];
                gx += f * (y[[i, 0]] - y[[j, 0]]);
                gy += f * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * gx;
            grad[[i, 1]] = 4.0 * gy;
        }
        kl_trace.push(kl);

        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(MIN_GAIN);
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        y -= &mean;
    }

    let mut out = Array2::zeros((n, 2));
    for (row, &i) in order.iter().enumerate() {
        out.row_mut(i).assign(&y.row(row));
    }
    Ok((out, kl_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn clusters(per: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<String>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let n = 3 * per;
        let mut x = Array2::zeros((n, dim));
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            for j in 0..dim {
                let centre = if j % 3 == c { 10.0 } else { 0.0 };
                x[[i, j]] = centre + Distribution::<f64>::sample(&StandardNormal, &mut r);
            }
            labels.push(c);
        }
        (x, (0..n).map(|i| format!("p{i:03}")).collect(), labels)
    }

    #[test]
    fn affinities_meet_perplexity_and_normalize() {
        let (x, _, _) = clusters(10, 8, 1);
        let a = conditional_affinities(&squared_distances(&x), 5.0);
        for (i, h) in a.entropies.iter().enumerate() {
            assert!((h - 5f64.ln()).abs() < 1e-4, "row {i}: {h}");
            assert!((a.conditional.row(i).sum() - 1.0).abs() < 1e-12);
            assert_eq!(a.conditional[[i, i]], 0.0);
        }
        let p = joint_affinities(&a.conditional);
        assert!((p.sum() - 1.0).abs() < 1e-8);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(p, p.t());
    }

    #[test]
    fn validation_errors() {
        let (x, ids, _) = clusters(2, 4, 1);
        let cfg = ProjectionConfig::default();
        assert!(matches!(tsne_array(&x, &ids, &cfg), Err(ProjectError::PerplexityTooLarge { .. })));
        let flat = Array2::from_elem((6, 3), 1.0);
        let cfg = ProjectionConfig { perplexity: 1.5, ..cfg };
        let ids6: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        assert!(matches!(tsne_array(&flat, &ids6, &cfg), Err(ProjectError::DegenerateInput)));
        assert!(matches!(tsne_array(&flat.slice(ndarray::s![..3, ..]).to_owned(), &ids6[..3], &cfg), Err(ProjectError::TooFewPoints(3))));
    }

    #[test]
    fn permutation_equivariant_and_kl_decreases() {
        let (x, ids, _) = clusters(8, 6, 2);
        let cfg = ProjectionConfig {
            perplexity: 5.0,
            iterations: 300,
            exaggeration_iters: 100,
            momentum_switch: 100,
            ..Default::default()
        };
        let (a, kl) = tsne_array(&x, &ids, &cfg).unwrap();
        assert!(kl.iter().all(|&v| v >= 0.0));
        assert!(kl.last().unwrap() < &kl[cfg.exaggeration_iters - 1]);
        let perm: Vec<usize> = (0..ids.len()).rev().collect();
        let xp = x.select(ndarray::Axis(0), &perm);
        let idp: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let (b, _) = tsne_array(&xp, &idp, &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b.row(k), a.row(i));
        }
    }
}
