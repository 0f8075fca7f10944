use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_training_set, ClassifyError};
use crate::rng;

/// Per-dimension z-scoring. Constant dimensions are centred but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap();
        let std = x.std_axis(Axis(0), 0.0);
        Self {
            mean: mean.to_vec(),
            scale: std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect(),
        }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s))
    }

    pub fn apply_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        let mean = ArrayView1::from(&self.mean);
        let scale = ArrayView1::from(&self.scale);
        (x - &mean) / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logreg,
    LinearSvm,
}

/// A hyperplane `w·z(x) + b`, where `z` is the optional standardizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaler: Option<Standardizer>,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn from_parts(kind: LinearKind, weights: Vec<f64>, bias: f64) -> Self {
        Self {
            kind,
            weights,
            bias,
            scaler: None,
            iterations: 0,
            converged: true,
        }
    }

    /// The features the hyperplane acts on.
    pub fn transform(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match &self.scaler {
            Some(s) => s.apply(x),
            None => x.to_owned(),
        }
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        self.transform(x).dot(&ArrayView1::from(&self.weights)) + self.bias
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Signed Euclidean distance of `x` to the hyperplane in feature space.
    pub fn signed_distance(&self, x: ArrayView1<f64>) -> f64 {
        self.score_unchecked(x) / self.weight_norm()
    }

    /// `(c·w, c·b)`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| c * w).collect(),
            bias: c * self.bias,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub max_iter: usize,
    /// Step size; `None` uses the inverse Lipschitz constant of the gradient.
    pub learning_rate: Option<f64>,
    pub l2: f64,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            learning_rate: None,
            l2: 1e-3,
            tol: 1e-6,
        }
    }
}

fn prepare(x: &Array2<f64>, scaler: &Option<Standardizer>) -> Array2<f64> {
    match scaler {
        Some(s) => s.apply_rows(x),
        None => x.clone(),
    }
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1]` by power iteration.
fn top_eigenvalue(z: &Array2<f64>) -> f64 {
    let d = z.ncols();
    let mut v = Array1::from_elem(d + 1, 1.0 / ((d + 1) as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let zv = z.dot(&v.slice(ndarray::s![..d])) + v[d];
        let mut next = Array1::zeros(d + 1);
        next.slice_mut(ndarray::s![..d]).assign(&z.t().dot(&zv));
        next[d] = zv.sum();
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let new_lambda = v.dot(&next);
        v = next / norm;
        if (new_lambda - lambda).abs() <= 1e-9 * new_lambda.abs() {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the mean logistic loss plus `l2/2·|w|²`.
pub fn train_logreg(
    x: &Array2<f64>,
    y: &[bool],
    config: &LogRegConfig,
    scaler: Option<Standardizer>,
) -> Result<LinearModel, ClassifyError> {
    check_training_set(x, y)?;
    if config.l2 < 0.0 || config.max_iter == 0 {
        return Err(ClassifyError::InvalidConfig("l2 must be ≥ 0 and max_iter ≥ 1".into()));
    }
    let z = prepare(x, &scaler);
    let n = z.nrows() as f64;
    let target = Array1::from_iter(y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
    // The logistic loss has curvature at most 1/4.
    let step = config
        .learning_rate
        .unwrap_or_else(|| 1.0 / (top_eigenvalue(&z) / (4.0 * n) + config.l2));

    // Nesterov-accelerated gradient steps with gradient-based restarts.
    let mut w = Array1::<f64>::zeros(z.ncols());
    let mut b = 0.0;
    let (mut look_w, mut look_b) = (w.clone(), b);
    let mut momentum_age = 0usize;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let margin = z.dot(&look_w) + look_b;
        let residual = Array1::from_iter(margin.iter().zip(&target).map(|(&m, &t)| sigmoid(m) - t));
        let grad_w = z.t().dot(&residual) / n + config.l2 * &look_w;
        let grad_b = residual.sum() / n;
        let grad_norm = (grad_w.dot(&grad_w) + grad_b * grad_b).sqrt();
        if grad_norm < config.tol {
            (w, b) = (look_w, look_b);
            converged = true;
            break;
        }
        let next_w = &look_w - &(step * &grad_w);
        let next_b = look_b - step * grad_b;
        let delta_w = &next_w - &w;
        let delta_b = next_b - b;
        if grad_w.dot(&delta_w) + grad_b * delta_b > 0.0 {
            momentum_age = 0;
        }
        let beta = momentum_age as f64 / (momentum_age as f64 + 3.0);
        look_w = &next_w + &(beta * &delta_w);
        look_b = next_b + beta * delta_b;
        (w, b) = (next_w, next_b);
        momentum_age += 1;
        iterations += 1;
    }
    Ok(LinearModel {
        kind: LinearKind::Logreg,
        weights: w.to_vec(),
        bias: b,
        scaler,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Inverse regularization strength; the L2 weight is `1 / (C·n)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Stochastic subgradient descent (Pegasos) on `λ/2·|w|² + mean hinge`, with
/// the bias learned as the weight of a constant feature.
pub fn train_linear_svm(
    x: &Array2<f64>,
    y: &[bool],
    config: &SvmConfig,
    scaler: Option<Standardizer>,
) -> Result<LinearModel, ClassifyError> {
    check_training_set(x, y)?;
    if !(config.c > 0.0) || config.epochs == 0 {
        return Err(ClassifyError::InvalidConfig("C must be positive and epochs ≥ 1".into()));
    }
    let z = prepare(x, &scaler);
    let n = z.nrows();
    let lambda = 1.0 / (config.c * n as f64);
    let sign = |i: usize| if y[i] { 1.0 } else { -1.0 };

    let mut w = Array1::<f64>::zeros(z.ncols());
    let mut b = 0.0;
    let mut rng = rng::keyed(config.seed, "svm-shuffle");
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut violations = 0;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = z.row(i);
            let s = sign(i);
            let margin = s * (row.dot(&w) + b);
            let shrink = 1.0 - eta * lambda;
            w *= shrink;
            b *= shrink;
            if margin < 1.0 {
                violations += 1;
                w.scaled_add(eta * s, &row);
                b += eta * s;
            }
            // Projection onto the ball that contains the optimum.
            let norm = (w.dot(&w) + b * b).sqrt();
            let radius = 1.0 / lambda.sqrt();
            if norm > radius {
                w *= radius / norm;
                b *= radius / norm;
            }
        }
        iterations += 1;
        if violations == 0 {
            converged = true;
            break;
        }
    }
    Ok(LinearModel {
        kind: LinearKind::LinearSvm,
        weights: w.to_vec(),
        bias: b,
        scaler,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(n: usize, gap: f64, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = rng::seeded(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((2 * n, 2));
        let mut y = Vec::new();
        for i in 0..2 * n {
            let anomaly = i % 2 == 1;
            let centre = if anomaly { gap / 2.0 } else { -gap / 2.0 };
            x[[i, 0]] = centre + noise.sample(&mut rng);
            x[[i, 1]] = 1.0 + noise.sample(&mut rng);
            y.push(anomaly);
        }
        (x, y)
    }

    fn accuracy(m: &LinearModel, x: &Array2<f64>, y: &[bool]) -> f64 {
        let hits = x.rows().into_iter().zip(y).filter(|(r, &t)| (m.score_unchecked(*r) > 0.0) == t).count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn logreg_separates_blobs() {
        let (x, y) = blobs(50, 8.0, 1);
        let m = train_logreg(&x, &y, &LogRegConfig::default(), Some(Standardizer::fit(&x))).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        let m2 = train_logreg(&x, &y, &LogRegConfig::default(), Some(Standardizer::fit(&x))).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn logreg_single_class_and_collinear() {
        let (x, _) = blobs(5, 8.0, 1);
        assert!(matches!(
            train_logreg(&x, &[true; 10], &LogRegConfig::default(), None),
            Err(ClassifyError::SingleClass)
        ));
        let (x, y) = blobs(30, 6.0, 2);
        let dup = ndarray::concatenate![Axis(1), x, x.column(0).insert_axis(Axis(1))];
        let m = train_logreg(&dup, &y, &LogRegConfig { l2: 0.1, ..Default::default() }, None).unwrap();
        assert!(m.converged, "{m:?}");
        assert!((m.weights[0] - m.weights[2]).abs() < 1e-6);
        assert_eq!(accuracy(&m, &dup, &y), 1.0);
    }

    #[test]
    fn svm_zero_hinge_on_separable_blobs() {
        let (x, y) = blobs(40, 10.0, 3);
        let cfg = SvmConfig { seed: 4, ..Default::default() };
        let m = train_linear_svm(&x, &y, &cfg, Some(Standardizer::fit(&x))).unwrap();
        let hinge: f64 = x
            .rows()
            .into_iter()
            .zip(&y)
            .map(|(r, &t)| (1.0 - if t { 1.0 } else { -1.0 } * m.score_unchecked(r)).max(0.0))
            .sum();
        assert_eq!(hinge, 0.0);
        assert_eq!(m, train_linear_svm(&x, &y, &cfg, Some(Standardizer::fit(&x))).unwrap());
        assert!(matches!(
            train_linear_svm(&x, &y[..5], &cfg, None),
            Err(ClassifyError::LengthMismatch(80, 5))
        ));
    }

    #[test]
    fn standardizer_matches_definition() {
        let x = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(&x);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        assert_eq!(s.apply_rows(&x), ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
