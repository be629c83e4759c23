//! Diagonal-covariance Gaussian mixture fitted by expectation-maximisation.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CounterVector, WorkloadError};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<MixtureComponent>,
    /// Mean per-sample log-likelihood before each M-step of the fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
}

impl MixtureModel {
    /// Builds a model from explicit components. Zero variances are accepted
    /// here (the component then always samples its mean); fitted models
    /// always have strictly positive variances.
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self, WorkloadError> {
        let m = MixtureModel {
            components,
            log_likelihood_trace: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |s: &str| Err(WorkloadError::InvalidModel(s.to_string()));
        if self.components.is_empty() {
            return bad("mixture has no components");
        }
        let dim = self.dim();
        let mut total = 0.0;
        for c in &self.components {
            if c.mean.len() != dim || c.variance.len() != dim {
                return bad("component dimensions disagree");
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return bad("component weights must be positive");
            }
            if c.variance.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("variances must be finite and >= 0");
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad("component weights must sum to 1");
        }
        Ok(())
    }

    /// Weighted mean of the component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for c in &self.components {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += c.weight * m;
            }
        }
        out
    }

    /// Per-dimension variance of the mixture distribution.
    pub fn variance(&self) -> Vec<f64> {
        let mu = self.mean();
        let mut out = vec![0.0; self.dim()];
        for c in &self.components {
            for d in 0..out.len() {
                out[d] += c.weight * (c.variance[d] + (c.mean[d] - mu[d]).powi(2));
            }
        }
        out
    }

    fn component_log_density(c: &MixtureComponent, x: &[f64]) -> f64 {
        let mut acc = c.weight.ln();
        for ((xi, mu), var) in x.iter().zip(&c.mean).zip(&c.variance) {
            acc -= 0.5 * (LN_2PI + var.ln() + (xi - mu).powi(2) / var);
        }
        acc
    }

    /// Mean per-sample log-likelihood.
    pub fn mean_log_likelihood(&self, samples: &[CounterVector]) -> f64 {
        let mut buf = vec![0.0; self.components.len()];
        samples
            .iter()
            .map(|s| log_sum_exp_into(self, &s.0, &mut buf))
            .sum::<f64>()
            / samples.len() as f64
    }
}

/// Fills `buf` with per-component log joint densities; returns their log-sum-exp.
fn log_sum_exp_into(model: &MixtureModel, x: &[f64], buf: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (slot, c) in buf.iter_mut().zip(&model.components) {
        *slot = MixtureModel::component_log_density(c, x);
        max = max.max(*slot);
    }
    max + buf.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_samples(samples: &[CounterVector], k: usize) -> Result<usize, WorkloadError> {
    if k == 0 || samples.len() < k {
        return Err(WorkloadError::TooFewSamples {
            k: k.max(1),
            n: samples.len(),
        });
    }
    let dim = samples[0].dim();
    if dim == 0 {
        return Err(WorkloadError::InvalidModel(
            "zero-dimensional samples".into(),
        ));
    }
    for s in samples {
        if s.dim() != dim {
            return Err(WorkloadError::Dimension {
                expected: dim,
                found: s.dim(),
            });
        }
        if s.0.iter().any(|v| !v.is_finite()) {
            return Err(WorkloadError::InvalidModel("non-finite sample".into()));
        }
    }
    if samples.iter().all(|s| s.0 == samples[0].0) {
        return Err(WorkloadError::DegenerateSamples);
    }
    Ok(dim)
}

fn moments(samples: &[CounterVector], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.0) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for d in 0..dim {
            var[d] += (s.0[d] - mean[d]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// k-means++ style seeding with distances scaled by the global variance.
fn seed_means(
    samples: &[CounterVector],
    k: usize,
    global_var: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let scaled_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(global_var)
            .map(|((x, y), v)| if *v > 0.0 { (x - y).powi(2) / v } else { 0.0 })
            .sum()
    };
    let mut means = vec![samples[rng.random_range(0..samples.len())].0.clone()];
    let mut best: Vec<f64> = samples
        .iter()
        .map(|s| scaled_dist(&s.0, &means[0]))
        .collect();
    while means.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = samples.len() - 1;
            for (i, w) in best.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.random_range(0..samples.len())
        };
        let chosen = samples[pick].0.clone();
        for (b, s) in best.iter_mut().zip(samples) {
            *b = b.min(scaled_dist(&s.0, &chosen));
        }
        means.push(chosen);
    }
    means
}

/// Fits a `k`-component diagonal Gaussian mixture by EM. Deterministic for a
/// given `seed`.
pub fn fit_mixture(
    samples: &[CounterVector],
    k: usize,
    seed: u64,
    cfg: EmConfig,
) -> Result<MixtureModel, WorkloadError> {
    let dim = check_samples(samples, k)?;
    let n = samples.len();
    let (global_mean, global_var) = moments(samples, dim);
    let floor: Vec<f64> = global_var
        .iter()
        .zip(&global_mean)
        .map(|(v, m)| {
            if *v > 0.0 {
                1e-6 * v
            } else {
                1e-9 * m.abs().max(1.0).powi(2)
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MixtureModel {
        components: seed_means(samples, k, &global_var, &mut rng)
            .into_iter()
            .map(|mean| MixtureComponent {
                weight: 1.0 / k as f64,
                mean,
                variance: global_var
                    .iter()
                    .zip(&floor)
                    .map(|(v, f)| v.max(*f))
                    .collect(),
            })
            .collect(),
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = vec![vec![0.0; k]; n];
    let mut buf = vec![0.0; k];
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iter.max(1) {
        // E-step
        let mut ll = 0.0;
        for (r, s) in resp.iter_mut().zip(samples) {
            let lse = log_sum_exp_into(&model, &s.0, &mut buf);
            ll += lse;
            for (rj, bj) in r.iter_mut().zip(&buf) {
                *rj = (bj - lse).exp();
            }
        }
        ll /= n as f64;
        model.log_likelihood_trace.push(ll);

        // M-step
        for (j, comp) in model.components.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk < 1e-10 {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (r, s) in resp.iter().zip(samples) {
                for (m, x) in mean.iter_mut().zip(&s.0) {
                    *m += r[j] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for (r, s) in resp.iter().zip(samples) {
                for d in 0..dim {
                    var[d] += r[j] * (s.0[d] - mean[d]).powi(2);
                }
            }
            for d in 0..dim {
                var[d] = (var[d] / nk).max(floor[d]);
            }
            comp.weight = nk / n as f64;
            comp.mean = mean;
            comp.variance = var;
        }
        let total: f64 = model.components.iter().map(|c| c.weight).sum();
        for c in &mut model.components {
            c.weight = (c.weight / total).max(1e-300);
        }

        if ll - previous < cfg.tol {
            break;
        }
        previous = ll;
    }
    // Keep the weights summing to one after the positivity guard.
    let total: f64 = model.components.iter().map(|c| c.weight).sum();
    model.components.iter_mut().for_each(|c| c.weight /= total);
    Ok(model)
}

/// Draws `n` counter vectors; negative coordinates are clamped to zero.
pub fn sample_counters(model: &MixtureModel, n: usize, seed: u64) -> Vec<CounterVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = model.components.iter().map(|c| c.weight).collect();
    let picker = WeightedIndex::new(&weights).expect("validated mixture weights");
    (0..n)
        .map(|_| {
            let c = &model.components[picker.sample(&mut rng)];
            CounterVector(
                c.mean
                    .iter()
                    .zip(&c.variance)
                    .map(|(mu, var)| {
                        let normal = Normal::new(*mu, var.sqrt()).expect("finite parameters");
                        normal.sample(&mut rng).max(0.0)
                    })
                    .collect(),
            )
        })
        .collect()
}
