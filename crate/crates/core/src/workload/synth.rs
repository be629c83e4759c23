//! Seeded synthetic inputs for desk-scale experiments: a job trace on the
//! reference machine, counter captures for mixture training, and benchmark
//! runs for the neighbour model.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CounterVector, MachineResponse, TraceRecord, TrainingPoint, WorkloadError};
use crate::machine::{Machine, MachineId};

/// 2023-01-01T00:00:00Z
pub const DEFAULT_EPOCH: f64 = 1_672_531_200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    pub jobs: usize,
    pub users: usize,
    /// Largest core request generated.
    pub max_cores: u32,
    /// Core counts and their relative weights.
    pub core_choices: Vec<(u32, f64)>,
    /// Median runtime on the reference machine, seconds.
    pub median_runtime_s: f64,
    /// Log-space standard deviation of runtimes.
    pub runtime_sigma: f64,
    pub min_runtime_s: f64,
    pub max_runtime_s: f64,
    pub mean_interarrival_s: f64,
    pub start_time: f64,
    /// Reference-machine power per busy core at full activity, watts.
    pub ref_watts_per_core: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            jobs: 1000,
            users: 20,
            max_cores: 128,
            // 17% of the mass sits above 16 cores.
            core_choices: vec![
                (1, 0.25),
                (2, 0.12),
                (4, 0.16),
                (8, 0.16),
                (16, 0.14),
                (32, 0.08),
                (48, 0.04),
                (64, 0.03),
                (128, 0.02),
            ],
            median_runtime_s: 1800.0,
            runtime_sigma: 1.1,
            min_runtime_s: 10.0,
            max_runtime_s: 48.0 * 3600.0,
            mean_interarrival_s: 120.0,
            start_time: DEFAULT_EPOCH,
            ref_watts_per_core: 205.0 / 48.0,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |s: &str| Err(WorkloadError::InvalidModel(s.to_string()));
        if self.users == 0 {
            return bad("users must be >= 1");
        }
        if self.max_cores == 0 {
            return bad("max_cores must be >= 1");
        }
        if self.core_choices.is_empty()
            || self
                .core_choices
                .iter()
                .any(|(c, w)| *c == 0 || !(w.is_finite() && *w >= 0.0))
            || self.core_choices.iter().all(|(_, w)| *w == 0.0)
        {
            return bad("core_choices need positive core counts and non-negative weights");
        }
        if !(self.median_runtime_s > 0.0 && self.runtime_sigma >= 0.0) {
            return bad("runtime distribution needs median > 0 and sigma >= 0");
        }
        if !(self.min_runtime_s > 0.0 && self.max_runtime_s >= self.min_runtime_s) {
            return bad("runtime bounds must satisfy 0 < min <= max");
        }
        if self.mean_interarrival_s.is_nan() || self.mean_interarrival_s <= 0.0 {
            return bad("mean_interarrival_s must be > 0");
        }
        if self.ref_watts_per_core.is_nan() || self.ref_watts_per_core <= 0.0 {
            return bad("ref_watts_per_core must be > 0");
        }
        Ok(())
    }
}

/// Generates a reference-machine trace. Core requests are capped at
/// `max_cores`, so every job fits any machine at least that large.
pub fn generate_trace(params: &TraceParams, seed: u64) -> Result<Vec<TraceRecord>, WorkloadError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cores = WeightedIndex::new(params.core_choices.iter().map(|(_, w)| *w))
        .map_err(|e| WorkloadError::InvalidModel(e.to_string()))?;
    let runtime = LogNormal::new(params.median_runtime_s.ln(), params.runtime_sigma)
        .map_err(|e| WorkloadError::InvalidModel(e.to_string()))?;
    let gaps = Exp::new(1.0 / params.mean_interarrival_s)
        .map_err(|e| WorkloadError::InvalidModel(e.to_string()))?;

    let mut t = params.start_time;
    let width = params.jobs.max(1).to_string().len();
    Ok((0..params.jobs)
        .map(|i| {
            let c = params.core_choices[cores.sample(&mut rng)]
                .0
                .min(params.max_cores);
            let rt = runtime
                .sample(&mut rng)
                .clamp(params.min_runtime_s, params.max_runtime_s);
            let activity = rng.random_range(0.5..0.95);
            let user = rng.random_range(0..params.users);
            let rec = TraceRecord {
                job_id: format!("job{i:0width$}"),
                user_id: format!("user{user:02}"),
                submit_time: t.round(),
                cores_requested: c,
                runtime_ref_s: (rt * 100.0).round() / 100.0,
                energy_ref_j: (rt * f64::from(c) * params.ref_watts_per_core * activity).round(),
            };
            t += gaps.sample(&mut rng);
            rec
        })
        .collect())
}

/// Counter captures on the reference machine: a compute-bound, a
/// memory-bound, and a mixed population in (instructions/s, LLC misses/s).
pub fn counter_samples(n: usize, seed: u64) -> Vec<CounterVector> {
    const CLUSTERS: [(f64, [f64; 2], [f64; 2]); 3] = [
        (0.45, [3.0e9, 1.0e6], [3.0e8, 3.0e5]),
        (0.25, [8.0e8, 4.0e7], [1.5e8, 8.0e6]),
        (0.30, [1.8e9, 1.0e7], [2.5e8, 2.5e6]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(CLUSTERS.iter().map(|c| c.0)).expect("static weights");
    (0..n)
        .map(|_| {
            let (_, mu, sd) = CLUSTERS[pick.sample(&mut rng)];
            CounterVector(
                (0..2)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (mu[d] + sd[d] * z).max(0.0)
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Fraction of time a job with these counters is stalled on memory, in [0, 1].
fn memory_boundness(cv: &CounterVector) -> f64 {
    let instr = cv.0.first().copied().unwrap_or(0.0).max(1.0);
    let misses = cv.0.get(1).copied().unwrap_or(0.0);
    let mpki = misses / instr * 1000.0;
    mpki / (mpki + 10.0)
}

/// Noise-free response model behind [`training_set`].
pub fn model_response(
    reference: &Machine,
    target: &Machine,
    cv: &CounterVector,
) -> MachineResponse {
    let mem = memory_boundness(cv);
    let compute_scale = if target.peak_perf_per_core > 0.0 {
        reference.peak_perf_per_core / target.peak_perf_per_core
    } else {
        1.0
    };
    // Memory subsystems improve by roughly 6% per hardware generation year.
    let memory_scale = 1.06f64.powi(reference.year_deployed - target.year_deployed);
    let runtime_scale = (1.0 - mem) * compute_scale + mem * memory_scale;
    let per_core_tdp = target.tdp_watts / f64::from(target.cores_per_node);
    let activity = 0.95 - 0.4 * mem;
    MachineResponse {
        runtime_scale,
        power_per_core_w: per_core_tdp * activity,
    }
}

/// Benchmark runs on every machine, with multiplicative log-normal noise.
/// Responses on the reference machine use scale 1.
pub fn training_set(
    machines: &[Machine],
    reference: &MachineId,
    n: usize,
    seed: u64,
) -> Result<Vec<TrainingPoint>, WorkloadError> {
    let ref_machine = machines
        .iter()
        .find(|m| &m.id == reference)
        .ok_or_else(|| WorkloadError::UnknownTarget(reference.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_be7c);
    let noise = Normal::<f64>::new(0.0, 0.05).expect("static");
    Ok(counter_samples(n, seed)
        .into_iter()
        .map(|features| {
            let responses: BTreeMap<MachineId, MachineResponse> = machines
                .iter()
                .map(|m| {
                    let mut r = model_response(ref_machine, m, &features);
                    if &m.id == reference {
                        r.runtime_scale = 1.0;
                    } else {
                        r.runtime_scale *= noise.sample(&mut rng).exp();
                    }
                    r.power_per_core_w *= noise.sample(&mut rng).exp();
                    (m.id.clone(), r)
                })
                .collect();
            TrainingPoint {
                features,
                responses,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::test_machine;

    #[test]
    fn trace_has_requested_size_and_is_seeded() {
        let p = TraceParams {
            jobs: 100,
            ..Default::default()
        };
        let a = generate_trace(&p, 1).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, generate_trace(&p, 1).unwrap());
        assert_ne!(a, generate_trace(&p, 2).unwrap());
        assert!(a.windows(2).all(|w| w[0].submit_time <= w[1].submit_time));
        assert!(a
            .iter()
            .all(|r| r.runtime_ref_s > 0.0 && r.energy_ref_j > 0.0));
    }

    #[test]
    fn core_cap_is_respected() {
        let p = TraceParams {
            jobs: 500,
            max_cores: 16,
            ..Default::default()
        };
        assert!(generate_trace(&p, 3)
            .unwrap()
            .iter()
            .all(|r| r.cores_requested <= 16));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = TraceParams {
            mean_interarrival_s: 0.0,
            ..Default::default()
        };
        assert!(generate_trace(&p, 0).is_err());
        let p = TraceParams {
            core_choices: vec![(4, 0.0)],
            ..Default::default()
        };
        assert!(generate_trace(&p, 0).is_err());
    }

    #[test]
    fn training_set_covers_all_machines() {
        let ms = vec![test_machine("a", 16, 100.0), test_machine("b", 32, 300.0)];
        let pts = training_set(&ms, &MachineId::new("a"), 30, 4).unwrap();
        assert_eq!(pts.len(), 30);
        for p in &pts {
            assert_eq!(p.responses.len(), 2);
            assert_eq!(p.responses[&MachineId::new("a")].runtime_scale, 1.0);
        }
        assert!(training_set(&ms, &MachineId::new("zz"), 3, 4).is_err());
    }
}
