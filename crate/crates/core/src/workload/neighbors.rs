//! k-nearest-neighbour extrapolation of runtime and power across machines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CounterVector, TraceRecord, WorkloadError};
use crate::machine::{Machine, MachineId};

/// Behaviour of one benchmark on one machine, relative to the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineResponse {
    /// Runtime on this machine divided by runtime on the reference machine.
    pub runtime_scale: f64,
    /// Mean power per occupied core, in watts.
    pub power_per_core_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub features: CounterVector,
    pub responses: BTreeMap<MachineId, MachineResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborModel {
    pub reference: MachineId,
    pub k: usize,
    points: Vec<TrainingPoint>,
    /// z-score constants per feature.
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
}

impl NeighborModel {
    pub fn fit(
        reference: MachineId,
        points: Vec<TrainingPoint>,
        k: usize,
    ) -> Result<Self, WorkloadError> {
        if k == 0 || k > points.len() {
            return Err(WorkloadError::InvalidModel(format!(
                "k = {k} must lie in [1, {}]",
                points.len()
            )));
        }
        let dim = points[0].features.dim();
        for p in &points {
            if p.features.dim() != dim {
                return Err(WorkloadError::Dimension {
                    expected: dim,
                    found: p.features.dim(),
                });
            }
            for (id, r) in &p.responses {
                if !(r.runtime_scale > 0.0
                    && r.runtime_scale.is_finite()
                    && r.power_per_core_w > 0.0
                    && r.power_per_core_w.is_finite())
                {
                    return Err(WorkloadError::InvalidModel(format!(
                        "non-positive response for machine `{id}`"
                    )));
                }
            }
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in &points {
            for (m, x) in mean.iter_mut().zip(&p.features.0) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for p in &points {
            for d in 0..dim {
                scale[d] += (p.features.0[d] - mean[d]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(NeighborModel {
            reference,
            k,
            points,
            feature_mean: mean,
            feature_scale: scale,
        })
    }

    pub fn points(&self) -> &[TrainingPoint] {
        &self.points
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Inverse-distance-weighted mean response of the `k` nearest training
    /// points that cover `target`. Exact matches short-circuit to the mean
    /// of the zero-distance points.
    pub fn predict_response(
        &self,
        cv: &CounterVector,
        target: &MachineId,
    ) -> Result<MachineResponse, WorkloadError> {
        if cv.dim() != self.feature_mean.len() {
            return Err(WorkloadError::Dimension {
                expected: self.feature_mean.len(),
                found: cv.dim(),
            });
        }
        let q = self.normalize(&cv.0);
        let mut ranked: Vec<(f64, usize, MachineResponse)> = self
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let r = p.responses.get(target)?;
                let z = self.normalize(&p.features.0);
                let dist = z
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                Some((dist, i, *r))
            })
            .collect();
        if ranked.is_empty() {
            return Err(WorkloadError::UnknownTarget(target.clone()));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(self.k);

        let exact: Vec<_> = ranked.iter().filter(|r| r.0 == 0.0).collect();
        if !exact.is_empty() {
            let n = exact.len() as f64;
            return Ok(MachineResponse {
                runtime_scale: exact.iter().map(|r| r.2.runtime_scale).sum::<f64>() / n,
                power_per_core_w: exact.iter().map(|r| r.2.power_per_core_w).sum::<f64>() / n,
            });
        }
        let mut wsum = 0.0;
        let mut scale = 0.0;
        let mut power = 0.0;
        for (d, _, r) in &ranked {
            let w = 1.0 / d;
            wsum += w;
            scale += w * r.runtime_scale;
            power += w * r.power_per_core_w;
        }
        Ok(MachineResponse {
            runtime_scale: scale / wsum,
            power_per_core_w: power / wsum,
        })
    }
}

/// Predicted `(runtime_s, energy_j)` of a traced job on `target`. On the
/// reference machine the traced values are returned verbatim.
pub fn predict_execution(
    nm: &NeighborModel,
    cv: &CounterVector,
    reference_run: &TraceRecord,
    target: &Machine,
) -> Result<(f64, f64), WorkloadError> {
    if target.id == nm.reference {
        return Ok((reference_run.runtime_ref_s, reference_run.energy_ref_j));
    }
    let r = nm.predict_response(cv, &target.id)?;
    let runtime = reference_run.runtime_ref_s * r.runtime_scale;
    let energy = runtime * r.power_per_core_w * f64::from(reference_run.cores_requested);
    Ok((runtime, energy))
}
