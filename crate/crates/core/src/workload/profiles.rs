use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    derive_seed, predict_execution, sample_counters, MixtureModel, NeighborModel, TraceRecord,
    WorkloadError,
};
use crate::machine::{Machine, MachineId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    Low,
    Medium,
    High,
    VeryHigh,
}

impl Priority {
    pub const ALL: [Priority; 4] = [
        Priority::Low,
        Priority::Medium,
        Priority::High,
        Priority::VeryHigh,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineEstimate {
    pub runtime_s: f64,
    pub energy_j: f64,
}

/// A job with its runtime and energy on every machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobProfile {
    pub job_id: String,
    pub user_id: String,
    pub submit_time: f64,
    pub cores_requested: u32,
    pub priority: Priority,
    pub per_machine: BTreeMap<MachineId, MachineEstimate>,
    /// Machines with at least `cores_requested` cores, in fixture order.
    pub eligible_machines: Vec<MachineId>,
}

impl JobProfile {
    pub fn estimate(&self, m: &MachineId) -> Option<&MachineEstimate> {
        self.per_machine.get(m)
    }

    pub fn is_eligible(&self, m: &MachineId) -> bool {
        self.eligible_machines.contains(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Copies made of each trace record.
    pub repeat: u32,
    pub seed: u64,
    /// Jobs of one user requesting the same core count draw a single counter
    /// vector, so they behave identically across machines.
    pub share_repetition_characteristics: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            repeat: 2,
            seed: 0,
            share_repetition_characteristics: true,
        }
    }
}

fn copy_id(job_id: &str, rep: u32) -> String {
    if rep == 0 {
        job_id.to_string()
    } else {
        format!("{job_id}#r{rep}")
    }
}

/// Expands a trace into per-machine job profiles, sorted by submit time.
///
/// Every random draw is seeded from `opts.seed` and the record's own key, so
/// the output does not depend on processing order.
pub fn build_profiles(
    trace: &[TraceRecord],
    machines: &[Machine],
    mixture: &MixtureModel,
    neighbors: &NeighborModel,
    opts: &BuildOptions,
) -> Result<Vec<JobProfile>, WorkloadError> {
    mixture.validate()?;
    let mut out = Vec::with_capacity(trace.len() * opts.repeat as usize);
    for rec in trace {
        let counter_key = if opts.share_repetition_characteristics {
            format!("counters|{}|{}", rec.user_id, rec.cores_requested)
        } else {
            format!("counters|{}", rec.job_id)
        };
        let cv = sample_counters(mixture, 1, derive_seed(opts.seed, &counter_key))
            .pop()
            .expect("one sample");

        let mut per_machine = BTreeMap::new();
        for m in machines {
            let (runtime_s, energy_j) = predict_execution(neighbors, &cv, rec, m)?;
            per_machine.insert(
                m.id.clone(),
                MachineEstimate {
                    runtime_s,
                    energy_j,
                },
            );
        }
        let eligible_machines: Vec<MachineId> = machines
            .iter()
            .filter(|m| m.fits(rec.cores_requested))
            .map(|m| m.id.clone())
            .collect();

        for rep in 0..opts.repeat {
            let job_id = copy_id(&rec.job_id, rep);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &format!("priority|{job_id}")));
            let priority = Priority::ALL[rng.random_range(0..Priority::ALL.len())];
            out.push(JobProfile {
                job_id,
                user_id: rec.user_id.clone(),
                submit_time: rec.submit_time,
                cores_requested: rec.cores_requested,
                priority,
                per_machine: per_machine.clone(),
                eligible_machines: eligible_machines.clone(),
            });
        }
    }
    out.sort_by(|a, b| a.submit_time.total_cmp(&b.submit_time));
    Ok(out)
}

/// Work of a job in core-hours: requested cores times the mean runtime over
/// the machines it can run on.
pub fn work_of(profile: &JobProfile) -> Result<f64, WorkloadError> {
    let runtimes: Vec<f64> = profile
        .eligible_machines
        .iter()
        .filter_map(|m| profile.per_machine.get(m).map(|e| e.runtime_s))
        .collect();
    if runtimes.is_empty() {
        return Err(WorkloadError::NoEligibleMachine(profile.job_id.clone()));
    }
    let mean_s = runtimes.iter().sum::<f64>() / runtimes.len() as f64;
    Ok(f64::from(profile.cores_requested) * mean_s / 3600.0)
}

pub fn save_profiles(path: impl AsRef<Path>, profiles: &[JobProfile]) -> Result<(), WorkloadError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, profiles)?;
    Ok(())
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<JobProfile>, WorkloadError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let profiles: Vec<JobProfile> = serde_json::from_reader(f)?;
    for p in &profiles {
        for (m, e) in &p.per_machine {
            if !(e.runtime_s > 0.0 && e.energy_j > 0.0) {
                return Err(WorkloadError::InvalidModel(format!(
                    "profile `{}` has a non-positive estimate on `{m}`",
                    p.job_id
                )));
            }
        }
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::test_machine;
    use crate::workload::CounterVector;
    use crate::workload::{MachineResponse, MixtureComponent, TrainingPoint};

    fn models() -> (MixtureModel, NeighborModel) {
        let mix = MixtureModel::new(vec![MixtureComponent {
            weight: 1.0,
            mean: vec![1.0, 1.0],
            variance: vec![0.1, 0.1],
        }])
        .unwrap();
        let pts = (0..4)
            .map(|i| {
                let mut responses = BTreeMap::new();
                responses.insert(
                    MachineId::new("big"),
                    MachineResponse {
                        runtime_scale: 1.0,
                        power_per_core_w: 4.0,
                    },
                );
                responses.insert(
                    MachineId::new("small"),
                    MachineResponse {
                        runtime_scale: 0.5 + 0.1 * i as f64,
                        power_per_core_w: 3.0,
                    },
                );
                TrainingPoint {
                    features: CounterVector(vec![i as f64, (i * i) as f64]),
                    responses,
                }
            })
            .collect();
        (
            mix,
            NeighborModel::fit(MachineId::new("big"), pts, 2).unwrap(),
        )
    }

    fn rec(id: &str, cores: u32) -> TraceRecord {
        TraceRecord {
            job_id: id.into(),
            user_id: "u".into(),
            submit_time: 0.0,
            cores_requested: cores,
            runtime_ref_s: 100.0,
            energy_ref_j: 5000.0,
        }
    }

    fn machines() -> Vec<Machine> {
        vec![
            test_machine("big", 64, 200.0),
            test_machine("small", 16, 65.0),
        ]
    }

    #[test]
    fn one_record_two_copies() {
        let (mix, nm) = models();
        let p = build_profiles(
            &[rec("a", 4)],
            &machines(),
            &mix,
            &nm,
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].job_id, "a");
        assert_eq!(p[1].job_id, "a#r1");
        for prof in &p {
            assert_eq!(prof.per_machine.len(), 2);
            let big = prof.per_machine[&MachineId::new("big")];
            assert_eq!((big.runtime_s, big.energy_j), (100.0, 5000.0));
            assert!(prof
                .per_machine
                .values()
                .all(|e| e.runtime_s > 0.0 && e.energy_j > 0.0));
        }
    }

    #[test]
    fn eligibility_follows_core_counts() {
        let (mix, nm) = models();
        let p = build_profiles(
            &[rec("wide", 32)],
            &machines(),
            &mix,
            &nm,
            &BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(p[0].eligible_machines, vec![MachineId::new("big")]);
        assert!(!p[0].is_eligible(&MachineId::new("small")));
    }

    #[test]
    fn seeded_builds_are_identical() {
        let (mix, nm) = models();
        let trace: Vec<_> = (0..20).map(|i| rec(&format!("j{i}"), 1 + i % 8)).collect();
        let opts = BuildOptions {
            seed: 17,
            ..Default::default()
        };
        let a = build_profiles(&trace, &machines(), &mix, &nm, &opts).unwrap();
        let b = build_profiles(&trace, &machines(), &mix, &nm, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), trace.len() * 2);
        // per-record seeding: a record's profile doesn't depend on its neighbours
        let alone = build_profiles(&trace[5..6], &machines(), &mix, &nm, &opts).unwrap();
        let same = a.iter().find(|p| p.job_id == "j5").unwrap();
        assert_eq!(&alone[0], same);
    }

    fn profile(runtimes: &[(&str, f64)], cores: u32) -> JobProfile {
        JobProfile {
            job_id: "p".into(),
            user_id: "u".into(),
            submit_time: 0.0,
            cores_requested: cores,
            priority: Priority::Low,
            per_machine: runtimes
                .iter()
                .map(|(m, r)| {
                    (
                        MachineId::new(*m),
                        MachineEstimate {
                            runtime_s: *r,
                            energy_j: 1.0,
                        },
                    )
                })
                .collect(),
            eligible_machines: runtimes.iter().map(|(m, _)| MachineId::new(*m)).collect(),
        }
    }

    #[test]
    fn work_examples() {
        assert_eq!(
            work_of(&profile(&[("a", 3600.0), ("b", 7200.0)], 2)).unwrap(),
            3.0
        );
        assert_eq!(work_of(&profile(&[("a", 1800.0)], 4)).unwrap(), 2.0);
        let one = work_of(&profile(&[("a", 1000.0), ("b", 3000.0)], 3)).unwrap();
        let two = work_of(&profile(&[("a", 2000.0), ("b", 6000.0)], 3)).unwrap();
        assert_eq!(two, 2.0 * one);
        let mut none = profile(&[("a", 10.0)], 1);
        none.eligible_machines.clear();
        assert!(matches!(
            work_of(&none),
            Err(WorkloadError::NoEligibleMachine(_))
        ));
    }

    #[test]
    fn profiles_file_round_trip() {
        let (mix, nm) = models();
        let p = build_profiles(
            &[rec("a", 4)],
            &machines(),
            &mix,
            &nm,
            &BuildOptions::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_profiles(&path, &p).unwrap();
        assert_eq!(load_profiles(&path).unwrap(), p);
    }
}
