use impact_core::sim::{audit, compare_policies, BudgetRule, PolicyKind, SimConfig, UserMode};
use impact_core::workload::{JobProfile, MachineEstimate, Priority};
use impact_core::{CarbonIntensitySeries, IntensityBook, Machine, MachineId, Method};
use proptest::prelude::*;

const T0: f64 = 1_672_531_200.0;

fn machine(i: usize, cores_per_node: u32, nodes: u32, tdp: f64) -> Machine {
    Machine {
        id: MachineId::new(format!("m{i}")),
        name: format!("m{i}"),
        cores_per_node,
        node_count: nodes,
        tdp_watts: tdp,
        idle_watts: tdp / 10.0,
        peak_perf_per_core: 1.0 + i as f64 / 4.0,
        year_deployed: 2020 + i as i32,
        embodied_carbon_g: 1e6 * (i + 1) as f64,
        region_id: format!("g{i}"),
        pue: 1.0 + i as f64 / 10.0,
    }
}

prop_compose! {
    fn cluster()(specs in prop::collection::vec((prop::sample::select(vec![4u32, 8, 16]), 1u32..=3, 50.0f64..400.0), 1..=4))
        -> Vec<Machine> {
        specs.into_iter().enumerate().map(|(i, (c, n, t))| machine(i, c, n, t)).collect()
    }
}

fn workload(machines: Vec<Machine>) -> impl Strategy<Value = (Vec<Machine>, Vec<JobProfile>)> {
    let n = machines.len();
    let job = (
        0.0f64..900.0,
        1u32..=64,
        0u8..3,
        prop::collection::vec((10.0f64..3000.0, 1.0f64..30.0), n),
    );
    prop::collection::vec(job, 1..=25).prop_map(move |jobs| {
        let mut submit = T0;
        let profiles = jobs
            .into_iter()
            .enumerate()
            .map(|(j, (gap, cores, user, est))| {
                submit += gap;
                JobProfile {
                    job_id: format!("j{j}"),
                    user_id: format!("u{user}"),
                    submit_time: submit,
                    cores_requested: cores,
                    priority: Priority::Medium,
                    per_machine: machines
                        .iter()
                        .zip(&est)
                        .map(|(m, &(d, w))| {
                            (
                                m.id.clone(),
                                MachineEstimate {
                                    runtime_s: d,
                                    energy_j: d * w * f64::from(cores),
                                },
                            )
                        })
                        .collect(),
                    eligible_machines: machines
                        .iter()
                        .filter(|m| m.fits(cores))
                        .map(|m| m.id.clone())
                        .collect(),
                }
            })
            .collect();
        (machines.clone(), profiles)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_policy_run_audits_clean(
        (machines, profiles) in cluster().prop_flat_map(workload),
        method in prop::sample::select(Method::ALL.to_vec()),
        fraction in prop::option::of(0.0f64..1.2),
        horizon_h in prop::option::of(0.5f64..6.0),
        per_trace in any::<bool>(),
    ) {
        let book = machines.iter().fold(IntensityBook::new(), |b, m| {
            b.with(CarbonIntensitySeries::constant(&m.region_id, T0 as i64, 24 * 40, 300.0))
        });
        let config = SimConfig {
            horizon: horizon_h.map(|h| T0 + h * 3600.0),
            user_mode: if per_trace { UserMode::PerTrace } else { UserMode::Single },
            ..SimConfig::new(method)
        };
        let rule = fraction.map_or(BudgetRule::Unlimited, |fraction| BudgetRule::GreedySpend { fraction });
        let policies = PolicyKind::standard_set(machines.iter().map(|m| &m.id));
        let runs = compare_policies(&profiles, &machines, &policies, &config, rule, &book).unwrap();
        for r in &runs {
            let report = audit(&r.result, &machines);
            prop_assert!(report.is_clean(), "{}: {:?}", r.policy, report.violations);
            let res = &r.result;
            if let Some(b) = res.budget {
                prop_assert!(res.spent <= b);
            }
            prop_assert_eq!(res.jobs_total as usize, profiles.len());
            prop_assert!(res.jobs_completed + res.jobs_unplaceable + res.jobs_over_budget <= res.jobs_total);
            prop_assert_eq!(res.per_machine.values().sum::<u64>(), res.jobs_completed);
            prop_assert!(res.energy_kwh >= 0.0 && res.attributed_g >= res.operational_g);
        }
    }
}
