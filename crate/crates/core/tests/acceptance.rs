//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use impact_core::accounting::{quote, JOULES_PER_KWH};
use impact_core::carbon::accelerated_to_linear_ratio;
use impact_core::config::SimulateConfig;
use impact_core::machine::load_machines;
use impact_core::sim::{
    audit, compare_policies, hourly_cheapest, run, BudgetRule, PlacementStatus, PolicyKind,
    PricingContext, SimConfig, UserMode,
};
use impact_core::workload::{JobProfile, MachineEstimate, Priority};
use impact_core::{
    cost_cba, cost_eba, AccountingParams, CarbonIntensitySeries, DepreciationSchedule, Execution,
    IntensityBook, Machine, MachineId, Method,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2023-01-01T00:00:00Z
const T0: f64 = 1_672_531_200.0;
const HOURS_2023: usize = 8760;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn cases(n: u32) -> PropConfig {
    PropConfig {
        cases: n,
        failure_persistence: None,
        ..PropConfig::default()
    }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[allow(clippy::too_many_arguments)]
fn machine(
    id: &str,
    cores_per_node: u32,
    node_count: u32,
    tdp: f64,
    peak: f64,
    year: i32,
    embodied: f64,
    region: &str,
) -> Machine {
    Machine {
        id: MachineId::new(id),
        name: id.to_string(),
        cores_per_node,
        node_count,
        tdp_watts: tdp,
        idle_watts: tdp / 10.0,
        peak_perf_per_core: peak,
        year_deployed: year,
        embodied_carbon_g: embodied,
        region_id: region.to_string(),
        pue: 1.0,
    }
}

fn exec(m: &Machine, duration_s: f64, energy_j: f64, cores: u32, start: f64) -> Execution {
    Execution {
        job_id: "j".into(),
        machine_id: m.id.clone(),
        duration_s,
        energy_j,
        cores_used: cores,
        start_time: start,
    }
}

fn profile(
    job_id: String,
    user: &str,
    submit: f64,
    cores: u32,
    machines: &[Machine],
    estimates: &[(f64, f64)],
) -> JobProfile {
    JobProfile {
        job_id,
        user_id: user.to_string(),
        submit_time: submit,
        cores_requested: cores,
        priority: Priority::Low,
        per_machine: machines
            .iter()
            .zip(estimates)
            .map(|(m, &(runtime_s, energy_j))| {
                (
                    m.id.clone(),
                    MachineEstimate {
                        runtime_s,
                        energy_j,
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
}

// ---------------------------------------------------------------------------
// Independent closed-form cost oracle. Written from the formulas, without
// calling into the accounting module.

struct Oracle<'a> {
    method: Method,
    beta: f64,
    intensity: &'a BTreeMap<String, f64>,
}

impl Oracle<'_> {
    fn cost(&self, m: &Machine, cores: u32, d: f64, e: f64) -> f64 {
        let c = f64::from(cores);
        match self.method {
            Method::Runtime => c * d,
            Method::Energy => e * m.pue,
            Method::Peak => c * d * m.peak_perf_per_core,
            Method::Eba => {
                let nodes = (c / f64::from(m.cores_per_node)).min(f64::from(m.node_count));
                0.5 * e * m.pue + 0.5 * self.beta * d * m.tdp_watts * nodes
            }
            Method::Cba => {
                let age = 2023 - m.year_deployed;
                let hourly = m.embodied_carbon_g * 0.4 * 0.6f64.powi(age) / 8760.0;
                let total = f64::from(m.cores_per_node) * f64::from(m.node_count);
                e * m.pue / 3.6e6 * self.intensity[&m.region_id] + hourly * d / 3600.0 * c / total
            }
        }
    }

    fn argmin<'m>(&self, machines: &'m [Machine], p: &JobProfile) -> Option<&'m MachineId> {
        let mut best: Option<(f64, &MachineId)> = None;
        for m in machines.iter().filter(|m| m.fits(p.cores_requested)) {
            let est = &p.per_machine[&m.id];
            let c = self.cost(m, p.cores_requested, est.runtime_s, est.energy_j);
            if best.is_none_or(|(b, id)| c < b || (c == b && m.id < *id)) {
                best = Some((c, &m.id));
            }
        }
        best.map(|(_, id)| id)
    }
}

struct Micro {
    machines: Vec<Machine>,
    profiles: Vec<JobProfile>,
    book: IntensityBook,
    intensity: BTreeMap<String, f64>,
    method: Method,
}

/// A seeded workload of at most 20 jobs on at most 4 machines. When
/// `all_eligible` is set no job asks for more cores than the smallest
/// machine has.
fn micro_workload(seed: u64, all_eligible: bool) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_machines = rng.random_range(2..=4);
    let mut machines = Vec::new();
    let mut book = IntensityBook::new();
    let mut intensity = BTreeMap::new();
    for i in 0..n_machines {
        let region = format!("grid{i}");
        let level = rng.random_range(50.0..600.0);
        book.insert(CarbonIntensitySeries::constant(
            &region, T0 as i64, HOURS_2023, level,
        ));
        intensity.insert(region.clone(), level);
        machines.push(machine(
            &format!("m{i}"),
            [4, 8, 16, 32][rng.random_range(0..4)],
            rng.random_range(1..=2),
            rng.random_range(50.0..500.0),
            rng.random_range(0.5..3.0),
            rng.random_range(2018..=2023),
            rng.random_range(1e5..1e7),
            &region,
        ));
    }
    let max_cores = if all_eligible {
        machines.iter().map(Machine::total_cores).min().unwrap()
    } else {
        machines.iter().map(Machine::total_cores).max().unwrap()
    } as u32;
    let n_jobs = rng.random_range(1..=20);
    let mut submit = T0 + 3600.0;
    let profiles = (0..n_jobs)
        .map(|j| {
            submit += rng.random_range(0.0..600.0);
            let cores = rng.random_range(1..=max_cores);
            let estimates: Vec<(f64, f64)> = machines
                .iter()
                .map(|_| {
                    let d = rng.random_range(10.0..2000.0);
                    (d, d * f64::from(cores) * rng.random_range(2.0..20.0))
                })
                .collect();
            let user = format!("u{}", rng.random_range(0..3));
            profile(
                format!("job{j}"),
                &user,
                submit,
                cores,
                &machines,
                &estimates,
            )
        })
        .collect();
    Micro {
        machines,
        profiles,
        book,
        intensity,
        method: Method::ALL[rng.random_range(0..Method::ALL.len())],
    }
}

fn unbudgeted(method: Method) -> SimConfig {
    SimConfig {
        user_mode: UserMode::PerTrace,
        ..SimConfig::new(method)
    }
}

// ---------------------------------------------------------------------------

fn eba_fixed_point() -> Outcome {
    let mut checked = 0;
    let mut runner = TestRunner::new(cases(256));
    runner
        .run(
            &(1.0f64..1e5, 1.0f64..1000.0, 1u32..=256, 1u32..=8),
            |(d, tdp, cores_per_node, nodes)| {
                let m = machine("x", cores_per_node, nodes, tdp, 1.0, 2023, 0.0, "r");
                let full = exec(&m, d, d * tdp, cores_per_node, T0);
                prop_assert_eq!(cost_eba(&full, &m, 1.0).unwrap().amount, d * tdp);
                let idle = exec(&m, d, 0.0, cores_per_node, T0);
                prop_assert_eq!(cost_eba(&idle, &m, 1.0).unwrap().amount, d * tdp / 2.0);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    checked += 256;
    let m = machine("x", 1, 1, 100.0, 1.0, 2023, 0.0, "r");
    ensure!(
        cost_eba(&exec(&m, 10.0, 1000.0, 1, T0), &m, 1.0)
            .unwrap()
            .amount
            == 1000.0,
        "(1000 J, 10 s, 100 W)"
    );
    ensure!(
        cost_eba(&exec(&m, 10.0, 0.0, 1, T0), &m, 1.0)
            .unwrap()
            .amount
            == 500.0,
        "(0 J, 10 s, 100 W)"
    );
    Ok(format!("{} cases exact", checked + 2))
}

fn depreciation_ratios() -> Outcome {
    let want = [1.2, 0.72, 0.432, 0.2592];
    for (age, &w) in (1..=4).zip(&want) {
        let closed = accelerated_to_linear_ratio(0.4, 5, age);
        ensure!(
            (closed - w).abs() <= 1e-12 * w,
            "closed form at age {age}: {closed} vs {w}"
        );
        let c = 1e6;
        let acc = DepreciationSchedule::accelerated(c)
            .hourly_carbon_rate(i64::from(age))
            .unwrap();
        let lin = DepreciationSchedule::linear(c)
            .hourly_carbon_rate(i64::from(age))
            .unwrap();
        ensure!(
            (acc / lin - w).abs() <= 1e-12 * w,
            "schedules at age {age}: {} vs {w}",
            acc / lin
        );
    }
    // Published per-job embodied mg (linear, accelerated) for machines aged 1..4.
    let table = [(1, 1.3, 1.6), (2, 1.4, 1.0), (3, 1.5, 0.6), (4, 1.0, 0.3)];
    for (age, linear_mg, accel_mg) in table {
        let predicted = linear_mg * accelerated_to_linear_ratio(0.4, 5, age);
        ensure!(
            (predicted - accel_mg).abs() <= 0.05,
            "age {age}: {linear_mg} mg x ratio = {predicted:.3} mg, published {accel_mg} mg"
        );
        if age >= 2 {
            ensure!(
                accel_mg < linear_mg,
                "age {age}: accelerated not below linear"
            );
        }
    }
    Ok("1.2, 0.72, 0.432, 0.2592; published mg columns within 0.05".into())
}

fn cba_constant_intensity() -> Outcome {
    let mut runner = TestRunner::new(cases(256));
    runner
        .run(
            &(0.0f64..1e9, 1.0f64..1e5, 0.0f64..1000.0),
            |(e, d, level)| {
                let m = machine("x", 16, 1, 65.0, 1.0, 2022, 0.0, "r");
                let ci = CarbonIntensitySeries::constant("r", T0 as i64, HOURS_2023, level);
                let q = cost_cba(
                    &exec(&m, d, e, 8, T0),
                    &m,
                    &ci,
                    &AccountingParams::default(),
                )
                .unwrap();
                prop_assert_eq!(q.amount, e / JOULES_PER_KWH * level);
                prop_assert_eq!(q.breakdown["embodied_g"], 0.0);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;

    let machines =
        load_machines(root().join("fixtures/machines.toml")).map_err(|e| e.to_string())?;
    let desktop = machines
        .iter()
        .find(|m| m.id.as_str() == "Desktop")
        .ok_or("no Desktop")?;
    let ci = CarbonIntensitySeries::constant(&desktop.region_id, T0 as i64, HOURS_2023, 454.0);
    let job = exec(desktop, 3600.0, 0.0, desktop.cores_per_node, T0);
    let q =
        cost_cba(&job, desktop, &ci, &AccountingParams::default()).map_err(|e| e.to_string())?;
    ensure!(
        q.breakdown["embodied_g"] == 12.2,
        "Desktop embodied {} g",
        q.breakdown["embodied_g"]
    );
    Ok("256 cases exact; Desktop 1 h full machine = 12.2 g".into())
}

fn greedy_oracle() -> Outcome {
    let started = Instant::now();
    let (mut jobs, mut matched) = (0usize, 0usize);
    let mut methods = BTreeMap::<Method, usize>::new();
    for seed in 0..50 {
        let w = micro_workload(1000 + seed, false);
        *methods.entry(w.method).or_default() += 1;
        let oracle = Oracle {
            method: w.method,
            beta: 1.0,
            intensity: &w.intensity,
        };
        let r = run(
            &w.profiles,
            &w.machines,
            &PolicyKind::Greedy,
            &unbudgeted(w.method),
            &w.book,
        )
        .map_err(|e| format!("seed {seed}: {e}"))?;
        for (p, placed) in w.profiles.iter().zip(&r.placements) {
            jobs += 1;
            let want = oracle.argmin(&w.machines, p);
            if placed.machine.as_ref() == want && placed.status == PlacementStatus::Completed {
                matched += 1;
            } else {
                return Err(format!(
                    "seed {seed} {} ({}): greedy {:?}, oracle {want:?}",
                    p.job_id, w.method, placed.machine
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{matched}/{jobs} jobs match over 50 workloads {methods:?} in {elapsed:.2?}"
    ))
}

fn energy_minimality() -> Outcome {
    let started = Instant::now();
    let mut comparisons = 0;
    for seed in 0..50 {
        let w = micro_workload(5000 + seed, true);
        let fixed: Vec<&MachineId> = w.machines.iter().take(3).map(|m| &m.id).collect();
        let policies = PolicyKind::standard_set(fixed);
        let runs = compare_policies(
            &w.profiles,
            &w.machines,
            &policies,
            &unbudgeted(w.method),
            BudgetRule::Unlimited,
            &w.book,
        )
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let energy = runs
            .iter()
            .find(|r| r.policy == PolicyKind::Energy)
            .unwrap();
        for r in &runs {
            ensure!(
                r.result.jobs_completed == r.result.jobs_total,
                "seed {seed}: {} left jobs unfinished",
                r.policy
            );
            ensure!(
                energy.result.energy_kwh <= r.result.energy_kwh,
                "seed {seed}: Energy {} kWh > {} {} kWh",
                energy.result.energy_kwh,
                r.policy,
                r.result.energy_kwh
            );
            comparisons += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{comparisons} policy runs over 50 fixtures in {elapsed:.2?}"
    ))
}

fn peak_versus_eba() -> Outcome {
    // (machine, runtime s, energy J) for one 8-core job.
    let machines = vec![
        machine("Desktop", 16, 1, 65.0, 1.29, 2020, 0.0, "r"),
        machine("CascadeLake", 48, 1, 410.0, 1.0, 2019, 0.0, "r"),
        machine("IceLake", 80, 1, 540.0, 1.08, 2021, 0.0, "r"),
        machine("Zen3", 128, 1, 560.0, 1.13, 2022, 0.0, "r"),
    ];
    let runs: [(f64, f64); 4] = [(5.20, 549.0), (4.50, 1074.0), (4.60, 594.0), (5.65, 504.0)];
    let cores = 8;

    let fastest = (0..4)
        .min_by(|&a, &b| runs[a].0.total_cmp(&runs[b].0))
        .unwrap();
    let hungriest = (0..4)
        .max_by(|&a, &b| runs[a].1.total_cmp(&runs[b].1))
        .unwrap();
    let slowest = (0..4)
        .max_by(|&a, &b| runs[a].0.total_cmp(&runs[b].0))
        .unwrap();
    ensure!(
        fastest == hungriest,
        "fastest machine is not the most energy-hungry"
    );
    let peaks: Vec<f64> = machines.iter().map(|m| m.peak_perf_per_core).collect();
    ensure!(
        peaks[slowest] > peaks[fastest] && peaks[0] == peaks.iter().cloned().fold(0.0, f64::max),
        "per-core peak is not highest on the slow machines"
    );

    let params = AccountingParams::default();
    let argmin = |method: Method| -> Result<usize, String> {
        let costs = machines
            .iter()
            .zip(&runs)
            .map(|(m, &(d, e))| {
                quote(method, &exec(m, d, e, cores, T0), m, None, &params).map(|q| q.amount)
            })
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| e.to_string())?;
        Ok((0..costs.len())
            .min_by(|&a, &b| costs[a].total_cmp(&costs[b]))
            .unwrap())
    };
    let (peak, energy, eba) = (
        argmin(Method::Peak)?,
        argmin(Method::Energy)?,
        argmin(Method::Eba)?,
    );
    ensure!(
        peak != energy,
        "Peak and Energy both pick {}",
        machines[peak].id
    );
    let ratio = runs[peak].1 / runs[eba].1;
    ensure!(
        ratio >= 2.0,
        "Peak choice uses {ratio:.3}x the energy of EBA's choice"
    );

    // The simulator's Greedy user agrees with the static argmin.
    let book =
        IntensityBook::new().with(CarbonIntensitySeries::constant("r", T0 as i64, 24, 400.0));
    let job = profile("j".into(), "u", T0, cores, &machines, &runs);
    for (method, want) in [
        (Method::Peak, peak),
        (Method::Eba, eba),
        (Method::Energy, energy),
    ] {
        let r = run(
            std::slice::from_ref(&job),
            &machines,
            &PolicyKind::Greedy,
            &SimConfig::new(method),
            &book,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            r.placements[0].machine.as_ref() == Some(&machines[want].id),
            "{method} greedy placed on {:?}",
            r.placements[0].machine
        );
    }
    Ok(format!(
        "Peak -> {}, Energy -> {}, EBA -> {}; energy ratio {ratio:.2}",
        machines[peak].id, machines[energy].id, machines[eba].id
    ))
}

fn crossing_intensity() -> Outcome {
    // Shipped variable-intensity fixture: the IC and Theta grids cross daily.
    let machines =
        load_machines(root().join("fixtures/machines.toml")).map_err(|e| e.to_string())?;
    let pair: Vec<Machine> = machines
        .into_iter()
        .filter(|m| matches!(m.id.as_str(), "IC" | "Theta"))
        .collect();
    let dir = root().join("fixtures/intensity/variable");
    let book = IntensityBook::load_files(&[dir.join("ic-grid.txt"), dir.join("theta-grid.txt")])
        .map_err(|e| e.to_string())?;
    let job = profile(
        "j".into(),
        "u",
        T0,
        16,
        &pair,
        &[(3600.0, 3600.0 * 16.0 * 10.0); 2],
    );
    let ctx = PricingContext {
        machines: &pair,
        book: &book,
        method: Method::Cba,
        params: AccountingParams::default(),
    };
    let hours = hourly_cheapest(&job, &ctx, T0, T0 + 86_400.0).map_err(|e| e.to_string())?;
    let shifts = hours.windows(2).filter(|w| w[0].1 != w[1].1).count();
    ensure!(shifts >= 1, "shipped curves: cheapest machine never shifts");

    // Any pair of mirrored daily curves that genuinely cross.
    let mut runner = TestRunner::new(cases(64));
    runner
        .run(
            &(
                100.0f64..500.0,
                0.1f64..0.9,
                0usize..24,
                1u32..=16,
                60.0f64..7200.0,
                1e4f64..1e8,
            ),
            |(base, swing, phase, cores, d, e)| {
                let amplitude = base * swing;
                let curve = |sign: f64| -> Vec<f64> {
                    (0..24)
                        .map(|h| {
                            let x = std::f64::consts::TAU * ((h + phase) % 24) as f64 / 24.0;
                            base + sign * amplitude * x.sin().signum() * (0.5 + 0.5 * x.sin().abs())
                        })
                        .collect()
                };
                let ms = vec![
                    machine("a", 16, 1, 100.0, 1.0, 2022, 1e6, "ra"),
                    machine("b", 16, 1, 100.0, 1.0, 2022, 1e6, "rb"),
                ];
                let book = IntensityBook::new()
                    .with(CarbonIntensitySeries::new("ra", T0 as i64, curve(1.0)).unwrap())
                    .with(CarbonIntensitySeries::new("rb", T0 as i64, curve(-1.0)).unwrap());
                let ctx = PricingContext {
                    machines: &ms,
                    book: &book,
                    method: Method::Cba,
                    params: AccountingParams::default(),
                };
                let job = profile("j".into(), "u", T0, cores, &ms, &[(d, e); 2]);
                let hours = hourly_cheapest(&job, &ctx, T0, T0 + 86_400.0).unwrap();
                prop_assert_eq!(hours.len(), 24);
                prop_assert!(hours.windows(2).any(|w| w[0].1 != w[1].1));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "shipped IC/Theta curves shift {shifts}x in a day; 64 generated crossings all shift"
    ))
}

fn simulator_audits() -> Outcome {
    let root = root();
    let mut configs: Vec<PathBuf> = std::fs::read_dir(root.join("fixtures"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "toml")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("simulate"))
        })
        .collect();
    configs.sort();
    ensure!(!configs.is_empty(), "no simulate configs shipped");
    let (mut runs, mut events) = (0, 0);
    for path in &configs {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let once = || -> Result<String, String> {
            let mut cfg = SimulateConfig::load(path).map_err(|e| e.to_string())?;
            cfg.rebase(Path::new(&root));
            let p = cfg.prepare().map_err(|e| e.to_string())?;
            let out = compare_policies(
                &p.profiles,
                &p.machines,
                &p.policies,
                &p.sim,
                p.budget,
                &p.book,
            )
            .map_err(|e| e.to_string())?;
            for r in &out {
                let report = audit(&r.result, &p.machines);
                if !report.is_clean() {
                    return Err(format!("{}: {:?}", r.policy, report.violations));
                }
            }
            serde_json::to_string(&out).map_err(|e| e.to_string())
        };
        let first = once().map_err(|e| format!("{name}: {e}"))?;
        let second = once().map_err(|e| format!("{name}: {e}"))?;
        ensure!(first == second, "{name}: two runs differ");
        let parsed: Vec<serde_json::Value> = serde_json::from_str(&first).unwrap();
        runs += parsed.len();
        events += parsed
            .iter()
            .map(|r| r["result"]["events"].as_array().map_or(0, Vec::len))
            .sum::<usize>();
    }
    Ok(format!(
        "{} configs, {runs} policy runs, {events} events, 0 violations, reproducible",
        configs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("EBA fixed point and idle case", eba_fixed_point),
        ("depreciation ratios", depreciation_ratios),
        ("CBA under constant intensity", cba_constant_intensity),
        ("Greedy matches brute-force argmin", greedy_oracle),
        ("Energy policy minimises total energy", energy_minimality),
        ("Peak vs EBA on the four-machine fixture", peak_versus_eba),
        (
            "crossing intensity shifts the cheapest machine",
            crossing_intensity,
        ),
        ("simulator audits and determinism", simulator_audits),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
