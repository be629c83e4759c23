use std::ffi::{c_char, CString};
use std::ptr;

use impact_ffi::*;

const T0: f64 = 1_672_531_200.0;

const FIXTURE: &str = r#"
[[machine]]
id = "desk"
name = "Desktop"
cores_per_node = 16
tdp_watts = 65.0
idle_watts = 6.5
peak_perf_per_core = 2.9
year_deployed = 2022
embodied_carbon_g = 445300.0
region_id = "grid"

[[machine]]
id = "big"
name = "Cluster"
cores_per_node = 64
node_count = 4
tdp_watts = 200.0
idle_watts = 20.0
peak_perf_per_core = 1.0
year_deployed = 2023
embodied_carbon_g = 0.0
region_id = "grid"
"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { impact_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

struct Fixture {
    set: *mut ImpactMachineSet,
    book: *mut ImpactIntensity,
}

impl Fixture {
    fn new() -> Self {
        let toml = CString::new(FIXTURE).unwrap();
        let mut set = ptr::null_mut();
        assert_eq!(
            unsafe { impact_machines_parse(toml.as_ptr(), &mut set) },
            ImpactStatus::Ok
        );
        let book = impact_intensity_new();
        let region = CString::new("grid").unwrap();
        assert_eq!(
            unsafe { impact_intensity_add_constant(book, region.as_ptr(), T0 as i64, 48, 454.0) },
            ImpactStatus::Ok
        );
        Fixture { set, book }
    }

    fn quote(
        &self,
        id: &str,
        method: ImpactMethod,
        exec: ImpactExecution,
    ) -> Result<ImpactQuote, ImpactStatus> {
        let id = CString::new(id).unwrap();
        let mut out = ImpactQuote::default();
        match unsafe {
            impact_quote(
                self.set,
                id.as_ptr(),
                method,
                &exec,
                self.book,
                ptr::null(),
                &mut out,
            )
        } {
            ImpactStatus::Ok => Ok(out),
            s => Err(s),
        }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            impact_machines_free(self.set);
            impact_intensity_free(self.book);
        }
    }
}

fn run(d: f64, e: f64, cores: u32) -> ImpactExecution {
    ImpactExecution {
        duration_s: d,
        energy_j: e,
        cores_used: cores,
        start_time: T0,
    }
}

#[test]
fn parses_machines() {
    let f = Fixture::new();
    assert_eq!(unsafe { impact_machines_count(f.set) }, 2);
    assert_eq!(unsafe { impact_machines_count(ptr::null()) }, 0);
}

#[test]
fn eba_fixed_point_and_idle() {
    let f = Fixture::new();
    let full = f
        .quote("desk", ImpactMethod::Eba, run(100.0, 6500.0, 16))
        .unwrap();
    assert_eq!(full.amount, 6500.0);
    assert_eq!((full.part_a, full.part_b), (3250.0, 3250.0));
    let idle = f
        .quote("desk", ImpactMethod::Eba, run(100.0, 0.0, 16))
        .unwrap();
    assert_eq!(idle.amount, 3250.0);
}

#[test]
fn simple_methods() {
    let f = Fixture::new();
    let exec = run(10.0, 500.0, 4);
    assert_eq!(
        f.quote("big", ImpactMethod::Runtime, exec).unwrap().amount,
        40.0
    );
    assert_eq!(
        f.quote("big", ImpactMethod::Energy, exec).unwrap().amount,
        500.0
    );
    assert_eq!(
        f.quote("desk", ImpactMethod::Peak, exec).unwrap().amount,
        40.0 * 2.9
    );
}

#[test]
fn cba_components() {
    let f = Fixture::new();
    let q = f
        .quote("big", ImpactMethod::Cba, run(3600.0, 3.6e6, 8))
        .unwrap();
    assert_eq!(q.part_a, 454.0);
    assert_eq!(q.part_b, 0.0);
    let desk = f
        .quote("desk", ImpactMethod::Cba, run(3600.0, 0.0, 16))
        .unwrap();
    assert_eq!(desk.amount, desk.part_a + desk.part_b);
    assert!((desk.part_b - 12.2).abs() < 1e-9);
}

#[test]
fn errors_are_reported_with_messages() {
    let f = Fixture::new();
    assert_eq!(
        f.quote("nope", ImpactMethod::Energy, run(1.0, 1.0, 1))
            .unwrap_err(),
        ImpactStatus::NotFound
    );
    assert!(last_error().contains("nope"));
    assert_eq!(
        f.quote("desk", ImpactMethod::Energy, run(1.0, 1.0, 64))
            .unwrap_err(),
        ImpactStatus::Accounting
    );
    assert!(last_error().contains("cores"));
    let bad_beta = ImpactParams {
        beta: 2.0,
        ..impact_params_default()
    };
    let id = CString::new("desk").unwrap();
    let mut out = ImpactQuote::default();
    let status = unsafe {
        impact_quote(
            f.set,
            id.as_ptr(),
            ImpactMethod::Eba,
            &run(1.0, 1.0, 1),
            ptr::null(),
            &bad_beta,
            &mut out,
        )
    };
    assert_eq!(status, ImpactStatus::Accounting);
    let status = unsafe {
        impact_quote(
            f.set,
            id.as_ptr(),
            ImpactMethod::Cba,
            &run(1.0, 1.0, 1),
            ptr::null(),
            ptr::null(),
            &mut out,
        )
    };
    assert_eq!(status, ImpactStatus::Accounting);
    let status = unsafe {
        impact_quote(
            ptr::null(),
            id.as_ptr(),
            ImpactMethod::Energy,
            &run(1.0, 1.0, 1),
            ptr::null(),
            ptr::null(),
            &mut out,
        )
    };
    assert_eq!(status, ImpactStatus::NullPointer);

    let garbage = CString::new("[[machine]]\nid = 3").unwrap();
    let mut set = ptr::null_mut();
    assert_eq!(
        unsafe { impact_machines_parse(garbage.as_ptr(), &mut set) },
        ImpactStatus::Parse
    );
    assert!(set.is_null());
}

#[test]
fn truncated_error_copy_reports_full_length() {
    let f = Fixture::new();
    f.quote(
        "a-rather-long-machine-name",
        ImpactMethod::Energy,
        run(1.0, 1.0, 1),
    )
    .unwrap_err();
    let mut buf = [0 as c_char; 8];
    let n = unsafe { impact_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 8);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { impact_last_error_message(ptr::null_mut(), 0) }, n);
}

#[test]
fn depreciation() {
    let mut rate = 0.0;
    assert_eq!(
        unsafe { impact_hourly_carbon_rate(8760.0, 0.4, 0, &mut rate) },
        ImpactStatus::Ok
    );
    assert_eq!(rate, 0.4);
    for (age, want) in [(1, 1.2), (2, 0.72), (3, 0.432), (4, 0.2592)] {
        let (mut acc, mut lin) = (0.0, 0.0);
        unsafe {
            impact_hourly_carbon_rate(1e6, 0.4, age, &mut acc);
            impact_linear_hourly_carbon_rate(1e6, 5, age, &mut lin);
        }
        assert!((acc / lin - want).abs() < 1e-12);
        assert!((impact_accelerated_to_linear_ratio(0.4, 5, age as i32) - want).abs() < 1e-12);
    }
    assert_ne!(
        unsafe { impact_hourly_carbon_rate(1.0, 0.4, -1, &mut rate) },
        ImpactStatus::Ok
    );
    assert_ne!(
        unsafe { impact_hourly_carbon_rate(1.0, 1.5, 0, &mut rate) },
        ImpactStatus::Ok
    );
}

#[test]
fn loads_shipped_fixtures() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/");
    let path = CString::new(format!("{root}machines.toml")).unwrap();
    let mut set = ptr::null_mut();
    assert_eq!(
        unsafe { impact_machines_load(path.as_ptr(), &mut set) },
        ImpactStatus::Ok
    );
    assert_eq!(unsafe { impact_machines_count(set) }, 4);
    let book = impact_intensity_new();
    let series = CString::new(format!("{root}intensity/constant/ic-grid.txt")).unwrap();
    assert_eq!(
        unsafe { impact_intensity_load(book, series.as_ptr()) },
        ImpactStatus::Ok
    );
    let id = CString::new("IC").unwrap();
    let mut out = ImpactQuote::default();
    let status = unsafe {
        impact_quote(
            set,
            id.as_ptr(),
            ImpactMethod::Cba,
            &run(60.0, 3.6e6, 1),
            book,
            ptr::null(),
            &mut out,
        )
    };
    assert_eq!(status, ImpactStatus::Ok);
    assert_eq!(out.part_a, 454.0);
    unsafe {
        impact_machines_free(set);
        impact_intensity_free(book);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/impact.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
