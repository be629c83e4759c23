use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorkloadError;

pub const TRACE_HEADER: [&str; 6] = [
    "job_id",
    "user_id",
    "submit_time",
    "cores",
    "runtime_s",
    "energy_j",
];

/// One job as measured on the reference machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub job_id: String,
    pub user_id: String,
    pub submit_time: f64,
    pub cores_requested: u32,
    pub runtime_ref_s: f64,
    pub energy_ref_j: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep only the first job of each (user, cores) group; the rest are
    /// treated as repetitions of the same application.
    pub collapse_repetitions: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedTrace {
    pub records: Vec<TraceRecord>,
    /// Rows dropped because the energy value was missing or zero.
    pub discarded_no_energy: usize,
    /// Rows folded into an earlier (user, cores) repetition.
    pub collapsed: usize,
}

fn field(row: &csv::StringRecord, i: usize) -> &str {
    row.get(i).unwrap_or("").trim()
}

pub fn parse_trace<R: Read>(input: R, opts: LoadOptions) -> Result<LoadedTrace, WorkloadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);

    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != TRACE_HEADER {
        return Err(WorkloadError::Parse {
            line: 1,
            reason: format!(
                "expected header `{}`, got `{}`",
                TRACE_HEADER.join(","),
                names.join(",")
            ),
        });
    }

    let mut out = LoadedTrace::default();
    let mut ids = HashSet::new();
    let mut groups = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| WorkloadError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| WorkloadError::Parse { line, reason };
        let num = |i: usize, what: &str| -> Result<f64, WorkloadError> {
            let raw = field(&row, i);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{what}: expected a number, got `{raw}`")))
        };

        let job_id = field(&row, 0).to_string();
        if job_id.is_empty() {
            return Err(bad("empty job_id".into()));
        }
        let user_id = field(&row, 1).to_string();
        let submit_time = num(2, "submit_time")?;
        let cores_raw = field(&row, 3);
        let cores_requested: u32 = cores_raw.parse().ok().filter(|c| *c >= 1).ok_or_else(|| {
            bad(format!(
                "cores: expected an integer >= 1, got `{cores_raw}`"
            ))
        })?;
        let runtime_ref_s = num(4, "runtime_s")?;
        if runtime_ref_s <= 0.0 {
            return Err(bad(format!("runtime_s must be > 0, got {runtime_ref_s}")));
        }
        if !ids.insert(job_id.clone()) {
            return Err(WorkloadError::DuplicateJob { line, job_id });
        }

        let energy_raw = field(&row, 5);
        if energy_raw.is_empty() || energy_raw.eq_ignore_ascii_case("na") {
            out.discarded_no_energy += 1;
            continue;
        }
        let energy_ref_j = num(5, "energy_j")?;
        if energy_ref_j < 0.0 {
            return Err(bad(format!("energy_j must be >= 0, got {energy_ref_j}")));
        }
        if energy_ref_j == 0.0 {
            out.discarded_no_energy += 1;
            continue;
        }

        if opts.collapse_repetitions && !groups.insert((user_id.clone(), cores_requested)) {
            out.collapsed += 1;
            continue;
        }
        out.records.push(TraceRecord {
            job_id,
            user_id,
            submit_time,
            cores_requested,
            runtime_ref_s,
            energy_ref_j,
        });
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>, opts: LoadOptions) -> Result<LoadedTrace, WorkloadError> {
    parse_trace(std::fs::File::open(path)?, opts)
}

pub fn write_trace<W: Write>(out: W, records: &[TraceRecord]) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.job_id.clone(),
            r.user_id.clone(),
            format!("{}", r.submit_time),
            r.cores_requested.to_string(),
            format!("{}", r.runtime_ref_s),
            format!("{}", r.energy_ref_j),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "job_id,user_id,submit_time,cores,runtime_s,energy_j\n";

    fn parse(body: &str) -> Result<LoadedTrace, WorkloadError> {
        parse_trace(format!("{HEAD}{body}").as_bytes(), LoadOptions::default())
    }

    #[test]
    fn three_valid_rows() {
        let t = parse("a,u1,0,1,10,100\nb,u1,5,2,20,200\nc,u2,9,4,30,300\n").unwrap();
        assert_eq!(t.records.len(), 3);
        assert_eq!(t.discarded_no_energy, 0);
        assert_eq!(t.records[1].cores_requested, 2);
    }

    #[test]
    fn zero_or_missing_energy_discarded() {
        let t = parse("a,u1,0,1,10,0\nb,u1,5,2,20,\nc,u2,9,4,30,300\n").unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.discarded_no_energy, 2);
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let err = parse("a,u1,0,1,10,1\na,u1,5,2,20,2\n").unwrap_err();
        assert!(
            matches!(err, WorkloadError::DuplicateJob { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_report_line() {
        let err = parse("a,u1,0,1,10,1\nb,u1,zero,2,20,2\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 3, .. }), "{err}");
        let err = parse("a,u1,0,0,10,1\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 2, .. }));
        let err = parse("a,u1,0,1,-10,1\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 2, .. }));
        let err = parse_trace("id,user\n".as_bytes(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 1, .. }));
    }

    #[test]
    fn repetitions_collapse_on_request() {
        let body = "a,u1,0,4,10,1\nb,u1,5,4,20,2\nc,u1,9,8,30,3\nd,u2,9,4,30,3\n";
        let opts = LoadOptions {
            collapse_repetitions: true,
        };
        let t = parse_trace(format!("{HEAD}{body}").as_bytes(), opts).unwrap();
        let ids: Vec<_> = t.records.iter().map(|r| r.job_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "d"]);
        assert_eq!(t.collapsed, 1);
    }

    #[test]
    fn write_then_parse() {
        let t = parse("a,u1,0.5,1,10.25,100\nb,u2,5,2,20,200\n").unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t.records).unwrap();
        let again = parse_trace(buf.as_slice(), LoadOptions::default()).unwrap();
        assert_eq!(again.records, t.records);
    }
}
