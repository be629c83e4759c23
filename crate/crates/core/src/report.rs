//! Tabular reports rendered as CSV or JSON from the same cells.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{self, AccountingError, AccountingParams, Execution, Method};
use crate::carbon::{self, CarbonError, DepreciationSchedule, IntensityBook};
use crate::machine::{self, Machine, MachineId};
use crate::sim::PolicyRun;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot normalise {method} for job `{job}`: minimum quote is zero")]
    ZeroMinimum { job: String, method: Method },
    #[error("execution `{job}` names unknown machine `{machine}`")]
    UnknownMachine { job: String, machine: MachineId },
    #[error(transparent)]
    Accounting(#[from] AccountingError),
    #[error(transparent)]
    Carbon(#[from] CarbonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (csv or json)")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) => write!(f, "{x}"),
            Cell::Int(x) => write!(f, "{x}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}
impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, columns: &[&str]) -> Self {
        Table {
            name,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write<W: Write>(&self, format: Format, out: W) -> Result<(), ReportError> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(&self.columns)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(ToString::to_string))?;
                }
                w.flush()?;
            }
            Format::Json => {
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, &self.to_json())?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn render(&self, format: Format) -> Result<String, ReportError> {
        let mut buf = Vec::new();
        self.write(format, &mut buf)?;
        Ok(String::from_utf8(buf).expect("reports are UTF-8"))
    }

    /// Array of objects keyed by column name.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: serde_json::Map<_, _> = self
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| {
                            let v = match v {
                                Cell::Num(x) => serde_json::json!(x),
                                Cell::Int(x) => serde_json::json!(x),
                                Cell::Text(s) => serde_json::json!(s),
                                Cell::Empty => serde_json::Value::Null,
                            };
                            (c.clone(), v)
                        })
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Prices each execution under each method. With `normalize`, every method
/// column is divided by its minimum over the executions of the same job, so
/// the cheapest machine reads 1.0.
pub fn quote_table(
    executions: &[Execution],
    machines: &[Machine],
    methods: &[Method],
    book: &IntensityBook,
    params: &AccountingParams,
    normalize: bool,
) -> Result<Table, ReportError> {
    let mut cols = vec!["job_id", "machine", "runtime_s", "energy_j"];
    let names: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
    cols.extend(names.iter().map(String::as_str));
    let mut t = Table::new("quote-table", &cols);

    let mut amounts = Vec::with_capacity(executions.len());
    for e in executions {
        let m =
            machine::find(machines, &e.machine_id).ok_or_else(|| ReportError::UnknownMachine {
                job: e.job_id.clone(),
                machine: e.machine_id.clone(),
            })?;
        let ci = book.get(&m.region_id).ok();
        let row = methods
            .iter()
            .map(|&method| Ok(accounting::quote(method, e, m, ci, params)?.amount))
            .collect::<Result<Vec<f64>, ReportError>>()?;
        amounts.push(row);
    }
    if normalize {
        let mut minima: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (e, row) in executions.iter().zip(&amounts) {
            let min = minima
                .entry(e.job_id.as_str())
                .or_insert_with(|| vec![f64::INFINITY; methods.len()]);
            for (m, &x) in min.iter_mut().zip(row) {
                *m = m.min(x);
            }
        }
        for (job, min) in &minima {
            if let Some(i) = min.iter().position(|&x| x == 0.0) {
                return Err(ReportError::ZeroMinimum {
                    job: job.to_string(),
                    method: methods[i],
                });
            }
        }
        for (e, row) in executions.iter().zip(amounts.iter_mut()) {
            for (x, m) in row.iter_mut().zip(&minima[e.job_id.as_str()]) {
                *x /= m;
            }
        }
    }
    for (e, row) in executions.iter().zip(amounts) {
        let mut cells: Vec<Cell> = vec![
            e.job_id.clone().into(),
            e.machine_id.to_string().into(),
            e.duration_s.into(),
            e.energy_j.into(),
        ];
        cells.extend(row.into_iter().map(Cell::from));
        t.push(cells);
    }
    Ok(t)
}

pub fn policy_summary(runs: &[PolicyRun]) -> Table {
    let mut t = Table::new(
        "policy-summary",
        &[
            "policy",
            "method",
            "budget",
            "spent",
            "charged",
            "jobs_total",
            "jobs_completed",
            "jobs_unplaceable",
            "jobs_over_budget",
            "work_core_h",
            "energy_kwh",
            "operational_g",
            "attributed_g",
        ],
    );
    for run in runs {
        let r = &run.result;
        t.push(vec![
            run.policy.to_string().into(),
            r.method.to_string().into(),
            r.budget.into(),
            r.spent.into(),
            r.charged.into(),
            r.jobs_total.into(),
            r.jobs_completed.into(),
            r.jobs_unplaceable.into(),
            r.jobs_over_budget.into(),
            r.work_core_h.into(),
            r.energy_kwh.into(),
            r.operational_g.into(),
            r.attributed_g.into(),
        ]);
    }
    t
}

/// Cumulative completions over time, one series per policy.
pub fn timeline(runs: &[PolicyRun]) -> Table {
    let mut t = Table::new("timeline", &["policy", "time", "completed"]);
    for run in runs {
        for p in &run.result.timeline {
            t.push(vec![
                run.policy.to_string().into(),
                p.time.into(),
                p.completed.into(),
            ]);
        }
    }
    t
}

/// Completed jobs per policy and machine.
pub fn distribution(runs: &[PolicyRun]) -> Table {
    let mut t = Table::new("distribution", &["policy", "machine", "jobs"]);
    for run in runs {
        for (m, n) in &run.result.per_machine {
            t.push(vec![
                run.policy.to_string().into(),
                m.to_string().into(),
                (*n).into(),
            ]);
        }
    }
    t
}

/// Hourly embodied-carbon rates of each machine under linear and accelerated
/// depreciation, at each age in `ages`.
pub fn embodied_comparison(
    machines: &[Machine],
    ages: &[i64],
    annual_rate: f64,
    lifetime_years: u32,
) -> Result<Table, ReportError> {
    let mut t = Table::new(
        "embodied-comparison",
        &[
            "machine",
            "age",
            "linear_g_per_h",
            "accelerated_g_per_h",
            "ratio",
        ],
    );
    for m in machines {
        let lin = DepreciationSchedule::linear(m.embodied_carbon_g).with_lifetime(lifetime_years);
        let acc = DepreciationSchedule::accelerated(m.embodied_carbon_g).with_rate(annual_rate);
        for &age in ages {
            let l = lin.hourly_carbon_rate(age)?;
            let a = acc.hourly_carbon_rate(age)?;
            let ratio =
                carbon::accelerated_to_linear_ratio(annual_rate, lifetime_years, age as i32);
            t.push(vec![
                m.id.to_string().into(),
                (age as u64).into(),
                l.into(),
                a.into(),
                ratio.into(),
            ]);
        }
    }
    Ok(t)
}

/// Operational carbon of each execution next to its embodied share under
/// both depreciation schedules, at the machine's age when the job starts.
pub fn job_carbon(
    executions: &[Execution],
    machines: &[Machine],
    book: &IntensityBook,
    params: &AccountingParams,
    lifetime_years: u32,
) -> Result<Table, ReportError> {
    let mut t = Table::new(
        "job-carbon",
        &[
            "job_id",
            "machine",
            "age",
            "operational_g",
            "linear_embodied_g",
            "accelerated_embodied_g",
        ],
    );
    for e in executions {
        let m =
            machine::find(machines, &e.machine_id).ok_or_else(|| ReportError::UnknownMachine {
                job: e.job_id.clone(),
                machine: e.machine_id.clone(),
            })?;
        let q = accounting::cost_cba(e, m, book.get(&m.region_id)?, params)?;
        let age = carbon::machine_age(m.year_deployed, e.start_time)?;
        let share =
            e.duration_s / carbon::SECONDS_PER_HOUR * accounting::core_share(m, e.cores_used);
        let lin = DepreciationSchedule::linear(m.embodied_carbon_g)
            .with_lifetime(lifetime_years)
            .hourly_carbon_rate(age)?;
        t.push(vec![
            e.job_id.clone().into(),
            m.id.to_string().into(),
            (age as u64).into(),
            q.breakdown["operational_g"].into(),
            (lin * share).into(),
            q.breakdown["embodied_g"].into(),
        ]);
    }
    Ok(t)
}

/// Reads executions from CSV with columns
/// `job_id,machine_id,duration_s,energy_j,cores_used,start_time`.
pub fn read_executions<R: std::io::Read>(input: R) -> Result<Vec<Execution>, ReportError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<Execution>, _>>()?)
}
