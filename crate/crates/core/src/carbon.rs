//! Embodied-carbon depreciation and hourly grid carbon-intensity series.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_YEAR: f64 = 24.0 * 365.0;
pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const DEFAULT_ANNUAL_RATE: f64 = 0.4;
pub const DEFAULT_LIFETIME_YEARS: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum CarbonError {
    #[error("age must be >= 0 years, got {0}")]
    NegativeAge(i64),
    #[error("annual rate must lie in (0, 1), got {0}")]
    BadRate(f64),
    #[error("lifetime must be >= 1 year")]
    BadLifetime,
    #[error("embodied carbon must be >= 0, got {0}")]
    BadEmbodied(f64),
    #[error("remaining carbon is only defined for the accelerated schedule")]
    NotAccelerated,
    #[error("region `{region}` has no intensity for t={t} (covered [{start}, {end}))")]
    OutOfRange {
        region: String,
        t: f64,
        start: f64,
        end: f64,
    },
    #[error("interval end {t1} precedes start {t0}")]
    ReversedInterval { t0: f64, t1: f64 },
    #[error("no carbon-intensity series for region `{0}`")]
    MissingRegion(String),
    #[error("intensity series: {0}")]
    BadSeries(String),
    #[error("intensity fixture line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("machine deployed in {deployed} but job starts in {year}")]
    BeforeDeployment { deployed: i32, year: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepreciationMethod {
    /// Double declining balance: each year allocates a fixed fraction of what remains.
    Accelerated,
    /// Straight line over `lifetime_years`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepreciationSchedule {
    pub total_embodied_g: f64,
    pub annual_rate: f64,
    pub lifetime_years: u32,
    pub method: DepreciationMethod,
}

impl DepreciationSchedule {
    pub fn accelerated(total_embodied_g: f64) -> Self {
        DepreciationSchedule {
            total_embodied_g,
            annual_rate: DEFAULT_ANNUAL_RATE,
            lifetime_years: DEFAULT_LIFETIME_YEARS,
            method: DepreciationMethod::Accelerated,
        }
    }

    pub fn linear(total_embodied_g: f64) -> Self {
        DepreciationSchedule {
            method: DepreciationMethod::Linear,
            ..Self::accelerated(total_embodied_g)
        }
    }

    pub fn with_rate(mut self, annual_rate: f64) -> Self {
        self.annual_rate = annual_rate;
        self
    }

    pub fn with_lifetime(mut self, years: u32) -> Self {
        self.lifetime_years = years;
        self
    }

    pub fn validate(&self) -> Result<(), CarbonError> {
        if !(self.annual_rate > 0.0 && self.annual_rate < 1.0) {
            return Err(CarbonError::BadRate(self.annual_rate));
        }
        if self.lifetime_years < 1 {
            return Err(CarbonError::BadLifetime);
        }
        if !(self.total_embodied_g.is_finite() && self.total_embodied_g >= 0.0) {
            return Err(CarbonError::BadEmbodied(self.total_embodied_g));
        }
        Ok(())
    }

    fn check_age(&self, age: i64) -> Result<i32, CarbonError> {
        self.validate()?;
        if age < 0 {
            return Err(CarbonError::NegativeAge(age));
        }
        Ok(i32::try_from(age).unwrap_or(i32::MAX))
    }

    /// Embodied carbon not yet attributed `age` years after installation.
    pub fn remaining_carbon(&self, age: i64) -> Result<f64, CarbonError> {
        let age = self.check_age(age)?;
        if self.method != DepreciationMethod::Accelerated {
            return Err(CarbonError::NotAccelerated);
        }
        Ok(self.total_embodied_g * (1.0 - self.annual_rate).powi(age))
    }

    /// Carbon attributed to machine-year `age`.
    pub fn annual_allocation(&self, age: i64) -> Result<f64, CarbonError> {
        match self.method {
            DepreciationMethod::Accelerated => Ok(self.annual_rate * self.remaining_carbon(age)?),
            DepreciationMethod::Linear => {
                let age = self.check_age(age)?;
                if (age as u32) < self.lifetime_years {
                    Ok(self.total_embodied_g / f64::from(self.lifetime_years))
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    /// Grams attributed per hour of whole-machine use during machine-year `age`.
    pub fn hourly_carbon_rate(&self, age: i64) -> Result<f64, CarbonError> {
        Ok(self.annual_allocation(age)? / HOURS_PER_YEAR)
    }
}

/// Ratio of accelerated to linear hourly rates at `age`, in closed form.
pub fn accelerated_to_linear_ratio(annual_rate: f64, lifetime_years: u32, age: i32) -> f64 {
    f64::from(lifetime_years) * annual_rate * (1.0 - annual_rate).powi(age)
}

/// Total embodied carbon that yields `hourly_rate` g/h at `age` under the
/// accelerated schedule. The result is nudged by a few ulps, when possible,
/// so that the forward computation reproduces `hourly_rate` bit-for-bit.
pub fn embodied_for_hourly_rate(hourly_rate: f64, age: i32, annual_rate: f64) -> f64 {
    let forward = |c: f64| {
        DepreciationSchedule::accelerated(c)
            .with_rate(annual_rate)
            .hourly_carbon_rate(i64::from(age))
            .unwrap_or(f64::NAN)
    };
    let guess = hourly_rate * HOURS_PER_YEAR / (annual_rate * (1.0 - annual_rate).powi(age));
    if forward(guess) == hourly_rate || guess <= 0.0 {
        return guess;
    }
    for step in 1..=16i64 {
        for dir in [1i64, -1] {
            let bits = (guess.to_bits() as i64 + dir * step) as u64;
            let c = f64::from_bits(bits);
            if forward(c) == hourly_rate {
                return c;
            }
        }
    }
    guess
}

/// Whole years between January 1st of `year_deployed` and `t` (epoch seconds).
pub fn machine_age(year_deployed: i32, t: f64) -> Result<i64, CarbonError> {
    let year = year_of(t);
    if year < year_deployed {
        return Err(CarbonError::BeforeDeployment {
            deployed: year_deployed,
            year,
        });
    }
    Ok(i64::from(year - year_deployed))
}

fn year_of(t: f64) -> i32 {
    DateTime::<Utc>::from_timestamp(t.floor() as i64, 0)
        .map(|d| d.year())
        .unwrap_or(1970)
}

/// Hourly grid carbon intensity (gCO2e/kWh) as a step function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonIntensitySeries {
    pub region_id: String,
    /// Epoch seconds, hour aligned.
    pub start: i64,
    pub hourly_g_per_kwh: Vec<f64>,
}

impl CarbonIntensitySeries {
    pub fn new(
        region_id: impl Into<String>,
        start: i64,
        hourly_g_per_kwh: Vec<f64>,
    ) -> Result<Self, CarbonError> {
        let s = CarbonIntensitySeries {
            region_id: region_id.into(),
            start,
            hourly_g_per_kwh,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(region_id: impl Into<String>, start: i64, hours: usize, value: f64) -> Self {
        Self::new(region_id, start, vec![value; hours.max(1)]).expect("valid constant series")
    }

    pub fn validate(&self) -> Result<(), CarbonError> {
        if self.hourly_g_per_kwh.is_empty() {
            return Err(CarbonError::BadSeries("no hourly values".into()));
        }
        if self.start.rem_euclid(3600) != 0 {
            return Err(CarbonError::BadSeries(format!(
                "start {} is not hour aligned",
                self.start
            )));
        }
        if let Some(v) = self
            .hourly_g_per_kwh
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(CarbonError::BadSeries(format!("bad intensity value {v}")));
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.start as f64
    }

    /// First instant not covered.
    pub fn end_time(&self) -> f64 {
        self.start as f64 + self.hourly_g_per_kwh.len() as f64 * SECONDS_PER_HOUR
    }

    fn out_of_range(&self, t: f64) -> CarbonError {
        CarbonError::OutOfRange {
            region: self.region_id.clone(),
            t,
            start: self.start_time(),
            end: self.end_time(),
        }
    }

    fn bucket(&self, t: f64) -> Option<usize> {
        if !(t >= self.start_time() && t < self.end_time()) {
            return None;
        }
        let idx = ((t - self.start_time()) / SECONDS_PER_HOUR).floor() as usize;
        Some(idx.min(self.hourly_g_per_kwh.len() - 1))
    }

    /// Intensity of the hour containing `t`; hour boundaries belong to the later hour.
    pub fn intensity_at(&self, t: f64) -> Result<f64, CarbonError> {
        self.bucket(t)
            .map(|i| self.hourly_g_per_kwh[i])
            .ok_or_else(|| self.out_of_range(t))
    }

    /// Time-weighted mean of the step function over `[t0, t1]`.
    pub fn mean_intensity(&self, t0: f64, t1: f64) -> Result<f64, CarbonError> {
        if t1 < t0 {
            return Err(CarbonError::ReversedInterval { t0, t1 });
        }
        let first = self.bucket(t0).ok_or_else(|| self.out_of_range(t0))?;
        if t1 == t0 {
            return Ok(self.hourly_g_per_kwh[first]);
        }
        if t1 > self.end_time() {
            return Err(self.out_of_range(t1));
        }
        let last = (((t1 - self.start_time()) / SECONDS_PER_HOUR).ceil() as usize)
            .min(self.hourly_g_per_kwh.len());
        let mut acc = 0.0;
        for i in first..last {
            let lo = self.start_time() + i as f64 * SECONDS_PER_HOUR;
            let hi = lo + SECONDS_PER_HOUR;
            let overlap = t1.min(hi) - t0.max(lo);
            if overlap > 0.0 {
                acc += overlap * self.hourly_g_per_kwh[i];
            }
        }
        Ok(acc / (t1 - t0))
    }

    /// Parses the fixture format: `region_id:` and `start:` (ISO-8601 hour)
    /// header lines, then one value per hour. `#` comments and blank lines
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self, CarbonError> {
        let mut region = None;
        let mut start = None;
        let mut values = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once(':').filter(|_| values.is_empty()) {
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "region_id" => region = Some(value.to_string()),
                    "start" => {
                        let dt = DateTime::parse_from_rfc3339(value).map_err(|e| {
                            CarbonError::Parse {
                                line: line_no,
                                reason: format!("bad start `{value}`: {e}"),
                            }
                        })?;
                        start = Some(dt.timestamp());
                    }
                    other => {
                        return Err(CarbonError::Parse {
                            line: line_no,
                            reason: format!("unknown header `{other}`"),
                        })
                    }
                }
                continue;
            }
            let v: f64 = line.parse().map_err(|_| CarbonError::Parse {
                line: line_no,
                reason: format!("expected a number, got `{line}`"),
            })?;
            values.push(v);
        }
        let region = region.ok_or(CarbonError::Parse {
            line: 0,
            reason: "missing region_id header".into(),
        })?;
        let start = start.ok_or(CarbonError::Parse {
            line: 0,
            reason: "missing start header".into(),
        })?;
        Self::new(region, start, values)
    }

    pub fn to_fixture_string(&self) -> String {
        let start = DateTime::<Utc>::from_timestamp(self.start, 0)
            .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
            .unwrap_or_default();
        let mut out = format!("region_id: {}\nstart: {}\n", self.region_id, start);
        for v in &self.hourly_g_per_kwh {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CarbonError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CarbonError::BadSeries(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Intensity series keyed by region id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityBook {
    series: BTreeMap<String, CarbonIntensitySeries>,
}

impl IntensityBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: CarbonIntensitySeries) {
        self.series.insert(series.region_id.clone(), series);
    }

    pub fn with(mut self, series: CarbonIntensitySeries) -> Self {
        self.insert(series);
        self
    }

    pub fn get(&self, region: &str) -> Result<&CarbonIntensitySeries, CarbonError> {
        self.series
            .get(region)
            .ok_or_else(|| CarbonError::MissingRegion(region.to_string()))
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn load_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self, CarbonError> {
        let mut book = Self::new();
        for p in paths {
            book.insert(CarbonIntensitySeries::load(p)?);
        }
        Ok(book)
    }
}
