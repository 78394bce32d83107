//! Input time series: CSV ingestion, synthetic day types and forecasts.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Steps per day at the native 10 minute resolution.
pub const STEPS_PER_DAY: usize = 144;
pub const DEFAULT_STEP_MINUTES: u32 = 10;

/// Daily electrical demand of the reference household, kWh.
pub const DAILY_EL_KWH: f64 = 11.4;
/// Daily thermal demand of the winter reference day, kWh.
pub const WINTER_TH_KWH: f64 = 85.0;
pub const TRANSITION_TH_KWH: f64 = 45.0;
/// Domestic hot water share, identical on every day type.
pub const HOT_WATER_KWH: f64 = 8.0;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: misaligned timestamp {found}, expected {expected}")]
    MisalignedTimestamps {
        line: u64,
        expected: NaiveDateTime,
        found: NaiveDateTime,
    },
    #[error("line {line}: negative value {value} in column {column}")]
    NegativeValue {
        line: u64,
        column: String,
        value: f64,
    },
    #[error("insufficient history: need data from {required_from}, available from {available_from}")]
    InsufficientHistory {
        required_from: NaiveDateTime,
        available_from: NaiveDateTime,
    },
    #[error("forecast window ends at {required_until}, data ends at {available_until}")]
    BeyondData {
        required_until: NaiveDateTime,
        available_until: NaiveDateTime,
    },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Uniformly sampled series of powers (kW) or prices (EUR/kWh).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesProfile {
    pub start_time: NaiveDateTime,
    pub step_minutes: u32,
    pub values: Vec<f64>,
}

impl TimeSeriesProfile {
    pub fn new(
        start_time: NaiveDateTime,
        step_minutes: u32,
        values: Vec<f64>,
    ) -> Result<Self, ProfileError> {
        if step_minutes == 0 {
            return Err(ProfileError::Invalid("step_minutes must be positive".into()));
        }
        if values.is_empty() {
            return Err(ProfileError::Invalid("profile is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ProfileError::Invalid(format!("non-finite value {v}")));
        }
        Ok(Self {
            start_time,
            step_minutes,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt_hours(&self) -> f64 {
        f64::from(self.step_minutes) / 60.0
    }

    pub fn step(&self) -> Duration {
        Duration::minutes(i64::from(self.step_minutes))
    }

    pub fn time_at(&self, index: usize) -> NaiveDateTime {
        self.start_time + self.step() * index as i32
    }

    /// Exclusive end of the covered interval.
    pub fn end_time(&self) -> NaiveDateTime {
        self.time_at(self.len())
    }

    /// Index of the step starting exactly at `t`.
    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        let offset = (t - self.start_time).num_minutes();
        let step = i64::from(self.step_minutes);
        if offset < 0 || offset % step != 0 || (t - self.start_time).num_seconds() % 60 != 0 {
            return None;
        }
        let idx = (offset / step) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Sub-series of `len` steps starting at `from`.
    pub fn slice(&self, from: usize, len: usize) -> Self {
        Self {
            start_time: self.time_at(from),
            step_minutes: self.step_minutes,
            values: self.values[from..from + len].to_vec(),
        }
    }

    /// Integral over the whole series in kWh (or EUR·h/kWh for prices).
    pub fn energy_kwh(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dt_hours()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The uncontrollable inputs of one scenario, all on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfiles {
    pub el_load: TimeSeriesProfile,
    pub th_load: TimeSeriesProfile,
    pub pv: TimeSeriesProfile,
    pub price_import: Option<TimeSeriesProfile>,
    pub feedin_pv: Option<TimeSeriesProfile>,
}

impl ScenarioProfiles {
    pub fn new(
        el_load: TimeSeriesProfile,
        th_load: TimeSeriesProfile,
        pv: TimeSeriesProfile,
    ) -> Result<Self, ProfileError> {
        let s = Self {
            el_load,
            th_load,
            pv,
            price_import: None,
            feedin_pv: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (name, p) in self.members() {
            if p.start_time != self.el_load.start_time
                || p.step_minutes != self.el_load.step_minutes
                || p.len() != self.el_load.len()
            {
                return Err(ProfileError::Invalid(format!(
                    "{name} is not aligned with el_load"
                )));
            }
        }
        for (name, p) in [("el_load", &self.el_load), ("th_load", &self.th_load), ("pv", &self.pv)] {
            if let Some(v) = p.values.iter().find(|v| **v < 0.0) {
                return Err(ProfileError::Invalid(format!("{name} has negative value {v}")));
            }
        }
        Ok(())
    }

    fn members(&self) -> Vec<(&'static str, &TimeSeriesProfile)> {
        let mut m = vec![
            ("el_load", &self.el_load),
            ("th_load", &self.th_load),
            ("pv", &self.pv),
        ];
        if let Some(p) = &self.price_import {
            m.push(("price_import", p));
        }
        if let Some(p) = &self.feedin_pv {
            m.push(("feedin_pv", p));
        }
        m
    }

    pub fn len(&self) -> usize {
        self.el_load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.el_load.is_empty()
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.el_load.start_time
    }

    pub fn end_time(&self) -> NaiveDateTime {
        self.el_load.end_time()
    }

    pub fn step_minutes(&self) -> u32 {
        self.el_load.step_minutes
    }

    pub fn dt_hours(&self) -> f64 {
        self.el_load.dt_hours()
    }

    pub fn time_at(&self, index: usize) -> NaiveDateTime {
        self.el_load.time_at(index)
    }

    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        self.el_load.index_of(t)
    }

    pub fn slice(&self, from: usize, len: usize) -> Self {
        Self {
            el_load: self.el_load.slice(from, len),
            th_load: self.th_load.slice(from, len),
            pv: self.pv.slice(from, len),
            price_import: self.price_import.as_ref().map(|p| p.slice(from, len)),
            feedin_pv: self.feedin_pv.as_ref().map(|p| p.slice(from, len)),
        }
    }

    /// Moves the whole scenario to a new start time.
    pub fn retimed(mut self, start_time: NaiveDateTime) -> Self {
        self.el_load.start_time = start_time;
        self.th_load.start_time = start_time;
        self.pv.start_time = start_time;
        if let Some(p) = self.price_import.as_mut() {
            p.start_time = start_time;
        }
        if let Some(p) = self.feedin_pv.as_mut() {
            p.start_time = start_time;
        }
        self
    }

    /// Appends `next`, which must start where `self` ends.
    pub fn concat(&self, next: &Self) -> Result<Self, ProfileError> {
        if next.start_time() != self.end_time() || next.step_minutes() != self.step_minutes() {
            return Err(ProfileError::Invalid(format!(
                "cannot append series starting {} to series ending {}",
                next.start_time(),
                self.end_time()
            )));
        }
        let join = |a: &TimeSeriesProfile, b: &TimeSeriesProfile| {
            let mut values = a.values.clone();
            values.extend_from_slice(&b.values);
            TimeSeriesProfile {
                start_time: a.start_time,
                step_minutes: a.step_minutes,
                values,
            }
        };
        let join_opt = |a: &Option<TimeSeriesProfile>, b: &Option<TimeSeriesProfile>| match (a, b) {
            (Some(a), Some(b)) => Ok(Some(join(a, b))),
            (None, None) => Ok(None),
            _ => Err(ProfileError::Invalid(
                "optional price columns differ between concatenated scenarios".into(),
            )),
        };
        Ok(Self {
            el_load: join(&self.el_load, &next.el_load),
            th_load: join(&self.th_load, &next.th_load),
            pv: join(&self.pv, &next.pv),
            price_import: join_opt(&self.price_import, &next.price_import)?,
            feedin_pv: join_opt(&self.feedin_pv, &next.feedin_pv)?,
        })
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a profile CSV with header
/// `timestamp,el_load_kw,th_load_kw,pv_kw[,price_import_eur_kwh][,feedin_pv_eur_kwh]`.
pub fn load_profiles_csv(
    path: impl AsRef<Path>,
    expected_step_minutes: u32,
) -> Result<ScenarioProfiles, ProfileError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_profiles_csv(file, expected_step_minutes)
}

/// Reader-based variant of [`load_profiles_csv`].
pub fn read_profiles_csv<R: std::io::Read>(
    reader: R,
    expected_step_minutes: u32,
) -> Result<ScenarioProfiles, ProfileError> {
    if expected_step_minutes == 0 {
        return Err(ProfileError::Invalid("step_minutes must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let malformed = |line: u64, reason: &str| ProfileError::MalformedRow {
        line,
        reason: reason.to_string(),
    };

    let header = match records.next() {
        None => return Err(malformed(1, "empty file")),
        Some(r) => r.map_err(|e| malformed(1, &e.to_string()))?,
    };
    let names: Vec<&str> = header.iter().collect();
    const REQUIRED: [&str; 4] = ["timestamp", "el_load_kw", "th_load_kw", "pv_kw"];
    if names.len() < 4 || names[..4] != REQUIRED {
        return Err(malformed(1, "header must start with timestamp,el_load_kw,th_load_kw,pv_kw"));
    }
    let mut price_col = None;
    let mut feedin_col = None;
    for (i, name) in names.iter().enumerate().skip(4) {
        match *name {
            "price_import_eur_kwh" if price_col.is_none() && feedin_col.is_none() => {
                price_col = Some(i)
            }
            "feedin_pv_eur_kwh" if feedin_col.is_none() => feedin_col = Some(i),
            other => return Err(malformed(1, &format!("unexpected column '{other}'"))),
        }
    }

    let step = Duration::minutes(i64::from(expected_step_minutes));
    let mut start = None;
    let mut prev: Option<NaiveDateTime> = None;
    let mut cols: [Vec<f64>; 5] = Default::default();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, &e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(malformed(
                line,
                &format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| malformed(line, &format!("bad timestamp '{}'", &record[0])))?;
        if let Some(p) = prev {
            if ts != p + step {
                return Err(ProfileError::MisalignedTimestamps {
                    line,
                    expected: p + step,
                    found: ts,
                });
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
        let targets = [Some(1), Some(2), Some(3), price_col, feedin_col];
        for (k, col) in targets.iter().enumerate() {
            let Some(c) = *col else { continue };
            let field = &record[c];
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| malformed(line, &format!("bad number '{field}' in {}", names[c])))?;
            if k < 3 && v < 0.0 {
                return Err(ProfileError::NegativeValue {
                    line,
                    column: names[c].to_string(),
                    value: v,
                });
            }
            cols[k].push(v);
        }
    }
    let Some(start) = start else {
        return Err(malformed(2, "no data rows"));
    };
    let [el, th, pv, price, feedin] = cols;
    let mk = |v: Vec<f64>| TimeSeriesProfile::new(start, expected_step_minutes, v);
    let mut scenario = ScenarioProfiles::new(mk(el)?, mk(th)?, mk(pv)?)?;
    if price_col.is_some() {
        scenario.price_import = Some(mk(price)?);
    }
    if feedin_col.is_some() {
        scenario.feedin_pv = Some(mk(feedin)?);
    }
    Ok(scenario)
}

/// Representative day types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DayType {
    Winter,
    Summer,
    Transition,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Winter, DayType::Transition, DayType::Summer];

    pub fn name(self) -> &'static str {
        match self {
            DayType::Winter => "winter",
            DayType::Summer => "summer",
            DayType::Transition => "transition",
        }
    }

    /// Calendar date the synthetic day is anchored to.
    pub fn reference_date(self) -> NaiveDate {
        let (m, d) = match self {
            DayType::Winter => (1, 16),
            DayType::Transition => (4, 17),
            DayType::Summer => (7, 17),
        };
        NaiveDate::from_ymd_opt(2013, m, d).expect("valid date")
    }

    fn salt(self) -> u64 {
        match self {
            DayType::Winter => 0x5769_6e74,
            DayType::Summer => 0x5375_6d6d,
            DayType::Transition => 0x5472_616e,
        }
    }

    fn space_heating_kwh(self) -> f64 {
        match self {
            DayType::Winter => WINTER_TH_KWH - HOT_WATER_KWH,
            DayType::Transition => TRANSITION_TH_KWH - HOT_WATER_KWH,
            DayType::Summer => 0.0,
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DayType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "winter" => Ok(DayType::Winter),
            "summer" => Ok(DayType::Summer),
            "transition" => Ok(DayType::Transition),
            other => Err(format!("unknown day type '{other}'")),
        }
    }
}

/// Synthetic day split into its thermal components.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTypeComponents {
    pub profiles: ScenarioProfiles,
    pub space_heating_kw: Vec<f64>,
    pub hot_water_kw: Vec<f64>,
}

fn gauss(h: f64, centre: f64, width: f64) -> f64 {
    let z = (h - centre) / width;
    (-0.5 * z * z).exp()
}

fn scale_to_energy(values: &mut [f64], dt_h: f64, target_kwh: f64) {
    let total: f64 = values.iter().sum::<f64>() * dt_h;
    if total > 0.0 {
        let k = target_kwh / total;
        values.iter_mut().for_each(|v| *v *= k);
    }
}

/// Deterministic synthetic day at 10 minute resolution. Electrical demand
/// integrates to 11.4 kWh; thermal demand to 85 kWh (winter), 45 kWh
/// (transition) or hot water only (summer). Summer PV peaks near the
/// installed capacity, winter PV stays below 1 kWh per day.
pub fn generate_day_type_components(day_type: DayType, seed: u64, pv_peak_kw: f64) -> DayTypeComponents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ day_type.salt());
    let n = STEPS_PER_DAY;
    let dt = f64::from(DEFAULT_STEP_MINUTES) / 60.0;
    let hour = |i: usize| (i as f64 + 0.5) * dt;

    // Household load: standby base, morning, lunch and evening peaks, a few appliance bursts.
    let mut el: Vec<f64> = (0..n)
        .map(|i| {
            let h = hour(i);
            let shape = 0.22
                + 0.9 * gauss(h, 7.0, 0.7)
                + 0.5 * gauss(h, 12.5, 1.0)
                + 1.1 * gauss(h, 19.0, 1.4)
                + 0.25 * gauss(h, 16.0, 2.0);
            shape * (1.0 + rng.gen_range(-0.2..0.2))
        })
        .collect();
    for _ in 0..4 {
        let at = rng.gen_range(36..132);
        let width = rng.gen_range(1..=3);
        let power = rng.gen_range(0.8..1.8);
        for v in el.iter_mut().skip(at).take(width) {
            *v += power;
        }
    }
    scale_to_energy(&mut el, dt, DAILY_EL_KWH);

    // Hot water draws around the morning and evening routines.
    let mut hw: Vec<f64> = (0..n)
        .map(|i| {
            let h = hour(i);
            let shape = 0.05 + 1.0 * gauss(h, 7.0, 0.6) + 0.4 * gauss(h, 12.5, 0.8) + 0.8 * gauss(h, 20.0, 1.0);
            shape * (1.0 + rng.gen_range(-0.3..0.3))
        })
        .collect();
    scale_to_energy(&mut hw, dt, HOT_WATER_KWH);

    // Space heating follows the indoor/outdoor gap with a night setback.
    let mut sh = vec![0.0; n];
    let sh_target = day_type.space_heating_kwh();
    if sh_target > 0.0 {
        let (t_mean, t_swing) = match day_type {
            DayType::Winter => (-2.0, 3.0),
            _ => (8.0, 5.0),
        };
        for (i, v) in sh.iter_mut().enumerate() {
            let h = hour(i);
            let t_out = t_mean + t_swing * ((h - 9.0) / 24.0 * 2.0 * PI).sin();
            let setpoint = if !(5.5..22.0).contains(&h) { 17.0 } else { 20.5 };
            let gap = (setpoint - t_out).max(0.0);
            *v = gap * (1.0 + rng.gen_range(-0.1..0.1));
        }
        scale_to_energy(&mut sh, dt, sh_target);
    }
    let th: Vec<f64> = sh.iter().zip(&hw).map(|(a, b)| a + b).collect();

    // PV: clear-sky bell between sunrise and sunset times a cloud index.
    let (sunrise, sunset, clear_peak, k_mean, k_spread): (f64, f64, f64, f64, f64) = match day_type {
        DayType::Winter => (8.25, 16.25, 0.45, 0.12, 0.05),
        DayType::Transition => (6.5, 19.75, 0.8, 0.6, 0.25),
        DayType::Summer => (5.5, 20.75, 0.97, 0.93, 0.06),
    };
    let mut cloud = k_mean;
    let pv: Vec<f64> = (0..n)
        .map(|i| {
            let h = hour(i);
            cloud = (0.8 * cloud + 0.2 * (k_mean + rng.gen_range(-k_spread..k_spread))).clamp(0.02, 1.0);
            if h <= sunrise || h >= sunset {
                return 0.0;
            }
            let x = (h - sunrise) / (sunset - sunrise);
            let bell = (PI * x).sin().powi(2);
            let k = if matches!(day_type, DayType::Summer) {
                (cloud / k_mean).min(1.0 / 0.97)
            } else {
                cloud
            };
            (pv_peak_kw * clear_peak * bell * k).min(pv_peak_kw)
        })
        .collect();

    let start = day_type.reference_date().and_hms_opt(0, 0, 0).expect("midnight");
    let mk = |v: Vec<f64>| TimeSeriesProfile {
        start_time: start,
        step_minutes: DEFAULT_STEP_MINUTES,
        values: v,
    };
    DayTypeComponents {
        profiles: ScenarioProfiles {
            el_load: mk(el),
            th_load: mk(th),
            pv: mk(pv),
            price_import: None,
            feedin_pv: None,
        },
        space_heating_kw: sh,
        hot_water_kw: hw,
    }
}

/// Synthetic day for the reference 3.2 kWp system.
pub fn generate_day_type(day_type: DayType, seed: u64) -> ScenarioProfiles {
    generate_day_type_components(day_type, seed, 3.2).profiles
}

/// Two consecutive synthetic days: a warm-up day (seed + 1) followed by the
/// evaluated day (seed), so persistence forecasts have a previous day to use.
pub fn generate_with_warmup(day_type: DayType, seed: u64, pv_peak_kw: f64) -> ScenarioProfiles {
    let today = generate_day_type_components(day_type, seed, pv_peak_kw).profiles;
    let yesterday = generate_day_type_components(day_type, seed.wrapping_add(1), pv_peak_kw)
        .profiles
        .retimed(today.start_time() - Duration::days(1));
    yesterday.concat(&today).expect("consecutive days align")
}

/// Day-ahead style spot price between 0.21 and 0.24 EUR/kWh with cheap nights
/// and morning and evening peaks.
pub fn synthetic_spot_price(start_time: NaiveDateTime, step_minutes: u32, len: usize) -> TimeSeriesProfile {
    let values = (0..len)
        .map(|i| {
            let t = start_time + Duration::minutes(i64::from(step_minutes) * i as i64);
            let h = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
            let shape = 0.6 * gauss(h, 8.5, 1.5) + 1.0 * gauss(h, 19.0, 1.8) + 0.3 * gauss(h, 13.0, 2.0);
            0.21 + 0.03 * shape.min(1.0)
        })
        .collect();
    TimeSeriesProfile {
        start_time,
        step_minutes,
        values,
    }
}

/// Forecast methods for the load and PV inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForecastMethod {
    /// Future truth, used to test the primary controller in isolation.
    Perfect,
    /// Same value as one day earlier at the same time of day.
    Persistence,
    /// Mean of the values one, two and three days earlier.
    RunningMean3d,
}

impl ForecastMethod {
    pub fn name(self) -> &'static str {
        match self {
            ForecastMethod::Perfect => "perfect",
            ForecastMethod::Persistence => "persistence",
            ForecastMethod::RunningMean3d => "running_mean_3d",
        }
    }

    /// Number of past days the method looks at.
    pub fn history_days(self) -> usize {
        match self {
            ForecastMethod::Perfect => 0,
            ForecastMethod::Persistence => 1,
            ForecastMethod::RunningMean3d => 3,
        }
    }
}

impl fmt::Display for ForecastMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ForecastMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(ForecastMethod::Perfect),
            "persistence" => Ok(ForecastMethod::Persistence),
            "running_mean_3d" => Ok(ForecastMethod::RunningMean3d),
            other => Err(format!("unknown forecast method '{other}'")),
        }
    }
}

/// Forecast of `horizon_steps` steps starting at `now`.
///
/// `history` is the full truth series held by the simulator. Load and PV are
/// forecast with `method`; price columns are tariff data known in advance and
/// are copied from the truth. For horizons longer than a day the lag grows
/// in whole days until it reaches observed data.
pub fn make_forecast(
    method: ForecastMethod,
    history: &ScenarioProfiles,
    now: NaiveDateTime,
    horizon_steps: usize,
) -> Result<ScenarioProfiles, ProfileError> {
    let start = history.start_time();
    let now_idx = history.index_of(now).ok_or_else(|| {
        if now < start {
            ProfileError::InsufficientHistory {
                required_from: now,
                available_from: start,
            }
        } else {
            ProfileError::BeyondData {
                required_until: now,
                available_until: history.end_time(),
            }
        }
    })?;
    if now_idx + horizon_steps > history.len() {
        return Err(ProfileError::BeyondData {
            required_until: history.time_at(now_idx + horizon_steps),
            available_until: history.end_time(),
        });
    }
    let mut out = history.slice(now_idx, horizon_steps);
    if method == ForecastMethod::Perfect {
        return Ok(out);
    }
    let spd = (24 * 60 / history.step_minutes()) as usize;
    let first_lag_days = horizon_steps.saturating_sub(1) / spd + 1;
    let needed = (first_lag_days + method.history_days() - 1) * spd;
    if needed > now_idx {
        return Err(ProfileError::InsufficientHistory {
            required_from: now - history.el_load.step() * needed as i32,
            available_from: start,
        });
    }
    let lags = method.history_days();
    for k in 0..horizon_steps {
        let lag_days = k / spd + 1;
        let idx = now_idx + k;
        let mean = |p: &TimeSeriesProfile| {
            (0..lags).map(|j| p.values[idx - (lag_days + j) * spd]).sum::<f64>() / lags as f64
        };
        out.el_load.values[k] = mean(&history.el_load);
        out.th_load.values[k] = mean(&history.th_load);
        out.pv.values[k] = mean(&history.pv);
    }
    Ok(out)
}
