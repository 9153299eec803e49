//! Engineered indicator channels: price-spike index, rolling conflict
//! fatalities, rainfall/vegetation anomalies and calendar features.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Self { year, month }
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Output of [`compute_alps`]: emitted values plus notes on skipped months.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlpsSeries {
    pub values: Vec<(YearMonth, f64)>,
    pub notes: Vec<String>,
}

/// Months of history required before a price-spike value is emitted.
pub const ALPS_MIN_HISTORY_MONTHS: i64 = 24;

/// Price-spike indicator `(price - estimate) / sigma` on monthly prices.
///
/// The estimate for a month is the mean price of the same calendar month in
/// all strictly earlier years. `sigma` is the population standard deviation
/// of the residuals of every earlier month that had an estimate. Only data
/// before month `t` enters the value for `t`, so appending months never
/// changes past output.
pub fn compute_alps(monthly_prices: &[(YearMonth, f64)]) -> Result<AlpsSeries> {
    let mut prices = monthly_prices.to_vec();
    prices.sort_by_key(|(ym, _)| *ym);
    for w in prices.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Data(format!("duplicate price for {}", w[0].0)));
        }
    }
    if let Some((ym, p)) = prices.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Data(format!("price for {ym} must be positive, got {p}")));
    }
    let mut out = AlpsSeries::default();
    let Some(&(first, _)) = prices.first() else {
        return Ok(out);
    };

    let mut by_month: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut residuals: Vec<f64> = Vec::new();
    for &(ym, price) in &prices {
        let estimate = by_month.get(&ym.month).map(|(s, n)| s / *n as f64);
        let history = ym.ordinal() - first.ordinal();
        if history < ALPS_MIN_HISTORY_MONTHS {
            out.notes.push(format!("{ym}: only {history} months of history"));
        } else if let Some(est) = estimate {
            let resid = price - est;
            let sigma = population_std(&residuals);
            match sigma {
                Some(s) if s > 0.0 => out.values.push((ym, resid / s)),
                Some(_) if resid == 0.0 => out.values.push((ym, 0.0)),
                Some(_) => {
                    return Err(Error::Numerical(format!(
                        "{ym}: residual history has zero spread but residual is {resid}"
                    )))
                }
                None => out.notes.push(format!("{ym}: no earlier residuals")),
            }
        } else {
            out.notes.push(format!("{ym}: no earlier price for this calendar month"));
        }
        if let Some(est) = estimate {
            residuals.push(price - est);
        }
        let slot = by_month.entry(ym.month).or_insert((0.0, 0));
        slot.0 += price;
        slot.1 += 1;
    }
    Ok(out)
}

fn population_std(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictCategory {
    Battles,
    ViolenceAgainstCivilians,
    ExplosionsRemoteViolence,
}

impl ConflictCategory {
    pub fn feature_name(self) -> &'static str {
        match self {
            ConflictCategory::Battles => "conflict_battles",
            ConflictCategory::ViolenceAgainstCivilians => "conflict_vac",
            ConflictCategory::ExplosionsRemoteViolence => "conflict_explosions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub date: NaiveDate,
    pub category: ConflictCategory,
    pub fatalities: f64,
}

/// For each day `d` in `dates`, the fatalities dated in `(d - window, d]`.
pub fn rolling_conflict_sum(events: &[(NaiveDate, f64)], dates: &[NaiveDate], window_days: usize) -> Vec<f64> {
    let window = window_days.max(1) as i64;
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|(d, _)| *d);
    let mut out = Vec::with_capacity(dates.len());
    let (mut lo, mut hi) = (0usize, 0usize);
    for &d in dates {
        while hi < sorted.len() && sorted[hi].0 <= d {
            hi += 1;
        }
        while lo < hi && (d - sorted[lo].0).num_days() >= window {
            lo += 1;
        }
        out.push(sorted[lo..hi].iter().map(|(_, f)| f).sum());
    }
    out
}

/// Per-category rolling sums over the daily grid `dates`.
pub fn rolling_conflict_sums(
    events: &[ConflictEvent],
    dates: &[NaiveDate],
    window_days: usize,
) -> BTreeMap<ConflictCategory, Vec<f64>> {
    let mut grouped: BTreeMap<ConflictCategory, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for cat in [
        ConflictCategory::Battles,
        ConflictCategory::ViolenceAgainstCivilians,
        ConflictCategory::ExplosionsRemoteViolence,
    ] {
        grouped.insert(cat, Vec::new());
    }
    for e in events {
        grouped.entry(e.category).or_default().push((e.date, e.fatalities));
    }
    grouped
        .into_iter()
        .map(|(cat, ev)| (cat, rolling_conflict_sum(&ev, dates, window_days)))
        .collect()
}

/// One observation of a periodic climate feed (monthly or dekadal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodValue {
    pub year: i32,
    /// Calendar period within the year: month 1..=12 or dekad 1..=36.
    pub period: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnomalyOutput {
    /// `None` where no ratio can be formed.
    pub values: Vec<Option<f64>>,
    pub notes: Vec<String>,
}

/// Ratio of the mean over the `length` most recent periods to the mean of the
/// same window in all previous years.
///
/// `obs` must be a gap-free sequence of consecutive periods.
pub fn anomaly_ratio(obs: &[PeriodValue], length: usize) -> AnomalyOutput {
    let length = length.max(1);
    let window_means: Vec<Option<f64>> = (0..obs.len())
        .map(|i| {
            (i + 1 >= length).then(|| {
                obs[i + 1 - length..=i].iter().map(|o| o.value).sum::<f64>() / length as f64
            })
        })
        .collect();
    let mut out = AnomalyOutput::default();
    for (i, o) in obs.iter().enumerate() {
        let Some(current) = window_means[i] else {
            out.values.push(None);
            continue;
        };
        let hist: Vec<f64> = (0..i)
            .filter(|&j| obs[j].period == o.period && obs[j].year < o.year)
            .filter_map(|j| window_means[j])
            .collect();
        if hist.is_empty() {
            out.values.push(None);
            continue;
        }
        let h = hist.iter().sum::<f64>() / hist.len() as f64;
        if h == 0.0 {
            out.notes.push(format!(
                "{}-p{:02}: historical mean is zero, anomaly left missing",
                o.year, o.period
            ));
            out.values.push(None);
        } else {
            out.values.push(Some(current / h));
        }
    }
    out
}

/// Day of year in `1..=365` (31 December of leap years maps to 365).
pub fn day_of_year(dates: &[NaiveDate]) -> Vec<f64> {
    dates.iter().map(|d| d.ordinal().min(365) as f64).collect()
}

/// Binary flag: 1 on days inside any `[start, end]` period.
pub fn ramadan_flag(dates: &[NaiveDate], periods: &[(NaiveDate, NaiveDate)]) -> Vec<f64> {
    dates
        .iter()
        .map(|d| {
            if periods.iter().any(|(s, e)| s <= d && d <= e) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Approximate civil dates of Ramadan (first and last day of fasting).
/// Observed dates vary by a day with local moon sighting; pass an explicit
/// table where exact dates matter.
pub fn ramadan_periods() -> Vec<(NaiveDate, NaiveDate)> {
    const TABLE: [(&str, &str); 12] = [
        ("2015-06-18", "2015-07-16"),
        ("2016-06-06", "2016-07-05"),
        ("2017-05-27", "2017-06-24"),
        ("2018-05-16", "2018-06-14"),
        ("2019-05-06", "2019-06-03"),
        ("2020-04-24", "2020-05-23"),
        ("2021-04-13", "2021-05-12"),
        ("2022-04-02", "2022-05-01"),
        ("2023-03-23", "2023-04-20"),
        ("2024-03-11", "2024-04-09"),
        ("2025-03-01", "2025-03-29"),
        ("2026-02-18", "2026-03-19"),
    ];
    TABLE
        .iter()
        .map(|(s, e)| (s.parse().unwrap(), e.parse().unwrap()))
        .collect()
}
