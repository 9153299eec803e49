use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::frame::{Metadata, SeriesKey, TimeSeriesFrame};
use crate::error::{Error, Result};

/// Names of the four long-format columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub date: String,
    pub region: String,
    pub feature: String,
    pub value: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            date: "date".into(),
            region: "region".into(),
            feature: "feature".into(),
            value: "value".into(),
        }
    }
}

/// Loads a long-format CSV (`date,region,feature,value`) into a daily frame.
///
/// The frame spans every day between the earliest and latest date present;
/// days without a row are left missing.
pub fn load_csv(path: &Path, schema: &ColumnMapping, metadata: &Metadata) -> Result<TimeSeriesFrame> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, schema, metadata)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    schema: &ColumnMapping,
    metadata: &Metadata,
) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (ci_date, ci_region, ci_feature, ci_value) = (
        col(&schema.date)?,
        col(&schema.region)?,
        col(&schema.feature)?,
        col(&schema.value)?,
    );

    let mut seen: HashMap<(SeriesKey, NaiveDate), usize> = HashMap::new();
    let mut obs: BTreeMap<SeriesKey, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("row has {} fields", record.len()),
            })
        };
        let date: NaiveDate = field(ci_date)?.parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", record.get(ci_date).unwrap_or("")),
        })?;
        let raw = field(ci_value)?;
        let value: f64 = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            raw.parse().map_err(|e| Error::Parse {
                line,
                message: format!("bad value `{raw}`: {e}"),
            })?
        };
        if value.is_infinite() {
            return Err(Error::Parse {
                line,
                message: "infinite value".into(),
            });
        }
        let key = SeriesKey::new(field(ci_region)?, field(ci_feature)?);
        if key.region.is_empty() || key.feature.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty region or feature".into(),
            });
        }
        if let Some(first) = seen.insert((key.clone(), date), line) {
            return Err(Error::Duplicate {
                key: key.to_string(),
                date: date.to_string(),
                first,
                second: line,
            });
        }
        obs.entry(key).or_default().push((date, value));
    }

    let all_dates = obs.values().flatten().map(|(d, _)| *d);
    let (Some(start), Some(end)) = (all_dates.clone().min(), all_dates.max()) else {
        return Err(Error::Data("no observations in input".into()));
    };
    let n = (end - start).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..n).map(|i| start + Duration::days(i as i64)).collect();

    let features: BTreeSet<&str> = obs.keys().map(|k| k.feature.as_str()).collect();
    let meta = metadata.resolve(features)?;
    let series = obs.into_iter().map(|(key, points)| {
        let mut v = vec![f64::NAN; n];
        for (d, x) in points {
            v[(d - start).num_days() as usize] = x;
        }
        (key, v)
    });
    TimeSeriesFrame::new(dates, series, meta)
}
