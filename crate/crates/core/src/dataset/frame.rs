use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one channel of the panel: an indicator observed in a region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub region: String,
    pub feature: String,
}

impl SeriesKey {
    pub fn new(region: impl Into<String>, feature: impl Into<String>) -> Self {
        Self {
            region: region.into(),
            feature: feature.into(),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.region, self.feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The forecast target (prevalence of insufficient food consumption).
    Target,
    /// Modelled and projected forward together with the target.
    Endogenous,
    /// Values are known over the forecast horizon and fed in, never predicted.
    ExogenousKnownFuture,
}

/// Feature groupings usable as a grid-search dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    #[serde(rename = "FCS")]
    Fcs,
    #[serde(rename = "FCSplus", alias = "FCS+")]
    FcsPlus,
    #[serde(rename = "climate")]
    Climate,
    #[serde(rename = "economics")]
    Economics,
    #[serde(rename = "all")]
    All,
}

impl FeatureGroup {
    pub const ALL_GROUPS: [FeatureGroup; 5] = [
        FeatureGroup::Fcs,
        FeatureGroup::FcsPlus,
        FeatureGroup::Economics,
        FeatureGroup::Climate,
        FeatureGroup::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Fcs => "FCS",
            FeatureGroup::FcsPlus => "FCSplus",
            FeatureGroup::Climate => "climate",
            FeatureGroup::Economics => "economics",
            FeatureGroup::All => "all",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FCS" | "fcs" => Ok(FeatureGroup::Fcs),
            "FCSplus" | "FCS+" | "fcsplus" | "fcs+" => Ok(FeatureGroup::FcsPlus),
            "climate" => Ok(FeatureGroup::Climate),
            "economics" => Ok(FeatureGroup::Economics),
            "all" => Ok(FeatureGroup::All),
            other => Err(Error::Config(format!("unknown feature group `{other}`"))),
        }
    }
}

/// Native sampling period of a feed before daily resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    #[default]
    Daily,
    Dekad,
    Monthly,
}

impl Frequency {
    /// Longest gap (in days) between two consecutive native observations.
    pub fn max_period_days(self) -> usize {
        match self {
            Frequency::Daily => 1,
            Frequency::Dekad => 11,
            Frequency::Monthly => 31,
        }
    }
}

/// Per-feature metadata: role, group membership and preprocessing flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub role: Role,
    #[serde(default)]
    pub groups: BTreeSet<FeatureGroup>,
    /// `None` means "decide from the role": exogenous channels are not smoothed.
    #[serde(default)]
    pub smooth: Option<bool>,
    #[serde(default)]
    pub frequency: Frequency,
}

impl FeatureMeta {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            groups: BTreeSet::new(),
            smooth: None,
            frequency: Frequency::Daily,
        }
    }

    pub fn with_groups(mut self, groups: &[FeatureGroup]) -> Self {
        self.groups.extend(groups.iter().copied());
        self
    }

    pub fn with_frequency(mut self, frequency: Frequency) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn is_smoothed(&self) -> bool {
        self.smooth
            .unwrap_or(self.role != Role::ExogenousKnownFuture)
    }

    /// Exogenous channels bypass interpolation as well as smoothing.
    pub fn is_interpolated(&self) -> bool {
        self.role != Role::ExogenousKnownFuture
    }

    pub fn in_group(&self, group: FeatureGroup) -> bool {
        group == FeatureGroup::All || self.groups.contains(&group)
    }

    /// Metadata used when no sidecar entry exists for `feature`.
    pub fn default_for(feature: &str, target_feature: &str) -> Self {
        use FeatureGroup::*;
        if feature == target_feature {
            return FeatureMeta::new(Role::Target).with_groups(&[Fcs, FcsPlus, Climate, Economics]);
        }
        let lower = feature.to_ascii_lowercase();
        match lower.as_str() {
            "ramadan" | "day_of_year" | "doy" => FeatureMeta::new(Role::ExogenousKnownFuture)
                .with_groups(&[Fcs, FcsPlus, Climate, Economics]),
            f if f.starts_with("season") || f.starts_with("calendar") => {
                FeatureMeta::new(Role::ExogenousKnownFuture).with_groups(&[Climate])
            }
            f if f.starts_with("rcsi") => {
                FeatureMeta::new(Role::Endogenous).with_groups(&[FcsPlus, Climate, Economics])
            }
            f if f.starts_with("rain") || f.starts_with("ndvi") => {
                FeatureMeta::new(Role::Endogenous)
                    .with_groups(&[Climate])
                    .with_frequency(Frequency::Dekad)
            }
            f if f.starts_with("alps") || f.starts_with("pewi") || f.contains("inflation") => {
                FeatureMeta::new(Role::Endogenous)
                    .with_groups(&[Economics])
                    .with_frequency(Frequency::Monthly)
            }
            f if f.contains("exchange") => {
                FeatureMeta::new(Role::Endogenous).with_groups(&[Economics])
            }
            _ => FeatureMeta::new(Role::Endogenous),
        }
    }
}

/// Sidecar metadata: the target feature name plus one entry per feature.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub features: BTreeMap<String, FeatureMeta>,
}

impl Metadata {
    pub const DEFAULT_TARGET: &'static str = "fcs";

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("metadata: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Target feature name: explicit setting, else the unique feature whose
    /// role is `target`, else [`Metadata::DEFAULT_TARGET`].
    pub fn target_feature(&self) -> String {
        if let Some(t) = &self.target {
            return t.clone();
        }
        self.features
            .iter()
            .find(|(_, m)| m.role == Role::Target)
            .map(|(name, _)| name.clone())
            .unwrap_or_else(|| Self::DEFAULT_TARGET.to_string())
    }

    /// Resolves metadata for every feature in `features`, filling defaults.
    pub fn resolve<'a>(
        &self,
        features: impl IntoIterator<Item = &'a str>,
    ) -> Result<BTreeMap<String, FeatureMeta>> {
        let target = self.target_feature();
        let mut out = BTreeMap::new();
        for f in features {
            let meta = self
                .features
                .get(f)
                .cloned()
                .unwrap_or_else(|| FeatureMeta::default_for(f, &target));
            out.insert(f.to_string(), meta);
        }
        let n_targets = out.values().filter(|m| m.role == Role::Target).count();
        if n_targets != 1 {
            return Err(Error::Config(format!(
                "exactly one feature must carry role `target`, found {n_targets}"
            )));
        }
        Ok(out)
    }
}

/// Dense date × series panel. Missing cells are stored as `NaN`.
///
/// Keys are kept sorted by `(region, feature)`; dates are strictly
/// increasing with one-day spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    dates: Vec<NaiveDate>,
    keys: Vec<SeriesKey>,
    values: Vec<Vec<f64>>,
    meta: BTreeMap<String, FeatureMeta>,
}

impl TimeSeriesFrame {
    /// Builds a frame from columns. `series` may be given in any order.
    pub fn new(
        dates: Vec<NaiveDate>,
        series: impl IntoIterator<Item = (SeriesKey, Vec<f64>)>,
        meta: BTreeMap<String, FeatureMeta>,
    ) -> Result<Self> {
        for w in dates.windows(2) {
            if w[1] - w[0] != Duration::days(1) {
                return Err(Error::Data(format!(
                    "dates must be consecutive days, found {} followed by {}",
                    w[0], w[1]
                )));
            }
        }
        let mut map = BTreeMap::new();
        for (key, vals) in series {
            if vals.len() != dates.len() {
                return Err(Error::Data(format!(
                    "series {key} has {} values for {} dates",
                    vals.len(),
                    dates.len()
                )));
            }
            if !meta.contains_key(&key.feature) {
                return Err(Error::Config(format!("no metadata for feature `{}`", key.feature)));
            }
            if map.insert(key.clone(), vals).is_some() {
                return Err(Error::Data(format!("series {key} given twice")));
            }
        }
        let (keys, values) = map.into_iter().unzip();
        Ok(Self {
            dates,
            keys,
            values,
            meta,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn keys(&self) -> &[SeriesKey] {
        &self.keys
    }

    pub fn n_series(&self) -> usize {
        self.keys.len()
    }

    pub fn values(&self, idx: usize) -> &[f64] {
        &self.values[idx]
    }

    pub fn index_of(&self, key: &SeriesKey) -> Option<usize> {
        self.keys.binary_search(key).ok()
    }

    pub fn series(&self, key: &SeriesKey) -> Option<&[f64]> {
        self.index_of(key).map(|i| self.values[i].as_slice())
    }

    pub fn meta(&self) -> &BTreeMap<String, FeatureMeta> {
        &self.meta
    }

    pub fn feature_meta(&self, feature: &str) -> &FeatureMeta {
        &self.meta[feature]
    }

    pub fn role(&self, idx: usize) -> Role {
        self.meta[&self.keys[idx].feature].role
    }

    pub fn target_feature(&self) -> &str {
        self.meta
            .iter()
            .find(|(_, m)| m.role == Role::Target)
            .map(|(n, _)| n.as_str())
            .expect("frame metadata always carries a target")
    }

    /// Distinct region identifiers, sorted.
    pub fn regions(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.keys.iter().map(|k| &k.region).collect();
        set.into_iter().cloned().collect()
    }

    /// Index of the target channel for `region`.
    pub fn target_index(&self, region: &str) -> Option<usize> {
        self.index_of(&SeriesKey::new(region, self.target_feature()))
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let off = (date - first).num_days();
        (off >= 0 && (off as usize) < self.dates.len()).then_some(off as usize)
    }

    pub fn is_missing(&self, series: usize, t: usize) -> bool {
        self.values[series][t].is_nan()
    }

    /// Per-cell missing flags, one row per series.
    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x.is_nan()).collect())
            .collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values
            .iter()
            .map(|v| v.iter().filter(|x| x.is_nan()).count())
            .sum()
    }

    /// Returns a copy with each series replaced by `f(key, meta, values)`.
    pub fn map_series<F>(&self, mut f: F) -> Self
    where
        F: FnMut(&SeriesKey, &FeatureMeta, &[f64]) -> Vec<f64>,
    {
        let values = self
            .keys
            .iter()
            .zip(&self.values)
            .map(|(k, v)| {
                let out = f(k, &self.meta[&k.feature], v);
                debug_assert_eq!(out.len(), v.len());
                out
            })
            .collect();
        Self {
            dates: self.dates.clone(),
            keys: self.keys.clone(),
            values,
            meta: self.meta.clone(),
        }
    }

    /// Keeps only the series for which `keep` returns true.
    pub fn filter_series<F>(&self, mut keep: F) -> Self
    where
        F: FnMut(&SeriesKey, &FeatureMeta) -> bool,
    {
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for (k, v) in self.keys.iter().zip(&self.values) {
            if keep(k, &self.meta[&k.feature]) {
                keys.push(k.clone());
                values.push(v.clone());
            }
        }
        let used: BTreeSet<&str> = keys.iter().map(|k: &SeriesKey| k.feature.as_str()).collect();
        let meta = self
            .meta
            .iter()
            .filter(|(n, m)| used.contains(n.as_str()) || m.role == Role::Target)
            .map(|(n, m)| (n.clone(), m.clone()))
            .collect();
        Self {
            dates: self.dates.clone(),
            keys,
            values,
            meta,
        }
    }

    /// Sub-frame of channels in `group`; target and known-future channels are
    /// always retained.
    pub fn select_feature_group(&self, group: FeatureGroup) -> Self {
        self.filter_series(|_, m| {
            m.in_group(group) || matches!(m.role, Role::Target | Role::ExogenousKnownFuture)
        })
    }

    /// Like [`select_feature_group`](Self::select_feature_group) but parses the tag.
    pub fn select_feature_group_by_name(&self, group: &str) -> Result<Self> {
        Ok(self.select_feature_group(group.parse()?))
    }

    pub fn retain_regions(&self, regions: &BTreeSet<String>) -> Self {
        self.filter_series(|k, _| regions.contains(&k.region))
    }

    /// Restricts the frame to dates in `[start, end)` (by index).
    pub fn slice_dates(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.dates.len());
        let start = start.min(end);
        Self {
            dates: self.dates[start..end].to_vec(),
            keys: self.keys.clone(),
            values: self.values.iter().map(|v| v[start..end].to_vec()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Replaces the values of one series. Used by feature builders and tests.
    pub fn set_series(&mut self, idx: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dates.len() {
            return Err(Error::Data("length mismatch in set_series".into()));
        }
        self.values[idx] = values;
        Ok(())
    }

    /// Start of the longest run, ending at or before `end` (exclusive), in which
    /// every series is observed on every day. Returns `end` if the day before
    /// `end` already has a gap.
    pub fn complete_run_start(&self, end: usize) -> usize {
        let end = end.min(self.dates.len());
        let mut start = end;
        while start > 0 && self.values.iter().all(|v| !v[start - 1].is_nan()) {
            start -= 1;
        }
        start
    }
}

/// Serializable form of a frame (missing cells become `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameArtifact {
    pub dates: Vec<NaiveDate>,
    pub meta: BTreeMap<String, FeatureMeta>,
    pub series: Vec<ArtifactSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSeries {
    pub region: String,
    pub feature: String,
    pub values: Vec<Option<f64>>,
}

impl From<&TimeSeriesFrame> for FrameArtifact {
    fn from(frame: &TimeSeriesFrame) -> Self {
        Self {
            dates: frame.dates.clone(),
            meta: frame.meta.clone(),
            series: frame
                .keys
                .iter()
                .zip(&frame.values)
                .map(|(k, v)| ArtifactSeries {
                    region: k.region.clone(),
                    feature: k.feature.clone(),
                    values: v.iter().map(|x| (!x.is_nan()).then_some(*x)).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<FrameArtifact> for TimeSeriesFrame {
    type Error = Error;

    fn try_from(a: FrameArtifact) -> Result<Self> {
        let series = a.series.into_iter().map(|s| {
            (
                SeriesKey::new(s.region, s.feature),
                s.values.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect(),
            )
        });
        TimeSeriesFrame::new(a.dates, series, a.meta)
    }
}

impl TimeSeriesFrame {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FrameArtifact::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<FrameArtifact>(text)?.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn small_frame() -> TimeSeriesFrame {
        let meta = Metadata::default()
            .resolve(["fcs", "rcsi", "rain", "ramadan", "exchange_rate"])
            .unwrap();
        let dates = vec![d("2022-01-01"), d("2022-01-02")];
        let series = ["fcs", "rcsi", "rain", "ramadan", "exchange_rate"]
            .iter()
            .flat_map(|f| {
                ["a", "b"]
                    .iter()
                    .map(move |r| (SeriesKey::new(*r, *f), vec![0.1, 0.2]))
            })
            .collect::<Vec<_>>();
        TimeSeriesFrame::new(dates, series, meta).unwrap()
    }

    #[test]
    fn group_all_is_identity() {
        let f = small_frame();
        assert_eq!(f.select_feature_group(FeatureGroup::All), f);
    }

    #[test]
    fn group_fcs_keeps_target_and_exogenous() {
        let f = small_frame().select_feature_group(FeatureGroup::Fcs);
        let feats: BTreeSet<_> = f.keys().iter().map(|k| k.feature.as_str()).collect();
        assert_eq!(feats, BTreeSet::from(["fcs", "ramadan"]));
    }

    #[test]
    fn group_fcsplus_adds_coping() {
        let f = small_frame().select_feature_group(FeatureGroup::FcsPlus);
        let feats: BTreeSet<_> = f.keys().iter().map(|k| k.feature.as_str()).collect();
        assert_eq!(feats, BTreeSet::from(["fcs", "rcsi", "ramadan"]));
    }

    #[test]
    fn unknown_group_is_rejected() {
        assert!(small_frame().select_feature_group_by_name("weather").is_err());
    }

    #[test]
    fn non_consecutive_dates_rejected() {
        let meta = Metadata::default().resolve(["fcs"]).unwrap();
        let err = TimeSeriesFrame::new(
            vec![d("2022-01-01"), d("2022-01-03")],
            [(SeriesKey::new("a", "fcs"), vec![0.1, 0.2])],
            meta,
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_artifact_round_trip() {
        let mut f = small_frame();
        f.set_series(0, vec![f64::NAN, 0.123456789012345]).unwrap();
        let back = TimeSeriesFrame::from_json(&f.to_json().unwrap()).unwrap();
        assert!(back.is_missing(0, 0));
        assert_eq!(back.values(0)[1], 0.123456789012345);
        assert_eq!(back.keys(), f.keys());
    }

    #[test]
    fn metadata_requires_single_target() {
        let md = Metadata::from_toml_str(
            r#"
            [features.a]
            role = "target"
            [features.b]
            role = "target"
            "#,
        )
        .unwrap();
        assert!(md.resolve(["a", "b"]).is_err());
    }
}
