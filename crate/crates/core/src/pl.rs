//! Power-law rainfall retrieval from a single sub-link's 1-minute RSL.
//!
//! Pipeline per link: rolling-std wet/dry flags → baseline RSL (median of
//! recent dry minutes, carried forward through wet spells) → attenuation
//! `A = baseline − rsl` clamped at zero → subtract a fixed wet-antenna
//! offset → invert `A = a·R^b·L`. Lengths are in km and `a` in dB/km.
//! The site estimate is the unweighted mean over links.

use std::collections::VecDeque;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LinkMeta, TimeSeries, Unit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffEntry {
    pub frequency_ghz: f64,
    pub a: f64,
    pub b: f64,
}

/// Frequency → `(a, b)` lookup. The entry with the nearest frequency wins
/// (ties go to the lower frequency); there is no interpolation between
/// entries. Frequencies further than `max_gap_ghz` from every entry are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub entries: Vec<CoeffEntry>,
    #[serde(default = "default_max_gap")]
    pub max_gap_ghz: f64,
}

fn default_max_gap() -> f64 {
    1.0
}

impl Default for CoefficientTable {
    /// Vertical polarization, 30–40 GHz. Approximate values in the style of
    /// the ITU-R P.838 tabulation; external constants meant to be replaced
    /// by a site-specific table when one is available.
    fn default() -> Self {
        let rows = [
            (30.0, 0.2291, 0.9129),
            (31.0, 0.2465, 0.9047),
            (32.0, 0.2640, 0.8966),
            (33.0, 0.2815, 0.8890),
            (34.0, 0.2991, 0.8816),
            (35.0, 0.3167, 0.8745),
            (36.0, 0.3343, 0.8677),
            (37.0, 0.3519, 0.8612),
            (38.0, 0.3693, 0.8549),
            (39.0, 0.3866, 0.8489),
            (40.0, 0.4038, 0.8431),
        ];
        Self {
            entries: rows.iter().map(|&(frequency_ghz, a, b)| CoeffEntry { frequency_ghz, a, b }).collect(),
            max_gap_ghz: default_max_gap(),
        }
    }
}

impl CoefficientTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn lookup(&self, frequency_ghz: f64) -> Result<(f64, f64)> {
        let mut best: Option<(f64, &CoeffEntry)> = None;
        for e in &self.entries {
            let d = (e.frequency_ghz - frequency_ghz).abs();
            let better = match best {
                None => true,
                Some((bd, be)) => d < bd || (d == bd && e.frequency_ghz < be.frequency_ghz),
            };
            if better {
                best = Some((d, e));
            }
        }
        match best {
            Some((d, e)) if d <= self.max_gap_ghz => Ok((e.a, e.b)),
            _ => Err(Error::MissingCoefficient(frequency_ghz)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlConfig {
    pub std_window_min: usize,
    /// Explicit wet threshold on the rolling std (dB). When unset it is
    /// `wet_threshold_factor` times the dry-std estimate of the calibration
    /// period, see [`PlConfig::calibrate`].
    pub wet_threshold_db: Option<f64>,
    pub wet_threshold_factor: f64,
    /// Wet-antenna offset: `max(intercept + slope · f_GHz, 0)` dB.
    pub waa_intercept_db: f64,
    pub waa_slope_db_per_ghz: f64,
    /// Number of most recent dry minutes whose median is the baseline.
    pub baseline_window_min: usize,
    pub coeffs: CoefficientTable,
}

impl Default for PlConfig {
    fn default() -> Self {
        Self {
            std_window_min: 15,
            wet_threshold_db: None,
            wet_threshold_factor: 0.8,
            waa_intercept_db: 0.0,
            waa_slope_db_per_ghz: 0.025,
            baseline_window_min: 60,
            coeffs: CoefficientTable::default(),
        }
    }
}

impl PlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std_window_min < 2 {
            return Err(Error::ConfigInvalid(format!("std_window_min {} must be >= 2", self.std_window_min)));
        }
        if self.baseline_window_min < 1 {
            return Err(Error::ConfigInvalid("baseline_window_min must be >= 1".into()));
        }
        if self.wet_threshold_db.is_some_and(|t| t.is_nan() || t < 0.0) {
            return Err(Error::ConfigInvalid("wet_threshold_db must be >= 0".into()));
        }
        Ok(())
    }

    pub fn waa_offset_db(&self, frequency_ghz: f64) -> f64 {
        (self.waa_intercept_db + self.waa_slope_db_per_ghz * frequency_ghz).max(0.0)
    }

    pub fn wet_threshold(&self) -> Result<f64> {
        self.wet_threshold_db
            .ok_or_else(|| Error::ConfigInvalid("wet threshold not set; calibrate on a training period first".into()))
    }

    /// Fixes an unset threshold from calibration RSL series (typically the
    /// training period of every link).
    pub fn calibrate(&self, rsl: &[&[f64]]) -> Result<Self> {
        let mut out = self.clone();
        if out.wet_threshold_db.is_none() {
            let mut est = Vec::with_capacity(rsl.len());
            for r in rsl {
                est.push(dry_std_estimate(r, self.std_window_min)?);
            }
            let mean = if est.is_empty() { 0.0 } else { est.iter().sum::<f64>() / est.len() as f64 };
            out.wet_threshold_db = Some(self.wet_threshold_factor * mean);
        }
        Ok(out)
    }
}

/// Centered window `[i - left, i + right]` clipped to `[0, n)`.
fn centered(i: usize, n: usize, width: usize) -> (usize, usize) {
    let left = (width - 1) / 2;
    let right = width - 1 - left;
    (i.saturating_sub(left), (i + right + 1).min(n))
}

/// Population std over a centered window of `window` minutes, shrinking at the edges.
pub fn rolling_std(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window > x.len() {
        return Err(Error::WindowTooLong { window, len: x.len() });
    }
    Ok((0..x.len())
        .map(|i| {
            let (lo, hi) = centered(i, x.len(), window);
            // shifting by the first sample keeps constant windows at exactly 0
            let s = &x[lo..hi];
            let n = s.len() as f64;
            let m = s.iter().map(|v| v - s[0]).sum::<f64>() / n;
            (s.iter().map(|v| (v - s[0] - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the rolling std: a robust level for dry-weather fluctuation,
/// since most minutes are dry.
pub fn dry_std_estimate(rsl: &[f64], window: usize) -> Result<f64> {
    let mut s = rolling_std(rsl, window)?;
    Ok(median(&mut s))
}

pub fn wet_dry(rsl: &[f64], cfg: &PlConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    let threshold = cfg.wet_threshold()?;
    Ok(rolling_std(rsl, cfg.std_window_min)?.into_iter().map(|s| s > threshold).collect())
}

/// Returns `(baseline, attenuation)`; attenuation is `baseline − rsl` clamped at 0.
pub fn baseline_attenuation(rsl: &[f64], wet: &[bool], window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if rsl.len() != wet.len() {
        return Err(Error::Misaligned(format!("{} RSL values vs {} flags", rsl.len(), wet.len())));
    }
    let first_dry = wet.iter().position(|w| !w).ok_or(Error::NoDryPeriod)?;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(window);
    let mut scratch = Vec::with_capacity(window);
    let mut baseline = vec![0.0; rsl.len()];
    let mut level = f64::NAN;
    for t in first_dry..rsl.len() {
        if !wet[t] {
            if recent.len() == window {
                recent.pop_front();
            }
            recent.push_back(rsl[t]);
            scratch.clear();
            scratch.extend(recent.iter().copied());
            level = median(&mut scratch);
        }
        baseline[t] = level;
    }
    // before the first dry minute, fall back to the first dry level
    let first = baseline[first_dry];
    baseline[..first_dry].iter_mut().for_each(|b| *b = first);
    let att = baseline.iter().zip(rsl).map(|(b, r)| (b - r).max(0.0)).collect();
    Ok((baseline, att))
}

/// `R = (max(A − waa, 0) / (a·L))^(1/b)`.
pub fn invert_power_law(attenuation_db: f64, a: f64, b: f64, length_km: f64, waa_db: f64) -> f64 {
    let excess = (attenuation_db - waa_db).max(0.0);
    if excess == 0.0 {
        return 0.0;
    }
    (excess / (a * length_km)).powf(1.0 / b)
}

/// Forward model `A = a·R^b·L`.
pub fn power_law_attenuation(rate_mm_h: f64, a: f64, b: f64, length_km: f64) -> f64 {
    if rate_mm_h <= 0.0 {
        return 0.0;
    }
    a * rate_mm_h.powf(b) * length_km
}

/// Per-minute rain rate for one link; dry minutes are exactly 0.
pub fn link_rain_rate(rsl: &[f64], meta: &LinkMeta, cfg: &PlConfig) -> Result<Vec<f64>> {
    let (a, b) = cfg.coeffs.lookup(meta.frequency_ghz)?;
    let wet = wet_dry(rsl, cfg)?;
    let (_, att) = baseline_attenuation(rsl, &wet, cfg.baseline_window_min)?;
    let waa = cfg.waa_offset_db(meta.frequency_ghz);
    Ok(att
        .iter()
        .zip(&wet)
        .map(|(&a_db, &w)| if w { invert_power_law(a_db, a, b, meta.length_km, waa) } else { 0.0 })
        .collect())
}

/// Site estimate on `grid` (1-minute timestamps): mean of per-link rates.
/// Each link series must be complete at 1-minute resolution and cover the grid.
pub fn pl_estimate(links: &[(LinkMeta, TimeSeries)], grid: &[DateTime<Utc>], cfg: &PlConfig) -> Result<TimeSeries> {
    let start = *grid.first().ok_or_else(|| Error::Misaligned("empty grid".into()))?;
    if links.is_empty() {
        return Err(Error::Misaligned("no links".into()));
    }
    let mut sum = vec![0.0; grid.len()];
    for (meta, series) in links {
        if series.step_s() != 60 {
            return Err(Error::WrongStep { expected_s: 60, actual_s: series.step_s() });
        }
        let rsl = series
            .complete()
            .ok_or_else(|| Error::Misaligned(format!("link {} has missing values", meta.link_id)))?;
        let rate = link_rain_rate(&rsl, meta, cfg)?;
        for (s, t) in sum.iter_mut().zip(grid) {
            let i = series
                .index_of(*t)
                .ok_or_else(|| Error::Misaligned(format!("link {} does not cover {t}", meta.link_id)))?;
            *s += rate[i];
        }
    }
    let n = links.len() as f64;
    TimeSeries::from_values(start, 60, &sum.iter().map(|s| s / n).collect::<Vec<_>>(), Unit::MmPerH)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(threshold: f64) -> PlConfig {
        PlConfig { wet_threshold_db: Some(threshold), ..Default::default() }
    }

    #[test]
    fn constant_rsl_is_dry() {
        assert!(wet_dry(&[-40.0; 30], &cfg(0.0)).unwrap().iter().all(|w| !w));
    }

    #[test]
    fn infinite_threshold_is_dry() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin() * 10.0).collect();
        assert!(wet_dry(&x, &cfg(f64::INFINITY)).unwrap().iter().all(|w| !w));
    }

    #[test]
    fn step_change_flags_spanning_windows() {
        let x: Vec<f64> = (0..40).map(|i| if i < 20 { -40.0 } else { -45.0 }).collect();
        let c = PlConfig { std_window_min: 5, ..cfg(0.5) };
        let wet = wet_dry(&x, &c).unwrap();
        for (i, w) in wet.iter().enumerate() {
            // window [i-2, i+2] contains both levels iff it spans 19|20
            let spans = i + 2 >= 20 && i.saturating_sub(2) <= 19;
            assert_eq!(*w, spans, "minute {i}");
        }
    }

    #[test]
    fn window_longer_than_series() {
        assert!(matches!(wet_dry(&[0.0; 5], &cfg(1.0)), Err(Error::WindowTooLong { .. })));
    }

    #[test]
    fn baseline_cases() {
        let (b, a) = baseline_attenuation(&[-40.0; 5], &[false; 5], 60).unwrap();
        assert_eq!(b, vec![-40.0; 5]);
        assert_eq!(a, vec![0.0; 5]);

        let rsl = [-40.0, -40.0, -43.0, -43.0, -40.0];
        let wet = [false, false, true, true, false];
        let (_, a) = baseline_attenuation(&rsl, &wet, 60).unwrap();
        assert_eq!(a, vec![0.0, 0.0, 3.0, 3.0, 0.0]);

        let (_, a) = baseline_attenuation(&[-40.0, -39.0], &[false, true], 60).unwrap();
        assert_eq!(a[1], 0.0);

        assert!(matches!(baseline_attenuation(&[-40.0], &[true], 60), Err(Error::NoDryPeriod)));
    }

    #[test]
    fn leading_wet_uses_first_dry_level() {
        let (b, _) = baseline_attenuation(&[-45.0, -40.0, -41.0], &[true, false, false], 60).unwrap();
        assert_eq!(b[0], -40.0);
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(invert_power_law(0.0, 0.2, 1.0, 2.0, 0.0), 0.0);
        assert!((invert_power_law(2.0, 0.2, 1.0, 2.0, 0.0) - 5.0).abs() < 1e-12);
        assert_eq!(invert_power_law(0.5, 0.2, 1.0, 2.0, 1.0), 0.0);
    }

    #[test]
    fn coefficient_lookup() {
        let t = CoefficientTable::default();
        assert_eq!(t.lookup(38.32).unwrap(), (0.3693, 0.8549));
        assert_eq!(t.lookup(30.5).unwrap(), (0.2291, 0.9129));
        assert!(matches!(t.lookup(18.0), Err(Error::MissingCoefficient(_))));
    }

    #[test]
    fn calibrate_scales_dry_estimate() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let c = PlConfig { std_window_min: 4, ..Default::default() }.calibrate(&[&x]).unwrap();
        // every full window of alternating ±1 has population std 1
        assert!((c.wet_threshold_db.unwrap() - 0.8).abs() < 1e-12);
    }
}
