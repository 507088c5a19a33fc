use std::ops::Range;

use serde::Serialize;

use crate::kmc::SeriesEstimate;

/// Points count as signal while `|mean| > NOISE_FLOOR · stderr`.
pub const NOISE_FLOOR: f64 = 4.0;
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `log|m| ≈ a − t/c`.
    Exponential,
    /// `log|m| ≈ a − [t/(c log t)]^{1/D}`, fitted on `t > e`.
    StretchedLog,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: DecayModel,
    pub c: f64,
    pub exponent: f64,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Indices into the series, end exclusive.
    pub window: (usize, usize),
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFits {
    pub window: Option<(usize, usize)>,
    pub exponential: Option<FitResult>,
    pub stretched: Option<FitResult>,
    /// Fewer than [`MIN_FIT_POINTS`] usable points, or no decay.
    pub inconclusive: bool,
}

impl DecayFits {
    /// The fit matching the dimension: exponential for `D = 1`.
    pub fn primary(&self, dim: f64) -> Option<&FitResult> {
        if dim <= 1.0 {
            self.exponential.as_ref()
        } else {
            self.stretched.as_ref()
        }
    }
}

/// First contiguous run of points above the noise floor.
pub fn signal_window(means: &[f64], stderrs: &[f64]) -> Option<Range<usize>> {
    let above = |k: usize| means[k].abs() > NOISE_FLOOR * stderrs[k] && means[k] != 0.0;
    let start = (0..means.len()).find(|&k| above(k))?;
    let end = (start..means.len()).find(|&k| !above(k)).unwrap_or(means.len());
    Some(start..end)
}

struct Line {
    intercept: f64,
    slope: f64,
    r_squared: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> Option<Line> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= f64::EPSILON * f64::EPSILON * n {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Some(Line {
        intercept,
        slope,
        r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0),
    })
}

fn fit_on(model: DecayModel, dim: f64, times: &[f64], logs: &[f64], window: &Range<usize>) -> Option<FitResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = window
        .clone()
        .filter_map(|k| {
            let t = times[k];
            let x = match model {
                DecayModel::Exponential => t,
                DecayModel::StretchedLog if t > std::f64::consts::E => (t / t.ln()).powf(1.0 / dim),
                DecayModel::StretchedLog => return None,
            };
            Some((x, logs[k]))
        })
        .unzip();
    if xs.len() < MIN_FIT_POINTS {
        return None;
    }
    let line = least_squares(&xs, &ys)?;
    if line.slope >= 0.0 {
        return None;
    }
    let c = match model {
        DecayModel::Exponential => -1.0 / line.slope,
        DecayModel::StretchedLog => (-line.slope).powf(-dim),
    };
    Some(FitResult {
        model,
        c,
        exponent: match model {
            DecayModel::Exponential => 1.0,
            DecayModel::StretchedLog => 1.0 / dim,
        },
        intercept: line.intercept,
        slope: line.slope,
        r_squared: line.r_squared,
        window: (window.start, window.end),
        points: xs.len(),
    })
}

/// Least-squares fits of `log|mean|` over the signal window, against `t` and
/// against `(t/log t)^{1/D}`.
pub fn fit_decay(series: &SeriesEstimate, dim: f64) -> DecayFits {
    let window = signal_window(&series.means, &series.stderrs);
    let Some(range) = window.clone().filter(|r| r.len() >= MIN_FIT_POINTS) else {
        return DecayFits {
            window: window.map(|r| (r.start, r.end)),
            exponential: None,
            stretched: None,
            inconclusive: true,
        };
    };
    let logs: Vec<f64> = series.means.iter().map(|m| m.abs().ln()).collect();
    let exponential = fit_on(DecayModel::Exponential, dim, &series.times, &logs, &range);
    let stretched = fit_on(DecayModel::StretchedLog, dim, &series.times, &logs, &range);
    DecayFits {
        window: Some((range.start, range.end)),
        inconclusive: exponential.is_none() && stretched.is_none(),
        exponential,
        stretched,
    }
}
