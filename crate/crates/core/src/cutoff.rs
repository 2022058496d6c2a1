//! Choosing how many neurons to remove from a prune-to-one trace.
//!
//! The data-free rule takes the mode of the histogram of recorded saliencies
//! and counts the steps at or below it. The data-driven rule samples an error
//! oracle, spending more samples where the saliency curve is steep.

use std::fmt;

use crate::error::{Error, Result};
use crate::prune::PruneTrace;

pub const DEFAULT_BINS: usize = 50;

/// Half-width of the centered difference window used for slopes.
const SLOPE_HALF_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mode_bin: usize,
    /// All values were identical; a single bin holds everything.
    pub degenerate: bool,
}

impl SaliencyHistogram {
    /// Equal-width bins over `[min, max]`, rightmost bin closed.
    pub fn from_values(values: &[f64], n_bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot build a histogram of an empty trace"));
        }
        if n_bins < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 bins, got {n_bins}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite saliency {v}")));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Ok(Self {
                bin_edges: vec![min, max],
                counts: vec![values.len()],
                mode_bin: 0,
                degenerate: true,
            });
        }
        let width = (max - min) / n_bins as f64;
        let bin_edges: Vec<f64> = (0..=n_bins)
            .map(|k| {
                if k == n_bins {
                    max
                } else {
                    min + k as f64 * width
                }
            })
            .collect();
        let mut counts = vec![0usize; n_bins];
        for &v in values {
            let idx = (((v - min) / width) as usize).min(n_bins - 1);
            counts[idx] += 1;
        }
        let mut mode_bin = 0;
        for (k, &c) in counts.iter().enumerate() {
            if c > counts[mode_bin] {
                mode_bin = k;
            }
        }
        Ok(Self {
            bin_edges,
            counts,
            mode_bin,
            degenerate: false,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])
    }

    pub fn mode_center(&self) -> f64 {
        self.bin_center(self.mode_bin)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn histogram(trace: &PruneTrace, n_bins: usize) -> Result<SaliencyHistogram> {
    SaliencyHistogram::from_values(&trace.saliencies(), n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffMethod {
    DataFree,
    DataDriven,
}

impl CutoffMethod {
    pub fn name(self) -> &'static str {
        match self {
            CutoffMethod::DataFree => "data-free",
            CutoffMethod::DataDriven => "data-driven",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CutoffEvidence {
    Histogram(SaliencyHistogram),
    ErrorSamples {
        baseline: f64,
        threshold: f64,
        /// `(step, error)` pairs in the order they were measured.
        samples: Vec<(usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffReport {
    pub method: CutoffMethod,
    pub predicted_count: usize,
    pub cutoff_saliency: f64,
    pub fraction: f64,
    pub trace_len: usize,
    pub evidence: CutoffEvidence,
    pub warnings: Vec<String>,
}

impl fmt::Display for CutoffReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} cutoff: remove {} of {} neurons (cutoff saliency {:.6e}, fraction {})",
            self.method.name(),
            self.predicted_count,
            self.trace_len,
            self.cutoff_saliency,
            self.fraction
        )?;
        match &self.evidence {
            CutoffEvidence::Histogram(h) => writeln!(
                f,
                "  histogram: {} bins, mode bin {} holds {} of {} steps",
                h.n_bins(),
                h.mode_bin,
                h.counts[h.mode_bin],
                h.total()
            )?,
            CutoffEvidence::ErrorSamples {
                baseline,
                threshold,
                samples,
            } => writeln!(
                f,
                "  error samples: {} (baseline {baseline:.4}, threshold {threshold:.4})",
                samples.len()
            )?,
        }
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Cutoff from the saliency histogram mode: the number of steps whose
/// saliency is at most the mode bin's center, scaled by `fraction`.
pub fn data_free_cutoff(trace: &PruneTrace, n_bins: usize, fraction: f64) -> Result<CutoffReport> {
    check_fraction(fraction)?;
    let hist = histogram(trace, n_bins)?;
    let cutoff = hist.mode_center();
    let mut warnings = Vec::new();
    let predicted_count = if hist.degenerate {
        warnings.push("all saliencies are identical; predicting no removals".to_string());
        0
    } else {
        let below = trace.steps.iter().filter(|s| s.saliency <= cutoff).count();
        (fraction * below as f64).floor() as usize
    };
    Ok(CutoffReport {
        method: CutoffMethod::DataFree,
        predicted_count,
        cutoff_saliency: cutoff,
        fraction,
        trace_len: trace.len(),
        evidence: CutoffEvidence::Histogram(hist),
        warnings,
    })
}

/// Centered-difference slope of the saliency curve at each step `1..=len`,
/// over a window of `2 * SLOPE_HALF_WINDOW + 1` steps clipped at the ends.
pub fn saliency_slopes(saliencies: &[f64]) -> Vec<f64> {
    let n = saliencies.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(SLOPE_HALF_WINDOW);
            let hi = (k + SLOPE_HALF_WINDOW).min(n - 1);
            if hi == lo {
                0.0
            } else {
                (saliencies[hi] - saliencies[lo]) / (hi - lo) as f64
            }
        })
        .collect()
}

// Sample steps placed at equal quantiles of a density proportional to the
// absolute slope, plus a floor so flat regions still get covered.
fn slope_guided_grid(saliencies: &[f64], points: usize) -> Vec<usize> {
    let n = saliencies.len();
    let slopes = saliency_slopes(saliencies);
    let mean_abs = slopes.iter().map(|s| s.abs()).sum::<f64>() / n as f64;
    let floor = if mean_abs > 0.0 { 0.1 * mean_abs } else { 1.0 };
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for s in &slopes {
        acc += s.abs() + floor;
        cum.push(acc);
    }
    let mut grid: Vec<usize> = (1..=points)
        .map(|q| {
            if q == points {
                return n;
            }
            let target = acc * q as f64 / points as f64;
            cum.iter().position(|&c| c >= target).unwrap_or(n - 1) + 1
        })
        .collect();
    grid.dedup();
    grid
}

/// Cutoff from adaptive sampling of `error_oracle(step)`, the error of the
/// network after `step` removals. Returns the largest sampled step whose
/// error stays within `max_error_increase` of the unpruned error, never
/// calling the oracle more than `budget` times.
pub fn data_driven_cutoff<F>(
    trace: &PruneTrace,
    mut error_oracle: F,
    budget: usize,
    max_error_increase: f64,
) -> Result<CutoffReport>
where
    F: FnMut(usize) -> Result<f64>,
{
    if budget < 3 {
        return Err(Error::invalid(format!(
            "budget must be at least 3, got {budget}"
        )));
    }
    if trace.is_empty() {
        return Err(Error::invalid("data-driven cutoff needs a nonempty trace"));
    }
    if max_error_increase.is_nan() || max_error_increase < 0.0 {
        return Err(Error::invalid("max_error_increase must be nonnegative"));
    }
    let n = trace.len();
    let mut samples: Vec<(usize, f64)> = Vec::new();
    let mut measure = |step: usize, samples: &mut Vec<(usize, f64)>| -> Result<f64> {
        let e = error_oracle(step)?;
        samples.push((step, e));
        Ok(e)
    };

    let baseline = measure(0, &mut samples)?;
    let threshold = baseline + max_error_increase;

    // Half of the remaining calls go to the coarse grid, the rest to bisection.
    let grid = slope_guided_grid(&trace.saliencies(), ((budget - 1) / 2).max(1));
    let mut lo = 0;
    let mut hi = None;
    for &s in &grid {
        if samples.len() >= budget {
            break;
        }
        if measure(s, &mut samples)? <= threshold {
            lo = s;
        } else {
            hi = Some(s);
            break;
        }
    }

    let mut warnings = Vec::new();
    match hi {
        Some(mut hi) => {
            while hi - lo > 1 && samples.len() < budget {
                let mid = lo + (hi - lo) / 2;
                if measure(mid, &mut samples)? <= threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if hi - lo > 1 {
                warnings.push(format!(
                    "budget exhausted with crossing bracketed in ({lo}, {hi}); returning {lo}"
                ));
            }
        }
        None if lo < n => warnings.push(format!(
            "budget exhausted before step {n} was measured; returning last passing step {lo}"
        )),
        None => {}
    }

    let cutoff_saliency = if lo == 0 {
        0.0
    } else {
        trace.steps[lo - 1].saliency
    };
    Ok(CutoffReport {
        method: CutoffMethod::DataDriven,
        predicted_count: lo,
        cutoff_saliency,
        fraction: 1.0,
        trace_len: n,
        evidence: CutoffEvidence::ErrorSamples {
            baseline,
            threshold,
            samples,
        },
        warnings,
    })
}
