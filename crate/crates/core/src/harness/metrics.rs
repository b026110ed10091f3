use crate::error::{Error, Result};
use crate::gridworld::Schedule;

/// Trapezoidal area under `values` over `steps`, divided by the step span.
pub fn auc(steps: &[u64], values: &[f64]) -> Result<f64> {
    if steps.len() != values.len() {
        return Err(Error::ShapeMismatch {
            expected: steps.len(),
            got: values.len(),
        });
    }
    if steps.len() < 2 {
        return Err(Error::InvalidInput(format!("auc needs at least two records, got {}", steps.len())));
    }
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("auc needs strictly increasing steps".into()));
    }
    let area: f64 = steps
        .windows(2)
        .zip(values.windows(2))
        .map(|(s, v)| (s[1] - s[0]) as f64 * 0.5 * (v[0] + v[1]))
        .sum();
    Ok(area / (steps[steps.len() - 1] - steps[0]) as f64)
}

/// First step at which the mean of the trailing `window` values (fewer at
/// the start of the series) reaches `threshold`.
pub fn steps_to_threshold(steps: &[u64], values: &[f64], threshold: f64, window: usize) -> Option<u64> {
    let window = window.max(1);
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let count = (i + 1).min(window) as f64;
        if sum / count >= threshold {
            return Some(steps[i]);
        }
    }
    None
}

/// Steps-to-threshold within one schedule segment, counted from the
/// segment start. A segment that never reaches the threshold is censored at
/// its length (`reached = false`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentThreshold {
    pub segment: u64,
    pub steps: u64,
    pub reached: bool,
}

/// Per-segment steps-to-threshold for every segment of `exposure` (1-based).
pub fn exposure_steps_to_threshold(
    schedule: &Schedule,
    exposure: u32,
    steps: &[u64],
    values: &[f64],
    threshold: f64,
    window: usize,
) -> Vec<SegmentThreshold> {
    let first = 2 * (exposure as u64 - 1);
    (first..first + 2)
        .map(|segment| {
            let (start, end) = schedule.segment_bounds(segment);
            let (s, v): (Vec<u64>, Vec<f64>) = steps
                .iter()
                .zip(values)
                .filter(|(st, _)| **st >= start && **st < end)
                .map(|(st, v)| (*st - start, *v))
                .unzip();
            match steps_to_threshold(&s, &v, threshold, window) {
                Some(n) => SegmentThreshold {
                    segment,
                    steps: n,
                    reached: true,
                },
                None => SegmentThreshold {
                    segment,
                    steps: end - start,
                    reached: false,
                },
            }
        })
        .collect()
}

/// Sum of the per-segment (censored) steps-to-threshold of one exposure.
pub fn exposure_total_steps(segments: &[SegmentThreshold]) -> u64 {
    segments.iter().map(|s| s.steps).sum()
}
