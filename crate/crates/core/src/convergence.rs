//! Global convergence panel: how much agreement space is left and which party
//! it favours.

use serde::{Deserialize, Serialize};

use crate::belief::{IntensityGrid, ZopaRange};
use crate::domain::{TaskIssue, OPTIONS_PER_ISSUE};

/// Narrowest bar width, one option's share of the row.
pub const MIN_WIDTH_PERCENT: f64 = 100.0 / OPTIONS_PER_ISSUE as f64;
/// Position reported while some issue has no ZOPA yet.
pub const NEUTRAL_POSITION: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSnapshot {
    pub convergence_ratio: f64,
    pub width_percentage: f64,
    pub weighted_position: f64,
    /// 0 = red, 0.5 = amber, 1 = green.
    pub color_stop: f64,
}

impl ConvergenceSnapshot {
    pub fn compute(grid: &IntensityGrid, task: &[TaskIssue]) -> Self {
        let ratio = convergence_ratio(grid);
        let zopas: Vec<Option<ZopaRange>> = task
            .iter()
            .map(|issue| {
                grid.rows
                    .iter()
                    .find(|r| &r.issue_id == issue.id())
                    .and_then(|r| r.zopa)
            })
            .collect();
        let position = weighted_position(&zopas, task);
        Self {
            convergence_ratio: ratio,
            width_percentage: width_percentage(ratio),
            weighted_position: position,
            color_stop: color_stop(position),
        }
    }
}

/// `1 - promising / total` over the visible grid. An empty grid counts as
/// fully converged.
pub fn convergence_ratio(grid: &IntensityGrid) -> f64 {
    ratio_from_counts(grid.promising_count(), grid.cell_count())
}

pub fn ratio_from_counts(green: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    1.0 - green as f64 / total as f64
}

pub fn width_percentage(convergence_ratio: f64) -> f64 {
    MIN_WIDTH_PERCENT.max((1.0 - convergence_ratio) * 100.0)
}

/// Mean human payoff inside each ZOPA over the sum of human maxima, as a
/// percentage. Equal issue weights cancel out of the ratio.
pub fn weighted_position(zopas: &[Option<ZopaRange>], task: &[TaskIssue]) -> f64 {
    if zopas.len() != task.len() || task.is_empty() {
        return NEUTRAL_POSITION;
    }
    let weight = 1.0 / task.len() as f64;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (zopa, issue) in zopas.iter().zip(task) {
        let Some(zopa) = zopa else {
            return NEUTRAL_POSITION;
        };
        let payoffs = &issue.payoffs.human_payoffs;
        let mean = zopa.options().map(|o| payoffs[o.get()]).sum::<f64>() / zopa.width() as f64;
        numerator += mean * weight;
        denominator += payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max) * weight;
    }
    if denominator <= 0.0 {
        return NEUTRAL_POSITION;
    }
    (numerator / denominator * 100.0).clamp(0.0, 100.0)
}

pub fn color_stop(position: f64) -> f64 {
    (position / 100.0).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TaskCatalog;
    use crate::domain::OptionIndex;

    fn zopa(lo_label: usize, hi_label: usize) -> Option<ZopaRange> {
        Some(ZopaRange {
            lower: OptionIndex::from_label(lo_label).unwrap(),
            upper: OptionIndex::from_label(hi_label).unwrap(),
        })
    }

    #[test]
    fn width_examples() {
        assert_eq!(width_percentage(ratio_from_counts(49, 49)), 100.0);
        let w = width_percentage(ratio_from_counts(0, 49));
        assert!((w - 14.285714285714286).abs() < 1e-12);
        assert_eq!(ratio_from_counts(0, 49), 1.0);
        let w = width_percentage(ratio_from_counts(21, 49));
        assert!((w - 100.0 * 21.0 / 49.0).abs() < 1e-9);
    }

    #[test]
    fn position_examples() {
        let task = vec![TaskCatalog::shipped().fixture().unwrap().clone()];
        let p = weighted_position(&[zopa(5, 6)], &task);
        assert!((p - 90.0 / 110.0 * 100.0).abs() < 1e-9);
        assert!((color_stop(p) - 0.818).abs() < 1e-3);
        let p = weighted_position(&[zopa(1, 7)], &task);
        let mean = task[0].payoffs.human_payoffs.iter().sum::<f64>() / 7.0;
        assert!((p - mean / 110.0 * 100.0).abs() < 1e-9);
        assert_eq!(weighted_position(&[zopa(7, 7)], &task), 100.0);
        assert_eq!(weighted_position(&[None], &task), NEUTRAL_POSITION);
    }

    #[test]
    fn color_examples() {
        assert_eq!(color_stop(0.0), 0.0);
        assert_eq!(color_stop(100.0), 1.0);
        assert!((color_stop(81.8) - 0.818).abs() < 1e-12);
    }

    #[test]
    fn position_is_scale_free() {
        let mut task = TaskCatalog::shipped().issues()[..3].to_vec();
        let zopas = [zopa(2, 4), zopa(1, 1), zopa(5, 7)];
        let before = weighted_position(&zopas, &task);
        for issue in &mut task {
            for p in issue.payoffs.human_payoffs.iter_mut() {
                *p *= 2.0;
            }
        }
        assert!((weighted_position(&zopas, &task) - before).abs() < 1e-12);
    }
}
