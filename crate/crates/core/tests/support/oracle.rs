//! Straight-line reference evaluation of the belief update and intensity
//! mapping. Recomputes everything from the full event list; shares no code
//! with the engine beyond the input types.

#![allow(dead_code)]

use horizon_core::domain::TaskIssue;

pub const K: usize = 7;

#[derive(Debug, Clone, Copy)]
pub struct Ev {
    pub issue: usize,
    pub agent: bool,
    pub option: usize,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssueView {
    pub pmf: [f64; K],
    pub zopa: Option<(usize, usize)>,
    pub confidence: f64,
    pub s: f64,
}

fn stats(hist: &[usize]) -> (f64, f64) {
    let n = hist.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let mean = hist.iter().sum::<usize>() as f64 / nf;
    let var = hist.iter().map(|&h| (h as f64 - mean) * (h as f64 - mean)).sum::<f64>() / nf;
    let conf = if var / 3.0 >= 1.0 { 0.0 } else { 1.0 - var / 3.0 };
    if n < 2 {
        return (conf, 1.0);
    }
    let xbar = (1..=n).sum::<usize>() as f64 / nf;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &h) in hist.iter().enumerate() {
        let x = (i + 1) as f64;
        num += (x - xbar) * (h as f64 - mean);
        den += (x - xbar) * (x - xbar);
    }
    let slope = (num / den).abs();
    let ct = if slope >= 1.0 { 0.0 } else { 1.0 - slope };
    (conf, 0.6 * conf + 0.4 * ct)
}

/// Posterior and boundary statistics for every issue after `events`.
pub fn evaluate(events: &[Ev], issues: usize) -> Vec<IssueView> {
    (0..issues)
        .map(|i| {
            let mut p = [1.0 / K as f64; K];
            let mut hist: Vec<usize> = Vec::new();
            for e in events.iter().filter(|e| e.issue == i) {
                if e.agent {
                    hist.push(e.option);
                }
                let (conf, s) = stats(&hist);
                let w = if e.agent {
                    f64::min(1.0, 0.7 * (1.0 + s))
                } else {
                    f64::min(1.0, 0.3 * (1.0 + e.r.abs()))
                };
                let direct: Vec<usize> = if e.agent {
                    hist[hist.len().saturating_sub(3)..].to_vec()
                } else {
                    vec![e.option]
                };
                let lo = hist.iter().copied().min().unwrap_or(0);
                let hi = hist.iter().copied().max().unwrap_or(K - 1);
                let mut q = [0.0; K];
                for j in 0..K {
                    let l = if direct.contains(&j) {
                        0.8 * w
                    } else if direct.iter().any(|&d| d + 1 == j || j + 1 == d) {
                        0.4
                    } else {
                        0.1
                    };
                    let b = if hist.len() >= 2 && (j < lo || j > hi) {
                        1.0 - conf
                    } else {
                        1.0
                    };
                    q[j] = l * b * w * p[j];
                }
                let total: f64 = q.iter().sum();
                if total > 0.0 {
                    for j in 0..K {
                        p[j] = q[j] / total;
                    }
                } else {
                    p = [1.0 / K as f64; K];
                }
            }
            let (confidence, s) = if hist.is_empty() { (0.0, 0.0) } else { stats(&hist) };
            let zopa = if hist.is_empty() {
                None
            } else {
                Some((*hist.iter().min().unwrap(), *hist.iter().max().unwrap()))
            };
            IssueView {
                pmf: p,
                zopa,
                confidence,
                s,
            }
        })
        .collect()
}

/// Cell intensity for option `j` of `issue`.
pub fn intensity(view: &IssueView, issue: &TaskIssue, j: usize) -> f64 {
    let u = issue.payoffs.human_payoffs[j];
    let inside = matches!(view.zopa, Some((lo, hi)) if lo <= j && j <= hi);
    if inside && u >= issue.spec.tau_min {
        f64::min(
            0.6,
            view.pmf[j] * 2.0 * view.confidence.sqrt() * (1.0 + view.s) * issue.spec.xi,
        )
    } else if issue.spec.tau_min <= u && u <= issue.spec.tau_max {
        f64::min(0.25, view.pmf[j] * 0.4)
    } else {
        0.0
    }
}
