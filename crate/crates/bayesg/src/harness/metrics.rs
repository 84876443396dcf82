//! CSV emission for metrics, returns, and cross-seed summaries. Headers
//! are fixed; summary files contain no wall-clock data so reruns are
//! byte-identical.

use crate::trainer::MetricsRow;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str = "step,episode,mean_return,policy_loss,value_loss,elbo_loss,\
prior_loss,mask_entropy,total_loss,wall_clock_s";
pub const RETURNS_HEADER: &str = "episode,return";
pub const SUMMARY_HEADER: &str = "episode,mean_return,std_return";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.episode,
            r.mean_return,
            r.policy_loss,
            r.value_loss,
            r.elbo_loss,
            r.prior_loss,
            r.mask_entropy,
            r.total_loss,
            r.wall_clock_s
        )?;
    }
    f.flush()
}

pub fn write_returns_csv(path: &Path, returns: &[f64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{RETURNS_HEADER}")?;
    for (ep, r) in returns.iter().enumerate() {
        writeln!(f, "{ep},{r}")?;
    }
    f.flush()
}

/// Per-episode mean and sample std across seed curves (std 0 for one seed).
pub fn summarize(curves: &[Vec<f64>]) -> Vec<(f64, f64)> {
    assert!(!curves.is_empty());
    let len = curves[0].len();
    assert!(curves.iter().all(|c| c.len() == len), "unequal curve lengths");
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            (mean(&vals), std_dev(&vals))
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, curves: &[Vec<f64>]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SUMMARY_HEADER}")?;
    for (ep, (m, s)) in summarize(curves).iter().enumerate() {
        writeln!(f, "{ep},{m},{s}")?;
    }
    f.flush()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean return over the trailing `window` fraction of episodes.
pub fn final_window_mean(returns: &[f64], window: f64) -> f64 {
    let k = ((returns.len() as f64 * window).ceil() as usize).clamp(1, returns.len());
    mean(&returns[returns.len() - k..])
}
