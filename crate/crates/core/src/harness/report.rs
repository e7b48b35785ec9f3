use std::fmt::Write as _;
use std::path::Path;

use super::config::ScenarioConfig;
use super::logs::*;
use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;

/// Truth vs estimate with the 2σ band, one row per estimate sample.
pub const BAND_FILE: &str = "band.csv";
pub const BAND_HEADER: &str = "t,x,y,z,x_est,y_est,z_est,lo_x,lo_y,lo_z,hi_x,hi_y,hi_z";

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub metrics: Option<MetricsReport>,
    /// Fraction of truth position components inside the estimate's 2σ band.
    pub band_coverage: Option<f64>,
    /// Status file missing or not marked complete.
    pub partial: bool,
    pub text: String,
}

fn status(dir: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(dir.join(STATUS_FILE))
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Writes `report.txt` and `band.csv` for a run directory. Partial runs get
/// a warning banner and whatever metrics their logs support.
pub fn report(dir: &Path) -> Result<ReportSummary, HarnessError> {
    let status = status(dir);
    let get = |k: &str| status.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let partial = get("state") != Some("complete");

    let snapshot = dir.join(CONFIG_SNAPSHOT);
    let cfg_text = std::fs::read_to_string(&snapshot).map_err(|e| HarnessError::io(&snapshot, e))?;
    let cfg = ScenarioConfig::from_toml(&cfg_text)?;
    let truth = read_truth(&dir.join(TRUTH_FILE))?;
    let vision = read_vision(&dir.join(VISION_FILE))?;
    let estimate = read_estimate(&dir.join(ESTIMATE_FILE))?;

    let metrics = match compute_metrics(&truth, &vision, &cfg.ship_pose().position) {
        Ok(m) => Some(m),
        Err(HarnessError::Metrics(e)) if partial => {
            log::warn!("partial run: {e}");
            None
        }
        Err(e) => return Err(e),
    };

    let mut band = String::from(BAND_HEADER);
    band.push('\n');
    let mut inside = 0usize;
    let mut total = 0usize;
    for (tr, es) in truth.iter().zip(&estimate) {
        if (tr.t - es.t).abs() > 1e-9 {
            return Err(HarnessError::Log(format!("truth and estimate logs diverge at t={}", tr.t)));
        }
        let x = tr.pose.position;
        let xe = es.pose.position;
        let lo = xe - es.sigma * 2.0;
        let hi = xe + es.sigma * 2.0;
        for i in 0..3 {
            total += 1;
            if x[i] >= lo[i] && x[i] <= hi[i] {
                inside += 1;
            }
        }
        writeln!(
            band,
            "{:.6},{},{},{},{},{},{},{},{},{},{},{},{}",
            tr.t, x.x, x.y, x.z, xe.x, xe.y, xe.z, lo.x, lo.y, lo.z, hi.x, hi.y, hi.z
        )
        .expect("string write");
    }
    let band_path = dir.join(BAND_FILE);
    std::fs::write(&band_path, band).map_err(|e| HarnessError::io(&band_path, e))?;
    let band_coverage = (total > 0).then(|| inside as f64 / total as f64);

    let mut text = String::new();
    if partial {
        text.push_str("WARNING: partial run, results cover only the logged portion\n\n");
    }
    writeln!(text, "scenario: {}", cfg.name).expect("string write");
    writeln!(text, "duration: {} s, control: {:?}", cfg.duration, cfg.control_source).expect("string write");
    text.push('\n');
    match &metrics {
        Some(m) => {
            writeln!(text, "{m}").expect("string write");
            writeln!(text, "\nframes: {}, fixes: {}", m.frames, m.fixes).expect("string write");
        }
        None => text.push_str("metrics: N/A (no vision epochs logged)\n"),
    }
    match band_coverage {
        Some(c) => writeln!(text, "2-sigma band coverage: {:.1}% ({BAND_FILE})", 100.0 * c),
        None => writeln!(text, "2-sigma band coverage: N/A"),
    }
    .expect("string write");
    if get("degraded") == Some("true") {
        text.push_str("estimator: DEGRADED (vision outage exceeded limit)\n");
    }
    for key in ["clamped_intervals", "detector_errors", "dropped_stale", "missed_fixes"] {
        if let Some(v) = get(key) {
            writeln!(text, "{key}: {v}").expect("string write");
        }
    }
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, &text).map_err(|e| HarnessError::io(&path, e))?;

    Ok(ReportSummary {
        metrics,
        band_coverage,
        partial,
        text,
    })
}
