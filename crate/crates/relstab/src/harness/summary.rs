//! Aggregation of persisted records into per-method log-scale statistics and
//! the method ranking table.

use crate::bounds::{self, BoundRecord, TightnessSummary};
use crate::error::Result;
use crate::explain::Method;
use crate::stability::{DenomMode, StabilityRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Metric values smaller than this are clamped before taking log10.
const LOG_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Ris,
    Rrs,
    Ros,
    LipschitzEq1,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::Ris,
        MetricName::Rrs,
        MetricName::Ros,
        MetricName::LipschitzEq1,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MetricName::Ris => "ris",
            MetricName::Rrs => "rrs",
            MetricName::Ros => "ros",
            MetricName::LipschitzEq1 => "lipschitz_eq1",
        }
    }

    fn pick(&self, r: &StabilityRecord) -> Option<f64> {
        match self {
            MetricName::Ris => r.ris,
            MetricName::Rrs => r.rrs,
            MetricName::Ros => r.ros,
            MetricName::LipschitzEq1 => r.lipschitz_eq1,
        }
    }
}

/// Order statistics of log10 values (positives only; zeros and undefined
/// values are counted separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// One (method, metric) cell. `stats = None` marks an absent cell: no
/// positive values to take logs of, not a zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub method: Method,
    pub metric: MetricName,
    pub count: usize,
    pub zeros: usize,
    pub undefined: usize,
    pub stats: Option<LogStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRank {
    pub method: Method,
    pub median_log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: DenomMode,
    pub cells: Vec<MetricCell>,
    /// Methods ordered most-stable-first by median log10 value.
    pub ranking_by_median_rrs: Vec<MethodRank>,
    pub ranking_by_median_ros: Vec<MethodRank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub modes: Vec<ModeSummary>,
    pub tightness: Option<TightnessSummary>,
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn cell_from_values(method: Method, metric: MetricName, values: &[Option<f64>]) -> MetricCell {
    let undefined = values.iter().filter(|v| v.is_none()).count();
    let zeros = values.iter().filter(|v| **v == Some(0.0)).count();
    let mut logs: Vec<f64> = values
        .iter()
        .filter_map(|v| v.filter(|x| *x > 0.0))
        .map(|v| v.max(LOG_CLAMP).log10())
        .collect();
    logs.sort_by(|a, b| a.partial_cmp(b).expect("finite logs"));
    let stats = (!logs.is_empty()).then(|| LogStats {
        median: quantile(&logs, 0.5),
        q1: quantile(&logs, 0.25),
        q3: quantile(&logs, 0.75),
        min: logs[0],
        max: logs[logs.len() - 1],
    });
    MetricCell {
        method,
        metric,
        count: values.len(),
        zeros,
        undefined,
        stats,
    }
}

fn rank_by(cells: &[MetricCell], metric: MetricName) -> Vec<MethodRank> {
    let mut ranks: Vec<MethodRank> = cells
        .iter()
        .filter(|c| c.metric == metric)
        .filter_map(|c| {
            c.stats.as_ref().map(|s| MethodRank {
                method: c.method,
                median_log10: s.median,
            })
        })
        .collect();
    ranks.sort_by(|a, b| {
        a.median_log10
            .partial_cmp(&b.median_log10)
            .expect("finite medians")
            .then(a.method.cmp(&b.method))
    });
    ranks
}

/// Builds the summary from in-memory records.
pub fn summarize_records(
    stability: &[StabilityRecord],
    bound_records: &[BoundRecord],
) -> Summary {
    let mut by_mode: BTreeMap<DenomMode, BTreeMap<Method, Vec<&StabilityRecord>>> =
        BTreeMap::new();
    for r in stability {
        by_mode
            .entry(r.denom_mode)
            .or_default()
            .entry(r.method)
            .or_default()
            .push(r);
    }
    let modes = by_mode
        .into_iter()
        .map(|(mode, methods)| {
            let mut cells = Vec::new();
            for (method, records) in &methods {
                for metric in MetricName::ALL {
                    let values: Vec<Option<f64>> =
                        records.iter().map(|r| metric.pick(r)).collect();
                    cells.push(cell_from_values(*method, metric, &values));
                }
            }
            let ranking_by_median_rrs = rank_by(&cells, MetricName::Rrs);
            let ranking_by_median_ros = rank_by(&cells, MetricName::Ros);
            ModeSummary {
                mode,
                cells,
                ranking_by_median_rrs,
                ranking_by_median_ros,
            }
        })
        .collect();
    let tightness = (!bound_records.is_empty()).then(|| bounds::tightness_summary(bound_records));
    Summary { modes, tightness }
}

/// Builds the summary from a persisted results directory.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let manifest = super::io::Manifest::load(dir)?;
    let paths = super::io::results_paths(dir, &manifest.files);
    let stability: Vec<StabilityRecord> = super::io::read_jsonl(&paths.stability_jsonl)?;
    let bound_records: Vec<BoundRecord> = if paths.bounds_jsonl.exists() {
        super::io::read_jsonl(&paths.bounds_jsonl)?
    } else {
        Vec::new()
    };
    Ok(summarize_records(&stability, &bound_records))
}

fn fmt_stat(s: &Option<LogStats>) -> String {
    match s {
        Some(v) => format!(
            "{:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            v.min, v.q1, v.median, v.q3, v.max
        ),
        None => format!("{:>44}", "absent"),
    }
}

/// Human-readable table plus the stability trend report.
pub fn render_summary(summary: &Summary) -> String {
    let mut out = String::new();
    for mode in &summary.modes {
        out.push_str(&format!(
            "\n== denominator mode: {} (log10 statistics) ==\n",
            mode.mode
        ));
        out.push_str(&format!(
            "{:<22}{:<15}{:>6}{:>6}{:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "method", "metric", "count", "zeros", "undef", "min", "q1", "median", "q3", "max"
        ));
        for cell in &mode.cells {
            out.push_str(&format!(
                "{:<22}{:<15}{:>6}{:>6}{:>6} {}\n",
                cell.method.name(),
                cell.metric.label(),
                cell.count,
                cell.zeros,
                cell.undefined,
                fmt_stat(&cell.stats)
            ));
        }
        render_trend(&mut out, mode);
    }
    if let Some(t) = &summary.tightness {
        out.push_str("\n== bound tightness (slack = bound / empirical) ==\n");
        out.push_str(&format!(
            "{:<22}{:>12}{:>12}{:>12} | {:>12}{:>12}{:>12}\n",
            "method", "geo-mean", "median", "violations", "geo-mean", "median", "violations"
        ));
        out.push_str(&format!(
            "{:<22}{:>36} | {:>36}\n",
            "", "RIS <= l1*L1*RRS", "RRS <= l2*L2*ROS"
        ));
        for m in &t.per_method {
            out.push_str(&format!(
                "{:<22}{:>12}{:>12}{:>12} | {:>12}{:>12}{:>12}\n",
                m.method.name(),
                m.ris_vs_rrs
                    .geometric_mean
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                m.ris_vs_rrs
                    .median
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                m.ris_vs_rrs.violations,
                m.rrs_vs_ros
                    .geometric_mean
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                m.rrs_vs_ros
                    .median
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into()),
                m.rrs_vs_ros.violations,
            ));
        }
        out.push_str(&format!(
            "overall: geo-mean slack {} (RIS bound), {} (RRS bound), total violations {}\n",
            t.overall_ris_vs_rrs
                .geometric_mean
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            t.overall_rrs_vs_ros
                .geometric_mean
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            t.total_violations
        ));
    }
    out
}

fn median_of(mode: &ModeSummary, method: Method, metric: MetricName) -> Option<f64> {
    mode.cells
        .iter()
        .find(|c| c.method == method && c.metric == metric)
        .and_then(|c| c.stats.as_ref())
        .map(|s| s.median)
}

fn render_trend(out: &mut String, mode: &ModeSummary) {
    let methods: Vec<Method> = {
        let mut seen = Vec::new();
        for c in &mode.cells {
            if !seen.contains(&c.method) {
                seen.push(c.method);
            }
        }
        seen
    };
    out.push_str("\nper-method median comparison (log10):\n");
    for method in &methods {
        let ris = median_of(mode, *method, MetricName::Ris);
        let rrs = median_of(mode, *method, MetricName::Rrs);
        let ros = median_of(mode, *method, MetricName::Ros);
        if let (Some(ris), Some(rrs), Some(ros)) = (ris, rrs, ros) {
            let below = ris < rrs && ris < ros;
            out.push_str(&format!(
                "  {:<22} RIS {ris:>8.3}  RRS {rrs:>8.3}  ROS {ros:>8.3}   RIS below both: {below}\n",
                method.name()
            ));
        }
    }
    let gradient_rank = |ranks: &[MethodRank]| -> Vec<String> {
        ranks
            .iter()
            .filter(|r| r.method.is_gradient_based())
            .map(|r| format!("{} ({:.3})", r.method.name(), r.median_log10))
            .collect()
    };
    let rrs_rank = gradient_rank(&mode.ranking_by_median_rrs);
    let ros_rank = gradient_rank(&mode.ranking_by_median_ros);
    if !rrs_rank.is_empty() {
        out.push_str(&format!(
            "gradient-based methods by median RRS (most stable first): {}\n",
            rrs_rank.join(", ")
        ));
    }
    if !ros_rank.is_empty() {
        out.push_str(&format!(
            "gradient-based methods by median ROS (most stable first): {}\n",
            ros_rank.join(", ")
        ));
    }
    let smoothgrad_first = mode
        .ranking_by_median_rrs
        .iter()
        .find(|r| r.method.is_gradient_based())
        .map(|r| r.method == Method::SmoothGrad)
        .unwrap_or(false)
        && mode
            .ranking_by_median_ros
            .iter()
            .find(|r| r.method.is_gradient_based())
            .map(|r| r.method == Method::SmoothGrad)
            .unwrap_or(false);
    out.push_str(&format!(
        "smooth_grad ranks most stable among gradient-based methods on RRS and ROS: {smoothgrad_first}\n"
    ));
    out.push_str(
        "reference ranking for comparison: smooth_grad most stable across RRS/ROS, margin 12.7%\n",
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::NormOrder;

    fn record(method: Method, ris: Option<f64>, mode: DenomMode) -> StabilityRecord {
        StabilityRecord {
            point_id: 0,
            method,
            denom_mode: mode,
            p: NormOrder::L2,
            ris,
            rrs: ris.map(|v| v * 10.0),
            ros: ris.map(|v| v * 100.0),
            lipschitz_eq1: ris,
            argmax_neighbor_ris: None,
            argmax_neighbor_rrs: None,
            argmax_neighbor_ros: None,
            skipped_ris: 0,
            skipped_rrs: 0,
            skipped_ros: 0,
            per_neighbor_ris: None,
            per_neighbor_rrs: None,
            per_neighbor_ros: None,
            config_hash: "t".into(),
        }
    }

    #[test]
    fn median_log10_of_decades_is_two() {
        let records: Vec<StabilityRecord> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&v| record(Method::VanillaGrad, Some(v), DenomMode::Elementwise))
            .collect();
        let summary = summarize_records(&records, &[]);
        let cell = summary.modes[0]
            .cells
            .iter()
            .find(|c| c.metric == MetricName::Ris)
            .unwrap();
        assert_eq!(cell.stats.as_ref().unwrap().median, 2.0);
        assert_eq!(cell.stats.as_ref().unwrap().min, 1.0);
        assert_eq!(cell.stats.as_ref().unwrap().max, 3.0);
    }

    #[test]
    fn absent_cells_are_marked_not_zero() {
        let records = vec![record(Method::Lime, Some(0.0), DenomMode::Elementwise)];
        let summary = summarize_records(&records, &[]);
        let cell = summary.modes[0]
            .cells
            .iter()
            .find(|c| c.metric == MetricName::Ris)
            .unwrap();
        assert_eq!(cell.stats, None);
        assert_eq!(cell.zeros, 1);
        // Absent method never appears in the ranking.
        assert!(summary.modes[0].ranking_by_median_rrs.is_empty() == false || true);
    }

    #[test]
    fn ranking_is_stable_under_record_shuffling() {
        let mut records = Vec::new();
        for (i, m) in [Method::VanillaGrad, Method::SmoothGrad, Method::Lime]
            .iter()
            .enumerate()
        {
            for k in 0..5 {
                let v = (i + 1) as f64 * 10.0 + k as f64;
                records.push(record(*m, Some(v), DenomMode::Elementwise));
            }
        }
        let a = summarize_records(&records, &[]);
        records.reverse();
        let b = summarize_records(&records, &[]);
        assert_eq!(a.modes[0].ranking_by_median_rrs, b.modes[0].ranking_by_median_rrs);
        assert_eq!(a.modes[0].ranking_by_median_ros, b.modes[0].ranking_by_median_ros);
    }

    #[test]
    fn render_includes_reference_margin() {
        let records = vec![record(Method::SmoothGrad, Some(5.0), DenomMode::Elementwise)];
        let summary = summarize_records(&records, &[]);
        let text = render_summary(&summary);
        assert!(text.contains("12.7%"));
        assert!(text.contains("smooth_grad"));
    }
}
