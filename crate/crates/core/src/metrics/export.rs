//! CSV tables and SVG charts. Output bytes depend only on the inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{nearest_rank, SimReport};
use crate::workload::RequestOutcome;

pub const CSV_HEADER: [&str; 16] = [
    "policy",
    "trace",
    "seed",
    "availability",
    "cost_total",
    "cost_spot",
    "cost_od",
    "cost_relative_to_od",
    "latency_p50_s",
    "latency_p90_s",
    "latency_p99_s",
    "latency_mean_s",
    "failure_rate",
    "requests",
    "preemptions",
    "launch_failures",
];

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn report_fields(r: &SimReport) -> Vec<String> {
    let lat = |f: fn(&crate::metrics::LatencySummary) -> f64| r.latency.as_ref().map(f).map(num).unwrap_or_default();
    vec![
        r.policy.clone(),
        r.trace.clone(),
        r.seed.to_string(),
        num(r.availability),
        num(r.cost_total),
        num(r.cost_spot),
        num(r.cost_od),
        num(r.cost_relative_to_od),
        lat(|l| l.p50),
        lat(|l| l.p90),
        lat(|l| l.p99),
        lat(|l| l.mean),
        num(r.failure_rate),
        r.requests.to_string(),
        r.preemptions.to_string(),
        r.launch_failures.to_string(),
    ]
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// One row per report.
pub fn reports_csv(reports: &[SimReport]) -> String {
    csv_string(&CSV_HEADER, reports.iter().map(report_fields))
}

/// `request_id,status,latency_s,attempts`
pub fn outcomes_csv(outcomes: &[RequestOutcome]) -> String {
    csv_string(
        &["request_id", "status", "latency_s", "attempts"],
        outcomes.iter().map(|o| {
            vec![
                o.id.to_string(),
                o.status.as_str().to_string(),
                num(o.latency_s),
                o.attempts.to_string(),
            ]
        }),
    )
}

/// Per-policy summary across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub policy: String,
    pub runs: usize,
    /// Mean of every numeric run column, in [`CSV_HEADER`] order from
    /// `availability` on; `None` where no run had a value.
    pub means: Vec<Option<f64>>,
    pub availability_p10: f64,
    pub availability_p90: f64,
    pub cost_relative_p10: f64,
    pub cost_relative_p90: f64,
}

fn numeric(r: &SimReport) -> Vec<Option<f64>> {
    let lat = r.latency;
    vec![
        Some(r.availability),
        Some(r.cost_total),
        Some(r.cost_spot),
        Some(r.cost_od),
        Some(r.cost_relative_to_od),
        lat.map(|l| l.p50),
        lat.map(|l| l.p90),
        lat.map(|l| l.p99),
        lat.map(|l| l.mean),
        Some(r.failure_rate),
        Some(r.requests as f64),
        Some(r.preemptions as f64),
        Some(r.launch_failures as f64),
    ]
}

/// Groups reports by policy, keeping first-appearance order.
pub fn aggregate_rows(reports: &[SimReport]) -> Vec<AggregateRow> {
    let mut policies: Vec<&str> = Vec::new();
    for r in reports {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    policies
        .into_iter()
        .map(|p| {
            let group: Vec<&SimReport> = reports.iter().filter(|r| r.policy == p).collect();
            let cols: Vec<Vec<Option<f64>>> = group.iter().map(|r| numeric(r)).collect();
            let means = (0..cols[0].len())
                .map(|j| {
                    let vals: Vec<f64> = cols.iter().filter_map(|c| c[j]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            let sorted = |f: fn(&SimReport) -> f64| {
                let mut v: Vec<f64> = group.iter().map(|r| f(r)).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            let avail = sorted(|r| r.availability);
            let cost = sorted(|r| r.cost_relative_to_od);
            AggregateRow {
                policy: p.to_string(),
                runs: group.len(),
                means,
                availability_p10: nearest_rank(&avail, 10.0),
                availability_p90: nearest_rank(&avail, 90.0),
                cost_relative_p10: nearest_rank(&cost, 10.0),
                cost_relative_p90: nearest_rank(&cost, 90.0),
            }
        })
        .collect()
}

/// Run rows followed by one aggregate row per policy. Aggregate rows carry
/// `mean` in the seed column, column means, and p10/p90 spreads.
pub fn sweep_csv(reports: &[SimReport]) -> String {
    let mut header: Vec<&str> = vec!["row"];
    header.extend(CSV_HEADER);
    header.extend([
        "availability_p10",
        "availability_p90",
        "cost_relative_p10",
        "cost_relative_p90",
    ]);
    let runs = reports.iter().map(|r| {
        let mut row = vec!["run".to_string()];
        row.extend(report_fields(r));
        row.extend(std::iter::repeat_n(String::new(), 4));
        row
    });
    let aggs = aggregate_rows(reports).into_iter().map(|a| {
        let trace = reports
            .iter()
            .find(|r| r.policy == a.policy)
            .map(|r| r.trace.clone())
            .unwrap_or_default();
        let mut row = vec!["aggregate".to_string(), a.policy.clone(), trace, "mean".into()];
        row.extend(a.means.iter().map(|m| m.map(num).unwrap_or_default()));
        row.extend([
            num(a.availability_p10),
            num(a.availability_p90),
            num(a.cost_relative_p10),
            num(a.cost_relative_p90),
        ]);
        row
    });
    csv_string(&header, runs.chain(aggs).collect::<Vec<_>>())
}

const W: f64 = 640.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333333"/>"##,
        H - PAD,
        W - PAD / 2.0,
        H - PAD
    );
    let _ = writeln!(
        out,
        r##"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{:.2}" stroke="#333333"/>"##,
        H - PAD
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_label(out: &mut String, max: f64) {
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{max:.2}</text>"#,
        PAD - 4.0,
        PAD + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">0</text>"#,
        PAD - 4.0,
        H - PAD + 4.0
    );
}

fn step_path(series: &[u32], max: f64) -> String {
    let n = series.len().max(1) as f64;
    let x = |t: usize| PAD + (W - 1.5 * PAD) * t as f64 / n;
    let y = |v: u32| H - PAD - (H - 2.0 * PAD) * f64::from(v) / max;
    let mut d = String::new();
    for (t, &v) in series.iter().enumerate() {
        let cmd = if t == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd}{:.2},{:.2} L{:.2},{:.2} ", x(t), y(v), x(t + 1), y(v));
    }
    d.trim_end().to_string()
}

/// Ready replicas over time as a step plot, with the target dashed.
pub fn ready_svg(report: &SimReport) -> String {
    let max = report
        .ready_series
        .iter()
        .chain(&report.n_tar_series)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let mut out = String::new();
    svg_open(&mut out, &format!("ready replicas: {} (seed {})", report.policy, report.seed));
    y_label(&mut out, max);
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#999999" stroke-dasharray="4 3"/>"##,
        step_path(&report.n_tar_series, max)
    );
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        step_path(&report.ready_series, max)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">tick</text>"#,
        W / 2.0,
        H - PAD / 3.0
    );
    out.push_str("</svg>\n");
    out
}

/// Stacked spot / on-demand cost bars relative to the all-on-demand cost.
pub fn cost_svg(reports: &[SimReport]) -> String {
    let mut out = String::new();
    svg_open(&mut out, "cost relative to on-demand");
    let max = reports
        .iter()
        .map(|r| r.cost_relative_to_od)
        .fold(1.0, f64::max);
    y_label(&mut out, max);
    let slot = (W - 1.5 * PAD) / reports.len().max(1) as f64;
    let plot_h = H - 2.0 * PAD;
    for (i, r) in reports.iter().enumerate() {
        let x = PAD + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let share = if r.cost_total > 0.0 {
            r.cost_spot / r.cost_total
        } else {
            0.0
        };
        let total_h = plot_h * r.cost_relative_to_od / max;
        let spot_h = total_h * share;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#2ca02c"/>"##,
            H - PAD - spot_h,
            spot_h
        );
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#d62728"/>"##,
            H - PAD - total_h,
            total_h - spot_h
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            H - PAD + 14.0,
            escape(&format!("{}/{}", r.policy, r.seed))
        );
    }
    out.push_str("</svg>\n");
    out
}

/// p50 / p90 / p99 latency markers per report on a shared axis.
pub fn latency_svg(reports: &[SimReport]) -> String {
    let mut out = String::new();
    svg_open(&mut out, "request latency (s): p50 box, p90 whisker, p99 dot");
    let max = reports
        .iter()
        .filter_map(|r| r.latency.map(|l| l.p99))
        .fold(1.0, f64::max);
    y_label(&mut out, max);
    let slot = (W - 1.5 * PAD) / reports.len().max(1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / max;
    for (i, r) in reports.iter().enumerate() {
        let cx = PAD + slot * (i as f64 + 0.5);
        if let Some(l) = r.latency {
            let _ = writeln!(
                out,
                r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333333"/>"##,
                y(l.p50),
                y(l.p90)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4"/>"##,
                cx - slot * 0.2,
                y(l.p50),
                slot * 0.4,
                H - PAD - y(l.p50)
            );
            let _ = writeln!(
                out,
                r##"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="#d62728"/>"##,
                y(l.p99)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            H - PAD + 14.0,
            escape(&format!("{}/{}", r.policy, r.seed))
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `reports.csv`, `cost.svg`, `latency.svg` and one
/// `ready_<policy>_<seed>.svg` per report into `dir`.
pub fn export_reports(dir: &Path, reports: &[SimReport]) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        (dir.join("reports.csv"), reports_csv(reports)),
        (dir.join("cost.svg"), cost_svg(reports)),
        (dir.join("latency.svg"), latency_svg(reports)),
    ];
    for r in reports {
        files.push((
            dir.join(format!("ready_{}_{}.svg", r.policy, r.seed)),
            ready_svg(r),
        ));
    }
    for (p, c) in &files {
        write_file(p, c)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
