//! CSV and text reports under a run directory, plus optional SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use kvswarm_core::sim::{summarize, Mode, RunSummary, StepMetrics};

use crate::experiment::Point;

pub const STEP_HEADER: [&str; 7] = [
    "step",
    "io_time_us",
    "io_volume_bytes",
    "max_device_entries",
    "min_device_entries",
    "cache_hits",
    "effective_bw_bytes_per_s",
];

pub const COMPARISON_HEADER: [&str; 12] = [
    "sparsity",
    "disks",
    "mode",
    "mean_io_time_us",
    "p99_io_time_us",
    "total_io_volume_bytes",
    "effective_bw_bytes_per_s",
    "cache_hit_rate",
    "assigned_entries",
    "io_time_vs_swarm",
    "volume_vs_swarm",
    "bandwidth_vs_swarm",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {msg}")]
    Content { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub fn stamp(hash: &str) -> String {
    format!("kvswarm 1 config={hash}")
}

fn sparsity_label(s: Option<f64>) -> String {
    s.map_or("-".into(), |s| s.to_string())
}

/// File name for one run. A single point keeps the bare mode name.
pub fn run_file_name(p: &Point, single_point: bool) -> String {
    if single_point {
        format!("{}.csv", p.mode.name())
    } else {
        format!(
            "s{}-d{}-{}.csv",
            sparsity_label(p.sparsity),
            p.disks,
            p.mode.name()
        )
    }
}

fn with_comment(path: &Path, hash: &str) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# {}", stamp(hash))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_steps(path: &Path, hash: &str, steps: &[StepMetrics]) -> Result<()> {
    let mut w = with_comment(path, hash)?;
    w.write_record(STEP_HEADER)?;
    for m in steps {
        w.write_record([
            m.step.to_string(),
            m.io_time_us.to_string(),
            m.io_volume_bytes.to_string(),
            m.max_device_entries().to_string(),
            m.min_device_entries().to_string(),
            m.cache_hits.to_string(),
            m.effective_bandwidth.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn ratio(a: f64, b: f64) -> String {
    if b == 0.0 {
        "-".into()
    } else {
        (a / b).to_string()
    }
}

/// One row per point; ratios compare against swarm at the same sparsity and
/// device count.
pub fn write_comparison(path: &Path, hash: &str, points: &[Point]) -> Result<()> {
    let mut w = with_comment(path, hash)?;
    w.write_record(COMPARISON_HEADER)?;
    for p in points {
        let s = &p.output.summary;
        let base = points
            .iter()
            .find(|q| q.mode == Mode::Swarm && q.disks == p.disks && q.sparsity == p.sparsity)
            .map(|q| &q.output.summary);
        let (t, v, b) = match base {
            Some(b) => (
                ratio(s.mean_io_time_us, b.mean_io_time_us),
                ratio(
                    s.total_io_volume_bytes as f64,
                    b.total_io_volume_bytes as f64,
                ),
                ratio(s.effective_bandwidth, b.effective_bandwidth),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        w.write_record([
            sparsity_label(p.sparsity),
            p.disks.to_string(),
            p.mode.name().to_string(),
            s.mean_io_time_us.to_string(),
            s.p99_io_time_us.to_string(),
            s.total_io_volume_bytes.to_string(),
            s.effective_bandwidth.to_string(),
            s.cache_hit_rate.to_string(),
            p.output.assigned.to_string(),
            t,
            v,
            b,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn summary_block(out: &mut String, title: &str, s: &RunSummary) {
    writeln!(out, "run {title} {{").unwrap();
    for (k, v) in [
        ("steps", s.steps.to_string()),
        ("mean_io_time_us", s.mean_io_time_us.to_string()),
        ("p50_io_time_us", s.p50_io_time_us.to_string()),
        ("p99_io_time_us", s.p99_io_time_us.to_string()),
        ("max_io_time_us", s.max_io_time_us.to_string()),
        ("total_io_volume_bytes", s.total_io_volume_bytes.to_string()),
        (
            "effective_bw_bytes_per_s",
            s.effective_bandwidth.to_string(),
        ),
        (
            "mean_step_bw_bytes_per_s",
            s.mean_effective_bandwidth.to_string(),
        ),
        ("cache_hit_rate", s.cache_hit_rate.to_string()),
    ] {
        writeln!(out, "  {k} = {v}").unwrap();
    }
    out.push_str("}\n");
}

pub fn summary_text(hash: &str, points: &[Point]) -> String {
    let mut out = format!("# {}\n", stamp(hash));
    for p in points {
        let title = format!(
            "sparsity={} disks={} mode={}",
            sparsity_label(p.sparsity),
            p.disks,
            p.mode.name()
        );
        summary_block(&mut out, &title, &p.output.summary);
    }
    out
}

/// Writes every per-run CSV, `comparison.csv` and `summary.txt`.
pub fn write_run(dir: &Path, hash: &str, points: &[Point]) -> Result<Vec<PathBuf>> {
    let single = points
        .iter()
        .all(|p| p.disks == points[0].disks && p.sparsity == points[0].sparsity);
    let mut files = Vec::new();
    for p in points {
        let path = dir.join(run_file_name(p, single));
        write_steps(&path, hash, &p.output.steps)?;
        files.push(path);
    }
    let cmp = dir.join("comparison.csv");
    write_comparison(&cmp, hash, points)?;
    files.push(cmp);
    let sum = dir.join("summary.txt");
    fs::write(&sum, summary_text(hash, points))?;
    files.push(sum);
    Ok(files)
}

/// Per-step rows read back from a run CSV.
pub fn read_steps(path: &Path) -> Result<Vec<StepMetrics>> {
    let err = |msg: String| ReportError::Content {
        path: path.to_path_buf(),
        msg,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    if r.headers()?.iter().ne(STEP_HEADER) {
        return Err(err("not a per-step report".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| err(format!("bad number `{}`", &rec[i])))
        };
        let (max, min) = (f(3)? as usize, f(4)? as usize);
        out.push(StepMetrics {
            step: f(0)? as usize,
            io_time_us: f(1)?,
            io_volume_bytes: f(2)? as u64,
            // only the extremes survive the CSV
            per_device_entries: if max == min {
                vec![max]
            } else {
                vec![max, min]
            },
            cache_hits: f(5)? as usize,
            cluster_accesses: 0,
            effective_bandwidth: f(6)?,
            unique_entries: 0,
        });
    }
    Ok(out)
}

/// Per-step CSVs in a run directory, sorted by name.
pub fn run_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "csv")
            && p.file_name().is_some_and(|n| n != "comparison.csv")
        {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Re-summarizes the per-step CSVs of a finished run.
pub fn report_dir(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let csvs = run_csvs(dir)?;
    if csvs.is_empty() {
        return Err(ReportError::Content {
            path: dir.to_path_buf(),
            msg: "no per-step CSV files".into(),
        });
    }
    for p in csvs {
        let steps = read_steps(&p)?;
        let mut s = summarize(&steps);
        // hit counts per access are not in the CSV
        s.cache_hit_rate = 0.0;
        let name = p
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        summary_block(&mut out, &name, &s);
    }
    Ok(out)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Line chart of io_time per step, one series per CSV.
pub fn line_chart(series: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let n = series
        .iter()
        .map(|(_, v)| v.len())
        .max()
        .unwrap_or(0)
        .max(2);
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <text x=\"{pad}\" y=\"20\" font-size=\"12\">io_time_us per step (max {ymax:.1})</text>\n"
    );
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let x = pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
                let y = h - pad - (h - 2.0 * pad) * y / ymax;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            w - 160.0,
            36.0 + 14.0 * k as f64
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of one value per label.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let ymax = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-9);
    let slot = (w - 2.0 * pad) / bars.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <text x=\"{pad}\" y=\"20\" font-size=\"12\">{title}</text>\n"
    );
    for (k, (name, v)) in bars.iter().enumerate() {
        let bh = (h - 2.0 * pad) * v / ymax;
        let x = pad + slot * k as f64;
        writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>",
            x + slot * 0.1,
            h - pad - bh,
            slot * 0.8,
            PALETTE[k % PALETTE.len()]
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"10\">{name}</text>",
            x + slot * 0.1,
            h - pad + 14.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// `io_time.svg` and `mean_io_time.svg` from the per-step CSVs in `dir`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut series = Vec::new();
    for p in run_csvs(dir)? {
        let steps = read_steps(&p)?;
        let name = p
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        series.push((name, steps.iter().map(|m| m.io_time_us).collect::<Vec<_>>()));
    }
    let bars: Vec<(String, f64)> = series
        .iter()
        .map(|(n, v)| (n.clone(), v.iter().sum::<f64>() / v.len().max(1) as f64))
        .collect();
    let a = dir.join("io_time.svg");
    fs::write(&a, line_chart(&series))?;
    let b = dir.join("mean_io_time.svg");
    fs::write(&b, bar_chart("mean io_time_us", &bars))?;
    Ok(vec![a, b])
}
