//! Joins block metrics from several runs into tables and line charts.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

const REQUIRED: [&str; 4] = ["block_index", "mean_reward", "mean_steps", "collision_rate"];
const METRICS: [(&str, &str); 2] = [("mean_reward", "Average reward per episode"), ("mean_steps", "Average steps per episode")];
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub block_index: usize,
    pub mean_reward: f64,
    pub mean_steps: f64,
    pub collision_rate: f64,
}

impl BlockRow {
    fn metric(&self, name: &str) -> f64 {
        match name {
            "mean_reward" => self.mean_reward,
            "mean_steps" => self.mean_steps,
            _ => self.collision_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunBlocks {
    /// Column label: `<strategy>_s<seed>` from the manifest, else the directory name.
    pub label: String,
    pub dir: PathBuf,
    pub blocks: Vec<BlockRow>,
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

fn manifest_label(dir: &Path) -> Option<String> {
    let text = fs::read_to_string(dir.join("manifest.txt")).ok()?;
    let field = |key: &str| {
        text.lines()
            .take_while(|l| !l.starts_with('['))
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
    };
    Some(format!("{}_s{}", field("strategy")?, field("seed")?))
}

/// Reads `<dir>/blocks.csv`, checking its header.
pub fn read_blocks_csv(dir: &Path) -> anyhow::Result<RunBlocks> {
    let path = dir.join("blocks.csv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    if header.len() < REQUIRED.len() || header[..REQUIRED.len()] != REQUIRED {
        bail!("{}: expected header starting with {}", path.display(), REQUIRED.join(","));
    }
    let mut blocks = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != header.len() {
            bail!("{}: line {} has {} fields, header has {}", path.display(), i + 2, cols.len(), header.len());
        }
        let num = |j: usize| -> anyhow::Result<f64> {
            cols[j].parse::<f64>().with_context(|| format!("{}: line {}: bad {}", path.display(), i + 2, header[j]))
        };
        let block_index = cols[0]
            .parse::<usize>()
            .with_context(|| format!("{}: line {}: bad block_index", path.display(), i + 2))?;
        blocks.push(BlockRow { block_index, mean_reward: num(1)?, mean_steps: num(2)?, collision_rate: num(3)? });
    }
    let label = manifest_label(dir).unwrap_or_else(|| dir_name(dir));
    Ok(RunBlocks { label, dir: dir.to_path_buf(), blocks })
}

fn labels(runs: &[RunBlocks]) -> Vec<String> {
    let mut seen = HashSet::new();
    let unique = runs.iter().all(|r| seen.insert(r.label.clone()));
    if unique {
        return runs.iter().map(|r| r.label.clone()).collect();
    }
    runs.iter().enumerate().map(|(i, r)| format!("{}_{}", dir_name(&r.dir), i)).collect()
}

fn value(run: &RunBlocks, block: usize, metric: &str) -> Option<f64> {
    run.blocks.iter().find(|b| b.block_index == block).map(|b| b.metric(metric))
}

fn block_indices(runs: &[RunBlocks]) -> Vec<usize> {
    let mut idx: Vec<usize> = runs.iter().flat_map(|r| r.blocks.iter().map(|b| b.block_index)).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Joined CSV: one row per block, one column per run for each metric.
pub fn comparison_csv(runs: &[RunBlocks]) -> String {
    let labels = labels(runs);
    let mut s = String::from("block_index");
    for (m, _) in METRICS {
        for l in &labels {
            let _ = write!(s, ",{l}_{m}");
        }
    }
    s.push('\n');
    for b in block_indices(runs) {
        let _ = write!(s, "{b}");
        for (m, _) in METRICS {
            for r in runs {
                s.push(',');
                if let Some(v) = value(r, b, m) {
                    let _ = write!(s, "{v}");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Chart data for one metric: `block_index,<run>,<run>,...`.
pub fn metric_csv(runs: &[RunBlocks], metric: &str) -> String {
    let mut s = String::from("block_index");
    for l in labels(runs) {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for b in block_indices(runs) {
        let _ = write!(s, "{b}");
        for r in runs {
            s.push(',');
            if let Some(v) = value(r, b, metric) {
                let _ = write!(s, "{v}");
            }
        }
        s.push('\n');
    }
    s
}

/// Line chart with one polyline per run; x is the block number (1-based).
pub fn metric_svg(runs: &[RunBlocks], metric: &str, title: &str) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 420.0, 70.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let blocks = block_indices(runs);
    let xmax = blocks.last().map_or(1.0, |&b| (b + 1) as f64).max(2.0);
    let vals: Vec<f64> = runs.iter().flat_map(|r| r.blocks.iter().map(|b| b.metric(metric))).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let px = |x: f64| left + (x - 1.0) / (xmax - 1.0) * pw;
    let py = |y: f64| top + (hi - y) / (hi - lo) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{title}</text>"#, left + pw / 2.0);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="gray"/>"#);
    for i in 0..=4 {
        let y = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.1}</text>"#, left - 6.0, py(y) + 4.0, y);
    }
    for &b in &blocks {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px((b + 1) as f64), top + ph + 18.0, b + 1);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Episode block</text>"#, left + pw / 2.0, h - 10.0);
    for (i, (r, label)) in runs.iter().zip(labels(runs)).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = r
            .blocks
            .iter()
            .filter(|b| b.metric(metric).is_finite())
            .map(|b| format!("{:.2},{:.2}", px((b.block_index + 1) as f64), py(b.metric(metric))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - right + 12.0, w - right + 32.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, w - right + 38.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `comparison.csv` plus a CSV and an SVG per metric into `out`;
/// returns the written paths.
pub fn compare_runs(runs: &[RunBlocks], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if runs.is_empty() {
        bail!("nothing to compare");
    }
    let mut files = vec![(out.join("comparison.csv"), comparison_csv(runs))];
    for (m, title) in METRICS {
        files.push((out.join(format!("{m}.csv")), metric_csv(runs, m)));
        files.push((out.join(format!("{m}.svg")), metric_svg(runs, m, title)));
    }
    for (path, contents) in &files {
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(label: &str, rewards: &[f64]) -> RunBlocks {
        RunBlocks {
            label: label.into(),
            dir: PathBuf::from(label),
            blocks: rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| BlockRow { block_index: i, mean_reward: r, mean_steps: 10.0 * r, collision_rate: 0.5 })
                .collect(),
        }
    }

    #[test]
    fn join_shape() {
        let runs = [run("a", &[1.0, 2.0, 3.0]), run("b", &[4.0, 5.0, 6.0])];
        let csv = comparison_csv(&runs);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "block_index,a_mean_reward,b_mean_reward,a_mean_steps,b_mean_steps");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "1,2,5,20,50");
    }

    #[test]
    fn ragged_runs_leave_blanks() {
        let runs = [run("a", &[1.0]), run("b", &[4.0, 5.0])];
        assert_eq!(metric_csv(&runs, "mean_reward").lines().nth(2), Some("1,,5"));
    }

    #[test]
    fn svg_has_polyline_per_run() {
        let runs = [run("a", &[1.0, 2.0]), run("b", &[4.0, 5.0]), run("c", &[0.0, 0.0])];
        assert_eq!(metric_svg(&runs, "mean_steps", "t").matches("<polyline").count(), 3);
    }

    #[test]
    fn duplicate_labels_fall_back_to_dirs() {
        let mut b = run("a", &[1.0]);
        b.dir = PathBuf::from("other");
        assert_eq!(labels(&[run("a", &[1.0]), b]), vec!["a_0", "other_1"]);
    }
}
