//! Result rows, CSV and summary rendering.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const CSV_HEADER: &str = "preset,consensus,J_heat,K,H,seed,metric,value";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub preset: String,
    pub consensus: String,
    #[serde(rename = "J_heat")]
    pub j_heat: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "H")]
    pub h: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// The non-seed part of a row's key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub preset: String,
    pub consensus: String,
    #[serde(rename = "J_heat")]
    pub j_heat: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "H")]
    pub h: f64,
    pub metric: String,
}

impl ResultRow {
    pub fn point(&self) -> Point {
        Point {
            preset: self.preset.clone(),
            consensus: self.consensus.clone(),
            j_heat: self.j_heat,
            k: self.k,
            h: self.h,
            metric: self.metric.clone(),
        }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.preset
            .cmp(&other.preset)
            .then_with(|| self.consensus.cmp(&other.consensus))
            .then_with(|| self.j_heat.cmp(&other.j_heat))
            .then_with(|| self.k.cmp(&other.k))
            .then_with(|| self.h.total_cmp(&other.h))
            .then_with(|| self.metric.cmp(&other.metric))
            .then_with(|| self.seed.cmp(&other.seed))
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(ResultRow::cmp_key);
}

pub fn render_csv(rows: &[ResultRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    #[serde(flatten)]
    pub point: Point,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub best: Option<PointSummary>,
    pub rows: usize,
    pub points: Vec<PointSummary>,
}

/// Per-point means over seeds. Rows must already be sorted.
pub fn point_means(rows: &[ResultRow]) -> Vec<PointSummary> {
    let mut out: Vec<PointSummary> = Vec::new();
    for r in rows {
        let p = r.point();
        match out.last_mut() {
            Some(last) if last.point == p => {
                last.mean += r.value;
                last.n += 1;
            }
            _ => out.push(PointSummary {
                point: p,
                mean: r.value,
                n: 1,
            }),
        }
    }
    for s in &mut out {
        s.mean /= s.n as f64;
    }
    out
}

/// Summary whose `best` entry minimises the mean of `metric` over the points
/// accepted by `eligible`; ties keep the first point in row order.
pub fn summarize(rows: &[ResultRow], metric: &str, eligible: impl Fn(&Point) -> bool) -> Summary {
    let points = point_means(rows);
    let best = points
        .iter()
        .filter(|s| s.point.metric == metric && eligible(&s.point) && !s.mean.is_nan())
        .fold(None::<&PointSummary>, |best, s| match best {
            Some(b) if b.mean <= s.mean => Some(b),
            _ => Some(s),
        })
        .cloned();
    Summary {
        best,
        rows: rows.len(),
        points,
    }
}

/// Everything a command produces, keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(PathBuf, String)>,
    /// Lines for standard output.
    pub report: Vec<String>,
    pub failed: bool,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<PathBuf>, contents: String) {
        self.files.push((path.into(), contents));
    }

    pub fn write_to(&self, dir: &Path) -> CliResult<()> {
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        }
        Ok(())
    }
}

pub fn results_artifacts(rows: &[ResultRow], summary: &Summary) -> CliResult<Artifacts> {
    let mut a = Artifacts::default();
    a.add("results.csv", render_csv(rows)?);
    a.add(
        "summary.json",
        serde_json::to_string_pretty(summary).expect("summary serializes") + "\n",
    );
    if let Some(b) = &summary.best {
        a.report.push(format!(
            "best: {} {} J_heat={} K={} H={} {}={}",
            b.point.preset,
            b.point.consensus,
            b.point.j_heat,
            b.point.k,
            b.point.h,
            b.point.metric,
            b.mean
        ));
    }
    a.report.push(format!("rows: {}", rows.len()));
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(preset: &str, seed: u64, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            preset: preset.into(),
            consensus: "mean".into(),
            j_heat: 3,
            k: 2,
            h: 1.0,
            seed,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn header_is_fixed() {
        let text = render_csv(&[row("ACG", 0, "w2", 0.5)]).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "ACG,mean,3,2,1.0,0,w2,0.5");
        assert_eq!(render_csv(&[]).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn sorting_ignores_input_order() {
        let mut a = vec![
            row("Greedy", 1, "w2", 1.0),
            row("ACG", 0, "w2", 2.0),
            row("ACG", 0, "nll", 3.0),
        ];
        let mut b = a.clone();
        b.reverse();
        sort_rows(&mut a);
        sort_rows(&mut b);
        assert_eq!(a, b);
        assert_eq!(a[0].metric, "nll");
    }

    #[test]
    fn best_is_smallest_mean() {
        let mut rows = vec![
            row("ACG", 0, "w2", 0.2),
            row("ACG", 1, "w2", 0.4),
            row("Greedy", 0, "w2", 0.1),
            row("Greedy", 1, "w2", 0.6),
            row("Greedy", 0, "nll", -9.0),
        ];
        sort_rows(&mut rows);
        let s = summarize(&rows, "w2", |_| true);
        assert_eq!(s.rows, 5);
        let best = s.best.unwrap();
        assert_eq!(best.point.preset, "ACG");
        assert!((best.mean - 0.3).abs() < 1e-15);
        assert!(
            summarize(&rows, "w2", |p| p.preset != "ACG")
                .best
                .unwrap()
                .point
                .preset
                == "Greedy"
        );
    }
}
