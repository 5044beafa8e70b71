//! Log-log convergence plots from a results CSV: median across
//! replications per optimizer, with the interquartile band.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub samples_seen: u64,
    pub median: f64,
    /// `(q25, q75)`; absent with a single replication.
    pub band: Option<(f64, f64)>,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub optimizer: String,
    pub points: Vec<SeriesPoint>,
}

/// Groups `metric` by optimizer and `samples_seen`. Empty or non-finite
/// cells are skipped.
pub fn summarize(csv_path: &Path, metric: &str) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["optimizer", "samples_seen", metric];
    let missing: Vec<String> = required
        .iter()
        .filter(|c| col(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let (ci, cs, cm) = (
        col("optimizer").unwrap(),
        col("samples_seen").unwrap(),
        col(metric).unwrap(),
    );
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut rows = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows += 1;
        let line = k + 2;
        let samples: u64 = rec[cs].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad samples_seen {:?}", &rec[cs]),
        })?;
        let cell = rec[cm].trim();
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad {metric} value {cell:?}"),
        })?;
        if v.is_finite() {
            groups
                .entry(rec[ci].to_owned())
                .or_default()
                .entry(samples)
                .or_default()
                .push(v);
        }
    }
    if rows == 0 {
        return Err(Error::Empty(format!("{} has no data rows", csv_path.display())));
    }
    Ok(groups
        .into_iter()
        .map(|(optimizer, by_n)| Series {
            optimizer,
            points: by_n
                .into_iter()
                .map(|(samples_seen, mut vals)| {
                    vals.sort_by(f64::total_cmp);
                    SeriesPoint {
                        samples_seen,
                        median: quantile_sorted(&vals, 0.5),
                        band: (vals.len() > 1)
                            .then(|| (quantile_sorted(&vals, 0.25), quantile_sorted(&vals, 0.75))),
                        replications: vals.len(),
                    }
                })
                .collect(),
        })
        .collect())
}

fn plot_error<E: std::fmt::Debug>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plot rendering failed: {e:?}")))
}

/// Writes `<out_dir>/<csv stem>_<metric>.svg` and returns its path together
/// with the plotted series. Non-positive values are dropped from the log
/// axes.
pub fn emit_plots(csv_path: &Path, metric: &str, out_dir: &Path) -> Result<(PathBuf, Vec<Series>)> {
    let series = summarize(csv_path, metric)?;
    let positive = |v: f64| v > 0.0;
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &series {
        for p in &s.points {
            let x = p.samples_seen as f64;
            if x <= 0.0 {
                continue;
            }
            let (lo, hi) = p.band.unwrap_or((p.median, p.median));
            for y in [lo, p.median, hi] {
                if positive(y) {
                    xr = (xr.0.min(x), xr.1.max(x));
                    yr = (yr.0.min(y), yr.1.max(y));
                }
            }
        }
    }
    if !xr.0.is_finite() || !yr.0.is_finite() {
        return Err(Error::Empty(format!("no positive {metric} values to plot")));
    }
    if xr.0 == xr.1 {
        xr = (xr.0 / 2.0, xr.1 * 2.0);
    }
    if yr.0 == yr.1 {
        yr = (yr.0 / 2.0, yr.1 * 2.0);
    }

    std::fs::create_dir_all(out_dir)?;
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    let path = out_dir.join(format!("{stem}_{metric}.svg"));
    {
        let root = SVGBackend::new(&path, (900, 600)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{metric} vs samples"), ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d((xr.0..xr.1).log_scale(), (yr.0..yr.1).log_scale())
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("samples seen")
            .y_desc(metric)
            .draw()
            .map_err(plot_error)?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let band: Vec<(f64, f64, f64)> = s
                .points
                .iter()
                .filter_map(|p| {
                    let (lo, hi) = p.band?;
                    (p.samples_seen > 0 && positive(lo)).then_some((p.samples_seen as f64, lo, hi))
                })
                .collect();
            if band.len() > 1 {
                let polygon: Vec<(f64, f64)> = band
                    .iter()
                    .map(|&(x, _, hi)| (x, hi))
                    .chain(band.iter().rev().map(|&(x, lo, _)| (x, lo)))
                    .collect();
                chart
                    .draw_series(std::iter::once(Polygon::new(polygon, color.mix(0.2).filled())))
                    .map_err(plot_error)?;
            }
            let line: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|p| p.samples_seen > 0 && positive(p.median))
                .map(|p| (p.samples_seen as f64, p.median))
                .collect();
            chart
                .draw_series(LineSeries::new(line, color.stroke_width(2)))
                .map_err(plot_error)?
                .label(s.optimizer.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    Ok((path, series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&[7.0], 0.75), 7.0);
    }
}
