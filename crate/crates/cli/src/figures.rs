//! Report figures: amplitude heatmaps (PNG), cosine-similarity histogram and
//! CDF (SVG), each with its data as CSV next to it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chanpred::eval::{EvalReport, HeatmapPayload};
use image::{Rgb, RgbImage};
use plotters::prelude::*;

use crate::error::{CliError, CliResult};

/// Pixels per heatmap cell.
const CELL: u32 = 8;
/// White gutter between panels.
const GAP: u32 = 12;
pub const PANELS: [&str; 3] = ["truth", "model", "sample_and_hold"];

/// One `Nt x K` amplitude grid per panel for each receive antenna:
/// `grids[rx][panel][tx][rb]`.
pub fn heatmap_grids(h: &HeatmapPayload) -> Vec<[Vec<Vec<f64>>; 3]> {
    let planes = [&h.truth, &h.model, &h.sample_and_hold];
    (0..h.n_rx)
        .map(|r| {
            planes.map(|p| {
                (0..h.n_tx)
                    .map(|t| {
                        let at = (r * h.n_tx + t) * h.n_subbands;
                        p[at..at + h.n_subbands].to_vec()
                    })
                    .collect()
            })
        })
        .collect()
}

fn grid_csv(grid: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn write(path: &Path, contents: &[u8]) -> CliResult<()> {
    chanpred::dataset::write_atomic(path, contents).map_err(CliError::from)
}

/// Writes `heatmap_rx{r}.png` (truth, model and sample-and-hold side by
/// side, transmit antennas down, resource blocks across, one colour scale
/// per antenna) and `heatmap_rx{r}_{panel}.csv`.
pub fn write_heatmaps(h: &HeatmapPayload, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let (w, hgt) = (h.n_subbands as u32 * CELL, h.n_tx as u32 * CELL);
    for (r, panels) in heatmap_grids(h).iter().enumerate() {
        let peak = panels
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(0.0, f64::max);
        let mut img = RgbImage::from_pixel(3 * w + 2 * GAP, hgt, Rgb([255, 255, 255]));
        for (p, grid) in panels.iter().enumerate() {
            let x0 = p as u32 * (w + GAP);
            for (t, row) in grid.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let c = colorous::VIRIDIS.eval_continuous(if peak > 0.0 { v / peak } else { 0.0 });
                    for dy in 0..CELL {
                        for dx in 0..CELL {
                            img.put_pixel(x0 + k as u32 * CELL + dx, t as u32 * CELL + dy, Rgb([c.r, c.g, c.b]));
                        }
                    }
                }
            }
            let csv = dir.join(format!("heatmap_rx{r}_{}.csv", PANELS[p]));
            write(&csv, grid_csv(grid).as_bytes())?;
            out.push(csv);
        }
        let png = dir.join(format!("heatmap_rx{r}.png"));
        let mut bytes = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|e| CliError::Plot(e.to_string()))?;
        write(&png, &bytes)?;
        out.push(png);
    }
    Ok(out)
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

/// Model vs sample-and-hold histogram of per-sample mean cosine similarity.
pub fn write_histogram(report: &EvalReport, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let (m, s) = (&report.model.rho_histogram, &report.sample_and_hold.rho_histogram);
    let mut csv = String::from("bin_low,bin_high,model,sample_and_hold\n");
    for i in 0..m.counts.len() {
        writeln!(csv, "{},{},{},{}", m.edges[i], m.edges[i + 1], m.counts[i], s.counts[i]).unwrap();
    }
    let csv_path = dir.join("rho_histogram.csv");
    write(&csv_path, csv.as_bytes())?;

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 460)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let top = m.counts.iter().chain(&s.counts).copied().max().unwrap_or(1).max(1) as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption("Cosine similarity histogram", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0f64..1f64, 0f64..top * 1.05)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("cosine similarity")
            .y_desc("samples")
            .draw()
            .map_err(plot_err)?;
        for (counts, colour, shift, label) in [(&m.counts, BLUE, 0.0, report.model_name.as_str()), (&s.counts, RED, 0.5, "sample and hold")] {
            let bars = counts.iter().enumerate().map(|(i, &c)| {
                let (lo, hi) = (m.edges[i], m.edges[i + 1]);
                let x0 = lo + (hi - lo) * (0.05 + shift * 0.9);
                let x1 = x0 + (hi - lo) * 0.45;
                Rectangle::new([(x0, 0.0), (x1, c as f64)], colour.mix(0.7).filled())
            });
            chart
                .draw_series(bars)
                .map_err(plot_err)?
                .label(label)
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], colour.filled()));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let svg_path = dir.join("rho_histogram.svg");
    write(&svg_path, svg.as_bytes())?;
    Ok(vec![svg_path, csv_path])
}

/// Empirical CDFs of per-sample mean cosine similarity for every run, model
/// and sample-and-hold.
pub fn write_cdf(runs: &[(String, EvalReport)], dir: &Path) -> CliResult<Vec<PathBuf>> {
    let first = &runs.first().ok_or_else(|| CliError::Missing("no reports to plot".into()))?.1;
    let grid = &first.model.rho_cdf.grid;
    let mut curves: Vec<(String, &[f64])> = Vec::new();
    for (label, r) in runs {
        if r.model.rho_cdf.grid != *grid {
            return Err(CliError::Plot(format!("report `{label}` uses a different CDF grid")));
        }
        curves.push((format!("{label} model"), &r.model.rho_cdf.values));
        curves.push((format!("{label} sample and hold"), &r.sample_and_hold.rho_cdf.values));
    }

    let mut csv = String::from("rho");
    for (name, _) in &curves {
        write!(csv, ",{}", name.replace(',', ";")).unwrap();
    }
    csv.push('\n');
    for (i, g) in grid.iter().enumerate() {
        write!(csv, "{g}").unwrap();
        for (_, v) in &curves {
            write!(csv, ",{}", v[i]).unwrap();
        }
        csv.push('\n');
    }
    let csv_path = dir.join("rho_cdf.csv");
    write(&csv_path, csv.as_bytes())?;

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 460)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Cosine similarity CDF", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0f64..1f64, 0f64..1f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("cosine similarity")
            .y_desc("CDF")
            .draw()
            .map_err(plot_err)?;
        for (i, (name, values)) in curves.iter().enumerate() {
            let colour = Palette99::pick(i / 2).to_rgba();
            let style = if i % 2 == 0 {
                colour.stroke_width(2)
            } else {
                colour.stroke_width(1)
            };
            chart
                .draw_series(LineSeries::new(grid.iter().copied().zip(values.iter().copied()), style))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], style));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let svg_path = dir.join("rho_cdf.svg");
    write(&svg_path, svg.as_bytes())?;
    Ok(vec![svg_path, csv_path])
}

/// Reads a report written by `evaluate`.
pub fn read_report(path: &Path) -> CliResult<EvalReport> {
    if !path.exists() {
        return Err(CliError::Missing(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(EvalReport::from_json(&text)?)
}
