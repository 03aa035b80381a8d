//! Plot-data emission: per-class series and spectra as CSV, with optional
//! self-contained SVG line plots.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use inkwell_core::model::FaultVariant;
use inkwell_core::sim::{LabeledDataset, Signal};
use inkwell_core::spectrum::magnitude_spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// One representative time series per class.
    Signals,
    /// Same as `signals`; named for residual datasets.
    Residuals,
    /// Per-class mean magnitude spectrum.
    Spectra,
}

/// Writes the plot data for `dataset` into `out_dir` and returns the CSV
/// path. Series are grouped by class; an empty dataset yields a header-only
/// file.
pub fn emit_plot_data(
    kind: PlotKind,
    dataset: &LabeledDataset,
    out_dir: &Path,
    svg: bool,
) -> anyhow::Result<std::path::PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let (file, x_name, y_name) = match kind {
        PlotKind::Signals => ("signals.csv", "t", "value"),
        PlotKind::Residuals => ("residuals.csv", "t", "value"),
        PlotKind::Spectra => ("spectra.csv", "frequency", "magnitude"),
    };
    let csv_path = out_dir.join(file);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(w, "class,{x_name},{y_name}")?;

    let series = collect_series(kind, dataset);
    for (class, points) in &series {
        for (x, y) in points {
            writeln!(w, "{class},{x},{y}")?;
        }
    }
    w.flush()?;

    if svg {
        for (class, points) in &series {
            let svg_path = out_dir.join(format!("{class}.svg"));
            std::fs::write(&svg_path, line_plot_svg(&format!("{class}"), points))?;
        }
    }
    Ok(csv_path)
}

fn collect_series(
    kind: PlotKind,
    dataset: &LabeledDataset,
) -> BTreeMap<FaultVariant, Vec<(f64, f64)>> {
    let mut series = BTreeMap::new();
    for class in FaultVariant::ALL {
        let members: Vec<&Signal> = dataset.of_class(class).collect();
        if members.is_empty() {
            continue;
        }
        let points = match kind {
            PlotKind::Signals | PlotKind::Residuals => {
                // A representative example: the first signal of the class.
                let s = members[0];
                s.samples
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (s.t_a + k as f64 * s.dt, *v))
                    .collect()
            }
            PlotKind::Spectra => {
                let mut mean: Vec<(f64, f64)> = magnitude_spectrum(members[0]);
                for s in &members[1..] {
                    for (acc, (_, m)) in mean.iter_mut().zip(magnitude_spectrum(s)) {
                        acc.1 += m;
                    }
                }
                let n = members.len() as f64;
                mean.iter_mut().for_each(|p| p.1 /= n);
                mean
            }
        };
        series.insert(class, points);
    }
    series
}

/// Minimal self-contained SVG polyline plot.
fn line_plot_svg(title: &str, points: &[(f64, f64)]) -> String {
    let (width, height, margin) = (800.0f64, 400.0f64, 40.0f64);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !(x_min.is_finite() && y_min.is_finite()) || points.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let sx = (width - 2.0 * margin) / (x_max - x_min);
    let sy = (height - 2.0 * margin) / (y_max - y_min);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            format!(
                "{:.2},{:.2}",
                margin + (x - x_min) * sx,
                height - margin - (y - y_min) * sy
            )
        })
        .collect();
    format!(
        concat!(
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "##,
            r##"viewBox="0 0 {w} {h}">"##,
            r##"<rect width="{w}" height="{h}" fill="white"/>"##,
            r##"<text x="{tx}" y="24" font-family="sans-serif" font-size="16">{title}</text>"##,
            r##"<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1"/>"##,
            r##"</svg>"##,
            "\n"
        ),
        w = width,
        h = height,
        tx = margin,
        title = title,
        points = path.join(" ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use inkwell_core::sim::{generate_dataset, GenerationConfig};

    fn small_dataset() -> LabeledDataset {
        let mut cfg = GenerationConfig::default();
        cfg.counts = FaultVariant::ALL.iter().map(|&v| (v, 2)).collect();
        generate_dataset(&cfg).unwrap()
    }

    #[test]
    fn signals_emit_one_group_per_class() {
        let dir = tempfile::tempdir().unwrap();
        let path =
            emit_plot_data(PlotKind::Signals, &small_dataset(), dir.path(), false).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let classes: std::collections::BTreeSet<&str> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap())
            .collect();
        assert_eq!(classes.len(), 7);
    }

    #[test]
    fn empty_dataset_emits_header_only() {
        let empty = LabeledDataset {
            entries: vec![],
            seed: 0,
            config_digest: String::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot_data(PlotKind::Spectra, &empty, dir.path(), false).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.trim(), "class,frequency,magnitude");
    }

    #[test]
    fn spectra_separate_the_empty_channel_class() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = emit_plot_data(PlotKind::Spectra, &ds, dir.path(), true).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let peak_of = |class: &str| -> f64 {
            text.lines()
                .skip(1)
                .filter(|l| l.starts_with(&format!("{class},")))
                .map(|l| {
                    let mut fields = l.split(',');
                    let f: f64 = fields.nth(1).unwrap().parse().unwrap();
                    let m: f64 = fields.next().unwrap().parse().unwrap();
                    (f, m)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(f, _)| f)
                .unwrap()
        };
        let healthy = peak_of("Healthy");
        let ec = peak_of("EC");
        assert!(
            ec > 1.3 * healthy,
            "EC peak {ec:.3e} Hz vs healthy {healthy:.3e} Hz"
        );
        assert!(dir.path().join("EC.svg").exists());
    }
}
