//! Static SVG plots.

use std::path::Path;

use plotters::prelude::*;

use crate::{Error, Result};

pub(crate) struct Series<'a> {
    name: &'a str,
    points: Vec<(f64, f64)>,
    line: bool,
}

impl<'a> Series<'a> {
    pub(crate) fn line(name: &'a str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name,
            points,
            line: true,
        }
    }

    pub(crate) fn points(name: &'a str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name,
            points,
            line: false,
        }
    }
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, format!("plotting failed: {e}"))
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.1).max(1e-6);
    (lo - pad)..(hi + pad)
}

pub(crate) fn line_plot(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let all = || series.iter().flat_map(|s| s.points.iter());
    let x = padded_range(all().map(|p| p.0));
    let y = padded_range(all().map(|p| p.1));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(x, y)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("lambda")
        .y_desc(y_label)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (k, s) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        if s.line {
            chart
                .draw_series(LineSeries::new(
                    s.points.iter().copied(),
                    color.stroke_width(2),
                ))
                .map_err(|e| plot_err(path, e))?
                .label(s.name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        }
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 4, color.filled())))
            .map_err(|e| plot_err(path, e))?;
        if !s.line {
            chart
                .draw_series(std::iter::empty::<Circle<(f64, f64), i32>>())
                .map_err(|e| plot_err(path, e))?
                .label(s.name)
                .legend(move |(x, y)| Circle::new((x + 7, y), 4, color.filled()));
        }
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// One box per lambda, aggregated over cases.
pub(crate) fn box_plot(path: &Path, title: &str, groups: &[(f64, Vec<f64>)]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let y = padded_range(groups.iter().flat_map(|g| g.1.iter().copied()));
    let labels: Vec<String> = groups.iter().map(|g| g.0.to_string()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(
            (0..groups.len()).into_segmented(),
            y.start as f32..y.end as f32,
        )
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("lambda")
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) | SegmentValue::Exact(i) => {
                labels.get(*i).cloned().unwrap_or_default()
            }
            SegmentValue::Last => String::new(),
        })
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart
        .draw_series(
            groups
                .iter()
                .enumerate()
                .filter(|(_, g)| !g.1.is_empty())
                .map(|(i, g)| {
                    Boxplot::new_vertical(SegmentValue::CenterOf(i), &Quartiles::new(&g.1))
                }),
        )
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}
