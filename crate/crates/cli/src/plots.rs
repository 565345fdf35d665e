use std::collections::BTreeMap;

use plotters::prelude::*;

use crate::report::ReportError;

type Point = (u32, f64, f64);
type Panel<'a> = (&'a str, f64, fn(&Point) -> f64);

const PALETTE: [RGBColor; 4] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
];

fn plot_err<E: std::fmt::Display>(e: E) -> ReportError {
    ReportError::Plot(e.to_string())
}

/// Two stacked panels (average accuracy and average diff-bias) sharing an
/// integer x axis. Each series holds `(x, accuracy, diff_bias)` points.
pub fn svg_chart(
    title: &str,
    x_label: &str,
    series: &BTreeMap<String, Vec<Point>>,
) -> Result<String, ReportError> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 720)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let root = root.titled(title, ("sans-serif", 22)).map_err(plot_err)?;
        let panels = root.split_evenly((2, 1));
        let x_max = series.values().flatten().map(|p| p.0).max().unwrap_or(1);
        let x_min = series.values().flatten().map(|p| p.0).min().unwrap_or(0);
        let diff_max = series
            .values()
            .flatten()
            .map(|p| p.2.abs())
            .fold(0.0_f64, f64::max)
            .max(0.05)
            * 1.1;

        let metrics: [Panel; 2] = [
            ("Avg accuracy", 1.0, |p| p.1),
            ("Avg diff-bias", diff_max, |p| p.2),
        ];
        for (panel, (y_label, y_max, pick)) in panels.iter().zip(metrics) {
            let mut chart = ChartBuilder::on(panel)
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(56)
                .build_cartesian_2d(x_min..x_max.max(x_min + 1), 0.0..y_max)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc(x_label)
                .y_desc(y_label)
                .x_labels((x_max - x_min + 1).min(16) as usize)
                .draw()
                .map_err(plot_err)?;
            for (i, (name, points)) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(points.iter().map(|p| (p.0, pick(p))), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                chart
                    .draw_series(points.iter().map(|p| Circle::new((p.0, pick(p)), 3, color.filled())))
                    .map_err(plot_err)?;
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
