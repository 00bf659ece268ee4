use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("plotting failed: {e}"))
}

/// Two-component scatter: private texts in grey, inverted texts in red.
pub fn scatter_svg(path: &Path, points: &[(bool, f64, f64)]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(_, x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |a: f64, b: f64| ((b - a) * 0.05).max(1e-6);
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(x0 - px..x1 + px, y0 - py..y1 + py)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("pc1")
        .y_desc("pc2")
        .draw()
        .map_err(plot_err)?;
    for (inverted, color) in [(false, RGBColor(160, 160, 160)), (true, RED)] {
        chart
            .draw_series(
                points
                    .iter()
                    .filter(|p| p.0 == inverted)
                    .map(|&(_, x, y)| Circle::new((x, y), 2, color.filled())),
            )
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
