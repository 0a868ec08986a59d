//! Static SVG plots for the report.

use plotters::prelude::*;
use renalseg::preprocess::percentile;
use renalseg::select::LassoPath;

use crate::CliError;

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failed(format!("plotting failed: {e}"))
}

const SIZE: (u32, u32) = (720, 480);

/// Cross-validated MSE against log10(λ) with ±1 SE bars and markers at
/// `lambda_min` and `lambda_1se`.
pub fn cv_curve(path: Option<&LassoPath>) -> Result<String, CliError> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let Some(path) = path.filter(|p| p.lambdas.iter().all(|l| *l > 0.0)) else {
            root.draw(&Text::new("no cross-validation path (nothing to select)", (40, 240), ("sans-serif", 20)))
                .map_err(plot_err)?;
            root.present().map_err(plot_err)?;
            drop(root);
            return Ok(svg);
        };
        let xs: Vec<f64> = path.lambdas.iter().map(|l| l.log10()).collect();
        let lo = path.cv_mean.iter().zip(&path.cv_se).map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
        let hi = path.cv_mean.iter().zip(&path.cv_se).map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-9);
        let (x0, x1) =
            (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        let mut chart = ChartBuilder::on(&root)
            .caption("LASSO cross-validation", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("log10(lambda)").y_desc("CV mean squared error").draw().map_err(plot_err)?;
        for ((x, m), s) in xs.iter().zip(&path.cv_mean).zip(&path.cv_se) {
            chart
                .draw_series(std::iter::once(PathElement::new(vec![(*x, m - s), (*x, m + s)], BLACK.mix(0.4))))
                .map_err(plot_err)?;
        }
        chart
            .draw_series(LineSeries::new(xs.iter().cloned().zip(path.cv_mean.iter().cloned()), &BLUE))
            .map_err(plot_err)?;
        chart
            .draw_series(xs.iter().zip(&path.cv_mean).map(|(x, m)| Circle::new((*x, *m), 3, RED.filled())))
            .map_err(plot_err)?;
        for (l, color, name) in [(path.lambda_min, &GREEN, "lambda_min"), (path.lambda_1se, &MAGENTA, "lambda_1se")] {
            let x = l.log10();
            chart
                .draw_series(std::iter::once(PathElement::new(vec![(x, lo - pad), (x, hi + pad)], color)))
                .map_err(plot_err)?
                .label(name)
                .legend(move |(a, b)| PathElement::new(vec![(a, b), (a + 20, b)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

pub fn weight_histogram(weights: &[f64]) -> Result<String, CliError> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let lo = weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let bins = 12usize;
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for w in weights {
            counts[(((w - lo) / width) as usize).min(bins - 1)] += 1;
        }
        let top = *counts.iter().max().unwrap_or(&1) as f64 + 1.0;
        let mut chart = ChartBuilder::on(&root)
            .caption("Sampling weights", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(lo..hi, 0.0..top)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("weight").y_desc("cases").draw().map_err(plot_err)?;
        chart
            .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                let x = lo + i as f64 * width;
                Rectangle::new([(x, 0.0), (x + width, c as f64)], BLUE.mix(0.6).filled())
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Box plot (median, quartiles, 1.5 IQR whiskers) per class and arm.
pub fn dice_boxplots(groups: &[(String, Vec<f64>, Vec<f64>)]) -> Result<String, CliError> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n = groups.len() as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption("Dice per class (blue: uniform, red: cognizant)", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..n, 0.0..1.0)
            .map_err(plot_err)?;
        let names: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(groups.len() * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 1e-6 && i < names.len() {
                    names[i].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("Dice")
            .draw()
            .map_err(plot_err)?;
        for (i, (_, a, b)) in groups.iter().enumerate() {
            for (k, (values, color)) in [(a, BLUE), (b, RED)].into_iter().enumerate() {
                if values.is_empty() {
                    continue;
                }
                let mut s = values.clone();
                s.sort_by(f64::total_cmp);
                let (q1, med, q3) = (percentile(&s, 25.0), percentile(&s, 50.0), percentile(&s, 75.0));
                let iqr = q3 - q1;
                let wlo = s.iter().cloned().find(|v| *v >= q1 - 1.5 * iqr).unwrap_or(q1);
                let whi = s.iter().rev().cloned().find(|v| *v <= q3 + 1.5 * iqr).unwrap_or(q3);
                let centre = i as f64 + 0.3 + 0.4 * k as f64;
                let (l, r) = (centre - 0.12, centre + 0.12);
                chart
                    .draw_series([
                        Rectangle::new([(l, q1), (r, q3)], color.mix(0.3).filled()),
                        Rectangle::new([(l, q1), (r, q3)], color.stroke_width(1)),
                    ])
                    .map_err(plot_err)?;
                chart
                    .draw_series([
                        PathElement::new(vec![(l, med), (r, med)], color.stroke_width(2)),
                        PathElement::new(vec![(centre, q3), (centre, whi)], color.stroke_width(1)),
                        PathElement::new(vec![(centre, q1), (centre, wlo)], color.stroke_width(1)),
                    ])
                    .map_err(plot_err)?;
                chart
                    .draw_series(
                        s.iter()
                            .filter(|v| **v < wlo || **v > whi)
                            .map(|v| Circle::new((centre, *v), 3, color.filled())),
                    )
                    .map_err(plot_err)?;
            }
        }
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_render_to_svg() {
        let svg = weight_histogram(&[0.5, 0.5, 1.5, 1.5, 1.0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<rect"));
        let svg = weight_histogram(&[1.0; 4]).unwrap();
        assert!(svg.contains("<rect"));
        let svg = dice_boxplots(&[("tumor".into(), vec![0.1, 0.4, 0.5], vec![0.3, 0.6, 0.9])]).unwrap();
        assert!(svg.contains("<rect"));
        assert!(cv_curve(None).unwrap().contains("no cross-validation path"));
    }
}
