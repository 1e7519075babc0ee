//! SVG rendering of trajectory and convergence-history CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use dronepida::sim::{Trajectory, CSV_HEADER};
use plotters::coord::Shift;
use plotters::prelude::*;

use crate::Failure;

type Series<'a> = (&'a str, Vec<(f64, f64)>);

const COLORS: [RGBColor; 4] = [RED, BLUE, GREEN, MAGENTA];

fn first_line(path: &Path) -> Result<String, Failure> {
    let f = File::open(path).map_err(|e| Failure::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| Failure::io(path, e))?;
    Ok(line.trim_end().to_string())
}

/// Render one CSV into `dir`; returns the files written.
pub fn render(input: &Path, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let header = first_line(input)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let out = dir.join(format!("{stem}.svg"));
    if header == CSV_HEADER.join(",") {
        let traj = Trajectory::load(input)?;
        trajectory(&traj, &out).map_err(|e| Failure::io(&out, e))?;
    } else if header == "iteration,evaluations,best_value" {
        let points = history(input)?;
        convergence(&points, &out).map_err(|e| Failure::io(&out, e))?;
    } else {
        return Err(Failure::config(format!("{}: unrecognized CSV header", input.display())));
    }
    Ok(vec![out])
}

fn history(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Failure::io(path, e))?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        match (parse(0), parse(2)) {
            (Some(it), Some(v)) => points.push((it, v)),
            _ => return Err(Failure::config(format!("{}: malformed history row", path.display()))),
        }
    }
    Ok(points)
}

fn range(series: &[Series]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for (_, y) in pts.iter().filter(|p| p.1.is_finite()) {
            lo = lo.min(*y);
            hi = hi.max(*y);
        }
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn panel(
    area: &DrawingArea<SVGBackend, Shift>,
    title: &str,
    y_label: &str,
    t_end: f64,
    series: &[Series],
) -> Result<(), Box<dyn std::error::Error>> {
    let (lo, hi) = range(series);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..t_end, lo..hi)?;
    chart.configure_mesh().x_desc("t [s]").y_desc(y_label).draw()?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied().filter(|p| p.1.is_finite()), color))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    Ok(())
}

fn trajectory(traj: &Trajectory, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let t_end = traj.rows.last().map_or(1.0, |r| r.t).max(1e-3);
    let col = |f: &dyn Fn(&dronepida::sim::TrajectoryRow) -> f64| -> Vec<(f64, f64)> {
        traj.rows.iter().map(|r| (r.t, f(r))).collect()
    };
    let root = SVGBackend::new(out, (1200, 900)).into_drawing_area();
    root.fill(&WHITE)?;
    let areas = root.split_evenly((2, 2));
    panel(
        &areas[0],
        "Attitude",
        "deg",
        t_end,
        &[
            ("phi", col(&|r| r.state.euler.x.to_degrees())),
            ("theta", col(&|r| r.state.euler.y.to_degrees())),
            ("psi", col(&|r| r.state.euler.z.to_degrees())),
        ],
    )?;
    panel(
        &areas[1],
        "Altitude",
        "m",
        t_end,
        &[("altitude", col(&|r| r.state.altitude())), ("reference", col(&|r| r.reference.altitude))],
    )?;
    panel(
        &areas[2],
        "Horizontal position",
        "m",
        t_end,
        &[("x_E", col(&|r| r.state.position.x)), ("y_E", col(&|r| r.state.position.y))],
    )?;
    panel(&areas[3], "Range to target", "m", t_end, &[("horizontal", col(&|r| r.safe_distance))])?;
    root.present()?;
    Ok(())
}

fn convergence(points: &[(f64, f64)], out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let logged: Vec<(f64, f64)> = points.iter().map(|(i, v)| (*i, v.max(1e-300).log10())).collect();
    let root = SVGBackend::new(out, (900, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let end = points.last().map_or(1.0, |p| p.0).max(1.0);
    let (lo, hi) = range(&[("", logged.clone())]);
    let mut chart = ChartBuilder::on(&root)
        .caption("SDSA convergence", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..end, lo..hi)?;
    chart.configure_mesh().x_desc("iteration").y_desc("log10 best value").draw()?;
    chart.draw_series(LineSeries::new(logged, BLUE))?;
    root.present()?;
    Ok(())
}
