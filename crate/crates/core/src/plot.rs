//! SVG figures re-derived from the CSVs written by [`crate::output`].

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use plotters::coord::Shift;
use plotters::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::output::{read_csv, CsvTable, CONFIG_TOML, CONTROLLER_CSV, OBSERVER_CSV, TRAJECTORY_CSV};

const SIZE: (u32, u32) = (900, 560);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn finite_range(values: impl IntoIterator<Item = f64>) -> Option<Range<f64>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
    Some(lo - pad..hi + pad)
}

/// Splits `(t, y)` samples into runs without time gaps or non-finite values.
fn runs(points: &[(f64, f64)], max_gap: f64) -> Vec<Vec<(f64, f64)>> {
    let mut out: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for &(t, y) in points {
        if !y.is_finite() {
            last_t = f64::NEG_INFINITY;
            continue;
        }
        if t - last_t > max_gap || out.is_empty() {
            out.push(Vec::new());
        }
        out.last_mut().expect("run pushed").push((t, y));
        last_t = t;
    }
    out.retain(|r| !r.is_empty());
    out
}

struct Series {
    label: String,
    color: RGBColor,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn line_chart(
    path: &Path,
    title: &str,
    y_desc: &str,
    series: &[Series],
    max_gap: f64,
    log_y: bool,
) -> Result<bool> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|y| !log_y || *y > 0.0);
    let (Some(xr), Some(mut yr)) = (finite_range(xs), finite_range(ys)) else {
        return Ok(false);
    };
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let caption = ("sans-serif", 22);
    let legend = series.len() <= 12;
    if log_y {
        yr = yr.start.max(f64::MIN_POSITIVE)..yr.end;
        let lo = series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .filter(|y| y.is_finite() && *y > 0.0)
            .fold(f64::INFINITY, f64::min);
        let hi = yr.end;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, caption)
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(xr, (lo * 0.8..hi * 1.25).log_scale())
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t [s]").y_desc(y_desc).draw().map_err(plot_err)?;
        for s in series {
            let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.1 > 0.0).collect();
            for (i, run) in runs(&pts, max_gap).into_iter().enumerate() {
                let drawn = chart.draw_series(LineSeries::new(run, s.color.stroke_width(1))).map_err(plot_err)?;
                if i == 0 && legend {
                    let c = s.color;
                    drawn.label(s.label.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c));
                }
            }
        }
        if legend {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        }
    } else {
        let mut chart = ChartBuilder::on(&root)
            .caption(title, caption)
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(70)
            .build_cartesian_2d(xr, yr)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t [s]").y_desc(y_desc).draw().map_err(plot_err)?;
        for s in series {
            for (i, run) in runs(&s.points, max_gap).into_iter().enumerate() {
                let style = s.color.stroke_width(if s.dashed { 1 } else { 2 });
                let drawn = if s.dashed {
                    chart.draw_series(DashedLineSeries::new(run, 6, 4, style)).map_err(plot_err)?
                } else {
                    chart.draw_series(LineSeries::new(run, style)).map_err(plot_err)?
                };
                if i == 0 && legend {
                    let c = s.color;
                    drawn.label(s.label.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c));
                }
            }
        }
        if legend {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(true)
}

fn palette(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

fn trajectory_xy(path: &Path, traj: &CsvTable, r_min: f64) -> Result<bool> {
    let x = traj.f64_column("x")?;
    let y = traj.f64_column("y")?;
    if x.is_empty() {
        return Ok(false);
    }
    let span = x
        .iter()
        .chain(y.iter())
        .filter(|v| v.is_finite())
        .fold(r_min, |m, v| m.max(v.abs()))
        * 1.1;
    let root: DrawingArea<SVGBackend, Shift> = SVGBackend::new(path, (700, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Deputy trajectory (x-y)", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(-span..span, -span..span)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("x [m]").y_desc("y [m]").draw().map_err(plot_err)?;
    let koz: Vec<(f64, f64)> = (0..=180)
        .map(|k| {
            let a = k as f64 / 180.0 * std::f64::consts::TAU;
            (r_min * a.cos(), r_min * a.sin())
        })
        .collect();
    chart
        .draw_series(LineSeries::new(koz, RED.stroke_width(2)))
        .map_err(plot_err)?
        .label("keep-out zone")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], RED));
    let pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).filter(|p| p.0.is_finite()).collect();
    chart
        .draw_series(LineSeries::new(pts.clone(), BLUE.stroke_width(2)))
        .map_err(plot_err)?
        .label("deputy")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLUE));
    if let (Some(s), Some(e)) = (pts.first(), pts.last()) {
        chart.draw_series([Circle::new(*s, 5, GREEN.filled())]).map_err(plot_err)?.label("start").legend(|(x, y)| {
            Circle::new((x + 9, y), 4, GREEN.filled())
        });
        chart.draw_series([Circle::new(*e, 5, BLACK.filled())]).map_err(plot_err)?.label("end").legend(|(x, y)| {
            Circle::new((x + 9, y), 4, BLACK.filled())
        });
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(true)
}

/// Per-feature truth (solid) and estimate (dashed) series for one distance.
fn distance_series(obs: &CsvTable, truth: &str, est: &str) -> Result<Vec<Series>> {
    let t = obs.f64_column("t")?;
    let ids = obs.str_column("id")?;
    let tr = obs.f64_column(truth)?;
    let es = obs.f64_column(est)?;
    let mut by_id: BTreeMap<usize, (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
    for i in 0..t.len() {
        let id: usize = ids[i].parse().map_err(|_| Error::InvalidArgument(format!("bad feature id {:?}", ids[i])))?;
        let e = by_id.entry(id).or_default();
        e.0.push((t[i], tr[i]));
        e.1.push((t[i], es[i]));
    }
    let mut out = Vec::new();
    for (k, (id, (a, b))) in by_id.into_iter().enumerate() {
        let color = palette(k);
        out.push(Series { label: format!("{truth} #{id}"), color, dashed: false, points: a });
        out.push(Series { label: format!("{est} #{id}"), color, dashed: true, points: b });
    }
    Ok(out)
}

fn load_r_min(dir: &Path) -> f64 {
    let path = dir.join(CONFIG_TOML);
    std::fs::read_to_string(path)
        .ok()
        .and_then(|s| ScenarioConfig::from_toml_str(&s).ok())
        .unwrap_or_default()
        .r_min()
}

/// Renders every figure from the CSVs in `metrics_dir` into `out_dir`.
///
/// Missing or empty inputs produce warnings rather than files.
pub fn plot_dir(metrics_dir: &Path, out_dir: &Path) -> Result<PlotReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = PlotReport::default();
    let load = |name: &str, report: &mut PlotReport| -> Option<CsvTable> {
        match read_csv(&metrics_dir.join(name)) {
            Ok(t) if !t.rows.is_empty() => Some(t),
            Ok(_) => {
                report.warnings.push(format!("{name} is empty; its plots were skipped"));
                None
            }
            Err(e) => {
                report.warnings.push(format!("{name} unavailable ({e}); its plots were skipped"));
                None
            }
        }
    };
    let dt_gap = 0.5;

    let emit = |ok: Result<bool>, path: PathBuf, report: &mut PlotReport| -> Result<()> {
        if ok? {
            report.written.push(path);
        } else {
            report.warnings.push(format!("no finite data for {}", path.display()));
        }
        Ok(())
    };

    if let Some(traj) = load(TRAJECTORY_CSV, &mut report) {
        let p = out_dir.join("trajectory_xy.svg");
        emit(trajectory_xy(&p, &traj, load_r_min(metrics_dir)), p, &mut report)?;
        let t = traj.f64_column("t")?;
        let err = traj.f64_column("p_gb_err")?;
        let s = [Series {
            label: "|p_gb error|".into(),
            color: BLUE,
            dashed: false,
            points: t.iter().copied().zip(err).collect(),
        }];
        let p = out_dir.join("goal_error.svg");
        emit(line_chart(&p, "Goal-relative position error", "error [m]", &s, dt_gap, false), p, &mut report)?;
    }
    if let Some(ctl) = load(CONTROLLER_CSV, &mut report) {
        let t = ctl.f64_column("t")?;
        let s: Vec<Series> = [("ux", RED), ("uy", GREEN), ("uz", BLUE)]
            .into_iter()
            .map(|(c, color)| {
                Ok(Series {
                    label: c.to_string(),
                    color,
                    dashed: false,
                    points: t.iter().copied().zip(ctl.f64_column(c)?).collect(),
                })
            })
            .collect::<Result<_>>()?;
        let p = out_dir.join("thrust.svg");
        emit(line_chart(&p, "Thrust command", "force [N]", &s, dt_gap, false), p, &mut report)?;
    }
    if let Some(obs) = load(OBSERVER_CSV, &mut report) {
        for (truth, est, file, title) in [
            ("r_bh", "r_bh_hat", "r_bh.svg", "Deputy-to-feature distance"),
            ("r_bk", "r_bk_hat", "r_bk.svg", "Deputy-to-key-frame distance"),
            ("r_kh", "r_kh_hat", "r_kh.svg", "Key-frame-to-feature distance"),
        ] {
            let s = distance_series(&obs, truth, est)?;
            let p = out_dir.join(file);
            emit(line_chart(&p, title, "distance [m]", &s, dt_gap, false), p, &mut report)?;
        }
        let t = obs.f64_column("t")?;
        let cond = obs.f64_column("cond_sigma_y")?;
        let s = [Series { label: "cond".into(), color: BLUE, dashed: false, points: t.into_iter().zip(cond).collect() }];
        let p = out_dir.join("cond.svg");
        emit(line_chart(&p, "Regressor condition number", "cond", &s, dt_gap, true), p, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_split_on_gaps_and_nan() {
        let pts = [(0.0, 1.0), (0.05, 2.0), (1.0, 3.0), (1.05, f64::NAN), (1.1, 4.0)];
        let r = runs(&pts, 0.5);
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].len(), 2);
    }

    #[test]
    fn empty_dir_warns_without_files() {
        let dir = tempfile::tempdir().unwrap();
        let rep = plot_dir(dir.path(), dir.path()).unwrap();
        assert!(rep.written.is_empty());
        assert_eq!(rep.warnings.len(), 3);
    }
}
