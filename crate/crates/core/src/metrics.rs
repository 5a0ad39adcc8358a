//! Per-step accuracy metrics on normalized fields, their aggregates and the
//! CSV / text / PNG reports built from them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default MAPE mask threshold on normalized true pressure.
pub const DEFAULT_MAPE_THRESHOLD: f64 = 0.01;

fn check_len(pred: &[f32], truth: &[f32]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "metric inputs hold {} and {} values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f32], truth: &[f32]) -> Result<f64> {
    check_len(pred, truth)?;
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error over cells whose true value is at least
/// `threshold`. `None` when no cell qualifies.
pub fn mape(pred: &[f32], truth: &[f32], threshold: f64) -> Result<Option<f64>> {
    check_len(pred, truth)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        let t = t as f64;
        if t >= threshold {
            sum += (p as f64 - t).abs() / t;
            n += 1;
        }
    }
    Ok((n > 0).then(|| 100.0 * sum / n as f64))
}

/// Coefficient of determination. `None` for a constant true field.
pub fn r2(pred: &[f32], truth: &[f32]) -> Result<Option<f64>> {
    check_len(pred, truth)?;
    let n = truth.len() as f64;
    let mean = truth.iter().map(|&t| t as f64).sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p as f64, t as f64);
        ss_res += (p - t) * (p - t);
        ss_tot += (t - mean) * (t - mean);
    }
    Ok((ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub rmse: f64,
    /// Percent; NaN when no cell reaches the mask threshold.
    pub mape: f64,
    /// NaN for a constant true field.
    pub r2: f64,
    pub included: bool,
}

impl StepMetrics {
    /// Metrics of one predicted frame against its ground truth.
    pub fn compute(step: usize, pred: &[f32], truth: &[f32], threshold: f64) -> Result<Self> {
        let e = rmse(pred, truth)?;
        let m = mape(pred, truth, threshold)?;
        let r = r2(pred, truth)?;
        let included = e.is_finite() && m.is_some_and(f64::is_finite) && r.is_some_and(f64::is_finite);
        Ok(Self {
            step,
            rmse: e,
            mape: m.unwrap_or(f64::NAN),
            r2: r.unwrap_or(f64::NAN),
            included,
        })
    }
}

/// Metrics for every predicted frame: `preds[k]` is compared with
/// `truth[k]`, labelled with absolute step `first_step + k`.
pub fn step_series(
    preds: &[Vec<f32>],
    truth: &[&[f32]],
    first_step: usize,
    threshold: f64,
) -> Result<Vec<StepMetrics>> {
    if preds.len() > truth.len() {
        return Err(Error::shape(format!(
            "{} predictions but only {} ground-truth frames",
            preds.len(),
            truth.len()
        )));
    }
    preds
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(k, (p, t))| StepMetrics::compute(first_step + k, p, t, threshold))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mape_max: f64,
    pub mape_avg: f64,
    pub rmse_max: f64,
    pub rmse_avg: f64,
    pub r2_min: f64,
    pub r2_max: f64,
    pub n_steps: usize,
    pub n_included: usize,
}

/// Aggregates the first `horizon` entries of each series (one series per
/// case) over included steps.
pub fn aggregate(series: &[&[StepMetrics]], horizon: usize) -> Result<AggregateMetrics> {
    let mut agg = AggregateMetrics {
        mape_max: f64::NEG_INFINITY,
        mape_avg: 0.0,
        rmse_max: f64::NEG_INFINITY,
        rmse_avg: 0.0,
        r2_min: f64::INFINITY,
        r2_max: f64::NEG_INFINITY,
        n_steps: 0,
        n_included: 0,
    };
    for s in series {
        for m in s.iter().take(horizon) {
            agg.n_steps += 1;
            if !m.included {
                continue;
            }
            agg.n_included += 1;
            agg.mape_max = agg.mape_max.max(m.mape);
            agg.rmse_max = agg.rmse_max.max(m.rmse);
            agg.r2_min = agg.r2_min.min(m.r2);
            agg.r2_max = agg.r2_max.max(m.r2);
            agg.mape_avg += m.mape;
            agg.rmse_avg += m.rmse;
        }
    }
    if agg.n_included == 0 {
        return Err(Error::Report(format!(
            "no included steps among {} within horizon {horizon}",
            agg.n_steps
        )));
    }
    agg.mape_avg /= agg.n_included as f64;
    agg.rmse_avg /= agg.n_included as f64;
    Ok(agg)
}

pub fn write_step_csv(path: &Path, series: &[StepMetrics]) -> Result<()> {
    let mut s = String::from("step,rmse,mape,r2,included\n");
    for m in series {
        // `{:e}` round-trips f64 exactly
        writeln!(s, "{},{:e},{:e},{:e},{}", m.step, m.rmse, m.mape, m.r2, m.included as u8).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_step_csv(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::binio::with_path(e, path))?;
    let bad = |line: usize| Error::corrupt(path, format!("malformed metrics row {line}"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(i + 1));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1));
        out.push(StepMetrics {
            step: f[0].parse().map_err(|_| bad(i + 1))?,
            rmse: num(1)?,
            mape: num(2)?,
            r2: num(3)?,
            included: match f[4] {
                "1" => true,
                "0" => false,
                _ => return Err(bad(i + 1)),
            },
        });
    }
    Ok(out)
}

/// Header of the aggregate table, in reporting order.
pub const AGGREGATE_COLUMNS: [&str; 5] = ["MAPE_max", "MAPE_avg", "RMSE_max", "RMSE_avg", "R2_min"];

/// Plain-text aggregate report.
pub fn format_report(agg: &AggregateMetrics, horizon: usize, threshold: f64) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "# horizon {horizon}, mape_threshold {threshold}, steps {}, included {}",
        agg.n_steps, agg.n_included
    )
    .unwrap();
    writeln!(s, "{}", AGGREGATE_COLUMNS.join(" ")).unwrap();
    writeln!(
        s,
        "{:.4} {:.4} {:.6} {:.6} {:.4}",
        agg.mape_max, agg.mape_avg, agg.rmse_max, agg.rmse_avg, agg.r2_min
    )
    .unwrap();
    writeln!(s, "R2_max {:.4}", agg.r2_max).unwrap();
    s
}

/// Per-step mean and standard deviation across cases, ignoring excluded
/// entries. Index `k` covers the `k`-th entry of every series.
pub fn mean_std_curve(series: &[&[StepMetrics]], pick: impl Fn(&StepMetrics) -> f64) -> Vec<(f64, f64)> {
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let v: Vec<f64> = series
                .iter()
                .filter_map(|s| s.get(k))
                .filter(|m| m.included)
                .map(&pick)
                .collect();
            if v.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
            (mean, var.sqrt())
        })
        .collect()
}

/// Renders the RMSE, MAPE and R² curves as three stacked panels, each a
/// mean line over a ±1 standard deviation band. Axes are auto-scaled per
/// panel; there is no text.
pub fn plot_curves(path: &Path, series: &[&[StepMetrics]]) -> Result<()> {
    use image::{Rgb, RgbImage};
    const W: u32 = 640;
    const PANEL: u32 = 200;
    const MARGIN: u32 = 10;
    let mut img = RgbImage::from_pixel(W, PANEL * 3, Rgb([255, 255, 255]));
    let picks: [fn(&StepMetrics) -> f64; 3] = [|m| m.rmse, |m| m.mape, |m| m.r2];
    let colors: [[u8; 3]; 3] = [[200, 40, 40], [40, 110, 200], [40, 160, 70]];
    for (p, pick) in picks.iter().enumerate() {
        let curve = mean_std_curve(series, pick);
        let finite: Vec<&(f64, f64)> = curve.iter().filter(|c| c.0.is_finite()).collect();
        if finite.is_empty() || curve.len() < 2 {
            continue;
        }
        let lo = finite.iter().map(|c| c.0 - c.1).fold(f64::INFINITY, f64::min);
        let hi = finite.iter().map(|c| c.0 + c.1).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let top = p as u32 * PANEL + MARGIN;
        let h = (PANEL - 2 * MARGIN) as f64;
        let x_of = |k: usize| MARGIN + ((W - 2 * MARGIN) as f64 * k as f64 / (curve.len() - 1) as f64) as u32;
        let y_of = |v: f64| top + (h * (1.0 - (v - lo) / span)).clamp(0.0, h) as u32;
        for y in [top, top + h as u32] {
            for x in MARGIN..W - MARGIN {
                img.put_pixel(x, y, Rgb([200, 200, 200]));
            }
        }
        let c = colors[p];
        let band = Rgb(c.map(|v: u8| 255 - (255 - v) / 4));
        for (k, &(m, sd)) in curve.iter().enumerate() {
            if !m.is_finite() {
                continue;
            }
            let x0 = x_of(k);
            let x1 = if k + 1 < curve.len() { x_of(k + 1) } else { x0 + 1 };
            for x in x0..x1.min(W - MARGIN) {
                for y in y_of(m + sd)..=y_of(m - sd) {
                    img.put_pixel(x, y, band);
                }
            }
        }
        for k in 1..curve.len() {
            let (a, b) = (curve[k - 1].0, curve[k].0);
            if !(a.is_finite() && b.is_finite()) {
                continue;
            }
            draw_line(&mut img, (x_of(k - 1), y_of(a)), (x_of(k), y_of(b)), Rgb(c));
        }
    }
    img.save(path).map_err(|e| Error::Report(format!("writing {}: {e}", path.display())))
}

fn draw_line(img: &mut image::RgbImage, a: (u32, u32), b: (u32, u32), color: image::Rgb<u8>) {
    let (mut x, mut y) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
