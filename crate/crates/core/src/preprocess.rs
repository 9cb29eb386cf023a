//! Count preparation: up-sampling of cumulative counters, entry/exit
//! balancing and gap/outlier imputation.

use crate::domain::{Matrix, ObservationSet};
use crate::error::{invalid, Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Knot slopes for the rational quadratic spline: weighted three-point
/// differences inside, one-sided three-point at the ends, zero next to a
/// flat segment.
fn knot_slopes(h: &[f64], delta: &[f64]) -> Vec<f64> {
    let m = delta.len();
    let mut d = vec![0.0; m + 1];
    if m == 1 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for i in 1..m {
        if delta[i - 1] > 0.0 && delta[i] > 0.0 {
            d[i] = (h[i] * delta[i - 1] + h[i - 1] * delta[i]) / (h[i - 1] + h[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        if d0 <= 0.0 {
            return 0.0;
        }
        ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]).clamp(0.0, 3.0 * delta[0]);
    d[m] = end(h[m - 1], h[m - 2], delta[m - 1], delta[m - 2]).clamp(0.0, 3.0 * delta[m - 1]);
    d
}

/// Monotone rational quadratic interpolant through `(t, c)`.
#[derive(Debug, Clone)]
pub struct RationalQuadraticSpline {
    t: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl RationalQuadraticSpline {
    pub fn new(t: &[f64], c: &[f64]) -> Result<Self> {
        if t.len() != c.len() || t.len() < 2 {
            return Err(invalid("need at least two knots with matching lengths"));
        }
        if let Some(k) = t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(invalid(format!("timestamps must increase strictly (index {})", k + 1)));
        }
        if let Some(k) = c.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("cumulative count at index {k} is not finite")));
        }
        if let Some(k) = c.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NonMonotone { index: k + 1 });
        }
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = c.windows(2).zip(&h).map(|(w, h)| (w[1] - w[0]) / h).collect();
        Ok(Self {
            t: t.to_vec(),
            c: c.to_vec(),
            d: knot_slopes(&h, &delta),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        if x <= self.t[0] {
            return self.c[0];
        }
        if x >= self.t[n - 1] {
            return self.c[n - 1];
        }
        let i = self.t.partition_point(|&v| v <= x) - 1;
        let h = self.t[i + 1] - self.t[i];
        let dy = self.c[i + 1] - self.c[i];
        if dy == 0.0 {
            return self.c[i];
        }
        let delta = dy / h;
        let th = (x - self.t[i]) / h;
        let w = th * (1.0 - th);
        let num = delta * th * th + self.d[i] * w;
        let den = delta + (self.d[i + 1] + self.d[i] - 2.0 * delta) * w;
        self.c[i] + dy * num / den
    }
}

/// Turns a cumulative counter sampled at `timestamps` into counts per
/// `target_interval`. Every timestamp must sit on the target grid, so the
/// counts of each original interval are reproduced exactly.
pub fn upsample_counts(timestamps: &[f64], cumulative: &[f64], target_interval: f64) -> Result<Vec<f64>> {
    if !(target_interval > 0.0) {
        return Err(invalid("target interval must be positive"));
    }
    let spline = RationalQuadraticSpline::new(timestamps, cumulative)?;
    let t0 = timestamps[0];
    let mut knot_steps = Vec::with_capacity(timestamps.len());
    for (k, &t) in timestamps.iter().enumerate() {
        let steps = (t - t0) / target_interval;
        let r = steps.round();
        if (steps - r).abs() > GRID_TOL * steps.abs().max(1.0) {
            return Err(invalid(format!(
                "timestamp {t} (index {k}) is not on the {target_interval}-unit grid"
            )));
        }
        knot_steps.push(r as usize);
    }
    let total = *knot_steps.last().expect("two knots");
    let mut out = Vec::with_capacity(total);
    for (k, w) in knot_steps.windows(2).enumerate() {
        let mut prev = cumulative[k];
        for s in w[0] + 1..=w[1] {
            let v = if s == w[1] {
                cumulative[k + 1]
            } else {
                spline.eval(t0 + s as f64 * target_interval).clamp(prev, cumulative[k + 1])
            };
            out.push(v - prev);
            prev = v;
        }
    }
    Ok(out)
}

/// Scales the side with the smaller total up to the larger one in every
/// observation. Station shares within a side are preserved.
pub fn balance_counts(obs: &ObservationSet) -> Result<ObservationSet> {
    let mut x = obs.x().clone();
    let mut y = obs.y().clone();
    for n in 0..obs.observations() {
        let xt: f64 = x.row(n).iter().sum();
        let yt: f64 = y.row(n).iter().sum();
        if xt > yt {
            if yt == 0.0 {
                return Err(Error::ZeroTotal(n));
            }
            let f = xt / yt;
            y.row_mut(n).iter_mut().for_each(|v| *v *= f);
        } else if yt > xt {
            if xt == 0.0 {
                return Err(Error::ZeroTotal(n));
            }
            let f = yt / xt;
            x.row_mut(n).iter_mut().for_each(|v| *v *= f);
        }
    }
    ObservationSet::new(x, y, Some(obs.labels().to_vec()))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mad(v: &[f64], m: f64) -> f64 {
    let mut d: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    median(&mut d)
}

/// Valid neighbours of `t` within `radius`, widening the window until at
/// least one is found.
fn neighbours(values: &[Option<f64>], keep: &[bool], t: usize, radius: usize) -> Vec<f64> {
    let n = values.len();
    let mut r = radius.max(1);
    loop {
        let lo = t.saturating_sub(r);
        let hi = (t + r).min(n - 1);
        let found: Vec<f64> = (lo..=hi)
            .filter(|&k| k != t && keep[k])
            .filter_map(|k| values[k])
            .collect();
        if !found.is_empty() || (lo == 0 && hi == n - 1) {
            return found;
        }
        r *= 2;
    }
}

/// Fills missing values and replaces outliers with the median of the valid
/// neighbours within `radius`. Outliers are values whose robust z-score
/// `|x − median| / (1.4826·MAD)` exceeds `outlier_z`, with the median taken
/// over the window and the MAD floored at its series-wide value so short
/// windows do not flag ordinary noise. Returns the cleaned
/// series and a mask of edited positions.
pub fn impute_gaps(series: &[Option<f64>], radius: usize, outlier_z: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = series.len();
    let valid: Vec<f64> = series.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::GapTooWide { gap: n, len: n });
    }
    let global_mad = {
        let mut v = valid.clone();
        let m = median(&mut v);
        mad(&valid, m)
    };
    let present: Vec<bool> = series.iter().map(Option::is_some).collect();
    let mut outlier = vec![false; n];
    for t in 0..n {
        let Some(x) = series[t] else { continue };
        let mut nb = neighbours(series, &present, t, radius);
        if nb.is_empty() {
            continue;
        }
        let m = median(&mut nb);
        let scale = 1.4826 * mad(&nb, m).max(global_mad);
        let z = if scale > 0.0 {
            (x - m).abs() / scale
        } else if x == m {
            0.0
        } else {
            f64::INFINITY
        };
        outlier[t] = z > outlier_z;
    }
    let keep: Vec<bool> = (0..n).map(|t| present[t] && !outlier[t]).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::GapTooWide { gap: n, len: n });
    }
    let mut out = Vec::with_capacity(n);
    let mut mask = vec![false; n];
    for t in 0..n {
        if keep[t] {
            out.push(series[t].expect("kept values are present"));
        } else {
            let mut nb = neighbours(series, &keep, t, radius);
            out.push(median(&mut nb));
            mask[t] = true;
        }
    }
    Ok((out, mask))
}

/// Applies [`impute_gaps`] to every column of a table of optional values.
pub fn impute_table(columns: &[Vec<Option<f64>>], radius: usize, outlier_z: f64) -> Result<(Matrix, Vec<Vec<bool>>)> {
    let rows = columns.first().map_or(0, Vec::len);
    let mut m = Matrix::zeros(rows, columns.len());
    let mut masks = Vec::with_capacity(columns.len());
    for (c, col) in columns.iter().enumerate() {
        let (v, mask) = impute_gaps(col, radius, outlier_z)?;
        for (r, x) in v.into_iter().enumerate() {
            m.set(r, c, x);
        }
        masks.push(mask);
    }
    Ok((m, masks))
}
