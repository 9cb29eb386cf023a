use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{invalid, Error, Result};

fn default_labels(s: usize) -> Vec<String> {
    (0..s).map(|i| format!("s{i}")).collect()
}

fn check_non_negative(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(k) => Err(invalid(format!(
            "{name} contains invalid count {} at flat index {k}",
            values[k]
        ))),
        None => Ok(()),
    }
}

/// Aggregated entry (`x`) and exit (`y`) counts, one row per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    labels: Vec<String>,
    x: Matrix,
    y: Matrix,
}

impl ObservationSet {
    pub fn new(x: Matrix, y: Matrix, labels: Option<Vec<String>>) -> Result<Self> {
        if x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::Shape(format!(
                "X is {}x{} but Y is {}x{}",
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        check_non_negative("X", x.as_slice())?;
        check_non_negative("Y", y.as_slice())?;
        let labels = labels.unwrap_or_else(|| default_labels(x.cols()));
        if labels.len() != x.cols() {
            return Err(Error::Shape(format!(
                "{} labels for {} stations",
                labels.len(),
                x.cols()
            )));
        }
        Ok(Self { labels, x, y })
    }

    pub fn stations(&self) -> usize {
        self.x.cols()
    }

    pub fn observations(&self) -> usize {
        self.x.rows()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// First `n` observations.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.observations());
        let s = self.stations();
        let x = Matrix::from_vec(n, s, self.x.as_slice()[..n * s].to_vec())?;
        let y = Matrix::from_vec(n, s, self.y.as_slice()[..n * s].to_vec())?;
        Self::new(x, y, Some(self.labels.clone()))
    }
}

/// Time-binned counts for the average-delay model.
///
/// Bin indices `t0` and `t1` are the starts of the departure and arrival
/// windows on a common clock. Departure bins cover `t0..t0+T`, arrival bins
/// cover `t1..t1+T_a` and both windows end together, so
/// `T_a = T - (t1 - t0)`. Count tensors are stored observation-major:
/// `xb[(n * T + t) * S + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedObservationSet {
    labels: Vec<String>,
    n_obs: usize,
    n_dep_bins: usize,
    bin_width: f64,
    t0: usize,
    t1: usize,
    xb: Vec<f64>,
    yb: Vec<f64>,
}

impl BinnedObservationSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_obs: usize,
        n_dep_bins: usize,
        bin_width: f64,
        t0: usize,
        t1: usize,
        xb: Vec<f64>,
        yb: Vec<f64>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if t1 < t0 {
            return Err(invalid(format!("arrival window start {t1} precedes departure start {t0}")));
        }
        let gap = t1 - t0;
        if gap >= n_dep_bins {
            return Err(invalid(format!(
                "window gap {gap} leaves no arrival bins out of {n_dep_bins}"
            )));
        }
        if !(bin_width > 0.0) {
            return Err(invalid("bin width must be positive"));
        }
        let s = labels.len();
        let t_a = n_dep_bins - gap;
        if xb.len() != n_obs * n_dep_bins * s {
            return Err(Error::Shape(format!(
                "entry tensor has {} values, expected {}x{}x{}",
                xb.len(),
                n_obs,
                n_dep_bins,
                s
            )));
        }
        if yb.len() != n_obs * t_a * s {
            return Err(Error::Shape(format!(
                "exit tensor has {} values, expected {}x{}x{}",
                yb.len(),
                n_obs,
                t_a,
                s
            )));
        }
        check_non_negative("Xb", &xb)?;
        check_non_negative("Yb", &yb)?;
        Ok(Self {
            labels,
            n_obs,
            n_dep_bins,
            bin_width,
            t0,
            t1,
            xb,
            yb,
        })
    }

    pub fn stations(&self) -> usize {
        self.labels.len()
    }
    pub fn observations(&self) -> usize {
        self.n_obs
    }
    /// Number of departure bins `T`.
    pub fn departure_bins(&self) -> usize {
        self.n_dep_bins
    }
    /// Number of arrival bins `T_a`.
    pub fn arrival_bins(&self) -> usize {
        self.n_dep_bins - self.gap()
    }
    pub fn gap(&self) -> usize {
        self.t1 - self.t0
    }
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }
    pub fn t0(&self) -> usize {
        self.t0
    }
    pub fn t1(&self) -> usize {
        self.t1
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Entry count at observation `n`, departure bin `t` (0-based), station `i`.
    #[inline]
    pub fn x(&self, n: usize, t: usize, i: usize) -> f64 {
        self.xb[(n * self.n_dep_bins + t) * self.stations() + i]
    }

    /// Exit count at observation `n`, arrival bin `t` (0-based), station `j`.
    #[inline]
    pub fn y(&self, n: usize, t: usize, j: usize) -> f64 {
        self.yb[(n * self.arrival_bins() + t) * self.stations() + j]
    }

    pub fn xb(&self) -> &[f64] {
        &self.xb
    }
    pub fn yb(&self) -> &[f64] {
        &self.yb
    }
}

/// Sums entries over all departure bins and exits over all arrival bins.
pub fn aggregate_bins(b: &BinnedObservationSet) -> ObservationSet {
    let s = b.stations();
    let mut x = Matrix::zeros(b.observations(), s);
    let mut y = Matrix::zeros(b.observations(), s);
    for n in 0..b.observations() {
        for t in 0..b.departure_bins() {
            for i in 0..s {
                x.add_to(n, i, b.x(n, t, i));
            }
        }
        for t in 0..b.arrival_bins() {
            for j in 0..s {
                y.add_to(n, j, b.y(n, t, j));
            }
        }
    }
    ObservationSet::new(x, y, Some(b.labels.clone())).expect("aggregates of valid counts are valid")
}

/// Sums entries and exits over the arrival window only, i.e. both sides
/// over the same clock interval `t1..t1+T_a`.
pub fn aggregate_observation_window(b: &BinnedObservationSet) -> ObservationSet {
    let s = b.stations();
    let mut x = Matrix::zeros(b.observations(), s);
    let mut y = Matrix::zeros(b.observations(), s);
    let gap = b.gap();
    for n in 0..b.observations() {
        for ta in 0..b.arrival_bins() {
            for i in 0..s {
                x.add_to(n, i, b.x(n, ta + gap, i));
                y.add_to(n, i, b.y(n, ta, i));
            }
        }
    }
    ObservationSet::new(x, y, Some(b.labels.clone())).expect("aggregates of valid counts are valid")
}

/// Expected travel delay per OD pair in whole time bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TravelTimeTable {
    size: usize,
    delays: Vec<u32>,
}

impl TravelTimeTable {
    pub fn new(size: usize, delays: Vec<u32>) -> Result<Self> {
        if delays.len() != size * size {
            return Err(Error::Shape(format!(
                "{} delays for {} stations",
                delays.len(),
                size
            )));
        }
        Ok(Self { size, delays })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            delays: vec![0; size * size],
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let s = rows.len();
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::Shape("delay table must be square".into()));
        }
        Self::new(s, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.delays[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, d: u32) {
        self.delays[i * self.size + j] = d;
    }

    /// Largest off-diagonal delay.
    pub fn max_delay(&self) -> u32 {
        (0..self.size)
            .flat_map(|i| (0..self.size).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .max()
            .unwrap_or(0)
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        self.delays.chunks(self.size.max(1)).map(<[u32]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn binned(n: usize, t: usize, s: usize, gap: usize, xb: Vec<f64>, yb: Vec<f64>) -> BinnedObservationSet {
        BinnedObservationSet::new(n, t, 5.0, 1, 1 + gap, xb, yb, default_labels(s)).unwrap()
    }

    #[test]
    fn single_station_sums_bins() {
        let b = binned(1, 3, 1, 0, vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]);
        let o = aggregate_bins(&b);
        assert_eq!(o.x().get(0, 0), 6.0);
        assert_eq!(o.y().get(0, 0), 0.0);
    }

    #[test]
    fn zero_bins_give_zero_aggregates() {
        let b = binned(2, 4, 3, 1, vec![0.0; 24], vec![0.0; 18]);
        let o = aggregate_bins(&b);
        assert_eq!(o.x().sum(), 0.0);
        assert_eq!(o.y().sum(), 0.0);
    }

    #[test]
    fn random_tensor_matches_elementwise_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, t, s, gap) = (2, 4, 3, 1);
        let xb: Vec<f64> = (0..n * t * s).map(|_| rng.random_range(0..50) as f64).collect();
        let yb: Vec<f64> = (0..n * (t - gap) * s).map(|_| rng.random_range(0..50) as f64).collect();
        let b = binned(n, t, s, gap, xb.clone(), yb.clone());
        let o = aggregate_bins(&b);
        for obs in 0..n {
            for st in 0..s {
                let mut ex = 0.0;
                for bin in 0..t {
                    ex += xb[obs * t * s + bin * s + st];
                }
                let mut ey = 0.0;
                for bin in 0..t - gap {
                    ey += yb[obs * (t - gap) * s + bin * s + st];
                }
                assert_eq!(o.x().get(obs, st), ex);
                assert_eq!(o.y().get(obs, st), ey);
            }
        }
        assert_eq!(o.x().sum(), xb.iter().sum::<f64>());
        assert_eq!(o.y().sum(), yb.iter().sum::<f64>());
    }

    #[test]
    fn observation_window_aggregate_skips_leading_departure_bins() {
        let xb = vec![1.0, 2.0, 3.0];
        let b = binned(1, 3, 1, 1, xb, vec![4.0, 5.0]);
        let o = aggregate_observation_window(&b);
        assert_eq!(o.x().get(0, 0), 5.0);
        assert_eq!(o.y().get(0, 0), 9.0);
    }

    #[test]
    fn rejects_negative_counts_and_bad_shapes() {
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(ObservationSet::new(x, y.clone(), None).is_err());
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(ObservationSet::new(x, y, None).is_err());
    }
}
