//! Average-delay model: exits in arrival bin `t_a` are explained by entries
//! one mean travel time earlier, `y_j ~ N⁺(Σ_i α_ij h_ki, σ_j)`.

use rayon::prelude::*;

use super::layout::OdLayout;
use super::truncnorm;
use crate::domain::{BinnedObservationSet, Matrix, ParamLayout, StructuralZeros, TravelTimeTable};
use crate::error::{invalid, Error, Result};
use crate::sampler::LogDensity;

/// Row of the stacked assignment matrix for 1-based `(j, n, t_a)`.
pub fn row_index(j: usize, n: usize, t_a: usize, n_obs: usize, arrival_bins: usize) -> usize {
    (j - 1) * n_obs * arrival_bins + (n - 1) * arrival_bins + t_a
}

/// Inverse of [`row_index`].
pub fn row_triple(k: usize, n_obs: usize, arrival_bins: usize) -> (usize, usize, usize) {
    let z = k - 1;
    let per_dest = n_obs * arrival_bins;
    (z / per_dest + 1, (z % per_dest) / arrival_bins + 1, z % arrival_bins + 1)
}

#[derive(Debug, Clone)]
pub struct AdModel {
    binned: BinnedObservationSet,
    delays: TravelTimeTable,
    /// Per destination, `(N·T_a) × S` lagged entries.
    h: Vec<Matrix>,
    /// Per destination, the `N·T_a` exit counts in the same row order.
    y: Vec<Vec<f64>>,
    dirichlet_c: f64,
    zeros: StructuralZeros,
    layout: OdLayout,
}

/// Builds the per-destination lagged-entry matrices.
///
/// Arrival bin `t_a` of destination `j` pairs with departure bin
/// `t_a + (t1 − t0) − Δ_ij` of origin `i` (0-based on both axes).
pub fn build_assignment(
    binned: BinnedObservationSet,
    delays: TravelTimeTable,
    zeros: Option<StructuralZeros>,
) -> Result<AdModel> {
    let s = binned.stations();
    if delays.size() != s {
        return Err(Error::Shape(format!(
            "travel-time table covers {} stations, data has {s}",
            delays.size()
        )));
    }
    let zeros = zeros.unwrap_or_else(|| StructuralZeros::none(s));
    let gap = binned.gap();
    for i in 0..s {
        for j in 0..s {
            if i != j && !zeros.is_zero(i, j) && delays.get(i, j) as usize > gap {
                return Err(Error::DelayExceedsGap {
                    origin: i,
                    destination: j,
                    delay: delays.get(i, j),
                    gap,
                });
            }
        }
    }
    let n_obs = binned.observations();
    let ta_n = binned.arrival_bins();
    let t_n = binned.departure_bins();
    let mut h = Vec::with_capacity(s);
    let mut y = Vec::with_capacity(s);
    for j in 0..s {
        let mut hj = Matrix::zeros(n_obs * ta_n, s);
        let mut yj = Vec::with_capacity(n_obs * ta_n);
        for n in 0..n_obs {
            for ta in 0..ta_n {
                let row = n * ta_n + ta;
                for i in 0..s {
                    if i == j || zeros.is_zero(i, j) {
                        continue;
                    }
                    let td = (ta + gap) as isize - delays.get(i, j) as isize;
                    if td >= 0 && (td as usize) < t_n {
                        hj.set(row, i, binned.x(n, td as usize, i));
                    }
                }
                yj.push(binned.y(n, ta, j));
            }
        }
        h.push(hj);
        y.push(yj);
    }
    let layout = OdLayout::new(s, &zeros, false)?;
    Ok(AdModel {
        binned,
        delays,
        h,
        y,
        dirichlet_c: 1.0,
        zeros,
        layout,
    })
}

impl AdModel {
    pub fn with_concentration(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("Dirichlet concentration must be positive, got {c}")));
        }
        self.dirichlet_c = c;
        Ok(self)
    }

    pub fn stations(&self) -> usize {
        self.binned.stations()
    }
    pub fn binned(&self) -> &BinnedObservationSet {
        &self.binned
    }
    pub fn delays(&self) -> &TravelTimeTable {
        &self.delays
    }
    pub fn structural_zeros(&self) -> &StructuralZeros {
        &self.zeros
    }
    pub fn layout(&self) -> &OdLayout {
        &self.layout
    }
    pub fn concentration(&self) -> f64 {
        self.dirichlet_c
    }

    /// Lagged-entry matrix of destination `j` (0-based).
    pub fn assignment(&self, j: usize) -> &Matrix {
        &self.h[j]
    }

    /// Exit counts of destination `j` in assignment row order.
    pub fn exits(&self, j: usize) -> &[f64] {
        &self.y[j]
    }

    /// Log posterior in constrained coordinates without transform Jacobians.
    pub fn log_posterior(&self, alpha: &Matrix, sigma: &[f64]) -> Result<f64> {
        let s = self.stations();
        if alpha.rows() != s || alpha.cols() != s || sigma.len() != s {
            return Err(Error::Shape("parameter dimensions do not match the model".into()));
        }
        if let Some(v) = sigma.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveScale(*v));
        }
        let per_dest: Vec<f64> = (0..s)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = (0..s).map(|i| alpha.get(i, j)).collect();
                let hj = &self.h[j];
                (0..hj.rows())
                    .map(|k| {
                        let mu = dot(hj.row(k), &col);
                        truncnorm::ln_pdf(self.y[j][k], mu, sigma[j])
                    })
                    .sum::<f64>()
            })
            .collect();
        let mut lp: f64 = per_dest.iter().sum();
        if self.dirichlet_c != 1.0 {
            lp += (self.dirichlet_c - 1.0) * self.layout.sum_log_alpha(alpha);
        }
        Ok(lp)
    }

    pub fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let s = self.stations();
        let d = self.layout.decode(theta);
        let per_dest: Vec<(f64, Vec<f64>, f64)> = (0..s)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = (0..s).map(|i| d.alpha.get(i, j)).collect();
                let hj = &self.h[j];
                let inv = 1.0 / d.sigma[j];
                let mut g_col = vec![0.0; s];
                let mut lp = -(hj.rows() as f64) * d.sigma[j].ln();
                let mut g_sigma = 0.0;
                for (k, &yk) in self.y[j].iter().enumerate() {
                    let row = hj.row(k);
                    let (l, dm, ds) = truncnorm::ln_pdf_grad_scaled(yk, dot(row, &col), inv);
                    lp += l;
                    g_sigma += ds;
                    for (g, &hv) in g_col.iter_mut().zip(row) {
                        *g += hv * dm;
                    }
                }
                (lp, g_col, g_sigma)
            })
            .collect();
        let mut g_alpha = Matrix::zeros(s, s);
        let mut g_sigma = vec![0.0; s];
        let mut lp = 0.0;
        for (j, (l, g_col, gs)) in per_dest.into_iter().enumerate() {
            lp += l;
            g_sigma[j] = gs;
            for (i, g) in g_col.into_iter().enumerate() {
                g_alpha.set(i, j, g);
            }
        }
        if self.dirichlet_c != 1.0 {
            lp += (self.dirichlet_c - 1.0) * self.layout.sum_log_alpha(&d.alpha);
            self.layout.add_dirichlet_grad(&d.alpha, self.dirichlet_c, &mut g_alpha);
        }
        self.layout.backprop(theta, &d, &g_alpha, &g_sigma, &[], grad);
        lp + d.log_jacobian
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogDensity for AdModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }
    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.log_density_grad(theta, grad)
    }
    fn param_layout(&self) -> ParamLayout {
        self.layout.param_layout()
    }
    fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        self.layout.constrain(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ObservationSet;
    use crate::model::instantaneous::tests::{fd_check, random_point};
    use crate::model::IbModel;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn labels(s: usize) -> Vec<String> {
        (0..s).map(|i| format!("s{i}")).collect()
    }

    fn random_binned(s: usize, n: usize, t: usize, gap: usize, seed: u64) -> BinnedObservationSet {
        let mut rng = rng_from(seed, &[]);
        let xb = (0..n * t * s).map(|_| rng.random_range(0..15) as f64).collect();
        let yb = (0..n * (t - gap) * s).map(|_| rng.random_range(0..15) as f64).collect();
        BinnedObservationSet::new(n, t, 5.0, 10, 10 + gap, xb, yb, labels(s)).unwrap()
    }

    fn random_delays(s: usize, max: u32, seed: u64) -> TravelTimeTable {
        let mut rng = rng_from(seed, &[7]);
        let mut d = TravelTimeTable::zeros(s);
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    d.set(i, j, rng.random_range(0..=max));
                }
            }
        }
        d
    }

    fn random_theta(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[9]);
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn row_index_arithmetic() {
        assert_eq!(row_index(2, 3, 4, 5, 10), 74);
        for k in 1..=3 * 5 * 10 {
            let (j, n, ta) = row_triple(k, 5, 10);
            assert_eq!(row_index(j, n, ta, 5, 10), k);
        }
    }

    #[test]
    fn zero_delay_uses_concurrent_bins() {
        let b = random_binned(3, 2, 4, 0, 1);
        let m = build_assignment(b.clone(), TravelTimeTable::zeros(3), None).unwrap();
        for j in 0..3 {
            for n in 0..2 {
                for t in 0..4 {
                    for i in 0..3 {
                        let expect = if i == j { 0.0 } else { b.x(n, t, i) };
                        assert_eq!(m.assignment(j).get(n * 4 + t, i), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn one_bin_delay_hand_enumeration() {
        // S=2, N=1, T=3, gap=1, Δ=1: arrival bin t_a pairs with departure bin t_a.
        let xb = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let yb = vec![0.0; 4];
        let b = BinnedObservationSet::new(1, 3, 5.0, 0, 1, xb, yb, labels(2)).unwrap();
        let d = TravelTimeTable::from_rows(&[vec![0, 1], vec![1, 0]]).unwrap();
        let m = build_assignment(b, d, None).unwrap();
        assert_eq!(m.assignment(1).get(0, 0), 1.0);
        assert_eq!(m.assignment(1).get(1, 0), 3.0);
        assert_eq!(m.assignment(0).get(0, 1), 2.0);
        assert_eq!(m.assignment(0).get(1, 1), 4.0);
    }

    #[test]
    fn delay_exceeding_gap_is_rejected() {
        let b = random_binned(3, 1, 5, 1, 2);
        let mut d = TravelTimeTable::zeros(3);
        d.set(2, 0, 2);
        match build_assignment(b.clone(), d.clone(), None) {
            Err(Error::DelayExceedsGap { origin: 2, destination: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let z = StructuralZeros::from_pairs(3, &[(2, 0)]).unwrap();
        assert!(build_assignment(b, d, Some(z)).is_ok());
    }

    #[test]
    fn single_destination_single_bin() {
        // Two stations: α is forced to the swap, so the posterior is one
        // truncated-normal term per destination.
        let b = BinnedObservationSet::new(1, 1, 5.0, 0, 0, vec![4.0, 7.0], vec![6.0, 5.0], labels(2)).unwrap();
        let m = build_assignment(b, TravelTimeTable::zeros(2), None).unwrap();
        assert_eq!(m.layout().dim(), 2);
        let theta = [0.3f64.ln(), 2f64.ln()];
        let mut g = [0.0; 2];
        let lp = m.logp_grad(&theta, &mut g);
        let expect = truncnorm::ln_pdf(6.0, 7.0, 0.3) + truncnorm::ln_pdf(5.0, 4.0, 2.0) + theta[0] + theta[1];
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let b = random_binned(4, 3, 6, 2, 3);
        let d = random_delays(4, 2, 3);
        let m = build_assignment(b.clone(), d.clone(), None).unwrap();
        let theta = random_theta(m.layout().dim(), 3);
        let dec = m.layout().decode(&theta);
        let mut oracle = 0.0;
        for j in 0..4 {
            for n in 0..3 {
                for ta in 0..4 {
                    let mut mu = 0.0;
                    for i in 0..4 {
                        if i != j {
                            mu += dec.alpha.get(i, j) * b.x(n, ta + 2 - d.get(i, j) as usize, i);
                        }
                    }
                    oracle += truncnorm::ln_pdf(b.y(n, ta, j), mu, dec.sigma[j]);
                }
            }
        }
        let lp = m.log_posterior(&dec.alpha, &dec.sigma).unwrap();
        assert!((lp - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = random_binned(4, 5, 6, 2, 4);
        let m = build_assignment(b, random_delays(4, 2, 4), None)
            .unwrap()
            .with_concentration(1.3)
            .unwrap();
        let theta = random_point(m.layout(), 4);
        assert!(fd_check(&m, &theta) < 1e-6);
    }

    #[test]
    fn silent_destination_gets_prior_gradient_only() {
        // Station 0 never enters, so H_j columns of origin 0 are zero and the
        // stick parameters of row 0 see only the Jacobian.
        let s = 3;
        let mut b = random_binned(s, 2, 4, 1, 5);
        let xb: Vec<f64> = b
            .xb()
            .iter()
            .enumerate()
            .map(|(k, v)| if k % s == 0 { 0.0 } else { *v })
            .collect();
        b = BinnedObservationSet::new(2, 4, 5.0, 10, 11, xb, b.yb().to_vec(), labels(s)).unwrap();
        let m = build_assignment(b, random_delays(s, 1, 5), None).unwrap();
        let theta = random_theta(m.layout().dim(), 5);
        let mut g = vec![0.0; m.layout().dim()];
        m.logp_grad(&theta, &mut g);
        let y0 = &theta[0..s - 2];
        let mut gy = vec![0.0; s - 2];
        crate::sampler::transform::simplex_backward(y0, &[0.0, 0.0], &mut gy);
        for (a, b) in g[0..s - 2].iter().zip(&gy) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn per_bin_obs(b: &BinnedObservationSet) -> ObservationSet {
        let s = b.stations();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for n in 0..b.observations() {
            for t in 0..b.departure_bins() {
                x.push((0..s).map(|i| b.x(n, t, i)).collect::<Vec<_>>());
                y.push((0..s).map(|j| b.y(n, t, j)).collect::<Vec<_>>());
            }
        }
        ObservationSet::new(Matrix::from_rows(&x).unwrap(), Matrix::from_rows(&y).unwrap(), None).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn zero_delay_equals_instantaneous(seed in any::<u64>(), s in 2usize..6, n in 1usize..4, t in 1usize..5) {
            let b = random_binned(s, n, t, 0, seed);
            let ad = build_assignment(b.clone(), TravelTimeTable::zeros(s), None).unwrap();
            let ib = IbModel::new(per_bin_obs(&b), None)
                .unwrap()
                .with_regularization(false)
                .with_intercepts(false);
            prop_assert_eq!(ad.layout().dim(), ib.layout().dim());
            let theta = random_theta(ad.layout().dim(), seed);
            let mut ga = vec![0.0; theta.len()];
            let mut gi = vec![0.0; theta.len()];
            let la = ad.logp_grad(&theta, &mut ga);
            let li = ib.logp_grad(&theta, &mut gi);
            prop_assert!((la - li).abs() < 1e-10 * la.abs().max(1.0));
            for (a, b) in ga.iter().zip(&gi) {
                prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            }
        }

        #[test]
        fn lagged_columns_never_exceed_station_totals(seed in any::<u64>()) {
            let b = random_binned(4, 2, 6, 2, seed);
            let m = build_assignment(b.clone(), random_delays(4, 2, seed), None).unwrap();
            for j in 0..4 {
                for i in 0..4 {
                    let col: f64 = (0..m.assignment(j).rows()).map(|k| m.assignment(j).get(k, i)).sum();
                    let total: f64 = (0..2).flat_map(|n| (0..6).map(move |t| (n, t))).map(|(n, t)| b.x(n, t, i)).sum();
                    prop_assert!(col <= total);
                }
            }
        }
    }
}
