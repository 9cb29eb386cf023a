//! Instantaneous-balance model: exits of one observation are explained by the
//! entries of the same observation, `y_j ~ N⁺(Σ_i α_ij x_i + r_j, σ_j)`.

use rayon::prelude::*;

use super::layout::OdLayout;
use super::truncnorm;
use crate::domain::{Matrix, ObservationSet, OdMatrix, ParamLayout, PosteriorDraws, StructuralZeros};
use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;
use crate::sampler::LogDensity;

/// Constrained parameters of the instantaneous-balance model.
#[derive(Debug, Clone, PartialEq)]
pub struct IbParams {
    pub alpha: Matrix,
    pub sigma: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct IbModel {
    obs: ObservationSet,
    xbar: Vec<f64>,
    ybar: Vec<f64>,
    dirichlet_c: f64,
    zeros: StructuralZeros,
    regularized: bool,
    layout: OdLayout,
}

/// Location vector `μ_j = Σ_i α_ij x_i + r_j`.
pub fn ib_mu(alpha: &Matrix, x: &[f64], r: &[f64]) -> Vec<f64> {
    let mut mu = alpha.vec_mul(x);
    for (m, v) in mu.iter_mut().zip(r) {
        *m += v;
    }
    mu
}

/// Point prediction without intercepts, `x̄ᵀ Ā`.
pub fn ib_predict_uncorrected(a_mean: &OdMatrix, xbar: &[f64]) -> Vec<f64> {
    a_mean.alpha().vec_mul(xbar)
}

impl IbModel {
    /// Regularized model with intercepts and a flat Dirichlet prior.
    pub fn new(obs: ObservationSet, zeros: Option<StructuralZeros>) -> Result<Self> {
        let s = obs.stations();
        if obs.observations() == 0 {
            return Err(invalid("need at least one observation"));
        }
        let zeros = zeros.unwrap_or_else(|| StructuralZeros::none(s));
        let layout = OdLayout::new(s, &zeros, true)?;
        Ok(Self {
            xbar: obs.x().column_means(),
            ybar: obs.y().column_means(),
            obs,
            dirichlet_c: 1.0,
            zeros,
            regularized: true,
            layout,
        })
    }

    pub fn with_concentration(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("Dirichlet concentration must be positive, got {c}")));
        }
        self.dirichlet_c = c;
        Ok(self)
    }

    /// Toggles the minimal-bias and expected-value terms.
    pub fn with_regularization(mut self, on: bool) -> Self {
        self.regularized = on;
        self
    }

    /// Drops the intercepts `r` from the parameter vector (they are then 0).
    pub fn with_intercepts(mut self, on: bool) -> Self {
        self.layout = OdLayout::new(self.stations(), &self.zeros, on).expect("validated at construction");
        self
    }

    pub fn stations(&self) -> usize {
        self.obs.stations()
    }
    pub fn obs(&self) -> &ObservationSet {
        &self.obs
    }
    pub fn xbar(&self) -> &[f64] {
        &self.xbar
    }
    pub fn ybar(&self) -> &[f64] {
        &self.ybar
    }
    pub fn concentration(&self) -> f64 {
        self.dirichlet_c
    }
    pub fn regularized(&self) -> bool {
        self.regularized
    }
    pub fn structural_zeros(&self) -> &StructuralZeros {
        &self.zeros
    }
    pub fn layout(&self) -> &OdLayout {
        &self.layout
    }

    fn check_params(&self, p: &IbParams) -> Result<()> {
        let s = self.stations();
        if p.alpha.rows() != s || p.alpha.cols() != s || p.sigma.len() != s || p.r.len() != s {
            return Err(Error::Shape("parameter dimensions do not match the model".into()));
        }
        if let Some(v) = p.sigma.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveScale(*v));
        }
        Ok(())
    }

    /// Log posterior in constrained coordinates, up to a constant and without
    /// transform Jacobians.
    pub fn log_posterior(&self, p: &IbParams) -> Result<f64> {
        self.check_params(p)?;
        let s = self.stations();
        let mut lp = 0.0;
        for n in 0..self.obs.observations() {
            let mu = ib_mu(&p.alpha, self.obs.x().row(n), &p.r);
            for j in 0..s {
                lp += truncnorm::ln_pdf(self.obs.y().get(n, j), mu[j], p.sigma[j]);
            }
        }
        if self.dirichlet_c != 1.0 {
            lp += (self.dirichlet_c - 1.0) * self.layout.sum_log_alpha(&p.alpha);
        }
        if self.regularized {
            lp -= p.r.iter().map(|r| r * r).sum::<f64>();
            let mbar = p.alpha.vec_mul(&self.xbar);
            for j in 0..s {
                lp += truncnorm::ln_pdf(self.ybar[j], mbar[j], p.sigma[j]);
            }
        }
        Ok(lp)
    }

    /// Log density in unconstrained coordinates (Jacobians included) and its
    /// gradient.
    pub fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let s = self.stations();
        let d = self.layout.decode(theta);
        let mut g_alpha = Matrix::zeros(s, s);
        let mut g_sigma = vec![0.0; s];
        let mut g_r = vec![0.0; s];
        let mut lp = 0.0;
        let mut g_mu = vec![0.0; s];
        let inv: Vec<f64> = d.sigma.iter().map(|v| 1.0 / v).collect();
        lp -= self.obs.observations() as f64 * d.sigma.iter().map(|v| v.ln()).sum::<f64>();
        let mut mu = vec![0.0; s];
        for n in 0..self.obs.observations() {
            let x = self.obs.x().row(n);
            mu.copy_from_slice(&d.r);
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    for (m, a) in mu.iter_mut().zip(d.alpha.row(i)) {
                        *m += xi * a;
                    }
                }
            }
            let y = self.obs.y().row(n);
            for j in 0..s {
                let (l, dm, ds) = truncnorm::ln_pdf_grad_scaled(y[j], mu[j], inv[j]);
                lp += l;
                g_mu[j] = dm;
                g_sigma[j] += ds;
                g_r[j] += dm;
            }
            accumulate_outer(&mut g_alpha, x, &g_mu);
        }
        if self.dirichlet_c != 1.0 {
            lp += (self.dirichlet_c - 1.0) * self.layout.sum_log_alpha(&d.alpha);
            self.layout.add_dirichlet_grad(&d.alpha, self.dirichlet_c, &mut g_alpha);
        }
        if self.regularized {
            for j in 0..s {
                lp -= d.r[j] * d.r[j];
                g_r[j] -= 2.0 * d.r[j];
            }
            let mbar = d.alpha.vec_mul(&self.xbar);
            for j in 0..s {
                let (l, dm, ds) = truncnorm::ln_pdf_grad(self.ybar[j], mbar[j], d.sigma[j]);
                lp += l;
                g_mu[j] = dm;
                g_sigma[j] += ds;
            }
            accumulate_outer(&mut g_alpha, &self.xbar, &g_mu);
        }
        self.layout.backprop(theta, &d, &g_alpha, &g_sigma, &g_r, grad);
        lp + d.log_jacobian
    }

    pub fn decode(&self, theta: &[f64]) -> IbParams {
        let d = self.layout.decode(theta);
        IbParams {
            alpha: d.alpha,
            sigma: d.sigma,
            r: d.r,
        }
    }
}

/// `g[i][j] += x_i · v_j`.
fn accumulate_outer(g: &mut Matrix, x: &[f64], v: &[f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &vj) in g.row_mut(i).iter_mut().zip(v) {
            *o += xi * vj;
        }
    }
}

impl LogDensity for IbModel {
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

/// For each retained draw, samples `y ~ N⁺(μ, σ)` at the entry vector `x`.
/// Returns a `draws × S` matrix.
pub fn ib_posterior_predictive(draws: &PosteriorDraws, x: &[f64], seed: u64) -> Result<Matrix> {
    let s = draws
        .layout()
        .stations()
        .ok_or_else(|| invalid("predictive sampling needs an OD parameter layout"))?;
    if x.len() != s {
        return Err(Error::Shape(format!("entry vector has {} values for {s} stations", x.len())));
    }
    let rows: Vec<Vec<f64>> = draws
        .chains()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(c, ch)| {
            let mut rng = rng_from(seed, &[c as u64]);
            ch.values
                .iter()
                .map(|v| {
                    let alpha = Matrix::from_vec(s, s, v[..s * s].to_vec()).expect("layout");
                    let sigma = &v[s * s..s * s + s];
                    let r = if v.len() >= s * s + 2 * s {
                        v[s * s + s..s * s + 2 * s].to_vec()
                    } else {
                        vec![0.0; s]
                    };
                    let mu = ib_mu(&alpha, x, &r);
                    (0..s)
                        .map(|j| truncnorm::sample(mu[j], sigma[j], &mut rng))
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::from_rows(&rows)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::ChainTrace;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn swap_obs() -> ObservationSet {
        ObservationSet::new(
            Matrix::from_rows(&[vec![10.0, 20.0]]).unwrap(),
            Matrix::from_rows(&[vec![20.0, 10.0]]).unwrap(),
            None,
        )
        .unwrap()
    }

    fn swap_params(r: f64) -> IbParams {
        IbParams {
            alpha: Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            sigma: vec![1.0, 1.0],
            r: vec![r, r],
        }
    }

    pub(crate) fn random_obs(s: usize, n: usize, seed: u64) -> ObservationSet {
        let mut rng = rng_from(seed, &[]);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..s).map(|_| rng.random_range(0..40) as f64).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..s).map(|_| rng.random_range(0..40) as f64).collect())
            .collect();
        ObservationSet::new(Matrix::from_rows(&x).unwrap(), Matrix::from_rows(&y).unwrap(), None).unwrap()
    }

    /// Random unconstrained point with sticks and intercepts on (−2, 2) and
    /// scales on (e^0.5, e^3), where the log density stays small enough for
    /// central differences to resolve unit-sized gradients.
    pub(crate) fn random_point(l: &OdLayout, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[1]);
        let mut theta: Vec<f64> = (0..l.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        for j in 0..l.stations() {
            theta[l.sigma_offset() + j] = rng.random_range(0.5..3.0);
        }
        theta
    }

    fn naive_mu(alpha: &Matrix, x: &[f64], r: &[f64]) -> Vec<f64> {
        let s = x.len();
        (0..s)
            .map(|j| {
                let mut m = r[j];
                for i in 0..s {
                    if i != j {
                        m += alpha.get(i, j) * x[i];
                    }
                }
                m
            })
            .collect()
    }

    pub(crate) fn fd_check<D: LogDensity>(m: &D, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; m.dim()];
        m.logp_grad(theta, &mut g);
        let mut scratch = vec![0.0; m.dim()];
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..theta.len() {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[k] += h;
            tm[k] -= h;
            let fd = (m.logp_grad(&tp, &mut scratch) - m.logp_grad(&tm, &mut scratch)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / 1f64.max(fd.abs()).max(g[k].abs());
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn mu_examples() {
        let p = swap_params(0.0);
        assert_eq!(ib_mu(&p.alpha, &[10.0, 20.0], &p.r), vec![20.0, 10.0]);
        let a = OdMatrix::uniform(3, None).unwrap();
        assert_eq!(ib_mu(a.alpha(), &[0.0; 3], &[5.0; 3]), vec![5.0; 3]);
    }

    #[test]
    fn mu_matches_double_loop() {
        let mut rng = rng_from(3, &[]);
        let s = 4;
        let mut alpha = Matrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    alpha.set(i, j, rng.random::<f64>());
                }
            }
        }
        let x: Vec<f64> = (0..s).map(|_| rng.random::<f64>() * 50.0).collect();
        let r: Vec<f64> = (0..s).map(|_| rng.random::<f64>() - 0.5).collect();
        for (a, b) in ib_mu(&alpha, &x, &r).iter().zip(naive_mu(&alpha, &x, &r)) {
            assert!((a - b).abs() < 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn swap_log_posterior() {
        let m = IbModel::new(swap_obs(), None).unwrap().with_regularization(false);
        let lp = m.log_posterior(&swap_params(0.0)).unwrap();
        assert!((lp - (-1.8378770664093453)).abs() < 1e-9, "{lp}");
    }

    #[test]
    fn intercept_penalty_is_minus_sum_of_squares() {
        let reg = IbModel::new(swap_obs(), None).unwrap();
        let plain = reg.clone().with_regularization(false);
        let extra = |r: f64| {
            reg.log_posterior(&swap_params(r)).unwrap() - plain.log_posterior(&swap_params(r)).unwrap()
        };
        assert!((extra(1.0) - extra(0.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_at_zero_mean_adds_ln2() {
        let lp = truncnorm::ln_pdf(0.0, 0.0, 1.0);
        assert!((lp - (-0.9189385332046727 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn sigma_validation() {
        let m = IbModel::new(swap_obs(), None).unwrap();
        let mut p = swap_params(0.0);
        p.sigma[0] = 0.0;
        assert!(matches!(m.log_posterior(&p), Err(Error::NonPositiveScale(_))));
    }

    #[test]
    fn unconstrained_density_adds_jacobian() {
        let m = IbModel::new(random_obs(4, 6, 1), None).unwrap().with_concentration(1.7).unwrap();
        let mut rng = rng_from(5, &[]);
        let theta: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = m.layout().decode(&theta);
        let mut g = vec![0.0; m.dim()];
        let u = m.logp_grad(&theta, &mut g);
        let c = m.log_posterior(&m.decode(&theta)).unwrap();
        assert!((u - c - d.log_jacobian).abs() < 1e-9);
    }

    #[test]
    fn intercept_gradient_of_penalty() {
        // With no data influence on r (σ huge), ∂/∂r_j ≈ −2 r_j.
        let m = IbModel::new(swap_obs(), None).unwrap();
        let l = m.layout();
        let mut theta = vec![0.0; m.dim()];
        for j in 0..2 {
            theta[l.sigma_offset() + j] = 30.0;
            theta[l.intercept_offset() + j] = 0.7 * (j as f64 + 1.0);
        }
        let mut g = vec![0.0; m.dim()];
        m.logp_grad(&theta, &mut g);
        for j in 0..2 {
            assert!((g[l.intercept_offset() + j] + 2.0 * theta[l.intercept_offset() + j]).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_s5_n10() {
        let m = IbModel::new(random_obs(5, 10, 11), None).unwrap();
        let theta = random_point(m.layout(), 12);
        assert!(fd_check(&m, &theta) < 1e-6);
    }

    #[test]
    fn sigma_gradient_at_exact_fit() {
        // y = μ exactly: only −1/σ, the truncation correction and the log-σ
        // Jacobian remain.
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![3.0, 5.0], vec![4.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[a.vec_mul(x.row(0)), a.vec_mul(x.row(1))]).unwrap();
        let m = IbModel::new(ObservationSet::new(x, y, None).unwrap(), None)
            .unwrap()
            .with_regularization(false)
            .with_intercepts(false);
        let theta = m.layout().unconstrain(&a, &[2.0, 2.0], &[0.0, 0.0]).unwrap();
        let mut g = vec![0.0; m.dim()];
        m.logp_grad(&theta, &mut g);
        let p = m.decode(&theta);
        let s = m.layout().sigma_offset();
        for j in 0..2 {
            let mut expect = 0.0;
            for n in 0..2 {
                let mu = ib_mu(&p.alpha, m.obs().x().row(n), &p.r)[j];
                expect += truncnorm::ln_pdf_grad(m.obs().y().get(n, j), mu, 2.0).2;
            }
            assert!((g[s + j] - (expect * 2.0 + 1.0)).abs() < 1e-10);
        }
        assert!(fd_check(&m, &theta) < 1e-6);
    }

    #[test]
    fn zeros_and_concentration_gradients() {
        let z = StructuralZeros::from_pairs(4, &[(0, 2), (3, 1)]).unwrap();
        let m = IbModel::new(random_obs(4, 7, 2), Some(z))
            .unwrap()
            .with_concentration(0.6)
            .unwrap();
        let theta = random_point(m.layout(), 4);
        assert!(fd_check(&m, &theta) < 1e-6);
        assert_eq!(m.decode(&theta).alpha.get(0, 2), 0.0);
    }

    #[test]
    fn predictive_collapses_for_tiny_sigma() {
        let s = 2;
        let mut v = vec![0.0, 1.0, 1.0, 0.0, 1e-9, 1e-9, 0.0, 0.0];
        v[6] = 0.5;
        let trace = ChainTrace {
            values: vec![v],
            divergent: vec![false],
            tree_depth: vec![1],
            step_size: vec![0.1],
            accept_stat: vec![1.0],
        };
        let draws = PosteriorDraws::new(
            ParamLayout::Od {
                stations: s,
                intercepts: true,
            },
            10,
            vec![trace],
            vec![],
        )
        .unwrap();
        let pred = ib_posterior_predictive(&draws, &[10.0, 20.0], 1).unwrap();
        assert!((pred.get(0, 0) - 20.5).abs() < 1e-6);
        assert!((pred.get(0, 1) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn predictive_mean_matches_truncated_moment() {
        let v = vec![0.0, 1.0, 1.0, 0.0, 3.0, 2.0];
        let n = 10_000;
        let trace = ChainTrace {
            values: vec![v; n],
            divergent: vec![false; n],
            tree_depth: vec![1; n],
            step_size: vec![0.1; n],
            accept_stat: vec![1.0; n],
        };
        let draws = PosteriorDraws::new(
            ParamLayout::Od {
                stations: 2,
                intercepts: false,
            },
            10,
            vec![trace],
            vec![],
        )
        .unwrap();
        let x = [0.5, 1.0];
        let pred = ib_posterior_predictive(&draws, &x, 9).unwrap();
        let means = pred.column_means();
        for (j, (mu, sd)) in [(1.0, 3.0), (0.5, 2.0)].into_iter().enumerate() {
            let exact = truncnorm::mean(mu, sd);
            // Standard deviation of N⁺ is below σ, so 4σ/√n bounds the MC error.
            assert!((means[j] - exact).abs() < 4.0 * sd / (n as f64).sqrt(), "{j}");
        }
    }

    #[test]
    fn uncorrected_prediction() {
        let a = OdMatrix::uniform(3, None).unwrap();
        let xbar = [3.0, 6.0, 9.0];
        let p = ib_predict_uncorrected(&a, &xbar);
        for j in 0..3 {
            assert!((p[j] - (18.0 - xbar[j]) / 2.0).abs() < 1e-14);
        }
        let perm = OdMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(ib_predict_uncorrected(&perm, &xbar), vec![9.0, 3.0, 6.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn gradient_agrees_with_fd(s in 2usize..=8, n in 1usize..=20, seed in any::<u64>(), reg in any::<bool>()) {
            let m = IbModel::new(random_obs(s, n, seed), None).unwrap().with_regularization(reg);
            let theta = random_point(m.layout(), seed);
            prop_assert!(fd_check(&m, &theta) < 1e-6);
        }

        #[test]
        fn invariant_under_observation_relabeling(seed in any::<u64>()) {
            let obs = random_obs(4, 6, seed);
            let m = IbModel::new(obs.clone(), None).unwrap();
            let perm = [3usize, 0, 5, 1, 4, 2];
            let x: Vec<Vec<f64>> = perm.iter().map(|&k| obs.x().row(k).to_vec()).collect();
            let y: Vec<Vec<f64>> = perm.iter().map(|&k| obs.y().row(k).to_vec()).collect();
            let m2 = IbModel::new(
                ObservationSet::new(Matrix::from_rows(&x).unwrap(), Matrix::from_rows(&y).unwrap(), None).unwrap(),
                None,
            ).unwrap();
            let mut rng = rng_from(seed, &[2]);
            let theta: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut g = vec![0.0; m.dim()];
            let a = m.logp_grad(&theta, &mut g);
            let b = m2.logp_grad(&theta, &mut g);
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}
