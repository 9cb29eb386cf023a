//! Constrained least-squares point estimate of the OD matrix.
//!
//! Minimises `Σ ε² + Σ r² + Σ e²` over row-simplex `A` with
//! `ε_nj = (XA)_nj + r_j − y_nj` and `e_j = (x̄ᵀA)_j − ȳ_j`. The intercepts
//! have the closed form `r_j = −Σ_n ε⁰_nj / (N + 1)` for fixed `A`, so the
//! solver runs monotone FISTA on `A` alone with exact simplex projections.

use serde::{Deserialize, Serialize};

use crate::domain::{Matrix, ObservationSet, OdMatrix, StructuralZeros};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpOptions {
    /// Relative objective decrease over `window` iterations that counts as
    /// converged.
    pub tolerance: f64,
    pub window: usize,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            window: 50,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub a_hat: OdMatrix,
    pub r_hat: Vec<f64>,
    pub objective: f64,
    /// `ε` as an N×S matrix.
    pub residuals: Matrix,
    pub e: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the projected-gradient step, scaled by the Lipschitz constant.
    pub kkt_residual: f64,
    pub regularized: bool,
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// Euclidean projection of `v` onto the probability simplex, in place.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    xbar: Vec<f64>,
    ybar: Vec<f64>,
    free: Vec<Vec<usize>>,
    regularized: bool,
}

impl Problem<'_> {
    fn stations(&self) -> usize {
        self.x.cols()
    }

    /// Raw residuals `XA − Y`, the optimal intercepts, and `x̄ᵀA − ȳ`.
    fn residuals(&self, a: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let n = self.x.rows();
        let s = self.stations();
        let mut eps = self.x.matmul(a).expect("shapes checked");
        for k in 0..n {
            for (e, y) in eps.row_mut(k).iter_mut().zip(self.y.row(k)) {
                *e -= y;
            }
        }
        let e: Vec<f64> = a.vec_mul(&self.xbar).iter().zip(&self.ybar).map(|(m, y)| m - y).collect();
        let r = if self.regularized {
            let mut r = vec![0.0; s];
            for k in 0..n {
                for (rj, v) in r.iter_mut().zip(eps.row(k)) {
                    *rj -= v;
                }
            }
            r.iter_mut().for_each(|v| *v /= (n + 1) as f64);
            for k in 0..n {
                for (v, rj) in eps.row_mut(k).iter_mut().zip(&r) {
                    *v += rj;
                }
            }
            r
        } else {
            vec![0.0; s]
        };
        (eps, r, e)
    }

    fn objective_grad(&self, a: &Matrix, grad: Option<&mut Matrix>) -> f64 {
        let (eps, r, e) = self.residuals(a);
        let mut f: f64 = eps.as_slice().iter().map(|v| v * v).sum();
        if self.regularized {
            f += r.iter().map(|v| v * v).sum::<f64>() + e.iter().map(|v| v * v).sum::<f64>();
        }
        if let Some(g) = grad {
            let s = self.stations();
            *g = Matrix::zeros(s, s);
            for k in 0..self.x.rows() {
                let xr = self.x.row(k);
                let er = eps.row(k);
                for i in 0..s {
                    if xr[i] == 0.0 {
                        continue;
                    }
                    for (gv, ev) in g.row_mut(i).iter_mut().zip(er) {
                        *gv += 2.0 * xr[i] * ev;
                    }
                }
            }
            if self.regularized {
                for i in 0..s {
                    for (gv, ev) in g.row_mut(i).iter_mut().zip(&e) {
                        *gv += 2.0 * self.xbar[i] * ev;
                    }
                }
            }
        }
        f
    }

    fn project(&self, a: &mut Matrix) {
        let s = self.stations();
        let mut buf = Vec::new();
        for i in 0..s {
            buf.clear();
            buf.extend(self.free[i].iter().map(|&j| a.get(i, j)));
            project_simplex(&mut buf);
            let row = a.row_mut(i);
            row.iter_mut().for_each(|v| *v = 0.0);
            for (&j, &v) in self.free[i].iter().zip(&buf) {
                row[j] = v;
            }
        }
    }

    /// Largest eigenvalue of the Hessian bound `2(XᵀX + x̄x̄ᵀ)` by power
    /// iteration.
    fn lipschitz(&self) -> f64 {
        let s = self.stations();
        let mut gram = Matrix::zeros(s, s);
        for k in 0..self.x.rows() {
            let xr = self.x.row(k);
            for i in 0..s {
                for j in 0..s {
                    gram.add_to(i, j, xr[i] * xr[j]);
                }
            }
        }
        if self.regularized {
            for i in 0..s {
                for j in 0..s {
                    gram.add_to(i, j, self.xbar[i] * self.xbar[j]);
                }
            }
        }
        let mut v = vec![1.0 / (s as f64).sqrt(); s];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = gram.vec_mul(&v);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            let next = norm;
            v = w.iter().map(|x| x / norm).collect();
            if (next - lambda).abs() <= 1e-12 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        // Small safety margin against an underestimated eigenvalue.
        2.0 * lambda * 1.01
    }
}

/// Solves the constrained least-squares problem. With `regularized = false`
/// the intercept and expected-value terms are dropped and `r = 0`.
pub fn solve_qp(
    obs: &ObservationSet,
    zeros: Option<&StructuralZeros>,
    regularized: bool,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let s = obs.stations();
    if obs.observations() == 0 {
        return Err(invalid("need at least one observation"));
    }
    if opts.window == 0 || opts.max_iter == 0 {
        return Err(invalid("QP window and iteration cap must be positive"));
    }
    let zeros = zeros.cloned().unwrap_or_else(|| StructuralZeros::none(s));
    let start = OdMatrix::uniform(s, Some(zeros.clone()))?;
    let p = Problem {
        x: obs.x(),
        y: obs.y(),
        xbar: obs.x().column_means(),
        ybar: obs.y().column_means(),
        free: (0..s).map(|i| zeros.free_destinations(i)).collect(),
        regularized,
    };
    let lip = p.lipschitz();
    let mut a = start.alpha().clone();
    let mut f = p.objective_grad(&a, None);
    let mut yk = a.clone();
    let mut t = 1.0f64;
    let mut g = Matrix::zeros(s, s);
    let mut history = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        p.objective_grad(&yk, Some(&mut g));
        let mut z = yk.clone();
        for (zv, gv) in z.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *zv -= gv / lip;
        }
        p.project(&mut z);
        let fz = p.objective_grad(&z, None);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let prev = a.clone();
        if fz <= f {
            a = z.clone();
            f = fz;
        }
        // Monotone FISTA extrapolation.
        let c1 = t / t_next;
        let c2 = (t - 1.0) / t_next;
        let mut next_y = a.clone();
        for (((yv, av), zv), pv) in next_y.as_mut_slice()
            .iter_mut()
            .zip(a.as_slice())
            .zip(z.as_slice())
            .zip(prev.as_slice())
        {
            *yv = av + c1 * (zv - av) + c2 * (av - pv);
        }
        yk = next_y;
        t = t_next;
        history.push(f);
        if it >= opts.window {
            let old = history[it - opts.window];
            if old - f <= opts.tolerance * old.abs() {
                converged = true;
                break;
            }
        }
    }
    p.objective_grad(&a, Some(&mut g));
    let mut step = a.clone();
    for (sv, gv) in step.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *sv -= gv / lip;
    }
    p.project(&mut step);
    let kkt_residual = lip
        * step
            .as_slice()
            .iter()
            .zip(a.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
    let (residuals, r_hat, e) = p.residuals(&a);
    Ok(QpSolution {
        a_hat: OdMatrix::new_unchecked(a, Some(zeros)),
        r_hat,
        objective: f,
        residuals,
        e,
        iterations,
        converged,
        kkt_residual,
        regularized,
        history,
    })
}
