//! Unconstrained parameter vector of the OD models.
//!
//! Layout: one stick-breaking block per origin row over its admissible
//! destinations (K_i − 1 reals), then `ln σ_j` for every destination, then
//! the raw intercepts `r_j` when the model has them.

use crate::domain::{Matrix, ParamLayout, StructuralZeros};
use crate::error::{invalid, Error, Result};
use crate::sampler::transform::{simplex_backward, simplex_forward_into, simplex_inverse};

#[derive(Debug, Clone, PartialEq)]
pub struct OdLayout {
    stations: usize,
    free: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    n_stick: usize,
    intercepts: bool,
}

/// Constrained values decoded from an unconstrained point.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub alpha: Matrix,
    pub sigma: Vec<f64>,
    pub r: Vec<f64>,
    /// Stick-breaking and log-scale Jacobians.
    pub log_jacobian: f64,
}

impl OdLayout {
    pub fn new(stations: usize, zeros: &StructuralZeros, intercepts: bool) -> Result<Self> {
        if stations < 2 {
            return Err(invalid("need at least 2 stations"));
        }
        if zeros.size() != stations {
            return Err(Error::Shape("structural-zero mask size".into()));
        }
        let free: Vec<Vec<usize>> = (0..stations).map(|i| zeros.free_destinations(i)).collect();
        if let Some(i) = free.iter().position(Vec::is_empty) {
            return Err(invalid(format!("row {i} has no admissible destination")));
        }
        let mut offsets = Vec::with_capacity(stations);
        let mut n = 0;
        for f in &free {
            offsets.push(n);
            n += f.len() - 1;
        }
        Ok(Self {
            stations,
            free,
            offsets,
            n_stick: n,
            intercepts,
        })
    }

    pub fn stations(&self) -> usize {
        self.stations
    }
    pub fn intercepts(&self) -> bool {
        self.intercepts
    }
    pub fn free(&self, i: usize) -> &[usize] {
        &self.free[i]
    }
    pub fn stick_len(&self) -> usize {
        self.n_stick
    }
    pub fn sigma_offset(&self) -> usize {
        self.n_stick
    }
    pub fn intercept_offset(&self) -> usize {
        self.n_stick + self.stations
    }

    pub fn dim(&self) -> usize {
        self.n_stick + self.stations + if self.intercepts { self.stations } else { 0 }
    }

    pub fn param_layout(&self) -> ParamLayout {
        ParamLayout::Od {
            stations: self.stations,
            intercepts: self.intercepts,
        }
    }

    fn row_params<'a>(&self, theta: &'a [f64], i: usize) -> &'a [f64] {
        &theta[self.offsets[i]..self.offsets[i] + self.free[i].len() - 1]
    }

    pub fn decode(&self, theta: &[f64]) -> Decoded {
        let s = self.stations;
        let mut alpha = Matrix::zeros(s, s);
        let mut log_jacobian = 0.0;
        let mut buf = Vec::new();
        for i in 0..s {
            let f = &self.free[i];
            buf.resize(f.len(), 0.0);
            log_jacobian += simplex_forward_into(self.row_params(theta, i), &mut buf);
            for (&j, &v) in f.iter().zip(&buf) {
                alpha.set(i, j, v);
            }
        }
        let ls = &theta[self.sigma_offset()..self.sigma_offset() + s];
        log_jacobian += ls.iter().sum::<f64>();
        let sigma = ls.iter().map(|v| v.exp()).collect();
        let r = if self.intercepts {
            theta[self.intercept_offset()..self.intercept_offset() + s].to_vec()
        } else {
            vec![0.0; s]
        };
        Decoded {
            alpha,
            sigma,
            r,
            log_jacobian,
        }
    }

    /// Pulls gradients with respect to the constrained values back to
    /// `theta`, adding the Jacobian terms. `g_alpha` is dense S×S; only
    /// admissible cells are read.
    pub fn backprop(
        &self,
        theta: &[f64],
        d: &Decoded,
        g_alpha: &Matrix,
        g_sigma: &[f64],
        g_r: &[f64],
        grad: &mut [f64],
    ) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gx = Vec::new();
        for i in 0..self.stations {
            let f = &self.free[i];
            gx.clear();
            gx.extend(f.iter().map(|&j| g_alpha.get(i, j)));
            let off = self.offsets[i];
            simplex_backward(self.row_params(theta, i), &gx, &mut grad[off..off + f.len() - 1]);
        }
        let so = self.sigma_offset();
        for j in 0..self.stations {
            grad[so + j] = g_sigma[j] * d.sigma[j] + 1.0;
        }
        if self.intercepts {
            let ro = self.intercept_offset();
            grad[ro..ro + self.stations].copy_from_slice(g_r);
        }
    }

    /// Flattened constrained draw in [`ParamLayout::Od`] order.
    pub fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.decode(theta);
        let mut out = Vec::with_capacity(self.param_layout().len());
        out.extend_from_slice(d.alpha.as_slice());
        out.extend_from_slice(&d.sigma);
        if self.intercepts {
            out.extend_from_slice(&d.r);
        }
        out
    }

    /// Inverse of [`decode`](Self::decode) for strictly interior rows.
    pub fn unconstrain(&self, alpha: &Matrix, sigma: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.dim()];
        for i in 0..self.stations {
            let x: Vec<f64> = self.free[i].iter().map(|&j| alpha.get(i, j)).collect();
            let (y, _) = simplex_inverse(&x)?;
            theta[self.offsets[i]..self.offsets[i] + y.len()].copy_from_slice(&y);
        }
        for j in 0..self.stations {
            if !(sigma[j] > 0.0) {
                return Err(Error::NonPositiveScale(sigma[j]));
            }
            theta[self.sigma_offset() + j] = sigma[j].ln();
            if self.intercepts {
                theta[self.intercept_offset() + j] = r[j];
            }
        }
        Ok(theta)
    }

    /// Sum of `ln α` over admissible cells (the Dirichlet kernel).
    pub fn sum_log_alpha(&self, alpha: &Matrix) -> f64 {
        (0..self.stations)
            .map(|i| self.free[i].iter().map(|&j| alpha.get(i, j).ln()).sum::<f64>())
            .sum()
    }

    /// Adds the gradient of `(c − 1)·Σ ln α` to `g_alpha`.
    pub fn add_dirichlet_grad(&self, alpha: &Matrix, c: f64, g_alpha: &mut Matrix) {
        if c == 1.0 {
            return;
        }
        for i in 0..self.stations {
            for &j in &self.free[i] {
                g_alpha.add_to(i, j, (c - 1.0) / alpha.get(i, j));
            }
        }
    }
}
