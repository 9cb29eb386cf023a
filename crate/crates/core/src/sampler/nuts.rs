//! Multinomial NUTS with a diagonal metric and the generalised U-turn check.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::adapt::{DualAveraging, WarmupSchedule, WelfordVar};
use super::{LogDensity, SamplerConfig};
use crate::domain::{AdaptationSummary, ChainTrace, PosteriorDraws};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;
const INIT_RADIUS: f64 = 2.0;

/// Uniform draw on `(−2, 2)ᵈ` from the chain's own stream.
pub fn init_point(dim: usize, seed: u64, chain: usize) -> Vec<f64> {
    let mut rng = rng_from(seed, &[chain as u64, 0x1417]);
    (0..dim).map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS)).collect()
}

#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Momenta at both ends of a trajectory segment, in spatial order.
#[derive(Debug, Clone)]
struct Edges {
    sharp_l: Vec<f64>,
    sharp_r: Vec<f64>,
    p_l: Vec<f64>,
    p_r: Vec<f64>,
    rho: Vec<f64>,
}

struct Subtree {
    edges: Edges,
    propose: State,
    log_sum_weight: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_u_turn(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0
}

/// Joins two adjacent segments and applies the U-turn check to the union
/// and to both one-step extensions across the seam.
fn merge(left: &Edges, right: &Edges) -> (bool, Edges) {
    let rho = add(&left.rho, &right.rho);
    let mut ok = no_u_turn(&left.sharp_l, &right.sharp_r, &rho);
    ok &= no_u_turn(&left.sharp_l, &right.sharp_l, &add(&left.rho, &right.p_l));
    ok &= no_u_turn(&left.sharp_r, &right.sharp_r, &add(&right.rho, &left.p_r));
    (
        ok,
        Edges {
            sharp_l: left.sharp_l.clone(),
            sharp_r: right.sharp_r.clone(),
            p_l: left.p_l.clone(),
            p_r: right.p_r.clone(),
            rho,
        },
    )
}

/// Per-iteration statistics of one transition.
#[derive(Debug, Clone, Copy)]
struct Transition {
    depth: u32,
    divergent: bool,
    accept_stat: f64,
}

struct Integrator<'a, D: LogDensity> {
    density: &'a D,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: u32,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

impl<D: LogDensity> Integrator<'_, D> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &State) -> f64 {
        -z.logp + self.kinetic(&z.p)
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&self, rng: &mut Rng, p: &mut [f64]) {
        for (p, m) in p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut State, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.density.logp_grad(&z.q, &mut z.grad);
        if z.grad.iter().any(|g| !g.is_finite()) {
            z.logp = f64::NEG_INFINITY;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    /// Builds a subtree of `2^depth` steps from `z` (which is advanced to
    /// the new outer edge). `None` marks a divergence or an internal U-turn.
    fn build_tree(&mut self, depth: u32, z: &mut State, sign: f64, h0: f64, rng: &mut Rng) -> Option<Subtree> {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let mut h = self.hamiltonian(z);
            if h.is_nan() || !z.logp.is_finite() {
                h = f64::INFINITY;
            }
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            let delta = h0 - h;
            self.sum_metro += if delta > 0.0 { 1.0 } else { delta.exp() };
            if self.divergent {
                return None;
            }
            let sharp = self.sharp(&z.p);
            return Some(Subtree {
                edges: Edges {
                    sharp_l: sharp.clone(),
                    sharp_r: sharp,
                    p_l: z.p.clone(),
                    p_r: z.p.clone(),
                    rho: z.p.clone(),
                },
                propose: z.clone(),
                log_sum_weight: delta,
            });
        }
        let inner = self.build_tree(depth - 1, z, sign, h0, rng)?;
        let outer = self.build_tree(depth - 1, z, sign, h0, rng)?;
        let lsw = log_sum_exp(inner.log_sum_weight, outer.log_sum_weight);
        let take_outer = rng.random::<f64>() < (outer.log_sum_weight - lsw).exp();
        let (ok, edges) = if sign > 0.0 {
            merge(&inner.edges, &outer.edges)
        } else {
            merge(&outer.edges, &inner.edges)
        };
        if !ok {
            return None;
        }
        Some(Subtree {
            edges,
            propose: if take_outer { outer.propose } else { inner.propose },
            log_sum_weight: lsw,
        })
    }

    fn transition(&mut self, current: &mut State, rng: &mut Rng) -> Transition {
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;
        self.sample_momentum(rng, &mut current.p);
        let h0 = self.hamiltonian(current);
        let sharp = self.sharp(&current.p);
        let mut tree = Edges {
            sharp_l: sharp.clone(),
            sharp_r: sharp,
            p_l: current.p.clone(),
            p_r: current.p.clone(),
            rho: current.p.clone(),
        };
        let mut z_left = current.clone();
        let mut z_right = current.clone();
        let mut sample = current.clone();
        let mut lsw = 0.0;
        let mut depth = 0;
        while depth < self.max_depth {
            let forward = rng.random::<bool>();
            let sub = if forward {
                let s = self.build_tree(depth, &mut z_right, 1.0, h0, rng);
                s.map(|s| (merge(&tree, &s.edges), s))
            } else {
                let s = self.build_tree(depth, &mut z_left, -1.0, h0, rng);
                s.map(|s| (merge(&s.edges, &tree), s))
            };
            let Some(((ok, merged), sub)) = sub else { break };
            depth += 1;
            if sub.log_sum_weight > lsw || rng.random::<f64>() < (sub.log_sum_weight - lsw).exp() {
                sample = sub.propose;
            }
            lsw = log_sum_exp(lsw, sub.log_sum_weight);
            tree = merged;
            if !ok {
                break;
            }
        }
        *current = sample;
        Transition {
            depth,
            divergent: self.divergent,
            accept_stat: if self.n_leapfrog > 0 {
                self.sum_metro / self.n_leapfrog as f64
            } else {
                0.0
            },
        }
    }

    /// Doubles or halves `ε` until one leapfrog step crosses acceptance 0.8.
    fn init_step_size(&mut self, z: &State, rng: &mut Rng) {
        let mut probe = z.clone();
        self.sample_momentum(rng, &mut probe.p);
        let h0 = self.hamiltonian(&probe);
        let mut trial = probe.clone();
        self.leapfrog(&mut trial, self.eps);
        let mut h = self.hamiltonian(&trial);
        if h.is_nan() {
            h = f64::INFINITY;
        }
        let up = h0 - h > 0.8f64.ln();
        for _ in 0..100 {
            let mut probe = z.clone();
            self.sample_momentum(rng, &mut probe.p);
            let h0 = self.hamiltonian(&probe);
            self.leapfrog(&mut probe, self.eps);
            let mut h = self.hamiltonian(&probe);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            let delta = h0 - h;
            if (up && !(delta > 0.8f64.ln())) || (!up && !(delta < 0.8f64.ln())) {
                break;
            }
            self.eps = if up { 2.0 * self.eps } else { 0.5 * self.eps };
            if !(1e-12..=1e7).contains(&self.eps) {
                self.eps = self.eps.clamp(1e-12, 1e7);
                break;
            }
        }
    }
}

/// Raw result of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub trace: ChainTrace,
    pub adaptation: AdaptationSummary,
}

/// Runs warmup then sampling for a single chain from `init`.
pub fn run_chain<D: LogDensity>(density: &D, init: Vec<f64>, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let dim = density.dim();
    if init.len() != dim {
        return Err(Error::Shape(format!("initial point has {} values, density has {dim}", init.len())));
    }
    let mut rng = rng_from(cfg.seed, &[chain as u64]);
    let mut z = State {
        p: vec![0.0; dim],
        grad: vec![0.0; dim],
        logp: 0.0,
        q: init,
    };
    z.logp = density.logp_grad(&z.q, &mut z.grad);
    if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Sampler(format!(
            "chain {chain}: log density is not finite at the initial point"
        )));
    }
    let mut nuts = Integrator {
        density,
        inv_metric: vec![1.0; dim],
        eps: 1.0,
        max_depth: cfg.max_tree_depth,
        n_leapfrog: 0,
        sum_metro: 0.0,
        divergent: false,
    };
    nuts.init_step_size(&z, &mut rng);
    let mut da = DualAveraging::new(cfg.target_accept, nuts.eps);
    let schedule = WarmupSchedule::new(cfg.warmup);
    let mut welford = WelfordVar::new(dim);
    let mut warmup_divergences = 0;
    for it in 0..cfg.warmup {
        let t = nuts.transition(&mut z, &mut rng);
        warmup_divergences += t.divergent as usize;
        nuts.eps = da.update(t.accept_stat);
        if schedule.in_slow_phase(it) {
            welford.push(&z.q);
            if schedule.ends_window(it) {
                nuts.inv_metric = welford.regularized_variance();
                welford.reset();
                nuts.init_step_size(&z, &mut rng);
                da.restart(nuts.eps);
            }
        }
    }
    if cfg.warmup > 0 && warmup_divergences == cfg.warmup {
        return Err(Error::Sampler(format!(
            "chain {chain}: every warmup iteration diverged (final step size {:.3e})",
            nuts.eps
        )));
    }
    nuts.eps = da.final_step_size();
    let mut trace = ChainTrace::default();
    for _ in 0..cfg.draws {
        let t = nuts.transition(&mut z, &mut rng);
        trace.values.push(density.constrain(&z.q));
        trace.divergent.push(t.divergent);
        trace.tree_depth.push(t.depth);
        trace.step_size.push(nuts.eps);
        trace.accept_stat.push(t.accept_stat);
    }
    let mean_accept_stat = trace.accept_stat.iter().sum::<f64>() / cfg.draws.max(1) as f64;
    Ok(ChainOutput {
        adaptation: AdaptationSummary {
            step_size: nuts.eps,
            inv_metric: nuts.inv_metric,
            warmup_divergences,
            mean_accept_stat,
        },
        trace,
    })
}

/// Runs `cfg.chains` independent chains in parallel. Chains start from
/// `inits` when given, otherwise from [`init_point`].
pub fn nuts_sample<D: LogDensity>(density: &D, inits: Option<&[Vec<f64>]>, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if let Some(v) = inits {
        if v.len() != cfg.chains {
            return Err(Error::Shape(format!("{} initial points for {} chains", v.len(), cfg.chains)));
        }
    }
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let init = match inits {
                Some(v) => v[c].clone(),
                None => init_point(density.dim(), cfg.seed, c),
            };
            run_chain(density, init, cfg, c)
        })
        .collect::<Result<_>>()?;
    let (traces, adaptation) = outputs.into_iter().map(|o| (o.trace, o.adaptation)).unzip();
    PosteriorDraws::new(density.param_layout(), cfg.max_tree_depth, traces, adaptation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ParamLayout;
    use crate::sampler::transform::{simplex_backward, simplex_forward_into};

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            for (g, t) in grad.iter_mut().zip(theta) {
                *g = -t;
            }
            -0.5 * dot(theta, theta)
        }
        fn param_layout(&self) -> ParamLayout {
            ParamLayout::Generic {
                names: (0..self.0).map(|k| format!("x{k}")).collect(),
            }
        }
        fn constrain(&self, theta: &[f64]) -> Vec<f64> {
            theta.to_vec()
        }
    }

    /// Flat density on the K-simplex through the stick-breaking map.
    struct FlatSimplex(usize);

    impl LogDensity for FlatSimplex {
        fn dim(&self) -> usize {
            self.0 - 1
        }
        fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let mut x = vec![0.0; self.0];
            let lj = simplex_forward_into(theta, &mut x);
            grad.iter_mut().for_each(|g| *g = 0.0);
            simplex_backward(theta, &vec![0.0; self.0], grad);
            lj
        }
        fn param_layout(&self) -> ParamLayout {
            ParamLayout::Generic {
                names: (0..self.0).map(|k| format!("x{k}")).collect(),
            }
        }
        fn constrain(&self, theta: &[f64]) -> Vec<f64> {
            let mut x = vec![0.0; self.0];
            simplex_forward_into(theta, &mut x);
            x
        }
    }

    fn cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn init_points_are_reproducible_and_distinct() {
        let a = init_point(6, 3, 0);
        assert_eq!(a, init_point(6, 3, 0));
        assert_ne!(a, init_point(6, 3, 1));
        assert!(a.iter().all(|v| v.abs() < 2.0));
    }

    #[test]
    fn standard_normal_moments() {
        let d = nuts_sample(&StdNormal(10), None, &cfg(1)).unwrap();
        assert_eq!(d.total_draws(), 4000);
        assert_eq!(d.divergences(), 0);
        for p in 0..10 {
            let xs = d.pooled(p);
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(m.abs() < 0.05, "mean {p}: {m}");
            assert!((0.9..=1.1).contains(&v), "var {p}: {v}");
        }
    }

    #[test]
    fn flat_simplex_marginals() {
        let d = nuts_sample(&FlatSimplex(3), None, &cfg(2)).unwrap();
        for p in 0..3 {
            let xs = d.pooled(p);
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((m - 1.0 / 3.0).abs() < 0.02, "{p}: {m}");
        }
    }

    #[test]
    fn one_dim_normal_passes_ks() {
        let d = nuts_sample(&StdNormal(1), None, &cfg(3)).unwrap();
        let mut xs = d.pooled(0);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        let dmax = xs
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let f = normal.cdf(*x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic critical value at α = 0.01.
        assert!(dmax < 1.628 / n.sqrt(), "D = {dmax}");
    }

    #[test]
    fn same_seed_same_draws() {
        let c = SamplerConfig {
            chains: 2,
            warmup: 50,
            draws: 20,
            seed: 9,
            ..SamplerConfig::default()
        };
        let a = nuts_sample(&StdNormal(3), None, &c).unwrap();
        let b = nuts_sample(&StdNormal(3), None, &c).unwrap();
        assert_eq!(a, b);
    }

    struct Broken;
    impl LogDensity for Broken {
        fn dim(&self) -> usize {
            1
        }
        fn logp_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 0.0;
            f64::NAN
        }
        fn param_layout(&self) -> ParamLayout {
            ParamLayout::Generic { names: vec!["x".into()] }
        }
        fn constrain(&self, t: &[f64]) -> Vec<f64> {
            t.to_vec()
        }
    }

    #[test]
    fn non_finite_init_fails() {
        assert!(matches!(nuts_sample(&Broken, None, &cfg(0)), Err(Error::Sampler(_))));
    }
}
