//! Warmup machinery: dual-averaging step size, windowed variance estimation.

/// Nesterov dual averaging of `ln ε` toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub const GAMMA: f64 = 0.05;
    pub const T0: f64 = 10.0;
    pub const KAPPA: f64 = 0.75;

    pub fn new(target: f64, eps: f64) -> Self {
        let mut d = Self {
            target,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        d.restart(eps);
        d
    }

    /// Forgets the history and shrinks toward `10 ε`.
    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone)]
pub struct WelfordVar {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordVar {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variance shrunk toward `1e-3`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0).max(1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.mean.len());
    }
}

/// Warmup split into a fast initial phase (15 %), expanding slow windows for
/// the metric (75 %) and a fast terminal phase (10 %).
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupSchedule {
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Exclusive end iteration of every slow window.
    pub window_ends: Vec<usize>,
}

impl WarmupSchedule {
    pub const BASE_WINDOW: usize = 25;
    /// Below this many warmup iterations only the step size is adapted.
    pub const MIN_METRIC_WARMUP: usize = 20;

    pub fn new(warmup: usize) -> Self {
        if warmup < Self::MIN_METRIC_WARMUP {
            return Self {
                init_buffer: warmup,
                term_buffer: 0,
                window_ends: Vec::new(),
            };
        }
        let init = (0.15 * warmup as f64) as usize;
        let term = (0.1 * warmup as f64) as usize;
        let slow_end = warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = Self::BASE_WINDOW.min(slow_end - init);
        while start < slow_end {
            let mut end = start + size;
            // Stretch the window when the next one would not fit.
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            ends.push(end);
            start = end;
            size *= 2;
        }
        Self {
            init_buffer: init,
            term_buffer: term,
            window_ends: ends,
        }
    }

    pub fn in_slow_phase(&self, iter: usize) -> bool {
        match self.window_ends.last() {
            Some(&end) => iter >= self.init_buffer && iter < end,
            None => false,
        }
    }

    pub fn ends_window(&self, iter: usize) -> bool {
        self.window_ends.contains(&(iter + 1))
    }
}
