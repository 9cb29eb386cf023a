//! Test network B: attractiveness-weighted OD matrix, trend plus INGARCH
//! entry series, logit path choice and delayed exits truncated to the
//! arrival window.

mod choice;
mod graph;
mod series;

pub use choice::{mnl_choice_probs, softmax, utility, DEFAULT_ZETA};
pub use graph::{GraphSpec, Leg, Line, LineSpec, PathAlternative, TimetableGraph, TransferSpec};
pub use series::{
    generate_trend, scale_trend, simulate_ingarch, simulate_seasonal_arima, IngarchParams,
    TrendParams,
};

use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::a::embed_row;
use super::sampling::{sample_dirichlet, sample_multinomial, DIRICHLET_RETRIES};
use crate::domain::{BinnedObservationSet, Matrix, OdMatrix, StructuralZeros, TravelTimeTable};
use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from, Rng};

const TAG_CONC: u64 = 0xB0;
const TAG_TREND: u64 = 0xB1;
const TAG_OBS: u64 = 0xB2;

/// Bundled synthetic network: 20 stations on 6 lines, 15 access stations.
pub const DEFAULT_GRAPH_JSON: &str = include_str!("../../../data/graph_b.json");

pub fn default_graph() -> TimetableGraph {
    let spec: GraphSpec = serde_json::from_str(DEFAULT_GRAPH_JSON).expect("bundled graph parses");
    TimetableGraph::from_spec(&spec).expect("bundled graph is valid")
}

/// Bin width used by the windowed presets, in minutes.
pub const WINDOW_BIN_MINUTES: f64 = 5.0;
/// Bins between the departure and arrival window starts (one hour).
pub const WINDOW_GAP_BINS: usize = 12;
/// 7 AM in five-minute bins since midnight.
pub const DEPARTURE_START_BIN: usize = 84;

fn default_zeta() -> [f64; 4] {
    DEFAULT_ZETA
}
fn default_margin() -> f64 {
    10.0
}
fn default_departure_time() -> f64 {
    480.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenBConfig {
    pub observations: usize,
    /// Departure bins `T`.
    pub departure_bins: usize,
    /// Minutes per bin.
    pub bin_width: f64,
    pub t0: usize,
    pub t1: usize,
    pub phi: f64,
    pub eta: f64,
    #[serde(default)]
    pub ingarch: IngarchParams,
    #[serde(default)]
    pub trend: TrendParams,
    #[serde(default = "default_zeta")]
    pub zeta: [f64; 4],
    /// Minutes above the earliest arrival within which alternatives are kept.
    #[serde(default = "default_margin")]
    pub arrival_margin: f64,
    /// Proxy departure clock time in minutes after midnight.
    #[serde(default = "default_departure_time")]
    pub departure_time: f64,
    pub seed: u64,
}

impl GenBConfig {
    /// Observation window of `window_minutes` (a multiple of 5) whose arrival
    /// window opens at 8 AM, one hour after the departure window.
    pub fn for_window(window_minutes: u32, eta: f64, phi: f64, observations: usize, seed: u64) -> Result<Self> {
        if window_minutes == 0 || window_minutes % 5 != 0 {
            return Err(invalid(format!("window must be a positive multiple of 5 minutes, got {window_minutes}")));
        }
        let t_a = (window_minutes / 5) as usize;
        Ok(Self {
            observations,
            departure_bins: WINDOW_GAP_BINS + t_a,
            bin_width: WINDOW_BIN_MINUTES,
            t0: DEPARTURE_START_BIN,
            t1: DEPARTURE_START_BIN + WINDOW_GAP_BINS,
            phi,
            eta,
            ingarch: IngarchParams::default(),
            trend: TrendParams::default(),
            zeta: DEFAULT_ZETA,
            arrival_margin: default_margin(),
            departure_time: default_departure_time(),
            seed,
        })
    }

    pub fn gap(&self) -> usize {
        self.t1.saturating_sub(self.t0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.phi > 0.0) {
            return Err(invalid("dispersion phi must be positive"));
        }
        if self.t1 <= self.t0 {
            return Err(invalid("arrival window must start after the departure window"));
        }
        if self.gap() >= self.departure_bins {
            return Err(invalid("window gap leaves no arrival bins"));
        }
        if !(self.bin_width > 0.0) || !(self.arrival_margin >= 0.0) {
            return Err(invalid("bin width must be positive and the margin non-negative"));
        }
        if self.observations == 0 {
            return Err(invalid("need at least one observation"));
        }
        self.ingarch.validate()
    }
}

/// Access-station pairs joined by a direct footpath.
pub fn footpath_zeros(g: &TimetableGraph) -> StructuralZeros {
    let acc = g.access();
    let mut z = StructuralZeros::none(acc.len());
    for (i, &a) in acc.iter().enumerate() {
        for (j, &b) in acc.iter().enumerate() {
            if i != j && g.has_footpath(a, b) {
                z.set(i, j, true);
            }
        }
    }
    z
}

/// One attractiveness weight per destination, `c_j ~ U(0, 1)`.
pub fn sample_concentrations(stations: usize, rng: &mut Rng) -> Vec<f64> {
    (0..stations)
        .map(|_| loop {
            let c: f64 = rng.random();
            if c > 0.0 {
                break c;
            }
        })
        .collect()
}

/// Row `i`: Dirichlet over `c` without entry `i`, structural zeros cleared
/// and the row renormalised.
pub fn sample_row_b(i: usize, conc: &[f64], zeros: &StructuralZeros, rng: &mut Rng) -> Result<Vec<f64>> {
    let s = conc.len();
    let reduced: Vec<f64> = conc.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &c)| c).collect();
    if zeros.free_destinations(i).is_empty() {
        return Err(invalid(format!("row {i} has no admissible destination")));
    }
    for _ in 0..DIRICHLET_RETRIES {
        let draw = sample_dirichlet(&reduced, rng)?;
        let mut row = vec![0.0; s];
        embed_row(i, &draw, &mut row);
        for (j, v) in row.iter_mut().enumerate() {
            if zeros.is_zero(i, j) {
                *v = 0.0;
            }
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
            return Ok(row);
        }
    }
    Err(Error::DegenerateDirichlet {
        attempts: DIRICHLET_RETRIES,
    })
}

pub fn sample_od_matrix_b(stations: usize, seed: u64, zeros: Option<&StructuralZeros>) -> Result<OdMatrix> {
    if stations < 2 {
        return Err(invalid("OD matrix needs at least 2 stations"));
    }
    let none = StructuralZeros::none(stations);
    let z = zeros.unwrap_or(&none);
    if z.size() != stations {
        return Err(Error::Shape("structural-zero mask size".into()));
    }
    let mut rng = rng_from(seed, &[TAG_CONC]);
    let conc = sample_concentrations(stations, &mut rng);
    let mut alpha = Matrix::zeros(stations, stations);
    for i in 0..stations {
        alpha.row_mut(i).copy_from_slice(&sample_row_b(i, &conc, z, &mut rng)?);
    }
    OdMatrix::new(alpha, zeros.cloned())
}

/// Round half up, at least one bin.
fn delay_bins(minutes: f64, bin_width: f64) -> u32 {
    ((minutes / bin_width + 0.5).floor() as u32).max(1)
}

/// Mean total time over each pair's alternatives, in whole bins.
pub fn expected_delay_table(
    g: &TimetableGraph,
    stations: &[usize],
    departure_time: f64,
    arrival_margin: f64,
    bin_width: f64,
) -> Result<TravelTimeTable> {
    let s = stations.len();
    let mut t = TravelTimeTable::zeros(s);
    for (i, &a) in stations.iter().enumerate() {
        for (j, &b) in stations.iter().enumerate() {
            if i == j {
                continue;
            }
            let alts = g.enumerate_paths(a, b, departure_time, arrival_margin)?;
            let mean = alts.iter().map(|p| p.total_time).sum::<f64>() / alts.len() as f64;
            t.set(i, j, delay_bins(mean, bin_width));
        }
    }
    Ok(t)
}

/// Choice set for one access-station pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRoutes {
    pub alternatives: Vec<PathAlternative>,
    pub probabilities: Vec<f64>,
}

/// Alternatives and logit probabilities for every ordered access pair.
pub fn route_table(g: &TimetableGraph, cfg: &GenBConfig) -> Result<Vec<Vec<Option<PairRoutes>>>> {
    let acc = g.access();
    let mut out = vec![vec![None; acc.len()]; acc.len()];
    for (i, &a) in acc.iter().enumerate() {
        for (j, &b) in acc.iter().enumerate() {
            if i == j {
                continue;
            }
            let alternatives = g.enumerate_paths(a, b, cfg.departure_time, cfg.arrival_margin)?;
            let probabilities = mnl_choice_probs(&alternatives, &cfg.zeta);
            out[i][j] = Some(PairRoutes {
                alternatives,
                probabilities,
            });
        }
    }
    Ok(out)
}

/// Simulates binned entries and exits on the access stations of `g` for the
/// OD matrix `a`. Each passenger departs uniformly within their bin, so a
/// path of `τ` minutes arrives `⌊u + τ/width⌋` bins later; exits outside the
/// arrival window are dropped.
pub fn generate_network_b(cfg: &GenBConfig, g: &TimetableGraph, a: &OdMatrix) -> Result<BinnedObservationSet> {
    cfg.validate()?;
    let s = g.access().len();
    if a.size() != s {
        return Err(invalid(format!("OD matrix has {} stations, graph {s} access stations", a.size())));
    }
    let routes = route_table(g, cfg)?;
    let gap = cfg.gap();
    for (i, row) in routes.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            let Some(r) = r else { continue };
            let worst = r.alternatives.iter().map(|p| p.total_time).fold(0.0, f64::max);
            let bins = (worst / cfg.bin_width).ceil() as u32;
            if bins as usize > gap {
                return Err(Error::DelayExceedsGap {
                    origin: i,
                    destination: j,
                    delay: bins,
                    gap,
                });
            }
        }
    }
    let t = cfg.departure_bins;
    let t_a = t - gap;
    let trends = (0..s)
        .map(|i| {
            let mut rng = rng_from(cfg.seed, &[TAG_TREND, i as u64]);
            let mut p = cfg.trend.clone();
            p.period.get_or_insert(t);
            generate_trend(t + 1, cfg.eta, &p, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let per_obs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.observations)
        .into_par_iter()
        .map(|n| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut rng = rng_from(cfg.seed, &[TAG_OBS, n as u64]);
            let mut xb = vec![0.0; t * s];
            let mut yb = vec![0u64; t_a * s];
            let series = trends
                .iter()
                .map(|f| simulate_ingarch(f, &cfg.ingarch, cfg.phi, cfg.eta, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut dest = vec![0u64; s];
            for td in 0..t {
                for (i, xs) in series.iter().enumerate() {
                    let count = xs[td];
                    xb[td * s + i] = count as f64;
                    sample_multinomial(count, a.row(i), &mut rng, &mut dest);
                    for (j, &m) in dest.iter().enumerate() {
                        if m == 0 {
                            continue;
                        }
                        let r = routes[i][j].as_ref().expect("off-diagonal route");
                        let mut by_path = vec![0u64; r.alternatives.len()];
                        sample_multinomial(m, &r.probabilities, &mut rng, &mut by_path);
                        for (p, &k) in r.alternatives.iter().zip(&by_path) {
                            if k == 0 {
                                continue;
                            }
                            let q = p.total_time / cfg.bin_width;
                            let whole = q.floor();
                            let frac = q - whole;
                            let late = if frac > 0.0 {
                                Binomial::new(k, frac).expect("fraction in [0, 1)").sample(&mut rng)
                            } else {
                                0
                            };
                            for (lag, c) in [(whole as usize, k - late), (whole as usize + 1, late)] {
                                let arrival = td + lag;
                                if c > 0 && arrival >= gap && arrival - gap < t_a {
                                    yb[(arrival - gap) * s + j] += c;
                                }
                            }
                        }
                    }
                }
            }
            Ok((xb, yb.into_iter().map(|v| v as f64).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut xb = Vec::with_capacity(cfg.observations * t * s);
    let mut yb = Vec::with_capacity(cfg.observations * t_a * s);
    for (x, y) in per_obs {
        xb.extend(x);
        yb.extend(y);
    }
    BinnedObservationSet::new(cfg.observations, t, cfg.bin_width, cfg.t0, cfg.t1, xb, yb, g.access_labels())
}

/// Everything one network-B experiment needs.
#[derive(Debug, Clone)]
pub struct ScenarioB {
    pub truth: OdMatrix,
    pub data: BinnedObservationSet,
    pub delays: TravelTimeTable,
}

/// Draws the OD matrix (footpath pairs zeroed), the delay table and the data.
pub fn generate_scenario_b(cfg: &GenBConfig, g: &TimetableGraph) -> Result<ScenarioB> {
    let zeros = footpath_zeros(g);
    let truth = sample_od_matrix_b(g.access().len(), cfg.seed, Some(&zeros))?;
    let delays = expected_delay_table(g, g.access(), cfg.departure_time, cfg.arrival_margin, cfg.bin_width)?;
    let data = generate_network_b(cfg, g, &truth)?;
    Ok(ScenarioB { truth, data, delays })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph(run: f64) -> TimetableGraph {
        TimetableGraph::from_spec(&GraphSpec {
            stations: vec!["a".into(), "b".into(), "c".into()],
            access: vec![],
            lines: vec![LineSpec {
                name: "L".into(),
                stops: vec!["a".into(), "b".into(), "c".into()],
                run_times: vec![run, run],
                headway: 0.0,
            }],
            transfers: vec![],
        })
        .unwrap()
    }

    #[test]
    fn two_station_matrix_is_the_swap() {
        let a = sample_od_matrix_b(2, 9, None).unwrap();
        assert_eq!(a.to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn row_means_follow_attractiveness() {
        let mut rng = rng_from(21, &[]);
        let s = 15;
        let conc = sample_concentrations(s, &mut rng);
        let z = StructuralZeros::none(s);
        let i = 3;
        let draws = 100_000;
        let mut acc = vec![0.0; s];
        for _ in 0..draws {
            for (a, v) in acc.iter_mut().zip(sample_row_b(i, &conc, &z, &mut rng).unwrap()) {
                *a += v;
            }
        }
        let total: f64 = conc.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c).sum();
        for j in 0..s {
            let expect = if j == i { 0.0 } else { conc[j] / total };
            assert!((acc[j] / draws as f64 - expect).abs() < 0.01, "coordinate {j}");
        }
    }

    #[test]
    fn structural_zero_is_exact_and_row_resums() {
        let z = StructuralZeros::from_pairs(4, &[(0, 2), (2, 0)]).unwrap();
        for seed in 0..50 {
            let a = sample_od_matrix_b(4, seed, Some(&z)).unwrap();
            assert_eq!(a.get(0, 2), 0.0);
            assert_eq!(a.get(2, 0), 0.0);
            assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delay_rounding() {
        assert_eq!(delay_bins(5.0, 5.0), 1);
        assert_eq!(delay_bins(11.0, 5.0), 2);
        assert_eq!(delay_bins(12.5, 5.0), 3);
        assert_eq!(delay_bins(0.4, 5.0), 1);
    }

    #[test]
    fn delay_table_single_path_and_parallel_lines() {
        let g = TimetableGraph::from_spec(&GraphSpec {
            stations: vec!["a".into(), "b".into()],
            access: vec![],
            lines: vec![
                LineSpec {
                    name: "x".into(),
                    stops: vec!["a".into(), "b".into()],
                    run_times: vec![10.0],
                    headway: 0.0,
                },
                LineSpec {
                    name: "y".into(),
                    stops: vec!["a".into(), "b".into()],
                    run_times: vec![12.0],
                    headway: 0.0,
                },
            ],
            transfers: vec![],
        })
        .unwrap();
        let t = expected_delay_table(&g, &[0, 1], 480.0, 10.0, 5.0).unwrap();
        assert_eq!(t.get(0, 1), 2);
        let t = expected_delay_table(&tiny_graph(5.0), &[0, 1], 480.0, 10.0, 5.0).unwrap();
        assert_eq!(t.get(0, 1), 1);
    }

    #[test]
    fn zero_travel_time_conserves_mass_per_bin() {
        let g = tiny_graph(0.0);
        let mut cfg = GenBConfig::for_window(15, 0.5, 10.0, 5, 1).unwrap();
        cfg.t1 = cfg.t0 + 1;
        cfg.departure_bins = 4;
        let a = sample_od_matrix_b(3, 1, None).unwrap();
        let b = generate_network_b(&cfg, &g, &a).unwrap();
        for n in 0..5 {
            for ta in 0..b.arrival_bins() {
                let x: f64 = (0..3).map(|i| b.x(n, ta + 1, i)).sum();
                let y: f64 = (0..3).map(|j| b.y(n, ta, j)).sum();
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn exits_never_exceed_entries_and_generation_is_reproducible() {
        let g = default_graph();
        let cfg = GenBConfig::for_window(60, 1.0, 10.0, 4, 77).unwrap();
        let sc = generate_scenario_b(&cfg, &g).unwrap();
        for n in 0..4 {
            let x: f64 = (0..sc.data.departure_bins())
                .flat_map(|t| (0..15).map(move |i| (t, i)))
                .map(|(t, i)| sc.data.x(n, t, i))
                .sum();
            let y: f64 = (0..sc.data.arrival_bins())
                .flat_map(|t| (0..15).map(move |j| (t, j)))
                .map(|(t, j)| sc.data.y(n, t, j))
                .sum();
            assert!(y <= x);
        }
        let again = generate_scenario_b(&cfg, &g).unwrap();
        assert_eq!(sc.data, again.data);
        assert_eq!(sc.truth, again.truth);
        assert!(sc.delays.max_delay() as usize <= cfg.gap());
    }

    #[test]
    fn cross_covariance_peaks_at_expected_delay() {
        // a-b 12 min, b-c 9 min: delays a->c = 21 min, about 4 bins.
        let g = TimetableGraph::from_spec(&GraphSpec {
            stations: vec!["a".into(), "b".into(), "c".into()],
            access: vec![],
            lines: vec![LineSpec {
                name: "L".into(),
                stops: vec!["a".into(), "b".into(), "c".into()],
                run_times: vec![12.0, 9.0],
                headway: 0.0,
            }],
            transfers: vec![],
        })
        .unwrap();
        let a = OdMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        let mut cfg = GenBConfig::for_window(60, 1.0, 1.0, 2000, 5).unwrap();
        cfg.t1 = cfg.t0 + 6;
        cfg.departure_bins = 18;
        let b = generate_network_b(&cfg, &g, &a).unwrap();
        let delays = expected_delay_table(&g, &[0, 1, 2], 480.0, 10.0, 5.0).unwrap();
        let (i, j) = (0, 2);
        let gap = b.gap();
        let nobs = b.observations() as f64;
        let mut best = (f64::NEG_INFINITY, 0);
        for lag in 0..=gap {
            // Covariance across observations between arrival bin ta and
            // departure bin ta + gap - lag, summed over arrival bins.
            let mut cov = 0.0;
            for ta in 0..b.arrival_bins() {
                let (mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0);
                for n in 0..b.observations() {
                    let x = b.x(n, ta + gap - lag, i);
                    let y = b.y(n, ta, j);
                    sxy += x * y;
                    sx += x;
                    sy += y;
                }
                cov += sxy / nobs - sx / nobs * sy / nobs;
            }
            if cov > best.0 {
                best = (cov, lag);
            }
        }
        assert_eq!(best.1 as u32, delays.get(i, j));
    }
}
