use serde::{Deserialize, Serialize};

use super::{validate_with_tol, Matrix, OdMatrix, DRAW_SIMPLEX_TOL};
use crate::error::{Error, Result};

/// How the flattened parameter vector of a draw maps onto model quantities.
///
/// OD layouts store the full S×S coefficient matrix row-major (diagonal and
/// structural zeros included), then `S` scales, then optionally `S`
/// intercepts. Generic layouts are plain named vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamLayout {
    Od { stations: usize, intercepts: bool },
    Generic { names: Vec<String> },
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        match self {
            ParamLayout::Od { stations, intercepts } => {
                stations * stations + stations + if *intercepts { *stations } else { 0 }
            }
            ParamLayout::Generic { names } => names.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            ParamLayout::Od { stations, intercepts } => {
                let s = *stations;
                let mut v = Vec::with_capacity(self.len());
                for i in 0..s {
                    for j in 0..s {
                        v.push(format!("alpha.{i}.{j}"));
                    }
                }
                v.extend((0..s).map(|j| format!("sigma.{j}")));
                if *intercepts {
                    v.extend((0..s).map(|j| format!("r.{j}")));
                }
                v
            }
            ParamLayout::Generic { names } => names.clone(),
        }
    }

    pub fn stations(&self) -> Option<usize> {
        match self {
            ParamLayout::Od { stations, .. } => Some(*stations),
            ParamLayout::Generic { .. } => None,
        }
    }
}

/// One chain's post-warmup draws plus per-iteration sampler statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub values: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u32>,
    pub step_size: Vec<f64>,
    pub accept_stat: Vec<f64>,
}

/// Warmup outcome for one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSummary {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
    pub mean_accept_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    layout: ParamLayout,
    max_tree_depth: u32,
    chains: Vec<ChainTrace>,
    adaptation: Vec<AdaptationSummary>,
}

impl PosteriorDraws {
    /// Validates shapes, simplex rows (at [`DRAW_SIMPLEX_TOL`]) and positive
    /// scales for OD layouts.
    pub fn new(
        layout: ParamLayout,
        max_tree_depth: u32,
        chains: Vec<ChainTrace>,
        adaptation: Vec<AdaptationSummary>,
    ) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::InvalidInput("no chains".into()));
        }
        let p = layout.len();
        let d = chains[0].values.len();
        for (c, ch) in chains.iter().enumerate() {
            if ch.values.len() != d
                || ch.divergent.len() != d
                || ch.tree_depth.len() != d
                || ch.step_size.len() != d
            {
                return Err(Error::Shape(format!("chain {c} has inconsistent lengths")));
            }
            if let Some(bad) = ch.values.iter().position(|v| v.len() != p) {
                return Err(Error::Shape(format!(
                    "chain {c} draw {bad} has {} values, expected {p}",
                    ch.values[bad].len()
                )));
            }
        }
        let draws = Self {
            layout,
            max_tree_depth,
            chains,
            adaptation,
        };
        if let ParamLayout::Od { stations, .. } = draws.layout {
            for c in 0..draws.n_chains() {
                for k in 0..d {
                    let m = draws.od_matrix(c, k);
                    validate_with_tol(&m, DRAW_SIMPLEX_TOL).map_err(Error::from)?;
                    let v = &draws.chains[c].values[k];
                    if let Some(s) = v[stations * stations..stations * stations + stations]
                        .iter()
                        .find(|s| !(**s > 0.0))
                    {
                        return Err(Error::NonPositiveScale(*s));
                    }
                }
            }
        }
        Ok(draws)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }
    pub fn n_draws(&self) -> usize {
        self.chains[0].values.len()
    }
    pub fn n_params(&self) -> usize {
        self.layout.len()
    }
    pub fn total_draws(&self) -> usize {
        self.n_chains() * self.n_draws()
    }
    pub fn chains(&self) -> &[ChainTrace] {
        &self.chains
    }
    pub fn adaptation(&self) -> &[AdaptationSummary] {
        &self.adaptation
    }
    pub fn max_tree_depth(&self) -> u32 {
        self.max_tree_depth
    }
    pub fn names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.layout.names().iter().position(|n| n == name)
    }

    /// Per-chain series of parameter `p`.
    pub fn chain_series(&self, p: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.values.iter().map(|v| v[p]).collect())
            .collect()
    }

    /// All draws of parameter `p`, chains concatenated.
    pub fn pooled(&self, p: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.values.iter().map(move |v| v[p]))
            .collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.divergent.iter().filter(|&&d| d).count())
            .sum()
    }

    pub fn saturated(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.tree_depth.iter().filter(|&&d| d >= self.max_tree_depth).count())
            .sum()
    }

    /// Index of coefficient `(i, j)` for OD layouts.
    pub fn alpha_index(&self, i: usize, j: usize) -> Option<usize> {
        self.layout.stations().map(|s| i * s + j)
    }

    pub fn sigma_index(&self, j: usize) -> Option<usize> {
        self.layout.stations().map(|s| s * s + j)
    }

    pub fn intercept_index(&self, j: usize) -> Option<usize> {
        match self.layout {
            ParamLayout::Od {
                stations,
                intercepts: true,
            } => Some(stations * stations + stations + j),
            _ => None,
        }
    }

    /// The OD matrix stored in draw `k` of chain `c`. Panics for generic layouts.
    pub fn od_matrix(&self, c: usize, k: usize) -> OdMatrix {
        let s = self.layout.stations().expect("OD layout");
        let v = &self.chains[c].values[k];
        OdMatrix::new_unchecked(
            Matrix::from_vec(s, s, v[..s * s].to_vec()).expect("layout length"),
            None,
        )
    }

    /// Keeps every `stride`-th draw of each chain.
    pub fn thin(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let pick = |c: &ChainTrace| ChainTrace {
            values: c.values.iter().step_by(stride).cloned().collect(),
            divergent: c.divergent.iter().step_by(stride).copied().collect(),
            tree_depth: c.tree_depth.iter().step_by(stride).copied().collect(),
            step_size: c.step_size.iter().step_by(stride).copied().collect(),
            accept_stat: c.accept_stat.iter().step_by(stride).copied().collect(),
        };
        Self {
            layout: self.layout.clone(),
            max_tree_depth: self.max_tree_depth,
            chains: self.chains.iter().map(pick).collect(),
            adaptation: self.adaptation.clone(),
        }
    }
}

/// Default thinning stride that leaves about 1000 draws in total.
pub fn default_thin_stride(total_draws: usize) -> usize {
    total_draws.div_ceil(1000).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: Vec<Vec<f64>>) -> ChainTrace {
        let d = values.len();
        ChainTrace {
            values,
            divergent: vec![false; d],
            tree_depth: vec![3; d],
            step_size: vec![0.1; d],
            accept_stat: vec![0.9; d],
        }
    }

    #[test]
    fn od_layout_names_and_indices() {
        let l = ParamLayout::Od {
            stations: 2,
            intercepts: true,
        };
        assert_eq!(
            l.names(),
            vec!["alpha.0.0", "alpha.0.1", "alpha.1.0", "alpha.1.1", "sigma.0", "sigma.1", "r.0", "r.1"]
        );
        let d = PosteriorDraws::new(
            l,
            10,
            vec![trace(vec![vec![0.0, 1.0, 1.0, 0.0, 1.0, 2.0, 0.5, -0.5]])],
            vec![],
        )
        .unwrap();
        assert_eq!(d.intercept_index(1), Some(7));
        assert_eq!(d.od_matrix(0, 0).get(0, 1), 1.0);
    }

    #[test]
    fn rejects_non_simplex_or_bad_scale() {
        let l = ParamLayout::Od {
            stations: 2,
            intercepts: false,
        };
        let bad_row = vec![vec![0.0, 0.9, 1.0, 0.0, 1.0, 1.0]];
        assert!(PosteriorDraws::new(l.clone(), 10, vec![trace(bad_row)], vec![]).is_err());
        let bad_sigma = vec![vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]];
        assert!(PosteriorDraws::new(l, 10, vec![trace(bad_sigma)], vec![]).is_err());
    }

    #[test]
    fn thinning_stride() {
        assert_eq!(default_thin_stride(4000), 4);
        assert_eq!(default_thin_stride(1000), 1);
        assert_eq!(default_thin_stride(1001), 2);
        let l = ParamLayout::Generic {
            names: vec!["a".into()],
        };
        let d = PosteriorDraws::new(l, 10, vec![trace((0..10).map(|k| vec![k as f64]).collect())], vec![])
            .unwrap();
        assert_eq!(d.thin(3).pooled(0), vec![0.0, 3.0, 6.0, 9.0]);
    }
}
