use super::graph::PathAlternative;

/// Attribute weights for in-vehicle, wait and walk minutes and transfer count.
pub const DEFAULT_ZETA: [f64; 4] = [-0.002, -0.006, -0.002, -1.0];

pub fn utility(alt: &PathAlternative, zeta: &[f64; 4]) -> f64 {
    alt.attributes().iter().zip(zeta).map(|(z, c)| z * c).sum()
}

/// Softmax of `v`, shifted by the maximum before exponentiating.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Multinomial-logit choice probabilities over path alternatives.
pub fn mnl_choice_probs(alts: &[PathAlternative], zeta: &[f64; 4]) -> Vec<f64> {
    let v: Vec<f64> = alts.iter().map(|a| utility(a, zeta)).collect();
    softmax(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alt(z: [f64; 4]) -> PathAlternative {
        PathAlternative {
            z1: z[0],
            z2: z[1],
            z3: z[2],
            z4: z[3] as u32,
            total_time: z[0] + z[1] + z[2],
            legs: vec![],
        }
    }

    #[test]
    fn equal_utilities_are_uniform() {
        let alts = vec![alt([10.0, 2.0, 0.0, 0.0]); 4];
        for p in mnl_choice_probs(&alts, &DEFAULT_ZETA) {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(mnl_choice_probs(&alts[..1], &DEFAULT_ZETA), vec![1.0]);
    }

    #[test]
    fn two_utilities() {
        let p = softmax(&[-1.0, -2.0]);
        assert!((p[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn shifted_and_naive_forms_agree(v in prop::collection::vec(-30.0f64..30.0, 1..8)) {
            let p = softmax(&v);
            let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let s: f64 = e.iter().sum();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for (a, b) in p.iter().zip(&e) {
                prop_assert!((a - b / s).abs() < 1e-12);
            }
        }
    }
}
