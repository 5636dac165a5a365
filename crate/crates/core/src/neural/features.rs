use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{config_err, Result};

/// Input feature stack: `I`, `Q`, then `|x|^k` for each envelope order in
/// ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecipe {
    pub envelope_orders: Vec<u32>,
    pub include_iq: bool,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        Self {
            envelope_orders: vec![1, 2],
            include_iq: true,
        }
    }
}

impl FeatureRecipe {
    pub fn iq_only() -> Self {
        Self {
            envelope_orders: Vec::new(),
            include_iq: true,
        }
    }

    /// Orders sorted ascending, as they appear in the feature stack.
    pub fn sorted_orders(&self) -> Vec<u32> {
        let mut o = self.envelope_orders.clone();
        o.sort_unstable();
        o
    }

    pub fn channels(&self) -> usize {
        2 * usize::from(self.include_iq) + self.envelope_orders.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels() == 0 {
            return Err(config_err("feature recipe produces no channels"));
        }
        if self.envelope_orders.contains(&0) {
            return Err(config_err("envelope orders must be positive"));
        }
        Ok(())
    }
}

pub fn build_features(x: &[Complex64], recipe: &FeatureRecipe) -> FeatureMap {
    let n = x.len();
    let mut data = Vec::with_capacity(recipe.channels() * n);
    if recipe.include_iq {
        data.extend(x.iter().map(|s| s.re));
        data.extend(x.iter().map(|s| s.im));
    }
    let env: Vec<f64> = x.iter().map(|s| s.norm()).collect();
    for k in recipe.sorted_orders() {
        data.extend(env.iter().map(|&e| e.powi(k as i32)));
    }
    FeatureMap::from_vec(recipe.channels(), n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn three_four_five() {
        let f = build_features(&[Complex64::new(3.0, 4.0)], &FeatureRecipe { envelope_orders: vec![2, 1], include_iq: true });
        assert_eq!(f.data, vec![3.0, 4.0, 5.0, 25.0]);
    }

    #[test]
    fn zero_input() {
        let f = build_features(&[Complex64::new(0.0, 0.0)], &FeatureRecipe { envelope_orders: vec![1], include_iq: true });
        assert_eq!(f.data, vec![0.0; 3]);
    }

    #[test]
    fn squared_envelope_row_matches_recomputation() {
        let mut r = crate::rng::rng_from_seed(5);
        let x: Vec<Complex64> = (0..200)
            .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect();
        let f = build_features(&x, &FeatureRecipe { envelope_orders: vec![1, 2, 3], include_iq: true });
        for (n, s) in x.iter().enumerate() {
            let e = (s.re * s.re + s.im * s.im).sqrt();
            assert!((f.get(3, n) - e * e).abs() < 1e-12);
            assert!((f.get(3, n) - f.get(2, n) * f.get(2, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_recipe_invalid() {
        let r = FeatureRecipe { envelope_orders: vec![], include_iq: false };
        assert!(r.validate().is_err());
        assert_eq!(FeatureRecipe::default().channels(), 4);
    }
}
