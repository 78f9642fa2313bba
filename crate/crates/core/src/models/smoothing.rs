use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ConditionalLM, Conditioned, Dist};
use crate::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [0, 1)")));
        }
        Ok(SmoothingConfig { epsilon })
    }
}

/// `(1 - ε) · p + ε · uniform`, the distribution-level analogue of label smoothing.
#[derive(Clone)]
pub struct SmoothedModel<M> {
    inner: M,
    epsilon: f64,
}

pub fn smooth<M: ConditionalLM>(model: M, cfg: SmoothingConfig) -> SmoothedModel<M> {
    SmoothedModel {
        inner: model,
        epsilon: cfg.epsilon,
    }
}

impl<M> SmoothedModel<M> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

struct Bound<'a> {
    inner: Box<dyn Conditioned + 'a>,
    epsilon: f64,
}

impl Conditioned for Bound<'_> {
    fn next_dist(&self, prefix: &[TokenId]) -> Result<Dist> {
        let base = self.inner.next_dist(prefix)?;
        if self.epsilon == 0.0 {
            return Ok(base);
        }
        let floor = self.epsilon / base.len() as f64;
        let keep = 1.0 - self.epsilon;
        Ok(Dist::from_probs(base.probs.iter().map(|p| keep * p + floor).collect()))
    }
}

impl<M: ConditionalLM> ConditionalLM for SmoothedModel<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn context_len(&self) -> Option<usize> {
        self.inner.context_len()
    }

    fn condition<'a>(&'a self, source: &[TokenId]) -> Result<Box<dyn Conditioned + 'a>> {
        Ok(Box::new(Bound {
            inner: self.inner.condition(source)?,
            epsilon: self.epsilon,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::FnModel;
    use crate::models::{entropy, UnigramModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_epsilon_is_identity() {
        let base = UnigramModel::from_probs(vec![0.3, 0.2, 0.5]).unwrap();
        let s = smooth(base.clone(), SmoothingConfig::new(0.0).unwrap());
        assert_eq!(s.next_dist(&[], &[1]).unwrap(), base.next_dist(&[], &[1]).unwrap());
    }

    #[test]
    fn two_token_arithmetic() {
        let base = FnModel {
            vocab: 2,
            f: |_: &[TokenId], _: &[TokenId]| vec![1.0, 0.0],
        };
        let s = smooth(base, SmoothingConfig::new(0.1).unwrap());
        let d = s.next_dist(&[], &[]).unwrap();
        assert!((d[0] - 0.95).abs() < 1e-15 && (d[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn epsilon_bounds() {
        assert!(SmoothingConfig::new(1.0).is_err());
        assert!(SmoothingConfig::new(-0.1).is_err());
    }

    #[test]
    fn smoothing_raises_entropy_and_floors_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = rng.random_range(2..12);
            let mut p: Vec<f64> = (0..v).map(|_| rng.random::<f64>().powi(3)).collect();
            p[0] += 1e-3;
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= z);
            let eps = rng.random_range(0.0..0.99);
            let base = UnigramModel::from_probs(p.clone()).unwrap();
            let s = smooth(base, SmoothingConfig::new(eps).unwrap());
            let q = s.next_dist(&[], &[]).unwrap();
            assert!(entropy(&q) >= entropy(&p) - 1e-12);
            assert!(q.iter().all(|&x| x >= eps / v as f64 - 1e-15));
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
