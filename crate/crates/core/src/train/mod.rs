//! Optimizer, learning-rate schedule, and the train/evaluate loops.

mod adam;
mod runner;

pub use adam::{adam_step, AdamConfig, AdamState, Optimizer};
pub use runner::{evaluate, predict, train, EpochMetrics, TrainOutputs, LOG_HEADER};

use crate::data::DatasetName;
use crate::error::{Error, Result};

/// Optimization hyperparameters. `drop_points` are fractions of the total
/// epoch count at which the learning rate is divided by `drop_factor`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub drop_points: [f64; 2],
    pub drop_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 200,
            drop_points: [0.375, 0.75],
            drop_factor: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the dataset's epoch budget: 200 for CIFAR-10, 60 for SVHN.
    pub fn for_dataset(name: DatasetName) -> Self {
        Self {
            epochs: match name {
                DatasetName::Cifar10 => 200,
                DatasetName::Svhn => 60,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.drop_points;
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(Error::Config(format!(
                "drop points must satisfy 0 < first < second < 1, got {a} and {b}"
            )));
        }
        if self.drop_factor <= 1.0 {
            return Err(Error::Config(format!("drop factor must exceed 1, got {}", self.drop_factor)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.eps > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate, eps and betas are out of range".into()));
        }
        Ok(())
    }

    /// Epochs at which each drop takes effect: `floor(fraction * epochs)`.
    pub fn drop_epochs(&self) -> [usize; 2] {
        self.drop_points.map(|f| (f * self.epochs as f64).floor() as usize)
    }

    /// Piecewise-constant learning rate; a drop applies from the start of its epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.drop_epochs().iter().filter(|&&d| epoch >= d).count();
        self.lr0 / self.drop_factor.powi(drops as i32)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.drop_epochs(), [75, 150]);
        assert_eq!(c.lr_at(0), 1e-3);
        assert!((c.lr_at(80) - 2e-4).abs() < 1e-18);
        assert!((c.lr_at(149) - 2e-4).abs() < 1e-18);
        assert!((c.lr_at(150) - 4e-5).abs() < 1e-18);
    }

    #[test]
    fn dataset_epochs() {
        assert_eq!(TrainConfig::for_dataset(DatasetName::Cifar10).epochs, 200);
        assert_eq!(TrainConfig::for_dataset(DatasetName::Svhn).epochs, 60);
    }

    #[test]
    fn rejects_bad_drops() {
        let mut c = TrainConfig {
            drop_points: [0.8, 0.4],
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.drop_points = [0.375, 0.75];
        c.drop_factor = 1.0;
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_non_increasing_with_three_values(epochs in 8usize..1000) {
            let c = TrainConfig { epochs, ..TrainConfig::default() };
            let lrs: Vec<f64> = (0..epochs).map(|e| c.lr_at(e)).collect();
            prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            let mut distinct = lrs.clone();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), 3);
        }
    }
}
