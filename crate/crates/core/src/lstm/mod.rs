//! LSTM sequence regression: one scalar output per model.

pub mod adam;
pub mod net;
pub mod train;

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Error, Result};
use crate::sequence::{Standardizer, Target};

pub use adam::{learning_rate, AdamState};
pub use net::{Gradients, Layout};
pub use train::{
    evaluate, evaluate_on, folds, kfold_tune, r_squared_mae, train, train_on, CandidateScore, EarlyStopping, EvalReport,
    StopDecision, TrainingHistory, TuneReport,
};

/// Hyperparameters of one per-target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden_sizes: Vec<usize>,
    pub window: usize,
    pub input_dim: usize,
    pub l2_lambda: f64,
    pub recurrent_dropout: f64,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: f64,
    pub patience: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64],
            window: crate::sequence::WINDOW,
            input_dim: crate::features::N_FEATURES,
            l2_lambda: 1e-4,
            recurrent_dropout: 0.10,
            lr0: 0.01,
            lr_decay_factor: 0.9,
            lr_decay_every: 10_000.0,
            patience: 25,
            min_epochs: 10,
            max_epochs: 500,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl LstmConfig {
    pub fn with_hidden(mut self, sizes: &[usize]) -> Self {
        self.hidden_sizes = sizes.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(invalid_config!("hidden layer sizes must be positive"));
        }
        if self.window == 0 || self.input_dim == 0 || self.batch_size == 0 {
            return Err(invalid_config!("window, input_dim and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(invalid_config!("recurrent dropout must lie in [0, 1)"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(invalid_config!("learning-rate decay factor must lie in (0, 1]"));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay_every > 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(invalid_config!("lr0 and lr_decay_every must be positive, l2_lambda non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(invalid_config!("max_epochs must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.input_dim, &self.hidden_sizes, self.window)
    }
}

/// Trained (or freshly initialised) model with its input and target
/// normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub target: Target,
    pub params: Vec<f64>,
    pub input_scaler: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
    pub history: TrainingHistory,
}

impl LstmModel {
    /// Glorot-uniform input kernels, orthogonal recurrent kernels, forget
    /// bias 1, identity normalisation.
    pub fn init(config: LstmConfig, target: Target) -> Result<Self> {
        config.validate()?;
        let params = net::init_params(&config.layout(), config.seed);
        let width = config.input_dim;
        Ok(Self {
            config,
            target,
            params,
            input_scaler: Standardizer::identity(width),
            target_mean: 0.0,
            target_std: 1.0,
            history: TrainingHistory::default(),
        })
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let expected = self.config.window * self.config.input_dim;
        if window.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: window.len(),
            });
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input!("input window contains non-finite values"));
        }
        Ok(())
    }

    /// Prediction in target units for one raw-unit window
    /// (`window * input_dim`, row-major by time).
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        self.check_window(window)?;
        let mut x = window.to_vec();
        self.input_scaler.apply(&mut x);
        let z = net::forward(&self.layout(), &self.params, &x, None);
        Ok(z * self.target_std + self.target_mean)
    }

    pub fn predict_many(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        windows.iter().map(|w| self.predict(w)).collect()
    }

    /// Training-mode prediction with a recurrent dropout mask drawn from
    /// `seed`.
    pub fn predict_with_dropout(&self, window: &[f64], seed: u64) -> Result<f64> {
        self.check_window(window)?;
        let mut x = window.to_vec();
        self.input_scaler.apply(&mut x);
        let layout = self.layout();
        let masks = net::dropout_masks(&layout, self.config.recurrent_dropout, seed);
        let z = net::forward(&layout, &self.params, &x, Some(&masks));
        Ok(z * self.target_std + self.target_mean)
    }
}

/// One trained model per target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub models: Vec<LstmModel>,
}

impl ModelSet {
    pub fn get(&self, target: Target) -> Option<&LstmModel> {
        self.models.iter().find(|m| m.target == target)
    }

    /// Adds `model`, replacing any model for the same target.
    pub fn insert(&mut self, model: LstmModel) {
        match self.models.iter_mut().find(|m| m.target == model.target) {
            Some(slot) => *slot = model,
            None => self.models.push(model),
        }
    }

    /// Targets present, in canonical order.
    pub fn targets(&self) -> Vec<Target> {
        Target::all().into_iter().filter(|t| self.get(*t).is_some()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }
}
