//! Harness models selectable from the command line.

use clap::{Args, ValueEnum};
use higgs::harness::{train_tiny, QuadraticModel, TinyConfig, TinyModel};
use higgs::linearity::LossModel;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Block-quadratic objective with analytic alphas.
    Quadratic,
    /// Tanh MLP trained on a synthetic cluster dataset.
    Tiny,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "quadratic")]
    pub model: ModelKind,
    /// Quadratic curvatures, one per block.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,3,8")]
    pub z: Vec<f64>,
    /// Quadratic block sizes.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,1024,4096")]
    pub dims: Vec<usize>,
    /// Quadratic minimum value.
    #[arg(long, default_value_t = 0.0)]
    pub base: f64,
    /// Seed for W★ or for the tiny model's data, init and training; defaults to the run seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
}

pub enum Model {
    Quadratic(QuadraticModel),
    Tiny(Box<TinyModel>),
}

impl Model {
    pub fn as_loss(&self) -> &dyn LossModel {
        match self {
            Model::Quadratic(m) => m,
            Model::Tiny(m) => m.as_ref(),
        }
    }

    pub fn analytic_alphas(&self) -> Option<Vec<f64>> {
        match self {
            Model::Quadratic(m) => Some(m.analytic_alphas()),
            Model::Tiny(_) => None,
        }
    }
}

impl ModelArgs {
    pub fn seed(&self, run_seed: u64) -> u64 {
        self.model_seed.unwrap_or(run_seed)
    }

    pub fn build(&self, run_seed: u64) -> Result<Model, CliError> {
        let seed = self.seed(run_seed);
        Ok(match self.model {
            ModelKind::Quadratic => Model::Quadratic(QuadraticModel::random(&self.z, &self.dims, self.base, seed)?),
            ModelKind::Tiny => Model::Tiny(Box::new(train_tiny(&TinyConfig::default(), seed)?)),
        })
    }
}
