#![allow(dead_code)]

use chatcbm_core::synthetic::{SyntheticData, SyntheticSpec};
use chatcbm_core::{train_probe, Pipeline, PipelineConfig, Split, TrainConfig};

pub fn fast_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        ..TrainConfig::default()
    }
}

pub struct World {
    pub data: SyntheticData<f64>,
    pub pipeline: Pipeline<f64>,
}

pub fn world(spec: &SyntheticSpec, config: PipelineConfig) -> World {
    let data = SyntheticData::<f64>::generate(spec).unwrap();
    let probe = train_probe(&data.split(Split::Train), &data.roster, &fast_train()).unwrap();
    let pipeline = Pipeline::new(
        data.bank.clone(),
        data.roster.clone(),
        probe,
        Some(data.true_priors()),
        data.split(Split::Val),
        config,
    )
    .unwrap();
    World { data, pipeline }
}

/// Every class is a candidate, one demonstration per candidate.
pub fn all_candidates(spec: &SyntheticSpec) -> PipelineConfig {
    PipelineConfig {
        n_candidates: spec.classes,
        k_shots: 1,
        ..PipelineConfig::default()
    }
}
