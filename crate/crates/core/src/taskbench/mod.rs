//! Synthetic target tasks and the experiment harness.

pub mod classifier;
pub mod data;
pub mod experiments;
pub mod generator;
pub mod task;

pub use classifier::{accuracy, train_and_eval_classifier, train_classifier, train_encoder, ClassifierConfig, EncoderConfig};
pub use data::{LabeledDataset, Split};
pub use experiments::{
    clear_cache, run_ablation_grid, run_replace_augment, run_scale_sweep, spearman, AblationRow, AblationTable, ArmStats,
    ArmTriple, ExperimentConfig, ExperimentResult, ScaleCurve, ScalePoint, SeedContext,
};
pub use generator::{
    finetune_generator, pretrain_generator, synthesize_dataset, Generator, GeneratorConfig, GuidanceMode,
    PipelineToggles, SynthesisConfig, TrainingCurves,
};
pub use task::{make_task, Family, OodShift, Task, TaskSpec};
