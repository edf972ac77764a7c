//! Objectives, optimizer, training loops and evaluation metrics.

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use loss::{
    pretrain_loss, pretrain_objective, task_loss, PretrainLossParts, PretrainLossVars, DEFAULT_BETA, PAPER_SIGN_BETA,
};
pub use metrics::{auprc, auroc, binary_report, macro_metrics, mann_whitney_u2, ClassMetrics, EvalReport};
pub use optim::{Adam, AdamConfig};
pub use trainer::{
    evaluate, evaluate_pretrain, finetune, finetune_curve_csv, loss_curve_csv, model_for_regime, predict_scores,
    pretrain, FinetuneRow, LossRow, PretrainOutcome, Regime, TrainConfig, FINETUNE_CSV_HEADER, LOSS_CSV_HEADER,
};
