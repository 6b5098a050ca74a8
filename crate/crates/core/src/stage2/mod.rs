//! Stage II: unsupervised training of the fusion backbone, guided by the
//! frozen Stage I encoder.

mod backbone;
mod losses;
mod train;

pub use backbone::{
    backbone_forward, backbone_forward_batch, pan_ratio, BackboneGraph, BackboneParams, BACKBONE_INPUT_CENTER, BACKBONE_KERNELS,
    BACKBONE_WIDTHS,
};
pub use losses::{
    loss_directional, loss_pseudo, loss_qnr, loss_semantic, loss_spat, loss_spec, qnr_distortions, qnr_reference,
    SemanticAnchors, SemanticOutcome, DIRECTION_EPS,
};
pub use train::{
    fuse_reduced, pretrain_backbone_reduced, pretrain_log_csv, train_stage2, LossGroups, PretrainConfig, Stage2Config,
    Stage2Log, Stage2Row, Stage2Trainer, ABLATION_ROWS, PRETRAIN_LOG_HEADER, TABLE2_LABELS,
};
