//! Trainable appearance models: a 2D objectness segmenter and a 3D
//! CenterNet-style detector, both small gradient-trained heads over fixed
//! handcrafted feature stacks, trained on supervision regions under heavy
//! augmentation.

mod checkpoint;
mod conv;
mod det;
mod features2d;
mod features3d;
mod seg;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use det::{
    det_loss, encode_targets, infer_det, DecodeConfig, DetModel3D, CH_OBJ, CH_OFFSET, CH_ORIENT,
    CH_SIZE, DET_OUT, DET_PARAM_COUNT,
};
pub use features2d::{feature_stack_2d, FeatureStack2D, FEAT2D_CHANNELS};
pub use features3d::{feature_stack_3d, FeatureStack3D, FEAT3D_CHANNELS};
pub use seg::{infer_seg, labels_from_map, seg_loss, SegModel2D, SEG_PARAM_COUNT};
pub use train::{
    train_det, train_seg, AugmentationSpec, DetFrame, OptimizerConfig, SegFrame, TrainError,
    TrainReport,
};
