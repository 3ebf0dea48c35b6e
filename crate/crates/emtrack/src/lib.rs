//! Unsupervised discovery and tracking of moving rigid objects in RGB-D video.
//!
//! The pipeline runs in rounds: motion cues (optical flow + egomotion) seed
//! conservative object proposals, those proposals train appearance models
//! (a 2D objectness segmenter and a 3D detection head), and the ensemble of
//! cues then relabels the data for the next round. A built-in synthetic
//! RGB-D scene simulator provides ground truth for end-to-end verification.
//!
//! Module map:
//! - [`geom`]: shared geometric types (transforms, grids, boxes) and primitives
//! - [`sim`]: synthetic RGB-D sequence generator with exact ground truth
//! - [`flow`]: block-matching optical flow + forward/backward cycle check
//! - [`ego`]: 3D flow lifting, Kabsch/RANSAC egomotion, motion fields
//! - [`discover`]: saliency, ensemble fusion, pseudo-labels, supervision regions
//! - [`detect`]: feature stacks and the trainable 2D/3D heads
//! - [`track`]: IoU association, template correlation, trajectory library
//! - [`pipeline`]: EM rounds, dataset I/O, evaluation, CLI

pub mod detect;
pub mod discover;
pub mod ego;
pub mod flow;
pub mod geom;
pub mod pipeline;
pub mod sim;
pub mod track;
