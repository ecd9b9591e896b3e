//! Training-loss terms as deterministic functionals.
//!
//! Point-based terms return a [`Term`] holding the value and its analytic
//! gradient with respect to the positions (or offsets) they take. Image
//! terms are evaluation-only. Reductions use [`pairwise_sum`] so values do not
//! depend on thread count.
//!
//! [`pairwise_sum`]: crate::math::pairwise_sum

mod geometric;
pub mod gradcheck;
mod image;
mod layered;
mod report;

pub use geometric::{loss_edge, loss_offset, loss_stitch_labels, loss_stitch_positions, loss_tv_labels, loss_tv_positions};
pub use image::{loss_image, loss_label, loss_normal_image, ssim, ImageLoss, SegClass, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use layered::{chamfer_pairs, loss_chamfer, loss_coll, loss_layer, Chamfer, LayerTerm};
pub use report::{total_loss, LossInputs, LossReport, LossTerm, LossWeights, Stage};

use crate::math::Vec3;

/// Scalar loss with gradient over 3-vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Vec<Vec3>,
    pub warnings: Vec<String>,
}

/// Scalar loss with gradient over (p_body, p_cloth) label pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelTerm {
    pub value: f64,
    pub grad: Vec<[f64; 2]>,
    pub warnings: Vec<String>,
}
