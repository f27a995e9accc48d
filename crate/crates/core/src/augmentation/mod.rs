//! Dual-modality data augmentation.
//!
//! Geometric ops warp RGB and TIR with one shared transform and remap the
//! ground-truth boxes. Pixel ops act on one image at a time. Enhancement
//! ops may inject one modality's edge map into the other. The composition
//! strategies rearrange whole samples.

pub mod clahe;
pub mod compose;
pub mod enhance;
pub mod geometric;
pub mod pixel;

pub use clahe::{clahe, clahe_channel, ClaheParams};
pub use compose::{mosaic4, region_resample, small_object_magnify, stitcher};
pub use enhance::{
    apply_chain, complementary_enhance, sobel_edges, EnhanceMode, EnhanceOp, EnhancePolicy, FeatureExtractor,
};
pub use geometric::{
    augment_geometric, compose_affine, composite_matrix, mirror_matrix, smooth_offset_field, warp_boxes, warp_pair,
    GeometricParams, GeometricRanges, MirrorKind,
};
pub use pixel::{
    add_noise, adjust_color, adjust_contrast, gamma_gain, light_enhance, pixel_transform, random_lighting, MuMode,
    PixelParams,
};
