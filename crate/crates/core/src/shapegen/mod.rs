//! Procedural shape classes, view rendering and dataset handling.

mod dataset;
mod families;
mod render;

pub use dataset::{
    build_dataset, decode_views, encode_views, load_dataset, sample_support, save_dataset,
    support_order, train_count, Dataset, DatasetConfig, DatasetManifest, EpisodeClass, EpisodeSpec,
    InstanceRecord, ShapeClassSpec, ShapeInstance, Split, MANIFEST_FILE,
};
pub use families::ShapeFamily;
pub use render::{
    half_extent, render_depth, render_views, render_views_in, Camera, RenderedView,
    DEFAULT_ELEVATION,
};
