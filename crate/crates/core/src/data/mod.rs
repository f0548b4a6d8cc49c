//! Dataset ingestion, image files, synthetic faces and model bundles.

pub mod attrs;
pub mod bundle;
pub mod image;
pub mod synth;

pub use attrs::{
    load_attr_list, load_identities, parse_attr_list, write_attr_list, AttributeDataset, ImageSource, Record, Split,
    SplitRatios,
};
pub use bundle::{decode_bundle, encode_bundle, load_bundle, load_bundle_for, save_bundle, BUNDLE_VERSION};
pub use image::{decode_gray_image, load_gray_image, save_pgm, save_rcim};
pub use synth::{gen_synthetic, synth_attribute_names, MAX_SYNTH_ATTRIBUTES};
