//! Readers and writers: point clouds, labels, boxes, field banks and key=value configs.

mod bank;
mod binary;
mod boxes;
pub mod hexfloat;
mod kv;

pub use bank::{count_vectors_on_disk, decode_bank, encode_bank, load_bank, save_bank, BANK_FORMAT, BANK_VERSION};
pub use binary::{
    decode_cloud, decode_labels, encode_cloud, encode_labels, pack_label, read_cloud, read_labeled, read_labels,
    unpack_label, write_cloud, write_labeled, write_labels,
};
pub use boxes::{decode_boxes, encode_boxes, read_boxes, write_boxes, LabeledBox};
pub use kv::KeyValues;
