//! File formats: tensors, weights, 8-bit images, offset dumps and reports.
//!
//! All multi-byte numbers are little-endian. Text output uses Rust's
//! shortest round-trip float formatting, so files are byte-stable.

mod image;
mod offsets;
mod report;
mod tensor_file;
mod weights_file;

pub use image::{decode_image, encode_image, read_image, write_image};
pub use offsets::{offset_rows, read_offset_dump, write_offset_dump, OffsetRow, OFFSET_HEADER};
pub use report::{
    grad_report_kv, grad_report_table, read_loss_csv, write_grad_report, write_loss_csv,
};
pub use tensor_file::{
    decode_array, decode_tensor, encode_array, encode_tensor, read_tensor, write_tensor, Array,
    TENSOR_MAGIC, TENSOR_VERSION,
};
pub use weights_file::{
    decode_weights, encode_weights, load_weights, read_weights_file, save_weights, WEIGHTS_MAGIC,
};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
