//! Checkpoints, reports and run manifests on disk.

mod checkpoint;
mod manifest;
mod report;

use sha2::{Digest, Sha256};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint,
    ArtifactEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use manifest::{RunDir, RunManifest, MANIFEST_FILE};
pub use report::{
    auc_grid_csv, auc_plotdata, curves_plotdata, fisher_plotdata, fisher_table_csv, read_document,
    read_report, to_canonical_json, write_document, write_report, Document, ReportPaths,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub(crate) fn sha256(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    sha256(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
