//! Image and mask files, dataset layouts, synthetic data and checkpoints.

mod checkpoint;
mod dataset;
mod pnm;
mod synthetic;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
pub use dataset::{default_split_sizes, scan_dataset, DatasetManifest, SamplePair, Split};
pub use pnm::{decode_pnm, encode_pgm, load_image, load_mask, load_pgm, peek_size, quantize, save_pgm, Grid, Raster};
pub use synthetic::{generate_synthetic, synthesize, MAX_FOREGROUND, MIN_FOREGROUND};
