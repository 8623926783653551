//! MNIST IDX reader.
//!
//! Image files start with the big-endian magic `0x00000803` followed by the
//! image count, rows and columns; label files with `0x00000801` and the
//! count. Pixels and labels are one unsigned byte each.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled images stored row-major, channels innermost (H x W x C).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    channels: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

fn be_u32(data: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    data.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

impl Dataset {
    pub fn new(
        rows: usize,
        cols: usize,
        channels: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let per_image = rows * cols * channels;
        if labels.is_empty() || per_image == 0 {
            return Err(Error::param("dataset must be nonempty"));
        }
        if pixels.len() != per_image * labels.len() {
            return Err(Error::shape(format!(
                "{} pixels for {} images of {per_image}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            pixels,
            labels,
        })
    }

    /// Parses an IDX image file and its label file.
    pub fn from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        let magic = be_u32(images, 0, "idx images")?;
        if magic != IDX_IMAGES_MAGIC {
            return Err(Error::format("idx images", format!("magic {magic:#010x}")));
        }
        let count = be_u32(images, 4, "idx images")? as usize;
        let rows = be_u32(images, 8, "idx images")? as usize;
        let cols = be_u32(images, 12, "idx images")? as usize;
        let body = &images[16..];
        if body.len() != count * rows * cols {
            return Err(Error::format(
                "idx images",
                format!(
                    "{} pixel bytes for {count} images of {rows}x{cols}",
                    body.len()
                ),
            ));
        }

        let magic = be_u32(labels, 0, "idx labels")?;
        if magic != IDX_LABELS_MAGIC {
            return Err(Error::format("idx labels", format!("magic {magic:#010x}")));
        }
        let label_count = be_u32(labels, 4, "idx labels")? as usize;
        let label_body = &labels[8..];
        if label_body.len() != label_count {
            return Err(Error::format(
                "idx labels",
                format!("{} bytes for {label_count} labels", label_body.len()),
            ));
        }
        if label_count != count {
            return Err(Error::format(
                "idx labels",
                format!("{label_count} labels for {count} images"),
            ));
        }
        Self::new(rows, cols, 1, body.to_vec(), label_body.to_vec())
    }

    pub fn from_idx_files(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Self::from_idx_bytes(&fs::read(images)?, &fs::read(labels)?)
    }

    /// Loads `<split>-images-idx3-ubyte` and `<split>-labels-idx1-ubyte` from `dir`.
    pub fn load_split(dir: impl AsRef<Path>, split: &str) -> Result<Self> {
        let dir = dir.as_ref();
        Self::from_idx_files(
            dir.join(format!("{split}-images-idx3-ubyte")),
            dir.join(format!("{split}-labels-idx1-ubyte")),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> usize {
        usize::from(self.labels[index])
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols * self.channels;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// Image `index` scaled to `[0, 1]` in channel-major (C x H x W) order.
    pub fn image_chw(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols * self.channels];
        self.write_chw(index, &mut out);
        out
    }

    pub(crate) fn write_chw(&self, index: usize, out: &mut [f64]) {
        let plane = self.rows * self.cols;
        for (p, px) in self.image(index).chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + p] = f64::from(v) / 255.0;
            }
        }
    }
}
