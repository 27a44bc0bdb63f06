//! The feature-extraction boundary.
//!
//! A pretrained backbone is expected to run outside this crate and hand over
//! features through feature files. For self-contained runs the built-in
//! `gridpool` extractor averages each channel over a `g×g` grid of cells.

use serde_json::Value;

use super::image_ops::{preprocess, ImageTensor, TARGET_SIDE};
use super::{DataError, Payload, SampleRecord, SiteDataset};

pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> &str;
    fn output_dim(&self) -> usize;
    fn extract(&self, tensor: &ImageTensor) -> Result<Vec<f64>, DataError>;
}

/// Per-cell, per-channel means over a `grid × grid` partition (`d = 3·grid²`).
///
/// Cell `(row, col)` covers rows `⌊row·H/g⌋..⌊(row+1)·H/g⌋` and the analogous
/// columns. Output index is `(row·g + col)·3 + channel`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPool {
    pub grid: usize,
}

impl GridPool {
    pub const ID: &'static str = "gridpool";
    pub const DEFAULT_GRID: usize = 4;
}

impl FeatureExtractor for GridPool {
    fn id(&self) -> &str {
        Self::ID
    }

    fn output_dim(&self) -> usize {
        3 * self.grid * self.grid
    }

    fn extract(&self, t: &ImageTensor) -> Result<Vec<f64>, DataError> {
        let g = self.grid;
        let (h, w) = (t.height(), t.width());
        if g == 0 || h < g || w < g {
            return Err(DataError::TensorTooSmall { height: h, width: w, grid: g });
        }
        let mut out = Vec::with_capacity(self.output_dim());
        for row in 0..g {
            let (y0, y1) = (row * h / g, (row + 1) * h / g);
            for col in 0..g {
                let (x0, x1) = (col * w / g, (col + 1) * w / g);
                let mut sums = [0.0; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        for (c, s) in sums.iter_mut().enumerate() {
                            *s += t.get(y, x, c);
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                out.extend(sums.iter().map(|s| s / n));
            }
        }
        Ok(out)
    }
}

/// Looks up an extractor by id. `config` is a JSON object; `gridpool` reads an
/// optional positive integer `grid` (default 4).
pub fn build_extractor(id: &str, config: &Value) -> Result<Box<dyn FeatureExtractor>, DataError> {
    match id {
        GridPool::ID => {
            let grid = match config.get("grid") {
                None | Some(Value::Null) => GridPool::DEFAULT_GRID,
                Some(v) => v
                    .as_u64()
                    .filter(|&g| g >= 1 && g as usize <= TARGET_SIDE)
                    .ok_or_else(|| DataError::InvalidExtractorConfig(format!("grid must be an integer in 1..=256, got {v}")))?
                    as usize,
            };
            Ok(Box::new(GridPool { grid }))
        }
        other => Err(DataError::UnknownExtractor(other.to_string())),
    }
}

pub fn extract_features(tensor: &ImageTensor, extractor_id: &str, config: &Value) -> Result<Vec<f64>, DataError> {
    build_extractor(extractor_id, config)?.extract(tensor)
}

/// Replaces every image payload by `extractor(preprocess(image))`.
pub fn featurize(ds: &SiteDataset, extractor: &dyn FeatureExtractor) -> Result<SiteDataset, DataError> {
    let records = ds
        .records()
        .iter()
        .map(|r| match &r.payload {
            Payload::Features(_) => Ok(r.clone()),
            Payload::Image(img) => {
                let f = extractor.extract(&preprocess(img)?)?;
                SampleRecord::new(r.sample_id.clone(), r.patient_id.clone(), r.site_id.clone(), r.label(), Payload::Features(f))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    SiteDataset::new(ds.site_id(), records)
}
