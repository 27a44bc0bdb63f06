//! Sample records, site datasets and everything that turns raw site data into
//! training examples.
//!
//! Labels are 1-based here and in every file format:
//!
//! | label | group                  |
//! |-------|------------------------|
//! | 1     | control                |
//! | 2     | glycine substitution   |
//! | 3     | pseudoexon insertion   |
//! | 4     | exon skipping          |
//!
//! [`SampleRecord::class_index`] gives the 0-based index the model uses.

mod augment;
mod features;
mod image_ops;
mod manifest;
mod split;
mod synth;

use std::collections::BTreeSet;
use std::path::PathBuf;

use image::RgbImage;
use thiserror::Error;

use crate::model::Example;

pub use augment::{augment, augment_dataset, brightness, flip_horizontal, hsv_to_rgb, rgb_to_hsv, rotate, AugmentationPolicy};
pub use features::{build_extractor, extract_features, featurize, FeatureExtractor, GridPool};
pub use image_ops::{preprocess, resize_bilinear, ImageTensor, TARGET_SIDE};
pub use manifest::{load_manifest, read_feature_file, save_manifest, write_feature_file, MANIFEST_HEADER};
pub use split::{patient_level_split, SplitPlan};
pub use synth::{synthesize_dataset, SiteSpec, SynthSpec, LARGE_SITE_COUNTS, SMALL_SITE_COUNTS};

/// Number of classes carried by the label scheme.
pub const NUM_CLASSES: usize = 4;

pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["control", "glycine substitution", "pseudoexon insertion", "exon skipping"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    MalformedRow { path: PathBuf, line: u64, message: String },
    #[error("{path}: line {line}: label {label} outside 1..=4")]
    LabelOutOfRange { path: PathBuf, line: u64, label: i64 },
    #[error("{path}: line {line}: referenced file {target} does not exist")]
    DanglingReference { path: PathBuf, line: u64, target: PathBuf },
    #[error("{path}: {message}")]
    FeatureFormat { path: PathBuf, message: String },
    #[error("{path}: cannot decode image: {message}")]
    ImageDecode { path: PathBuf, message: String },
    #[error("record {sample_id} belongs to site {found}, dataset is {expected}")]
    SiteMismatch { sample_id: String, expected: String, found: String },
    #[error("label {0} outside 1..=4")]
    InvalidLabel(u8),
    #[error("invalid sample id {0:?}")]
    InvalidSampleId(String),
    #[error("test patients not present in dataset: {0:?}")]
    UnknownPatients(Vec<String>),
    #[error("invalid split plan: {0}")]
    InvalidPlan(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown feature extractor {0:?}")]
    UnknownExtractor(String),
    #[error("invalid extractor config: {0}")]
    InvalidExtractorConfig(String),
    #[error("tensor is {height}x{width}, extractor needs at least {grid}x{grid}")]
    TensorTooSmall { height: usize, width: usize, grid: usize },
    #[error("record {0} carries an image; extract features first")]
    NotFeaturized(String),
    #[error("feature length mismatch: record {sample_id} has {actual}, expected {expected}")]
    FeatureDimMismatch { sample_id: String, expected: usize, actual: usize },
    #[error("invalid synthesis request: {0}")]
    InvalidSynthesis(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Image(RgbImage),
    Features(Vec<f64>),
}

/// One labeled example owned by a site.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub patient_id: String,
    pub site_id: String,
    label: u8,
    pub payload: Payload,
}

impl SampleRecord {
    pub fn new(
        sample_id: impl Into<String>,
        patient_id: impl Into<String>,
        site_id: impl Into<String>,
        label: u8,
        payload: Payload,
    ) -> Result<Self, DataError> {
        if !(1..=NUM_CLASSES as u8).contains(&label) {
            return Err(DataError::InvalidLabel(label));
        }
        Ok(SampleRecord {
            sample_id: sample_id.into(),
            patient_id: patient_id.into(),
            site_id: site_id.into(),
            label,
            payload,
        })
    }

    /// 1-based label.
    pub fn label(&self) -> u8 {
        self.label
    }

    /// 0-based class index used by the model.
    pub fn class_index(&self) -> usize {
        self.label as usize - 1
    }

    pub fn features(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Features(f) => Some(f),
            Payload::Image(_) => None,
        }
    }

    pub fn to_example(&self) -> Result<Example, DataError> {
        match &self.payload {
            Payload::Features(f) => Ok(Example::new(f.clone(), self.class_index())),
            Payload::Image(_) => Err(DataError::NotFeaturized(self.sample_id.clone())),
        }
    }
}

/// A site's local collection of records. Every record carries the site's id.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteDataset {
    site_id: String,
    records: Vec<SampleRecord>,
}

impl SiteDataset {
    pub fn new(site_id: impl Into<String>, records: Vec<SampleRecord>) -> Result<Self, DataError> {
        let site_id = site_id.into();
        if let Some(r) = records.iter().find(|r| r.site_id != site_id) {
            return Err(DataError::SiteMismatch {
                sample_id: r.sample_id.clone(),
                expected: site_id,
                found: r.site_id.clone(),
            });
        }
        Ok(SiteDataset { site_id, records })
    }

    pub fn empty(site_id: impl Into<String>) -> Self {
        SiteDataset { site_id: site_id.into(), records: Vec::new() }
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }

    /// `N_k`.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    /// Record count per label, indexed by `label - 1`.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.records {
            counts[r.class_index()] += 1;
        }
        counts
    }

    /// Length of the feature vectors, when every record is featurized and
    /// they all agree.
    pub fn feature_dim(&self) -> Result<Option<usize>, DataError> {
        let mut dim = None;
        for r in &self.records {
            let f = r.features().ok_or_else(|| DataError::NotFeaturized(r.sample_id.clone()))?;
            match dim {
                None => dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(DataError::FeatureDimMismatch {
                        sample_id: r.sample_id.clone(),
                        expected: d,
                        actual: f.len(),
                    })
                }
                _ => {}
            }
        }
        Ok(dim)
    }

    /// Model view of the records, in stored order.
    pub fn examples(&self) -> Result<Vec<Example>, DataError> {
        self.records.iter().map(SampleRecord::to_example).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, site: &str, label: u8) -> SampleRecord {
        SampleRecord::new(id, "p", site, label, Payload::Features(vec![1.0, 2.0])).unwrap()
    }

    #[test]
    fn label_bounds() {
        assert!(matches!(
            SampleRecord::new("a", "p", "s", 5, Payload::Features(vec![])),
            Err(DataError::InvalidLabel(5))
        ));
        assert!(SampleRecord::new("a", "p", "s", 0, Payload::Features(vec![])).is_err());
        assert_eq!(rec("a", "s", 4).class_index(), 3);
    }

    #[test]
    fn dataset_enforces_site_id() {
        assert!(SiteDataset::new("nih", vec![rec("a", "nih", 1), rec("b", "ucl", 2)]).is_err());
        let ds = SiteDataset::new("nih", vec![rec("a", "nih", 1), rec("b", "nih", 2), rec("c", "nih", 2)]).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.class_counts(), [1, 2, 0, 0]);
        assert_eq!(ds.feature_dim().unwrap(), Some(2));
        let ex = ds.examples().unwrap();
        assert_eq!(ex[1].class, 1);
    }

    #[test]
    fn image_records_need_featurizing() {
        let r = SampleRecord::new("a", "p", "s", 1, Payload::Image(RgbImage::new(2, 2))).unwrap();
        assert!(matches!(r.to_example(), Err(DataError::NotFeaturized(_))));
    }
}
