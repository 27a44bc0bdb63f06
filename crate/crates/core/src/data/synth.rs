//! Synthetic sites with Gaussian class clusters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Payload, SampleRecord, SiteDataset, NUM_CLASSES};
use crate::seed::{derive_seed, rng_from_seed};

/// Per-label image counts (control, glycine, pseudoexon, exon skipping) of the
/// larger reference site, 300 images in total.
pub const LARGE_SITE_COUNTS: [usize; NUM_CLASSES] = [84, 94, 51, 71];
/// The smaller reference site, same label order, 31 images.
pub const SMALL_SITE_COUNTS: [usize; NUM_CLASSES] = [7, 5, 8, 11];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub site_id: String,
    /// Record count per label, indexed by `label - 1`; at most four entries.
    pub class_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sites: Vec<SiteSpec>,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Mean of class `class` (0-based): `separation/√2` on axis `class mod d`,
    /// zero elsewhere. Means of distinct classes on distinct axes are exactly
    /// `separation` apart. Means depend only on `(d, separation)`, so separate
    /// calls share one class geometry.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.feature_dim];
        m[class % self.feature_dim] = self.class_separation * std::f64::consts::FRAC_1_SQRT_2;
        m
    }
}

/// Draws every site's records: class means from [`SynthSpec::class_mean`],
/// unit-variance isotropic noise, and patients of 2–4 consecutive samples of
/// one class (a class's last patient may be smaller).
///
/// Site `i` uses the stream `derive_seed(seed, i)`. Ids are
/// `<site>-s<nnnn>` for samples and `<site>-p<nnn>` for patients.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<Vec<SiteDataset>, DataError> {
    let invalid = |m: String| Err(DataError::InvalidSynthesis(m));
    if spec.feature_dim == 0 {
        return invalid("feature_dim must be positive".into());
    }
    if !(spec.class_separation >= 0.0 && spec.class_separation.is_finite()) {
        return invalid(format!("class_separation must be nonnegative, got {}", spec.class_separation));
    }
    if let Some(s) = spec.sites.iter().find(|s| s.class_counts.len() > NUM_CLASSES) {
        return invalid(format!("site {} lists {} classes, at most {NUM_CLASSES} allowed", s.site_id, s.class_counts.len()));
    }
    let total: usize = spec.sites.iter().flat_map(|s| &s.class_counts).sum();
    if total == 0 {
        return invalid("zero total samples".into());
    }

    let means: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|c| spec.class_mean(c)).collect();
    spec.sites
        .iter()
        .enumerate()
        .map(|(i, site)| {
            let mut rng = rng_from_seed(derive_seed(spec.seed, i as u64));
            let mut records = Vec::with_capacity(site.class_counts.iter().sum());
            let mut patient_no = 0usize;
            for (class, &count) in site.class_counts.iter().enumerate() {
                let mut left_in_patient = 0usize;
                for _ in 0..count {
                    if left_in_patient == 0 {
                        patient_no += 1;
                        left_in_patient = rng.random_range(2..=4);
                    }
                    left_in_patient -= 1;
                    let x: Vec<f64> = means[class]
                        .iter()
                        .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    records.push(SampleRecord::new(
                        format!("{}-s{:04}", site.site_id, records.len() + 1),
                        format!("{}-p{:03}", site.site_id, patient_no),
                        site.site_id.clone(),
                        class as u8 + 1,
                        Payload::Features(x),
                    )?);
                }
            }
            SiteDataset::new(site.site_id.clone(), records)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_manifest;
    use std::collections::BTreeMap;

    fn two_sites(counts: [[usize; 4]; 2]) -> SynthSpec {
        SynthSpec {
            sites: vec![
                SiteSpec { site_id: "nih".into(), class_counts: counts[0].to_vec() },
                SiteSpec { site_id: "ucl".into(), class_counts: counts[1].to_vec() },
            ],
            feature_dim: 8,
            class_separation: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn reference_site_sizes() {
        let sites = synthesize_dataset(&two_sites([[84, 71, 94, 51], [7, 11, 5, 8]])).unwrap();
        assert_eq!(sites[0].len(), 300);
        assert_eq!(sites[1].len(), 31);
        let sites = synthesize_dataset(&two_sites([LARGE_SITE_COUNTS, SMALL_SITE_COUNTS])).unwrap();
        assert_eq!(sites[0].class_counts(), LARGE_SITE_COUNTS);
        assert_eq!(sites[1].class_counts(), SMALL_SITE_COUNTS);
    }

    #[test]
    fn patients_hold_one_to_four_samples_of_one_class() {
        let sites = synthesize_dataset(&two_sites([LARGE_SITE_COUNTS, SMALL_SITE_COUNTS])).unwrap();
        for site in &sites {
            let mut by_patient: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
            for r in site.records() {
                by_patient.entry(&r.patient_id).or_default().push(r.label());
            }
            for labels in by_patient.values() {
                assert!((1..=4).contains(&labels.len()));
                assert!(labels.iter().all(|&l| l == labels[0]));
            }
        }
    }

    #[test]
    fn zero_separation_shares_means() {
        let spec = SynthSpec { class_separation: 0.0, ..two_sites([[1, 1, 1, 1], [0, 0, 0, 0]]) };
        for c in 1..4 {
            assert_eq!(spec.class_mean(c), spec.class_mean(0));
        }
        let spec = two_sites([[1, 1, 1, 1], [0, 0, 0, 0]]);
        let (a, b) = (spec.class_mean(0), spec.class_mean(2));
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_total_is_an_error() {
        assert!(matches!(synthesize_dataset(&two_sites([[0; 4], [0; 4]])), Err(DataError::InvalidSynthesis(_))));
    }

    #[test]
    fn same_seed_same_manifest_bytes() {
        let spec = two_sites([LARGE_SITE_COUNTS, SMALL_SITE_COUNTS]);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for dir in [&d1, &d2] {
            for site in synthesize_dataset(&spec).unwrap() {
                save_manifest(&site, dir.path().join(format!("{}.csv", site.site_id()))).unwrap();
            }
        }
        for name in ["nih.csv", "ucl.csv", "ucl_data/ucl-s0007.features"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
}
