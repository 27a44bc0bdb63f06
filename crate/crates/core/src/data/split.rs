use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{DataError, SiteDataset};
use crate::seed::rng_from_seed;

/// How test patients are chosen. Splits always move whole patients.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitPlan {
    /// Exactly these patients go to the test side.
    TestPatients(BTreeSet<String>),
    /// `⌊fraction · #patients⌋` patients, chosen by a seeded Fisher–Yates
    /// shuffle of the sorted patient ids.
    TestFraction { fraction: f64, seed: u64 },
}

/// Partitions `ds` into `(train, test)` by patient. Record order within each
/// side follows `ds`.
pub fn patient_level_split(ds: &SiteDataset, plan: &SplitPlan) -> Result<(SiteDataset, SiteDataset), DataError> {
    let patients = ds.patients();
    let test: BTreeSet<String> = match plan {
        SplitPlan::TestPatients(ids) => {
            let unknown: Vec<String> = ids.iter().filter(|p| !patients.contains(p.as_str())).cloned().collect();
            if !unknown.is_empty() {
                return Err(DataError::UnknownPatients(unknown));
            }
            ids.clone()
        }
        SplitPlan::TestFraction { fraction, seed } => {
            if !(0.0..1.0).contains(fraction) {
                return Err(DataError::InvalidPlan(format!("test fraction {fraction} outside [0, 1)")));
            }
            let mut order: Vec<&str> = patients.iter().copied().collect();
            order.shuffle(&mut rng_from_seed(*seed));
            let n_test = (fraction * order.len() as f64).floor() as usize;
            order[..n_test].iter().map(|s| s.to_string()).collect()
        }
    };
    let (test_records, train_records): (Vec<_>, Vec<_>) =
        ds.records().iter().cloned().partition(|r| test.contains(&r.patient_id));
    Ok((
        SiteDataset::new(ds.site_id(), train_records)?,
        SiteDataset::new(ds.site_id(), test_records)?,
    ))
}
