use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::synth::patch::Patch;

/// Patient-disjoint train/test/validation partitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Patch>,
    pub test: Vec<Patch>,
    pub val: Vec<Patch>,
}

/// Largest-remainder apportionment of `total` items over `fractions`,
/// guaranteeing at least one item per split.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    // every split keeps at least one patient
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..counts.len())
            .max_by_key(|&i| (counts[i], usize::MAX - i))
            .unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    counts
}

/// Shuffles patients and assigns whole patients to up to three splits
/// (train, test, val) in proportion to `fractions`.
pub fn split_by_patient<R: Rng + ?Sized>(
    patches: &[Patch],
    fractions: &[f64],
    rng: &mut R,
) -> Result<DatasetSplits> {
    if fractions.is_empty() || fractions.len() > 3 {
        return Err(Error::invalid(
            "fractions",
            "need between 1 and 3 split fractions",
        ));
    }
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) {
        return Err(Error::invalid(
            "fractions",
            "every fraction must be positive",
        ));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "fractions",
            format!("must sum to 1, got {sum}"),
        ));
    }
    let mut groups: BTreeMap<u32, Vec<&Patch>> = BTreeMap::new();
    for p in patches {
        groups.entry(p.patient_id).or_default().push(p);
    }
    if groups.len() < fractions.len() {
        return Err(Error::invalid(
            "patients",
            format!(
                "{} patients cannot fill {} splits",
                groups.len(),
                fractions.len()
            ),
        ));
    }
    let mut ids: Vec<u32> = groups.keys().copied().collect();
    ids.shuffle(rng);
    let counts = apportion(ids.len(), fractions);

    let mut splits = DatasetSplits::default();
    let mut at = 0;
    for (k, &count) in counts.iter().enumerate() {
        let target = match k {
            0 => &mut splits.train,
            1 => &mut splits.test,
            _ => &mut splits.val,
        };
        let mut chosen = ids[at..at + count].to_vec();
        chosen.sort_unstable();
        for id in chosen {
            target.extend(groups[&id].iter().map(|&p| p.clone()));
        }
        at += count;
    }
    Ok(splits)
}
