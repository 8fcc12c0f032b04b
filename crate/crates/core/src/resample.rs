//! Client-side rebalancing: SMOTE oversampling followed by Tomek-link
//! cleaning.
//!
//! Neighbor search is exact brute force. Partitions are a few hundred rows,
//! so an O(n²) scan is both fast enough and free of approximation.

use rand::Rng;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Default number of SMOTE neighbors.
pub const SMOTE_K: usize = 5;

/// k nearest neighbors of every row, self excluded, nearest first.
/// Equal distances are broken by the lower row index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub k: usize,
    pub neighbor_lists: Vec<Vec<usize>>,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn build_knn(features: &Matrix, k: usize) -> Result<NeighborIndex> {
    let n = features.rows();
    if n <= k {
        return Err(Error::Data(format!(
            "k-NN with k = {k} needs more than {k} rows, got {n}"
        )));
    }
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    let neighbor_lists = (0..n)
        .map(|i| {
            let xi = features.row(i);
            candidates.clear();
            candidates.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (squared_distance(xi, features.row(j)), j)),
            );
            let by_distance =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < candidates.len() {
                candidates.select_nth_unstable_by(k - 1, by_distance);
                candidates.truncate(k);
            }
            candidates.sort_unstable_by(by_distance);
            candidates.iter().map(|&(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborIndex { k, neighbor_lists })
}

fn class_counts(labels: &[f64]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    (labels.len() - pos, pos)
}

/// Where a synthetic row came from: `original + lambda * (neighbor - original)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    pub original: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub features: Matrix,
    pub labels: Vec<f64>,
    /// One entry per appended synthetic row, indices into the input.
    pub origins: Vec<SyntheticOrigin>,
}

/// SMOTE with the parent pair and interpolation weight of every synthetic row.
pub fn smote_detailed<R: Rng + ?Sized>(
    features: &Matrix,
    labels: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<SmoteOutput> {
    if features.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let passthrough = || SmoteOutput {
        features: features.clone(),
        labels: labels.to_vec(),
        origins: Vec::new(),
    };
    let (neg, pos) = class_counts(labels);
    let (minority_label, minority, majority) = if pos <= neg {
        (1.0, pos, neg)
    } else {
        (0.0, neg, pos)
    };
    if minority <= 1 || minority == majority || k == 0 {
        return Ok(passthrough());
    }

    let minority_rows: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| (y > 0.5) == (minority_label > 0.5))
        .map(|(i, _)| i)
        .collect();
    let k = k.min(minority - 1);
    let knn = build_knn(&features.select_rows(&minority_rows), k)?;

    let deficit = majority - minority;
    let mut out = features.clone();
    let mut out_labels = labels.to_vec();
    let mut origins = Vec::with_capacity(deficit);
    let mut synthetic = vec![0.0; features.cols()];
    for _ in 0..deficit {
        let pick = rng.random_range(0..minority * k);
        let (local, nth) = (pick / k, pick % k);
        let lambda: f64 = rng.random();
        let original = minority_rows[local];
        let neighbor = minority_rows[knn.neighbor_lists[local][nth]];
        let (xo, xn) = (features.row(original), features.row(neighbor));
        for ((s, a), b) in synthetic.iter_mut().zip(xo).zip(xn) {
            *s = a + lambda * (b - a);
        }
        out.push_row(&synthetic)?;
        out_labels.push(minority_label);
        origins.push(SyntheticOrigin {
            original,
            neighbor,
            lambda,
        });
    }
    Ok(SmoteOutput {
        features: out,
        labels: out_labels,
        origins,
    })
}

/// Oversamples the minority class until both classes have equal counts.
/// Inputs with at most one minority row pass through unchanged.
pub fn smote<R: Rng + ?Sized>(
    features: &Matrix,
    labels: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<(Matrix, Vec<f64>)> {
    let out = smote_detailed(features, labels, k, rng)?;
    Ok((out.features, out.labels))
}

/// Opposite-label pairs `(a, b)`, `a < b`, that are each other's nearest
/// neighbor. Sorted by `a`.
pub fn tomek_links(features: &Matrix, labels: &[f64]) -> Result<Vec<(usize, usize)>> {
    if features.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.rows() < 2 {
        return Err(Error::Data("Tomek links need at least 2 rows".into()));
    }
    let nn = build_knn(features, 1)?;
    let nearest: Vec<usize> = nn.neighbor_lists.iter().map(|l| l[0]).collect();
    Ok((0..nearest.len())
        .filter_map(|a| {
            let b = nearest[a];
            let linked = a < b && nearest[b] == a && (labels[a] > 0.5) != (labels[b] > 0.5);
            linked.then_some((a, b))
        })
        .collect())
}

/// Which members of a Tomek link are deleted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TomekRemoval {
    #[default]
    Both,
    MajorityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleReport {
    /// (negatives, positives)
    pub before_counts: (usize, usize),
    pub synthetic_added: usize,
    pub tomek_removed: usize,
    pub after_counts: (usize, usize),
}

impl ResampleReport {
    pub fn before_total(&self) -> usize {
        self.before_counts.0 + self.before_counts.1
    }

    pub fn after_total(&self) -> usize {
        self.after_counts.0 + self.after_counts.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoteTomek {
    pub k: usize,
    pub removal: TomekRemoval,
}

impl Default for SmoteTomek {
    fn default() -> Self {
        Self {
            k: SMOTE_K,
            removal: TomekRemoval::Both,
        }
    }
}

impl SmoteTomek {
    pub fn resample<R: Rng + ?Sized>(
        &self,
        features: &Matrix,
        labels: &[f64],
        rng: &mut R,
    ) -> Result<(Matrix, Vec<f64>, ResampleReport)> {
        let before_counts = class_counts(labels);
        let (x, y) = smote(features, labels, self.k, rng)?;
        let synthetic_added = y.len() - labels.len();

        let mut drop = vec![false; y.len()];
        if y.len() >= 2 {
            // majority as seen before oversampling; afterwards the classes tie
            let (neg, pos) = before_counts;
            let majority_label = pos > neg;
            for (a, b) in tomek_links(&x, &y)? {
                match self.removal {
                    TomekRemoval::Both => {
                        drop[a] = true;
                        drop[b] = true;
                    }
                    TomekRemoval::MajorityOnly if pos != neg => {
                        for i in [a, b] {
                            if (y[i] > 0.5) == majority_label {
                                drop[i] = true;
                            }
                        }
                    }
                    TomekRemoval::MajorityOnly => {}
                }
            }
        }
        let keep: Vec<usize> = (0..y.len()).filter(|&i| !drop[i]).collect();
        let features = x.select_rows(&keep);
        let labels: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let report = ResampleReport {
            before_counts,
            synthetic_added,
            tomek_removed: y.len() - keep.len(),
            after_counts: class_counts(&labels),
        };
        Ok((features, labels, report))
    }
}

/// SMOTE (k = 5) then deletion of both members of every Tomek link.
pub fn smote_tomek<R: Rng + ?Sized>(
    features: &Matrix,
    labels: &[f64],
    rng: &mut R,
) -> Result<(Matrix, Vec<f64>, ResampleReport)> {
    SmoteTomek::default().resample(features, labels, rng)
}
