//! Retrieval quality (mAP@R) and code-analysis metrics.
//!
//! Relevance between two items means their label sets intersect; for
//! single-label data that is plain class equality. The same rule decides
//! whether a pair counts as intra- or inter-class in the distance metrics.

use std::collections::HashMap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, invalid, Result};
use crate::hamming::{quantization_angle, word_distance, PackedCode};
use crate::retrieval::HammingIndex;
use crate::scalar::Scalar;

pub const AP_DENOMINATOR: &str = "min(relevant_in_database, R)";
pub const RELEVANCE_RULE: &str = "label sets intersect";

/// Ranked relevance flags for one query plus the number of relevant items
/// in the whole database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRanking {
    pub flags: Vec<bool>,
    pub relevant_total: usize,
}

/// AP over the first `r` flags, or `None` when the database holds nothing
/// relevant for this query.
pub fn average_precision(ranking: &QueryRanking, r: usize) -> Option<f64> {
    if ranking.relevant_total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, _) in ranking.flags.iter().take(r).enumerate().filter(|(_, &rel)| rel) {
        hits += 1;
        sum += hits as f64 / (k + 1) as f64;
    }
    Some(sum / ranking.relevant_total.min(r) as f64)
}

/// Mean AP@R over queries that have at least one relevant database item.
/// Returns 0 when no query qualifies.
pub fn map_at_r(rankings: &[QueryRanking], r: usize) -> Result<f64> {
    if r == 0 {
        return Err(invalid("R must be positive"));
    }
    let aps: Vec<f64> = rankings.iter().filter_map(|q| average_precision(q, r)).collect();
    if aps.is_empty() {
        return Ok(0.0);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// True iff two sorted label sets share a class.
pub fn labels_intersect(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

fn sorted_sets(labels: &[Vec<usize>]) -> Vec<Vec<usize>> {
    labels
        .iter()
        .map(|l| {
            let mut s = l.clone();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub map_at_r: f64,
    pub r: usize,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
}

/// Runs every query against `index` and scores mAP@R. `db_labels` maps
/// index ids to label sets.
pub fn evaluate_retrieval(
    index: &HammingIndex,
    queries: &[PackedCode],
    query_labels: &[Vec<usize>],
    db_labels: &HashMap<u64, Vec<usize>>,
    r: usize,
) -> Result<RetrievalSummary> {
    if r == 0 {
        return Err(invalid("R must be positive"));
    }
    ensure_dim("query labels", queries.len(), query_labels.len())?;
    let db: HashMap<u64, Vec<usize>> = db_labels
        .iter()
        .map(|(&id, l)| (id, sorted_sets(std::slice::from_ref(l)).remove(0)))
        .collect();
    for id in index.ids() {
        if !db.contains_key(id) {
            return Err(invalid(format!("no labels for database id {id}")));
        }
    }
    let qsets = sorted_sets(query_labels);
    let rankings: Vec<QueryRanking> = queries
        .par_iter()
        .zip(qsets.par_iter())
        .map(|(q, ql)| {
            let hits = index.query_top_r(q, r)?;
            let flags = hits.iter().map(|h| labels_intersect(ql, &db[&h.id])).collect();
            let relevant_total = index.ids().iter().filter(|id| labels_intersect(ql, &db[id])).count();
            Ok(QueryRanking { flags, relevant_total })
        })
        .collect::<Result<_>>()?;
    let evaluated = rankings.iter().filter(|q| q.relevant_total > 0).count();
    Ok(RetrievalSummary {
        map_at_r: map_at_r(&rankings, r)?,
        r,
        queries_evaluated: evaluated,
        queries_skipped: rankings.len() - evaluated,
    })
}

/// Histograms of pairwise distances indexed by distance `0..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCounts {
    pub intra: Vec<u64>,
    pub inter: Vec<u64>,
}

impl PairCounts {
    fn mean(counts: &[u64]) -> Option<f64> {
        let n: u64 = counts.iter().sum();
        (n > 0).then(|| {
            counts
                .iter()
                .enumerate()
                .map(|(d, &c)| d as f64 * c as f64)
                .sum::<f64>()
                / n as f64
        })
    }

    pub fn mean_intra(&self) -> Option<f64> {
        Self::mean(&self.intra)
    }

    pub fn mean_inter(&self) -> Option<f64> {
        Self::mean(&self.inter)
    }
}

fn check_codes(codes: &[PackedCode]) -> Result<usize> {
    let bits = codes.first().ok_or_else(|| invalid("no codes"))?.bits();
    for c in codes {
        ensure_dim("code bits", bits, c.bits())?;
    }
    Ok(bits)
}

/// Counts every unordered pair by distance, split into intra (labels
/// intersect) and inter pairs.
pub fn pair_counts(codes: &[PackedCode], labels: &[Vec<usize>]) -> Result<PairCounts> {
    ensure_dim("labels", codes.len(), labels.len())?;
    let bits = check_codes(codes)?;
    let sets = sorted_sets(labels);
    let zero = || PairCounts {
        intra: vec![0; bits + 1],
        inter: vec![0; bits + 1],
    };
    let counts = (0..codes.len())
        .into_par_iter()
        .fold(zero, |mut acc, i| {
            for j in (i + 1)..codes.len() {
                let d = word_distance(codes[i].words(), codes[j].words()) as usize;
                if labels_intersect(&sets[i], &sets[j]) {
                    acc.intra[d] += 1;
                } else {
                    acc.inter[d] += 1;
                }
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            a.intra.iter_mut().zip(b.intra).for_each(|(x, y)| *x += y);
            a.inter.iter_mut().zip(b.inter).for_each(|(x, y)| *x += y);
            a
        });
    Ok(counts)
}

/// `E[D_inter] − E[D_intra]` over all unordered pairs.
pub fn separability(codes: &[PackedCode], labels: &[Vec<usize>]) -> Result<f64> {
    separability_from_counts(&pair_counts(codes, labels)?)
}

fn separability_from_counts(c: &PairCounts) -> Result<f64> {
    let intra = c.mean_intra().ok_or_else(|| invalid("no intra-class pair"))?;
    let inter = c.mean_inter().ok_or_else(|| invalid("no inter-class pair"))?;
    Ok(inter - intra)
}

/// Per-class hash centers: sign of the mean ±1 code (ties to +1).
pub fn hash_centers(codes: &[PackedCode], labels: &[Vec<usize>], classes: usize) -> Result<Vec<PackedCode>> {
    ensure_dim("labels", codes.len(), labels.len())?;
    let bits = check_codes(codes)?;
    let mut sums = vec![vec![0i64; bits]; classes];
    let mut counts = vec![0usize; classes];
    for (code, set) in codes.iter().zip(sorted_sets(labels)) {
        for c in set {
            if c >= classes {
                return Err(invalid(format!("class {c} >= {classes}")));
            }
            counts[c] += 1;
            for (k, s) in sums[c].iter_mut().enumerate() {
                *s += if code.bit(k) { 1 } else { -1 };
            }
        }
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(invalid(format!("class {empty} has no samples")));
    }
    Ok(sums
        .iter()
        .map(|s| {
            let mut center = PackedCode::zeros(bits);
            for (k, &v) in s.iter().enumerate() {
                center.set_bit(k, v >= 0);
            }
            center
        })
        .collect())
}

/// `‖(1/K)·H·Hᵀ − I‖_F` over the class hash centers `H`.
pub fn orthogonality_score(codes: &[PackedCode], labels: &[Vec<usize>], classes: usize) -> Result<f64> {
    let centers = hash_centers(codes, labels, classes)?;
    let k = centers[0].bits() as f64;
    let mut sq = 0.0;
    for (i, a) in centers.iter().enumerate() {
        for (j, b) in centers.iter().enumerate() {
            let dot = k - 2.0 * word_distance(a.words(), b.words()) as f64;
            let g = dot / k - if i == j { 1.0 } else { 0.0 };
            sq += g * g;
        }
    }
    Ok(sq.sqrt())
}

/// Per-bit mean sign over all codes; 0 is perfectly balanced.
pub fn bit_balance(codes: &[PackedCode]) -> Result<Vec<f64>> {
    let bits = check_codes(codes)?;
    let n = codes.len() as f64;
    Ok((0..bits)
        .map(|k| {
            let plus = codes.iter().filter(|c| c.bit(k)).count() as f64;
            (2.0 * plus - n) / n
        })
        .collect())
}

/// Normalized intra/inter distance histograms. Bin `j` holds integer
/// distances `low..=high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistograms {
    pub bin_low: Vec<u64>,
    pub bin_high: Vec<u64>,
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
}

impl DistanceHistograms {
    pub fn from_counts(counts: &PairCounts, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("bins must be positive"));
        }
        let values = counts.intra.len();
        let width = values.div_ceil(bins);
        let nbins = values.div_ceil(width);
        let fold = |c: &[u64]| -> Result<Vec<f64>> {
            let total: u64 = c.iter().sum();
            if total == 0 {
                return Err(invalid("histogram has no pairs"));
            }
            Ok((0..nbins)
                .map(|j| c[j * width..((j + 1) * width).min(values)].iter().sum::<u64>() as f64 / total as f64)
                .collect())
        };
        Ok(Self {
            bin_low: (0..nbins).map(|j| (j * width) as u64).collect(),
            bin_high: (0..nbins).map(|j| (((j + 1) * width).min(values) - 1) as u64).collect(),
            intra: fold(&counts.intra)?,
            inter: fold(&counts.inter)?,
        })
    }
}

pub fn distance_histograms(codes: &[PackedCode], labels: &[Vec<usize>], bins: usize) -> Result<DistanceHistograms> {
    DistanceHistograms::from_counts(&pair_counts(codes, labels)?, bins)
}

/// Mean angle in degrees between each continuous row and its binary code.
pub fn mean_quantization_angle<T: Scalar>(continuous: ArrayView2<T>, binary: &[PackedCode]) -> Result<T> {
    ensure_dim("code count", continuous.nrows(), binary.len())?;
    if binary.is_empty() {
        return Err(invalid("no codes"));
    }
    let mut sum = T::zero();
    for (row, b) in continuous.rows().into_iter().zip(binary) {
        sum = sum + quantization_angle(&row.to_vec(), b)?;
    }
    Ok(sum / T::from_count(binary.len()))
}

/// Everything `evaluate` and `analyze` report. Absent fields were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map_at_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ap_denominator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub queries_evaluated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub queries_skipped: Option<usize>,
    pub relevance: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub separability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_intra_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_inter_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub orthogonality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_quantization_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bit_balance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub histograms: Option<DistanceHistograms>,
}

impl EvalReport {
    pub fn from_retrieval(summary: &RetrievalSummary) -> Self {
        Self {
            map_at_r: Some(summary.map_at_r),
            r: Some(summary.r),
            ap_denominator: Some(AP_DENOMINATOR.to_string()),
            queries_evaluated: Some(summary.queries_evaluated),
            queries_skipped: Some(summary.queries_skipped),
            relevance: RELEVANCE_RULE.to_string(),
            ..Self::default()
        }
    }

    /// Distance, center and balance analysis of a labeled code set, plus the
    /// quantization angle when continuous codes are given.
    pub fn analyze<T: Scalar>(
        codes: &[PackedCode],
        labels: &[Vec<usize>],
        classes: usize,
        bins: usize,
        continuous: Option<ArrayView2<T>>,
    ) -> Result<Self> {
        let counts = pair_counts(codes, labels)?;
        Ok(Self {
            relevance: RELEVANCE_RULE.to_string(),
            separability: Some(separability_from_counts(&counts)?),
            mean_intra_distance: counts.mean_intra(),
            mean_inter_distance: counts.mean_inter(),
            orthogonality: Some(orthogonality_score(codes, labels, classes)?),
            mean_quantization_angle: continuous
                .map(|c| mean_quantization_angle(c, codes).map(Scalar::as_f64))
                .transpose()?,
            bit_balance: Some(bit_balance(codes)?),
            histograms: Some(DistanceHistograms::from_counts(&counts, bins)?),
            ..Self::default()
        })
    }
}
