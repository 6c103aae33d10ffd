//! Labeled descriptor sets and the synthetic Gaussian-cluster generator.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, invalid, Result};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

/// Descriptors with one non-empty label set per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub descriptors: Array2<T>,
    pub labels: Vec<Vec<usize>>,
    pub classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(descriptors: Array2<T>, labels: Vec<Vec<usize>>, classes: usize) -> Result<Self> {
        ensure_dim("label rows", descriptors.nrows(), labels.len())?;
        for (n, set) in labels.iter().enumerate() {
            if set.is_empty() {
                return Err(invalid(format!("sample {n} has no labels")));
            }
            if let Some(&c) = set.iter().find(|&&c| c >= classes) {
                return Err(invalid(format!("sample {n}: class {c} >= {classes}")));
            }
        }
        Ok(Self {
            descriptors,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            descriptors: self.descriptors.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            classes: self.classes,
        }
    }

    /// Splits off `fraction` of each class (keyed by first label) as
    /// queries. Returns `(database, queries)`, both in original row order.
    pub fn split_queries(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(invalid(format!("query fraction {fraction} outside [0, 1)")));
        }
        let mut rng = seeded(seed, stream::SPLIT);
        let mut by_class = vec![Vec::new(); self.classes];
        for (n, set) in self.labels.iter().enumerate() {
            by_class[set[0]].push(n);
        }
        let mut is_query = vec![false; self.len()];
        for rows in &mut by_class {
            rows.shuffle(&mut rng);
            let take = (fraction * rows.len() as f64).round() as usize;
            for &r in &rows[..take] {
                is_query[r] = true;
            }
        }
        let db: Vec<usize> = (0..self.len()).filter(|&n| !is_query[n]).collect();
        let q: Vec<usize> = (0..self.len()).filter(|&n| is_query[n]).collect();
        Ok((self.subset(&db), self.subset(&q)))
    }
}

/// Parameters of [`make_gaussian_clusters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub separation: f64,
    pub seed: u64,
    /// Label each point with its two nearest centers.
    pub multilabel: bool,
}

/// Cluster centers on a sphere of radius `separation`, points at
/// `center + spread·N(0, I)`; `per_class` rows per class, class-major order.
pub fn make_gaussian_clusters<T: Scalar>(cfg: &ToyConfig) -> Result<LabeledDataset<T>> {
    if cfg.classes < 2 || cfg.per_class < 1 || cfg.dim < 1 {
        return Err(invalid("need classes >= 2, per_class >= 1 and dim >= 1"));
    }
    if !(cfg.spread > 0.0) || !(cfg.separation >= 0.0) || !cfg.separation.is_finite() {
        return Err(invalid(
            "spread must be positive and separation finite and non-negative",
        ));
    }
    let mut rng = seeded(cfg.seed, stream::DATASET);
    let mut centers = Array2::<f64>::zeros((cfg.classes, cfg.dim));
    for mut c in centers.axis_iter_mut(Axis(0)) {
        loop {
            c.mapv_inplace(|_| rng.sample(StandardNormal));
            let norm = c.dot(&c).sqrt();
            if norm > 1e-12 {
                c.mapv_inplace(|x| x * cfg.separation / norm);
                break;
            }
        }
    }
    let n = cfg.classes * cfg.per_class;
    let mut x = Array2::<f64>::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    for (row, mut point) in x.axis_iter_mut(Axis(0)).enumerate() {
        let class = row / cfg.per_class;
        for (p, &c) in point.iter_mut().zip(centers.row(class)) {
            let noise: f64 = rng.sample(StandardNormal);
            *p = c + cfg.spread * noise;
        }
        if cfg.multilabel {
            let mut d: Vec<(f64, usize)> = centers
                .axis_iter(Axis(0))
                .enumerate()
                .map(|(i, c)| ((&c - &point).mapv(|v| v * v).sum(), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut pair = vec![d[0].1, d[1].1];
            pair.sort_unstable();
            labels.push(pair);
        } else {
            labels.push(vec![class]);
        }
    }
    LabeledDataset::new(x.mapv(T::lit), labels, cfg.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, multilabel: bool) -> ToyConfig {
        ToyConfig {
            classes: 10,
            dim: 16,
            per_class: 50,
            spread: 1.0,
            separation: 12.0,
            seed,
            multilabel,
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let a = make_gaussian_clusters::<f64>(&toy(1, false)).unwrap();
        assert_eq!(a.len(), 500);
        for c in 0..10 {
            assert_eq!(a.labels.iter().filter(|l| l[0] == c).count(), 50);
        }
        assert_eq!(a, make_gaussian_clusters::<f64>(&toy(1, false)).unwrap());
        assert_ne!(a, make_gaussian_clusters::<f64>(&toy(2, false)).unwrap());
    }

    #[test]
    fn nearest_centroid_separates_well_separated_clusters() {
        let data = make_gaussian_clusters::<f64>(&ToyConfig {
            per_class: 200,
            ..toy(3, false)
        })
        .unwrap();
        let mut centroids = Array2::<f64>::zeros((10, 16));
        for (row, l) in data.descriptors.axis_iter(Axis(0)).zip(&data.labels) {
            let mut c = centroids.row_mut(l[0]);
            c += &row;
        }
        centroids /= 200.0;
        let correct = data
            .descriptors
            .axis_iter(Axis(0))
            .zip(&data.labels)
            .filter(|(row, l)| {
                let best = (0..10)
                    .min_by(|&a, &b| {
                        let da = (&centroids.row(a) - row).mapv(|v| v * v).sum();
                        let db = (&centroids.row(b) - row).mapv(|v| v * v).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best == l[0]
            })
            .count();
        assert!(correct as f64 / 2000.0 >= 0.999);
    }

    #[test]
    fn multilabel_assigns_two_classes() {
        let data = make_gaussian_clusters::<f64>(&toy(4, true)).unwrap();
        assert!(data.labels.iter().all(|l| l.len() == 2 && l[0] < l[1]));
        // own center is almost always among the two nearest
        let own = data
            .labels
            .iter()
            .enumerate()
            .filter(|(n, l)| l.contains(&(n / 50)))
            .count();
        assert!(own >= 490);
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_gaussian_clusters::<f64>(&ToyConfig {
            classes: 1,
            ..toy(0, false)
        })
        .is_err());
        assert!(make_gaussian_clusters::<f64>(&ToyConfig {
            spread: 0.0,
            ..toy(0, false)
        })
        .is_err());
        assert!(make_gaussian_clusters::<f64>(&ToyConfig {
            per_class: 0,
            ..toy(0, false)
        })
        .is_err());
    }

    #[test]
    fn query_split_per_class() {
        let data = make_gaussian_clusters::<f64>(&toy(5, false)).unwrap();
        let (db, q) = data.split_queries(0.1, 9).unwrap();
        assert_eq!((db.len(), q.len()), (450, 50));
        for c in 0..10 {
            assert_eq!(q.labels.iter().filter(|l| l[0] == c).count(), 5);
        }
        assert_eq!(data.split_queries(0.1, 9).unwrap().1, q);
        assert!(data.split_queries(1.0, 9).is_err());
    }
}
