//! Scaled-cosine cross-entropy against fixed binary targets.
//!
//! With unit-norm codes `v` and ±1 targets `o_i` (so `‖o_i‖ = √K`), the
//! logit `<o_i, v>` equals `√K·cos θ_i`. A cosine or angular margin may be
//! applied to every positive class before a softmax cross-entropy over all
//! classes. Soft targets carry equal mass on each assigned class.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{ensure_dim, invalid, Error, Result};
use crate::scalar::Scalar;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;
const ANGULAR_RANGE_TOLERANCE: f64 = 1e-6;
/// cos θ is kept inside `[-1 + δ, 1 - δ]` before `arccos`.
const ANGULAR_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginKind {
    #[default]
    None,
    /// `s·(cos θ − m)`
    Cosine,
    /// `s·cos(θ + m)`
    Angular,
}

/// Margin settings plus the fixed scale `s = √K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    margin: T,
    kind: MarginKind,
    scale: T,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(kind: MarginKind, margin: T, bits: usize) -> Result<Self> {
        if bits == 0 {
            return Err(invalid("bits must be positive"));
        }
        if !(margin >= T::zero()) || !margin.is_finite() {
            return Err(invalid(format!("margin {margin} must be finite and non-negative")));
        }
        if kind == MarginKind::Angular && margin >= T::lit(std::f64::consts::PI) {
            return Err(invalid("angular margin must be below pi"));
        }
        Ok(Self {
            margin,
            kind,
            scale: T::from_count(bits).sqrt(),
        })
    }

    /// No margin.
    pub fn plain(bits: usize) -> Result<Self> {
        Self::new(MarginKind::None, T::zero(), bits)
    }

    pub fn margin(&self) -> T {
        self.margin
    }

    pub fn kind(&self) -> MarginKind {
        self.kind
    }

    pub fn scale(&self) -> T {
        self.scale
    }
}

/// Row-stochastic `N×C` target matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets<T>(Array2<T>);

impl<T: Scalar> SoftTargets<T> {
    /// Wraps a matrix after checking entries are non-negative and rows sum to 1.
    pub fn new(matrix: Array2<T>) -> Result<Self> {
        if matrix.iter().any(|&x| !(x >= T::zero())) {
            return Err(invalid("targets must be non-negative"));
        }
        check_rows_sum_to_one(matrix.view())?;
        Ok(Self(matrix))
    }

    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let sets: Vec<Vec<usize>> = labels.iter().map(|&l| vec![l]).collect();
        smooth_labels(&sets, classes)
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }
}

fn row_sum_tolerance<T: Scalar>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(16.0))
}

fn check_rows_sum_to_one<T: Scalar>(m: ArrayView2<T>) -> Result<()> {
    let tol = row_sum_tolerance::<T>();
    for (row, r) in m.axis_iter(Axis(0)).enumerate() {
        let sum = r.sum();
        if !((sum - T::one()).abs() <= tol) {
            return Err(Error::TargetsNotNormalized { row, sum: sum.as_f64() });
        }
    }
    Ok(())
}

/// Soft targets with mass `1/|set|` on each assigned class.
pub fn smooth_labels<T: Scalar>(label_sets: &[Vec<usize>], classes: usize) -> Result<SoftTargets<T>> {
    let mut m = Array2::zeros((label_sets.len(), classes));
    for (n, set) in label_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(invalid(format!("sample {n} has no labels")));
        }
        if let Some(&bad) = set.iter().find(|&&c| c >= classes) {
            return Err(invalid(format!(
                "label {bad} of sample {n} out of range for {classes} classes"
            )));
        }
        let mut uniq = set.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let z = T::one() / T::from_count(uniq.len());
        for c in uniq {
            m[[n, c]] = z;
        }
    }
    Ok(SoftTargets(m))
}

/// `N×C` logits `<o_i, v_n>` for unit-norm codes.
pub fn logits<T: Scalar>(codes: ArrayView2<T>, cb: &Codebook) -> Result<Array2<T>> {
    ensure_dim("code bits", cb.bits(), codes.ncols())?;
    let tol = T::lit(UNIT_NORM_TOLERANCE);
    for (row, v) in codes.axis_iter(Axis(0)).enumerate() {
        let norm = v.dot(&v).sqrt();
        if !((norm - T::one()).abs() <= tol) {
            return Err(Error::NotUnitNorm {
                row,
                norm: norm.as_f64(),
            });
        }
    }
    Ok(codes.dot(&cb.to_matrix::<T>().t()))
}

/// Applies the configured margin to every entry whose target is positive.
pub fn apply_margin<T: Scalar>(
    logits: ArrayView2<T>,
    targets: &SoftTargets<T>,
    cfg: &LossConfig<T>,
) -> Result<Array2<T>> {
    Ok(margin_with_slope(logits, targets, cfg)?.0)
}

/// Margined logits and the elementwise derivative `d margined / d logit`.
fn margin_with_slope<T: Scalar>(
    logits: ArrayView2<T>,
    targets: &SoftTargets<T>,
    cfg: &LossConfig<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    ensure_dim("target rows", logits.nrows(), targets.rows())?;
    ensure_dim("target classes", logits.ncols(), targets.classes())?;
    let mut out = logits.to_owned();
    let mut slope = Array2::ones(logits.dim());
    if cfg.margin == T::zero() || cfg.kind == MarginKind::None {
        return Ok((out, slope));
    }
    let s = cfg.scale;
    let m = cfg.margin;
    let lo = -T::one() + T::lit(ANGULAR_CLAMP);
    let hi = T::one() - T::lit(ANGULAR_CLAMP);
    let range_tol = T::lit(ANGULAR_RANGE_TOLERANCE);
    for ((idx, x), &y) in out.indexed_iter_mut().zip(targets.0.iter()) {
        if y <= T::zero() {
            continue;
        }
        match cfg.kind {
            MarginKind::None => {}
            MarginKind::Cosine => *x = *x - s * m,
            MarginKind::Angular => {
                let c = *x / s;
                if !(c.abs() <= T::one() + range_tol) {
                    return Err(invalid(format!(
                        "cosine {c} at {idx:?} outside [-1, 1]; codes must be unit norm"
                    )));
                }
                let cc = c.max(lo).min(hi);
                let theta = cc.acos();
                *x = s * (theta + m).cos();
                // d/dc of cos(acos(c) + m) = sin(θ + m) / sin θ inside the clamp, 0 outside
                slope[idx] = if c == cc {
                    (theta + m).sin() / theta.sin()
                } else {
                    T::zero()
                };
            }
        }
    }
    Ok((out, slope))
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax<T: Scalar>(logits: ArrayView2<T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Mean cross-entropy and its gradient `(softmax − targets)/N`.
pub fn ce_loss<T: Scalar>(logits: ArrayView2<T>, targets: &SoftTargets<T>) -> Result<(T, Array2<T>)> {
    ensure_dim("target rows", logits.nrows(), targets.rows())?;
    ensure_dim("target classes", logits.ncols(), targets.classes())?;
    check_rows_sum_to_one(targets.0.view())?;
    let n = logits.nrows();
    if n == 0 {
        return Err(invalid("empty batch"));
    }
    let nf = T::from_count(n);
    let logp = log_softmax(logits);
    let loss = -(&targets.0 * &logp).sum() / nf;
    let grad = (logp.mapv(T::exp) - &targets.0) / nf;
    Ok((loss, grad))
}

/// Full objective on unit-norm codes; returns the loss and `dL/dcodes`.
pub fn loss_and_grad<T: Scalar>(
    codes: ArrayView2<T>,
    cb: &Codebook,
    targets: &SoftTargets<T>,
    cfg: &LossConfig<T>,
) -> Result<(T, Array2<T>)> {
    let raw = logits(codes, cb)?;
    let (margined, slope) = margin_with_slope(raw.view(), targets, cfg)?;
    let (loss, grad_margined) = ce_loss(margined.view(), targets)?;
    let grad_logits = grad_margined * slope;
    Ok((loss, grad_logits.dot(&cb.to_matrix::<T>())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{Codebook, HadamardRows};
    use ndarray::array;

    #[test]
    fn smooth_label_examples() {
        let t = smooth_labels::<f64>(&[vec![1, 3], vec![2], vec![0, 1, 2, 3]], 4).unwrap();
        assert_eq!(t.matrix().row(0).to_vec(), vec![0.0, 0.5, 0.0, 0.5]);
        assert_eq!(t.matrix().row(1).to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.matrix().row(2).to_vec(), vec![0.25; 4]);
        assert!(smooth_labels::<f64>(&[vec![]], 4).is_err());
        assert!(smooth_labels::<f64>(&[vec![4]], 4).is_err());
    }

    #[test]
    fn smooth_label_rows_sum_to_one() {
        for size in 1..=12usize {
            let set: Vec<usize> = (0..size).collect();
            let t = smooth_labels::<f64>(&[set], 12).unwrap();
            assert!((t.matrix().sum() - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn soft_targets_validation() {
        assert!(SoftTargets::new(array![[0.5, 0.5], [1.0, 0.0]]).is_ok());
        assert!(SoftTargets::new(array![[0.5, 0.4]]).is_err());
        assert!(SoftTargets::new(array![[1.5, -0.5]]).is_err());
    }

    #[test]
    fn loss_config_rules() {
        let c = LossConfig::<f64>::new(MarginKind::Cosine, 0.2, 64).unwrap();
        assert_eq!(c.scale(), 8.0);
        assert!(LossConfig::<f64>::new(MarginKind::Angular, 3.2, 64).is_err());
        assert!(LossConfig::<f64>::new(MarginKind::Cosine, -0.1, 64).is_err());
    }

    #[test]
    fn logits_examples() {
        let cb = Codebook::sylvester_hadamard(6).unwrap();
        let k = 64usize;
        let s = (k as f64).sqrt();
        let v = cb.to_matrix::<f64>().row(3).mapv(|x| x / s).insert_axis(Axis(0));
        let l = logits(v.view(), &cb).unwrap();
        assert!((l[[0, 3]] - 8.0).abs() < 1e-12);
        assert!(l[[0, 5]].abs() < 1e-12);
        let not_unit = v.mapv(|x| x * 1.1);
        assert!(matches!(logits(not_unit.view(), &cb), Err(Error::NotUnitNorm { .. })));
        let short = Array2::<f64>::zeros((1, 8));
        assert!(logits(short.view(), &cb).is_err());
    }

    #[test]
    fn margin_examples() {
        let k = 16;
        let s = 4.0f64;
        let t = SoftTargets::one_hot(&[0], 2).unwrap();
        let l = array![[s * 0.9, s * 0.1]];
        let cos = LossConfig::new(MarginKind::Cosine, 0.2, k).unwrap();
        let out = apply_margin(l.view(), &t, &cos).unwrap();
        assert!((out[[0, 0]] - s * 0.7).abs() < 1e-12);
        assert_eq!(out[[0, 1]], s * 0.1);

        let l = array![[s * 0.5, s * 0.1]];
        let arc = LossConfig::new(MarginKind::Angular, 0.2, k).unwrap();
        let out = apply_margin(l.view(), &t, &arc).unwrap();
        // cos(pi/3 + 0.2) evaluated independently
        let expected = (std::f64::consts::FRAC_PI_3 + 0.2).cos();
        assert!((expected - 0.317_98).abs() < 1e-5);
        assert!((out[[0, 0]] - s * expected).abs() < 1e-12);

        for kind in [MarginKind::Cosine, MarginKind::Angular] {
            let zero = LossConfig::new(kind, 0.0, k).unwrap();
            assert_eq!(apply_margin(l.view(), &t, &zero).unwrap(), l);
        }

        let bad = array![[s * 1.01, 0.0]];
        assert!(apply_margin(bad.view(), &t, &arc).is_err());
    }

    #[test]
    fn margin_hits_every_positive_class() {
        let t = smooth_labels::<f64>(&[vec![0, 2]], 3).unwrap();
        let l = array![[1.0, 1.0, 1.0]];
        let cfg = LossConfig::new(MarginKind::Cosine, 0.25, 16).unwrap();
        let out = apply_margin(l.view(), &t, &cfg).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn ce_examples() {
        let c = 7;
        let l = Array2::<f64>::from_elem((2, c), 0.3);
        let t = SoftTargets::one_hot(&[1, 4], c).unwrap();
        let (loss, _) = ce_loss(l.view(), &t).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);

        let l = array![[0.2, -1.0, 2.0], [0.0, 0.5, 0.1]];
        let p = log_softmax(l.view()).mapv(f64::exp);
        for r in p.axis_iter(Axis(0)) {
            assert!((r.sum() - 1.0).abs() <= 1e-12);
            assert!(r.iter().all(|&x| x > 0.0 && x < 1.0));
        }
        let t = SoftTargets::new(p.clone()).unwrap();
        let (_, g) = ce_loss(l.view(), &t).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn ce_rejects_unnormalized_targets() {
        let l = array![[0.0, 0.0]];
        let t = SoftTargets(array![[0.7, 0.7]]);
        assert!(matches!(ce_loss(l.view(), &t), Err(Error::TargetsNotNormalized { .. })));
    }

    #[test]
    fn ce_gradient_finite_differences() {
        let l = array![
            [0.3, -0.2, 1.1, 0.5, -0.7],
            [1.2, 0.1, -0.4, 0.0, 0.9],
            [-1.0, 0.2, 0.3, 0.8, -0.1]
        ];
        let t = smooth_labels::<f64>(&[vec![2], vec![0, 4], vec![1, 2, 3]], 5).unwrap();
        let (_, g) = ce_loss(l.view(), &t).unwrap();
        let h = 1e-5;
        for idx in [(0, 0), (0, 2), (1, 4), (2, 1), (2, 3), (1, 1)] {
            let mut p = l.clone();
            p[idx] += h;
            let up = ce_loss(p.view(), &t).unwrap().0;
            p[idx] -= 2.0 * h;
            let down = ce_loss(p.view(), &t).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-6);
            assert!(rel <= 1e-6, "{idx:?}: fd {fd} analytic {}", g[idx]);
        }
    }

    #[test]
    fn plain_gradient_is_weighted_target_sum() {
        let cb = Codebook::hadamard(4, 8, HadamardRows::Paired).unwrap();
        let codes = array![
            [0.5f64, 0.1, -0.3, 0.2, 0.4, -0.6, 0.2, 0.1],
            [0.1, 0.1, 0.1, -0.5, 0.3, 0.2, -0.4, 0.6]
        ];
        let codes = &codes / &codes.map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1));
        let t = smooth_labels::<f64>(&[vec![1], vec![0, 3]], 4).unwrap();
        let cfg = LossConfig::plain(8).unwrap();
        let (_, g) = loss_and_grad(codes.view(), &cb, &t, &cfg).unwrap();
        let o = cb.to_matrix::<f64>();
        let p = log_softmax(codes.dot(&o.t()).view()).mapv(f64::exp);
        for n in 0..2 {
            for k in 0..8 {
                let expected: f64 = -(0..4)
                    .map(|i| (t.matrix()[[n, i]] - p[[n, i]]) * o[[i, k]])
                    .sum::<f64>()
                    / 2.0;
                assert!((g[[n, k]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aligned_codes_beat_perturbed_codes() {
        let cb = Codebook::hadamard(3, 4, HadamardRows::Stacked).unwrap();
        let s = 2.0f64;
        let o = cb.to_matrix::<f64>();
        let codes = &o / s;
        let t = SoftTargets::one_hot(&[0, 1, 2], 3).unwrap();
        let cfg = LossConfig::plain(4).unwrap();
        let (loss, _) = loss_and_grad(codes.view(), &cb, &t, &cfg).unwrap();
        // rows are orthogonal: the other classes have cos θ = 0
        let expected = -(s.exp() / (s.exp() + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        for dir in [[0.3, -0.1, 0.2, 0.5], [-0.4, 0.4, 0.1, 0.0]] {
            let mut p = codes.clone();
            p.row_mut(1).zip_mut_with(&ndarray::arr1(&dir), |a, b| *a += b);
            let norm = p.row(1).dot(&p.row(1)).sqrt();
            p.row_mut(1).mapv_inplace(|x| x / norm);
            let (perturbed, _) = loss_and_grad(p.view(), &cb, &t, &cfg).unwrap();
            assert!(perturbed > loss);
        }
    }

    #[test]
    fn margin_never_lowers_loss() {
        let cb = Codebook::hadamard(6, 8, HadamardRows::Paired).unwrap();
        let raw = array![
            [0.2f64, -0.1, 0.5, 0.3, -0.4, 0.1, 0.2, 0.6],
            [0.3, 0.3, -0.2, 0.1, 0.4, -0.5, 0.1, 0.2]
        ];
        let codes = &raw / &raw.map_axis(Axis(1), |r| r.dot(&r).sqrt()).insert_axis(Axis(1));
        let t = smooth_labels::<f64>(&[vec![2], vec![1, 5]], 6).unwrap();
        let base = loss_and_grad(codes.view(), &cb, &t, &LossConfig::plain(8).unwrap())
            .unwrap()
            .0;
        for kind in [MarginKind::Cosine, MarginKind::Angular] {
            let cfg = LossConfig::new(kind, 0.2, 8).unwrap();
            assert!(loss_and_grad(codes.view(), &cb, &t, &cfg).unwrap().0 >= base);
        }
    }
}
