//! Binary orthogonal target matrices.
//!
//! A [`Codebook`] holds one ±1 target row per class. Rows are either taken
//! from a Sylvester Hadamard matrix (pairwise distance exactly K/2), sampled
//! from a fair Bernoulli distribution (expected distance K/2), or refined from
//! an existing codebook by a greedy bit-flip search that pushes the minimum
//! pairwise distance up.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamming::{pack_code, word_distance, words_for, PackedCode};
use crate::rng::{seeded, stream};
use crate::scalar::Scalar;

pub const MAX_LOG2_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookMethod {
    Hadamard,
    Bernoulli,
    Heuristic,
}

impl CodebookMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hadamard => "hadamard",
            Self::Bernoulli => "bernoulli",
            Self::Heuristic => "heuristic",
        }
    }
}

/// Row selection when building class targets from a Hadamard matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HadamardRows {
    /// First C rows of `[H; -H]`; for C ≤ K these are plain rows of H.
    Stacked,
    /// `h1, -h1, h2, -h2, ..., h0, -h0`: the constant row goes last and each
    /// row is followed by its complement, so every column of the selected
    /// targets is balanced when C is even.
    #[default]
    Paired,
}

/// Class targets `O ∈ {-1,+1}^{C×K}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    classes: usize,
    bits: usize,
    rows: Vec<i8>,
    packed: Vec<PackedCode>,
    method: CodebookMethod,
    seed: Option<u64>,
}

impl Codebook {
    /// Builds a codebook from explicit rows.
    pub fn from_rows(rows: &[Vec<i8>], method: CodebookMethod, seed: Option<u64>) -> Result<Self> {
        let classes = rows.len();
        if classes == 0 {
            return Err(invalid("codebook needs at least one row"));
        }
        let bits = rows[0].len();
        if bits == 0 {
            return Err(invalid("codebook needs at least one bit"));
        }
        let mut flat = Vec::with_capacity(classes * bits);
        let mut packed = Vec::with_capacity(classes);
        for row in rows {
            crate::error::ensure_dim("codebook row length", bits, row.len())?;
            packed.push(pack_code(row)?);
            flat.extend_from_slice(row);
        }
        Ok(Self {
            classes,
            bits,
            rows: flat,
            packed,
            method,
            seed,
        })
    }

    /// Rebuilds a codebook from packed rows (the on-disk representation).
    pub fn from_packed(packed: Vec<PackedCode>, method: CodebookMethod, seed: Option<u64>) -> Result<Self> {
        let classes = packed.len();
        if classes == 0 {
            return Err(invalid("codebook needs at least one row"));
        }
        let bits = packed[0].bits();
        if bits == 0 {
            return Err(invalid("codebook needs at least one bit"));
        }
        let mut rows = Vec::with_capacity(classes * bits);
        for p in &packed {
            crate::error::ensure_dim("codebook row bits", bits, p.bits())?;
            rows.extend(p.signs());
        }
        Ok(Self {
            classes,
            bits,
            rows,
            packed,
            method,
            seed,
        })
    }

    /// The `K×K` Sylvester Hadamard matrix with `K = 2^log2_k`.
    pub fn sylvester_hadamard(log2_k: u32) -> Result<Self> {
        let h = sylvester_rows(log2_k)?;
        Self::from_rows(&h, CodebookMethod::Hadamard, None)
    }

    /// `classes` target rows drawn from the `bits × bits` Hadamard matrix and
    /// its negation. `bits` must be a power of two and `classes ≤ 2·bits`.
    pub fn hadamard(classes: usize, bits: usize, selection: HadamardRows) -> Result<Self> {
        if classes == 0 {
            return Err(invalid("classes must be at least 1"));
        }
        if !bits.is_power_of_two() {
            return Err(invalid(format!(
                "Sylvester construction needs a power-of-two bit count, got {bits}"
            )));
        }
        if classes > 2 * bits {
            return Err(Error::TooManyClasses {
                classes,
                limit: 2 * bits,
            });
        }
        let h = sylvester_rows(bits.trailing_zeros())?;
        let neg = |r: &Vec<i8>| r.iter().map(|&s| -s).collect::<Vec<i8>>();
        let order: Vec<Vec<i8>> = match selection {
            HadamardRows::Stacked => h.iter().cloned().chain(h.iter().map(neg)).collect(),
            HadamardRows::Paired => (1..bits)
                .chain(std::iter::once(0))
                .flat_map(|i| [h[i].clone(), neg(&h[i])])
                .collect(),
        };
        Self::from_rows(&order[..classes], CodebookMethod::Hadamard, None)
    }

    /// Rows with each bit +1 with probability 1/2, resampling duplicates.
    pub fn bernoulli(classes: usize, bits: usize, seed: u64) -> Result<Self> {
        if classes == 0 || bits == 0 {
            return Err(invalid("classes and bits must be at least 1"));
        }
        if bits < usize::BITS as usize && (1usize << bits) < classes {
            return Err(Error::TooFewBits { classes, bits });
        }
        let mut rng = seeded(seed, stream::CODEBOOK);
        let budget = 100 * classes;
        let mut resamples = 0;
        let mut seen = HashSet::with_capacity(classes);
        let mut packed = Vec::with_capacity(classes);
        while packed.len() < classes {
            let code = random_code(&mut rng, bits);
            if seen.insert(code.clone()) {
                packed.push(code);
            } else {
                resamples += 1;
                if resamples > budget {
                    return Err(Error::RetryBudgetExhausted(budget));
                }
            }
        }
        Self::from_packed(packed, CodebookMethod::Bernoulli, Some(seed))
    }

    /// Greedy local search on the closest row pair.
    ///
    /// Each iteration picks one pair at the current minimum distance (seeded
    /// tie-break), evaluates every single-bit flip in either row of that pair,
    /// and applies the flip that most improves `(min distance, -#pairs at
    /// min)`. Stops early once no flip improves. Zero iterations returns the
    /// input unchanged.
    pub fn improve(&self, iterations: usize, seed: u64) -> Self {
        if iterations == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.method = CodebookMethod::Heuristic;
        out.seed = Some(seed);
        let c = self.classes;
        if c < 2 {
            return out;
        }
        let k = self.bits;
        let mut rng = seeded(seed, stream::HEURISTIC);
        let mut dist = vec![0i64; c * c];
        for i in 0..c {
            for j in (i + 1)..c {
                let d = word_distance(out.packed[i].words(), out.packed[j].words()) as i64;
                dist[i * c + j] = d;
                dist[j * c + i] = d;
            }
        }

        for _ in 0..iterations {
            let (cur_min, cur_count) = min_and_count((0..c).flat_map(|i| ((i + 1)..c).map(move |j| (i, j))), &dist, c);
            let worst: Vec<(usize, usize)> = (0..c)
                .flat_map(|i| ((i + 1)..c).map(move |j| (i, j)))
                .filter(|&(i, j)| dist[i * c + j] == cur_min)
                .collect();
            let &(a, b) = worst.choose(&mut rng).expect("at least one pair");

            let mut best_score = (cur_min, -(cur_count as i64));
            let mut best_moves: Vec<(usize, usize)> = Vec::new();
            for r in [a, b] {
                let others = (0..c)
                    .filter(|&i| i != r)
                    .flat_map(|i| ((i + 1)..c).filter(move |&j| j != r).map(move |j| (i, j)));
                let (excl_min, excl_count) = min_and_count(others, &dist, c);
                let row_r = &out.rows[r * k..(r + 1) * k];
                for (bit, &own) in row_r.iter().enumerate() {
                    let mut m = i64::MAX;
                    let mut cnt = 0usize;
                    for l in (0..c).filter(|&l| l != r) {
                        let same = own == out.rows[l * k + bit];
                        let d = dist[r * c + l] + if same { 1 } else { -1 };
                        if d < m {
                            m = d;
                            cnt = 1;
                        } else if d == m {
                            cnt += 1;
                        }
                    }
                    let (new_min, new_count) = if excl_min < m {
                        (excl_min, excl_count)
                    } else if excl_min == m {
                        (m, cnt + excl_count)
                    } else {
                        (m, cnt)
                    };
                    let score = (new_min, -(new_count as i64));
                    if score > best_score {
                        best_score = score;
                        best_moves.clear();
                        best_moves.push((r, bit));
                    } else if score == best_score && !best_moves.is_empty() {
                        best_moves.push((r, bit));
                    }
                }
            }
            let Some(&(r, bit)) = best_moves.choose(&mut rng) else {
                break;
            };
            for l in (0..c).filter(|&l| l != r) {
                let same = out.rows[r * k + bit] == out.rows[l * k + bit];
                let delta = if same { 1 } else { -1 };
                dist[r * c + l] += delta;
                dist[l * c + r] += delta;
            }
            let flipped = -out.rows[r * k + bit];
            out.rows[r * k + bit] = flipped;
            out.packed[r].set_bit(bit, flipped == 1);
        }
        out
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn method(&self) -> CodebookMethod {
        self.method
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, class: usize) -> &[i8] {
        &self.rows[class * self.bits..(class + 1) * self.bits]
    }

    pub fn packed_rows(&self) -> &[PackedCode] {
        &self.packed
    }

    /// The targets as a `C×K` real matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.classes, self.bits), |(i, k)| {
            if self.rows[i * self.bits + k] > 0 {
                T::one()
            } else {
                -T::one()
            }
        })
    }

    pub fn min_pairwise_distance(&self) -> Result<u64> {
        min_pairwise_distance(&self.packed)
    }
}

/// Minimum Hamming distance over all unordered pairs.
pub fn min_pairwise_distance(codes: &[PackedCode]) -> Result<u64> {
    if codes.len() < 2 {
        return Err(invalid("minimum pairwise distance needs at least two rows"));
    }
    let mut best = u64::MAX;
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            crate::error::ensure_dim("code bits", a.bits(), b.bits())?;
            best = best.min(word_distance(a.words(), b.words()));
        }
    }
    Ok(best)
}

/// Expected Hamming distance `2·K·p·(1-p)` between two independent codes
/// whose bits are +1 with probability `p`.
pub fn expected_hamming<T: Scalar>(bits: usize, p: T) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(T::lit(2.0) * T::from_count(bits) * p * (T::one() - p))
}

fn sylvester_rows(log2_k: u32) -> Result<Vec<Vec<i8>>> {
    if log2_k > MAX_LOG2_BITS {
        return Err(invalid(format!(
            "log2(K) = {log2_k} exceeds the supported maximum {MAX_LOG2_BITS}"
        )));
    }
    let mut h: Vec<Vec<i8>> = vec![vec![1]];
    for _ in 0..log2_k {
        let n = h.len();
        let mut next = Vec::with_capacity(2 * n);
        for row in &h {
            next.push(row.iter().chain(row.iter()).copied().collect());
        }
        for row in h.iter().take(n) {
            next.push(row.iter().copied().chain(row.iter().map(|&s| -s)).collect());
        }
        h = next;
    }
    Ok(h)
}

fn random_code(rng: &mut impl RngCore, bits: usize) -> PackedCode {
    let mut words: Vec<u64> = (0..words_for(bits)).map(|_| rng.next_u64()).collect();
    let used = bits % 64;
    if used != 0 {
        *words.last_mut().expect("bits > 0") &= (1u64 << used) - 1;
    }
    PackedCode::from_words(bits, words).expect("masked words are valid")
}

fn min_and_count(pairs: impl Iterator<Item = (usize, usize)>, dist: &[i64], c: usize) -> (i64, usize) {
    let mut m = i64::MAX;
    let mut count = 0;
    for (i, j) in pairs {
        let d = dist[i * c + j];
        if d < m {
            m = d;
            count = 1;
        } else if d == m {
            count += 1;
        }
    }
    (m, count)
}
