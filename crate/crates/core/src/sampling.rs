//! Angle-subset masks, their distributions, and the sampling-density weights.
//!
//! A mask selects whole projection rows: choosing angle `j` keeps every
//! detector bin of that angle. The weight diagonal is therefore constant
//! within an angle block and is stored per angle.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TomoError};
use crate::geometry::Sinogram;

/// Default cap on the number of subsets enumerated by exact mode.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Sorted, distinct, non-empty list of angle indices in `[0, n_angles_total)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AngleMask {
    indices: Vec<usize>,
    n_angles_total: usize,
}

impl AngleMask {
    pub fn new(mut indices: Vec<usize>, n_angles_total: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(TomoError::config("angle mask must not be empty"));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(TomoError::config("angle mask has duplicate indices"));
        }
        if *indices.last().unwrap() >= n_angles_total {
            return Err(TomoError::config(format!(
                "angle index {} out of range for {} angles",
                indices.last().unwrap(),
                n_angles_total
            )));
        }
        Ok(AngleMask {
            indices,
            n_angles_total,
        })
    }

    pub fn full(n_angles_total: usize) -> Self {
        AngleMask {
            indices: (0..n_angles_total).collect(),
            n_angles_total,
        }
    }

    /// Indices `floor(j * n_total / s)` for `j in 0..s`.
    pub fn equispaced(s: usize, n_angles_total: usize) -> Result<Self> {
        if s == 0 || s > n_angles_total {
            return Err(TomoError::config(format!(
                "equispaced mask needs 1 <= s <= {n_angles_total}, got {s}"
            )));
        }
        let idx = (0..s).map(|j| j * n_angles_total / s).collect();
        AngleMask::new(idx, n_angles_total)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_angles_total(&self) -> usize {
        self.n_angles_total
    }

    pub fn contains(&self, a: usize) -> bool {
        self.indices.binary_search(&a).is_ok()
    }

    pub(crate) fn check_sinogram(&self, y: &Sinogram, n_detectors: usize) -> Result<()> {
        if y.n_angles != self.len() || y.n_detectors != n_detectors {
            return Err(TomoError::dim(format!(
                "sinogram is {}x{} but mask selects {} angles of {} detectors",
                y.n_angles,
                y.n_detectors,
                self.len(),
                n_detectors
            )));
        }
        Ok(())
    }
}

/// Comma-separated indices, as used in config files and CSV logs.
impl fmt::Display for AngleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.indices.iter().join(","))
    }
}

impl AngleMask {
    pub fn parse(list: &str, n_angles_total: usize) -> Result<Self> {
        let idx = list
            .split(',')
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| {
                usize::from_str(t)
                    .map_err(|_| TomoError::config(format!("bad angle index '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        AngleMask::new(idx, n_angles_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// `s` angles drawn uniformly without replacement.
    UniformSubset(usize),
    /// Deterministic `s` equispaced angles.
    EquispacedFixed(usize),
    /// `s_total` angles drawn uniformly, then split into two random halves.
    ComplementarySplit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskDistribution {
    pub kind: MaskKind,
    pub n_angles_total: usize,
}

impl MaskDistribution {
    pub fn new(kind: MaskKind, n_angles_total: usize) -> Result<Self> {
        let d = MaskDistribution {
            kind,
            n_angles_total,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(s: usize, n_angles_total: usize) -> Result<Self> {
        Self::new(MaskKind::UniformSubset(s), n_angles_total)
    }

    pub fn equispaced(s: usize, n_angles_total: usize) -> Result<Self> {
        Self::new(MaskKind::EquispacedFixed(s), n_angles_total)
    }

    pub fn validate(&self) -> Result<()> {
        let s = match self.kind {
            MaskKind::UniformSubset(s) | MaskKind::EquispacedFixed(s) => s,
            MaskKind::ComplementarySplit(s) => {
                if s % 2 != 0 {
                    return Err(TomoError::config(format!(
                        "complementary split needs an even angle count, got {s}"
                    )));
                }
                s
            }
        };
        if s == 0 || s > self.n_angles_total {
            return Err(TomoError::config(format!(
                "mask size {s} must lie in [1, {}]",
                self.n_angles_total
            )));
        }
        Ok(())
    }

    /// Size of a single mask drawn from this distribution.
    pub fn mask_size(&self) -> usize {
        match self.kind {
            MaskKind::UniformSubset(s) | MaskKind::EquispacedFixed(s) => s,
            MaskKind::ComplementarySplit(s) => s / 2,
        }
    }
}

fn uniform_subset<R: Rng + ?Sized>(rng: &mut R, n: usize, s: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, s).into_vec();
    v.sort_unstable();
    v
}

/// Draw one mask. For `ComplementarySplit` this returns the first half of a
/// fresh split, whose marginal law is a uniform `s_total / 2` subset.
pub fn sample_mask<R: Rng + ?Sized>(dist: &MaskDistribution, rng: &mut R) -> Result<AngleMask> {
    dist.validate()?;
    let n = dist.n_angles_total;
    match dist.kind {
        MaskKind::UniformSubset(s) => AngleMask::new(uniform_subset(rng, n, s), n),
        MaskKind::EquispacedFixed(s) => AngleMask::equispaced(s, n),
        MaskKind::ComplementarySplit(_) => Ok(split_complementary(dist, rng)?.0),
    }
}

/// Draw an `s_total` subset uniformly and partition it uniformly at random
/// into two disjoint halves.
pub fn split_complementary<R: Rng + ?Sized>(
    dist: &MaskDistribution,
    rng: &mut R,
) -> Result<(AngleMask, AngleMask)> {
    let s_total = match dist.kind {
        MaskKind::ComplementarySplit(s) => s,
        _ => {
            return Err(TomoError::config(
                "split_complementary requires a ComplementarySplit distribution",
            ))
        }
    };
    dist.validate()?;
    let n = dist.n_angles_total;
    let drawn = uniform_subset(rng, n, s_total);
    let first_pos = uniform_subset(rng, s_total, s_total / 2);
    let mut in_first = vec![false; s_total];
    for &p in &first_pos {
        in_first[p] = true;
    }
    let (a, b): (Vec<usize>, Vec<usize>) = drawn
        .iter()
        .enumerate()
        .partition_map(|(i, &angle)| {
            if in_first[i] {
                itertools::Either::Left(angle)
            } else {
                itertools::Either::Right(angle)
            }
        });
    Ok((AngleMask::new(a, n)?, AngleMask::new(b, n)?))
}

/// Per-angle weight `w_k = 1 / sqrt(E[M^T M]_kk)`, zero where the expectation
/// vanishes. Every detector row of an angle shares that angle's weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagonal {
    pub per_angle: Vec<f64>,
}

impl WeightDiagonal {
    pub fn ones(n_angles_total: usize) -> Self {
        WeightDiagonal {
            per_angle: vec![1.0; n_angles_total],
        }
    }

    pub fn from_gram(gram: &[f64]) -> Self {
        WeightDiagonal {
            per_angle: gram
                .iter()
                .map(|&e| if e > 0.0 { 1.0 / e.sqrt() } else { 0.0 })
                .collect(),
        }
    }

    /// Full-length (`p = n_angles_total * n_detectors`) diagonal.
    pub fn expand(&self, n_detectors: usize) -> Vec<f64> {
        self.per_angle
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, n_detectors))
            .collect()
    }
}

pub fn compute_weight_diagonal(dist: &MaskDistribution) -> Result<WeightDiagonal> {
    dist.validate()?;
    match dist.kind {
        MaskKind::UniformSubset(s) => {
            let w = (dist.n_angles_total as f64 / s as f64).sqrt();
            Ok(WeightDiagonal {
                per_angle: vec![w; dist.n_angles_total],
            })
        }
        _ => Ok(WeightDiagonal::from_gram(&expected_mask_gram(
            dist,
            GramMode::Analytic,
        )?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GramMode {
    /// Closed-form selection probabilities.
    Analytic,
    /// Enumerate every mask the distribution can produce.
    Exact,
    MonteCarlo { n_draws: usize, seed: u64 },
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// Number of masks enumerated by [`GramMode::Exact`] for this distribution.
pub fn enumeration_count(dist: &MaskDistribution) -> u128 {
    let n = dist.n_angles_total;
    match dist.kind {
        MaskKind::UniformSubset(s) => binomial(n, s),
        MaskKind::EquispacedFixed(_) => 1,
        MaskKind::ComplementarySplit(s) => binomial(n, s).saturating_mul(binomial(s, s / 2)),
    }
}

/// Every mask with its probability, for exact expectations.
pub fn enumerate_masks(dist: &MaskDistribution, budget: u128) -> Result<Vec<(AngleMask, f64)>> {
    dist.validate()?;
    let count = enumeration_count(dist);
    if count > budget {
        return Err(TomoError::Budget { count, budget });
    }
    let n = dist.n_angles_total;
    let out = match dist.kind {
        MaskKind::UniformSubset(s) => {
            let p = 1.0 / count as f64;
            (0..n)
                .combinations(s)
                .map(|c| Ok((AngleMask::new(c, n)?, p)))
                .collect::<Result<Vec<_>>>()?
        }
        MaskKind::EquispacedFixed(s) => vec![(AngleMask::equispaced(s, n)?, 1.0)],
        MaskKind::ComplementarySplit(s) => {
            // Law of the first half: every (subset, split) pair is equally likely.
            let p = 1.0 / count as f64;
            let mut v = Vec::new();
            for subset in (0..n).combinations(s) {
                for half in (0..s).combinations(s / 2) {
                    let idx = half.iter().map(|&i| subset[i]).collect();
                    v.push((AngleMask::new(idx, n)?, p));
                }
            }
            v
        }
    };
    Ok(out)
}

/// Diagonal of `E[M^T M]` at angle granularity (selection probability of
/// each angle).
pub fn expected_mask_gram(dist: &MaskDistribution, mode: GramMode) -> Result<Vec<f64>> {
    dist.validate()?;
    let n = dist.n_angles_total;
    match mode {
        GramMode::Analytic => Ok(match dist.kind {
            MaskKind::UniformSubset(s) => vec![s as f64 / n as f64; n],
            MaskKind::ComplementarySplit(s) => vec![(s / 2) as f64 / n as f64; n],
            MaskKind::EquispacedFixed(s) => {
                let m = AngleMask::equispaced(s, n)?;
                (0..n).map(|a| if m.contains(a) { 1.0 } else { 0.0 }).collect()
            }
        }),
        GramMode::Exact => {
            let mut gram = vec![0.0; n];
            for (mask, p) in enumerate_masks(dist, ENUMERATION_BUDGET)? {
                for &a in mask.indices() {
                    gram[a] += p;
                }
            }
            Ok(gram)
        }
        GramMode::MonteCarlo { n_draws, seed } => {
            if n_draws == 0 {
                return Err(TomoError::config("monte-carlo mode needs n_draws >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut counts = vec![0u64; n];
            for _ in 0..n_draws {
                for &a in sample_mask(dist, &mut rng)?.indices() {
                    counts[a] += 1;
                }
            }
            Ok(counts
                .into_iter()
                .map(|c| c as f64 / n_draws as f64)
                .collect())
        }
    }
}

/// `||z||_W^2 = sum_k w_k^2 z_k^2` over the rows selected by `mask`.
pub fn weighted_residual_norm_sq(
    z: &Sinogram,
    mask: &AngleMask,
    w: &WeightDiagonal,
) -> Result<f64> {
    if z.n_angles != mask.len() {
        return Err(TomoError::dim(format!(
            "residual has {} rows but mask selects {}",
            z.n_angles,
            mask.len()
        )));
    }
    if w.per_angle.len() != mask.n_angles_total() {
        return Err(TomoError::dim(format!(
            "weight diagonal covers {} angles, mask grid has {}",
            w.per_angle.len(),
            mask.n_angles_total()
        )));
    }
    Ok(mask
        .indices()
        .iter()
        .enumerate()
        .map(|(r, &a)| {
            let wa = w.per_angle[a];
            wa * wa * z.row(r).iter().map(|v| v * v).sum::<f64>()
        })
        .sum())
}

/// Scale each selected row of `z` by `w_k^2` (the action of `W`).
pub fn apply_weight(z: &mut Sinogram, mask: &AngleMask, w: &WeightDiagonal) {
    for (r, &a) in mask.indices().iter().enumerate() {
        let w2 = w.per_angle[a] * w.per_angle[a];
        for v in z.row_mut(r) {
            *v *= w2;
        }
    }
}
