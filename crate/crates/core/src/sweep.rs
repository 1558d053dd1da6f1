//! Transverse-strain sweeps with adiabatic level tracking, crossing detection
//! and the branch-averaged spin splitting.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::EigenSystem;
use crate::model::{
    excited_eigen, overlap_sqr, FineStructureParams, ModelError, Spin, StrainVector, SymmetryLabel, DIM,
};

/// Strain direction used for sweeps unless told otherwise (30° from x).
///
/// With λ⊥ > 0 the spectrum depends weakly on strain direction; along the
/// mirror directions (multiples of 60°) one of the lower-branch crossings is
/// symmetry protected, so the default sits halfway between them.
pub const DEFAULT_STRAIN_ANGLE: f64 = PI / 6.0;

/// Overlap² below which a tracking step is flagged.
pub const AMBIGUOUS_OVERLAP: f64 = 0.5;

/// Overlap with a zero-strain symmetry state needed for a tag.
pub const SYMMETRY_TAG_OVERLAP: f64 = 0.9;

/// Gaps below this are reported as true crossings.
pub const GAP_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("eigenvector norm {norm} is not 1")]
    NotNormalized { norm: f64 },
    #[error("sweep grid must be ascending with at least two points")]
    BadGrid,
    #[error("gap threshold must be positive (got {0})")]
    BadThreshold(f64),
    #[error("cannot partition levels into ms=0 and ms=±1 at δ⊥ = {delta_perp} GHz: no level has p_sz > 0.5")]
    AmbiguousPartition { delta_perp: f64 },
    #[error("no strain in [0, {max}] GHz gives an upper-branch splitting of {target} GHz")]
    NoRoot { target: f64, max: f64 },
}

/// Branch and spin composition of one excited eigenstate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelCharacter {
    /// Weight on the Ex orbital.
    pub p_branch_x: f64,
    pub p_sx: f64,
    pub p_sy: f64,
    pub p_sz: f64,
    pub symmetry_tag: Option<SymmetryLabel>,
}

impl LevelCharacter {
    pub fn spin_population(&self, s: Spin) -> f64 {
        match s {
            Spin::Sx => self.p_sx,
            Spin::Sy => self.p_sy,
            Spin::Sz => self.p_sz,
        }
    }

    pub fn dominant_spin(&self) -> Spin {
        if self.p_sz >= self.p_sx && self.p_sz >= self.p_sy {
            Spin::Sz
        } else if self.p_sx >= self.p_sy {
            Spin::Sx
        } else {
            Spin::Sy
        }
    }

    pub fn is_ms0(&self) -> bool {
        self.p_sz > 0.5
    }
}

pub fn classify_level(vec: &[Complex64]) -> Result<LevelCharacter, SweepError> {
    assert_eq!(vec.len(), DIM, "level vectors live in the 6-dimensional product space");
    let pops: Vec<f64> = vec.iter().map(|z| z.norm_sqr()).collect();
    let norm = pops.iter().sum::<f64>();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(SweepError::NotNormalized { norm: norm.sqrt() });
    }
    let symmetry_tag = SymmetryLabel::ALL
        .into_iter()
        .find(|l| overlap_sqr(&l.state(), vec) >= SYMMETRY_TAG_OVERLAP);
    Ok(LevelCharacter {
        p_branch_x: (pops[0] + pops[1] + pops[2]) / norm,
        p_sx: (pops[0] + pops[3]) / norm,
        p_sy: (pops[1] + pops[4]) / norm,
        p_sz: (pops[2] + pops[5]) / norm,
        symmetry_tag,
    })
}

/// Characters of all six eigenvectors, in eigenvalue order.
pub fn classify_all(es: &EigenSystem) -> Result<Vec<LevelCharacter>, SweepError> {
    (0..es.dim()).map(|k| classify_level(&es.vector(k))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub energy: f64,
    pub character: LevelCharacter,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub params: FineStructureParams,
    pub angle: f64,
    pub grid: Vec<f64>,
    /// `tracks[t][i]` is track `t` at grid point `i`.
    pub tracks: Vec<Vec<TrackPoint>>,
    /// Sorted eigenvalues per grid point.
    pub levels: Vec<[f64; DIM]>,
    /// `slot[i][t]` is the eigenvalue index occupied by track `t` at point `i`.
    pub slot: Vec<[usize; DIM]>,
    /// `overlaps[i][t][k]` = |⟨track t at i−1 | eigvec k at i⟩|², for i ≥ 1.
    pub overlaps: Vec<[[f64; DIM]; DIM]>,
    /// Grid points where the best assigned overlap fell below 0.5.
    pub ambiguous: Vec<bool>,
}

impl SweepResult {
    pub fn strain_at(&self, perp: f64) -> StrainVector {
        StrainVector::from_polar(perp, self.angle)
    }

    /// Track sitting at sorted position `k` at grid point `i`.
    pub fn track_at(&self, i: usize, k: usize) -> usize {
        self.slot[i]
            .iter()
            .position(|&s| s == k)
            .expect("slots are a permutation")
    }
}

/// Diagonalizes along `grid` (δ⊥ values, strain direction `angle`) and stitches
/// eigenstates into continuous tracks by greedy maximum overlap.
pub fn sweep(p: &FineStructureParams, grid: &[f64], angle: f64) -> Result<SweepResult, SweepError> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(SweepError::BadGrid);
    }
    p.validate()?;
    let systems: Vec<EigenSystem> = grid
        .par_iter()
        .map(|&d| excited_eigen(p, &StrainVector::from_polar(d, angle)))
        .collect::<Result<_, _>>()?;
    let characters: Vec<Vec<LevelCharacter>> = systems.iter().map(classify_all).collect::<Result<_, _>>()?;

    let n = grid.len();
    let mut slot = Vec::with_capacity(n);
    let mut overlaps = Vec::with_capacity(n);
    let mut ambiguous = vec![false; n];
    slot.push(std::array::from_fn(|t| t));
    overlaps.push([[0.0; DIM]; DIM]);
    for i in 1..n {
        let prev = &systems[i - 1];
        let cur = &systems[i];
        let prev_slot: [usize; DIM] = slot[i - 1];
        let mut ov = [[0.0; DIM]; DIM];
        for t in 0..DIM {
            let a = prev.vector(prev_slot[t]);
            for k in 0..DIM {
                ov[t][k] = overlap_sqr(&a, &cur.vector(k));
            }
        }
        let (assign, worst) = greedy_assign(&ov);
        ambiguous[i] = worst < AMBIGUOUS_OVERLAP;
        slot.push(assign);
        overlaps.push(ov);
    }

    let tracks = (0..DIM)
        .map(|t| {
            (0..n)
                .map(|i| {
                    let k = slot[i][t];
                    TrackPoint {
                        energy: systems[i].values[k],
                        character: characters[i][k],
                    }
                })
                .collect()
        })
        .collect();
    let levels = systems
        .iter()
        .map(|s| std::array::from_fn(|k| s.values[k]))
        .collect();
    Ok(SweepResult {
        params: *p,
        angle,
        grid: grid.to_vec(),
        tracks,
        levels,
        slot,
        overlaps,
        ambiguous,
    })
}

/// Greedy matching on descending overlap; returns the assignment and the
/// smallest overlap it used.
fn greedy_assign(ov: &[[f64; DIM]; DIM]) -> ([usize; DIM], f64) {
    let mut pairs: Vec<(usize, usize)> = (0..DIM).flat_map(|t| (0..DIM).map(move |k| (t, k))).collect();
    pairs.sort_by(|&(t1, k1), &(t2, k2)| ov[t2][k2].total_cmp(&ov[t1][k1]).then((t1, k1).cmp(&(t2, k2))));
    let mut assign = [usize::MAX; DIM];
    let mut taken = [false; DIM];
    let mut worst = f64::INFINITY;
    for (t, k) in pairs {
        if assign[t] == usize::MAX && !taken[k] {
            assign[t] = k;
            taken[k] = true;
            worst = worst.min(ov[t][k]);
        }
    }
    (assign, worst)
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|i| start + step * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub strain_at_min_gap: f64,
    /// Sorted level index of the lower partner.
    pub lower_level: usize,
    pub track_a: usize,
    pub track_b: usize,
    pub min_gap: f64,
    /// The partners swap spin character across the minimum: the track that is
    /// more ms=0-like (or more Sx-like, for two ms=±1 levels) on one side is
    /// less so on the other.
    pub avoided: bool,
    /// One partner carries ms=0 character before the minimum.
    pub involves_ms0: bool,
}

/// Smallest character difference between two tracks that counts as a
/// distinguishable ordering on one side of a gap minimum.
pub const CHARACTER_CONTRAST: f64 = 0.1;

/// Finds local minima of adjacent-level gaps below `gap_threshold`, refines
/// each by golden-section search on the exact gap, and classifies it.
pub fn detect_crossings(sr: &SweepResult, gap_threshold: f64) -> Result<Vec<CrossingEvent>, SweepError> {
    if !(gap_threshold > 0.0) {
        return Err(SweepError::BadThreshold(gap_threshold));
    }
    let n = sr.grid.len();
    let mut events = Vec::new();
    for k in 0..DIM - 1 {
        let gaps: Vec<f64> = sr.levels.iter().map(|l| l[k + 1] - l[k]).collect();
        let minima: Vec<usize> = (1..n.saturating_sub(1))
            .filter(|&i| gaps[i] <= gaps[i - 1] && gaps[i] < gaps[i + 1])
            .collect();
        for (m, &i) in minima.iter().enumerate() {
            if gaps[i] >= gap_threshold {
                continue;
            }
            let gap_at = |d: f64| -> Result<f64, SweepError> {
                let es = excited_eigen(&sr.params, &sr.strain_at(d))?;
                Ok(es.values[k + 1] - es.values[k])
            };
            let (d_min, g_min) = golden_section(gap_at, sr.grid[i - 1], sr.grid[i + 1], 1e-10)?;
            let (d_min, g_min) = if g_min <= gaps[i] { (d_min, g_min) } else { (sr.grid[i], gaps[i]) };

            let lo = if m == 0 { 0 } else { minima[m - 1] };
            let hi = minima.get(m + 1).copied().unwrap_or(n - 1);
            let a = sr.track_at(i, k);
            let b = sr.track_at(i, k + 1);
            let involves_ms0 = (lo..=hi).any(|j| sr.tracks[a][j].character.is_ms0() || sr.tracks[b][j].character.is_ms0());
            let weight = |t: usize, j: usize| {
                let c = sr.tracks[t][j].character;
                if involves_ms0 { c.p_sz } else { c.p_sx }
            };
            let contrast: Vec<f64> = (0..n).map(|j| if (lo..=hi).contains(&j) { weight(a, j) - weight(b, j) } else { 0.0 }).collect();
            let left = contrast[extreme(&contrast, lo, i)];
            let right = contrast[extreme(&contrast, i, hi)];
            let avoided = left * right < 0.0 && left.abs().min(right.abs()) > CHARACTER_CONTRAST;
            events.push(CrossingEvent {
                strain_at_min_gap: d_min,
                lower_level: k,
                track_a: a,
                track_b: b,
                min_gap: g_min.max(0.0),
                avoided,
                involves_ms0,
            });
        }
    }
    events.sort_by(|x, y| x.strain_at_min_gap.total_cmp(&y.strain_at_min_gap).then(x.lower_level.cmp(&y.lower_level)));
    Ok(events)
}

fn extreme(v: &[f64], lo: usize, hi: usize) -> usize {
    (lo..=hi).fold(lo, |best, j| if v[j].abs() > v[best].abs() { j } else { best })
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64), E> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Mean energy of the four ms=±1-character levels minus the mean of the two
/// ms=0-character levels.
///
/// Membership is by p_sz > 0.5. When that does not yield exactly two ms=0
/// levels (strong mixing near an avoided crossing) the ranks of the ms=0
/// levels in the decoupled λ⊥ = 0 spectrum are used instead.
pub fn averaged_splitting(p: &FineStructureParams, s: &StrainVector) -> Result<f64, SweepError> {
    p.validate()?;
    let es = excited_eigen(p, s)?;
    let chars = classify_all(&es)?;
    let mut ms0: Vec<usize> = (0..DIM).filter(|&k| chars[k].is_ms0()).collect();
    if ms0.is_empty() {
        return Err(SweepError::AmbiguousPartition { delta_perp: s.perp() });
    }
    if ms0.len() != 2 {
        ms0 = reference_ms0_ranks(p, s)?.to_vec();
    }
    let mean0 = ms0.iter().map(|&k| es.values[k]).sum::<f64>() / 2.0;
    let mean1 = (0..DIM)
        .filter(|k| !ms0.contains(k))
        .map(|k| es.values[k])
        .sum::<f64>()
        / 4.0;
    Ok(mean1 - mean0)
}

/// Sorted-spectrum ranks occupied by the ms=0 pair when λ⊥ = 0, where that
/// pair is exactly decoupled at energies −2Des/3 ± δ⊥ (plus offsets).
fn reference_ms0_ranks(p: &FineStructureParams, s: &StrainVector) -> Result<[usize; 2], SweepError> {
    let reference = FineStructureParams { lambda_perp: 0.0, ..*p };
    let es = excited_eigen(&reference, s)?;
    let centre = -2.0 * p.d_es / 3.0 + p.zpl_offset + p.delta_z;
    let targets = [centre - s.perp(), centre + s.perp()];
    let mut used = [false; DIM];
    let mut ranks = [0usize; 2];
    for (r, target) in ranks.iter_mut().zip(targets) {
        let k = (0..DIM)
            .filter(|&k| !used[k])
            .min_by(|&a, &b| (es.values[a] - target).abs().total_cmp(&(es.values[b] - target).abs()))
            .expect("six levels available");
        used[k] = true;
        *r = k;
    }
    ranks.sort_unstable();
    Ok(ranks)
}

/// Energy gap in the upper branch between the Sz-character level and the
/// nearer ms=±1-character level.
pub fn upper_branch_sz_splitting(p: &FineStructureParams, s: &StrainVector) -> Result<f64, SweepError> {
    let es = excited_eigen(p, s)?;
    let chars = classify_all(&es)?;
    let upper = [3usize, 4, 5];
    let iz = *upper
        .iter()
        .max_by(|&&a, &&b| chars[a].p_sz.total_cmp(&chars[b].p_sz))
        .expect("non-empty");
    Ok(upper
        .iter()
        .filter(|&&k| k != iz)
        .map(|&k| (es.values[k] - es.values[iz]).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Search window for [`nv2_condition_strain`], GHz.
pub const NV2_SEARCH_MAX: f64 = 100.0;

/// Smallest δ⊥ at which the upper-branch Sz level sits exactly `d_gs` from
/// its nearer ms=±1 neighbour, so that ground and excited splittings match.
pub fn nv2_condition_strain(p: &FineStructureParams, angle: f64) -> Result<f64, SweepError> {
    p.validate()?;
    let f = |d: f64| -> Result<f64, SweepError> {
        Ok(upper_branch_sz_splitting(p, &StrainVector::from_polar(d, angle))? - p.d_gs)
    };
    let f0 = f(0.0)?;
    if f0.abs() <= 1e-9 {
        return Ok(0.0);
    }
    let step = 0.05;
    let mut lo = 0.0;
    let mut flo = f0;
    let mut bracket = None;
    while lo < NV2_SEARCH_MAX {
        let hi = (lo + step).min(NV2_SEARCH_MAX);
        let fhi = f(hi)?;
        if flo.signum() != fhi.signum() || fhi == 0.0 {
            bracket = Some((lo, hi, flo));
            break;
        }
        lo = hi;
        flo = fhi;
    }
    let (mut a, mut b, mut fa) = bracket.ok_or(SweepError::NoRoot {
        target: p.d_gs,
        max: NV2_SEARCH_MAX,
    })?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm == 0.0 || (b - a) < 1e-12 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
