//! Excited-state ESR under orbital hopping: branch-resolved frequencies,
//! the two-site exchange lineshape and its temperature dependence.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{excited_eigen, operators, FineStructureParams, ModelError, StrainVector, DIM};
use crate::sweep::{classify_all, golden_section, SweepError};

/// Boltzmann constant in meV/K.
pub const KB_MEV_PER_K: f64 = 8.617_333_262e-2;

/// Minimum weight in one strain branch for a level to count as a member.
pub const BRANCH_PURITY: f64 = 0.9;

/// Intrinsic ESR linewidth (FWHM, GHz) used by the temperature scan.
pub const DEFAULT_ESR_LINEWIDTH: f64 = 0.05;

/// Strain (GHz) of the default temperature scan, well inside the
/// branch-resolved regime.
pub const DEFAULT_ESR_STRAIN: f64 = 20.0;

/// Temperature (K) at which the calibrated contrast crosses one half.
pub const HALF_CONTRAST_TEMPERATURE: f64 = 150.0;

/// Activation energy of the default hop-rate map, meV. Not a measured value;
/// chosen large enough that the contrast recovers by 260 K.
pub const DEFAULT_EA_MEV: f64 = 60.0;

/// Prefactor of the default hop-rate map, 1/ns, from
/// [`calibrate_prefactor`] at the default ESR strain and linewidth.
pub const DEFAULT_R0: f64 = 5182.738_581_717;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EsrError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("branch membership is ambiguous at δ⊥ = {delta_perp} GHz (purity {purity:.3} < 0.9)")]
    AmbiguousBranch { delta_perp: f64, purity: f64 },
    #[error("exchange model `{name}` = {value} violates: {constraint}")]
    BadModel {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("frequency grid must be ascending and finite")]
    BadGrid,
    #[error("temperature must be positive (got {0} K)")]
    BadTemperature(f64),
    #[error("no hop rate reaches half contrast")]
    CalibrationFailed,
}

/// Within-branch ESR frequencies (ms=±1 pair mean minus the ms=0 level) for
/// the lower (`a`) and upper (`b`) strain branches, with the pair gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEsr {
    pub freq_a: f64,
    pub freq_b: f64,
    pub sub_split_a: f64,
    pub sub_split_b: f64,
}

pub fn branch_esr_frequencies(p: &FineStructureParams, s: &StrainVector) -> Result<BranchEsr, EsrError> {
    p.validate()?;
    s.validate()?;
    let es = excited_eigen(p, s)?;
    let chars = classify_all(&es)?;
    let perp = s.perp();
    let ops = operators();
    // orbital strain operator normalized to ±1 on the two branches
    let strain_op = if perp > 0.0 {
        Some(&ops.vx.scale(s.delta_x / perp) + &ops.vy.scale(s.delta_y / perp))
    } else {
        None
    };
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut worst: f64 = 1.0;
    for k in 0..DIM {
        let p_upper = match &strain_op {
            Some(op) => 0.5 * (1.0 + op.expectation(&es.vector(k), &es.vector(k)).re),
            None => 0.5,
        };
        worst = worst.min(p_upper.max(1.0 - p_upper));
        if p_upper > 0.5 {
            upper.push(k);
        } else {
            lower.push(k);
        }
    }
    if worst <= BRANCH_PURITY || lower.len() != 3 {
        return Err(EsrError::AmbiguousBranch {
            delta_perp: perp,
            purity: worst,
        });
    }
    let branch = |ks: &[usize]| {
        let iz = *ks
            .iter()
            .max_by(|&&a, &&b| chars[a].p_sz.total_cmp(&chars[b].p_sz))
            .expect("three levels");
        let pair: Vec<f64> = ks.iter().filter(|&&k| k != iz).map(|&k| es.values[k]).collect();
        (0.5 * (pair[0] + pair[1]) - es.values[iz], (pair[1] - pair[0]).abs())
    };
    let (freq_a, sub_split_a) = branch(&lower);
    let (freq_b, sub_split_b) = branch(&upper);
    Ok(BranchEsr {
        freq_a,
        freq_b,
        sub_split_a,
        sub_split_b,
    })
}

/// Two-site exchange between branch resonances. Frequencies and widths in
/// GHz, hop rate in 1/ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeModel {
    pub freq_a: f64,
    pub freq_b: f64,
    /// Intrinsic FWHM of each resonance.
    pub linewidth_0: f64,
    pub hop_rate: f64,
    pub weight_a: f64,
}

impl ExchangeModel {
    pub fn validate(&self) -> Result<(), EsrError> {
        let check = |name, value: f64, ok: bool, constraint| {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(EsrError::BadModel { name, value, constraint })
            }
        };
        check("freq_a", self.freq_a, self.freq_a > 0.0, "> 0")?;
        check("freq_b", self.freq_b, self.freq_b > 0.0, "> 0")?;
        check("linewidth_0", self.linewidth_0, self.linewidth_0 > 0.0, "> 0")?;
        check("hop_rate", self.hop_rate, self.hop_rate >= 0.0, ">= 0")?;
        check("weight_a", self.weight_a, (0.0..=1.0).contains(&self.weight_a), "in [0, 1]")
    }

    pub fn mean_frequency(&self) -> f64 {
        self.weight_a * self.freq_a + (1.0 - self.weight_a) * self.freq_b
    }

    /// Intrinsic damping rate giving FWHM `linewidth_0` in frequency.
    pub fn damping(&self) -> f64 {
        std::f64::consts::PI * self.linewidth_0
    }

    /// Unit-area intensity at `nu`.
    ///
    /// I(ν) = 2·Re{wᵀ·[i2π(ν − Ω) + K + Γ₀]⁻¹·w}, with the exchange matrix K
    /// symmetrized by the site weights so that w = (√wa, √wb) spans its kernel.
    pub fn intensity(&self, nu: f64) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let (wa, wb) = (self.weight_a, 1.0 - self.weight_a);
        // leaving-rates obey detailed balance and equal hop_rate at wa = 1/2
        let k_ab = 2.0 * self.hop_rate * wb;
        let k_ba = 2.0 * self.hop_rate * wa;
        let g = self.damping();
        let a11 = Complex64::new(k_ab + g, two_pi * (nu - self.freq_a));
        let a22 = Complex64::new(k_ba + g, two_pi * (nu - self.freq_b));
        let a12 = Complex64::new(-(k_ab * k_ba).sqrt(), 0.0);
        let det = a11 * a22 - a12 * a12;
        assert!(det.norm() > 0.0, "positive damping keeps the exchange matrix invertible");
        let (sa, sb) = (wa.sqrt(), wb.sqrt());
        // wᵀ·adj(A)·w / det
        let form = (a22 * sa * sa - a12 * 2.0 * sa * sb + a11 * sb * sb) / det;
        2.0 * form.re
    }

    /// Peak intensity of a single unbroadened-by-exchange line: 2/Γ₀.
    pub fn fast_limit_peak(&self) -> f64 {
        2.0 / self.damping()
    }
}

pub fn exchange_lineshape(m: &ExchangeModel, grid: &[f64]) -> Result<Vec<f64>, EsrError> {
    m.validate()?;
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EsrError::BadGrid);
    }
    Ok(grid.iter().map(|&nu| m.intensity(nu)).collect())
}

/// Arrhenius map from temperature to hop rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureMap {
    /// Attempt rate, 1/ns.
    pub r0: f64,
    /// Activation energy, meV.
    pub ea: f64,
}

impl Default for TemperatureMap {
    fn default() -> Self {
        TemperatureMap {
            r0: DEFAULT_R0,
            ea: DEFAULT_EA_MEV,
        }
    }
}

impl TemperatureMap {
    pub fn validate(&self) -> Result<(), EsrError> {
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return Err(EsrError::BadModel {
                name: "r0",
                value: self.r0,
                constraint: "> 0",
            });
        }
        if !(self.ea >= 0.0) || !self.ea.is_finite() {
            return Err(EsrError::BadModel {
                name: "ea",
                value: self.ea,
                constraint: ">= 0",
            });
        }
        Ok(())
    }

    pub fn hop_rate(&self, temperature: f64) -> f64 {
        self.r0 * (-self.ea / (KB_MEV_PER_K * temperature)).exp()
    }
}

/// Peak height at the mean frequency relative to the fast-exchange limit.
pub fn contrast(m: &ExchangeModel) -> f64 {
    m.intensity(m.mean_frequency()) / m.fast_limit_peak()
}

pub fn esr_contrast_vs_temperature(
    tm: &TemperatureMap,
    p: &FineStructureParams,
    s: &StrainVector,
    linewidth_0: f64,
    temps: &[f64],
) -> Result<Vec<(f64, f64)>, EsrError> {
    tm.validate()?;
    let b = branch_esr_frequencies(p, s)?;
    temps
        .iter()
        .map(|&t| {
            if !(t > 0.0) || !t.is_finite() {
                return Err(EsrError::BadTemperature(t));
            }
            let m = ExchangeModel {
                freq_a: b.freq_a,
                freq_b: b.freq_b,
                linewidth_0,
                hop_rate: tm.hop_rate(t),
                weight_a: 0.5,
            };
            m.validate()?;
            Ok((t, contrast(&m)))
        })
        .collect()
}

/// Hop rate at which the contrast of `template` reaches one half.
pub fn half_contrast_hop_rate(template: &ExchangeModel) -> Result<f64, EsrError> {
    template.validate()?;
    let at = |log_k: f64| contrast(&ExchangeModel { hop_rate: log_k.exp(), ..*template }) - 0.5;
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    if at(lo) >= 0.0 || at(hi) <= 0.0 {
        return Err(EsrError::CalibrationFailed);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Prefactor r0 that puts half contrast at `t_half` for activation energy `ea`.
pub fn calibrate_prefactor(
    p: &FineStructureParams,
    s: &StrainVector,
    linewidth_0: f64,
    ea: f64,
    t_half: f64,
) -> Result<f64, EsrError> {
    let b = branch_esr_frequencies(p, s)?;
    let k_half = half_contrast_hop_rate(&ExchangeModel {
        freq_a: b.freq_a,
        freq_b: b.freq_b,
        linewidth_0,
        hop_rate: 0.0,
        weight_a: 0.5,
    })?;
    Ok(k_half * (ea / (KB_MEV_PER_K * t_half)).exp())
}

/// Temperature where the contrast of a scan crosses one half, by
/// golden-section search on |contrast − 1/2| in `[t_lo, t_hi]`.
pub fn half_contrast_temperature(
    tm: &TemperatureMap,
    p: &FineStructureParams,
    s: &StrainVector,
    linewidth_0: f64,
    t_lo: f64,
    t_hi: f64,
) -> Result<f64, EsrError> {
    let (t, _) = golden_section(
        |t| Ok::<_, EsrError>((esr_contrast_vs_temperature(tm, p, s, linewidth_0, &[t])?[0].1 - 0.5).abs()),
        t_lo,
        t_hi,
        1e-9,
    )?;
    Ok(t)
}

/// Closed-form averaged ESR pair at large strain: Des ∓ κ·δ⊥.
pub fn averaged_split_large_strain(p: &FineStructureParams, delta_perp: f64) -> (f64, f64) {
    let e = p.e_es_coeff * delta_perp;
    (p.d_es - e, p.d_es + e)
}

/// Branch-averaged Sz→Sx and Sz→Sy frequencies from the full Hamiltonian,
/// assigning the Sx/Sy partner in each branch by spin character. Returned in
/// ascending order.
pub fn averaged_split_full(p: &FineStructureParams, s: &StrainVector) -> Result<(f64, f64), EsrError> {
    branch_esr_frequencies(p, s)?;
    let es = excited_eigen(p, s)?;
    let chars = classify_all(&es)?;
    let mut fx = 0.0;
    let mut fy = 0.0;
    for branch in [0..3, 3..6] {
        let ks: Vec<usize> = branch.collect();
        let iz = *ks
            .iter()
            .max_by(|&&a, &&b| chars[a].p_sz.total_cmp(&chars[b].p_sz))
            .expect("three levels");
        let pair: Vec<usize> = ks.into_iter().filter(|&k| k != iz).collect();
        let (kx, ky) = if chars[pair[0]].p_sx >= chars[pair[1]].p_sx {
            (pair[0], pair[1])
        } else {
            (pair[1], pair[0])
        };
        fx += 0.5 * (es.values[kx] - es.values[iz]);
        fy += 0.5 * (es.values[ky] - es.values[iz]);
    }
    Ok((fx.min(fy), fx.max(fy)))
}
