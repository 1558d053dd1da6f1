//! Optical transition lines and a classical 10-level rate model of the
//! excitation–emission cycle: spectra, spin polarization and Rabi readout.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::EigenSystem;
use crate::model::{excited_eigen, ground_levels, FineStructureParams, ModelError, Spin, StrainVector, DIM};
use crate::sweep::{classify_all, LevelCharacter, SweepError};

/// Ground sublevels, excited eigenstates, metastable singlet.
pub const N_LEVELS: usize = 10;
pub const EXCITED_OFFSET: usize = 3;
pub const SINGLET: usize = 9;

/// Lines weaker than this are kept but flagged weak.
pub const WEAK_LINE_FLOOR: f64 = 1e-4;

/// Allowed deviation of the population sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhotoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("rate parameter `{name}` = {value} violates: {constraint}")]
    BadRate {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("line profile is NaN at laser detuning {0} GHz")]
    NanProfile(f64),
    #[error("populations leave the simplex (sum {sum}, min {min})")]
    OffSimplex { sum: f64, min: f64 },
    #[error("duration must be finite and non-negative (got {0} ns)")]
    BadDuration(f64),
    #[error("rate matrix is singular at laser detuning {0:?} GHz")]
    Singular(Option<f64>),
    #[error("detuning grid must be ascending and finite")]
    BadGrid,
    #[error("readout line has zero strength")]
    ZeroStrength,
    #[error("microwave Rabi frequency must be positive (got {0})")]
    BadRabiFrequency(f64),
}

/// Ground-state spin sublevels, in rate-model order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundSublevel {
    Sz,
    Sx,
    Sy,
}

impl GroundSublevel {
    pub const ALL: [GroundSublevel; 3] = [GroundSublevel::Sz, GroundSublevel::Sx, GroundSublevel::Sy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn spin(self) -> Spin {
        match self {
            GroundSublevel::Sz => Spin::Sz,
            GroundSublevel::Sx => Spin::Sx,
            GroundSublevel::Sy => Spin::Sy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroundSublevel::Sz => "gSz",
            GroundSublevel::Sx => "gSx",
            GroundSublevel::Sy => "gSy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionLine {
    pub ground_sublevel: GroundSublevel,
    /// 1-based index into the ascending excited eigenvalues.
    pub excited_index: usize,
    /// GHz from the zero-phonon reference.
    pub detuning: f64,
    /// Relative oscillator strength; sums to 1 over the six lines of a sublevel.
    pub strength: f64,
    pub spin_conserving: bool,
    pub weak: bool,
}

impl TransitionLine {
    pub fn is_upper_branch(&self) -> bool {
        self.excited_index > 3
    }
}

/// Eigenstructure and line list for one strain configuration; the rate
/// generator for any drive setting is built from it without re-diagonalizing.
#[derive(Debug, Clone)]
pub struct OpticalSystem {
    pub energies: [f64; DIM],
    pub characters: Vec<LevelCharacter>,
    pub lines: Vec<TransitionLine>,
}

impl OpticalSystem {
    pub fn new(p: &FineStructureParams, s: &StrainVector) -> Result<Self, PhotoError> {
        p.validate()?;
        s.validate()?;
        let es: EigenSystem = excited_eigen(p, s)?;
        let characters = classify_all(&es)?;
        let ground = ground_levels(p);
        let mut lines = Vec::with_capacity(3 * DIM);
        for g in GroundSublevel::ALL {
            for (e, c) in characters.iter().enumerate() {
                // orbital dipole averaged over the Ex and Ey components
                let strength = (0.5 * c.spin_population(g.spin())).clamp(0.0, 1.0);
                lines.push(TransitionLine {
                    ground_sublevel: g,
                    excited_index: e + 1,
                    detuning: es.values[e] - ground.energy(g.spin()),
                    strength,
                    spin_conserving: c.dominant_spin() == g.spin(),
                    weak: strength < WEAK_LINE_FLOOR,
                });
            }
        }
        Ok(OpticalSystem {
            energies: std::array::from_fn(|k| es.values[k]),
            characters,
            lines,
        })
    }

    pub fn line(&self, g: GroundSublevel, excited_index: usize) -> &TransitionLine {
        &self.lines[g.index() * DIM + excited_index - 1]
    }

    /// Generator `G` of dp/dt = G·p in 1/ns, columns indexed by source level.
    pub fn generator(&self, rp: &RateParams, laser: Option<f64>, mw_on: bool, green_on: bool) -> Result<DMatrix<f64>, PhotoError> {
        rp.validate()?;
        let mut g = DMatrix::zeros(N_LEVELS, N_LEVELS);
        let mut add = |from: usize, to: usize, rate: f64| {
            g[(to, from)] += rate;
            g[(from, from)] -= rate;
        };
        for (e, c) in self.characters.iter().enumerate() {
            let ie = EXCITED_OFFSET + e;
            for gs in GroundSublevel::ALL {
                add(ie, gs.index(), rp.gamma_rad * c.spin_population(gs.spin()));
            }
            add(ie, SINGLET, rp.k_isc_xy * (c.p_sx + c.p_sy) + rp.k_isc_z * c.p_sz);
        }
        add(SINGLET, GroundSublevel::Sz.index(), rp.gamma_singlet * rp.beta_z);
        add(SINGLET, GroundSublevel::Sx.index(), rp.gamma_singlet * (1.0 - rp.beta_z) / 2.0);
        add(SINGLET, GroundSublevel::Sy.index(), rp.gamma_singlet * (1.0 - rp.beta_z) / 2.0);
        if mw_on {
            for driven in [GroundSublevel::Sx, GroundSublevel::Sy] {
                add(GroundSublevel::Sz.index(), driven.index(), rp.mw_mix_rate);
                add(driven.index(), GroundSublevel::Sz.index(), rp.mw_mix_rate);
            }
        }
        for line in &self.lines {
            let from = line.ground_sublevel.index();
            let to = EXCITED_OFFSET + line.excited_index - 1;
            if green_on {
                add(from, to, rp.pump_green * line.strength);
            }
            if let Some(nu) = laser {
                let profile = lorentzian_unit_peak(nu - line.detuning, rp.linewidth);
                if profile.is_nan() {
                    return Err(PhotoError::NanProfile(nu));
                }
                add(from, to, rp.pump_res_max * line.strength * profile);
            }
        }
        Ok(g)
    }
}

/// All 18 ground → excited lines, grouped by ground sublevel.
pub fn transition_lines(p: &FineStructureParams, s: &StrainVector) -> Result<Vec<TransitionLine>, PhotoError> {
    Ok(OpticalSystem::new(p, s)?.lines)
}

/// Lines sharing an optical frequency. At zero magnetic field gSx and gSy are
/// degenerate, so their lines to the same excited level form one resonance.
#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub detuning: f64,
    pub strength: f64,
    pub excited_index: usize,
    pub ground: Vec<GroundSublevel>,
    pub spin_conserving: bool,
}

pub fn resonances(lines: &[TransitionLine]) -> Vec<Resonance> {
    let mut out: Vec<Resonance> = Vec::new();
    for l in lines {
        match out
            .iter_mut()
            .find(|r| r.excited_index == l.excited_index && (r.detuning - l.detuning).abs() < 1e-9)
        {
            Some(r) => {
                r.strength += l.strength;
                r.ground.push(l.ground_sublevel);
                r.spin_conserving |= l.spin_conserving;
            }
            None => out.push(Resonance {
                detuning: l.detuning,
                strength: l.strength,
                excited_index: l.excited_index,
                ground: vec![l.ground_sublevel],
                spin_conserving: l.spin_conserving,
            }),
        }
    }
    out.sort_by(|a, b| a.detuning.total_cmp(&b.detuning));
    out
}

/// Lorentzian with unit peak and full width `fwhm`.
pub fn lorentzian_unit_peak(x: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw * hw / (x * x + hw * hw)
}

/// Rate constants of the optical cycle. Times in ns, frequencies in GHz.
///
/// Only the orderings k_isc_z < k_isc_xy and beta_z > 1/3 are physical
/// input; the magnitudes are model defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub gamma_rad: f64,
    pub k_isc_xy: f64,
    pub k_isc_z: f64,
    pub gamma_singlet: f64,
    pub beta_z: f64,
    pub pump_green: f64,
    pub pump_res_max: f64,
    /// Optical line FWHM.
    pub linewidth: f64,
    pub mw_mix_rate: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams {
            gamma_rad: 1.0 / 12.0,
            k_isc_xy: 0.05,
            k_isc_z: 0.001,
            gamma_singlet: 1.0 / 300.0,
            beta_z: 0.9,
            pump_green: 0.004,
            pump_res_max: 0.005,
            linewidth: 0.02,
            mw_mix_rate: 0.05,
        }
    }
}

impl RateParams {
    /// Spin-blind variant: equal shelving and isotropic singlet return.
    pub fn spin_blind(self) -> Self {
        RateParams {
            k_isc_z: self.k_isc_xy,
            beta_z: 1.0 / 3.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), PhotoError> {
        let fields = [
            ("gamma_rad", self.gamma_rad),
            ("k_isc_xy", self.k_isc_xy),
            ("k_isc_z", self.k_isc_z),
            ("gamma_singlet", self.gamma_singlet),
            ("beta_z", self.beta_z),
            ("pump_green", self.pump_green),
            ("pump_res_max", self.pump_res_max),
            ("linewidth", self.linewidth),
            ("mw_mix_rate", self.mw_mix_rate),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(PhotoError::BadRate {
                    name,
                    value,
                    constraint: "finite and >= 0",
                });
            }
        }
        if self.beta_z > 1.0 {
            return Err(PhotoError::BadRate {
                name: "beta_z",
                value: self.beta_z,
                constraint: "<= 1",
            });
        }
        if !(self.linewidth > 0.0) {
            return Err(PhotoError::BadRate {
                name: "linewidth",
                value: self.linewidth,
                constraint: "> 0",
            });
        }
        if self.k_isc_z > self.k_isc_xy {
            return Err(PhotoError::BadRate {
                name: "k_isc_z",
                value: self.k_isc_z,
                constraint: "<= k_isc_xy",
            });
        }
        Ok(())
    }

    /// Strict ordering required of the physical defaults; the spin-blind
    /// control case (equality) passes `validate` but not this.
    pub fn is_spin_selective(&self) -> bool {
        self.k_isc_z < self.k_isc_xy
    }
}

/// Occupation of the 10 levels: gSz, gSx, gSy, six excited, singlet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelPopulations(pub [f64; N_LEVELS]);

impl LevelPopulations {
    pub fn new(p: [f64; N_LEVELS]) -> Result<Self, PhotoError> {
        check_simplex(&p)?;
        Ok(LevelPopulations(p))
    }

    pub fn uniform_ground() -> Self {
        let mut p = [0.0; N_LEVELS];
        p[..3].fill(1.0 / 3.0);
        LevelPopulations(p)
    }

    pub fn ground(&self, g: GroundSublevel) -> f64 {
        self.0[g.index()]
    }

    pub fn excited_total(&self) -> f64 {
        self.0[EXCITED_OFFSET..EXCITED_OFFSET + DIM].iter().sum()
    }

    pub fn singlet(&self) -> f64 {
        self.0[SINGLET]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn check_simplex(p: &[f64]) -> Result<(), PhotoError> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < -SIMPLEX_TOL {
        return Err(PhotoError::OffSimplex { sum, min });
    }
    Ok(())
}

/// Clears round-off negatives and restores the unit sum.
fn settle(v: &[f64]) -> Result<LevelPopulations, PhotoError> {
    check_simplex(v)?;
    let mut p = [0.0; N_LEVELS];
    for (dst, &x) in p.iter_mut().zip(v) {
        *dst = x.max(0.0);
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    Ok(LevelPopulations(p))
}

fn check_duration(duration: f64) -> Result<(), PhotoError> {
    if !duration.is_finite() || duration < 0.0 {
        return Err(PhotoError::BadDuration(duration));
    }
    Ok(())
}

/// exp(G·t)·p by scaling and squaring.
pub fn propagate(pop: &LevelPopulations, g: &DMatrix<f64>, duration: f64) -> Result<LevelPopulations, PhotoError> {
    check_duration(duration)?;
    if duration == 0.0 {
        return Ok(*pop);
    }
    let v = (g * duration).exp() * DVector::from_column_slice(&pop.0);
    settle(v.as_slice())
}

/// Propagates like [`propagate`] and also returns ∫₀ᵗ γ_rad·(excited population) dt,
/// the emitted photon count, from one exponential of an augmented generator.
pub fn propagate_with_counts(
    pop: &LevelPopulations,
    g: &DMatrix<f64>,
    gamma_rad: f64,
    duration: f64,
) -> Result<(LevelPopulations, f64), PhotoError> {
    check_duration(duration)?;
    if duration == 0.0 {
        return Ok((*pop, 0.0));
    }
    let mut aug = DMatrix::zeros(N_LEVELS + 1, N_LEVELS + 1);
    aug.view_mut((0, 0), (N_LEVELS, N_LEVELS)).copy_from(g);
    for e in 0..DIM {
        aug[(N_LEVELS, EXCITED_OFFSET + e)] = gamma_rad;
    }
    let mut x = DVector::zeros(N_LEVELS + 1);
    x.rows_mut(0, N_LEVELS).copy_from_slice(&pop.0);
    let y = (aug * duration).exp() * x;
    Ok((settle(&y.as_slice()[..N_LEVELS])?, y[N_LEVELS]))
}

/// Stationary distribution of `g`, requiring it to be unique.
pub fn stationary(g: &DMatrix<f64>, laser: Option<f64>) -> Result<LevelPopulations, PhotoError> {
    let mut a = g.clone();
    a.row_mut(0).fill(1.0);
    let mut b = DVector::zeros(N_LEVELS);
    b[0] = 1.0;
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(PhotoError::Singular(laser))?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(PhotoError::Singular(laser));
    }
    let residual = (g * &x).amax();
    if residual > 1e-9 * g.amax().max(1.0) {
        return Err(PhotoError::Singular(laser));
    }
    settle(x.as_slice())
}

fn check_grid(grid: &[f64]) -> Result<(), PhotoError> {
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PhotoError::BadGrid);
    }
    Ok(())
}

/// Steady-state photoluminescence rate γ_rad·Σ excited under a resonant laser
/// at each detuning of `grid`.
pub fn excitation_spectrum(
    p: &FineStructureParams,
    s: &StrainVector,
    rp: &RateParams,
    grid: &[f64],
    mw_on: bool,
) -> Result<Vec<(f64, f64)>, PhotoError> {
    check_grid(grid)?;
    rp.validate()?;
    let sys = OpticalSystem::new(p, s)?;
    grid.par_iter()
        .map(|&nu| {
            let g = sys.generator(rp, Some(nu), mw_on, false)?;
            let st = stationary(&g, Some(nu))?;
            Ok((nu, rp.gamma_rad * st.excited_total()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub position: f64,
    pub height: f64,
}

/// Local maxima of a sampled curve at least `min_rel_height` of the global
/// maximum, positions refined by a parabola through the three top samples.
pub fn find_peaks(curve: &[(f64, f64)], min_rel_height: f64) -> Vec<Peak> {
    let top = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for i in 1..curve.len().saturating_sub(1) {
        let (y0, y1, y2) = (curve[i - 1].1, curve[i].1, curve[i + 1].1);
        if !(y1 > y0 && y1 >= y2) || y1 < min_rel_height * top {
            continue;
        }
        let h = curve[i + 1].0 - curve[i].0;
        let denom = y0 - 2.0 * y1 + y2;
        let shift = if denom < 0.0 { 0.5 * h * (y0 - y2) / denom } else { 0.0 };
        out.push(Peak {
            position: curve[i].0 + shift.clamp(-h, h),
            height: y1,
        });
    }
    out
}

/// Height of `curve` at the sample closest to `x`, maximized over ±`halfwidth`.
pub fn height_near(curve: &[(f64, f64)], x: f64, halfwidth: f64) -> f64 {
    curve
        .iter()
        .filter(|c| (c.0 - x).abs() <= halfwidth)
        .map(|c| c.1)
        .fold(0.0, f64::max)
}

/// Durations of the pulsed readout sequence, ns.
pub const INIT_PULSE_NS: f64 = 3000.0;
pub const READOUT_PULSE_NS: f64 = 1000.0;

/// Ground sublevel coupled to gSz by the microwave field in the Rabi sequence.
pub const DRIVEN_SUBLEVEL: GroundSublevel = GroundSublevel::Sx;

/// Green initialization, coherent microwave rotation between gSz and gSx,
/// then a resonant readout pulse on `readout`. Returns photon counts per τ.
pub fn rabi_trace(
    p: &FineStructureParams,
    s: &StrainVector,
    rp: &RateParams,
    omega_mw: f64,
    readout: &TransitionLine,
    durations: &[f64],
) -> Result<Vec<(f64, f64)>, PhotoError> {
    if !(omega_mw > 0.0) || !omega_mw.is_finite() {
        return Err(PhotoError::BadRabiFrequency(omega_mw));
    }
    if !(readout.strength > 0.0) {
        return Err(PhotoError::ZeroStrength);
    }
    for &t in durations {
        check_duration(t)?;
    }
    let sys = OpticalSystem::new(p, s)?;
    let green = sys.generator(rp, None, false, true)?;
    let read = sys.generator(rp, Some(readout.detuning), false, false)?;
    let init = propagate(&LevelPopulations::uniform_ground(), &green, INIT_PULSE_NS)?;
    durations
        .iter()
        .map(|&tau| {
            let rotated = rotate_ground(&init, omega_mw * tau);
            let (_, counts) = propagate_with_counts(&rotated, &read, rp.gamma_rad, READOUT_PULSE_NS)?;
            Ok((tau, counts))
        })
        .collect()
}

/// Population transfer of a resonant pulse with area `theta` between gSz and
/// the driven sublevel.
pub fn rotate_ground(pop: &LevelPopulations, theta: f64) -> LevelPopulations {
    let c2 = (0.5 * theta).cos().powi(2);
    let s2 = 1.0 - c2;
    let (z, d) = (GroundSublevel::Sz.index(), DRIVEN_SUBLEVEL.index());
    let mut out = pop.0;
    out[z] = c2 * pop.0[z] + s2 * pop.0[d];
    out[d] = s2 * pop.0[z] + c2 * pop.0[d];
    LevelPopulations(out)
}

/// Period of a sampled oscillation from a least-squares fit of
/// a + b·cos(ωt) + c·sin(ωt), scanning ω and refining the best candidate.
pub fn fit_oscillation_period(trace: &[(f64, f64)]) -> Option<f64> {
    if trace.len() < 4 {
        return None;
    }
    let span = trace.last()?.0 - trace.first()?.0;
    let dt = trace.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !(dt > 0.0) {
        return None;
    }
    let (w_lo, w_hi) = (std::f64::consts::PI / span, std::f64::consts::PI / dt);
    let n_scan = 2000;
    let step = (w_hi - w_lo) / n_scan as f64;
    let best = (0..=n_scan)
        .map(|k| w_lo + step * k as f64)
        .min_by(|&a, &b| harmonic_residual(trace, a).total_cmp(&harmonic_residual(trace, b)))?;
    let (w, _) = crate::sweep::golden_section(
        |w| Ok::<_, ()>(harmonic_residual(trace, w)),
        (best - step).max(w_lo * 0.5),
        best + step,
        1e-12 * best,
    )
    .ok()?;
    Some(2.0 * std::f64::consts::PI / w)
}

fn harmonic_residual(trace: &[(f64, f64)], w: f64) -> f64 {
    let x = DMatrix::from_fn(trace.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (w * trace[i].0).cos(),
        _ => (w * trace[i].0).sin(),
    });
    let y = DVector::from_iterator(trace.len(), trace.iter().map(|t| t.1));
    let xtx = x.transpose() * &x;
    let Some(coef) = xtx.lu().solve(&(x.transpose() * &y)) else {
        return f64::INFINITY;
    };
    (y - x * coef).norm_squared()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Strongest spin-conserving line out of `ground` in the chosen branch.
pub fn strongest_line(lines: &[TransitionLine], ground: GroundSublevel, upper_branch: bool) -> Option<TransitionLine> {
    lines
        .iter()
        .filter(|l| l.ground_sublevel == ground && l.is_upper_branch() == upper_branch && l.spin_conserving)
        .max_by(|a, b| a.strength.total_cmp(&b.strength))
        .copied()
}
