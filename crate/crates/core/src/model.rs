//! Basis conventions, operator matrices and the 6×6 excited-state Hamiltonian.
//!
//! The product basis is fixed as
//! `(Ex⊗Sx, Ex⊗Sy, Ex⊗Sz, Ey⊗Sx, Ey⊗Sy, Ey⊗Sz)`, where `{Sx, Sy, Sz}` is the
//! zero-field spin basis (`Sz` is the ms = 0 singlet). All energies are in GHz.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{hermitian_eigen, kron, ComplexMatrix, EigenError, EigenSystem, DEFAULT_EIGEN_TOL};

/// Optical zero-phonon line energy, eV.
pub const ZPL_ENERGY_EV: f64 = 1.945;

/// Approximate orbital splitting per unit external stress, GHz per GPa.
pub const GHZ_PER_GPA: f64 = 1.0e3;

pub const DIM: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` must be finite (got {value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("parameter `{name}` = {value} violates: {constraint}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Zero-strain fine-structure parameters. Energies in GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineStructureParams {
    /// Axial spin–orbit coupling.
    pub lambda_z: f64,
    /// Transverse spin–orbit coupling.
    pub lambda_perp: f64,
    /// Axial excited-state spin–spin splitting.
    pub d_es: f64,
    /// A1/A2 splitting parameter (levels sit at ±Δ).
    pub delta_cap: f64,
    /// Ground-state zero-field splitting.
    pub d_gs: f64,
    /// Dimensionless κ with E_es = κ·δ⊥.
    pub e_es_coeff: f64,
    /// Axial strain shift.
    pub delta_z: f64,
    /// Offset of the optical reference from the 1.945 eV line.
    pub zpl_offset: f64,
}

impl Default for FineStructureParams {
    fn default() -> Self {
        Self {
            lambda_z: 5.3,
            lambda_perp: 0.2,
            d_es: 1.42,
            delta_cap: 1.55,
            d_gs: 2.88,
            e_es_coeff: 0.0,
            delta_z: 0.0,
            zpl_offset: 0.0,
        }
    }
}

impl FineStructureParams {
    pub fn with_lambda_perp(self, lambda_perp: f64) -> Self {
        Self { lambda_perp, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("lambda_z", self.lambda_z),
            ("lambda_perp", self.lambda_perp),
            ("d_es", self.d_es),
            ("delta_cap", self.delta_cap),
            ("d_gs", self.d_gs),
            ("e_es_coeff", self.e_es_coeff),
            ("delta_z", self.delta_z),
            ("zpl_offset", self.zpl_offset),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
        }
        if self.d_gs <= 0.0 {
            return Err(ModelError::OutOfRange {
                name: "d_gs",
                value: self.d_gs,
                constraint: "d_gs > 0",
            });
        }
        if self.lambda_perp < 0.0 {
            return Err(ModelError::OutOfRange {
                name: "lambda_perp",
                value: self.lambda_perp,
                constraint: "lambda_perp >= 0",
            });
        }
        Ok(())
    }
}

/// Transverse strain in energy units (GHz).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrainVector {
    pub delta_x: f64,
    pub delta_y: f64,
}

impl StrainVector {
    pub fn new(delta_x: f64, delta_y: f64) -> Self {
        Self { delta_x, delta_y }
    }

    /// Strain of magnitude `perp` along `angle` (radians from the x axis).
    pub fn from_polar(perp: f64, angle: f64) -> Self {
        Self {
            delta_x: perp * angle.cos(),
            delta_y: perp * angle.sin(),
        }
    }

    pub fn perp(&self) -> f64 {
        self.delta_x.hypot(self.delta_y)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [("delta_x", self.delta_x), ("delta_y", self.delta_y)] {
            if !value.is_finite() {
                return Err(ModelError::NonFinite { name, value });
            }
        }
        Ok(())
    }
}

/// Orbital component of a product-basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orbital {
    Ex,
    Ey,
}

/// Zero-field spin component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Sx,
    Sy,
    Sz,
}

impl Spin {
    pub const ALL: [Spin; 3] = [Spin::Sx, Spin::Sy, Spin::Sz];

    pub fn index(self) -> usize {
        match self {
            Spin::Sx => 0,
            Spin::Sy => 1,
            Spin::Sz => 2,
        }
    }
}

/// Basis order used by every 6×6 operator.
pub const BASIS: [(Orbital, Spin); DIM] = [
    (Orbital::Ex, Spin::Sx),
    (Orbital::Ex, Spin::Sy),
    (Orbital::Ex, Spin::Sz),
    (Orbital::Ey, Spin::Sx),
    (Orbital::Ey, Spin::Sy),
    (Orbital::Ey, Spin::Sz),
];

pub fn basis_index(orbital: Orbital, spin: Spin) -> usize {
    let o = match orbital {
        Orbital::Ex => 0,
        Orbital::Ey => 1,
    };
    3 * o + spin.index()
}

/// Irreducible-representation labels of the zero-strain eigenstates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymmetryLabel {
    E1,
    E2,
    EPrimeX,
    EPrimeY,
    A1,
    A2,
}

impl SymmetryLabel {
    pub const ALL: [SymmetryLabel; 6] = [
        SymmetryLabel::E1,
        SymmetryLabel::E2,
        SymmetryLabel::EPrimeX,
        SymmetryLabel::EPrimeY,
        SymmetryLabel::A1,
        SymmetryLabel::A2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SymmetryLabel::E1 => "E1",
            SymmetryLabel::E2 => "E2",
            SymmetryLabel::EPrimeX => "E'x",
            SymmetryLabel::EPrimeY => "E'y",
            SymmetryLabel::A1 => "A1",
            SymmetryLabel::A2 => "A2",
        }
    }

    /// The zero-strain symmetry-adapted state in the product basis.
    pub fn state(self) -> [Complex64; DIM] {
        let mut v = [Complex64::new(0.0, 0.0); DIM];
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let mut set = |o, s, c: Complex64| v[basis_index(o, s)] = c;
        match self {
            SymmetryLabel::A1 => {
                set(Orbital::Ex, Spin::Sx, h);
                set(Orbital::Ey, Spin::Sy, h);
            }
            SymmetryLabel::A2 => {
                set(Orbital::Ey, Spin::Sx, h);
                set(Orbital::Ex, Spin::Sy, -h);
            }
            SymmetryLabel::E1 => {
                set(Orbital::Ex, Spin::Sx, h);
                set(Orbital::Ey, Spin::Sy, -h);
            }
            SymmetryLabel::E2 => {
                set(Orbital::Ex, Spin::Sy, h);
                set(Orbital::Ey, Spin::Sx, h);
            }
            SymmetryLabel::EPrimeX => set(Orbital::Ex, Spin::Sz, Complex64::new(1.0, 0.0)),
            SymmetryLabel::EPrimeY => set(Orbital::Ey, Spin::Sz, Complex64::new(1.0, 0.0)),
        }
        v
    }
}

/// Fixed operator matrices on the 6-dimensional product space.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub lz: ComplexMatrix,
    pub vx: ComplexMatrix,
    pub vy: ComplexMatrix,
    pub sx: ComplexMatrix,
    pub sy: ComplexMatrix,
    pub sz: ComplexMatrix,
    pub sz2: ComplexMatrix,
    pub proj_a1: ComplexMatrix,
    pub proj_a2: ComplexMatrix,
    pub basis: [(Orbital, Spin); DIM],
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Spin-1 operators in the zero-field basis: `(S_k)_ij = -i ε_kij`.
pub fn spin_matrices() -> [ComplexMatrix; 3] {
    let mut sx = ComplexMatrix::zeros(3, 3);
    let mut sy = ComplexMatrix::zeros(3, 3);
    let mut sz = ComplexMatrix::zeros(3, 3);
    sx[(1, 2)] = c(0.0, -1.0);
    sx[(2, 1)] = c(0.0, 1.0);
    sy[(2, 0)] = c(0.0, -1.0);
    sy[(0, 2)] = c(0.0, 1.0);
    sz[(0, 1)] = c(0.0, -1.0);
    sz[(1, 0)] = c(0.0, 1.0);
    [sx, sy, sz]
}

/// Orbital operators on (Ex, Ey): `(Lz, Vx, Vy)`.
pub fn orbital_matrices() -> [ComplexMatrix; 3] {
    let mut lz = ComplexMatrix::zeros(2, 2);
    lz[(0, 1)] = c(0.0, -1.0);
    lz[(1, 0)] = c(0.0, 1.0);
    let vx = ComplexMatrix::from_diagonal(&[1.0, -1.0]);
    let vy = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
    [lz, vx, vy]
}

pub fn build_operators() -> OperatorSet {
    let i2 = ComplexMatrix::identity(2);
    let i3 = ComplexMatrix::identity(3);
    let [lz, vx, vy] = orbital_matrices();
    let [sx, sy, sz] = spin_matrices();
    let sz2 = &sz * &sz;
    let a1 = SymmetryLabel::A1.state();
    let a2 = SymmetryLabel::A2.state();
    OperatorSet {
        lz: kron(&lz, &i3),
        vx: kron(&vx, &i3),
        vy: kron(&vy, &i3),
        sx: kron(&i2, &sx),
        sy: kron(&i2, &sy),
        sz: kron(&i2, &sz),
        sz2: kron(&i2, &sz2),
        proj_a1: ComplexMatrix::outer(&a1, &a1),
        proj_a2: ComplexMatrix::outer(&a2, &a2),
        basis: BASIS,
    }
}

/// Builds the excited-state Hamiltonian (GHz) at the given strain.
///
/// H = (zpl_offset + δz)·I − λz·Lz⊗Sz + Des·(Sz² − 2/3) + Δ·(|A2⟩⟨A2| − |A1⟩⟨A1|)
///     + λ⊥·(Vx⊗Sx − Vy⊗Sy) + δx·Vx + δy·Vy
///     + κ·[δx·(Sx² − Sy²) + δy·(SxSy + SySx)]
///
/// The minus sign on the axial spin–orbit term puts the A1/A2 pair on top of
/// the zero-strain diagram. The transverse spin–orbit and E_es terms are the
/// forms invariant under the threefold rotation of the joint orbital–spin
/// basis; for strain along x the E_es term reduces to κ·δ⊥·(Sx² − Sy²).
pub fn build_excited_hamiltonian(p: &FineStructureParams, s: &StrainVector) -> ComplexMatrix {
    let ops = operators();
    let n = DIM;
    let id = ComplexMatrix::identity(n);
    let lzsz = &ops.lz * &ops.sz;
    let mut h = id.scale(p.zpl_offset + p.delta_z);
    h = &h + &lzsz.scale(-p.lambda_z);
    h = &h + &(&ops.sz2 - &id.scale(2.0 / 3.0)).scale(p.d_es);
    h = &h + &(&ops.proj_a2 - &ops.proj_a1).scale(p.delta_cap);
    if p.lambda_perp != 0.0 {
        let so_perp = &(&ops.vx * &ops.sx) - &(&ops.vy * &ops.sy);
        h = &h + &so_perp.scale(p.lambda_perp);
    }
    h = &h + &ops.vx.scale(s.delta_x);
    h = &h + &ops.vy.scale(s.delta_y);
    if p.e_es_coeff != 0.0 {
        let sx2 = &ops.sx * &ops.sx;
        let sy2 = &ops.sy * &ops.sy;
        let anti = &(&ops.sx * &ops.sy) + &(&ops.sy * &ops.sx);
        let ees = &(&sx2 - &sy2).scale(s.delta_x) + &anti.scale(s.delta_y);
        h = &h + &ees.scale(p.e_es_coeff);
    }
    h
}

/// Diagonalizes the excited-state Hamiltonian.
pub fn excited_eigen(p: &FineStructureParams, s: &StrainVector) -> Result<EigenSystem, ModelError> {
    Ok(hermitian_eigen(&build_excited_hamiltonian(p, s), DEFAULT_EIGEN_TOL)?)
}

/// Shared, lazily built operator set.
pub fn operators() -> &'static OperatorSet {
    use std::sync::OnceLock;
    static OPS: OnceLock<OperatorSet> = OnceLock::new();
    OPS.get_or_init(build_operators)
}

/// Ground-state sublevel energies (GHz) in the order (gSz, gSx, gSy).
///
/// Traceless convention: the doublet sits `d_gs` above the singlet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundLevels {
    pub sz: f64,
    pub sx: f64,
    pub sy: f64,
}

impl GroundLevels {
    pub fn energy(&self, spin: Spin) -> f64 {
        match spin {
            Spin::Sx => self.sx,
            Spin::Sy => self.sy,
            Spin::Sz => self.sz,
        }
    }
}

pub fn ground_levels(p: &FineStructureParams) -> GroundLevels {
    GroundLevels {
        sz: -2.0 * p.d_gs / 3.0,
        sx: p.d_gs / 3.0,
        sy: p.d_gs / 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroStrainLevel {
    pub energy: f64,
    pub label: SymmetryLabel,
}

/// Zero-strain fine structure, ascending in energy.
///
/// Closed-form when λ⊥ = 0; otherwise diagonalizes and labels each level by
/// its largest projection onto the symmetry-adapted subspaces.
pub fn zero_strain_levels(p: &FineStructureParams) -> Result<Vec<ZeroStrainLevel>, ModelError> {
    let shift = p.zpl_offset + p.delta_z;
    let mut levels = if p.lambda_perp == 0.0 {
        let e = -p.lambda_z + p.d_es / 3.0 + shift;
        let ep = -2.0 * p.d_es / 3.0 + shift;
        let a = p.lambda_z + p.d_es / 3.0 + shift;
        vec![
            ZeroStrainLevel { energy: e, label: SymmetryLabel::E1 },
            ZeroStrainLevel { energy: e, label: SymmetryLabel::E2 },
            ZeroStrainLevel { energy: ep, label: SymmetryLabel::EPrimeX },
            ZeroStrainLevel { energy: ep, label: SymmetryLabel::EPrimeY },
            ZeroStrainLevel { energy: a - p.delta_cap, label: SymmetryLabel::A1 },
            ZeroStrainLevel { energy: a + p.delta_cap, label: SymmetryLabel::A2 },
        ]
    } else {
        numeric_zero_strain(p)?
    };
    levels.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(levels)
}

fn numeric_zero_strain(p: &FineStructureParams) -> Result<Vec<ZeroStrainLevel>, ModelError> {
    let es = excited_eigen(p, &StrainVector::default())?;
    let groups: [&[SymmetryLabel]; 4] = [
        &[SymmetryLabel::E1, SymmetryLabel::E2],
        &[SymmetryLabel::EPrimeX, SymmetryLabel::EPrimeY],
        &[SymmetryLabel::A1],
        &[SymmetryLabel::A2],
    ];
    let mut used = [0usize; 4];
    let mut out = Vec::with_capacity(DIM);
    for k in 0..DIM {
        let v = es.vector(k);
        let weight = |labels: &[SymmetryLabel]| -> f64 {
            labels.iter().map(|l| overlap_sqr(&l.state(), &v)).sum()
        };
        let best = (0..4)
            .filter(|&g| used[g] < groups[g].len())
            .max_by(|&a, &b| weight(groups[a]).total_cmp(&weight(groups[b])))
            .expect("six levels fill six labels");
        out.push(ZeroStrainLevel {
            energy: es.values[k],
            label: groups[best][used[best]],
        });
        used[best] += 1;
    }
    Ok(out)
}

/// `|<a|b>|²`.
pub fn overlap_sqr(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference(lambda_perp: f64) -> FineStructureParams {
        FineStructureParams::default().with_lambda_perp(lambda_perp)
    }

    #[test]
    fn defaults_are_reference_values() {
        let p = FineStructureParams::default();
        assert_eq!((p.lambda_z, p.d_es, p.delta_cap, p.lambda_perp, p.d_gs), (5.3, 1.42, 1.55, 0.2, 2.88));
        p.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = FineStructureParams { d_gs: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FineStructureParams { lambda_perp: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FineStructureParams { lambda_z: f64::NAN, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ModelError::NonFinite { name: "lambda_z", .. })));
    }

    #[test]
    fn spin_operator_square_is_diag_110() {
        // From Sz|±1> = ±|±1> and Sx = (|-1> - |+1>)/√2, Sy = i(|-1> + |+1>)/√2.
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        // columns in the (m=+1, m=0, m=-1) basis
        let u = ComplexMatrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 0) => c(-inv, 0.0),
            (2, 0) => c(inv, 0.0),
            (0, 1) => c(0.0, inv),
            (2, 1) => c(0.0, inv),
            (1, 2) => c(1.0, 0.0),
            _ => c(0.0, 0.0),
        });
        let sz_m = ComplexMatrix::from_diagonal(&[1.0, 0.0, -1.0]);
        let sz_zf = &(&u.adjoint() * &sz_m) * &u;
        let [_, _, sz] = spin_matrices();
        assert!(sz_zf.max_abs_diff(&sz) < 1e-15);
        let ops = build_operators();
        let sz2_spin = &sz * &sz;
        assert!(sz2_spin.max_abs_diff(&ComplexMatrix::from_diagonal(&[1.0, 1.0, 0.0])) < 1e-15);
        let expected = ComplexMatrix::from_diagonal(&[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(ops.sz2.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn operator_invariants() {
        let ops = build_operators();
        for m in [&ops.lz, &ops.vx, &ops.vy, &ops.sx, &ops.sy, &ops.sz, &ops.sz2, &ops.proj_a1, &ops.proj_a2] {
            assert!(m.hermitian_deviation() < 1e-15);
        }
        let lz2 = &ops.lz * &ops.lz;
        assert!(lz2.max_abs_diff(&ComplexMatrix::identity(6)) < 1e-15);
        let a1 = SymmetryLabel::A1.state();
        let a2 = SymmetryLabel::A2.state();
        assert_abs_diff_eq!(overlap_sqr(&a1, &a1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(overlap_sqr(&a2, &a2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(overlap_sqr(&a1, &a2), 0.0, epsilon = 1e-15);
        let [lz, _, _] = orbital_matrices();
        let es = hermitian_eigen(&lz, DEFAULT_EIGEN_TOL).unwrap();
        assert_abs_diff_eq!(es.values[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(es.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetry_states_are_orthonormal() {
        for a in SymmetryLabel::ALL {
            for b in SymmetryLabel::ALL {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(overlap_sqr(&a.state(), &b.state()), expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_strain_eigenvalues_match_closed_form() {
        let p = reference(0.0);
        let es = excited_eigen(&p, &StrainVector::default()).unwrap();
        let expected = [-4.826666666666667, -4.826666666666667, -0.9466666666666667, -0.9466666666666667, 4.223333333333334, 7.323333333333334];
        for (got, want) in es.values.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-9);
        }
        // A1 below A2
        assert_abs_diff_eq!(overlap_sqr(&es.vector(4), &SymmetryLabel::A1.state()), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(overlap_sqr(&es.vector(5), &SymmetryLabel::A2.state()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn traceless_without_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = FineStructureParams {
                lambda_z: rng.random_range(-10.0..10.0),
                lambda_perp: rng.random_range(0.0..1.0),
                d_es: rng.random_range(-3.0..3.0),
                delta_cap: rng.random_range(-3.0..3.0),
                e_es_coeff: rng.random_range(-0.1..0.1),
                ..Default::default()
            };
            let s = StrainVector::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
            let h = build_excited_hamiltonian(&p, &s);
            assert!(h.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_for_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let p = FineStructureParams {
                lambda_z: rng.random_range(-10.0..10.0),
                lambda_perp: rng.random_range(0.0..2.0),
                d_es: rng.random_range(-3.0..3.0),
                delta_cap: rng.random_range(-3.0..3.0),
                e_es_coeff: rng.random_range(-0.1..0.1),
                delta_z: rng.random_range(-5.0..5.0),
                zpl_offset: rng.random_range(-5.0..5.0),
                ..Default::default()
            };
            let s = StrainVector::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            assert!(build_excited_hamiltonian(&p, &s).hermitian_deviation() < 1e-15);
        }
    }

    fn spectrum(p: &FineStructureParams, s: StrainVector) -> Vec<f64> {
        excited_eigen(p, &s).unwrap().values
    }

    #[test]
    fn strain_direction_invariance_without_transverse_spin_orbit() {
        let p = FineStructureParams { lambda_perp: 0.0, e_es_coeff: 0.02, ..Default::default() };
        let a = spectrum(&p, StrainVector::new(10.0, 0.0));
        let b = spectrum(&p, StrainVector::new(6.0, 8.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn threefold_rotation_of_strain_keeps_spectrum() {
        let p = FineStructureParams { e_es_coeff: 0.02, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let perp = rng.random_range(0.0..30.0);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let third = std::f64::consts::TAU / 3.0;
            let a = spectrum(&p, StrainVector::from_polar(perp, phi));
            let b = spectrum(&p, StrainVector::from_polar(perp, phi + third));
            let m = spectrum(&p, StrainVector::from_polar(perp, -phi));
            for k in 0..DIM {
                assert!((a[k] - b[k]).abs() < 1e-9);
                assert!((a[k] - m[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ms0_block_decouples_without_transverse_terms() {
        let p = reference(0.0);
        let s = StrainVector::new(4.0, -3.0);
        let h = build_excited_hamiltonian(&p, &s);
        let ms0 = [2usize, 5];
        for &i in &ms0 {
            for j in [0usize, 1, 3, 4] {
                assert_eq!(h[(i, j)].norm(), 0.0);
            }
        }
        let block = ComplexMatrix::from_fn(2, 2, |i, j| h[(ms0[i], ms0[j])]);
        let es = hermitian_eigen(&block, DEFAULT_EIGEN_TOL).unwrap();
        assert_abs_diff_eq!(es.values[0], -2.0 * p.d_es / 3.0 - 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(es.values[1], -2.0 * p.d_es / 3.0 + 5.0, epsilon = 1e-12);
    }

    #[test]
    fn ms_sector_trace_identity() {
        let p = reference(0.0);
        for perp in [0.0, 0.5, 3.0, 7.3, 15.0, 50.0] {
            let h = build_excited_hamiltonian(&p, &StrainVector::new(perp, 0.0));
            let ms1: f64 = [0, 1, 3, 4].iter().map(|&i| h[(i, i)].re).sum::<f64>() / 4.0;
            let ms0: f64 = [2, 5].iter().map(|&i| h[(i, i)].re).sum::<f64>() / 2.0;
            assert_abs_diff_eq!(ms1 - ms0, p.d_es, epsilon = 1e-12);
        }
    }

    #[test]
    fn ground_levels_convention() {
        let g = ground_levels(&FineStructureParams::default());
        assert_abs_diff_eq!(g.sx - g.sz, 2.88, epsilon = 1e-12);
        assert_abs_diff_eq!(g.sz + g.sx + g.sy, 0.0, epsilon = 1e-12);
        let flat = ground_levels(&FineStructureParams { d_gs: 0.0, ..Default::default() });
        assert_eq!((flat.sz, flat.sx, flat.sy), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_strain_analytic_levels() {
        let levels = zero_strain_levels(&reference(0.0)).unwrap();
        let get = |l| levels.iter().find(|z| z.label == l).unwrap().energy;
        assert_abs_diff_eq!(get(SymmetryLabel::A2) - get(SymmetryLabel::A1), 3.10, epsilon = 1e-12);
        assert_abs_diff_eq!(get(SymmetryLabel::EPrimeX) - get(SymmetryLabel::E1), 3.88, epsilon = 1e-12);
        let no_delta = zero_strain_levels(&FineStructureParams { delta_cap: 0.0, lambda_perp: 0.0, ..Default::default() }).unwrap();
        let a: Vec<f64> = no_delta
            .iter()
            .filter(|z| matches!(z.label, SymmetryLabel::A1 | SymmetryLabel::A2))
            .map(|z| z.energy)
            .collect();
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn zero_strain_levels_agree_with_diagonalization() {
        for lp in [0.0, 0.2, 0.5] {
            let p = FineStructureParams { zpl_offset: 0.7, delta_z: -0.2, ..reference(lp) };
            let levels = zero_strain_levels(&p).unwrap();
            let es = excited_eigen(&p, &StrainVector::default()).unwrap();
            for (l, v) in levels.iter().zip(&es.values) {
                assert_abs_diff_eq!(l.energy, *v, epsilon = 1e-9);
            }
            let labels: Vec<_> = levels.iter().map(|l| l.label).collect();
            assert_eq!(labels[4], SymmetryLabel::A1);
            assert_eq!(labels[5], SymmetryLabel::A2);
        }
    }

    #[test]
    fn ees_term_reduces_along_x() {
        let p = FineStructureParams { lambda_perp: 0.0, e_es_coeff: 0.05, ..Default::default() };
        let perp = 12.0;
        let h = build_excited_hamiltonian(&p, &StrainVector::new(perp, 0.0));
        let h0 = build_excited_hamiltonian(&FineStructureParams { e_es_coeff: 0.0, ..p }, &StrainVector::new(perp, 0.0));
        let ops = build_operators();
        let diff = &(&ops.sx * &ops.sx) - &(&ops.sy * &ops.sy);
        let expected = &h0 + &diff.scale(p.e_es_coeff * perp);
        assert!(h.max_abs_diff(&expected) < 1e-14);
    }
}
