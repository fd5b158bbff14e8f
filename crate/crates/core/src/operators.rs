//! Truncated Fock-space algebra for a qubit coupled to three bosonic modes.
//!
//! The slot order is fixed as (qubit, a, m1, m2). Basis states are enumerated
//! lexicographically with the qubit slowest and `m2` fastest; within the qubit
//! slot `g` precedes `e`.
//!
//! A [`HilbertSpace`] may optionally be restricted to a window of total
//! excitation number `σ⁺σ⁻ + a†a + m₁†m₁ + m₂†m₂`. Operators on a restricted
//! space are the compression `P A P` of the corresponding full truncated
//! operator, so compound operators must be built from whole operator words
//! (see [`product_operator`]) rather than by multiplying compressed factors.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Qubit basis label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qubit {
    G,
    E,
}

impl Qubit {
    pub fn index(self) -> usize {
        match self {
            Qubit::G => 0,
            Qubit::E => 1,
        }
    }

    pub fn flipped(self) -> Qubit {
        match self {
            Qubit::G => Qubit::E,
            Qubit::E => Qubit::G,
        }
    }
}

impl fmt::Display for Qubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Qubit::G => "g",
            Qubit::E => "e",
        })
    }
}

impl FromStr for Qubit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" => Ok(Qubit::G),
            "e" => Ok(Qubit::E),
            other => Err(Error::InvalidParameter(format!(
                "qubit outcome must be 'g' or 'e', got '{other}'"
            ))),
        }
    }
}

/// Bosonic mode slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Resonator,
    Magnon1,
    Magnon2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Resonator, Mode::Magnon1, Mode::Magnon2];

    pub fn index(self) -> usize {
        match self {
            Mode::Resonator => 0,
            Mode::Magnon1 => 1,
            Mode::Magnon2 => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Mode> {
        Mode::ALL.get(i).copied().ok_or(Error::InvalidMode(i))
    }
}

/// A product basis state `|q, n_a, n_1, n_2⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub qubit: Qubit,
    pub occupations: [usize; 3],
}

impl BasisState {
    pub fn new(qubit: Qubit, n_a: usize, n_1: usize, n_2: usize) -> Self {
        BasisState {
            qubit,
            occupations: [n_a, n_1, n_2],
        }
    }

    /// Total excitation number including the qubit.
    pub fn excitation(&self) -> usize {
        self.qubit.index() + self.occupations.iter().sum::<usize>()
    }
}

/// Window on the total excitation number kept by a restricted space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restriction {
    pub min_excitation: usize,
    pub max_excitation: usize,
}

impl Restriction {
    pub fn contains(&self, k: usize) -> bool {
        k >= self.min_excitation && k <= self.max_excitation
    }
}

/// Truncated qubit ⊗ a ⊗ m1 ⊗ m2 space, optionally restricted to an
/// excitation-number window.
pub struct HilbertSpace {
    cutoffs: [usize; 3],
    restriction: Option<Restriction>,
    basis: Vec<BasisState>,
    lookup: Vec<Option<usize>>,
}

impl std::fmt::Debug for HilbertSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HilbertSpace")
            .field("cutoffs", &self.cutoffs)
            .field("restriction", &self.restriction)
            .field("dim", &self.basis.len())
            .finish()
    }
}

impl PartialEq for HilbertSpace {
    fn eq(&self, other: &Self) -> bool {
        self.cutoffs == other.cutoffs && self.restriction == other.restriction
    }
}

impl HilbertSpace {
    /// Full truncated space with Fock levels `0..=cutoff` per mode.
    pub fn new(cutoffs: [usize; 3]) -> Arc<Self> {
        Self::build(cutoffs, None)
    }

    /// Space restricted to states whose total excitation lies in `window`.
    pub fn restricted(cutoffs: [usize; 3], window: Restriction) -> Arc<Self> {
        Self::build(cutoffs, Some(window))
    }

    fn build(cutoffs: [usize; 3], restriction: Option<Restriction>) -> Arc<Self> {
        let full = 2 * cutoffs.iter().map(|c| c + 1).product::<usize>();
        let mut basis = Vec::new();
        let mut lookup = vec![None; full];
        for q in [Qubit::G, Qubit::E] {
            for na in 0..=cutoffs[0] {
                for n1 in 0..=cutoffs[1] {
                    for n2 in 0..=cutoffs[2] {
                        let s = BasisState::new(q, na, n1, n2);
                        if restriction.is_none_or(|r| r.contains(s.excitation())) {
                            lookup[full_index(&cutoffs, &s)] = Some(basis.len());
                            basis.push(s);
                        }
                    }
                }
            }
        }
        Arc::new(HilbertSpace {
            cutoffs,
            restriction,
            basis,
            lookup,
        })
    }

    pub fn qubit_dim(&self) -> usize {
        2
    }

    pub fn cutoffs(&self) -> [usize; 3] {
        self.cutoffs
    }

    pub fn cutoff(&self, mode: Mode) -> usize {
        self.cutoffs[mode.index()]
    }

    pub fn restriction(&self) -> Option<Restriction> {
        self.restriction
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Dimension of the unrestricted truncated space.
    pub fn full_dim(&self) -> usize {
        self.lookup.len()
    }

    pub fn basis(&self) -> &[BasisState] {
        &self.basis
    }

    pub fn state(&self, index: usize) -> BasisState {
        self.basis[index]
    }

    /// Position of a basis state, `None` if truncated away.
    pub fn index_of(&self, s: &BasisState) -> Option<usize> {
        if s.occupations
            .iter()
            .zip(self.cutoffs.iter())
            .any(|(n, c)| n > c)
        {
            return None;
        }
        self.lookup[full_index(&self.cutoffs, s)]
    }

    /// Like [`index_of`](Self::index_of) but with a diagnostic error.
    pub fn checked_index(&self, s: &BasisState) -> Result<usize> {
        for (m, (&n, &c)) in s.occupations.iter().zip(self.cutoffs.iter()).enumerate() {
            if n > c {
                return Err(Error::OccupationAboveCutoff {
                    mode: m,
                    occupation: n,
                    cutoff: c,
                });
            }
        }
        self.index_of(s).ok_or(Error::OutsideSubspace)
    }

    /// Indices of basis states whose occupation of some mode sits at its cutoff.
    /// Indices of basis states sitting on a truncated Fock level. A level is
    /// not truncated when the excitation window already forbids going past it.
    pub fn top_level_indices(&self) -> Vec<usize> {
        let cap = self.restriction.map_or(usize::MAX, |r| r.max_excitation);
        self.basis
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.occupations
                    .iter()
                    .zip(self.cutoffs.iter())
                    .any(|(n, c)| n == c && *c > 0 && cap > *c)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

fn full_index(cutoffs: &[usize; 3], s: &BasisState) -> usize {
    let [ca, c1, c2] = cutoffs.map(|c| c + 1);
    ((s.qubit.index() * ca + s.occupations[0]) * c1 + s.occupations[1]) * c2 + s.occupations[2]
}

/// Builds a full (unrestricted) space from signed cutoffs.
pub fn make_space(cutoffs: [i64; 3]) -> Result<Arc<HilbertSpace>> {
    let mut c = [0usize; 3];
    for (dst, &src) in c.iter_mut().zip(cutoffs.iter()) {
        if src < 0 {
            return Err(Error::NegativeCutoff(src));
        }
        *dst = src as usize;
    }
    Ok(HilbertSpace::new(c))
}

fn check_same(a: &Arc<HilbertSpace>, b: &Arc<HilbertSpace>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

/// Elementary ladder operator used in operator words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Lower(Mode),
    Raise(Mode),
    SigmaMinus,
    SigmaPlus,
}

impl Ladder {
    /// Acts on an unrestricted basis state, respecting the Fock cutoffs.
    fn act(self, s: BasisState, cutoffs: &[usize; 3]) -> Option<(BasisState, f64)> {
        let mut out = s;
        match self {
            Ladder::Lower(m) => {
                let n = s.occupations[m.index()];
                if n == 0 {
                    return None;
                }
                out.occupations[m.index()] = n - 1;
                Some((out, (n as f64).sqrt()))
            }
            Ladder::Raise(m) => {
                let n = s.occupations[m.index()];
                if n + 1 > cutoffs[m.index()] {
                    return None;
                }
                out.occupations[m.index()] = n + 1;
                Some((out, ((n + 1) as f64).sqrt()))
            }
            Ladder::SigmaMinus => (s.qubit == Qubit::E).then(|| {
                out.qubit = Qubit::G;
                (out, 1.0)
            }),
            Ladder::SigmaPlus => (s.qubit == Qubit::G).then(|| {
                out.qubit = Qubit::E;
                (out, 1.0)
            }),
        }
    }
}

/// The operator `word[0] · word[1] · …` compressed onto `space`.
///
/// Intermediate states obey the Fock cutoffs but not the excitation window,
/// so the result equals the restriction of the full truncated product.
pub fn product_operator(space: &Arc<HilbertSpace>, word: &[Ladder]) -> Operator {
    let cut = space.cutoffs();
    Operator::from_action(space, |s| {
        let mut cur = (s, 1.0);
        for l in word.iter().rev() {
            match l.act(cur.0, &cut) {
                Some((next, amp)) => cur = (next, cur.1 * amp),
                None => return vec![],
            }
        }
        vec![(cur.0, C64::new(cur.1, 0.0))]
    })
}

/// Dense operator on a [`HilbertSpace`].
#[derive(Clone, Debug)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    matrix: DMatrix<C64>,
}

impl PartialEq for Operator {
    fn eq(&self, other: &Self) -> bool {
        *self.space == *other.space && self.matrix == other.matrix
    }
}

impl Operator {
    pub fn zeros(space: &Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Operator {
            space: space.clone(),
            matrix: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(space: &Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Operator {
            space: space.clone(),
            matrix: DMatrix::identity(d, d),
        }
    }

    pub fn from_matrix(space: &Arc<HilbertSpace>, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Operator {
            space: space.clone(),
            matrix,
        })
    }

    /// Builds `A` from its action `A|s⟩ = Σ c |s'⟩` on basis kets. Images
    /// outside the space are dropped.
    pub fn from_action<F>(space: &Arc<HilbertSpace>, mut action: F) -> Self
    where
        F: FnMut(BasisState) -> Vec<(BasisState, C64)>,
    {
        let mut op = Operator::zeros(space);
        for (j, s) in space.basis().iter().enumerate() {
            for (image, c) in action(*s) {
                if let Some(i) = space.index_of(&image) {
                    op.matrix[(i, j)] += c;
                }
            }
        }
        op
    }

    /// Diagonal operator with entries `f(basis state)`.
    pub fn diagonal<F>(space: &Arc<HilbertSpace>, f: F) -> Self
    where
        F: Fn(&BasisState) -> f64,
    {
        let mut op = Operator::zeros(space);
        for (i, s) in space.basis().iter().enumerate() {
            op.matrix[(i, i)] = C64::new(f(s), 0.0);
        }
        op
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix * c,
        }
    }

    pub fn scale_real(&self, c: f64) -> Operator {
        self.scale(C64::new(c, 0.0))
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        check_same(&self.space, &other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Operator> {
        check_same(&self.space, &other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix - &other.matrix,
        })
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        check_same(&self.space, &other.space)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `max |A - A†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                err = err.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        check_same(&self.space, &psi.space)?;
        Ok(StateVector {
            space: self.space.clone(),
            amplitudes: &self.matrix * &psi.amplitudes,
        })
    }

    /// `exp(-i H t)` of a Hermitian operator via its eigendecomposition.
    pub fn unitary_exp(&self, t: f64) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: hermitian_exp(&self.matrix, t),
        }
    }
}

/// `exp(-i H t)` for Hermitian dense `H`.
pub(crate) fn hermitian_exp(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = nalgebra::SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)),
    );
    let mut vd = v.clone();
    for (j, mut col) in vd.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    vd * v.adjoint()
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator spaces differ")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.try_sub(rhs).expect("operator spaces differ")
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.try_mul(rhs).expect("operator spaces differ")
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale_real(-1.0)
    }
}

/// `AB - BA`.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    check_same(&a.space, &b.space)?;
    let ab = &a.matrix * &b.matrix;
    let ba = &b.matrix * &a.matrix;
    Ok(Operator {
        space: a.space.clone(),
        matrix: ab - ba,
    })
}

pub fn dagger(a: &Operator) -> Operator {
    a.dagger()
}

pub fn annihilation(space: &Arc<HilbertSpace>, mode_index: usize) -> Result<Operator> {
    let m = Mode::from_index(mode_index)?;
    Ok(product_operator(space, &[Ladder::Lower(m)]))
}

pub fn creation(space: &Arc<HilbertSpace>, mode_index: usize) -> Result<Operator> {
    let m = Mode::from_index(mode_index)?;
    Ok(product_operator(space, &[Ladder::Raise(m)]))
}

pub fn number(space: &Arc<HilbertSpace>, mode: Mode) -> Operator {
    Operator::diagonal(space, |s| s.occupations[mode.index()] as f64)
}

/// `σ⁻ = |g⟩⟨e|` on the qubit slot.
pub fn qubit_lowering(space: &Arc<HilbertSpace>) -> Operator {
    product_operator(space, &[Ladder::SigmaMinus])
}

pub fn qubit_raising(space: &Arc<HilbertSpace>) -> Operator {
    product_operator(space, &[Ladder::SigmaPlus])
}

/// `σ⁺σ⁻ = |e⟩⟨e|`.
pub fn qubit_excited_projector(space: &Arc<HilbertSpace>) -> Operator {
    Operator::diagonal(space, |s| s.qubit.index() as f64)
}

/// `σ_z = |e⟩⟨e| - |g⟩⟨g|`.
pub fn sigma_z(space: &Arc<HilbertSpace>) -> Operator {
    Operator::diagonal(space, |s| if s.qubit == Qubit::E { 1.0 } else { -1.0 })
}

/// Total excitation `σ⁺σ⁻ + a†a + m₁†m₁ + m₂†m₂`.
pub fn excitation_number(space: &Arc<HilbertSpace>) -> Operator {
    Operator::diagonal(space, |s| s.excitation() as f64)
}

/// Pure state on a [`HilbertSpace`].
#[derive(Clone, Debug)]
pub struct StateVector {
    space: Arc<HilbertSpace>,
    amplitudes: DVector<C64>,
}

impl StateVector {
    /// Wraps raw amplitudes; the caller is responsible for normalization.
    pub fn from_amplitudes(space: &Arc<HilbertSpace>, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: amplitudes.len(),
            });
        }
        Ok(StateVector {
            space: space.clone(),
            amplitudes,
        })
    }

    /// Superposition `Σ c_k |s_k⟩`, normalized.
    pub fn superposition(
        space: &Arc<HilbertSpace>,
        terms: &[(C64, BasisState)],
    ) -> Result<Self> {
        let mut amps = DVector::zeros(space.dim());
        for (c, s) in terms {
            amps[space.checked_index(s)?] += *c;
        }
        let psi = StateVector {
            space: space.clone(),
            amplitudes: amps,
        };
        Ok(psi.normalized())
    }

    pub fn zeros(space: &Arc<HilbertSpace>) -> Self {
        StateVector {
            space: space.clone(),
            amplitudes: DVector::zeros(space.dim()),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amplitudes
    }

    pub fn amplitude(&self, s: &BasisState) -> C64 {
        self.space
            .index_of(s)
            .map_or(ZERO, |i| self.amplitudes[i])
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> StateVector {
        let n = self.norm();
        StateVector {
            space: self.space.clone(),
            amplitudes: if n > 0.0 {
                &self.amplitudes / C64::new(n, 0.0)
            } else {
                self.amplitudes.clone()
            },
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_same(&self.space, &other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            space: self.space.clone(),
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    /// Re-expresses the state on another space sharing the same basis labels.
    /// Components absent from `target` must vanish.
    pub fn embed(&self, target: &Arc<HilbertSpace>) -> Result<StateVector> {
        let mut out = StateVector::zeros(target);
        for (i, s) in self.space.basis().iter().enumerate() {
            let c = self.amplitudes[i];
            match target.index_of(s) {
                Some(j) => out.amplitudes[j] = c,
                None if c.norm_sqr() > 1e-24 => return Err(Error::OutsideSubspace),
                None => {}
            }
        }
        Ok(out)
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut DVector<C64> {
        &mut self.amplitudes
    }
}

/// Unit basis vector `|q, n_a, n_1, n_2⟩`.
pub fn basis_state(
    space: &Arc<HilbertSpace>,
    qubit: Qubit,
    n_a: usize,
    n_1: usize,
    n_2: usize,
) -> Result<StateVector> {
    let idx = space.checked_index(&BasisState::new(qubit, n_a, n_1, n_2))?;
    let mut psi = StateVector::zeros(space);
    psi.amplitudes[idx] = ONE;
    Ok(psi)
}

/// Mixed state on a [`HilbertSpace`].
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: Arc<HilbertSpace>,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(space: &Arc<HilbertSpace>, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(DensityMatrix {
            space: space.clone(),
            matrix,
        })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.matrix.nrows();
        let mut err: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                err = err.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        check_same(&self.space, &op.space)?;
        let d = self.matrix.nrows();
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += self.matrix[(i, j)] * op.matrix[(j, i)];
            }
        }
        Ok(acc)
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &Operator) -> Result<DensityMatrix> {
        check_same(&self.space, &u.space)?;
        Ok(DensityMatrix {
            space: self.space.clone(),
            matrix: &u.matrix * &self.matrix * u.matrix.adjoint(),
        })
    }

    pub fn embed(&self, target: &Arc<HilbertSpace>) -> Result<DensityMatrix> {
        let map: Vec<Option<usize>> = self
            .space
            .basis()
            .iter()
            .map(|s| target.index_of(s))
            .collect();
        let mut out = DMatrix::zeros(target.dim(), target.dim());
        for (i, mi) in map.iter().enumerate() {
            for (j, mj) in map.iter().enumerate() {
                let c = self.matrix[(i, j)];
                match (mi, mj) {
                    (Some(a), Some(b)) => out[(*a, *b)] = c,
                    _ if c.norm() > 1e-12 => return Err(Error::OutsideSubspace),
                    _ => {}
                }
            }
        }
        DensityMatrix::from_matrix(target, out)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    nalgebra::SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(psi: &StateVector, op: &Operator) -> Result<C64> {
    check_same(&psi.space, &op.space)?;
    Ok(psi.amplitudes.dotc(&(&op.matrix * &psi.amplitudes)))
}

/// Anything exposing per-basis-state probabilities.
pub trait BasisProbabilities {
    fn space(&self) -> &Arc<HilbertSpace>;
    fn probability(&self, index: usize) -> f64;
}

impl BasisProbabilities for StateVector {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn probability(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }
}

impl BasisProbabilities for DensityMatrix {
    fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }
    fn probability(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }
}

/// Probability that `mode` holds one of `levels` while the other two modes
/// are empty, with the qubit traced out. Levels beyond the cutoff carry no
/// weight.
pub fn fock_population<S: BasisProbabilities>(state: &S, mode: Mode, levels: &[usize]) -> f64 {
    let space = state.space();
    let m = mode.index();
    let mut p = 0.0;
    for &n in levels {
        for q in [Qubit::G, Qubit::E] {
            let mut occ = [0; 3];
            occ[m] = n;
            if let Some(i) = space.index_of(&BasisState { qubit: q, occupations: occ }) {
                p += state.probability(i);
            }
        }
    }
    p
}

/// Reduced state of the two magnon modes, indexed `n1 * (c2 + 1) + n2`.
#[derive(Clone, Debug)]
pub struct MagnonPairState {
    cutoffs: [usize; 2],
    matrix: DMatrix<C64>,
}

impl MagnonPairState {
    pub fn from_matrix(cutoffs: [usize; 2], matrix: DMatrix<C64>) -> Result<Self> {
        let d = (cutoffs[0] + 1) * (cutoffs[1] + 1);
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows(),
            });
        }
        Ok(MagnonPairState { cutoffs, matrix })
    }

    pub fn cutoffs(&self) -> [usize; 2] {
        self.cutoffs
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    /// `⟨Ψ|ρ|Ψ⟩`.
    pub fn fidelity(&self, target: &MagnonPairKet) -> Result<f64> {
        if target.cutoffs != self.cutoffs {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                got: target.amplitudes.len(),
            });
        }
        let v = &target.amplitudes;
        Ok(v.dotc(&(&self.matrix * v)).re)
    }
}

/// Pure two-magnon state.
#[derive(Clone, Debug)]
pub struct MagnonPairKet {
    cutoffs: [usize; 2],
    amplitudes: DVector<C64>,
}

impl MagnonPairKet {
    /// Normalized `Σ c |n1 n2⟩`.
    pub fn from_terms(cutoffs: [usize; 2], terms: &[(C64, usize, usize)]) -> Result<Self> {
        let mut amps = DVector::zeros((cutoffs[0] + 1) * (cutoffs[1] + 1));
        for &(c, n1, n2) in terms {
            for (m, (n, cut)) in [(n1, cutoffs[0]), (n2, cutoffs[1])].into_iter().enumerate() {
                if n > cut {
                    return Err(Error::OccupationAboveCutoff {
                        mode: m + 1,
                        occupation: n,
                        cutoff: cut,
                    });
                }
            }
            amps[n1 * (cutoffs[1] + 1) + n2] += c;
        }
        let n = amps.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("empty magnon superposition".into()));
        }
        amps /= C64::new(n, 0.0);
        Ok(MagnonPairKet { cutoffs, amplitudes: amps })
    }

    /// `(|N0⟩ + sign e^{iθ}|0N⟩)/√2`; `N = 0` gives the vacuum.
    pub fn noon(cutoffs: [usize; 2], n: usize, theta: f64, sign: f64) -> Result<Self> {
        if n == 0 {
            return Self::from_terms(cutoffs, &[(ONE, 0, 0)]);
        }
        Self::from_terms(
            cutoffs,
            &[(ONE, n, 0), (C64::from_polar(sign, theta), 0, n)],
        )
    }

    pub fn cutoffs(&self) -> [usize; 2] {
        self.cutoffs
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn to_density(&self) -> MagnonPairState {
        MagnonPairState {
            cutoffs: self.cutoffs,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Traces out qubit and resonator.
pub fn reduce_to_magnons(rho: &DensityMatrix) -> MagnonPairState {
    let space = rho.space();
    let [_, c1, c2] = space.cutoffs();
    let pair = |s: &BasisState| s.occupations[1] * (c2 + 1) + s.occupations[2];
    let d = (c1 + 1) * (c2 + 1);
    let mut out = DMatrix::zeros(d, d);
    let basis = space.basis();
    for (i, si) in basis.iter().enumerate() {
        for (j, sj) in basis.iter().enumerate() {
            if si.qubit == sj.qubit && si.occupations[0] == sj.occupations[0] {
                out[(pair(si), pair(sj))] += rho.matrix[(i, j)];
            }
        }
    }
    MagnonPairState {
        cutoffs: [c1, c2],
        matrix: out,
    }
}

/// Projects the qubit onto `outcome`, renormalizes, and traces out qubit and
/// resonator. Returns the two-magnon state and the outcome probability.
pub fn project_qubit(rho: &DensityMatrix, outcome: Qubit) -> Result<(MagnonPairState, f64)> {
    let space = rho.space();
    let keep: Vec<usize> = (0..space.dim())
        .filter(|&i| space.state(i).qubit == outcome)
        .collect();
    let probability: f64 = keep.iter().map(|&i| rho.matrix[(i, i)].re).sum();
    if probability < 1e-12 {
        return Err(Error::ImpossibleOutcome {
            outcome,
            probability,
        });
    }
    let mut projected = DMatrix::zeros(space.dim(), space.dim());
    for &i in &keep {
        for &j in &keep {
            projected[(i, j)] = rho.matrix[(i, j)] / probability;
        }
    }
    let projected = DensityMatrix {
        space: space.clone(),
        matrix: projected,
    };
    Ok((reduce_to_magnons(&projected), probability))
}

/// Compressed sparse row matrix used by the integrators.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    pub(crate) dim: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) col_idx: Vec<usize>,
    pub(crate) values: Vec<C64>,
}

impl CsrMatrix {
    pub fn from_dense(m: &DMatrix<C64>, threshold: f64) -> Self {
        let d = m.nrows();
        let mut row_ptr = Vec::with_capacity(d + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..d {
            for j in 0..d {
                let v = m[(i, j)];
                if v.norm() > threshold {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            dim: d,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Pattern is the union of the nonzero patterns of `ms`; returns the
    /// pattern and, per input matrix, its values on that pattern.
    pub fn union_pattern(ms: &[&DMatrix<C64>]) -> (CsrMatrix, Vec<Vec<C64>>) {
        let d = ms.first().map_or(0, |m| m.nrows());
        let mut pattern = CsrMatrix {
            dim: d,
            row_ptr: vec![0],
            col_idx: vec![],
            values: vec![],
        };
        let mut per: Vec<Vec<C64>> = vec![Vec::new(); ms.len()];
        for i in 0..d {
            for j in 0..d {
                if ms.iter().any(|m| m[(i, j)] != ZERO) {
                    pattern.col_idx.push(j);
                    pattern.values.push(ZERO);
                    for (k, m) in ms.iter().enumerate() {
                        per[k].push(m[(i, j)]);
                    }
                }
            }
            pattern.row_ptr.push(pattern.col_idx.len());
        }
        (pattern, per)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `Y = A X` for column-major `X` with `self.dim` rows.
    pub fn matmul(&self, x: &DMatrix<C64>, y: &mut DMatrix<C64>) {
        let d = self.dim;
        let ncols = x.ncols();
        let xs = x.as_slice();
        let ys = y.as_mut_slice();
        for c in 0..ncols {
            let xc = &xs[c * d..(c + 1) * d];
            let yc = &mut ys[c * d..(c + 1) * d];
            self.matvec(xc, yc);
        }
    }
}
