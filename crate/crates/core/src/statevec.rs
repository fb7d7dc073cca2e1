//! Dense pure-state linear algebra on labeled qubit registers.
//!
//! Amplitude indices are little-endian over the register: the qubit at
//! position `j` of a [`Register`] is bit `j` of the index. [`tensor`] places
//! the left operand in the low bits, so `tensor(|0⟩_q0, |1⟩_q1)` has its
//! single nonzero amplitude at index `0b10`.
//!
//! Kets and operators are immutable; every operation returns a new value.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tol;

/// A qubit label.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Qubit(pub usize);

impl From<usize> for Qubit {
    fn from(k: usize) -> Self {
        Self(k)
    }
}

impl fmt::Display for Qubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

impl FromStr for Qubit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.strip_prefix('q')
            .and_then(|digits| digits.parse::<usize>().ok())
            .map(Qubit)
            .ok_or_else(|| format!("invalid qubit label `{s}` (expected q<index>)"))
    }
}

/// An ordered list of distinct qubit labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Register {
    qubits: Vec<Qubit>,
}

impl Register {
    pub fn new<I, Q>(qubits: I) -> Result<Self>
    where
        I: IntoIterator<Item = Q>,
        Q: Into<Qubit>,
    {
        Self::with_cap(qubits, tol::DEFAULT_MAX_QUBITS)
    }

    /// Builds a register with a non-default size cap.
    pub fn with_cap<I, Q>(qubits: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = Q>,
        Q: Into<Qubit>,
    {
        let qubits: Vec<Qubit> = qubits.into_iter().map(Into::into).collect();
        if qubits.len() > cap {
            return Err(Error::RegisterTooLarge {
                requested: qubits.len(),
                cap,
            });
        }
        for (k, q) in qubits.iter().enumerate() {
            if qubits[..k].contains(q) {
                return Err(Error::DuplicateQubit(*q));
            }
        }
        Ok(Self { qubits })
    }

    /// Labels `q{start}..q{start+len}`.
    pub fn range(start: usize, len: usize) -> Result<Self> {
        Self::new(start..start + len)
    }

    pub fn single(q: impl Into<Qubit>) -> Self {
        Self {
            qubits: vec![q.into()],
        }
    }

    pub fn qubits(&self) -> &[Qubit] {
        &self.qubits
    }

    pub fn len(&self) -> usize {
        self.qubits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qubits.is_empty()
    }

    /// Hilbert-space dimension `2^len`.
    pub fn dim(&self) -> usize {
        1usize << self.qubits.len()
    }

    pub fn position(&self, q: Qubit) -> Option<usize> {
        self.qubits.iter().position(|&x| x == q)
    }

    pub fn contains(&self, q: Qubit) -> bool {
        self.qubits.contains(&q)
    }

    /// Concatenation; `self` occupies the low bits of the result.
    pub fn concat(&self, other: &Register) -> Result<Register> {
        if let Some(q) = other.qubits.iter().find(|q| self.contains(**q)) {
            return Err(Error::OverlappingRegisters(*q));
        }
        let mut qubits = self.qubits.clone();
        qubits.extend_from_slice(&other.qubits);
        Register::new(qubits)
    }

    /// `self` with the qubits of `other` removed, order preserved.
    pub fn without(&self, other: &Register) -> Register {
        Register {
            qubits: self
                .qubits
                .iter()
                .copied()
                .filter(|q| !other.contains(*q))
                .collect(),
        }
    }

    /// Bit positions in `self` of every qubit of `sub`, in `sub` order.
    pub fn positions_of(&self, sub: &Register) -> Result<Vec<usize>> {
        sub.qubits
            .iter()
            .map(|&q| {
                self.position(q).ok_or_else(|| {
                    Error::RegisterMismatch(format!("qubit {q} is not in register {self}"))
                })
            })
            .collect()
    }

    pub fn same_set(&self, other: &Register) -> bool {
        self.len() == other.len() && self.qubits.iter().all(|q| other.contains(*q))
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, q) in self.qubits.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{q}")?;
        }
        write!(f, "]")
    }
}

/// Index layout of a subsystem embedded in a larger register.
///
/// `offsets[i]` is the full-register index contribution of subsystem index
/// `i`; `rest` lists every full index whose subsystem bits are zero.
struct Embedding {
    offsets: Vec<usize>,
    rest: Vec<usize>,
}

impl Embedding {
    fn new(full: &Register, sub: &Register) -> Result<Self> {
        let positions = full.positions_of(sub)?;
        let mask: usize = positions.iter().map(|p| 1usize << p).sum();
        let offsets = (0..sub.dim())
            .map(|i| {
                positions
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| (i >> b) & 1 == 1)
                    .map(|(_, p)| 1usize << p)
                    .sum()
            })
            .collect();
        let rest = (0..full.dim()).filter(|idx| idx & mask == 0).collect();
        Ok(Self { offsets, rest })
    }
}

/// A pure state (not necessarily normalized) on a register.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    register: Register,
    amps: Vec<C64>,
}

impl Ket {
    pub fn from_amplitudes(register: Register, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != register.dim() {
            return Err(Error::DimensionMismatch {
                expected: register.dim(),
                found: amps.len(),
            });
        }
        Ok(Self { register, amps })
    }

    /// Real amplitudes; convenience for tests and fixed states.
    pub fn from_real(register: Register, amps: &[f64]) -> Result<Self> {
        Self::from_amplitudes(register, amps.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(register: Register, index: usize) -> Result<Self> {
        if index >= register.dim() {
            return Err(Error::IndexOutOfRange {
                index,
                qubits: register.len(),
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); register.dim()];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { register, amps })
    }

    pub fn zeros(register: Register) -> Self {
        let amps = vec![C64::new(0.0, 0.0); register.dim()];
        Self { register, amps }
    }

    /// `|+⟩` on one qubit.
    pub fn plus(q: impl Into<Qubit>) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            register: Register::single(q),
            amps: vec![C64::new(h, 0.0); 2],
        }
    }

    /// `|−⟩` on one qubit.
    pub fn minus(q: impl Into<Qubit>) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            register: Register::single(q),
            amps: vec![C64::new(h, 0.0), C64::new(-h, 0.0)],
        }
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= tol::ACCUMULATED
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::NotNormalized(self.norm()))
        }
    }

    /// Unit vector along `self`; fails when the squared norm underflows.
    pub fn normalized(&self) -> Result<Ket> {
        let n2 = self.norm_sqr();
        if n2 <= tol::UNDERFLOW {
            return Err(Error::VanishingBranch(n2));
        }
        Ok(self.scale(C64::new(1.0 / n2.sqrt(), 0.0)))
    }

    pub fn scale(&self, c: C64) -> Ket {
        Ket {
            register: self.register.clone(),
            amps: self.amps.iter().map(|a| a * c).collect(),
        }
    }

    pub fn add(&self, other: &Ket) -> Result<Ket> {
        same_register(&self.register, &other.register)?;
        Ok(Ket {
            register: self.register.clone(),
            amps: self
                .amps
                .iter()
                .zip(&other.amps)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Ket) -> Result<Ket> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Same amplitudes under new labels (register sizes must agree).
    pub fn relabel(&self, register: Register) -> Result<Ket> {
        Ket::from_amplitudes(register, self.amps.clone())
    }

    /// Amplitudes reordered so the register reads as `target`.
    pub fn permute_to(&self, target: &Register) -> Result<Ket> {
        if !self.register.same_set(target) {
            return Err(Error::RegisterMismatch(format!(
                "cannot permute {} into {}",
                self.register, target
            )));
        }
        let positions = target.positions_of(&self.register)?;
        let mut amps = vec![C64::new(0.0, 0.0); self.dim()];
        for (i, a) in self.amps.iter().enumerate() {
            let j: usize = positions
                .iter()
                .enumerate()
                .filter(|(b, _)| (i >> b) & 1 == 1)
                .map(|(_, p)| 1usize << p)
                .sum();
            amps[j] = *a;
        }
        Ket::from_amplitudes(target.clone(), amps)
    }
}

fn same_register(a: &Register, b: &Register) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::RegisterMismatch(format!("{a} vs {b}")))
    }
}

/// Computational basis ket; qubit 0 of the register is the least significant bit.
pub fn basis_ket(register: Register, index: usize) -> Result<Ket> {
    Ket::basis(register, index)
}

/// `a ⊗ b` with `a` in the low bits and the registers concatenated.
pub fn tensor(a: &Ket, b: &Ket) -> Result<Ket> {
    let register = a.register.concat(&b.register)?;
    let mut amps = Vec::with_capacity(a.dim() * b.dim());
    for bj in &b.amps {
        for ai in &a.amps {
            amps.push(ai * bj);
        }
    }
    Ket::from_amplitudes(register, amps)
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn inner(a: &Ket, b: &Ket) -> Result<C64> {
    same_register(&a.register, &b.register)?;
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}

/// `|⟨a|b⟩|² / (‖a‖²‖b‖²)`; insensitive to global phase and normalization.
pub fn fidelity(a: &Ket, b: &Ket) -> Result<f64> {
    let ov = inner(a, b)?;
    Ok(ov.norm_sqr() / (a.norm_sqr() * b.norm_sqr()))
}

/// Action of `op` on the subsystem it names, identity elsewhere.
pub fn apply(op: &Operator, state: &Ket) -> Result<Ket> {
    let emb = Embedding::new(&state.register, &op.register)?;
    let d = op.dim();
    let mut out = vec![C64::new(0.0, 0.0); state.dim()];
    let mut buf = vec![C64::new(0.0, 0.0); d];
    for &base in &emb.rest {
        for (i, off) in emb.offsets.iter().enumerate() {
            buf[i] = state.amps[base + off];
        }
        for (r, off) in emb.offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (c, v) in buf.iter().enumerate() {
                acc += op.matrix[(r, c)] * v;
            }
            out[base + off] = acc;
        }
    }
    Ket::from_amplitudes(state.register.clone(), out)
}

/// `⟨ψ|O|ψ⟩` without normalization or hermiticity requirements.
pub fn matrix_element(state: &Ket, op: &Operator) -> Result<C64> {
    inner(state, &apply(op, state)?)
}

/// `⟨ψ|H|ψ⟩` for a normalized state and hermitian operator.
pub fn expectation(state: &Ket, op: &Operator) -> Result<f64> {
    state.require_normalized()?;
    require_hermitian(op)?;
    Ok(matrix_element(state, op)?.re)
}

/// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩` for any nonvanishing state.
pub fn expectation_unnormalized(state: &Ket, op: &Operator) -> Result<f64> {
    require_hermitian(op)?;
    let n2 = state.norm_sqr();
    if n2 <= tol::UNDERFLOW {
        return Err(Error::VanishingBranch(n2));
    }
    Ok(matrix_element(state, op)?.re / n2)
}

/// `⟨H²⟩ − ⟨H⟩²`, clamped at zero.
pub fn variance(state: &Ket, op: &Operator) -> Result<f64> {
    state.require_normalized()?;
    require_hermitian(op)?;
    let h_psi = apply(op, state)?;
    let mean = inner(state, &h_psi)?.re;
    let second = h_psi.norm_sqr();
    Ok((second - mean * mean).max(0.0))
}

fn require_hermitian(op: &Operator) -> Result<()> {
    if op.hermitian {
        Ok(())
    } else {
        Err(Error::NonHermitian)
    }
}

/// Contracts `⟨outcome|` on its subsystem: returns the unnormalized residual
/// on the remaining qubits and its squared norm.
pub fn project(state: &Ket, outcome: &Ket) -> Result<(Ket, f64)> {
    outcome.require_normalized()?;
    let emb = Embedding::new(&state.register, &outcome.register)?;
    let residual_register = state.register.without(&outcome.register);
    let amps: Vec<C64> = emb
        .rest
        .iter()
        .map(|&base| {
            emb.offsets
                .iter()
                .zip(&outcome.amps)
                .map(|(off, o)| o.conj() * state.amps[base + off])
                .sum()
        })
        .collect();
    let residual = Ket::from_amplitudes(residual_register, amps)?;
    let p = residual.norm_sqr();
    Ok((residual, p))
}

/// A dense operator on a register.
#[derive(Clone, Debug)]
pub struct Operator {
    register: Register,
    matrix: DMatrix<C64>,
    hermitian: bool,
}

impl Operator {
    pub fn new(register: Register, matrix: DMatrix<C64>) -> Result<Self> {
        let d = register.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        let hermitian = is_hermitian(&matrix);
        Ok(Self {
            register,
            matrix,
            hermitian,
        })
    }

    /// Row-major 2×2 single-qubit operator.
    pub fn single(q: impl Into<Qubit>, rows: [[C64; 2]; 2]) -> Self {
        let m = DMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]]);
        Self::new(Register::single(q), m).expect("2x2 on one qubit")
    }

    pub fn identity(register: Register) -> Self {
        let d = register.dim();
        Self {
            register,
            matrix: DMatrix::identity(d, d),
            hermitian: true,
        }
    }

    pub fn diagonal(register: Register, diag: &[f64]) -> Result<Self> {
        if diag.len() != register.dim() {
            return Err(Error::DimensionMismatch {
                expected: register.dim(),
                found: diag.len(),
            });
        }
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            diag.len(),
            diag.iter().map(|&x| C64::new(x, 0.0)),
        ));
        Ok(Self {
            register,
            matrix: m,
            hermitian: true,
        })
    }

    pub fn pauli_x(q: impl Into<Qubit>) -> Self {
        let (o, l) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0));
        Self::single(q, [[o, l], [l, o]])
    }

    pub fn pauli_y(q: impl Into<Qubit>) -> Self {
        let o = C64::new(0.0, 0.0);
        let i = C64::new(0.0, 1.0);
        Self::single(q, [[o, -i], [i, o]])
    }

    /// Standard `Z = |0⟩⟨0| − |1⟩⟨1|`.
    pub fn pauli_z(q: impl Into<Qubit>) -> Self {
        Self::diagonal(Register::single(q), &[1.0, -1.0]).expect("2x2")
    }

    /// `|1⟩⟨1|`.
    pub fn projector_one(q: impl Into<Qubit>) -> Self {
        Self::diagonal(Register::single(q), &[0.0, 1.0]).expect("2x2")
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|r| (0..d).all(|c| r == c || self.matrix[(r, c)] == C64::new(0.0, 0.0)))
    }

    pub fn relabel(&self, register: Register) -> Result<Operator> {
        if register.len() != self.register.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: register.dim(),
            });
        }
        Ok(Operator {
            register,
            ..self.clone()
        })
    }

    /// `self ⊗ other` with `self` in the low bits.
    pub fn tensor(&self, other: &Operator) -> Result<Operator> {
        let register = self.register.concat(&other.register)?;
        // nalgebra's Kronecker product puts its left factor in the high bits.
        let matrix = other.matrix.kronecker(&self.matrix);
        Operator::new(register, matrix)
    }

    /// Extends to `target` with identity on the extra qubits, reordering as needed.
    pub fn embed(&self, target: &Register) -> Result<Operator> {
        if target == &self.register {
            return Ok(self.clone());
        }
        let emb = Embedding::new(target, &self.register)?;
        let d = target.dim();
        let mut m = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
        for &base in &emb.rest {
            for (r, ro) in emb.offsets.iter().enumerate() {
                for (c, co) in emb.offsets.iter().enumerate() {
                    m[(base + ro, base + co)] = self.matrix[(r, c)];
                }
            }
        }
        Ok(Operator {
            register: target.clone(),
            matrix: m,
            hermitian: self.hermitian,
        })
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        same_register(&self.register, &other.register)?;
        Operator::new(self.register.clone(), &self.matrix + &other.matrix)
    }

    pub fn scale(&self, c: C64) -> Operator {
        let matrix = &self.matrix * c;
        let hermitian = is_hermitian(&matrix);
        Operator {
            register: self.register.clone(),
            matrix,
            hermitian,
        }
    }

    /// `self · other` (apply `other` first).
    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        same_register(&self.register, &other.register)?;
        Operator::new(self.register.clone(), &self.matrix * &other.matrix)
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            register: self.register.clone(),
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    /// `self + c·1`.
    pub fn shift(&self, c: f64) -> Operator {
        let d = self.dim();
        let matrix = &self.matrix + DMatrix::<C64>::identity(d, d) * C64::new(c, 0.0);
        Operator {
            register: self.register.clone(),
            matrix,
            hermitian: self.hermitian,
        }
    }

    pub fn is_unitary(&self, tolerance: f64) -> bool {
        let d = self.dim();
        let p = self.matrix.adjoint() * &self.matrix;
        (0..d).all(|r| {
            (0..d).all(|c| {
                let target = if r == c { 1.0 } else { 0.0 };
                (p[(r, c)] - C64::new(target, 0.0)).norm() <= tolerance
            })
        })
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::of(self)
    }

    /// `exp(−i t H)` by spectral decomposition.
    pub fn evolution(&self, t: f64) -> Result<Operator> {
        let s = self.spectrum()?;
        let d = self.dim();
        let v = s.eigenvector_matrix();
        let phases = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            s.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -t * l)),
        ));
        Operator::new(self.register.clone(), &v * phases * v.adjoint())
    }
}

fn is_hermitian(m: &DMatrix<C64>) -> bool {
    let d = m.nrows();
    let scale = m.iter().fold(1.0f64, |acc, x| acc.max(x.norm()));
    (0..d).all(|r| (r..d).all(|c| (m[(r, c)] - m[(c, r)].conj()).norm() <= tol::ALGEBRAIC * scale))
}

#[derive(Clone, Debug)]
enum Eigenbasis {
    /// Eigenvector `j` is the computational basis state `perm[j]`.
    Computational(Vec<usize>),
    /// Eigenvectors are the columns.
    Dense(DMatrix<C64>),
}

/// Eigen-decomposition of a hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    register: Register,
    eigenvalues: Vec<f64>,
    basis: Eigenbasis,
}

impl Spectrum {
    pub fn of(op: &Operator) -> Result<Spectrum> {
        require_hermitian(op)?;
        let d = op.dim();
        if op.is_diagonal() {
            let diag: Vec<f64> = (0..d).map(|k| op.matrix[(k, k)].re).collect();
            let mut perm: Vec<usize> = (0..d).collect();
            perm.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
            let eigenvalues = perm.iter().map(|&k| diag[k]).collect();
            return Ok(Spectrum {
                register: op.register.clone(),
                eigenvalues,
                basis: Eigenbasis::Computational(perm),
            });
        }
        let eig = nalgebra::SymmetricEigen::new(op.matrix.clone());
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
        for (j, &k) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(k);
            // Fix the phase: the first largest-magnitude component is real positive.
            let peak = col.iter().fold(0.0f64, |m, x| m.max(x.norm()));
            let pivot = col
                .iter()
                .find(|x| x.norm() >= peak * (1.0 - 1e-9))
                .copied()
                .unwrap();
            let phase = pivot.conj() / pivot.norm();
            for r in 0..d {
                vectors[(r, j)] = col[r] * phase;
            }
        }
        Ok(Spectrum {
            register: op.register.clone(),
            eigenvalues,
            basis: Eigenbasis::Dense(vectors),
        })
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenket(&self, j: usize) -> Ket {
        match &self.basis {
            Eigenbasis::Computational(perm) => Ket::basis(self.register.clone(), perm[j]).unwrap(),
            Eigenbasis::Dense(v) => {
                Ket::from_amplitudes(self.register.clone(), v.column(j).iter().copied().collect())
                    .unwrap()
            }
        }
    }

    pub fn eigenkets(&self) -> Vec<Ket> {
        (0..self.dim()).map(|j| self.eigenket(j)).collect()
    }

    fn eigenvector_matrix(&self) -> DMatrix<C64> {
        match &self.basis {
            Eigenbasis::Dense(v) => v.clone(),
            Eigenbasis::Computational(perm) => {
                let d = perm.len();
                let mut v = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
                for (j, &k) in perm.iter().enumerate() {
                    v[(k, j)] = C64::new(1.0, 0.0);
                }
                v
            }
        }
    }

    /// `Σ λ_j |v_j⟩⟨v_j|`.
    pub fn reconstruct(&self) -> Operator {
        let v = self.eigenvector_matrix();
        let d = self.dim();
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            self.eigenvalues.iter().map(|&x| C64::new(x, 0.0)),
        ));
        Operator::new(self.register.clone(), &v * l * v.adjoint()).unwrap()
    }

    /// Spectrum of `A ⊗ B` from the spectra of `A` (low bits) and `B`.
    pub fn product(&self, other: &Spectrum) -> Result<Spectrum> {
        let register = self.register.concat(&other.register)?;
        let (da, db) = (self.dim(), other.dim());
        let mut pairs: Vec<(usize, usize)> = (0..db)
            .flat_map(|jb| (0..da).map(move |ja| (ja, jb)))
            .collect();
        let value = |&(ja, jb): &(usize, usize)| self.eigenvalues[ja] * other.eigenvalues[jb];
        pairs.sort_by(|a, b| value(a).total_cmp(&value(b)));
        let eigenvalues = pairs.iter().map(value).collect();
        let basis = match (&self.basis, &other.basis) {
            (Eigenbasis::Computational(pa), Eigenbasis::Computational(pb)) => {
                Eigenbasis::Computational(
                    pairs.iter().map(|&(ja, jb)| pa[ja] + pb[jb] * da).collect(),
                )
            }
            _ => {
                let (va, vb) = (self.eigenvector_matrix(), other.eigenvector_matrix());
                let d = da * db;
                let mut v = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
                for (j, &(ja, jb)) in pairs.iter().enumerate() {
                    for rb in 0..db {
                        for ra in 0..da {
                            v[(ra + rb * da, j)] = va[(ra, ja)] * vb[(rb, jb)];
                        }
                    }
                }
                Eigenbasis::Dense(v)
            }
        };
        Ok(Spectrum {
            register,
            eigenvalues,
            basis,
        })
    }

    /// `exp(−i t H)|ψ⟩`.
    pub fn evolve(&self, t: f64, state: &Ket) -> Result<Ket> {
        Ok(self.evolve_with_derivative(t, state)?.0)
    }

    /// `(U|ψ⟩, dU/dt|ψ⟩)` with `U = exp(−i t H)`, so the second entry is `−iH U|ψ⟩`.
    pub fn evolve_with_derivative(&self, t: f64, state: &Ket) -> Result<(Ket, Ket)> {
        same_register(&self.register, &state.register)?;
        let d = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); d];
        let mut dout = vec![C64::new(0.0, 0.0); d];
        let minus_i = C64::new(0.0, -1.0);
        match &self.basis {
            Eigenbasis::Computational(perm) => {
                for (j, &k) in perm.iter().enumerate() {
                    let l = self.eigenvalues[j];
                    out[k] = state.amps[k] * C64::from_polar(1.0, -t * l);
                    dout[k] = out[k] * minus_i * l;
                }
            }
            Eigenbasis::Dense(v) => {
                for j in 0..d {
                    let l = self.eigenvalues[j];
                    let coeff: C64 = (0..d).map(|r| v[(r, j)].conj() * state.amps[r]).sum();
                    let c = coeff * C64::from_polar(1.0, -t * l);
                    let dc = c * minus_i * l;
                    for r in 0..d {
                        out[r] += v[(r, j)] * c;
                        dout[r] += v[(r, j)] * dc;
                    }
                }
            }
        }
        Ok((
            Ket::from_amplitudes(self.register.clone(), out)?,
            Ket::from_amplitudes(self.register.clone(), dout)?,
        ))
    }
}

/// Random states and observables for property sweeps.
pub mod random {
    use super::*;

    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-random normalized ket.
    pub fn ket<R: Rng + ?Sized>(register: Register, rng: &mut R) -> Ket {
        let amps = (0..register.dim()).map(|_| gaussian(rng)).collect();
        Ket::from_amplitudes(register, amps)
            .unwrap()
            .normalized()
            .unwrap()
    }

    /// Unnormalized complex Gaussian vector.
    pub fn vector<R: Rng + ?Sized>(register: Register, rng: &mut R) -> Ket {
        let amps = (0..register.dim()).map(|_| gaussian(rng)).collect();
        Ket::from_amplitudes(register, amps).unwrap()
    }

    /// `(X + X†)/2` with Gaussian entries.
    pub fn hermitian<R: Rng + ?Sized>(register: Register, rng: &mut R) -> Operator {
        let d = register.dim();
        let x = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
        let h = (&x + x.adjoint()) * C64::new(0.5, 0.0);
        Operator::new(register, h).unwrap()
    }

    /// Orthonormal basis from Gram-Schmidt on Gaussian vectors.
    pub fn orthonormal_basis<R: Rng + ?Sized>(register: Register, rng: &mut R) -> Vec<Ket> {
        let seeds: Vec<Ket> = (0..register.dim())
            .map(|_| vector(register.clone(), rng))
            .collect();
        gram_schmidt(&seeds).unwrap()
    }
}

/// Orthonormalizes `vectors` in order, dropping ones already in the span.
pub fn gram_schmidt(vectors: &[Ket]) -> Result<Vec<Ket>> {
    let mut basis: Vec<Ket> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = inner(b, &w)?;
                w = w.sub(&b.scale(c))?;
            }
        }
        if w.norm() > 1e-8 * v.norm().max(1e-300) {
            basis.push(w.normalized()?);
        }
    }
    Ok(basis)
}

/// Largest deviation of the Gram matrix of `kets` from the identity.
pub fn gram_deviation(kets: &[Ket]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (i, a) in kets.iter().enumerate() {
        for (j, b) in kets.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((inner(a, b)? - C64::new(target, 0.0)).norm());
        }
    }
    Ok(worst)
}
