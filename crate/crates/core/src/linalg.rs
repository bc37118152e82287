//! Dense complex linear algebra for operators on a handful of qubits.
//!
//! Subsystem order follows the ket order: the leftmost tensor factor is the
//! most significant bit of a computational-basis index, so `|a, b, c>` on three
//! qubits sits at index `4a + 2b + c`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::channels::KrausSet;
use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Hermiticity defect tolerated (and symmetrized away) before eigen-decomposition.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for density operators.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for a positive operator.
pub const POSITIVITY_TOL: f64 = 1e-9;

const JACOBI_OFF_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::Shape {
                expected: format!("{rows}x{cols} entries"),
                got: format!("{} entries", data.len()),
            });
        }
        if let Some(pos) = data
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        Self::new(rows, cols, entries.iter().map(|&x| re(x)).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = re(1.0);
        }
        m
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &x) in entries.iter().enumerate() {
            m[(i, i)] = re(x);
        }
        m
    }

    /// `|a><b|` for two column vectors.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                m[(i, j)] = ai * bj.conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn scale(&self, k: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * k).collect(),
        }
    }

    pub fn scale_real(&self, k: f64) -> Self {
        self.scale(re(k))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.max_abs_diff(other) <= tol
    }

    /// Largest entrywise modulus of `M - M^dagger`.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    fn symmetrized(&self) -> Self {
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            out[(i, i)] = re(self[(i, i)].re);
            for j in (i + 1)..n {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                out[(i, j)] = avg;
                out[(j, i)] = avg.conj();
            }
        }
        out
    }

    /// Checked product; `*` panics on mismatched shapes instead.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `<v| M |v>` for a column vector `v`.
    pub fn expectation(&self, v: &[C64]) -> C64 {
        let mv = self.apply(v);
        v.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub mod pauli {
    use super::{c, re, ComplexMatrix};

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::new(2, 2, vec![re(0.0), re(1.0), re(1.0), re(0.0)]).unwrap()
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::new(2, 2, vec![re(0.0), c(0.0, -1.0), c(0.0, 1.0), re(0.0)]).unwrap()
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::diagonal(&[1.0, -1.0])
    }
}

/// Kronecker product; `a` supplies the most significant index.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = ComplexMatrix::zeros(rows, cols);
    for ai in 0..a.rows {
        for aj in 0..a.cols {
            let av = a[(ai, aj)];
            if av.re == 0.0 && av.im == 0.0 {
                continue;
            }
            for bi in 0..b.rows {
                for bj in 0..b.cols {
                    out[(ai * b.rows + bi, aj * b.cols + bj)] = av * b[(bi, bj)];
                }
            }
        }
    }
    out
}

/// Left-to-right Kronecker product of several factors.
pub fn tensor_all(factors: &[&ComplexMatrix]) -> ComplexMatrix {
    let (first, rest) = factors.split_first().expect("at least one factor");
    rest.iter().fold((*first).clone(), |acc, m| tensor(&acc, m))
}

/// Normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureStateVec {
    amplitudes: Vec<C64>,
}

impl PureStateVec {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Shape {
                expected: "non-empty vector".into(),
                got: "empty".into(),
            });
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { amplitudes })
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim);
        let mut amplitudes = vec![re(0.0); dim];
        amplitudes[index] = re(1.0);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.dim(), other.dim());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn tensor(&self, other: &Self) -> Self {
        let mut amplitudes = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        Self { amplitudes }
    }

    /// `|psi><psi|`.
    pub fn projector(&self) -> ComplexMatrix {
        ComplexMatrix::outer(&self.amplitudes, &self.amplitudes)
    }

    pub fn density(&self) -> DensityOp {
        DensityOp {
            matrix: self.projector(),
        }
    }

    pub fn apply_unitary(&self, u: &ComplexMatrix) -> Result<Self> {
        if u.cols() != self.dim() || u.rows() != self.dim() {
            return Err(Error::DimensionMismatch(u.cols(), self.dim()));
        }
        Self::new(u.apply(&self.amplitudes))
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOp {
    matrix: ComplexMatrix,
}

impl DensityOp {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape {
                expected: "square matrix".into(),
                got: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        let defect = matrix.hermitian_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let matrix = matrix.symmetrized();
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidTrace(tr.re));
        }
        let min = hermitian_eigenvalues(&matrix)?
            .last()
            .copied()
            .unwrap_or(0.0);
        if min < -POSITIVITY_TOL {
            return Err(Error::NotPositive(min));
        }
        Ok(Self { matrix })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `tr(P rho)` for an operator `P` of matching dimension.
    pub fn expectation(&self, op: &ComplexMatrix) -> Result<f64> {
        Ok(op.matmul(&self.matrix)?.trace().re)
    }
}

fn qubit_count(dim: usize) -> Result<usize> {
    if dim.is_power_of_two() {
        Ok(dim.trailing_zeros() as usize)
    } else {
        Err(Error::Subsystem(format!(
            "dimension {dim} is not a power of two"
        )))
    }
}

/// Traces out every subsystem not listed in `keep`.
///
/// `dims` lists the local dimension of each subsystem (most significant
/// first); kept subsystems stay in their original relative order.
pub fn partial_trace_matrix(
    m: &ComplexMatrix,
    dims: &[usize],
    keep: &[usize],
) -> Result<ComplexMatrix> {
    if keep.is_empty() {
        return Err(Error::Subsystem("keep set is empty".into()));
    }
    let total: usize = dims.iter().product();
    if !m.is_square() || m.rows() != total {
        return Err(Error::DimensionMismatch(m.rows(), total));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() {
        return Err(Error::Subsystem("keep set has duplicates".into()));
    }
    if let Some(&bad) = keep_sorted.iter().find(|&&k| k >= dims.len()) {
        return Err(Error::Subsystem(format!(
            "index {bad} out of range for {} subsystems",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len())
        .filter(|i| !keep_sorted.contains(i))
        .collect();

    // strides[i] is the index weight of subsystem i in the full space
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let kept_dim: usize = keep_sorted.iter().map(|&k| dims[k]).product();
    let traced_dim: usize = traced.iter().map(|&k| dims[k]).product();

    let offset = |sub: &[usize], mut idx: usize| -> usize {
        let mut off = 0;
        for &s in sub.iter().rev() {
            off += (idx % dims[s]) * strides[s];
            idx /= dims[s];
        }
        off
    };
    let kept_off: Vec<usize> = (0..kept_dim).map(|a| offset(&keep_sorted, a)).collect();
    let traced_off: Vec<usize> = (0..traced_dim).map(|t| offset(&traced, t)).collect();

    let mut out = ComplexMatrix::zeros(kept_dim, kept_dim);
    for (a, &ra) in kept_off.iter().enumerate() {
        for (b, &rb) in kept_off.iter().enumerate() {
            let mut acc = re(0.0);
            for &t in &traced_off {
                acc += m[(ra + t, rb + t)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

pub fn partial_trace(rho: &DensityOp, dims: &[usize], keep: &[usize]) -> Result<DensityOp> {
    DensityOp::new(partial_trace_matrix(rho.matrix(), dims, keep)?)
}

fn check_targets(n_qubits: usize, targets: &[usize], op: &ComplexMatrix) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::Subsystem("no target qubits".into()));
    }
    if targets.iter().any(|&t| t >= n_qubits) {
        return Err(Error::Subsystem(format!(
            "target {:?} out of range for {n_qubits} qubits",
            targets
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if targets[..i].contains(t) {
            return Err(Error::Subsystem(format!("repeated target qubit {t}")));
        }
    }
    let local = 1usize << targets.len();
    if op.rows() != local || op.cols() != local {
        return Err(Error::DimensionMismatch(op.rows(), local));
    }
    Ok(())
}

/// Full-space matrix of `op` acting on `targets` (first target is the most
/// significant local index) and identity elsewhere.
pub fn embed_operator(
    op: &ComplexMatrix,
    n_qubits: usize,
    targets: &[usize],
) -> Result<ComplexMatrix> {
    check_targets(n_qubits, targets, op)?;
    let dim = 1usize << n_qubits;
    let k = targets.len();
    let masks: Vec<usize> = targets
        .iter()
        .map(|&t| 1usize << (n_qubits - 1 - t))
        .collect();
    let target_mask: usize = masks.iter().sum();
    let local_of = |idx: usize| -> usize {
        masks.iter().enumerate().fold(0, |acc, (p, &m)| {
            acc | (usize::from(idx & m != 0) << (k - 1 - p))
        })
    };
    let mut out = ComplexMatrix::zeros(dim, dim);
    for r in 0..dim {
        for col in 0..dim {
            if r & !target_mask == col & !target_mask {
                out[(r, col)] = op[(local_of(r), local_of(col))];
            }
        }
    }
    Ok(out)
}

/// `(op on targets) * m` without forming the full-space operator.
pub fn apply_left_local(
    m: &ComplexMatrix,
    n_qubits: usize,
    targets: &[usize],
    op: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_targets(n_qubits, targets, op)?;
    let dim = 1usize << n_qubits;
    if m.rows() != dim {
        return Err(Error::DimensionMismatch(m.rows(), dim));
    }
    let k = targets.len();
    let local = 1usize << k;
    let masks: Vec<usize> = targets
        .iter()
        .map(|&t| 1usize << (n_qubits - 1 - t))
        .collect();
    let target_mask: usize = masks.iter().sum();
    let scatter = |b: usize| -> usize {
        masks
            .iter()
            .enumerate()
            .filter(|(p, _)| b >> (k - 1 - p) & 1 == 1)
            .map(|(_, &mask)| mask)
            .sum()
    };
    let scattered: Vec<usize> = (0..local).map(scatter).collect();

    let cols = m.cols();
    let mut out = ComplexMatrix::zeros(dim, cols);
    for r in 0..dim {
        let base = r & !target_mask;
        let a = scattered
            .iter()
            .position(|&s| s == r & target_mask)
            .unwrap();
        for (b, &sb) in scattered.iter().enumerate() {
            let w = op[(a, b)];
            if w.re == 0.0 && w.im == 0.0 {
                continue;
            }
            let src = base | sb;
            for col in 0..cols {
                out.data[r * cols + col] += w * m.data[src * cols + col];
            }
        }
    }
    Ok(out)
}

/// `K m K^dagger` with `K` acting on `targets`.
pub fn conjugate_local(
    m: &ComplexMatrix,
    n_qubits: usize,
    targets: &[usize],
    op: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let left = apply_left_local(m, n_qubits, targets, op)?;
    Ok(apply_left_local(&left.dagger(), n_qubits, targets, op)?.dagger())
}

/// Applies a channel to the qubits `targets` of an operator on `n_qubits`.
///
/// Works on unnormalized operators as well; no state validation happens here.
pub fn apply_kraus_on(
    channel: &KrausSet,
    m: &ComplexMatrix,
    n_qubits: usize,
    targets: &[usize],
) -> Result<ComplexMatrix> {
    channel.check_completeness()?;
    if channel.dim() != 1 << targets.len() {
        return Err(Error::DimensionMismatch(channel.dim(), 1 << targets.len()));
    }
    let dim = 1usize << n_qubits;
    let mut acc = ComplexMatrix::zeros(dim, dim);
    for k in channel.operators() {
        acc = &acc + &conjugate_local(m, n_qubits, targets, k)?;
    }
    Ok(acc)
}

/// `sum_k K rho K^dagger` on the full space of `rho`.
pub fn apply_kraus(channel: &KrausSet, rho: &DensityOp) -> Result<DensityOp> {
    if channel.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(channel.dim(), rho.dim()));
    }
    let n = qubit_count(rho.dim())?;
    let targets: Vec<usize> = (0..n).collect();
    DensityOp::new(apply_kraus_on(channel, rho.matrix(), n, &targets)?)
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Returns unsorted eigenvalues and the unitary whose columns are
/// the matching eigenvectors.
pub fn hermitian_eigen(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    if !m.is_square() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let defect = m.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian(defect));
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm().max(1.0);

    let off_norm = |a: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > JACOBI_OFF_TOL * scale {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag < 1e-300 {
                    continue;
                }
                let phase = apq / mag;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // G = diag(1, conj(phase)) * [[c, s], [-s, c]] on the (p, q) block
                let g_pp = re(cs);
                let g_pq = re(sn);
                let g_qp = -phase.conj() * sn;
                let g_qq = phase.conj() * cs;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * g_pp + akq * g_qp;
                    a[(k, q)] = akp * g_pq + akq * g_qq;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * g_pp + vkq * g_qp;
                    v[(k, q)] = vkp * g_pq + vkq * g_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = g_pp.conj() * apk + g_qp.conj() * aqk;
                    a[(q, k)] = g_pq.conj() * apk + g_qq.conj() * aqk;
                }
                a[(p, q)] = re(0.0);
                a[(q, p)] = re(0.0);
                a[(p, p)] = re(a[(p, p)].re);
                a[(q, q)] = re(a[(q, q)].re);
            }
        }
    }
    Ok(((0..n).map(|i| a[(i, i)].re).collect(), v))
}

/// Real eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let (mut vals, _) = hermitian_eigen(m)?;
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Principal square root of a positive semidefinite matrix.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (vals, vecs) = hermitian_eigen(m)?;
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -POSITIVITY_TOL {
        return Err(Error::NotPositive(min));
    }
    let roots: Vec<f64> = vals.iter().map(|&x| x.max(0.0).sqrt()).collect();
    Ok(&(&vecs * &ComplexMatrix::diagonal(&roots)) * &vecs.dagger())
}

/// `max <psi|M|psi>` over unit vectors, for positive semidefinite `M`.
pub fn operator_inf_norm(m: &ComplexMatrix) -> Result<f64> {
    let vals = hermitian_eigenvalues(m)?;
    let min = *vals.last().expect("non-empty spectrum");
    if min < -POSITIVITY_TOL {
        return Err(Error::NotPositive(min));
    }
    Ok(vals[0])
}

/// Sum of absolute eigenvalues of a Hermitian matrix.
pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_eigenvalues(m)?.iter().map(|x| x.abs()).sum())
}

/// `(1/2) ||a - b||_1`.
pub fn trace_distance(a: &DensityOp, b: &DensityOp) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(0.5 * trace_norm(&(a.matrix() - b.matrix()))?)
}
