//! States, encoding unitaries and projective measurement families.
//!
//! Bits are plain `u8` values restricted to 0 and 1. Three-qubit operators act
//! on Alice's register in the order `A, A1, A2`, which is the same wire order
//! as the returning qubits `A, B1, B2`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{pauli, re, tensor, tensor_all, ComplexMatrix, PureStateVec, C64};

/// Tolerance for projector idempotence, orthogonality and completeness.
pub const PROJECTOR_TOL: f64 = 1e-12;

#[inline]
fn bit(b: u8) -> u8 {
    assert!(b <= 1, "bit value {b} is not 0 or 1");
    b
}

#[inline]
fn sign(exponent: u8) -> f64 {
    if exponent & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Ordered tuple of one to three bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitLabel(Vec<u8>);

impl BitLabel {
    pub fn new(bits: &[u8]) -> Result<Self> {
        if bits.is_empty() || bits.len() > 3 {
            return Err(Error::Invalid(format!(
                "label length {} outside 1..=3",
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Invalid(format!("label entry {b} is not a bit")));
        }
        Ok(Self(bits.to_vec()))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for BitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Complete set of orthogonal projectors with bit labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFamily {
    name: String,
    dim: usize,
    elements: Vec<(BitLabel, ComplexMatrix)>,
}

impl MeasurementFamily {
    pub fn new(name: &str, elements: Vec<(BitLabel, ComplexMatrix)>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidMeasurement {
            name: name.to_string(),
            reason,
        };
        let dim = elements
            .first()
            .map(|(_, p)| p.rows())
            .ok_or_else(|| invalid("no projectors".into()))?;
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for (n, (label, p)) in elements.iter().enumerate() {
            if p.rows() != dim || p.cols() != dim {
                return Err(invalid(format!("projector {label} has the wrong shape")));
            }
            if elements[..n].iter().any(|(l, _)| l == label) {
                return Err(invalid(format!("duplicate label {label}")));
            }
            if p.hermitian_defect() > PROJECTOR_TOL {
                return Err(invalid(format!("projector {label} is not Hermitian")));
            }
            if (p * p).max_abs_diff(p) > PROJECTOR_TOL {
                return Err(invalid(format!("projector {label} is not idempotent")));
            }
            for (other_label, q) in &elements[..n] {
                if (p * q).max_abs_diff(&ComplexMatrix::zeros(dim, dim)) > PROJECTOR_TOL {
                    return Err(invalid(format!(
                        "projectors {other_label} and {label} overlap"
                    )));
                }
            }
            sum = &sum + p;
        }
        if sum.max_abs_diff(&ComplexMatrix::identity(dim)) > PROJECTOR_TOL {
            return Err(invalid("projectors do not sum to the identity".into()));
        }
        Ok(Self {
            name: name.to_string(),
            dim,
            elements,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[(BitLabel, ComplexMatrix)] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn projector(&self, bits: &[u8]) -> Option<&ComplexMatrix> {
        self.elements
            .iter()
            .find(|(l, _)| l.bits() == bits)
            .map(|(_, p)| p)
    }
}

fn state(amplitudes: Vec<C64>) -> PureStateVec {
    PureStateVec::new(amplitudes).expect("constructed states are normalized")
}

/// `(|000> + |111>)/sqrt(2)`.
pub fn ghz3() -> PureStateVec {
    g_state(0, 0, 0, 0)
}

/// `(1/sqrt(2)) sum_l (-1)^(l y) |l, x xor l>`.
pub fn bell(x: u8, y: u8) -> PureStateVec {
    let (x, y) = (bit(x), bit(y));
    let mut amps = vec![re(0.0); 4];
    for l in 0..2u8 {
        amps[usize::from(2 * l + (x ^ l))] = re(sign(l * y) * FRAC_1_SQRT_2);
    }
    state(amps)
}

/// `(1/sqrt(2)) sum_l (-1)^(l (j xor s)) |l, i xor l, k xor l>`.
pub fn g_state(s: u8, i: u8, j: u8, k: u8) -> PureStateVec {
    let (s, i, j, k) = (bit(s), bit(i), bit(j), bit(k));
    let mut amps = vec![re(0.0); 8];
    for l in 0..2u8 {
        let idx = 4 * l + 2 * (i ^ l) + (k ^ l);
        amps[usize::from(idx)] = re(sign(l * (j ^ s)) * FRAC_1_SQRT_2);
    }
    state(amps)
}

/// Pauli encoding `U^{xy} |l> = (-1)^(y l) |l xor x>`:
/// `U^00 = I`, `U^01 = Z`, `U^10 = X`, `U^11 = -iY`.
pub fn encoding_unitary(x: u8, y: u8) -> ComplexMatrix {
    match (bit(x), bit(y)) {
        (0, 0) => pauli::identity(),
        (0, 1) => pauli::z(),
        (1, 0) => pauli::x(),
        _ => pauli::y().scale(C64::new(0.0, -1.0)),
    }
}

/// Eigenvector of `sigma_x` with eigenvalue `(-1)^a`.
pub fn xbasis_vec(a: u8) -> PureStateVec {
    state(vec![re(FRAC_1_SQRT_2), re(sign(bit(a)) * FRAC_1_SQRT_2)])
}

pub fn zbasis_vec(a: u8) -> PureStateVec {
    PureStateVec::basis(2, usize::from(bit(a)))
}

fn label(bits: &[u8]) -> BitLabel {
    BitLabel::new(bits).expect("valid label")
}

/// All bit tuples of the given length, most significant first.
pub fn bit_tuples(len: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..1usize << len).map(move |n| (0..len).map(|p| ((n >> (len - 1 - p)) & 1) as u8).collect())
}

/// Alice's key measurement for announced bit `s`: rank 1 resolves `(i,j,k)`,
/// rank 2 resolves `(i,j)` only, rank 4 resolves `k` only.
pub fn alice_key_family(s: u8, rank: usize) -> Result<MeasurementFamily> {
    let s = bit(s);
    let proj = |i, j, k| g_state(s, i, j, k).projector();
    let elements: Vec<(BitLabel, ComplexMatrix)> = match rank {
        1 => bit_tuples(3)
            .map(|b| (label(&b), proj(b[0], b[1], b[2])))
            .collect(),
        2 => bit_tuples(2)
            .map(|b| (label(&b), &proj(b[0], b[1], 0) + &proj(b[0], b[1], 1)))
            .collect(),
        4 => (0..2u8)
            .map(|k| {
                let sum = bit_tuples(2).fold(ComplexMatrix::zeros(8, 8), |acc, b| {
                    &acc + &proj(b[0], b[1], k)
                });
                (label(&[k]), sum)
            })
            .collect(),
        other => return Err(Error::InvalidRank(other)),
    };
    MeasurementFamily::new(&format!("alice-key-rank{rank}-s{s}"), elements)
}

/// Alice's test measurement against Bob1: `|i><i| (x) |j_x><j_x| (x) I`.
pub fn alice_test_family_b1() -> MeasurementFamily {
    let elements = bit_tuples(2)
        .map(|b| {
            let p = tensor_all(&[
                &zbasis_vec(b[0]).projector(),
                &xbasis_vec(b[1]).projector(),
                &ComplexMatrix::identity(2),
            ]);
            (label(&b), p)
        })
        .collect();
    MeasurementFamily::new("alice-test-b1", elements).expect("valid family")
}

/// Alice's test measurement against Bob2: `I (x) I (x) |(k xor s)_x><..|`.
pub fn alice_test_family_b2(s: u8) -> MeasurementFamily {
    let s = bit(s);
    let elements = (0..2u8)
        .map(|k| {
            let p = tensor(&ComplexMatrix::identity(4), &xbasis_vec(k ^ s).projector());
            (label(&[k]), p)
        })
        .collect();
    MeasurementFamily::new(&format!("alice-test-b2-s{s}"), elements).expect("valid family")
}

/// Two-qubit measurements on (travelling qubit, ancilla) replacing Bob's
/// unitary encodings and test operations.
#[derive(Clone, Debug, PartialEq)]
pub struct BobFamilies {
    /// Bell projectors labelled `(x, y)`.
    pub key_b1: MeasurementFamily,
    /// Bell projectors labelled `(z, s)`.
    pub key_b2: MeasurementFamily,
    /// `|x, y_x>` projectors labelled `(x, y)`.
    pub test_b1: MeasurementFamily,
    /// `|z_x, (z xor s)_x>` projectors labelled `(z, s)`.
    pub test_b2: MeasurementFamily,
}

pub fn bob_purified_families() -> BobFamilies {
    let bell_family = |name: &str| {
        let elements = bit_tuples(2)
            .map(|b| (label(&b), bell(b[0], b[1]).projector()))
            .collect();
        MeasurementFamily::new(name, elements).expect("valid family")
    };
    let test_b1 = bit_tuples(2)
        .map(|b| {
            (
                label(&b),
                zbasis_vec(b[0]).tensor(&xbasis_vec(b[1])).projector(),
            )
        })
        .collect();
    let test_b2 = bit_tuples(2)
        .map(|b| {
            let (z, s) = (b[0], b[1]);
            (
                label(&b),
                xbasis_vec(z).tensor(&xbasis_vec(z ^ s)).projector(),
            )
        })
        .collect();
    BobFamilies {
        key_b1: bell_family("bob1-key"),
        key_b2: bell_family("bob2-key"),
        test_b1: MeasurementFamily::new("bob1-test", test_b1).expect("valid family"),
        test_b2: MeasurementFamily::new("bob2-test", test_b2).expect("valid family"),
    }
}

/// `(I (x) U^{xy} (x) U^{zs}) |GHZ>`.
pub fn encoded_ghz(x: u8, y: u8, z: u8, s: u8) -> PureStateVec {
    let u = tensor_all(&[
        &ComplexMatrix::identity(2),
        &encoding_unitary(x, y),
        &encoding_unitary(z, s),
    ]);
    ghz3().apply_unitary(&u).expect("unitary encoding")
}
