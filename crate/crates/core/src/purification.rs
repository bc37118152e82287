//! Checks that Bob's unitary encodings and test operations can be replaced by
//! projective measurements on the travelling qubit and one half of a
//! maximally entangled ancilla pair.
//!
//! Seven-wire layout, most significant first:
//!
//! | wire | 0 | 1  | 2  | 3   | 4  | 5   | 6  |
//! |------|---|----|----|-----|----|-----|----|
//! |      | A | B1 | B2 | B'1 | X1 | B'2 | X2 |
//!
//! `(B'1, X1)` and `(B'2, X2)` start in `|phi+>`. Bob1 measures `(B1, B'1)`,
//! Bob2 measures `(B2, B'2)`, and the qubits `X1, X2` travel back to Alice,
//! so the output lives on `(A, X1, X2)`.

use crate::channels::NoiseScenario;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_kraus_on, conjugate_local, partial_trace_matrix, tensor, tensor_all, trace_distance,
    trace_norm, ComplexMatrix, DensityOp,
};
use crate::protocol::{keygen_distribution, shared_state};
use crate::states::{
    bell, bit_tuples, bob_purified_families, encoding_unitary, xbasis_vec, zbasis_vec, BobFamilies,
};

const WIRES: usize = 7;
const BOB1_PAIR: [usize; 2] = [1, 3];
const BOB2_PAIR: [usize; 2] = [2, 5];
const OUTPUT: [usize; 3] = [0, 4, 6];

fn with_ancillas(rho: &DensityOp) -> Result<ComplexMatrix> {
    if rho.dim() != 8 {
        return Err(Error::DimensionMismatch(rho.dim(), 8));
    }
    let phi = bell(0, 0).projector();
    Ok(tensor_all(&[rho.matrix(), &phi, &phi]))
}

/// Applies `p1` to Bob1's pair and `p2` to Bob2's pair and keeps `(A, X1, X2)`.
/// Unnormalized: the trace is the joint outcome probability.
fn measure_pairs(
    omega: &ComplexMatrix,
    p1: &ComplexMatrix,
    p2: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let targets = [BOB1_PAIR[0], BOB1_PAIR[1], BOB2_PAIR[0], BOB2_PAIR[1]];
    let after = conjugate_local(omega, WIRES, &targets, &tensor(p1, p2))?;
    partial_trace_matrix(&after, &[2; WIRES], &OUTPUT)
}

fn half_trace_norm(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    Ok(0.5 * trace_norm(&(a - b))?)
}

/// `16 * tr_{B1 B'1 B2 B'2}[(K^{xy} (x) K^{zs}) Omega (..)^dagger]` with Bell
/// projectors `K`.
pub fn purified_encoding(rho: &DensityOp, x: u8, y: u8, z: u8, s: u8) -> Result<DensityOp> {
    let omega = with_ancillas(rho)?;
    purified_encoding_from(&omega, &bob_purified_families(), x, y, z, s)
}

fn purified_encoding_from(
    omega: &ComplexMatrix,
    fams: &BobFamilies,
    x: u8,
    y: u8,
    z: u8,
    s: u8,
) -> Result<DensityOp> {
    let p1 = fams.key_b1.projector(&[x, y]).expect("label exists");
    let p2 = fams.key_b2.projector(&[z, s]).expect("label exists");
    DensityOp::new(measure_pairs(omega, p1, p2)?.scale_real(16.0))
}

/// `(I (x) U^{xy} (x) U^{zs}) rho (..)^dagger`.
pub fn direct_encoding(rho: &DensityOp, x: u8, y: u8, z: u8, s: u8) -> Result<DensityOp> {
    if rho.dim() != 8 {
        return Err(Error::DimensionMismatch(rho.dim(), 8));
    }
    let u = tensor(&encoding_unitary(x, y), &encoding_unitary(z, s));
    DensityOp::new(conjugate_local(rho.matrix(), 3, &[1, 2], &u)?)
}

/// Largest trace distance between direct and purified encodings of the
/// scenario's shared state over all 16 label tuples.
pub fn verify_encoding_purification(scenario: &NoiseScenario) -> Result<f64> {
    let rho = shared_state(scenario)?;
    let omega = with_ancillas(&rho)?;
    let fams = bob_purified_families();
    let mut worst = 0.0f64;
    for b in bit_tuples(4) {
        let (x, y, z, s) = (b[0], b[1], b[2], b[3]);
        let purified = purified_encoding_from(&omega, &fams, x, y, z, s)?;
        let direct = direct_encoding(&rho, x, y, z, s)?;
        worst = worst.max(trace_distance(&purified, &direct)?);
    }
    Ok(worst)
}

/// Largest deviation of a joint Bell-outcome probability from 1/16.
pub fn bell_outcome_deviation(scenario: &NoiseScenario) -> Result<f64> {
    let omega = with_ancillas(&shared_state(scenario)?)?;
    let fams = bob_purified_families();
    let mut worst = 0.0f64;
    for b in bit_tuples(4) {
        let p1 = fams.key_b1.projector(&b[..2]).expect("label exists");
        let p2 = fams.key_b2.projector(&b[2..]).expect("label exists");
        let p = measure_pairs(&omega, p1, p2)?.trace().re;
        worst = worst.max((p - 1.0 / 16.0).abs());
    }
    Ok(worst)
}

/// Applies the backward channel to `X1, X2` before the Bell projections and
/// compares with applying it to the reduced output afterwards.
pub fn verify_backward_commutation(scenario: &NoiseScenario) -> Result<f64> {
    let omega = with_ancillas(&shared_state(scenario)?)?;
    let noisy_omega = apply_kraus_on(scenario.backward(), &omega, WIRES, &[4, 6])?;
    let fams = bob_purified_families();
    let mut worst = 0.0f64;
    for b in bit_tuples(4) {
        let p1 = fams.key_b1.projector(&b[..2]).expect("label exists");
        let p2 = fams.key_b2.projector(&b[2..]).expect("label exists");
        let before = measure_pairs(&noisy_omega, p1, p2)?;
        let after = apply_kraus_on(
            scenario.backward(),
            &measure_pairs(&omega, p1, p2)?,
            3,
            &[1, 2],
        )?;
        worst = worst.max(before.max_abs_diff(&after));
    }
    Ok(worst)
}

/// `|out><in|` as a single-qubit operator.
fn resend(
    measured: &crate::linalg::PureStateVec,
    sent: &crate::linalg::PureStateVec,
) -> ComplexMatrix {
    ComplexMatrix::outer(sent.amplitudes(), measured.amplitudes())
}

/// Compares the purified test/key combinations with their direct
/// measure-and-resend counterparts, each weighted by the probability of the
/// Bob-side choices, and checks the factorized form of the both-test output.
/// Returns the largest half trace norm difference.
pub fn verify_mixed_purifications(scenario: &NoiseScenario) -> Result<f64> {
    let rho = shared_state(scenario)?;
    let omega = with_ancillas(&rho)?;
    let fams = bob_purified_families();
    let direct = |op: &ComplexMatrix, weight: f64| -> Result<ComplexMatrix> {
        Ok(conjugate_local(rho.matrix(), 3, &[1, 2], op)?.scale_real(weight))
    };

    let mut worst = 0.0f64;
    for b in bit_tuples(4) {
        let (x, y, z, s) = (b[0], b[1], b[2], b[3]);
        let t1 = fams.test_b1.projector(&[x, y]).expect("label exists");
        let t2 = fams.test_b2.projector(&[z, s]).expect("label exists");
        let k1 = fams.key_b1.projector(&[x, y]).expect("label exists");
        let k2 = fams.key_b2.projector(&[z, s]).expect("label exists");
        let bob1_test = resend(&zbasis_vec(x), &xbasis_vec(y));
        let bob2_test = resend(&xbasis_vec(z), &xbasis_vec(z ^ s));

        // Bob1 tests (resent state chosen with probability 1/2), Bob2 encodes (1/4).
        let purified = measure_pairs(&omega, t1, k2)?;
        let expected = direct(&tensor(&bob1_test, &encoding_unitary(z, s)), 1.0 / 8.0)?;
        worst = worst.max(half_trace_norm(&purified, &expected)?);

        let purified = measure_pairs(&omega, k1, t2)?;
        let expected = direct(&tensor(&encoding_unitary(x, y), &bob2_test), 1.0 / 8.0)?;
        worst = worst.max(half_trace_norm(&purified, &expected)?);

        let purified = measure_pairs(&omega, t1, t2)?;
        let expected = direct(&tensor(&bob1_test, &bob2_test), 1.0 / 4.0)?;
        worst = worst.max(half_trace_norm(&purified, &expected)?);

        // Alice's qubit given Bob1's outcome x and Bob2's outcome z, times the
        // states the Bobs resend.
        let collapsed = conjugate_local(
            rho.matrix(),
            3,
            &[1, 2],
            &tensor(&zbasis_vec(x).projector(), &xbasis_vec(z).projector()),
        )?;
        let rho_a = partial_trace_matrix(&collapsed, &[2, 2, 2], &[0])?;
        let factorized = tensor_all(&[
            &rho_a.scale_real(0.25),
            &xbasis_vec(y).projector(),
            &xbasis_vec(z ^ s).projector(),
        ]);
        worst = worst.max(half_trace_norm(&purified, &factorized)?);
    }
    Ok(worst)
}

/// Largest deviation of `p(x,y;z,s)` from 1/16 in the key-generation
/// distribution.
pub fn verify_uniform_outcome_probability(scenario: &NoiseScenario) -> Result<f64> {
    let marginal = keygen_distribution(scenario)?.marginal(&["x", "y", "z", "s"])?;
    Ok(marginal
        .probabilities()
        .iter()
        .map(|p| (p - 1.0 / 16.0).abs())
        .fold(0.0, f64::max))
}
