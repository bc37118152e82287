//! Exact outcome distributions of the protocol's key and test runs.
//!
//! Variable names used throughout: Alice's outcomes `i, j, k`, Bob1's bits
//! `x, y`, Bob2's bits `z, s` (with `s` the publicly announced bit).

use std::fmt;

use crate::channels::NoiseScenario;
use crate::error::{Error, Result};
use crate::linalg::{apply_kraus_on, conjugate_local, tensor, ComplexMatrix, DensityOp};
use crate::states::{
    alice_test_family_b1, alice_test_family_b2, encoding_unitary, g_state, ghz3, xbasis_vec,
    zbasis_vec,
};

/// Entries more negative than this are rejected; smaller excursions clamp to 0.
pub const NEGATIVE_TOL: f64 = 1e-12;
pub const SUM_TOL: f64 = 1e-9;
/// Conditioning cells lighter than this are treated as empty.
pub const EMPTY_CELL: f64 = 1e-14;

pub const KEYGEN_VARS: [&str; 7] = ["i", "j", "k", "x", "y", "z", "s"];
pub const TEST_B1_VARS: [&str; 6] = ["i", "j", "x", "y", "z", "s"];
pub const TEST_B2_VARS: [&str; 5] = ["k", "x", "y", "z", "s"];
pub const TEST_BOTH_VARS: [&str; 7] = KEYGEN_VARS;

/// Dense joint distribution over named bits. The first variable is the most
/// significant bit of the table index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDistribution {
    vars: Vec<String>,
    probs: Vec<f64>,
}

impl LabeledDistribution {
    pub fn new(vars: &[&str], probs: Vec<f64>) -> Result<Self> {
        let mut d = Self::unnormalized(vars, probs)?;
        let total: f64 = d.probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        d.probs.iter_mut().for_each(|p| *p = p.max(0.0));
        Ok(d)
    }

    /// Normalizes non-negative weights (for example, outcome counts).
    pub fn from_weights(vars: &[&str], weights: Vec<f64>) -> Result<Self> {
        let mut d = Self::unnormalized(vars, weights)?;
        let total: f64 = d.probs.iter().map(|p| p.max(0.0)).sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("total weight is zero".into()));
        }
        d.probs.iter_mut().for_each(|p| *p = p.max(0.0) / total);
        Ok(d)
    }

    fn unnormalized(vars: &[&str], probs: Vec<f64>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::EmptyVariables);
        }
        for (n, v) in vars.iter().enumerate() {
            if vars[..n].contains(v) {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate variable `{v}`"
                )));
            }
        }
        if probs.len() != 1 << vars.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} entries for {} binary variables",
                probs.len(),
                vars.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < -NEGATIVE_TOL) {
            return Err(Error::InvalidDistribution(format!("invalid entry {p}")));
        }
        Ok(Self {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            probs,
        })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    fn bit_of(&self, idx: usize, var: usize) -> u8 {
        ((idx >> (self.vars.len() - 1 - var)) & 1) as u8
    }

    /// Probability of a full assignment given in variable order.
    pub fn prob(&self, bits: &[u8]) -> f64 {
        assert_eq!(bits.len(), self.vars.len());
        let idx = bits
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | usize::from(b & 1));
        self.probs[idx]
    }

    /// Total probability of a partial assignment.
    pub fn mass(&self, assignment: &[(&str, u8)]) -> Result<f64> {
        let fixed = self.resolve(assignment)?;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(idx, _)| fixed.iter().all(|&(v, b)| self.bit_of(*idx, v) == b))
            .map(|(_, p)| p)
            .sum())
    }

    fn resolve(&self, assignment: &[(&str, u8)]) -> Result<Vec<(usize, u8)>> {
        let mut out: Vec<(usize, u8)> = Vec::with_capacity(assignment.len());
        for &(name, b) in assignment {
            let v = self.index_of(name)?;
            if out.iter().any(|&(w, _)| w == v) {
                return Err(Error::OverlappingVariables(name.to_string()));
            }
            if b > 1 {
                return Err(Error::Invalid(format!(
                    "value {b} for `{name}` is not a bit"
                )));
            }
            out.push((v, b));
        }
        Ok(out)
    }

    /// Marginal on `names`, in the order given.
    pub fn marginal(&self, names: &[&str]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyVariables);
        }
        let positions = names
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        for (n, p) in positions.iter().enumerate() {
            if positions[..n].contains(p) {
                return Err(Error::OverlappingVariables(names[n].to_string()));
            }
        }
        let mut probs = vec![0.0; 1 << names.len()];
        for (idx, p) in self.probs.iter().enumerate() {
            let sub = positions.iter().fold(0usize, |acc, &v| {
                (acc << 1) | usize::from(self.bit_of(idx, v))
            });
            probs[sub] += p;
        }
        Ok(Self {
            vars: names.iter().map(|s| s.to_string()).collect(),
            probs,
        })
    }

    /// Distribution of the remaining variables given a partial assignment, or
    /// `None` when the conditioning cell has (numerically) zero mass.
    pub fn condition(&self, given: &[(&str, u8)]) -> Result<Option<Self>> {
        let fixed = self.resolve(given)?;
        let rest: Vec<usize> = (0..self.vars.len())
            .filter(|v| fixed.iter().all(|&(w, _)| w != *v))
            .collect();
        if rest.is_empty() {
            return Err(Error::EmptyVariables);
        }
        let mut probs = vec![0.0; 1 << rest.len()];
        let mut total = 0.0;
        for (idx, p) in self.probs.iter().enumerate() {
            if fixed.iter().all(|&(v, b)| self.bit_of(idx, v) == b) {
                let sub = rest.iter().fold(0usize, |acc, &v| {
                    (acc << 1) | usize::from(self.bit_of(idx, v))
                });
                probs[sub] += p;
                total += p;
            }
        }
        if total < EMPTY_CELL {
            return Ok(None);
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Some(Self {
            vars: rest.iter().map(|&v| self.vars[v].clone()).collect(),
            probs,
        }))
    }
}

/// Per-run choice of a Bob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunType {
    Key,
    Test,
}

impl RunType {
    pub fn symbol(self) -> char {
        match self {
            RunType::Key => 'K',
            RunType::Test => 'T',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'K' => Some(RunType::Key),
            'T' => Some(RunType::Test),
            _ => None,
        }
    }
}

impl fmt::Display for RunType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Run types of both Bobs together with the channels they use.
#[derive(Clone, Debug)]
pub struct RunConfig<'a> {
    pub bob1: RunType,
    pub bob2: RunType,
    pub scenario: &'a NoiseScenario,
}

impl RunConfig<'_> {
    /// Outcome distribution for this run-type pair. Alice's measurement
    /// follows the announced run types: key runs by both use the full
    /// decoding basis, a single test run uses the matching test family, and
    /// two test runs use both test families at once.
    pub fn distribution(&self) -> Result<LabeledDistribution> {
        match (self.bob1, self.bob2) {
            (RunType::Key, RunType::Key) => keygen_distribution(self.scenario),
            (RunType::Test, RunType::Key) => test_b1_distribution(self.scenario),
            (RunType::Key, RunType::Test) => test_b2_distribution(self.scenario),
            (RunType::Test, RunType::Test) => test_both_distribution(self.scenario),
        }
    }
}

/// GHZ state after the forward channel on Bob1's and Bob2's wires.
pub fn shared_state(scenario: &NoiseScenario) -> Result<DensityOp> {
    let ghz = ghz3().density();
    let out = apply_kraus_on(scenario.forward(), ghz.matrix(), 3, &[1, 2])?;
    DensityOp::new(out)
}

/// Applies the Bobs' joint operation on wires (B1, B2) followed by the
/// backward channel. The result is unnormalized when `op` is not unitary.
fn returned(
    rho: &DensityOp,
    op: &ComplexMatrix,
    scenario: &NoiseScenario,
) -> Result<ComplexMatrix> {
    let after = conjugate_local(rho.matrix(), 3, &[1, 2], op)?;
    apply_kraus_on(scenario.backward(), &after, 3, &[1, 2])
}

/// `|out><in|` on one qubit: measure `in`, resend `out`.
fn measure_resend(
    measured: &crate::linalg::PureStateVec,
    sent: &crate::linalg::PureStateVec,
) -> ComplexMatrix {
    ComplexMatrix::outer(sent.amplitudes(), measured.amplitudes())
}

fn cells4() -> impl Iterator<Item = (u8, u8, u8, u8)> {
    (0..16u8).map(|n| (n >> 3 & 1, n >> 2 & 1, n >> 1 & 1, n & 1))
}

/// Both Bobs encode with uniformly random `(x,y)` and `(z,s)`; Alice
/// measures in the decoding basis for the announced `s`.
pub fn keygen_distribution(scenario: &NoiseScenario) -> Result<LabeledDistribution> {
    let rho = shared_state(scenario)?;
    let mut probs = vec![0.0; 128];
    for (x, y, z, s) in cells4() {
        let op = tensor(&encoding_unitary(x, y), &encoding_unitary(z, s));
        let m = returned(&rho, &op, scenario)?;
        let cell = usize::from(x << 3 | y << 2 | z << 1 | s);
        for ijk in 0..8u8 {
            let g = g_state(s, ijk >> 2 & 1, ijk >> 1 & 1, ijk & 1);
            let p = m.expectation(g.amplitudes()).re / 16.0;
            probs[usize::from(ijk) << 4 | cell] = p;
        }
    }
    LabeledDistribution::new(&KEYGEN_VARS, probs)
}

/// Bob1 measures his qubit in the computational basis (outcome `x`) and
/// resends `|y_x>` for uniform `y`; Bob2 encodes `(z,s)`; Alice measures the
/// Bob1 test family.
pub fn test_b1_distribution(scenario: &NoiseScenario) -> Result<LabeledDistribution> {
    let rho = shared_state(scenario)?;
    let family = alice_test_family_b1();
    let mut probs = vec![0.0; 64];
    for (x, y, z, s) in cells4() {
        let op = tensor(
            &measure_resend(&zbasis_vec(x), &xbasis_vec(y)),
            &encoding_unitary(z, s),
        );
        let m = returned(&rho, &op, scenario)?;
        let cell = usize::from(x << 3 | y << 2 | z << 1 | s);
        for (label, proj) in family.elements() {
            let (i, j) = (label.bits()[0], label.bits()[1]);
            let p = (proj * &m).trace().re / 8.0;
            probs[usize::from(i << 1 | j) << 4 | cell] = p;
        }
    }
    LabeledDistribution::new(&TEST_B1_VARS, probs)
}

/// Bob1 encodes `(x,y)`; Bob2 measures in the x basis (outcome `z`) and
/// resends `|w_x>` for uniform `w`, announcing `s = z xor w`; Alice measures
/// the Bob2 test family for `s`.
pub fn test_b2_distribution(scenario: &NoiseScenario) -> Result<LabeledDistribution> {
    let rho = shared_state(scenario)?;
    let families = [alice_test_family_b2(0), alice_test_family_b2(1)];
    let mut probs = vec![0.0; 32];
    for (x, y, z, s) in cells4() {
        let op = tensor(
            &encoding_unitary(x, y),
            &measure_resend(&xbasis_vec(z), &xbasis_vec(z ^ s)),
        );
        let m = returned(&rho, &op, scenario)?;
        let cell = usize::from(x << 3 | y << 2 | z << 1 | s);
        for (label, proj) in families[usize::from(s)].elements() {
            let k = label.bits()[0];
            probs[usize::from(k) << 4 | cell] = (proj * &m).trace().re / 8.0;
        }
    }
    LabeledDistribution::new(&TEST_B2_VARS, probs)
}

/// Both Bobs run their test operations; Alice measures both test families,
/// which commute.
pub fn test_both_distribution(scenario: &NoiseScenario) -> Result<LabeledDistribution> {
    let rho = shared_state(scenario)?;
    let b1 = alice_test_family_b1();
    let b2 = [alice_test_family_b2(0), alice_test_family_b2(1)];
    let mut probs = vec![0.0; 128];
    for (x, y, z, s) in cells4() {
        let op = tensor(
            &measure_resend(&zbasis_vec(x), &xbasis_vec(y)),
            &measure_resend(&xbasis_vec(z), &xbasis_vec(z ^ s)),
        );
        let m = returned(&rho, &op, scenario)?;
        let cell = usize::from(x << 3 | y << 2 | z << 1 | s);
        for (l1, p1) in b1.elements() {
            for (l2, p2) in b2[usize::from(s)].elements() {
                let ijk = l1.bits()[0] << 2 | l1.bits()[1] << 1 | l2.bits()[0];
                let p = (&(p1 * p2) * &m).trace().re / 4.0;
                probs[usize::from(ijk) << 4 | cell] = p;
            }
        }
    }
    LabeledDistribution::new(&TEST_BOTH_VARS, probs)
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange {
            name,
            value: v,
            min: 0.0,
            max: 1.0,
        })
    }
}

/// Closed-form `p(i xor x, j xor y, k xor z | x,y;z,s)` under independent
/// depolarizing noise `lambda` (Bob1) and `delta` (Bob2) in both directions.
pub fn closed_form_p(lambda: f64, delta: f64, i: u8, j: u8, k: u8) -> Result<f64> {
    check_unit("lambda", lambda)?;
    check_unit("delta", delta)?;
    let mu = lambda * (2.0 - lambda);
    let nu = delta * (2.0 - delta);
    Ok(match (i & 1, j & 1, k & 1) {
        (0, 0, 0) => 1.0 + 5.0 / 8.0 * mu * nu - 0.75 * (mu + nu),
        (0, 0, 1) | (0, 1, 1) => (2.0 - mu) * nu / 8.0,
        (0, 1, 0) => (mu + nu) / 4.0 - 3.0 / 8.0 * mu * nu,
        (1, 0, 0) | (1, 1, 0) => (2.0 - nu) * mu / 8.0,
        _ => mu * nu / 8.0,
    })
}

/// Closed-form `q(i xor x, j xor y | x,y;z,s)` for Bob1's test runs.
pub fn closed_form_q(lambda: f64, i: u8, j: u8) -> Result<f64> {
    check_unit("lambda", lambda)?;
    Ok(match (i & 1, j & 1) {
        (0, 0) => (2.0 - lambda).powi(2) / 4.0,
        (1, 1) => lambda * lambda / 4.0,
        _ => lambda * (2.0 - lambda) / 4.0,
    })
}

/// Closed-form probability that Alice's Bob2 test outcome differs from `z`
/// by `flip`.
pub fn closed_form_qtilde(delta: f64, flip: u8) -> Result<f64> {
    check_unit("delta", delta)?;
    Ok(if flip & 1 == 0 {
        1.0 - delta / 2.0
    } else {
        delta / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{make_scenario, ScenarioDescriptor};

    fn depol(lambda: f64, delta: f64) -> NoiseScenario {
        make_scenario(&ScenarioDescriptor::DepolIndep { lambda, delta }).unwrap()
    }

    #[test]
    fn distribution_basics() {
        let d = LabeledDistribution::new(&["a", "b"], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(d.prob(&[1, 0]), 0.3);
        let m = d.marginal(&["b"]).unwrap();
        assert!((m.probabilities()[0] - 0.4).abs() < 1e-15);
        let c = d.condition(&[("a", 1)]).unwrap().unwrap();
        assert!((c.probabilities()[1] - 0.4 / 0.7).abs() < 1e-15);
        let swapped = d.marginal(&["b", "a"]).unwrap();
        assert_eq!(swapped.prob(&[0, 1]), 0.3);
        assert!((d.mass(&[("b", 1)]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(d.marginal(&["c"]), Err(Error::UnknownVariable(_))));
        assert!(matches!(d.marginal(&[]), Err(Error::EmptyVariables)));
        assert!(LabeledDistribution::new(&["a"], vec![0.5, 0.6]).is_err());
        assert!(LabeledDistribution::new(&["a"], vec![1.1, -0.1]).is_err());
        let zero = LabeledDistribution::new(&["a", "b"], vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(zero.condition(&[("a", 1)]).unwrap().is_none());
    }

    #[test]
    fn shared_state_examples() {
        let rho = shared_state(&NoiseScenario::identity()).unwrap();
        assert!(rho.matrix().approx_eq(&ghz3().projector(), 1e-15));
        let rho = shared_state(&depol(1.0, 1.0)).unwrap();
        let bobs = crate::linalg::partial_trace(&rho, &[2, 2, 2], &[1, 2]).unwrap();
        assert!(bobs
            .matrix()
            .approx_eq(&ComplexMatrix::identity(4).scale_real(0.25), 1e-15));
        assert!((rho.matrix().trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_keygen_decodes_exactly() {
        let d = keygen_distribution(&NoiseScenario::identity()).unwrap();
        for idx in 0..128usize {
            let bits: Vec<u8> = (0..7).map(|p| ((idx >> (6 - p)) & 1) as u8).collect();
            let (i, j, k, x, y, z) = (bits[0], bits[1], bits[2], bits[3], bits[4], bits[5]);
            let want = if (i, j, k) == (x, y, z) {
                1.0 / 16.0
            } else {
                0.0
            };
            assert!((d.prob(&bits) - want).abs() < 1e-12, "{bits:?}");
        }
    }

    #[test]
    fn identity_test_runs_reproduce_bob_values() {
        let d = test_b1_distribution(&NoiseScenario::identity()).unwrap();
        let agree: f64 = (0..64usize)
            .filter(|idx| (idx >> 5 & 1, idx >> 4 & 1) == (idx >> 3 & 1, idx >> 2 & 1))
            .map(|idx| d.probabilities()[idx])
            .sum();
        assert!((agree - 1.0).abs() < 1e-12);
        let d = test_b2_distribution(&NoiseScenario::identity()).unwrap();
        let agree: f64 = (0..32usize)
            .filter(|idx| idx >> 4 & 1 == idx >> 1 & 1)
            .map(|idx| d.probabilities()[idx])
            .sum();
        assert!((agree - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_matches_closed_forms() {
        for (lambda, delta) in [(0.0, 0.0), (0.3, 0.6), (1.0, 0.2), (0.7, 1.0)] {
            let sc = depol(lambda, delta);
            let kg = keygen_distribution(&sc).unwrap();
            let t1 = test_b1_distribution(&sc).unwrap();
            let t2 = test_b2_distribution(&sc).unwrap();
            for (x, y, z, s) in cells4() {
                for ijk in 0..8u8 {
                    let (i, j, k) = (ijk >> 2 & 1, ijk >> 1 & 1, ijk & 1);
                    let p = kg.prob(&[i ^ x, j ^ y, k ^ z, x, y, z, s]) * 16.0;
                    assert!((p - closed_form_p(lambda, delta, i, j, k).unwrap()).abs() < 1e-10);
                }
                for ij in 0..4u8 {
                    let (i, j) = (ij >> 1, ij & 1);
                    let q = t1.prob(&[i ^ x, j ^ y, x, y, z, s]) * 16.0;
                    assert!((q - closed_form_q(lambda, i, j).unwrap()).abs() < 1e-10);
                }
                for flip in 0..2u8 {
                    let q = t2.prob(&[flip ^ z, x, y, z, s]) * 16.0;
                    assert!((q - closed_form_qtilde(delta, flip).unwrap()).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_p(0.0, 0.0, 0, 0, 0).unwrap(), 1.0);
        for ijk in 0..8u8 {
            let p = closed_form_p(1.0, 1.0, ijk >> 2 & 1, ijk >> 1 & 1, ijk & 1).unwrap();
            assert!((p - 0.125).abs() < 1e-15);
        }
        for (l, d) in [(0.2, 0.9), (0.55, 0.1)] {
            let total: f64 = (0..8u8)
                .map(|n| closed_form_p(l, d, n >> 2 & 1, n >> 1 & 1, n & 1).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
        assert_eq!(closed_form_q(0.0, 0, 0).unwrap(), 1.0);
        assert!((closed_form_q(1.0, 1, 0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(closed_form_qtilde(1.0, 0).unwrap(), 0.5);
        assert!(closed_form_p(1.5, 0.0, 0, 0, 0).is_err());
        assert!(closed_form_qtilde(-0.5, 0).is_err());
    }

    #[test]
    fn full_amplitude_damping_destroys_x_information() {
        let sc = make_scenario(&ScenarioDescriptor::AmpDampIndep {
            gamma1: 0.4,
            gamma2: 1.0,
        })
        .unwrap();
        let d = test_b2_distribution(&sc).unwrap();
        let agree = d.marginal(&["k", "z"]).unwrap();
        let p_equal = agree.prob(&[0, 0]) + agree.prob(&[1, 1]);
        assert!((p_equal - 0.5).abs() < 1e-12);
    }

    #[test]
    fn run_config_dispatch() {
        let sc = depol(0.2, 0.4);
        let cfg = RunConfig {
            bob1: RunType::Test,
            bob2: RunType::Test,
            scenario: &sc,
        };
        let d = cfg.distribution().unwrap();
        assert_eq!(d.vars().len(), 7);
        let total: f64 = d.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(RunType::from_symbol('K'), Some(RunType::Key));
        assert_eq!(RunType::Test.to_string(), "T");
    }
}
