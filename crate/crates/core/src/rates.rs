//! Entropies, key/test measurement overlaps and key-rate lower bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channels::{NoiseScenario, ScenarioDescriptor};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, psd_sqrt, ComplexMatrix, DensityOp};
use crate::protocol::{
    keygen_distribution, test_b1_distribution, test_b2_distribution, LabeledDistribution,
};
use crate::states::{
    alice_key_family, alice_test_family_b1, alice_test_family_b2, MeasurementFamily,
};

/// Probabilities and eigenvalues below this contribute nothing to entropies.
pub const ENTROPY_FLOOR: f64 = 1e-12;

fn plogp_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values
        .into_iter()
        .filter(|&p| p >= ENTROPY_FLOOR)
        .map(|p| -p * p.log2())
        .sum()
}

fn check_disjoint(a: &[&str], b: &[&str]) -> Result<()> {
    match a.iter().find(|v| b.contains(v)) {
        Some(v) => Err(Error::OverlappingVariables(v.to_string())),
        None => Ok(()),
    }
}

/// Shannon entropy (bits) of the marginal on `vars`.
pub fn shannon_entropy(d: &LabeledDistribution, vars: &[&str]) -> Result<f64> {
    Ok(plogp_sum(d.marginal(vars)?.probabilities().iter().copied()))
}

/// `H(target | given)`; an empty `given` reduces to `H(target)`.
pub fn conditional_entropy(
    d: &LabeledDistribution,
    target: &[&str],
    given: &[&str],
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptyVariables);
    }
    check_disjoint(target, given)?;
    if given.is_empty() {
        return shannon_entropy(d, target);
    }
    let joint: Vec<&str> = target.iter().chain(given).copied().collect();
    Ok(shannon_entropy(d, &joint)? - shannon_entropy(d, given)?)
}

/// `I(a : b)`.
pub fn mutual_information(d: &LabeledDistribution, a: &[&str], b: &[&str]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyVariables);
    }
    check_disjoint(a, b)?;
    let joint: Vec<&str> = a.iter().chain(b).copied().collect();
    Ok(shannon_entropy(d, a)? + shannon_entropy(d, b)? - shannon_entropy(d, &joint)?)
}

/// Von Neumann entropy (bits).
pub fn von_neumann_entropy(rho: &DensityOp) -> Result<f64> {
    Ok(plogp_sum(hermitian_eigenvalues(rho.matrix())?))
}

/// `max ||sqrt(A) sqrt(B)||_inf^2` over all pairs of elements.
pub fn max_overlap(a: &MeasurementFamily, b: &MeasurementFamily) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let roots = |f: &MeasurementFamily| -> Result<Vec<ComplexMatrix>> {
        f.elements().iter().map(|(_, p)| psd_sqrt(p)).collect()
    };
    let (ra, rb) = (roots(a)?, roots(b)?);
    let mut worst = 0.0f64;
    for sa in &ra {
        for sb in &rb {
            let m = sa * sb;
            let gram = &m.dagger() * &m;
            // ||M||_inf^2 is the largest eigenvalue of M^dagger M
            worst = worst.max(hermitian_eigenvalues(&gram)?[0]);
        }
    }
    Ok(worst)
}

/// Overlap between Alice's rank-2 key family and her Bob1 test family,
/// maximized over the announced bit.
pub fn overlap_c() -> Result<f64> {
    let test = alice_test_family_b1();
    let mut worst = 0.0f64;
    for s in 0..2 {
        worst = worst.max(max_overlap(&alice_key_family(s, 2)?, &test)?);
    }
    Ok(worst)
}

/// Overlap between Alice's rank-4 key family and her Bob2 test family.
pub fn overlap_ctilde() -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..2 {
        worst = worst.max(max_overlap(
            &alice_key_family(s, 4)?,
            &alice_test_family_b2(s),
        )?);
    }
    Ok(worst)
}

/// The four conditional entropies the rate bounds depend on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateTerms {
    /// `(1/4) sum_{z,s} H(i,j | x,y)` over Bob1 test runs.
    pub h_test_b1: f64,
    /// `(1/8) sum_{x,y,s} H(k | z)` over Bob2 test runs.
    pub h_test_b2: f64,
    /// `(1/2) sum_s H(i,j | x,y)` over key runs.
    pub h_key_b1: f64,
    /// `(1/2) sum_s H(k | z)` over key runs.
    pub h_key_b2: f64,
}

impl RateTerms {
    pub fn r1(&self) -> f64 {
        2.0 - self.h_test_b1 - self.h_key_b1 - self.h_key_b2
    }

    pub fn r2(&self) -> f64 {
        1.0 - self.h_test_b2 - self.h_key_b1 - self.h_key_b2
    }
}

/// `sum_cells weight * H(target | given)` within each conditioning cell;
/// empty cells contribute nothing.
fn cell_average(
    d: &LabeledDistribution,
    cell_vars: &[&str],
    weight: f64,
    target: &[&str],
    given: &[&str],
) -> Result<f64> {
    let n = cell_vars.len();
    let mut total = 0.0;
    for idx in 0..1usize << n {
        let assignment: Vec<(&str, u8)> = cell_vars
            .iter()
            .enumerate()
            .map(|(p, v)| (*v, ((idx >> (n - 1 - p)) & 1) as u8))
            .collect();
        if let Some(cond) = d.condition(&assignment)? {
            total += weight * conditional_entropy(&cond, target, given)?;
        }
    }
    Ok(total)
}

/// Bob1 test term from a distribution over `(i,j,x,y,z,s)`.
pub fn h_test_b1(d: &LabeledDistribution) -> Result<f64> {
    cell_average(d, &["z", "s"], 0.25, &["i", "j"], &["x", "y"])
}

/// Bob2 test term from a distribution over `(k,x,y,z,s)`.
pub fn h_test_b2(d: &LabeledDistribution) -> Result<f64> {
    cell_average(d, &["x", "y", "s"], 0.125, &["k"], &["z"])
}

/// Bob1 key term from a distribution over `(i,j,k,x,y,z,s)`.
pub fn h_key_b1(d: &LabeledDistribution) -> Result<f64> {
    cell_average(d, &["s"], 0.5, &["i", "j"], &["x", "y"])
}

/// Bob2 key term from a distribution over `(i,j,k,x,y,z,s)`.
pub fn h_key_b2(d: &LabeledDistribution) -> Result<f64> {
    cell_average(d, &["s"], 0.5, &["k"], &["z"])
}

pub fn rate_terms(
    keygen: &LabeledDistribution,
    test_b1: &LabeledDistribution,
    test_b2: &LabeledDistribution,
) -> Result<RateTerms> {
    Ok(RateTerms {
        h_test_b1: h_test_b1(test_b1)?,
        h_test_b2: h_test_b2(test_b2)?,
        h_key_b1: h_key_b1(keygen)?,
        h_key_b2: h_key_b2(keygen)?,
    })
}

/// Lower bounds on both local key rates for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RatePoint {
    pub descriptor: ScenarioDescriptor,
    pub r1_lower: f64,
    pub r2_lower: f64,
    pub h_test_b1: f64,
    pub h_test_b2: f64,
    pub h_key_b1: f64,
    pub h_key_b2: f64,
}

impl RatePoint {
    pub fn from_terms(descriptor: ScenarioDescriptor, terms: RateTerms) -> Self {
        Self {
            descriptor,
            r1_lower: terms.r1(),
            r2_lower: terms.r2(),
            h_test_b1: terms.h_test_b1,
            h_test_b2: terms.h_test_b2,
            h_key_b1: terms.h_key_b1,
            h_key_b2: terms.h_key_b2,
        }
    }

    pub fn terms(&self) -> RateTerms {
        RateTerms {
            h_test_b1: self.h_test_b1,
            h_test_b2: self.h_test_b2,
            h_key_b1: self.h_key_b1,
            h_key_b2: self.h_key_b2,
        }
    }

    pub fn abort_p1(&self) -> bool {
        self.r1_lower < 0.0
    }

    pub fn abort_p2(&self) -> bool {
        self.r2_lower < 0.0
    }
}

pub fn rate_point(scenario: &NoiseScenario) -> Result<RatePoint> {
    let terms = rate_terms(
        &keygen_distribution(scenario)?,
        &test_b1_distribution(scenario)?,
        &test_b2_distribution(scenario)?,
    )?;
    Ok(RatePoint::from_terms(scenario.descriptor().clone(), terms))
}

/// Lower bound on the Alice-Bob1 key rate (bits per run).
pub fn key_rate_p1(scenario: &NoiseScenario) -> Result<f64> {
    let keygen = keygen_distribution(scenario)?;
    Ok(
        2.0 - h_test_b1(&test_b1_distribution(scenario)?)?
            - h_key_b1(&keygen)?
            - h_key_b2(&keygen)?,
    )
}

/// Lower bound on the Alice-Bob2 key rate (bits per run).
pub fn key_rate_p2(scenario: &NoiseScenario) -> Result<f64> {
    let keygen = keygen_distribution(scenario)?;
    Ok(
        1.0 - h_test_b2(&test_b2_distribution(scenario)?)?
            - h_key_b1(&keygen)?
            - h_key_b2(&keygen)?,
    )
}

/// Information quantities entering the general upper bounds on both rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBoundInputs {
    pub i_a1_b1: f64,
    pub i_a1_e_given_b2: f64,
    pub i_a2_b2: f64,
    pub i_a2_e_given_b1: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `(I(A1:B1) - I(A1:E|B2) - d1 - 2 d2 - d3, I(A2:B2) - I(A2:E|B1) - 2 d1 - d2 - d3)`.
pub fn general_rate_bounds(inputs: &RateBoundInputs) -> Result<(f64, f64)> {
    let all = [
        inputs.i_a1_b1,
        inputs.i_a1_e_given_b2,
        inputs.i_a2_b2,
        inputs.i_a2_e_given_b1,
        inputs.d1,
        inputs.d2,
        inputs.d3,
    ];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite bound input".into()));
    }
    for (name, value) in [("d1", inputs.d1), ("d2", inputs.d2), ("d3", inputs.d3)] {
        if value < 0.0 {
            return Err(Error::NegativeDelta { name, value });
        }
    }
    let r1 = inputs.i_a1_b1 - inputs.i_a1_e_given_b2 - inputs.d1 - 2.0 * inputs.d2 - inputs.d3;
    let r2 = inputs.i_a2_b2 - inputs.i_a2_e_given_b1 - 2.0 * inputs.d1 - inputs.d2 - inputs.d3;
    Ok((r1, r2))
}

/// Variable groups `A1, B1, A2, B2` of a joint distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyGroups {
    pub a1: Vec<String>,
    pub b1: Vec<String>,
    pub a2: Vec<String>,
    pub b2: Vec<String>,
}

impl KeyGroups {
    /// Key-run grouping: Alice's `(i,j)` against Bob1's `(x,y)`, Alice's `k`
    /// against Bob2's `z`.
    pub fn keygen() -> Self {
        let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
        Self {
            a1: v(&["i", "j"]),
            b1: v(&["x", "y"]),
            a2: v(&["k"]),
            b2: v(&["z"]),
        }
    }

    fn named(&self) -> [(&'static str, Vec<&str>); 4] {
        fn r(g: &[String]) -> Vec<&str> {
            g.iter().map(String::as_str).collect()
        }
        [
            ("A1", r(&self.a1)),
            ("B1", r(&self.b1)),
            ("A2", r(&self.a2)),
            ("B2", r(&self.b2)),
        ]
    }
}

/// Smallest slack found for each inequality (negative means violated) and
/// the instance that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct InequalityReport {
    pub three_way_min_slack: f64,
    pub three_way_worst: String,
    pub cross_pair_min_slack: f64,
    pub cross_pair_worst: String,
}

impl InequalityReport {
    pub fn min_slack(&self) -> f64 {
        self.three_way_min_slack.min(self.cross_pair_min_slack)
    }
}

/// `I(S:U) + I(T:SU) - I(S:T) - I(T:U)`, non-negative for every distribution.
pub fn three_way_slack(d: &LabeledDistribution, s: &[&str], t: &[&str], u: &[&str]) -> Result<f64> {
    let su: Vec<&str> = s.iter().chain(u).copied().collect();
    Ok(
        mutual_information(d, s, u)? + mutual_information(d, t, &su)?
            - mutual_information(d, s, t)?
            - mutual_information(d, t, u)?,
    )
}

/// Smallest [`three_way_slack`] over `samples` seeded random distributions on
/// four bits, grouped as `{a}`, `{b,c}`, `{d}` in every order. Cubed uniform
/// weights make near-deterministic distributions common.
pub fn three_way_random_min_slack(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: [&[&str]; 3] = [&["a"], &["b", "c"], &["d"]];
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let weights: Vec<f64> = (0..16).map(|_| rng.gen::<f64>().powi(3)).collect();
        let d = LabeledDistribution::from_weights(&["a", "b", "c", "d"], weights)?;
        for (x, y, z) in [
            (0, 1, 2),
            (0, 2, 1),
            (1, 0, 2),
            (1, 2, 0),
            (2, 0, 1),
            (2, 1, 0),
        ] {
            worst = worst.min(three_way_slack(&d, groups[x], groups[y], groups[z])?);
        }
    }
    Ok(worst)
}

/// Evaluates the three-variable information inequality on every ordered
/// triple of distinct groups, and the two cross-pair bounds
/// `I(A1:A2B2), I(A1B1:A2) <= H(A1|B1) + H(A2|B2) + I(B1:B2)`.
pub fn check_information_inequalities(
    d: &LabeledDistribution,
    groups: &KeyGroups,
) -> Result<InequalityReport> {
    let named = groups.named();
    for (name, g) in &named {
        if g.is_empty() {
            return Err(Error::Invalid(format!("variable group {name} is empty")));
        }
        for v in g {
            d.index_of(v)?;
        }
    }
    let mut report = InequalityReport {
        three_way_min_slack: f64::INFINITY,
        three_way_worst: String::new(),
        cross_pair_min_slack: f64::INFINITY,
        cross_pair_worst: String::new(),
    };
    for (a, (na, s)) in named.iter().enumerate() {
        for (b, (nb, t)) in named.iter().enumerate() {
            for (c, (nc, u)) in named.iter().enumerate() {
                if a == b || b == c || a == c {
                    continue;
                }
                let slack = three_way_slack(d, s, t, u)?;
                if slack < report.three_way_min_slack {
                    report.three_way_min_slack = slack;
                    report.three_way_worst = format!("S={na},T={nb},U={nc}");
                }
            }
        }
    }
    let [(_, a1), (_, b1), (_, a2), (_, b2)] = &named;
    let budget = conditional_entropy(d, a1, b1)?
        + conditional_entropy(d, a2, b2)?
        + mutual_information(d, b1, b2)?;
    let a2b2: Vec<&str> = a2.iter().chain(b2).copied().collect();
    let a1b1: Vec<&str> = a1.iter().chain(b1).copied().collect();
    for (label, value) in [
        ("I(A1:A2B2)", mutual_information(d, a1, &a2b2)?),
        ("I(A1B1:A2)", mutual_information(d, &a1b1, a2)?),
    ] {
        let slack = budget - value;
        if slack < report.cross_pair_min_slack {
            report.cross_pair_min_slack = slack;
            report.cross_pair_worst = label.to_string();
        }
    }
    Ok(report)
}
