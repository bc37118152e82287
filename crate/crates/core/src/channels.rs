//! Kraus-operator noise models and forward/backward transmission scenarios.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{pauli, tensor, ComplexMatrix};

/// Tolerance on `sum K^dagger K = I`.
pub const COMPLETENESS_TOL: f64 = 1e-12;

/// Operator-sum representation of a channel on a `dim`-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    dim: usize,
    operators: Vec<ComplexMatrix>,
}

impl KrausSet {
    /// Builds a channel after checking shapes and completeness.
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = operators
            .first()
            .map(ComplexMatrix::rows)
            .ok_or_else(|| Error::Invalid("Kraus set has no operators".into()))?;
        for op in &operators {
            if op.rows() != dim || op.cols() != dim {
                return Err(Error::DimensionMismatch(op.rows(), dim));
            }
        }
        let set = Self { dim, operators };
        set.check_completeness()?;
        Ok(set)
    }

    /// Skips the completeness check. Anything that applies the set checks it
    /// again, so a broken set is caught at first use.
    pub fn from_operators_unchecked(dim: usize, operators: Vec<ComplexMatrix>) -> Self {
        Self { dim, operators }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            operators: vec![ComplexMatrix::identity(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    /// Largest entrywise deviation of `sum K^dagger K` from the identity.
    pub fn completeness_defect(&self) -> f64 {
        let mut acc = ComplexMatrix::zeros(self.dim, self.dim);
        for k in &self.operators {
            if k.rows() != self.dim || k.cols() != self.dim {
                return f64::INFINITY;
            }
            acc = &acc + &(&k.dagger() * k);
        }
        acc.max_abs_diff(&ComplexMatrix::identity(self.dim))
    }

    pub fn check_completeness(&self) -> Result<()> {
        let defect = self.completeness_defect();
        if defect > COMPLETENESS_TOL {
            Err(Error::NotTracePreserving(defect))
        } else {
            Ok(())
        }
    }
}

fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::ParameterOutOfRange {
            name,
            value,
            min: 0.0,
            max: 1.0,
        })
    }
}

/// Single-qubit depolarizing channel with strength `lambda`.
pub fn depolarizing(lambda: f64) -> Result<KrausSet> {
    check_unit_interval("lambda", lambda)?;
    let keep = (1.0 - 0.75 * lambda).sqrt();
    let flip = (lambda / 4.0).sqrt();
    KrausSet::new(vec![
        pauli::identity().scale_real(keep),
        pauli::x().scale_real(flip),
        pauli::y().scale_real(flip),
        pauli::z().scale_real(flip),
    ])
}

/// Single-qubit amplitude damping with decay probability `gamma`.
pub fn amplitude_damping(gamma: f64) -> Result<KrausSet> {
    check_unit_interval("gamma", gamma)?;
    let a0 = ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, (1.0 - gamma).sqrt()])?;
    let a1 = ComplexMatrix::from_real(2, 2, &[0.0, gamma.sqrt(), 0.0, 0.0])?;
    KrausSet::new(vec![a0, a1])
}

/// Independent action of two single-qubit channels on a qubit pair.
pub fn product2(first: &KrausSet, second: &KrausSet) -> Result<KrausSet> {
    if first.dim() != 2 {
        return Err(Error::DimensionMismatch(first.dim(), 2));
    }
    if second.dim() != 2 {
        return Err(Error::DimensionMismatch(second.dim(), 2));
    }
    let ops = first
        .operators()
        .iter()
        .flat_map(|a| second.operators().iter().map(move |b| tensor(a, b)))
        .collect();
    KrausSet::new(ops)
}

/// Two-qubit Pauli channel applying the same Pauli to both qubits.
pub fn correlated_depolarizing(lambda: f64) -> Result<KrausSet> {
    check_unit_interval("lambda", lambda)?;
    let keep = (1.0 - 0.75 * lambda).sqrt();
    let flip = (lambda / 4.0).sqrt();
    KrausSet::new(vec![
        ComplexMatrix::identity(4).scale_real(keep),
        tensor(&pauli::x(), &pauli::x()).scale_real(flip),
        tensor(&pauli::y(), &pauli::y()).scale_real(flip),
        tensor(&pauli::z(), &pauli::z()).scale_real(flip),
    ])
}

/// Named noise model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Identity,
    DepolIndep,
    DepolForwardOnly,
    DepolBackwardOnly,
    DepolCorr,
    AmpDampIndep,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Identity,
        ModelKind::DepolIndep,
        ModelKind::DepolForwardOnly,
        ModelKind::DepolBackwardOnly,
        ModelKind::DepolCorr,
        ModelKind::AmpDampIndep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Identity => "identity",
            ModelKind::DepolIndep => "depol-indep",
            ModelKind::DepolForwardOnly => "depol-forward-only",
            ModelKind::DepolBackwardOnly => "depol-backward-only",
            ModelKind::DepolCorr => "depol-corr",
            ModelKind::AmpDampIndep => "ampdamp-indep",
        }
    }

    /// Names of the two parameters, in sweep-axis order.
    pub fn parameter_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Identity => &[],
            ModelKind::DepolIndep | ModelKind::DepolForwardOnly | ModelKind::DepolBackwardOnly => {
                &["lambda", "delta"]
            }
            ModelKind::DepolCorr => &["lambda_f", "lambda_b"],
            ModelKind::AmpDampIndep => &["gamma1", "gamma2"],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// A noise model together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioDescriptor {
    Identity,
    /// `lambda` on Bob1's wire and `delta` on Bob2's wire, both directions.
    DepolIndep {
        lambda: f64,
        delta: f64,
    },
    DepolForwardOnly {
        lambda: f64,
        delta: f64,
    },
    DepolBackwardOnly {
        lambda: f64,
        delta: f64,
    },
    DepolCorr {
        lambda_f: f64,
        lambda_b: f64,
    },
    AmpDampIndep {
        gamma1: f64,
        gamma2: f64,
    },
    /// Hand-built channels; not reachable from the model names.
    Custom(String),
}

impl ScenarioDescriptor {
    /// Builds a descriptor from a model and its two parameters in
    /// [`ModelKind::parameter_names`] order. The identity model ignores them.
    pub fn from_model(kind: ModelKind, p1: f64, p2: f64) -> Self {
        match kind {
            ModelKind::Identity => ScenarioDescriptor::Identity,
            ModelKind::DepolIndep => ScenarioDescriptor::DepolIndep {
                lambda: p1,
                delta: p2,
            },
            ModelKind::DepolForwardOnly => ScenarioDescriptor::DepolForwardOnly {
                lambda: p1,
                delta: p2,
            },
            ModelKind::DepolBackwardOnly => ScenarioDescriptor::DepolBackwardOnly {
                lambda: p1,
                delta: p2,
            },
            ModelKind::DepolCorr => ScenarioDescriptor::DepolCorr {
                lambda_f: p1,
                lambda_b: p2,
            },
            ModelKind::AmpDampIndep => ScenarioDescriptor::AmpDampIndep {
                gamma1: p1,
                gamma2: p2,
            },
        }
    }

    pub fn model(&self) -> Option<ModelKind> {
        Some(match self {
            ScenarioDescriptor::Identity => ModelKind::Identity,
            ScenarioDescriptor::DepolIndep { .. } => ModelKind::DepolIndep,
            ScenarioDescriptor::DepolForwardOnly { .. } => ModelKind::DepolForwardOnly,
            ScenarioDescriptor::DepolBackwardOnly { .. } => ModelKind::DepolBackwardOnly,
            ScenarioDescriptor::DepolCorr { .. } => ModelKind::DepolCorr,
            ScenarioDescriptor::AmpDampIndep { .. } => ModelKind::AmpDampIndep,
            ScenarioDescriptor::Custom(_) => return None,
        })
    }

    /// `(name, value)` pairs in parameter order.
    pub fn parameters(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ScenarioDescriptor::Identity | ScenarioDescriptor::Custom(_) => vec![],
            ScenarioDescriptor::DepolIndep { lambda, delta }
            | ScenarioDescriptor::DepolForwardOnly { lambda, delta }
            | ScenarioDescriptor::DepolBackwardOnly { lambda, delta } => {
                vec![("lambda", lambda), ("delta", delta)]
            }
            ScenarioDescriptor::DepolCorr { lambda_f, lambda_b } => {
                vec![("lambda_f", lambda_f), ("lambda_b", lambda_b)]
            }
            ScenarioDescriptor::AmpDampIndep { gamma1, gamma2 } => {
                vec![("gamma1", gamma1), ("gamma2", gamma2)]
            }
        }
    }
}

impl fmt::Display for ScenarioDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioDescriptor::Custom(name) => write!(f, "custom:{name}"),
            other => {
                write!(f, "{}", other.model().expect("named model"))?;
                let params = other.parameters();
                if !params.is_empty() {
                    let body: Vec<String> =
                        params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    write!(f, "({})", body.join(","))?;
                }
                Ok(())
            }
        }
    }
}

/// Forward (Alice to Bobs) and backward (Bobs to Alice) two-qubit channels.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseScenario {
    forward: KrausSet,
    backward: KrausSet,
    descriptor: ScenarioDescriptor,
}

impl NoiseScenario {
    /// Wraps hand-built channels; both must be two-qubit channels.
    pub fn custom(name: &str, forward: KrausSet, backward: KrausSet) -> Result<Self> {
        for ch in [&forward, &backward] {
            if ch.dim() != 4 {
                return Err(Error::DimensionMismatch(ch.dim(), 4));
            }
        }
        Ok(Self {
            forward,
            backward,
            descriptor: ScenarioDescriptor::Custom(name.to_string()),
        })
    }

    pub fn identity() -> Self {
        Self {
            forward: KrausSet::identity(4),
            backward: KrausSet::identity(4),
            descriptor: ScenarioDescriptor::Identity,
        }
    }

    pub fn forward(&self) -> &KrausSet {
        &self.forward
    }

    pub fn backward(&self) -> &KrausSet {
        &self.backward
    }

    pub fn descriptor(&self) -> &ScenarioDescriptor {
        &self.descriptor
    }
}

/// Builds the channels for a named model.
pub fn make_scenario(descriptor: &ScenarioDescriptor) -> Result<NoiseScenario> {
    let depol_pair =
        |l: f64, d: f64| -> Result<KrausSet> { product2(&depolarizing(l)?, &depolarizing(d)?) };
    let (forward, backward) = match *descriptor {
        ScenarioDescriptor::Identity => (KrausSet::identity(4), KrausSet::identity(4)),
        ScenarioDescriptor::DepolIndep { lambda, delta } => {
            let ch = depol_pair(lambda, delta)?;
            (ch.clone(), ch)
        }
        ScenarioDescriptor::DepolForwardOnly { lambda, delta } => {
            (depol_pair(lambda, delta)?, KrausSet::identity(4))
        }
        ScenarioDescriptor::DepolBackwardOnly { lambda, delta } => {
            (KrausSet::identity(4), depol_pair(lambda, delta)?)
        }
        ScenarioDescriptor::DepolCorr { lambda_f, lambda_b } => (
            correlated_depolarizing(lambda_f)?,
            correlated_depolarizing(lambda_b)?,
        ),
        ScenarioDescriptor::AmpDampIndep { gamma1, gamma2 } => {
            let ch = product2(&amplitude_damping(gamma1)?, &amplitude_damping(gamma2)?)?;
            (ch.clone(), ch)
        }
        ScenarioDescriptor::Custom(ref name) => {
            return Err(Error::UnknownModel(format!("custom:{name}")));
        }
    };
    Ok(NoiseScenario {
        forward,
        backward,
        descriptor: descriptor.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{apply_kraus, partial_trace, DensityOp, PureStateVec};
    use crate::states::{bell, encoding_unitary};

    fn rho_sample() -> DensityOp {
        DensityOp::new(
            ComplexMatrix::new(
                2,
                2,
                vec![
                    crate::linalg::re(0.65),
                    crate::linalg::c(0.2, -0.15),
                    crate::linalg::c(0.2, 0.15),
                    crate::linalg::re(0.35),
                ],
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn depolarizing_examples() {
        let zero = PureStateVec::basis(2, 0).density();
        assert!(depolarizing(0.0).unwrap().completeness_defect() < 1e-15);
        let out = apply_kraus(&depolarizing(0.0).unwrap(), &zero).unwrap();
        assert!(out.matrix().approx_eq(zero.matrix(), 1e-15));
        let out = apply_kraus(&depolarizing(1.0).unwrap(), &zero).unwrap();
        assert!(out
            .matrix()
            .approx_eq(&ComplexMatrix::diagonal(&[0.5, 0.5]), 1e-15));
        let out = apply_kraus(&depolarizing(0.5).unwrap(), &zero).unwrap();
        assert!(out
            .matrix()
            .approx_eq(&ComplexMatrix::diagonal(&[0.75, 0.25]), 1e-15));
    }

    #[test]
    fn parameters_out_of_range() {
        assert!(matches!(
            depolarizing(1.2),
            Err(Error::ParameterOutOfRange { name: "lambda", .. })
        ));
        assert!(matches!(
            depolarizing(-0.1),
            Err(Error::ParameterOutOfRange { .. })
        ));
        assert!(matches!(
            amplitude_damping(f64::NAN),
            Err(Error::ParameterOutOfRange { .. })
        ));
        assert!(matches!(
            correlated_depolarizing(2.0),
            Err(Error::ParameterOutOfRange { .. })
        ));
    }

    #[test]
    fn product2_examples() {
        let id = product2(&KrausSet::identity(2), &KrausSet::identity(2)).unwrap();
        assert_eq!(id.operators(), &[ComplexMatrix::identity(4)]);

        let rho = DensityOp::new(crate::linalg::tensor(
            rho_sample().matrix(),
            rho_sample().matrix(),
        ))
        .unwrap();
        let ch = product2(&depolarizing(0.7).unwrap(), &KrausSet::identity(2)).unwrap();
        let out = apply_kraus(&ch, &rho).unwrap();
        let second = partial_trace(&out, &[2, 2], &[1]).unwrap();
        assert!(second.matrix().approx_eq(rho_sample().matrix(), 1e-14));

        let full = product2(&depolarizing(1.0).unwrap(), &depolarizing(1.0).unwrap()).unwrap();
        let out = apply_kraus(&full, &bell(1, 1).density()).unwrap();
        assert!(out
            .matrix()
            .approx_eq(&ComplexMatrix::identity(4).scale_real(0.25), 1e-15));

        assert!(matches!(
            product2(&full, &KrausSet::identity(2)),
            Err(Error::DimensionMismatch(4, 2))
        ));
    }

    #[test]
    fn correlated_depolarizing_examples() {
        let ch = correlated_depolarizing(1.0).unwrap();
        let b00 = bell(0, 0).density();
        assert!(apply_kraus(&ch, &b00)
            .unwrap()
            .matrix()
            .approx_eq(b00.matrix(), 1e-15));
        let zz = PureStateVec::basis(4, 0).density();
        let out = apply_kraus(&ch, &zz).unwrap();
        assert!(out
            .matrix()
            .approx_eq(&ComplexMatrix::diagonal(&[0.5, 0.0, 0.0, 0.5]), 1e-15));
        let id = correlated_depolarizing(0.0).unwrap();
        assert!(apply_kraus(&id, &zz)
            .unwrap()
            .matrix()
            .approx_eq(zz.matrix(), 0.0));
    }

    #[test]
    fn amplitude_damping_examples() {
        let one = PureStateVec::basis(2, 1).density();
        let out = apply_kraus(&amplitude_damping(0.36).unwrap(), &one).unwrap();
        assert!(out
            .matrix()
            .approx_eq(&ComplexMatrix::diagonal(&[0.36, 0.64]), 1e-15));
        let out = apply_kraus(&amplitude_damping(0.0).unwrap(), &rho_sample()).unwrap();
        assert!(out.matrix().approx_eq(rho_sample().matrix(), 1e-15));
    }

    #[test]
    fn depolarizing_is_covariant_amplitude_damping_is_not() {
        let rho = rho_sample();
        let conj = |u: &ComplexMatrix, m: &ComplexMatrix| &(u * m) * &u.dagger();
        for lambda in [0.0, 0.3, 0.8, 1.0] {
            let ch = depolarizing(lambda).unwrap();
            for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let u = encoding_unitary(x, y);
                let a = apply_kraus(&ch, &DensityOp::new(conj(&u, rho.matrix())).unwrap()).unwrap();
                let b = conj(&u, apply_kraus(&ch, &rho).unwrap().matrix());
                assert!(a.matrix().approx_eq(&b, 1e-12));
            }
        }
        let ad = amplitude_damping(0.5).unwrap();
        let x = pauli::x();
        let a = apply_kraus(&ad, &DensityOp::new(conj(&x, rho.matrix())).unwrap()).unwrap();
        let b = conj(&x, apply_kraus(&ad, &rho).unwrap().matrix());
        assert!(a.matrix().max_abs_diff(&b) > 1e-3);
    }

    #[test]
    fn scenarios() {
        let id = make_scenario(&ScenarioDescriptor::Identity).unwrap();
        assert_eq!(id, NoiseScenario::identity());
        let s = make_scenario(&ScenarioDescriptor::DepolIndep {
            lambda: 0.1,
            delta: 0.2,
        })
        .unwrap();
        let want = product2(&depolarizing(0.1).unwrap(), &depolarizing(0.2).unwrap()).unwrap();
        assert_eq!(s.forward(), &want);
        assert_eq!(s.backward(), &want);
        let s = make_scenario(&ScenarioDescriptor::DepolCorr {
            lambda_f: 0.3,
            lambda_b: 0.7,
        })
        .unwrap();
        assert_eq!(s.forward(), &correlated_depolarizing(0.3).unwrap());
        assert_eq!(s.backward(), &correlated_depolarizing(0.7).unwrap());
        let s = make_scenario(&ScenarioDescriptor::DepolBackwardOnly {
            lambda: 0.3,
            delta: 0.7,
        })
        .unwrap();
        assert_eq!(s.forward(), &KrausSet::identity(4));
        assert!(make_scenario(&ScenarioDescriptor::AmpDampIndep {
            gamma1: 0.5,
            gamma2: 1.5
        })
        .is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!(matches!(
            "depol".parse::<ModelKind>(),
            Err(Error::UnknownModel(_))
        ));
        let d = ScenarioDescriptor::from_model(ModelKind::DepolCorr, 0.25, 0.5);
        assert_eq!(d.to_string(), "depol-corr(lambda_f=0.25,lambda_b=0.5)");
    }

    #[test]
    fn unchecked_set_fails_completeness() {
        let broken = KrausSet::from_operators_unchecked(2, vec![pauli::x().scale_real(1.01)]);
        assert!(matches!(
            broken.check_completeness(),
            Err(Error::NotTracePreserving(_))
        ));
    }
}
