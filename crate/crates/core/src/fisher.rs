//! Quantum Fisher information for pure-state families, with and without
//! ancilla postselection.
//!
//! Unless stated otherwise, values are per unit coupling `g`. The qubit
//! circuits use `g = φ/2`, so information per unit `φ` is a quarter of that;
//! [`FisherValue`] carries the unit tag so the two never mix.

use crate::error::{Error, Result};
use crate::optimal::ObservableKind;
use crate::statevec::{self, apply, gram_deviation, gram_schmidt, inner, Ket, Operator, Spectrum};
use crate::tol;
use crate::weak_value::AmplificationSetup;

/// Parameter the information refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherUnits {
    /// Per unit coupling `g`.
    Coupling,
    /// Per unit rotation angle `φ = 2g`.
    Phase,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherValue {
    pub value: f64,
    pub units: FisherUnits,
}

impl FisherValue {
    pub fn coupling(value: f64) -> Self {
        Self {
            value,
            units: FisherUnits::Coupling,
        }
    }

    pub fn phase(value: f64) -> Self {
        Self {
            value,
            units: FisherUnits::Phase,
        }
    }

    pub fn to(self, units: FisherUnits) -> Self {
        let value = match (self.units, units) {
            (FisherUnits::Coupling, FisherUnits::Phase) => self.value / 4.0,
            (FisherUnits::Phase, FisherUnits::Coupling) => self.value * 4.0,
            _ => self.value,
        };
        Self { value, units }
    }

    pub fn per_phase(self) -> f64 {
        self.to(FisherUnits::Phase).value
    }

    pub fn per_coupling(self) -> f64 {
        self.to(FisherUnits::Coupling).value
    }

    /// Quantum Cramér-Rao bound `I^{−1/2}` in the same units.
    pub fn cramer_rao(self) -> f64 {
        self.value.powf(-0.5)
    }
}

/// How the state norm enters the information of an unnormalized family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QfiForm {
    /// `4[⟨ψ'|ψ'⟩ − |⟨ψ|ψ'⟩|²/⟨ψ|ψ⟩]`: the branch probability times the
    /// information of the normalized branch.
    #[default]
    BranchWeighted,
    /// `4[⟨ψ'|ψ'⟩ − |⟨ψ'|ψ⟩|²]` applied literally to the unnormalized family;
    /// also counts the `g`-dependence of the branch probability.
    Unnormalized,
}

type Evaluator = Box<dyn Fn(f64) -> Result<Ket> + Send + Sync>;
type Derivative = Box<dyn Fn(f64) -> Result<(Ket, Ket)> + Send + Sync>;

/// A smooth map `g ↦ |Φ_g⟩`, possibly unnormalized.
pub struct ParamStateFamily {
    evaluator: Evaluator,
    derivative: Option<Derivative>,
    domain: (f64, f64),
}

impl ParamStateFamily {
    pub fn new(
        evaluator: impl Fn(f64) -> Result<Ket> + Send + Sync + 'static,
        domain: (f64, f64),
    ) -> Self {
        Self {
            evaluator: Box::new(evaluator),
            derivative: None,
            domain,
        }
    }

    /// Attaches an analytic `(|Φ_g⟩, d|Φ_g⟩/dg)` evaluator.
    pub fn with_derivative(
        mut self,
        d: impl Fn(f64) -> Result<(Ket, Ket)> + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Box::new(d));
        self
    }

    /// `exp(−i g H)|Φ⟩`.
    pub fn generator(state: Ket, h: &Operator) -> Result<Self> {
        let spec: Spectrum = h.embed(state.register())?.spectrum()?;
        let spec2 = spec.clone();
        let state2 = state.clone();
        Ok(Self::new(
            move |g| spec.evolve(g, &state),
            (f64::NEG_INFINITY, f64::INFINITY),
        )
        .with_derivative(move |g| spec2.evolve_with_derivative(g, &state2)))
    }

    /// `√P_s(g)|φ'(g)⟩ = M(g)|φ⟩` for the setup's postselection.
    pub fn postselected(setup: &AmplificationSetup) -> Self {
        let s1 = setup.clone();
        let s2 = setup.clone();
        Self::new(
            move |g| s1.with_coupling(g).branch(),
            (f64::NEG_INFINITY, f64::INFINITY),
        )
        .with_derivative(move |g| s2.with_coupling(g).branch_with_derivative())
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn evaluate(&self, g: f64) -> Result<Ket> {
        self.check(g)?;
        (self.evaluator)(g)
    }

    fn check(&self, g: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if g < lo || g > hi || !g.is_finite() {
            return Err(Error::OutsideDomain {
                name: "g",
                value: g,
                lo,
                hi,
            });
        }
        Ok(())
    }
}

/// Information of a state and its derivative.
pub fn qfi_from_pair(psi: &Ket, dpsi: &Ket, form: QfiForm) -> Result<f64> {
    let d2 = dpsi.norm_sqr();
    let cross = inner(psi, dpsi)?.norm_sqr();
    Ok(match form {
        QfiForm::Unnormalized => 4.0 * (d2 - cross),
        QfiForm::BranchWeighted => {
            let n2 = psi.norm_sqr();
            if n2 <= tol::UNDERFLOW {
                0.0
            } else {
                4.0 * (d2 - cross / n2)
            }
        }
    })
}

/// Central-difference settings for [`qfi_derivative`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDifference {
    pub step: f64,
    /// Largest accepted relative change when the step is halved.
    pub tolerance: f64,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        Self {
            step: tol::FD_STEP,
            tolerance: 1e-6,
        }
    }
}

fn central(family: &ParamStateFamily, g: f64, h: f64, psi: &Ket, form: QfiForm) -> Result<f64> {
    let plus = family.evaluate(g + h)?;
    let minus = family.evaluate(g - h)?;
    let d = plus.sub(&minus)?.scale(statevec::C64::new(0.5 / h, 0.0));
    qfi_from_pair(psi, &d, form)
}

/// Finite-difference information at `g`: central differences at `step` and
/// `step/2`, checked against each other and combined by Richardson
/// extrapolation.
pub fn qfi_derivative(
    family: &ParamStateFamily,
    g: f64,
    fd: FiniteDifference,
    form: QfiForm,
) -> Result<f64> {
    if fd.step.is_nan() || fd.step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {} must be positive",
            fd.step
        )));
    }
    family.check(g - fd.step)?;
    family.check(g + fd.step)?;
    let psi = family.evaluate(g)?;
    let coarse = central(family, g, fd.step, &psi, form)?;
    let fine = central(family, g, fd.step / 2.0, &psi, form)?;
    let change = (coarse - fine).abs();
    let tolerance = fd.tolerance * fine.abs().max(1.0);
    if change > tolerance {
        return Err(Error::StepTooLarge { change, tolerance });
    }
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Information from the family's analytic derivative.
pub fn qfi_analytic(family: &ParamStateFamily, g: f64, form: QfiForm) -> Result<f64> {
    family.check(g)?;
    let d = family
        .derivative
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("family has no analytic derivative".into()))?;
    let (psi, dpsi) = d(g)?;
    qfi_from_pair(&psi, &dpsi, form)
}

/// `4 Var(H)` for `exp(−i g H)|Φ⟩`.
pub fn qfi_generator(state: &Ket, h: &Operator) -> Result<f64> {
    Ok(4.0 * statevec::variance(state, &h.embed(state.register())?)?)
}

/// `4[⟨Â²⟩⟨F̂²⟩ − (⟨Â⟩⟨F̂⟩)²]`, the information of the coupled product state.
pub fn qfi_no_postselection(prep: &Ket, meter: &Ket, a: &Operator, f: &Operator) -> Result<f64> {
    let (ma, sa) = first_two_moments(prep, a)?;
    let (mf, sf) = first_two_moments(meter, f)?;
    Ok(4.0 * (sa * sf - (ma * mf).powi(2)))
}

fn first_two_moments(state: &Ket, op: &Operator) -> Result<(f64, f64)> {
    state.require_normalized()?;
    if !op.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    let o_psi = apply(op, state)?;
    Ok((inner(state, &o_psi)?.re, o_psi.norm_sqr()))
}

/// Returns `(exact, approx)` information in the setup's postselected branch.
///
/// `exact` is the branch-weighted information of `M(g)|φ⟩` from its analytic
/// derivative; `approx` is the leading-order form
/// `4 P_s |A_w|² [Var F̂ − ⟨F̂²⟩(2g Im A_w ⟨F̂⟩ + |g A_w|² ⟨F̂²⟩)]`.
pub fn qfi_outcome(setup: &AmplificationSetup) -> Result<(f64, f64)> {
    Ok((
        qfi_outcome_with(setup, QfiForm::BranchWeighted)?,
        qfi_outcome_approx(setup)?,
    ))
}

pub fn qfi_outcome_with(setup: &AmplificationSetup, form: QfiForm) -> Result<f64> {
    let (psi, dpsi) = setup.branch_with_derivative()?;
    qfi_from_pair(&psi, &dpsi, form)
}

pub fn qfi_outcome_approx(setup: &AmplificationSetup) -> Result<f64> {
    let aw = setup.weak_value()?;
    let ps = inner(setup.post(), setup.prep())?.norm_sqr();
    let (mf, sf) = first_two_moments(setup.meter(), setup.coupling_operator())?;
    let var_f = sf - mf * mf;
    let g = setup.g();
    Ok(4.0
        * ps
        * aw.norm_sqr()
        * (var_f - sf * (2.0 * g * aw.im * mf + g * g * aw.norm_sqr() * sf)))
}

/// Orthonormal basis of the ancilla space starting from the setup's
/// postselection, completed by Gram-Schmidt over computational states.
pub fn completed_basis(post: &Ket) -> Result<Vec<Ket>> {
    let reg = post.register().clone();
    let mut seeds = vec![post.clone()];
    for i in 0..reg.dim() {
        seeds.push(Ket::basis(reg.clone(), i)?);
    }
    gram_schmidt(&seeds)
}

/// `Σ_k I^{(k)}(g)` over an orthonormal ancilla basis (auto-completed from
/// the setup's postselection when `basis` is `None`), with the per-outcome terms.
pub fn qfi_basis_sum(setup: &AmplificationSetup, basis: Option<&[Ket]>) -> Result<(f64, Vec<f64>)> {
    let basis = match basis {
        Some(b) => b.to_vec(),
        None => completed_basis(setup.post())?,
    };
    let dim = setup.prep().dim();
    let dev = gram_deviation(&basis)?;
    if basis.len() != dim || dev > tol::ACCUMULATED {
        return Err(Error::IncompleteBasis(if basis.len() != dim {
            1.0
        } else {
            dev
        }));
    }
    let spec = setup.generator_spectrum()?;
    let (psi, dpsi) = spec.evolve_with_derivative(setup.g(), &setup.initial()?)?;
    let mut terms = Vec::with_capacity(dim);
    for k in &basis {
        let k = k.permute_to(setup.prep().register())?;
        let (b, _) = statevec::project(&psi, &k)?;
        let (db, _) = statevec::project(&dpsi, &k)?;
        terms.push(qfi_from_pair(&b, &db, QfiForm::BranchWeighted)?);
    }
    Ok((terms.iter().sum(), terms))
}

/// `η = Var(Â)/⟨Â²⟩`.
pub fn efficiency_eta(prep: &Ket, a: &Operator) -> Result<f64> {
    let (mean, second) = first_two_moments(prep, a)?;
    if second <= tol::DEGENERATE_VARIANCE {
        return Err(Error::ZeroSecondMoment);
    }
    Ok(((second - mean * mean) / second).clamp(0.0, 1.0))
}

/// Which quantity the closed-form qubit examples hold fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fixed {
    /// Weak value magnitude `|A_w|`.
    WeakValue(f64),
    /// Postselection probability `p`.
    Probability(f64),
}

/// Linear-response conditions that a closed form was evaluated outside of.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeWarning {
    pub n_phi: f64,
    pub phi_aw: f64,
}

impl std::fmt::Display for RegimeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n*phi = {:.3e} and phi*|A_w| = {:.3e}; both should be at most {}",
            self.n_phi,
            self.phi_aw,
            tol::LINEAR_RESPONSE
        )
    }
}

/// `true` when `x ≤ bound` allowing for rounding in the product that formed `x`.
pub fn within_regime(x: f64, bound: f64) -> bool {
    x <= bound * (1.0 + tol::REGIME_SLACK)
}

pub fn regime_warning(n: usize, phi: f64, aw: f64) -> Option<RegimeWarning> {
    let w = RegimeWarning {
        n_phi: n as f64 * phi.abs(),
        phi_aw: phi.abs() * aw,
    };
    (!within_regime(w.n_phi, tol::LINEAR_RESPONSE)
        || !within_regime(w.phi_aw, tol::LINEAR_RESPONSE))
    .then_some(w)
}

/// Weak value magnitude realized by the optimal fixed-`p` postselection on
/// the maximal-variance preparation: `n√((1−p)/p)` for σ_z and
/// `(n/2)(1 + √((1−p)/p))` for the projector.
pub fn effective_weak_value(kind: ObservableKind, n: usize, p: f64) -> f64 {
    let nf = n as f64;
    let r = ((1.0 - p) / p).sqrt();
    match kind {
        ObservableKind::SigmaZ => nf * r,
        ObservableKind::Projector => nf / 2.0 * (1.0 + r),
    }
}

/// Leading-order postselected information per unit `φ` for the qubit examples.
///
/// | observable | fixed `A_w` | fixed `p` |
/// |---|---|---|
/// | σ_z | `n²(1 − (φ|A_w|/2)²)` | `n²(1 − (nφ/(2√p))²)` |
/// | projector | `(n²/4)(1 − (φ|A_w|/2)²)` | `(n²/4)(1 − (nφ/(4√p))²)` |
///
/// The warning is set when `nφ` or `φ|A_w|` exceeds the linear-response bound
/// (using the effective weak value for fixed `p`); the value is still returned.
pub fn analytic_qubit_fisher(
    kind: ObservableKind,
    fixed: Fixed,
    n: usize,
    phi: f64,
) -> (FisherValue, Option<RegimeWarning>) {
    let nf = n as f64;
    let prefactor = match kind {
        ObservableKind::SigmaZ => nf * nf,
        ObservableKind::Projector => nf * nf / 4.0,
    };
    let (correction, aw) = match fixed {
        Fixed::WeakValue(aw) => ((phi * aw / 2.0).powi(2), aw),
        Fixed::Probability(p) => {
            let denom = match kind {
                ObservableKind::SigmaZ => 2.0 * p.sqrt(),
                ObservableKind::Projector => 4.0 * p.sqrt(),
            };
            ((nf * phi / denom).powi(2), effective_weak_value(kind, n, p))
        }
    };
    (
        FisherValue::phase(prefactor * (1.0 - correction)),
        regime_warning(n, phi, aw),
    )
}

/// Information budget of one setup.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherReport {
    /// Information without postselection.
    pub total: FisherValue,
    /// `(label, I^{(k)})` over the ancilla basis; the setup's own
    /// postselection is labeled `post`.
    pub per_outcome: Vec<(String, FisherValue)>,
    pub eta: f64,
    pub analytic: Option<FisherValue>,
    /// `total^{−1/2}`.
    pub cramer_rao: f64,
}

impl FisherReport {
    pub fn new(
        setup: &AmplificationSetup,
        units: FisherUnits,
        analytic: Option<FisherValue>,
    ) -> Result<Self> {
        let total = FisherValue::coupling(qfi_no_postselection(
            setup.prep(),
            setup.meter(),
            setup.observable(),
            setup.coupling_operator(),
        )?)
        .to(units);
        let (_, terms) = qfi_basis_sum(setup, None)?;
        let per_outcome = terms
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let label = if k == 0 {
                    "post".to_string()
                } else {
                    format!("k{k}")
                };
                (label, FisherValue::coupling(v).to(units))
            })
            .collect();
        Ok(Self {
            total,
            per_outcome,
            eta: efficiency_eta(setup.prep(), setup.observable())?,
            analytic: analytic.map(|a| a.to(units)),
            cramer_rao: total.cramer_rao(),
        })
    }
}
