//! Weak values, postselection probabilities and meter responses for the
//! impulsive coupling `exp(−i g Â⊗F̂)`.
//!
//! The coupling is a single unitary kick; there is no time integration.

use crate::error::{Error, Result};
use crate::statevec::{self, apply, inner, tensor, Ket, Operator, Qubit, Register, Spectrum, C64};
use crate::tol;

/// Ancilla coupling observable with eigenvalue `+1` on `|1⟩`, i.e. `2|1⟩⟨1| − 1`.
///
/// This is the orientation a controlled rotation with control on `|1⟩`
/// realizes, and the one under which the single-ancilla circuit has
/// `A_w = +i·cot ε`. Meter observables use the standard `Z`.
pub fn ancilla_sigma_z(q: impl Into<Qubit>) -> Operator {
    Operator::diagonal(Register::single(q), &[-1.0, 1.0]).expect("2x2")
}

/// Preparation, postselection, meter, observables and coupling strength.
#[derive(Clone, Debug)]
pub struct AmplificationSetup {
    prep: Ket,
    post: Ket,
    meter: Ket,
    a: Operator,
    f: Operator,
    r: Operator,
    g: f64,
}

impl AmplificationSetup {
    /// Readout defaults to the coupling operator `F̂`.
    pub fn new(prep: Ket, post: Ket, meter: Ket, a: Operator, f: Operator, g: f64) -> Result<Self> {
        prep.require_normalized()?;
        post.require_normalized()?;
        meter.require_normalized()?;
        if !a.is_hermitian() || !f.is_hermitian() {
            return Err(Error::NonHermitian);
        }
        if !g.is_finite() {
            return Err(Error::InvalidArgument(format!("coupling g = {g}")));
        }
        prep.register().concat(meter.register())?;
        let post = post.permute_to(prep.register())?;
        let a = embed_exact(&a, prep.register())?;
        let f = embed_exact(&f, meter.register())?;
        let r = f.clone();
        Ok(Self {
            prep,
            post,
            meter,
            a,
            f,
            r,
            g,
        })
    }

    pub fn with_readout(mut self, r: Operator) -> Result<Self> {
        if !r.is_hermitian() {
            return Err(Error::NonHermitian);
        }
        self.r = embed_exact(&r, self.meter.register())?;
        Ok(self)
    }

    pub fn with_coupling(&self, g: f64) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn with_post(&self, post: Ket) -> Result<Self> {
        post.require_normalized()?;
        let post = post.permute_to(self.prep.register())?;
        Ok(Self {
            post,
            ..self.clone()
        })
    }

    pub fn prep(&self) -> &Ket {
        &self.prep
    }

    pub fn post(&self) -> &Ket {
        &self.post
    }

    pub fn meter(&self) -> &Ket {
        &self.meter
    }

    pub fn observable(&self) -> &Operator {
        &self.a
    }

    pub fn coupling_operator(&self) -> &Operator {
        &self.f
    }

    pub fn readout(&self) -> &Operator {
        &self.r
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// `|Ψi⟩ ⊗ |φ⟩`.
    pub fn initial(&self) -> Result<Ket> {
        tensor(&self.prep, &self.meter)
    }

    /// Spectrum of the generator `Â ⊗ F̂`.
    pub fn generator_spectrum(&self) -> Result<Spectrum> {
        self.a.spectrum()?.product(&self.f.spectrum()?)
    }

    pub fn weak_value(&self) -> Result<C64> {
        weak_value(&self.prep, &self.post, &self.a)
    }

    /// Unnormalized meter branch `M|φ⟩` and its `g`-derivative.
    pub fn branch_with_derivative(&self) -> Result<(Ket, Ket)> {
        let spec = self.generator_spectrum()?;
        let (psi, dpsi) = spec.evolve_with_derivative(self.g, &self.initial()?)?;
        let (branch, _) = statevec::project(&psi, &self.post)?;
        let (dbranch, _) = statevec::project(&dpsi, &self.post)?;
        Ok((branch, dbranch))
    }

    /// Unnormalized meter branch `M|φ⟩`.
    pub fn branch(&self) -> Result<Ket> {
        let spec = self.generator_spectrum()?;
        let psi = spec.evolve(self.g, &self.initial()?)?;
        Ok(statevec::project(&psi, &self.post)?.0)
    }
}

/// Embeds into `target` but only as a reordering: the qubit sets must agree.
fn embed_exact(op: &Operator, target: &Register) -> Result<Operator> {
    if !op.register().same_set(target) {
        return Err(Error::RegisterMismatch(format!(
            "operator on {} does not act on {}",
            op.register(),
            target
        )));
    }
    op.embed(target)
}

/// Meter correlation constants entering the second-order response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeterMoments {
    /// `⟨R̂F̂⟩`
    pub alpha: C64,
    /// `⟨F̂R̂F̂⟩`
    pub beta: f64,
    /// `⟨F̂²⟩`
    pub sigma2: f64,
}

/// `⟨Ψf|Â|Ψi⟩ / ⟨Ψf|Ψi⟩`.
pub fn weak_value(prep: &Ket, post: &Ket, a: &Operator) -> Result<C64> {
    prep.require_normalized()?;
    post.require_normalized()?;
    if !a.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    let post = post.permute_to(prep.register())?;
    let overlap = inner(&post, prep)?;
    if overlap.norm() < tol::ORTHOGONAL_POSTSELECTION {
        return Err(Error::OrthogonalPostselection(overlap.norm()));
    }
    let num = inner(&post, &apply(&embed_exact(a, prep.register())?, prep)?)?;
    Ok(num / overlap)
}

/// Returns `(exact, zeroth_order)`: the squared norm of the postselected
/// meter branch and `|⟨Ψf|Ψi⟩|²`.
pub fn postselection_probability(setup: &AmplificationSetup) -> Result<(f64, f64)> {
    let exact = setup.branch()?.norm_sqr();
    let zeroth = inner(&setup.post, &setup.prep)?.norm_sqr();
    Ok((exact, zeroth))
}

/// Probability of at least one success in `n` independent attempts.
pub fn n_attempt_probability(p: f64, n: u32) -> f64 {
    -(f64::from(n) * (-p).ln_1p()).exp_m1()
}

/// The meter-space Kraus operator `⟨Ψf|exp(−i g Â⊗F̂)|Ψi⟩`.
pub fn kraus_operator(setup: &AmplificationSetup) -> Result<Operator> {
    let spec = setup.generator_spectrum()?;
    let mreg = setup.meter.register().clone();
    let d = mreg.dim();
    let mut m = nalgebra::DMatrix::from_element(d, d, C64::new(0.0, 0.0));
    for col in 0..d {
        let input = tensor(&setup.prep, &Ket::basis(mreg.clone(), col)?)?;
        let out = spec.evolve(setup.g, &input)?;
        let (branch, _) = statevec::project(&out, &setup.post)?;
        for (row, amp) in branch.amplitudes().iter().enumerate() {
            m[(row, col)] = *amp;
        }
    }
    Operator::new(mreg, m)
}

/// Normalized postselected meter state and its probability.
pub fn postselected_meter(setup: &AmplificationSetup) -> Result<(Ket, f64)> {
    let branch = setup.branch()?;
    let p = branch.norm_sqr();
    if p <= tol::UNDERFLOW {
        return Err(Error::VanishingBranch(p));
    }
    Ok((branch.normalized()?, p))
}

pub fn meter_moments(meter: &Ket, f: &Operator, r: &Operator) -> Result<MeterMoments> {
    meter.require_normalized()?;
    let f_phi = apply(f, meter)?;
    let r_phi = apply(r, meter)?;
    let alpha = inner(&r_phi, &f_phi)?;
    let beta = inner(&f_phi, &apply(r, &f_phi)?)?.re;
    let sigma2 = f_phi.norm_sqr();
    Ok(MeterMoments {
        alpha,
        beta,
        sigma2,
    })
}

/// Second-order meter response
/// `[2g Im(α A_w) + g² β |A_w|²] / [1 + g² σ² |A_w|²]`.
pub fn response_second_order(g: f64, aw: C64, m: &MeterMoments) -> f64 {
    let a2 = aw.norm_sqr();
    (2.0 * g * (m.alpha * aw).im + g * g * m.beta * a2) / (1.0 + g * g * m.sigma2 * a2)
}

/// Linear response `2g [Re A_w · Im α + Im A_w · Re α]`.
pub fn response_linear(g: f64, aw: C64, alpha: C64) -> f64 {
    2.0 * g * (aw.re * alpha.im + aw.im * alpha.re)
}

/// `⟨R̂⟩` in the postselected meter state.
pub fn response_exact(setup: &AmplificationSetup) -> Result<f64> {
    let (phi, _) = postselected_meter(setup)?;
    statevec::expectation(&phi, &setup.r)
}
