//! Optimal entangled preparations and postselections for a joint ancilla
//! observable `Â = Σ_k â_k`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::statevec::{self, apply, inner, tensor, Ket, Operator, Register, C64};
use crate::tol;
use crate::weak_value::{ancilla_sigma_z, weak_value};

/// Which single-qubit ancilla observable a protocol couples through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservableKind {
    /// `2|1⟩⟨1| − 1`, spectrum `{−1, 1}`.
    SigmaZ,
    /// `|1⟩⟨1|`, spectrum `{0, 1}`.
    Projector,
}

impl ObservableKind {
    pub fn single(self, q: usize) -> Operator {
        match self {
            Self::SigmaZ => ancilla_sigma_z(q),
            Self::Projector => Operator::projector_one(q),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SigmaZ => "sigma_z",
            Self::Projector => "projector",
        }
    }

    /// `η = Var(Â)/⟨Â²⟩` for the maximal-variance preparation.
    pub fn ghz_efficiency(self) -> f64 {
        match self {
            Self::SigmaZ => 1.0,
            Self::Projector => 0.5,
        }
    }
}

impl std::str::FromStr for ObservableKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sigma_z" => Ok(Self::SigmaZ),
            "projector" => Ok(Self::Projector),
            other => Err(format!(
                "unknown observable `{other}` (expected sigma_z or projector)"
            )),
        }
    }
}

/// `n` copies of a single-site observable, one per ancilla block.
#[derive(Clone, Debug)]
pub struct JointObservable {
    single: Operator,
    n: usize,
    lambda_min: f64,
    lambda_max: f64,
    min_ket: Ket,
    max_ket: Ket,
}

impl JointObservable {
    /// `single` may act on any number `w` of qubits; copy `k` acts on
    /// `q{k·w} .. q{(k+1)·w − 1}`.
    pub fn new(single: &Operator, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        let w = single.register().len();
        let single = single.relabel(Register::range(0, w)?)?;
        let spec = single.spectrum()?;
        let min_ket = spec.eigenket(0);
        let max_ket = spec.eigenket(spec.dim() - 1);
        Register::range(0, n * w)?;
        Ok(Self {
            lambda_min: spec.min(),
            lambda_max: spec.max(),
            single,
            n,
            min_ket,
            max_ket,
        })
    }

    pub fn kind(kind: ObservableKind, n: usize) -> Result<Self> {
        Self::new(&kind.single(0), n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn single(&self) -> &Operator {
        &self.single
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.lambda_min.abs().max(self.lambda_max.abs())
    }

    fn width(&self) -> usize {
        self.single.register().len()
    }

    pub fn register(&self) -> Register {
        Register::range(0, self.n * self.width()).expect("checked at construction")
    }

    fn copy(&self, k: usize) -> Operator {
        let w = self.width();
        self.single
            .relabel(Register::range(k * w, w).unwrap())
            .unwrap()
    }

    /// `Σ_k â_k` on the full register.
    pub fn total(&self) -> Result<Operator> {
        let reg = self.register();
        if self.single.is_diagonal() {
            let w = self.width();
            let d1 = self.single.dim();
            let local: Vec<f64> = (0..d1).map(|i| self.single.matrix()[(i, i)].re).collect();
            let diag: Vec<f64> = (0..reg.dim())
                .map(|idx| {
                    (0..self.n)
                        .map(|k| local[(idx >> (k * w)) & (d1 - 1)])
                        .sum()
                })
                .collect();
            return Operator::diagonal(reg, &diag);
        }
        let mut acc = self.copy(0).embed(&reg)?;
        for k in 1..self.n {
            acc = acc.add(&self.copy(k).embed(&reg)?)?;
        }
        Ok(acc)
    }

    /// `|λ⟩^⊗n` for the largest (`max = true`) or smallest eigenvalue.
    pub fn extreme_product(&self, max: bool) -> Ket {
        let local = if max { &self.max_ket } else { &self.min_ket };
        let w = self.width();
        let mut out = local.clone();
        for k in 1..self.n {
            let next = local.relabel(Register::range(k * w, w).unwrap()).unwrap();
            out = tensor(&out, &next).unwrap();
        }
        out
    }
}

/// `(|λmax⟩^⊗n + e^{iθ}|λmin⟩^⊗n)/√2`, variance `(n²/4)(λmax − λmin)²`.
pub fn max_variance_prep(obs: &JointObservable, theta: f64) -> Result<Ket> {
    if obs.lambda_max - obs.lambda_min <= tol::ALGEBRAIC * obs.max_abs_eigenvalue().max(1.0) {
        return Err(Error::DegenerateObservable(obs.lambda_max));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let hi = obs.extreme_product(true).scale(C64::new(h, 0.0));
    let lo = obs.extreme_product(false).scale(C64::from_polar(h, theta));
    hi.add(&lo)
}

/// `⟨Â⟩`, `⟨Â²⟩` and `Var(Â)` in a normalized state.
#[derive(Clone, Copy, Debug)]
struct Moments {
    mean: f64,
    second: f64,
    var: f64,
}

fn moments(prep: &Ket, a: &Operator) -> Result<Moments> {
    prep.require_normalized()?;
    if !a.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    let a_psi = apply(a, prep)?;
    let mean = inner(prep, &a_psi)?.re;
    let second = a_psi.norm_sqr();
    Ok(Moments {
        mean,
        second,
        var: (second - mean * mean).max(0.0),
    })
}

fn require_variance(m: &Moments) -> Result<()> {
    if m.var < tol::DEGENERATE_VARIANCE {
        Err(Error::DegeneratePrep(m.var))
    } else {
        Ok(())
    }
}

/// `(Â − A_w)|Ψi⟩`; every postselection orthogonal to it realizes `A_w`.
pub fn constraint_vector(prep: &Ket, a: &Operator, aw: C64) -> Result<Ket> {
    apply(a, prep)?.sub(&prep.scale(aw))
}

/// Postselection maximizing `P_s` at fixed weak value `A_w`: the component of
/// `|Ψi⟩` orthogonal to `(Â − A_w)|Ψi⟩`.
pub fn optimal_post_fixed_aw(prep: &Ket, a: &Operator, aw: C64) -> Result<Ket> {
    require_variance(&moments(prep, a)?)?;
    let v = constraint_vector(prep, a, aw)?;
    let coeff = inner(&v, prep)? / v.norm_sqr();
    prep.sub(&v.scale(coeff))?.normalized()
}

/// `√P_s|Ψi⟩ + √(1−P_s) e^{iθ}|Ψi⊥⟩` with `|Ψi⊥⟩ ∝ (Â − ⟨Â⟩)|Ψi⟩`, whose
/// phase makes `⟨Ψi⊥|Â|Ψi⟩` real positive.
pub fn optimal_post_fixed_ps(prep: &Ket, a: &Operator, ps: f64, theta: f64) -> Result<Ket> {
    if !(ps > 0.0 && ps < 1.0) {
        return Err(Error::OutsideDomain {
            name: "P_s",
            value: ps,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let m = moments(prep, a)?;
    require_variance(&m)?;
    let perp = apply(a, prep)?
        .sub(&prep.scale(C64::new(m.mean, 0.0)))?
        .normalized()?;
    prep.scale(C64::new(ps.sqrt(), 0.0))
        .add(&perp.scale(C64::from_polar((1.0 - ps).sqrt(), theta)))
}

/// `|⟨Â⟩ + √((1−P_s)/P_s) e^{−iθ} √Var(Â)|`, the weak value of the fixed-`P_s` optimum.
pub fn fixed_ps_weak_value(prep: &Ket, a: &Operator, ps: f64, theta: f64) -> Result<C64> {
    let m = moments(prep, a)?;
    Ok(C64::new(m.mean, 0.0) + C64::from_polar(((1.0 - ps) / ps).sqrt() * m.var.sqrt(), -theta))
}

/// Returns `(exact, approx)` maximal `P_s` at fixed `A_w`:
/// `Var/(⟨Â²⟩ − 2⟨Â⟩ Re A_w + |A_w|²)` and `Var/|A_w|²`.
pub fn max_ps_formula(prep: &Ket, a: &Operator, aw: C64) -> Result<(f64, f64)> {
    let m = moments(prep, a)?;
    if m.var < tol::DEGENERATE_VARIANCE {
        // an eigenstate only ever yields its eigenvalue as weak value
        return Ok((0.0, 0.0));
    }
    let exact = m.var / (m.second - 2.0 * m.mean * aw.re + aw.norm_sqr());
    let approx = m.var / aw.norm_sqr();
    Ok((exact, approx))
}

/// `√(Var(Â)/P_s)`, the largest weak value reachable at postselection probability `P_s`.
pub fn max_aw_formula(prep: &Ket, a: &Operator, ps: f64) -> Result<f64> {
    Ok((moments(prep, a)?.var / ps).sqrt())
}

/// A preparation/postselection pair with its weak value and probabilities.
#[derive(Clone, Debug)]
pub struct Optimum {
    pub prep: Ket,
    pub post: Ket,
    pub aw: C64,
    pub ps_exact: f64,
    pub ps_approx: f64,
    pub theta: f64,
}

impl Optimum {
    pub fn fixed_aw(prep: &Ket, a: &Operator, aw: C64) -> Result<Self> {
        let post = optimal_post_fixed_aw(prep, a, aw)?;
        let realized = weak_value(prep, &post, a)?;
        let (_, ps_approx) = max_ps_formula(prep, a, aw)?;
        let ps_exact = inner(&post, prep)?.norm_sqr();
        Ok(Self {
            prep: prep.clone(),
            post,
            aw: realized,
            ps_exact,
            ps_approx,
            theta: 0.0,
        })
    }

    pub fn fixed_ps(prep: &Ket, a: &Operator, ps: f64, theta: f64) -> Result<Self> {
        let post = optimal_post_fixed_ps(prep, a, ps, theta)?;
        let aw = weak_value(prep, &post, a)?;
        let ps_exact = inner(&post, prep)?.norm_sqr();
        Ok(Self {
            prep: prep.clone(),
            post,
            aw,
            ps_exact,
            ps_approx: ps,
            theta,
        })
    }
}

/// A uniformly random unit vector orthogonal to `(Â − A_w)|Ψi⟩`.
pub fn random_constrained_post<R: Rng + ?Sized>(
    prep: &Ket,
    a: &Operator,
    aw: C64,
    rng: &mut R,
) -> Result<Ket> {
    let v = constraint_vector(prep, a, aw)?.normalized()?;
    let x = statevec::random::vector(prep.register().clone(), rng);
    let x = x.sub(&v.scale(inner(&v, &x)?))?;
    x.normalized()
}

/// One row of the entangled-versus-repeated comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    /// Exact maximal `P_s` with the `n`-ancilla maximal-variance preparation.
    pub ps_entangled: f64,
    /// Leading-order probability for `n` independent single-ancilla attempts.
    pub ps_repeated: f64,
    /// `ps_entangled / ps_repeated`, close to `n`.
    pub ratio: f64,
}

/// Maximal postselection probability with `n` entangled ancillas versus `n`
/// independent single-ancilla attempts at the same weak value.
pub fn quadratic_vs_linear_scaling(
    single: &Operator,
    aw: C64,
    ns: impl IntoIterator<Item = usize>,
) -> Result<Vec<ScalingRow>> {
    let ns: Vec<usize> = ns.into_iter().collect();
    let n_max = ns.iter().copied().max().unwrap_or(1);
    let base = JointObservable::new(single, 1)?;
    let bound = n_max as f64 * base.max_abs_eigenvalue();
    if aw.norm() <= bound {
        return Err(Error::WeakValueTooSmall {
            aw: aw.norm(),
            bound,
        });
    }
    let p1 = entangled_max_ps(&base, aw)?;
    ns.into_iter()
        .map(|n| {
            let ps = entangled_max_ps(&JointObservable::new(single, n)?, aw)?;
            let repeated = n as f64 * p1;
            Ok(ScalingRow {
                n,
                ps_entangled: ps,
                ps_repeated: repeated,
                ratio: ps / repeated,
            })
        })
        .collect()
}

/// Exact maximal `P_s` for the `θ = 0` maximal-variance preparation.
pub fn entangled_max_ps(obs: &JointObservable, aw: C64) -> Result<f64> {
    let prep = max_variance_prep(obs, 0.0)?;
    Ok(max_ps_formula(&prep, &obs.total()?, aw)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statevec::{fidelity, variance};

    fn ghz(n: usize) -> Ket {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![0.0; 1 << n];
        amps[0] = h;
        amps[(1 << n) - 1] = h;
        Ket::from_real(Register::range(0, n).unwrap(), &amps).unwrap()
    }

    #[test]
    fn joint_extremes() {
        for kind in [ObservableKind::SigmaZ, ObservableKind::Projector] {
            let obs = JointObservable::kind(kind, 4).unwrap();
            let spec = obs.total().unwrap().spectrum().unwrap();
            assert!((spec.min() - 4.0 * obs.lambda_min()).abs() < 1e-10);
            assert!((spec.max() - 4.0 * obs.lambda_max()).abs() < 1e-10);
            let top = spec.eigenket(spec.dim() - 1);
            assert!(fidelity(&top, &obs.extreme_product(true)).unwrap() > 1.0 - 1e-10);
        }
    }

    #[test]
    fn dense_single_site_total_matches_sum() {
        let x = Operator::pauli_x(0);
        let obs = JointObservable::new(&x, 3).unwrap();
        let total = obs.total().unwrap();
        let spec = total.spectrum().unwrap();
        assert!((spec.min() + 3.0).abs() < 1e-10 && (spec.max() - 3.0).abs() < 1e-10);
        let prep = max_variance_prep(&obs, 0.0).unwrap();
        assert!((variance(&prep, &total).unwrap() - 9.0).abs() < 1e-10);
    }

    #[test]
    fn max_variance_examples() {
        let p = max_variance_prep(
            &JointObservable::kind(ObservableKind::SigmaZ, 1).unwrap(),
            0.0,
        )
        .unwrap();
        assert!(fidelity(&p, &Ket::plus(0)).unwrap() > 1.0 - 1e-15);

        let obs = JointObservable::new(&Operator::pauli_z(0), 3).unwrap();
        let p = max_variance_prep(&obs, 0.0).unwrap();
        assert!(fidelity(&p, &ghz(3)).unwrap() > 1.0 - 1e-15);
        assert!((variance(&p, &obs.total().unwrap()).unwrap() - 9.0).abs() < 1e-10);

        let obs = JointObservable::kind(ObservableKind::Projector, 4).unwrap();
        let p = max_variance_prep(&obs, 0.0).unwrap();
        assert!(fidelity(&p, &ghz(4)).unwrap() > 1.0 - 1e-15);
        assert!((variance(&p, &obs.total().unwrap()).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_observable_rejected() {
        let id = Operator::identity(Register::single(0));
        let obs = JointObservable::new(&id, 2).unwrap();
        assert!(matches!(
            max_variance_prep(&obs, 0.0),
            Err(Error::DegenerateObservable(_))
        ));
    }

    #[test]
    fn fixed_aw_reproduces_entangled_closed_form() {
        // −(nλmin − A_w*)|λmax⟩^n + e^{iθ}(nλmax − A_w*)|λmin⟩^n
        let n = 3;
        let obs = JointObservable::kind(ObservableKind::SigmaZ, n).unwrap();
        let theta = 0.4;
        let prep = max_variance_prep(&obs, theta).unwrap();
        let aw = C64::new(0.3, 25.0);
        let post = optimal_post_fixed_aw(&prep, &obs.total().unwrap(), aw).unwrap();
        let nf = n as f64;
        let hi = obs
            .extreme_product(true)
            .scale(-(C64::new(nf * obs.lambda_min(), 0.0) - aw.conj()));
        let lo = obs.extreme_product(false).scale(
            C64::from_polar(1.0, theta) * (C64::new(nf * obs.lambda_max(), 0.0) - aw.conj()),
        );
        let closed = hi.add(&lo).unwrap();
        assert!(fidelity(&post, &closed).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn fixed_aw_probability_example() {
        let obs = JointObservable::kind(ObservableKind::SigmaZ, 3).unwrap();
        let prep = max_variance_prep(&obs, 0.0).unwrap();
        let a = obs.total().unwrap();
        let aw = C64::new(0.0, 100.0);
        let opt = Optimum::fixed_aw(&prep, &a, aw).unwrap();
        assert_relative_eq!(opt.ps_exact, 9.0 / 10009.0, max_relative = 1e-10);
        assert_relative_eq!(opt.ps_approx, 9e-4, max_relative = 1e-12);
        assert!((opt.aw - aw).norm() / aw.norm() < 1e-10);
        let (exact, _) = max_ps_formula(&prep, &a, aw).unwrap();
        assert!((exact - opt.ps_exact).abs() < 1e-10);

        let eps = 0.05;
        let (_, approx) = max_ps_formula(&prep, &a, C64::new(0.0, 1.0 / eps)).unwrap();
        assert_relative_eq!(approx, 9.0 * eps * eps, max_relative = 1e-12);
    }

    #[test]
    fn fixed_aw_post_is_orthogonal_to_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let reg = Register::range(0, 2).unwrap();
        let prep = statevec::random::ket(reg.clone(), &mut rng);
        let a = statevec::random::hermitian(reg, &mut rng);
        let aw = C64::new(1.5, -7.0);
        let post = optimal_post_fixed_aw(&prep, &a, aw).unwrap();
        let v = constraint_vector(&prep, &a, aw).unwrap();
        assert!(inner(&post, &v).unwrap().norm() < 1e-10);
        let got = weak_value(&prep, &post, &a).unwrap();
        assert!((got - aw).norm() / aw.norm() < 1e-10);
    }

    #[test]
    fn degenerate_prep_rejected() {
        let obs = JointObservable::kind(ObservableKind::SigmaZ, 2).unwrap();
        let eig = obs.extreme_product(true);
        let a = obs.total().unwrap();
        assert!(matches!(
            optimal_post_fixed_aw(&eig, &a, C64::new(0.0, 5.0)),
            Err(Error::DegeneratePrep(_))
        ));
        assert!(matches!(
            optimal_post_fixed_ps(&eig, &a, 0.1, 0.0),
            Err(Error::DegeneratePrep(_))
        ));
        let (exact, _) = max_ps_formula(&eig, &a, C64::new(2.0, 0.0)).unwrap();
        assert_eq!(exact, 0.0);
    }

    #[test]
    fn fixed_ps_examples() {
        for (n, expected) in [(2usize, 2.0 * 99f64.sqrt()), (3, 3.0 * 99f64.sqrt())] {
            let obs = JointObservable::kind(ObservableKind::SigmaZ, n).unwrap();
            let prep = max_variance_prep(&obs, 0.0).unwrap();
            let a = obs.total().unwrap();
            let opt = Optimum::fixed_ps(&prep, &a, 0.01, 0.0).unwrap();
            assert_relative_eq!(opt.aw.norm(), expected, max_relative = 1e-10);
            assert!((opt.ps_exact - 0.01).abs() < 1e-12);
            let formula = fixed_ps_weak_value(&prep, &a, 0.01, 0.0).unwrap();
            assert!((opt.aw.norm() - formula.norm()).abs() < 1e-10 * formula.norm());
            let bound = max_aw_formula(&prep, &a, 0.01).unwrap();
            assert_relative_eq!(bound, 10.0 * n as f64, max_relative = 1e-12);
            assert!((opt.aw.norm() - bound).abs() / bound < 0.01);
        }
        assert_relative_eq!(3.0 * 99f64.sqrt(), 29.8496231131986, max_relative = 1e-12);
    }

    #[test]
    fn fixed_ps_limit_returns_to_expectation() {
        let obs = JointObservable::kind(ObservableKind::Projector, 2).unwrap();
        let prep = max_variance_prep(&obs, 0.0).unwrap();
        let a = obs.total().unwrap();
        let opt = Optimum::fixed_ps(&prep, &a, 1.0 - 1e-12, 0.0).unwrap();
        assert!(fidelity(&opt.post, &prep).unwrap() > 1.0 - 1e-10);
        assert!((opt.aw.re - 1.0).abs() < 1e-5);
        assert!(optimal_post_fixed_ps(&prep, &a, 1.0, 0.0).is_err());
    }

    #[test]
    fn max_ps_closed_forms() {
        let aw = C64::new(0.0, 60.0);
        for n in 1..=5usize {
            let nf = n as f64;
            let obs = JointObservable::kind(ObservableKind::SigmaZ, n).unwrap();
            let prep = max_variance_prep(&obs, 0.0).unwrap();
            let (exact, _) = max_ps_formula(&prep, &obs.total().unwrap(), aw).unwrap();
            assert_relative_eq!(exact, nf * nf / (nf * nf + 3600.0), max_relative = 1e-12);

            let obs = JointObservable::kind(ObservableKind::Projector, n).unwrap();
            let prep = max_variance_prep(&obs, 0.0).unwrap();
            let (exact, approx) = max_ps_formula(&prep, &obs.total().unwrap(), aw).unwrap();
            // Var = n²/4, ⟨Â²⟩ = n²/2
            assert_relative_eq!(
                exact,
                nf * nf / (2.0 * nf * nf + 4.0 * 3600.0),
                max_relative = 1e-12
            );
            assert_relative_eq!(approx, nf * nf / 4.0 / 3600.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn scaling_table() {
        let rows = quadratic_vs_linear_scaling(
            &ObservableKind::SigmaZ.single(0),
            C64::new(0.0, 200.0),
            1..=6,
        )
        .unwrap();
        assert_eq!(rows[0].ratio, 1.0);
        for r in &rows {
            let n = r.n as f64;
            assert!((r.ratio / n - 1.0).abs() < 0.02, "{r:?}");
            assert_relative_eq!(
                r.ratio,
                n * 40001.0 / (n * n + 40000.0),
                max_relative = 1e-12
            );
        }
        let rows = quadratic_vs_linear_scaling(
            &ObservableKind::Projector.single(0),
            C64::new(0.0, 200.0),
            [4],
        )
        .unwrap();
        assert!((rows[0].ratio / 4.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn scaling_requires_large_weak_value() {
        let r = quadratic_vs_linear_scaling(
            &ObservableKind::SigmaZ.single(0),
            C64::new(0.0, 5.0),
            1..=6,
        );
        assert!(matches!(r, Err(Error::WeakValueTooSmall { .. })));
    }

    #[test]
    fn constrained_samples_realize_weak_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = JointObservable::kind(ObservableKind::SigmaZ, 2).unwrap();
        let prep = max_variance_prep(&obs, 0.0).unwrap();
        let a = obs.total().unwrap();
        let aw = C64::new(0.0, 30.0);
        let (exact, _) = max_ps_formula(&prep, &a, aw).unwrap();
        for _ in 0..50 {
            let post = random_constrained_post(&prep, &a, aw, &mut rng).unwrap();
            assert!((weak_value(&prep, &post, &a).unwrap() - aw).norm() < 1e-8);
            assert!(inner(&post, &prep).unwrap().norm_sqr() <= exact + 1e-10);
        }
    }
}
