//! Gate-level circuits on labeled qubits.
//!
//! Rotations follow `R_y(θ) = exp(−iθY/2)` and `R_z(θ) = exp(−iθZ/2)`; the
//! controlled rotation fires on control `|1⟩`. `KEEP q b` projects qubit `q`
//! onto `|b⟩`, renormalizes immediately and multiplies the running kept
//! probability.
//!
//! # Text format
//!
//! ```text
//! REGISTER q0,q1
//! RY q1 1.5707963267948966
//! RY q0 1.5707963267948966
//! CRZ q0,q1 0.02
//! RZ q0 -0.2
//! RY q0 1.5707963267948966
//! KEEP q0 0
//! ```
//!
//! The first non-comment line names the register. Every other line is one gate:
//! `GATE q[,q2] angle?`. Angles are written in Rust's shortest round-trip form,
//! so parsing a printed circuit returns the same bits. Blank lines and lines
//! starting with `#` are ignored.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::statevec::{self, Ket, Operator, Qubit, Register, C64};
use crate::tol;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    RotY {
        qubit: Qubit,
        angle: f64,
    },
    RotZ {
        qubit: Qubit,
        angle: f64,
    },
    Cnot {
        control: Qubit,
        target: Qubit,
    },
    ControlledRotZ {
        control: Qubit,
        target: Qubit,
        angle: f64,
    },
    MeasureKeep {
        qubit: Qubit,
        outcome: u8,
    },
}

impl Gate {
    pub fn qubits(&self) -> Vec<Qubit> {
        match *self {
            Gate::RotY { qubit, .. }
            | Gate::RotZ { qubit, .. }
            | Gate::MeasureKeep { qubit, .. } => vec![qubit],
            Gate::Cnot { control, target }
            | Gate::ControlledRotZ {
                control, target, ..
            } => vec![control, target],
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Gate::RotY { angle, .. }
            | Gate::RotZ { angle, .. }
            | Gate::ControlledRotZ { angle, .. }
                if !angle.is_finite() =>
            {
                Err(format!("non-finite angle {angle}"))
            }
            Gate::Cnot { control, target }
            | Gate::ControlledRotZ {
                control, target, ..
            } if control == target => Err(format!("control and target are both {control}")),
            Gate::MeasureKeep { outcome, .. } if outcome > 1 => {
                Err(format!("outcome {outcome} is not 0 or 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_measurement(&self) -> bool {
        matches!(self, Gate::MeasureKeep { .. })
    }

    /// Inverse of a unitary gate; `None` for measurements.
    pub fn inverse(&self) -> Option<Gate> {
        Some(match *self {
            Gate::RotY { qubit, angle } => Gate::RotY {
                qubit,
                angle: -angle,
            },
            Gate::RotZ { qubit, angle } => Gate::RotZ {
                qubit,
                angle: -angle,
            },
            Gate::Cnot { .. } => *self,
            Gate::ControlledRotZ {
                control,
                target,
                angle,
            } => Gate::ControlledRotZ {
                control,
                target,
                angle: -angle,
            },
            Gate::MeasureKeep { .. } => return None,
        })
    }

    /// Dense matrix of a unitary gate on its own qubits (first qubit in the low bit).
    pub fn operator(&self) -> Option<Operator> {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        Some(match *self {
            Gate::RotY { qubit, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                Operator::single(
                    qubit,
                    [
                        [C64::new(c, 0.0), C64::new(-s, 0.0)],
                        [C64::new(s, 0.0), C64::new(c, 0.0)],
                    ],
                )
            }
            Gate::RotZ { qubit, angle } => Operator::single(
                qubit,
                [
                    [C64::from_polar(1.0, -angle / 2.0), o],
                    [o, C64::from_polar(1.0, angle / 2.0)],
                ],
            ),
            Gate::Cnot { control, target } => {
                let reg = Register::new([control, target]).ok()?;
                let mut m = nalgebra::DMatrix::from_element(4, 4, o);
                // index = c + 2t
                m[(0, 0)] = l;
                m[(2, 2)] = l;
                m[(3, 1)] = l;
                m[(1, 3)] = l;
                Operator::new(reg, m).ok()?
            }
            Gate::ControlledRotZ {
                control,
                target,
                angle,
            } => {
                let reg = Register::new([control, target]).ok()?;
                let mut m = nalgebra::DMatrix::from_element(4, 4, o);
                m[(0, 0)] = l;
                m[(2, 2)] = l;
                m[(1, 1)] = C64::from_polar(1.0, -angle / 2.0);
                m[(3, 3)] = C64::from_polar(1.0, angle / 2.0);
                Operator::new(reg, m).ok()?
            }
            Gate::MeasureKeep { .. } => return None,
        })
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::RotY { qubit, angle } => write!(f, "RY {qubit} {angle:?}"),
            Gate::RotZ { qubit, angle } => write!(f, "RZ {qubit} {angle:?}"),
            Gate::Cnot { control, target } => write!(f, "CNOT {control},{target}"),
            Gate::ControlledRotZ {
                control,
                target,
                angle,
            } => write!(f, "CRZ {control},{target} {angle:?}"),
            Gate::MeasureKeep { qubit, outcome } => write!(f, "KEEP {qubit} {outcome}"),
        }
    }
}

/// An ordered gate list over a register. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    register: Register,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(register: Register, gates: Vec<Gate>) -> Result<Self> {
        for g in &gates {
            g.validate().map_err(Error::InvalidArgument)?;
            if let Some(q) = g.qubits().into_iter().find(|q| !register.contains(*q)) {
                return Err(Error::RegisterMismatch(format!(
                    "gate `{g}` uses {q} outside {register}"
                )));
            }
        }
        Ok(Self { register, gates })
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// `|0…0⟩` on the circuit register.
    pub fn zero_state(&self) -> Ket {
        Ket::basis(self.register.clone(), 0).expect("index 0 exists")
    }

    /// The same circuit with every `KEEP` removed.
    pub fn without_measurements(&self) -> Circuit {
        Circuit {
            register: self.register.clone(),
            gates: self
                .gates
                .iter()
                .filter(|g| !g.is_measurement())
                .copied()
                .collect(),
        }
    }

    /// Inverse of a measurement-free circuit.
    pub fn inverse(&self) -> Result<Circuit> {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|g| {
                g.inverse()
                    .ok_or_else(|| Error::InvalidArgument(format!("`{g}` has no inverse")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Circuit {
            register: self.register.clone(),
            gates,
        })
    }

    pub fn then(&self, other: &Circuit) -> Result<Circuit> {
        if !self.register.same_set(&other.register) {
            return Err(Error::RegisterMismatch(format!(
                "{} vs {}",
                self.register, other.register
            )));
        }
        let mut gates = self.gates.clone();
        gates.extend_from_slice(&other.gates);
        Ok(Circuit {
            register: self.register.clone(),
            gates,
        })
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Circuit> {
        text.parse()
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self
            .register
            .qubits()
            .iter()
            .map(|q| q.to_string())
            .collect();
        writeln!(f, "REGISTER {}", names.join(","))?;
        for g in &self.gates {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}

fn parse_qubits(field: &str) -> std::result::Result<Vec<Qubit>, String> {
    field.split(',').map(Qubit::from_str).collect()
}

fn parse_angle(field: Option<&str>) -> std::result::Result<f64, String> {
    let s = field.ok_or("missing angle")?;
    let x: f64 = s.parse().map_err(|_| format!("invalid angle `{s}`"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("non-finite angle `{s}`"))
    }
}

fn parse_gate(line: &str) -> std::result::Result<Gate, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let name = fields[0];
    let qubits = parse_qubits(fields.get(1).ok_or("missing qubit list")?)?;
    let arity = if matches!(name, "CNOT" | "CRZ") { 2 } else { 1 };
    if qubits.len() != arity {
        return Err(format!(
            "{name} takes {arity} qubit(s), found {}",
            qubits.len()
        ));
    }
    let expected_fields = if name == "CNOT" { 2 } else { 3 };
    if fields.len() != expected_fields {
        return Err(format!(
            "{name} expects {expected_fields} fields, found {}",
            fields.len()
        ));
    }
    let gate = match name {
        "RY" => Gate::RotY {
            qubit: qubits[0],
            angle: parse_angle(fields.get(2).copied())?,
        },
        "RZ" => Gate::RotZ {
            qubit: qubits[0],
            angle: parse_angle(fields.get(2).copied())?,
        },
        "CNOT" => Gate::Cnot {
            control: qubits[0],
            target: qubits[1],
        },
        "CRZ" => Gate::ControlledRotZ {
            control: qubits[0],
            target: qubits[1],
            angle: parse_angle(fields.get(2).copied())?,
        },
        "KEEP" => {
            let outcome = match fields[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("invalid outcome `{other}`")),
            };
            Gate::MeasureKeep {
                qubit: qubits[0],
                outcome,
            }
        }
        other => return Err(format!("unknown gate `{other}`")),
    };
    gate.validate()?;
    Ok(gate)
}

impl FromStr for Circuit {
    type Err = Error;

    fn from_str(text: &str) -> Result<Circuit> {
        let mut register: Option<Register> = None;
        let mut gates = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            match &register {
                None => {
                    let rest = line
                        .strip_prefix("REGISTER")
                        .ok_or_else(|| err("expected REGISTER header".into()))?;
                    let rest = rest.trim();
                    let qubits = if rest.is_empty() {
                        Vec::new()
                    } else {
                        parse_qubits(rest).map_err(err)?
                    };
                    register = Some(Register::new(qubits).map_err(|e| err(e.to_string()))?);
                }
                Some(reg) => {
                    let gate = parse_gate(line).map_err(err)?;
                    if let Some(q) = gate.qubits().into_iter().find(|q| !reg.contains(*q)) {
                        return Err(err(format!("{q} is not in the register")));
                    }
                    gates.push(gate);
                }
            }
        }
        let register = register.ok_or(Error::Parse {
            line: 0,
            msg: "missing REGISTER header".into(),
        })?;
        Circuit::new(register, gates)
    }
}

/// Final state of a run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Normalized surviving branch on the full circuit register.
    pub state: Ket,
    /// Product of all kept-branch probabilities.
    pub kept_prob: f64,
    /// Every `KEEP` in order of application.
    pub measured: Vec<(Qubit, u8)>,
}

impl RunOutput {
    fn last_outcome(&self, q: Qubit) -> Option<u8> {
        self.measured
            .iter()
            .rev()
            .find(|(x, _)| *x == q)
            .map(|(_, b)| *b)
    }

    /// The state of the qubits that were never measured, with measured qubits
    /// contracted against their kept outcomes.
    pub fn unmeasured(&self) -> Result<Ket> {
        let keep = Register::new(
            self.state
                .register()
                .qubits()
                .iter()
                .copied()
                .filter(|q| self.last_outcome(*q).is_none()),
        )?;
        self.residual_on(&keep)
    }

    /// The normalized state of `keep`, contracting every other qubit against
    /// its kept outcome, or `|0⟩` if it was never measured.
    pub fn residual_on(&self, keep: &Register) -> Result<Ket> {
        let others = self.state.register().without(keep);
        if others.is_empty() {
            return self.state.permute_to(keep);
        }
        let index: usize = others
            .qubits()
            .iter()
            .enumerate()
            .map(|(j, q)| usize::from(self.last_outcome(*q).unwrap_or(0)) << j)
            .sum();
        let (residual, _) = statevec::project(&self.state, &Ket::basis(others, index)?)?;
        residual.permute_to(keep)?.normalized()
    }
}

fn rotate(amps: &mut [C64], bit: usize, u: [[C64; 2]; 2]) {
    let mask = 1usize << bit;
    for i in 0..amps.len() {
        if i & mask == 0 {
            let (a0, a1) = (amps[i], amps[i | mask]);
            amps[i] = u[0][0] * a0 + u[0][1] * a1;
            amps[i | mask] = u[1][0] * a0 + u[1][1] * a1;
        }
    }
}

/// Applies the gates in order. Each `KEEP` projects, renormalizes and
/// multiplies the kept probability.
pub fn run(circuit: &Circuit, initial: &Ket) -> Result<RunOutput> {
    let initial = initial.permute_to(&circuit.register)?;
    let reg = initial.register().clone();
    let pos = |q: Qubit| reg.position(q).expect("validated against the register");
    let mut amps = initial.into_amplitudes();
    let mut kept_prob = 1.0;
    let mut measured = Vec::new();
    for gate in &circuit.gates {
        match *gate {
            Gate::RotY { qubit, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let (s, c) = (C64::new(s, 0.0), C64::new(c, 0.0));
                rotate(&mut amps, pos(qubit), [[c, -s], [s, c]]);
            }
            Gate::RotZ { qubit, angle } => {
                let z = C64::new(0.0, 0.0);
                let (lo, hi) = (
                    C64::from_polar(1.0, -angle / 2.0),
                    C64::from_polar(1.0, angle / 2.0),
                );
                rotate(&mut amps, pos(qubit), [[lo, z], [z, hi]]);
            }
            Gate::Cnot { control, target } => {
                let (c, t) = (1usize << pos(control), 1usize << pos(target));
                for i in 0..amps.len() {
                    if i & c != 0 && i & t == 0 {
                        amps.swap(i, i | t);
                    }
                }
            }
            Gate::ControlledRotZ {
                control,
                target,
                angle,
            } => {
                let (c, t) = (1usize << pos(control), 1usize << pos(target));
                let (lo, hi) = (
                    C64::from_polar(1.0, -angle / 2.0),
                    C64::from_polar(1.0, angle / 2.0),
                );
                for (i, a) in amps.iter_mut().enumerate() {
                    if i & c != 0 {
                        *a *= if i & t == 0 { lo } else { hi };
                    }
                }
            }
            Gate::MeasureKeep { qubit, outcome } => {
                let m = 1usize << pos(qubit);
                let want = if outcome == 1 { m } else { 0 };
                let mut p = 0.0;
                for (i, a) in amps.iter_mut().enumerate() {
                    if i & m == want {
                        p += a.norm_sqr();
                    } else {
                        *a = C64::new(0.0, 0.0);
                    }
                }
                kept_prob *= p;
                if p <= tol::UNDERFLOW || kept_prob <= tol::UNDERFLOW {
                    return Err(Error::VanishingBranch(kept_prob));
                }
                let scale = 1.0 / p.sqrt();
                amps.iter_mut().for_each(|a| *a *= scale);
                measured.push((qubit, outcome));
            }
        }
    }
    Ok(RunOutput {
        state: Ket::from_amplitudes(reg, amps)?,
        kept_prob,
        measured,
    })
}

/// Which optimum the entangled postselection targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostselectionMode {
    /// Weak value fixed near `i/ε`, postselection probability `≈ n²ε²`.
    MaxPs,
    /// Probability fixed near `nε²`, weak value `≈ i√n/ε`.
    MaxAw,
}

impl PostselectionMode {
    /// Half of the final `R_z` angle: `nε` or `√n ε`.
    pub fn phase(self, n: usize, epsilon: f64) -> f64 {
        match self {
            Self::MaxPs => n as f64 * epsilon,
            Self::MaxAw => (n as f64).sqrt() * epsilon,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MaxPs => "max_ps",
            Self::MaxAw => "max_aw",
        }
    }
}

fn q(k: usize) -> Qubit {
    Qubit(k)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument(
            "at least one ancilla is required".into(),
        ))
    } else {
        Ok(())
    }
}

/// One ancilla (`q0`) and one meter (`q1`): prepare both in `|+⟩`, couple
/// with `CRZ(2φ)`, postselect the ancilla on `R_z(2ε)|−⟩`.
pub fn build_single_ancilla(phi: f64, epsilon: f64) -> Result<Circuit> {
    Circuit::new(
        Register::range(0, 2)?,
        vec![
            Gate::RotY {
                qubit: q(1),
                angle: FRAC_PI_2,
            },
            Gate::RotY {
                qubit: q(0),
                angle: FRAC_PI_2,
            },
            Gate::ControlledRotZ {
                control: q(0),
                target: q(1),
                angle: 2.0 * phi,
            },
            Gate::RotZ {
                qubit: q(0),
                angle: -2.0 * epsilon,
            },
            Gate::RotY {
                qubit: q(0),
                angle: FRAC_PI_2,
            },
            Gate::MeasureKeep {
                qubit: q(0),
                outcome: 0,
            },
        ],
    )
}

fn ghz_gates(n: usize) -> Vec<Gate> {
    let mut gates = vec![Gate::RotY {
        qubit: q(0),
        angle: FRAC_PI_2,
    }];
    gates.extend((1..n).map(|k| Gate::Cnot {
        control: q(k - 1),
        target: q(k),
    }));
    gates
}

fn postselection_gates(n: usize, epsilon: f64, mode: PostselectionMode) -> Vec<Gate> {
    let mut gates: Vec<Gate> = (1..n)
        .rev()
        .map(|k| Gate::Cnot {
            control: q(k - 1),
            target: q(k),
        })
        .collect();
    gates.push(Gate::RotZ {
        qubit: q(0),
        angle: -2.0 * mode.phase(n, epsilon),
    });
    gates.push(Gate::RotY {
        qubit: q(0),
        angle: FRAC_PI_2,
    });
    gates.extend((0..n).map(|k| Gate::MeasureKeep {
        qubit: q(k),
        outcome: 0,
    }));
    gates
}

/// `R_y(π/2)` on `q0` followed by a CNOT chain, giving `(|0…0⟩ + |1…1⟩)/√2`.
pub fn build_ghz_prep(n: usize) -> Result<Circuit> {
    check_n(n)?;
    Circuit::new(Register::range(0, n)?, ghz_gates(n))
}

/// Reverse CNOT chain, `R_z(−2nε)` or `R_z(−2√n ε)` and `R_y(π/2)` on `q0`,
/// then keep `|0⟩` on every ancilla. Postselects
/// `(e^{−iθ}|0…0⟩ − e^{iθ}|1…1⟩)/√2` with `θ` from [`PostselectionMode::phase`].
pub fn build_entangled_postselection(
    n: usize,
    epsilon: f64,
    mode: PostselectionMode,
) -> Result<Circuit> {
    check_n(n)?;
    Circuit::new(
        Register::range(0, n)?,
        postselection_gates(n, epsilon, mode),
    )
}

/// Full protocol on ancillas `q0..q{n−1}` and meter `q{n}`.
pub fn build_protocol(
    n: usize,
    epsilon: f64,
    phi: f64,
    mode: PostselectionMode,
) -> Result<Circuit> {
    check_n(n)?;
    let meter = q(n);
    let mut gates = vec![Gate::RotY {
        qubit: meter,
        angle: FRAC_PI_2,
    }];
    gates.extend(ghz_gates(n));
    gates.extend((0..n).map(|k| Gate::ControlledRotZ {
        control: q(k),
        target: meter,
        angle: 2.0 * phi,
    }));
    gates.extend(postselection_gates(n, epsilon, mode));
    Circuit::new(Register::range(0, n + 1)?, gates)
}

/// The postselected ancilla state `|Ψf⟩` of [`build_entangled_postselection`].
pub fn postselection_target(n: usize, epsilon: f64, mode: PostselectionMode) -> Result<Ket> {
    let c = build_entangled_postselection(n, epsilon, mode)?;
    let inv = c.without_measurements().inverse()?;
    Ok(run(&inv, &c.zero_state())?.state)
}

/// Physical qubit holding the persistent root ancilla in [`qubit_reuse_schedule`].
pub const REUSE_ROOT: Qubit = Qubit(0);
/// Physical qubit recycled for every other ancilla.
pub const REUSE_SLOT: Qubit = Qubit(1);
/// Physical meter qubit.
pub const REUSE_METER: Qubit = Qubit(2);

/// The protocol of [`build_protocol`] on three physical qubits.
///
/// Each non-root ancilla is copied from the root onto a recycled slot,
/// couples to the meter, is uncomputed and kept at `|0⟩` before the slot is
/// reused. The root couples last and is postselected as in the full circuit.
pub fn qubit_reuse_schedule(
    n: usize,
    epsilon: f64,
    phi: f64,
    mode: PostselectionMode,
) -> Result<Circuit> {
    check_n(n)?;
    let (root, slot, meter) = (REUSE_ROOT, REUSE_SLOT, REUSE_METER);
    let mut gates = vec![
        Gate::RotY {
            qubit: meter,
            angle: FRAC_PI_2,
        },
        Gate::RotY {
            qubit: root,
            angle: FRAC_PI_2,
        },
    ];
    for _ in 1..n {
        gates.push(Gate::Cnot {
            control: root,
            target: slot,
        });
        gates.push(Gate::ControlledRotZ {
            control: slot,
            target: meter,
            angle: 2.0 * phi,
        });
        gates.push(Gate::Cnot {
            control: root,
            target: slot,
        });
        gates.push(Gate::MeasureKeep {
            qubit: slot,
            outcome: 0,
        });
    }
    gates.push(Gate::ControlledRotZ {
        control: root,
        target: meter,
        angle: 2.0 * phi,
    });
    gates.push(Gate::RotZ {
        qubit: root,
        angle: -2.0 * mode.phase(n, epsilon),
    });
    gates.push(Gate::RotY {
        qubit: root,
        angle: FRAC_PI_2,
    });
    gates.push(Gate::MeasureKeep {
        qubit: root,
        outcome: 0,
    });
    Circuit::new(Register::range(0, 3)?, gates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statevec::{fidelity, inner};

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-15
    }

    #[test]
    fn rz_on_minus_matches_postselection_amplitudes() {
        let eps = 0.1;
        let c = Circuit::new(
            Register::single(0),
            vec![
                Gate::RotY {
                    qubit: q(0),
                    angle: -FRAC_PI_2,
                },
                Gate::RotZ {
                    qubit: q(0),
                    angle: 2.0 * eps,
                },
            ],
        )
        .unwrap();
        let out = run(&c, &c.zero_state()).unwrap().state;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(out.amplitudes()[0], C64::from_polar(h, -eps)));
        assert!(close(out.amplitudes()[1], -C64::from_polar(h, eps)));
    }

    #[test]
    fn kernels_match_dense_operators() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let reg = Register::range(0, 3).unwrap();
        let psi = statevec::random::ket(reg.clone(), &mut rng);
        let gates = [
            Gate::RotY {
                qubit: q(1),
                angle: 0.7,
            },
            Gate::RotZ {
                qubit: q(2),
                angle: -1.3,
            },
            Gate::Cnot {
                control: q(2),
                target: q(0),
            },
            Gate::ControlledRotZ {
                control: q(0),
                target: q(2),
                angle: 0.4,
            },
        ];
        for g in gates {
            let c = Circuit::new(reg.clone(), vec![g]).unwrap();
            let fast = run(&c, &psi).unwrap().state;
            let op = g.operator().unwrap();
            assert!(op.is_unitary(1e-12));
            let dense = statevec::apply(&op, &psi).unwrap();
            for (a, b) in fast.amplitudes().iter().zip(dense.amplitudes()) {
                assert!((a - b).norm() < 1e-14, "{g}");
            }
        }
    }

    #[test]
    fn empty_circuit_is_identity() {
        let c = Circuit::new(Register::range(0, 2).unwrap(), vec![]).unwrap();
        let psi = statevec::tensor(&Ket::plus(0), &Ket::minus(1)).unwrap();
        let out = run(&c, &psi).unwrap();
        assert_eq!(out.state, psi);
        assert_eq!(out.kept_prob, 1.0);
    }

    #[test]
    fn ghz_preparation() {
        let c = build_ghz_prep(1).unwrap();
        let out = run(&c, &c.zero_state()).unwrap().state;
        assert!(fidelity(&out, &Ket::plus(0)).unwrap() > 1.0 - 1e-15);

        let c = build_ghz_prep(3).unwrap();
        let out = run(&c, &c.zero_state()).unwrap().state;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (i, a) in out.amplitudes().iter().enumerate() {
            let expect = if i == 0 || i == 7 { h } else { 0.0 };
            assert!((a.re - expect).abs() < 1e-15 && a.im.abs() < 1e-15);
        }
    }

    #[test]
    fn single_ancilla_probability() {
        let c = build_single_ancilla(0.0, 0.1).unwrap();
        let out = run(&c, &c.zero_state()).unwrap();
        assert!((out.kept_prob - 0.1f64.sin().powi(2)).abs() < 1e-12);
        assert_eq!(out.measured, vec![(q(0), 0)]);
        let meter = out.unmeasured().unwrap();
        assert_eq!(meter.register(), &Register::single(1));
        assert!(fidelity(&meter, &Ket::plus(1)).unwrap() > 1.0 - 1e-14);
    }

    #[test]
    fn postselection_target_form() {
        let (n, eps) = (3, 0.05);
        let t = postselection_target(n, eps, PostselectionMode::MaxPs).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let th = n as f64 * eps;
        let mut amps = vec![C64::new(0.0, 0.0); 8];
        amps[0] = C64::from_polar(h, -th);
        amps[7] = -C64::from_polar(h, th);
        let expect = Ket::from_amplitudes(Register::range(0, 3).unwrap(), amps).unwrap();
        assert!((inner(&expect, &t).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn single_ancilla_is_entangled_n1() {
        for mode in [PostselectionMode::MaxPs, PostselectionMode::MaxAw] {
            assert_eq!(
                build_protocol(1, 0.1, 0.01, mode).unwrap(),
                build_single_ancilla(0.01, 0.1).unwrap()
            );
        }
    }

    #[test]
    fn schedule_matches_full_protocol() {
        for mode in [PostselectionMode::MaxPs, PostselectionMode::MaxAw] {
            for n in 1..=5 {
                let full = build_protocol(n, 0.03, 0.005, mode).unwrap();
                let a = run(&full, &full.zero_state()).unwrap();
                let sched = qubit_reuse_schedule(n, 0.03, 0.005, mode).unwrap();
                assert_eq!(sched.register().len(), 3);
                let b = run(&sched, &sched.zero_state()).unwrap();
                let ma = a.residual_on(&Register::single(n)).unwrap();
                let mb = b.residual_on(&Register::single(REUSE_METER)).unwrap();
                let mb = mb.relabel(ma.register().clone()).unwrap();
                assert!(fidelity(&ma, &mb).unwrap() > 1.0 - 1e-12);
                assert!((a.kept_prob - b.kept_prob).abs() / a.kept_prob < 1e-10);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let c = build_protocol(3, 0.05, 1e-3, PostselectionMode::MaxAw).unwrap();
        let text = c.to_text();
        assert!(text.starts_with("REGISTER q0,q1,q2,q3\n"));
        assert!(text.contains("CRZ q0,q3 0.002\n"));
        let back = Circuit::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn text_parse_errors() {
        assert!(matches!(
            Circuit::parse("RY q0 1.0"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0\nRY q1 1.0"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0\nRY q0"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0\nKEEP q0 2"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0,q1\nCNOT q0,q0"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0\nRZ q0 NaN"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Circuit::parse("REGISTER q0\nH q0"),
            Err(Error::Parse { .. })
        ));
        let ok = Circuit::parse("# comment\n\nREGISTER q0\nRY q0 -0.0\n").unwrap();
        assert!(
            matches!(ok.gates()[0], Gate::RotY { angle, .. } if angle.to_bits() == (-0.0f64).to_bits())
        );
    }

    #[test]
    fn vanishing_keep() {
        let c = Circuit::new(
            Register::single(0),
            vec![Gate::MeasureKeep {
                qubit: q(0),
                outcome: 1,
            }],
        )
        .unwrap();
        assert!(matches!(
            run(&c, &c.zero_state()),
            Err(Error::VanishingBranch(_))
        ));
    }

    #[test]
    fn circuit_validation() {
        let r = Circuit::new(
            Register::single(0),
            vec![Gate::RotY {
                qubit: q(1),
                angle: 0.1,
            }],
        );
        assert!(matches!(r, Err(Error::RegisterMismatch(_))));
        let r = Circuit::new(
            Register::single(0),
            vec![Gate::RotY {
                qubit: q(0),
                angle: f64::NAN,
            }],
        );
        assert!(r.is_err());
    }
}
