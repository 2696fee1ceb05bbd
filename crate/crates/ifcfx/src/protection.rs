//! The protection relations `ℓ ◁ τ` for the pure, pc and type-and-effect calculi.

use std::fmt;

use thiserror::Error;

use crate::effects::EffectPolicy;
use crate::labels::Label;
use crate::syntax::Type;

/// Which of the three typing disciplines a type or term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum System {
    Pure,
    Pc,
    Effect,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Pure => "pure",
            System::Pc => "pc",
            System::Effect => "effect",
        })
    }
}

impl std::str::FromStr for System {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pure" => Ok(System::Pure),
            "pc" => Ok(System::Pc),
            "effect" => Ok(System::Effect),
            _ => Err(format!("unknown system `{s}` (expected pure, pc or effect)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type `{ty}` does not belong to the {system} calculus")]
pub struct WrongCalculus {
    pub system: System,
    pub ty: Type,
}

/// `ℓ ◁ τ` in the system that `system` names.
pub fn protects(policy: &EffectPolicy, system: System, l: &Label, t: &Type) -> Result<bool, WrongCalculus> {
    let wrong = || WrongCalculus { system, ty: t.clone() };
    let rec = |t: &Type| protects(policy, system, l, t);
    Ok(match t {
        Type::Unit | Type::Sum(..) => false,
        Type::Prod(a, b) => rec(a)? && rec(b)?,
        Type::Labeled(l2, inner) => policy.leq(l, l2) || rec(inner)?,
        Type::FunPure(_, b) => {
            if system != System::Pure {
                return Err(wrong());
            }
            rec(b)?
        }
        Type::FunPc(_, pc, b) => {
            if system != System::Pc {
                return Err(wrong());
            }
            rec(b)? && policy.leq(l, pc)
        }
        Type::FunEff(_, eps, b) => {
            if system != System::Effect {
                return Err(wrong());
            }
            rec(b)? && policy.leq(l, &policy.effect_label(*eps))
        }
        Type::Lift(inner) => {
            if system != System::Pure {
                return Err(wrong());
            }
            policy.leq(l, policy.l_pnt()) && rec(inner)?
        }
    })
}

pub fn protects_pure(policy: &EffectPolicy, l: &Label, t: &Type) -> Result<bool, WrongCalculus> {
    protects(policy, System::Pure, l, t)
}

pub fn protects_pc(policy: &EffectPolicy, l: &Label, t: &Type) -> Result<bool, WrongCalculus> {
    protects(policy, System::Pc, l, t)
}

pub fn protects_eff(policy: &EffectPolicy, l: &Label, t: &Type) -> Result<bool, WrongCalculus> {
    protects(policy, System::Effect, l, t)
}
