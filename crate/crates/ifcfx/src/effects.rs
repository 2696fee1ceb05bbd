//! Effect alphabets, effect sets, composition, effect labels and the companion `gamma`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::labels::{Label, LabelLattice, LatticeError};

/// Which effect alphabet a program uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `{R, W, E}`
    StateExn,
    /// `{PNT}`
    Pnt,
}

impl Mode {
    pub fn alphabet(self) -> EffectSet {
        match self {
            Mode::StateExn => EffectSet::RWE,
            Mode::Pnt => EffectSet::PNT,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Mode::StateExn => "state-exn",
            Mode::Pnt => "pnt",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "state-exn" => Ok(Mode::StateExn),
            "pnt" => Ok(Mode::Pnt),
            _ => Err(format!("unknown mode `{s}` (expected state-exn or pnt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Effect {
    R,
    W,
    E,
    Pnt,
}

impl Effect {
    const ALL: [Effect; 4] = [Effect::R, Effect::W, Effect::E, Effect::Pnt];

    fn bit(self) -> u8 {
        match self {
            Effect::R => 1,
            Effect::W => 2,
            Effect::E => 4,
            Effect::Pnt => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Effect::R => "R",
            Effect::W => "W",
            Effect::E => "E",
            Effect::Pnt => "PNT",
        }
    }
}

/// A set of effects, stored canonically as a bitset.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct EffectSet(u8);

impl EffectSet {
    pub const EMPTY: EffectSet = EffectSet(0);
    pub const R: EffectSet = EffectSet(1);
    pub const W: EffectSet = EffectSet(2);
    pub const E: EffectSet = EffectSet(4);
    pub const RW: EffectSet = EffectSet(3);
    pub const RE: EffectSet = EffectSet(5);
    pub const WE: EffectSet = EffectSet(6);
    pub const RWE: EffectSet = EffectSet(7);
    pub const PNT: EffectSet = EffectSet(8);

    pub fn of(effects: &[Effect]) -> Self {
        EffectSet(effects.iter().fold(0, |acc, e| acc | e.bit()))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, e: Effect) -> bool {
        self.0 & e.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: EffectSet) -> EffectSet {
        EffectSet(self.0 | other.0)
    }

    pub fn minus(self, other: EffectSet) -> EffectSet {
        EffectSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: EffectSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = Effect> {
        Effect::ALL.into_iter().filter(move |e| self.contains(*e))
    }

    /// Every subset of `self`, in increasing bit order.
    pub fn subsets(self) -> Vec<EffectSet> {
        (0..=self.0).filter(|b| b & !self.0 == 0).map(EffectSet).collect()
    }

    pub fn union_all(sets: &[EffectSet]) -> EffectSet {
        sets.iter().fold(EffectSet::EMPTY, |a, b| a.union(*b))
    }
}

impl fmt::Display for EffectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.members().map(Effect::name).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl fmt::Debug for EffectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for EffectSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let inner = t
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| format!("effect set must be written {{...}}, got `{t}`"))?;
        let mut set = EffectSet::EMPTY;
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let e = match part {
                "R" => Effect::R,
                "W" => Effect::W,
                "E" => Effect::E,
                "PNT" => Effect::Pnt,
                other => return Err(format!("unknown effect `{other}`")),
            };
            set = set.union(EffectSet::of(&[e]));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComposeMode {
    GlobalFlow,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("global-flow state/exception policy needs lExn ⊑ lState, but {exn} ⋢ {state}")]
    ExnAboveState { exn: Label, state: Label },
    #[error("partial composition is only defined for the state-exn alphabet")]
    PartialNeedsStateExn,
    #[error("bad policy setting: {0}")]
    Setting(String),
}

/// Label assignments for effects plus the composition discipline.
#[derive(Clone, Debug)]
pub struct EffectPolicy {
    lattice: Arc<LabelLattice>,
    mode: Mode,
    l_state: Label,
    l_exn: Label,
    l_pnt: Label,
    compose: ComposeMode,
    /// Effect label per subset, indexed by bits.
    table: Vec<Label>,
}

impl EffectPolicy {
    /// Validate and precompute effect labels. `l_pnt` defaults to top when absent.
    pub fn new(
        lattice: Arc<LabelLattice>,
        mode: Mode,
        l_state: Label,
        l_exn: Label,
        l_pnt: Option<Label>,
        compose: ComposeMode,
    ) -> Result<Self, PolicyError> {
        let l_pnt = l_pnt.unwrap_or_else(|| lattice.top());
        for l in [&l_state, &l_exn, &l_pnt] {
            if !lattice.contains(l) {
                return Err(LatticeError::UnknownLabel(l.clone()).into());
            }
        }
        if compose == ComposeMode::Partial && mode != Mode::StateExn {
            return Err(PolicyError::PartialNeedsStateExn);
        }
        if compose == ComposeMode::GlobalFlow && mode == Mode::StateExn && !lattice.leq(&l_exn, &l_state) {
            return Err(PolicyError::ExnAboveState { exn: l_exn, state: l_state });
        }
        let mut table = vec![lattice.top(); 16];
        for eps in mode.alphabet().subsets() {
            let comps: Vec<Label> = eps
                .members()
                .map(|e| match e {
                    Effect::R => lattice.top(),
                    Effect::W => l_state.clone(),
                    Effect::E => l_exn.clone(),
                    Effect::Pnt => l_pnt.clone(),
                })
                .collect();
            table[eps.bits() as usize] = lattice.meet(&comps)?;
        }
        Ok(EffectPolicy { lattice, mode, l_state, l_exn, l_pnt, compose, table })
    }

    /// A policy whose effect-label table is replaced wholesale (used by the coproduct
    /// construction and by negative controls). No validation of the table is done.
    pub fn with_effect_labels(mut self, table: impl Fn(EffectSet) -> Label) -> Self {
        for eps in self.mode.alphabet().subsets() {
            self.table[eps.bits() as usize] = table(eps);
        }
        self
    }

    /// Parse `KEY=VAL` settings (`lState`, `lExn`, `lPnt`, `mode=global|partial`), optionally
    /// prefixed by the word `policy`.
    pub fn from_settings<'a>(
        lattice: Arc<LabelLattice>,
        mode: Mode,
        settings: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, PolicyError> {
        let top = lattice.top();
        let mut l_state = None;
        let mut l_exn = None;
        let mut l_pnt = None;
        let mut compose = ComposeMode::GlobalFlow;
        for s in settings {
            if s == "policy" {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| PolicyError::Setting(format!("expected KEY=VAL, got `{s}`")))?;
            match k {
                "lState" => l_state = Some(Label::new(v)),
                "lExn" => l_exn = Some(Label::new(v)),
                "lPnt" => l_pnt = Some(Label::new(v)),
                "mode" => {
                    compose = match v {
                        "global" => ComposeMode::GlobalFlow,
                        "partial" => ComposeMode::Partial,
                        _ => return Err(PolicyError::Setting(format!("mode must be global or partial, got `{v}`"))),
                    }
                }
                _ => return Err(PolicyError::Setting(format!("unknown key `{k}`"))),
            }
        }
        Self::new(lattice, mode, l_state.unwrap_or_else(|| top.clone()), l_exn.unwrap_or_else(|| top.clone()), l_pnt, compose)
    }

    pub fn lattice(&self) -> &LabelLattice {
        &self.lattice
    }

    pub fn lattice_arc(&self) -> Arc<LabelLattice> {
        self.lattice.clone()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn l_state(&self) -> &Label {
        &self.l_state
    }

    pub fn l_exn(&self) -> &Label {
        &self.l_exn
    }

    pub fn l_pnt(&self) -> &Label {
        &self.l_pnt
    }

    pub fn compose_mode(&self) -> ComposeMode {
        self.compose
    }

    pub fn leq(&self, a: &Label, b: &Label) -> bool {
        self.lattice.leq(a, b)
    }

    /// `ℓ_ε`: top for the empty set and `{R}`, otherwise the meet of the component labels.
    pub fn effect_label(&self, eps: EffectSet) -> Label {
        self.table[eps.bits() as usize].clone()
    }

    /// Binary partial rule: `ε₁ ∪ ε₂ ⊆ ε₃` and (`E ∉ ε₁` or `lExn ⊑ ℓ_{ε₂}`).
    fn compose2(&self, e1: EffectSet, e2: EffectSet, e3: EffectSet) -> bool {
        e1.union(e2).is_subset(e3) && (!e1.contains(Effect::E) || self.leq(&self.l_exn, &self.effect_label(e2)))
    }

    /// Whether `⟨parts⟩ ≥ whole` holds.
    pub fn compose(&self, parts: &[EffectSet], whole: EffectSet) -> bool {
        match self.compose {
            ComposeMode::GlobalFlow => EffectSet::union_all(parts).is_subset(whole),
            ComposeMode::Partial => match parts {
                [] => true,
                [only] => only.is_subset(whole),
                [first, rest @ ..] => {
                    let mut acc = *first;
                    for (i, next) in rest.iter().enumerate() {
                        let target = if i + 1 == rest.len() { whole } else { acc.union(*next) };
                        if !self.compose2(acc, *next, target) {
                            return false;
                        }
                        acc = acc.union(*next);
                    }
                    true
                }
            },
        }
    }

    /// The effects observable at or above `l`.
    pub fn gamma(&self, l: &Label) -> EffectSet {
        match self.mode {
            Mode::StateExn => {
                let mut s = EffectSet::R;
                if self.leq(l, &self.l_state) {
                    s = s.union(EffectSet::W);
                }
                if self.leq(l, &self.l_exn) {
                    s = s.union(EffectSet::E);
                }
                s
            }
            Mode::Pnt => {
                if self.leq(l, &self.l_pnt) {
                    EffectSet::PNT
                } else {
                    EffectSet::EMPTY
                }
            }
        }
    }

    /// Exhaustively compare `ℓ ⊑ ℓ_ε` with `ε ⊆ γ(ℓ)`.
    pub fn check_galois(&self) -> GaloisReport {
        let mut report = GaloisReport::default();
        for l in self.lattice.elements() {
            for eps in self.mode.alphabet().subsets() {
                report.cases += 1;
                let lhs = self.leq(l, &self.effect_label(eps));
                let rhs = eps.is_subset(self.gamma(l));
                if lhs != rhs {
                    report.failures.push((l.clone(), eps));
                }
            }
        }
        report
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GaloisReport {
    pub cases: usize,
    pub failures: Vec<(Label, EffectSet)>,
}

impl GaloisReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}
