//! Desk-scale executable checks: equivalence checkers, program and context enumeration,
//! and the named verification suites.

pub mod contexts;
pub mod equiv;
pub mod gen;
pub mod golden;
pub mod suites;

use std::fmt;
use std::sync::Arc;

use crate::effects::{ComposeMode, EffectPolicy, Mode};
use crate::labels::LabelLattice;

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckLine {
    pub suite: String,
    pub case: String,
    pub passed: bool,
    /// Verdict text, or the witness when the check failed.
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{}\t{}\t{}\t{}", self.suite, self.case, verdict, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub lines: Vec<CheckLine>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, suite: &str, case: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.lines.push(CheckLine { suite: suite.into(), case: case.into(), passed, detail: detail.into() });
    }

    pub fn extend(&mut self, other: Report) {
        self.lines.extend(other.lines);
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.lines.iter().filter(|l| !l.passed)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// The lattice files shipped with the crate, by name.
pub fn shipped_lattices() -> Vec<(&'static str, LabelLattice)> {
    [
        ("two-point", include_str!("../../lattices/two-point.lat")),
        ("chain3", include_str!("../../lattices/chain3.lat")),
        ("diamond", include_str!("../../lattices/diamond.lat")),
    ]
    .into_iter()
    .map(|(n, text)| (n, LabelLattice::parse(text).expect("shipped lattice parses")))
    .collect()
}

/// Every global-flow policy over the shipped lattices for `mode`.
pub fn standard_policies(mode: Mode) -> Vec<EffectPolicy> {
    let mut out = Vec::new();
    for (_, lat) in shipped_lattices() {
        let lat = Arc::new(lat);
        let labels = lat.elements().to_vec();
        match mode {
            Mode::StateExn => {
                for st in &labels {
                    for ex in &labels {
                        if let Ok(p) = EffectPolicy::new(lat.clone(), mode, st.clone(), ex.clone(), None, ComposeMode::GlobalFlow)
                        {
                            out.push(p);
                        }
                    }
                }
            }
            Mode::Pnt => {
                for pnt in &labels {
                    let top = lat.top();
                    out.push(
                        EffectPolicy::new(lat.clone(), mode, top.clone(), top, Some(pnt.clone()), ComposeMode::GlobalFlow)
                            .expect("valid"),
                    );
                }
            }
        }
    }
    out
}

/// One-line description of a policy for report lines.
pub fn describe_policy(p: &EffectPolicy) -> String {
    let names: Vec<&str> = p.lattice().elements().iter().map(|l| l.name()).collect();
    match p.mode() {
        Mode::StateExn => {
            let partial = if p.compose_mode() == ComposeMode::Partial { " mode=partial" } else { "" };
            format!("[{}] lState={} lExn={}{partial}", names.join(","), p.l_state(), p.l_exn())
        }
        Mode::Pnt => format!("[{}] lPnt={}", names.join(","), p.l_pnt()),
    }
}
