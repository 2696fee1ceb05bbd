//! Finite join-semilattices of information-flow labels.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// An interned label name. Two labels are equal iff their names are.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(Arc<str>);

impl Label {
    pub fn new(name: &str) -> Self {
        Label(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate element `{0}`")]
    DuplicateElement(Label),
    #[error("flow edge mentions undeclared element `{0}`")]
    DanglingEdge(Label),
    #[error("`{0}` and `{1}` have no least upper bound")]
    MissingJoin(Label, Label),
    #[error("lattice has no top element")]
    NoTop,
    #[error("unknown label `{0}`")]
    UnknownLabel(Label),
    #[error("no greatest lower bound for {{{}}}", .0.iter().map(|l| l.name()).collect::<Vec<_>>().join(", "))]
    NoMeet(Vec<Label>),
}

/// A validated finite join-semilattice with a top element.
///
/// Immutable after construction.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelLattice {
    elements: Vec<Label>,
    index: HashMap<Label, usize>,
    flows: Vec<Vec<bool>>,
    join: Vec<Vec<usize>>,
    top: usize,
}

impl fmt::Debug for LabelLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelLattice").field("elements", &self.elements).field("top", &self.elements[self.top]).finish()
    }
}

impl LabelLattice {
    /// Parse the plain-text description: `element NAME` and `flow A B` lines, `#` comments.
    pub fn parse(text: &str) -> Result<Self, LatticeError> {
        let mut elements = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["element", name] => elements.push(Label::new(name)),
                ["flow", a, b] => edges.push((Label::new(a), Label::new(b))),
                _ => {
                    return Err(LatticeError::Syntax {
                        line: i + 1,
                        msg: format!("expected `element NAME` or `flow A B`, got `{line}`"),
                    })
                }
            }
        }
        Self::from_parts(elements, edges)
    }

    /// Build a lattice from elements and declared edges, computing closure, joins and top.
    pub fn from_parts(elements: Vec<Label>, edges: Vec<(Label, Label)>) -> Result<Self, LatticeError> {
        let mut index = HashMap::new();
        for (i, l) in elements.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(LatticeError::DuplicateElement(l.clone()));
            }
        }
        if elements.is_empty() {
            return Err(LatticeError::NoTop);
        }
        let n = elements.len();
        let mut flows = vec![vec![false; n]; n];
        for (i, row) in flows.iter_mut().enumerate() {
            row[i] = true;
        }
        for (a, b) in &edges {
            let ia = *index.get(a).ok_or_else(|| LatticeError::DanglingEdge(a.clone()))?;
            let ib = *index.get(b).ok_or_else(|| LatticeError::DanglingEdge(b.clone()))?;
            flows[ia][ib] = true;
        }
        // Warshall closure
        for k in 0..n {
            for i in 0..n {
                if flows[i][k] {
                    for j in 0..n {
                        if flows[k][j] {
                            flows[i][j] = true;
                        }
                    }
                }
            }
        }
        let mut join = vec![vec![0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let uppers: Vec<usize> = (0..n).filter(|&c| flows[a][c] && flows[b][c]).collect();
                let least: Vec<usize> = uppers.iter().copied().filter(|&c| uppers.iter().all(|&d| flows[c][d])).collect();
                // In a preorder with cycles several equivalent elements may qualify; we require a unique one.
                if least.len() != 1 {
                    return Err(LatticeError::MissingJoin(elements[a].clone(), elements[b].clone()));
                }
                join[a][b] = least[0];
            }
        }
        let tops: Vec<usize> = (0..n).filter(|&t| (0..n).all(|i| flows[i][t])).collect();
        if tops.len() != 1 {
            return Err(LatticeError::NoTop);
        }
        Ok(LabelLattice { elements, index, flows, join, top: tops[0] })
    }

    pub fn elements(&self) -> &[Label] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn top(&self) -> Label {
        self.elements[self.top].clone()
    }

    pub fn contains(&self, l: &Label) -> bool {
        self.index.contains_key(l)
    }

    fn idx(&self, l: &Label) -> Result<usize, LatticeError> {
        self.index.get(l).copied().ok_or_else(|| LatticeError::UnknownLabel(l.clone()))
    }

    pub fn flows(&self, a: &Label, b: &Label) -> Result<bool, LatticeError> {
        Ok(self.flows[self.idx(a)?][self.idx(b)?])
    }

    /// Like [`flows`](Self::flows) but for labels already known to be members.
    ///
    /// # Panics
    /// If either label is not an element.
    pub fn leq(&self, a: &Label, b: &Label) -> bool {
        self.flows(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn join(&self, a: &Label, b: &Label) -> Result<Label, LatticeError> {
        Ok(self.elements[self.join[self.idx(a)?][self.idx(b)?]].clone())
    }

    /// Greatest lower bound of a nonempty set, by exhaustive search.
    pub fn meet(&self, labels: &[Label]) -> Result<Label, LatticeError> {
        let idxs = labels.iter().map(|l| self.idx(l)).collect::<Result<Vec<_>, _>>()?;
        if idxs.is_empty() {
            return Ok(self.top());
        }
        let n = self.len();
        let lowers: Vec<usize> = (0..n).filter(|&x| idxs.iter().all(|&l| self.flows[x][l])).collect();
        let greatest: Vec<usize> = lowers.iter().copied().filter(|&g| lowers.iter().all(|&x| self.flows[x][g])).collect();
        match greatest.as_slice() {
            [g] => Ok(self.elements[*g].clone()),
            _ => Err(LatticeError::NoMeet(labels.to_vec())),
        }
    }

    /// Elements with nothing strictly below them.
    pub fn minimal_elements(&self) -> Vec<Label> {
        let n = self.len();
        (0..n)
            .filter(|&i| (0..n).all(|j| j == i || !self.flows[j][i] || self.flows[i][j]))
            .map(|i| self.elements[i].clone())
            .collect()
    }

    /// Render back to the text format (declared edges are the full closure minus reflexive pairs).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            out.push_str(&format!("element {e}\n"));
        }
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in self.elements.iter().enumerate() {
                if i != j && self.flows[i][j] {
                    out.push_str(&format!("flow {a} {b}\n"));
                }
            }
        }
        out
    }
}

/// Name of the left injection of `l` in a coproduct lattice.
pub fn inl_label(l: &Label) -> Label {
    Label::new(&format!("inl({l})"))
}

/// Name of the right injection of `l` in a coproduct lattice.
pub fn inr_label(l: &Label) -> Label {
    Label::new(&format!("inr({l})"))
}

/// Name of the fresh top of a coproduct lattice.
pub const COPRODUCT_TOP: &str = "top*";

/// Two disjoint copies of `lat` with a fresh top; cross-side joins go to that top.
pub fn coproduct_with_top(lat: &LabelLattice) -> LabelLattice {
    let top = Label::new(COPRODUCT_TOP);
    let mut elements = Vec::new();
    let mut edges = Vec::new();
    for inj in [inl_label as fn(&Label) -> Label, inr_label] {
        for a in lat.elements() {
            elements.push(inj(a));
            edges.push((inj(a), top.clone()));
            for b in lat.elements() {
                if a != b && lat.leq(a, b) {
                    edges.push((inj(a), inj(b)));
                }
            }
        }
    }
    elements.push(top);
    LabelLattice::from_parts(elements, edges).expect("coproduct of a valid lattice is a semilattice")
}

/// Two-point lattice `Pub ⊑ Sec`.
pub fn two_point() -> LabelLattice {
    LabelLattice::parse("element Pub\nelement Sec\nflow Pub Sec\n").expect("valid")
}
