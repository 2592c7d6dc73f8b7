//! The miniature query language.
//!
//! Programs have the shape `select <type> where <prop> <op> <value> (and ...)*`
//! with one to three conjuncts. A [`Grammar`] fixes the symbols available to a
//! decoder and turns programs into action sequences and back. The grammar only
//! guarantees syntactic well-formedness: `star_rating = thai` is a legal
//! program even though it can never execute.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Hard upper bound on the number of conjuncts in any program.
pub const MAX_CONDITIONS: usize = 3;

/// Default bound for [`Grammar::enumerate_programs`].
pub const DEFAULT_ENUMERATION_BOUND: usize = 1_000_000;

/// Comparison operator of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Eq,
    Gt,
    Lt,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Eq, Op::Gt, Op::Lt];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Gt => ">",
            Op::Lt => "<",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Op> {
        match s {
            "=" => Some(Op::Eq),
            ">" => Some(Op::Gt),
            "<" => Some(Op::Lt),
            _ => None,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A literal token: an integer or a categorical identifier.
///
/// Numbers order before categorical tokens; this is the order literal actions
/// are allocated in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Num(i64),
    Cat(String),
}

impl Literal {
    /// Classifies a token: anything that parses as an `i64` is numeric.
    pub fn from_token(tok: &str) -> Option<Literal> {
        if let Ok(n) = tok.parse::<i64>() {
            return Some(Literal::Num(n));
        }
        if is_identifier(tok) {
            Some(Literal::Cat(tok.to_string()))
        } else {
            None
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Literal::Num(_))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Num(n) => write!(f, "{n}"),
            Literal::Cat(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub property: String,
    pub op: Op,
    pub value: Literal,
}

impl Condition {
    pub fn new(property: impl Into<String>, op: Op, value: Literal) -> Self {
        Condition {
            property: property.into(),
            op,
            value,
        }
    }
}

/// A select-where query over one entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Program {
    pub target_type: String,
    pub conditions: Vec<Condition>,
}

impl Program {
    pub fn new(target_type: impl Into<String>, conditions: Vec<Condition>) -> Result<Self> {
        if conditions.is_empty() || conditions.len() > MAX_CONDITIONS {
            return Err(Error::InvalidProgram(format!(
                "expected 1..={MAX_CONDITIONS} conditions, got {}",
                conditions.len()
            )));
        }
        Ok(Program {
            target_type: target_type.into(),
            conditions,
        })
    }

    /// Canonical single-line text form.
    pub fn render(&self) -> String {
        let mut out = format!("select {} where", self.target_type);
        for (i, c) in self.conditions.iter().enumerate() {
            if i > 0 {
                out.push_str(" and");
            }
            out.push_str(&format!(" {} {} {}", c.property, c.op, c.value));
        }
        out
    }

    /// Number of grammar actions needed to produce this program.
    pub fn action_len(&self) -> usize {
        4 * self.conditions.len() + 1
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::str::FromStr for Program {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

const KEYWORDS: [&str; 3] = ["select", "where", "and"];

fn is_identifier(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_name(tok: &str) -> bool {
    is_identifier(tok) && !KEYWORDS.contains(&tok)
}

/// Parses canonical program text. Whitespace between tokens is free-form.
pub fn parse(text: &str) -> Result<Program> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let err = |index: usize, message: &str| Error::Syntax {
        index,
        message: message.to_string(),
    };
    let tok = |i: usize| toks.get(i).copied();

    if tok(0) != Some("select") {
        return Err(err(0, "expected `select`"));
    }
    let target_type = match tok(1) {
        Some(t) if is_name(t) => t.to_string(),
        _ => return Err(err(1, "expected an entity type")),
    };
    if tok(2) != Some("where") {
        return Err(err(2, "expected `where`"));
    }
    let mut conditions = Vec::new();
    let mut i = 3;
    loop {
        let property = match tok(i) {
            Some(t) if is_name(t) => t.to_string(),
            _ => return Err(err(i, "expected a property")),
        };
        let op = match tok(i + 1).and_then(Op::from_symbol) {
            Some(op) => op,
            None => return Err(err(i + 1, "expected one of `=`, `>`, `<`")),
        };
        let value = match tok(i + 2) {
            Some(t) if !KEYWORDS.contains(&t) => match Literal::from_token(t) {
                Some(v) => v,
                None => return Err(err(i + 2, "expected a literal")),
            },
            _ => return Err(err(i + 2, "expected a literal")),
        };
        conditions.push(Condition {
            property,
            op,
            value,
        });
        i += 3;
        match tok(i) {
            None => break,
            Some("and") if conditions.len() < MAX_CONDITIONS => i += 1,
            Some("and") => return Err(err(i, "too many conditions")),
            Some(_) => return Err(err(i, "expected `and` or end of program")),
        }
    }
    Ok(Program {
        target_type,
        conditions,
    })
}

/// Index into the grammar's global action table.
pub type ActionId = usize;

pub const STOP: ActionId = 0;
pub const AND: ActionId = 1;
const OP_BASE: ActionId = 2;
const TYPE_BASE: ActionId = 5;

/// What a single action emits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Stop,
    And,
    Op(Op),
    Type(String),
    Prop(String),
    Lit(Literal),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Stop => f.write_str("<stop>"),
            Action::And => f.write_str("and"),
            Action::Op(op) => write!(f, "{op}"),
            Action::Type(t) => f.write_str(t),
            Action::Prop(p) => f.write_str(p),
            Action::Lit(l) => write!(f, "{l}"),
        }
    }
}

/// A property as the grammar sees it: a name plus the literals that may
/// follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertySpec {
    pub name: String,
    pub vocab: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTypeSpec {
    pub name: String,
    pub properties: Vec<PropertySpec>,
}

#[derive(Debug, Clone, PartialEq)]
struct TypeIndex {
    /// Property actions (ascending) for properties with a non-empty vocabulary.
    prop_mask: Vec<ActionId>,
    /// Literal actions per entry of `prop_mask`.
    lit_masks: Vec<Vec<ActionId>>,
}

/// Decoder position inside the production structure. `n` counts completed
/// conditions; `prop` indexes the type's reachable property list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrammarState {
    ExpectType,
    ExpectProp { ty: usize, n: usize },
    ExpectOp { ty: usize, prop: usize, n: usize },
    ExpectLit { ty: usize, prop: usize, n: usize },
    AfterCondition { ty: usize, n: usize },
    Done,
}

const OPS_MASK: [ActionId; 3] = [OP_BASE, OP_BASE + 1, OP_BASE + 2];
const STOP_MASK: [ActionId; 1] = [STOP];
const STOP_AND_MASK: [ActionId; 2] = [STOP, AND];

/// Symbols and production rules of the query language.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    types: Vec<EntityTypeSpec>,
    max_conjuncts: usize,
    actions: Vec<Action>,
    index: Vec<TypeIndex>,
    start_mask: Vec<ActionId>,
    type_ids: BTreeMap<String, usize>,
    prop_actions: BTreeMap<String, ActionId>,
    lit_actions: BTreeMap<Literal, ActionId>,
}

impl Grammar {
    /// Builds a grammar. Types keep the given order; properties with an empty
    /// vocabulary are unreachable and types without reachable properties are
    /// masked out at the start state.
    pub fn new(types: Vec<EntityTypeSpec>, max_conjuncts: usize) -> Result<Self> {
        if max_conjuncts == 0 || max_conjuncts > MAX_CONDITIONS {
            return Err(Error::InvalidGrammar(format!(
                "max_conjuncts must be in 1..={MAX_CONDITIONS}, got {max_conjuncts}"
            )));
        }
        let mut seen = BTreeSet::new();
        for t in &types {
            if !is_name(&t.name) || !seen.insert(t.name.as_str()) {
                return Err(Error::InvalidGrammar(format!(
                    "bad or duplicate type `{}`",
                    t.name
                )));
            }
            let mut props = BTreeSet::new();
            for p in &t.properties {
                if !is_name(&p.name) || !props.insert(p.name.as_str()) {
                    return Err(Error::InvalidGrammar(format!(
                        "bad or duplicate property `{}` on `{}`",
                        p.name, t.name
                    )));
                }
            }
        }

        let prop_names: BTreeSet<&str> = types
            .iter()
            .flat_map(|t| t.properties.iter().map(|p| p.name.as_str()))
            .collect();
        let literals: BTreeSet<&Literal> = types
            .iter()
            .flat_map(|t| t.properties.iter().flat_map(|p| p.vocab.iter()))
            .collect();

        let mut actions = vec![Action::Stop, Action::And];
        actions.extend(Op::ALL.iter().map(|&o| Action::Op(o)));
        actions.extend(types.iter().map(|t| Action::Type(t.name.clone())));
        let prop_base = actions.len();
        actions.extend(prop_names.iter().map(|p| Action::Prop(p.to_string())));
        let lit_base = actions.len();
        actions.extend(literals.iter().map(|l| Action::Lit((*l).clone())));

        let prop_actions: BTreeMap<String, ActionId> = prop_names
            .iter()
            .enumerate()
            .map(|(i, p)| (p.to_string(), prop_base + i))
            .collect();
        let lit_actions: BTreeMap<Literal, ActionId> = literals
            .iter()
            .enumerate()
            .map(|(i, l)| ((*l).clone(), lit_base + i))
            .collect();

        let index: Vec<TypeIndex> = types
            .iter()
            .map(|t| {
                let mut props: Vec<(ActionId, Vec<ActionId>)> = t
                    .properties
                    .iter()
                    .filter(|p| !p.vocab.is_empty())
                    .map(|p| {
                        let mut lits: Vec<ActionId> =
                            p.vocab.iter().map(|l| lit_actions[l]).collect();
                        lits.sort_unstable();
                        lits.dedup();
                        (prop_actions[&p.name], lits)
                    })
                    .collect();
                props.sort_by_key(|(a, _)| *a);
                let (prop_mask, lit_masks) = props.into_iter().unzip();
                TypeIndex {
                    prop_mask,
                    lit_masks,
                }
            })
            .collect();

        let start_mask: Vec<ActionId> = index
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.prop_mask.is_empty())
            .map(|(i, _)| TYPE_BASE + i)
            .collect();
        if start_mask.is_empty() {
            return Err(Error::InvalidGrammar("grammar admits no programs".into()));
        }
        let type_ids = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();

        Ok(Grammar {
            types,
            max_conjuncts,
            actions,
            index,
            start_mask,
            type_ids,
            prop_actions,
            lit_actions,
        })
    }

    pub fn types(&self) -> &[EntityTypeSpec] {
        &self.types
    }

    pub fn max_conjuncts(&self) -> usize {
        self.max_conjuncts
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action(&self, id: ActionId) -> &Action {
        &self.actions[id]
    }

    /// Legal actions at `state`, ascending. Empty only at [`GrammarState::Done`].
    pub fn legal_actions(&self, state: &GrammarState) -> &[ActionId] {
        match *state {
            GrammarState::ExpectType => &self.start_mask,
            GrammarState::ExpectProp { ty, .. } => &self.index[ty].prop_mask,
            GrammarState::ExpectOp { .. } => &OPS_MASK,
            GrammarState::ExpectLit { ty, prop, .. } => &self.index[ty].lit_masks[prop],
            GrammarState::AfterCondition { n, .. } if n < self.max_conjuncts => &STOP_AND_MASK,
            GrammarState::AfterCondition { .. } => &STOP_MASK,
            GrammarState::Done => &[],
        }
    }

    pub fn is_legal(&self, state: &GrammarState, action: ActionId) -> bool {
        self.legal_actions(state).binary_search(&action).is_ok()
    }

    /// Applies `action` at `state`; `None` when the action is masked out.
    pub fn transition(&self, state: &GrammarState, action: ActionId) -> Option<GrammarState> {
        if !self.is_legal(state, action) {
            return None;
        }
        let next = match *state {
            GrammarState::ExpectType => GrammarState::ExpectProp {
                ty: action - TYPE_BASE,
                n: 0,
            },
            GrammarState::ExpectProp { ty, n } => {
                let prop = self.index[ty].prop_mask.binary_search(&action).ok()?;
                GrammarState::ExpectOp { ty, prop, n }
            }
            GrammarState::ExpectOp { ty, prop, n } => GrammarState::ExpectLit { ty, prop, n },
            GrammarState::ExpectLit { ty, n, .. } => GrammarState::AfterCondition { ty, n: n + 1 },
            GrammarState::AfterCondition { ty, n } => {
                if action == STOP {
                    GrammarState::Done
                } else {
                    GrammarState::ExpectProp { ty, n }
                }
            }
            GrammarState::Done => return None,
        };
        Some(next)
    }

    /// The unique action sequence producing `p`.
    pub fn actions(&self, p: &Program) -> Result<Vec<ActionId>> {
        if p.conditions.is_empty() || p.conditions.len() > self.max_conjuncts {
            return Err(Error::UnknownSymbol(format!(
                "{} conditions exceed the grammar's limit of {}",
                p.conditions.len(),
                self.max_conjuncts
            )));
        }
        let ty = *self
            .type_ids
            .get(&p.target_type)
            .ok_or_else(|| Error::UnknownSymbol(format!("type `{}`", p.target_type)))?;
        let mut out = Vec::with_capacity(p.action_len());
        out.push(TYPE_BASE + ty);
        for (i, c) in p.conditions.iter().enumerate() {
            if i > 0 {
                out.push(AND);
            }
            let prop_action = self
                .prop_actions
                .get(&c.property)
                .copied()
                .ok_or_else(|| Error::UnknownSymbol(format!("property `{}`", c.property)))?;
            let prop = self.index[ty]
                .prop_mask
                .binary_search(&prop_action)
                .map_err(|_| {
                    Error::UnknownSymbol(format!(
                        "property `{}` on type `{}`",
                        c.property, p.target_type
                    ))
                })?;
            let lit = self
                .lit_actions
                .get(&c.value)
                .copied()
                .filter(|a| self.index[ty].lit_masks[prop].binary_search(a).is_ok())
                .ok_or_else(|| {
                    Error::UnknownSymbol(format!("literal `{}` for `{}`", c.value, c.property))
                })?;
            out.push(prop_action);
            out.push(OP_BASE + c.op as usize);
            out.push(lit);
        }
        out.push(STOP);
        Ok(out)
    }

    /// Inverse of [`Grammar::actions`]. Fails with `IllegalAction` on the first
    /// masked-out action, or when the sequence is incomplete or overlong.
    pub fn decode(&self, seq: &[ActionId]) -> Result<Program> {
        let mut state = GrammarState::ExpectType;
        let mut target_type = String::new();
        let mut conditions: Vec<Condition> = Vec::new();
        let mut pending: (String, Op) = (String::new(), Op::Eq);
        for (t, &a) in seq.iter().enumerate() {
            let next = self
                .transition(&state, a)
                .ok_or(Error::IllegalAction { step: t, action: a })?;
            match &self.actions[a] {
                Action::Type(name) => target_type = name.clone(),
                Action::Prop(name) => pending.0 = name.clone(),
                Action::Op(op) => pending.1 = *op,
                Action::Lit(l) => conditions.push(Condition {
                    property: std::mem::take(&mut pending.0),
                    op: pending.1,
                    value: l.clone(),
                }),
                Action::Stop | Action::And => {}
            }
            state = next;
            if state == GrammarState::Done && t + 1 != seq.len() {
                return Err(Error::IllegalAction {
                    step: t + 1,
                    action: seq[t + 1],
                });
            }
        }
        if state != GrammarState::Done {
            return Err(Error::IllegalAction {
                step: seq.len(),
                action: usize::MAX,
            });
        }
        Ok(Program {
            target_type,
            conditions,
        })
    }

    /// All complete programs in lexicographic order of their action sequences.
    pub fn enumerate_programs(&self) -> Result<Vec<Program>> {
        self.enumerate_programs_bounded(DEFAULT_ENUMERATION_BOUND)
    }

    pub fn enumerate_programs_bounded(&self, bound: usize) -> Result<Vec<Program>> {
        Ok(self
            .enumerate_sequences(bound)?
            .iter()
            .map(|s| self.decode(s).expect("enumerated sequence decodes"))
            .collect())
    }

    /// All complete action sequences, lexicographically ordered.
    pub fn enumerate_sequences(&self, bound: usize) -> Result<Vec<Vec<ActionId>>> {
        let count = self.count_programs();
        if count > bound as u128 {
            return Err(Error::CapacityExceeded { count, bound });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut prefix = Vec::new();
        self.dfs(GrammarState::ExpectType, &mut prefix, &mut out);
        Ok(out)
    }

    fn dfs(&self, state: GrammarState, prefix: &mut Vec<ActionId>, out: &mut Vec<Vec<ActionId>>) {
        if state == GrammarState::Done {
            out.push(prefix.clone());
            return;
        }
        for &a in self.legal_actions(&state) {
            let next = self.transition(&state, a).expect("mask-legal action");
            prefix.push(a);
            self.dfs(next, prefix, out);
            prefix.pop();
        }
    }

    /// Size of the program space, computed without enumerating it.
    pub fn count_programs(&self) -> u128 {
        self.index
            .iter()
            .map(|t| {
                let per_cond: u128 = t.lit_masks.iter().map(|l| 3 * l.len() as u128).sum();
                (1..=self.max_conjuncts as u32)
                    .map(|k| per_cond.pow(k))
                    .sum::<u128>()
            })
            .sum()
    }

    /// Human-readable rendering of an action sequence.
    pub fn describe(&self, seq: &[ActionId]) -> String {
        seq.iter()
            .map(|&a| {
                self.actions
                    .get(a)
                    .map_or("?".to_string(), |x| x.to_string())
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lexicographic comparison of action sequences, the global tie-break.
pub fn cmp_sequences(a: &[ActionId], b: &[ActionId]) -> Ordering {
    a.cmp(b)
}
