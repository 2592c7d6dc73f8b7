//! In-memory knowledge base, program execution and the binary reward.
//!
//! # File format
//!
//! A knowledge base file is UTF-8 and line oriented. Blank lines and lines
//! whose first non-space character is `#` are ignored. Every other line is a
//! whitespace-separated list of tokens:
//!
//! ```text
//! !type <type>                          declare an entity type
//! !prop <type> <prop> numeric|categorical
//! !vocab <type> <literal>...            extra literals for the type's grammar pool
//! <entity-id> type <type>               declare an entity (must precede its values)
//! <entity-id> <prop> <value>            one property value
//! ```
//!
//! Names are identifiers (`[A-Za-z_][A-Za-z0-9_]*`, not `select`, `where`,
//! `and` or `type`). Entity ids are non-empty and contain no whitespace.
//! Numeric values are 64-bit signed integers. `!type` and `!prop` lines must
//! appear before any data line that uses them. The declared schema doubles
//! as the grammar: every property of a type may be followed by any literal in
//! the type's pool, which is the set of values occurring in the data for that
//! type plus its `!vocab` literals.
//!
//! [`KnowledgeBase::to_text`] writes the canonical form: types and properties
//! in declaration order, `!vocab` lines with sorted literals, then entities in
//! declaration order with properties in declaration order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::minilang::{EntityTypeSpec, Grammar, Literal, Op, Program, PropertySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropKind {
    Numeric,
    Categorical,
}

impl PropKind {
    fn token(self) -> &'static str {
        match self {
            PropKind::Numeric => "numeric",
            PropKind::Categorical => "categorical",
        }
    }

    fn admits(self, value: &Literal) -> bool {
        matches!(
            (self, value),
            (PropKind::Numeric, Literal::Num(_)) | (PropKind::Categorical, Literal::Cat(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSchema {
    pub name: String,
    pub properties: Vec<(String, PropKind)>,
    /// Literals declared with `!vocab`, beyond those in the data.
    pub extra_vocab: BTreeSet<Literal>,
}

impl TypeSchema {
    pub fn kind_of(&self, prop: &str) -> Option<PropKind> {
        self.properties
            .iter()
            .find(|(p, _)| p == prop)
            .map(|(_, k)| *k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub entity_type: String,
    pub values: BTreeMap<String, Literal>,
}

/// Result set of an executed program.
pub type Denotation = BTreeSet<String>;

/// Typed entities with numeric and categorical properties. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    types: Vec<TypeSchema>,
    entities: Vec<Entity>,
    index: BTreeMap<String, usize>,
    pools: BTreeMap<String, BTreeSet<Literal>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_type(&mut self, name: &str) -> Result<()> {
        if !is_schema_name(name) || self.schema(name).is_some() {
            return Err(Error::Spec(format!("bad or duplicate type `{name}`")));
        }
        self.types.push(TypeSchema {
            name: name.to_string(),
            properties: Vec::new(),
            extra_vocab: BTreeSet::new(),
        });
        Ok(())
    }

    pub fn add_property(&mut self, ty: &str, prop: &str, kind: PropKind) -> Result<()> {
        if !is_schema_name(prop) {
            return Err(Error::Spec(format!("bad property name `{prop}`")));
        }
        let schema = self.schema_mut(ty)?;
        if schema.kind_of(prop).is_some() {
            return Err(Error::Spec(format!(
                "duplicate property `{prop}` on `{ty}`"
            )));
        }
        schema.properties.push((prop.to_string(), kind));
        Ok(())
    }

    pub fn add_vocab(&mut self, ty: &str, literal: Literal) -> Result<()> {
        self.schema_mut(ty)?.extra_vocab.insert(literal.clone());
        self.pools
            .entry(ty.to_string())
            .or_default()
            .insert(literal);
        Ok(())
    }

    pub fn add_entity(&mut self, id: &str, ty: &str) -> Result<()> {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::Spec(format!("bad entity id `{id}`")));
        }
        if self.schema(ty).is_none() {
            return Err(Error::UnknownName(format!("type `{ty}`")));
        }
        if self.index.contains_key(id) {
            return Err(Error::Spec(format!("duplicate entity id `{id}`")));
        }
        self.index.insert(id.to_string(), self.entities.len());
        self.entities.push(Entity {
            id: id.to_string(),
            entity_type: ty.to_string(),
            values: BTreeMap::new(),
        });
        Ok(())
    }

    pub fn set_value(&mut self, id: &str, prop: &str, value: Literal) -> Result<()> {
        let pos = *self
            .index
            .get(id)
            .ok_or_else(|| Error::UnknownName(format!("entity `{id}`")))?;
        let ty = self.entities[pos].entity_type.clone();
        let kind = self
            .schema(&ty)
            .and_then(|s| s.kind_of(prop))
            .ok_or_else(|| Error::UnknownName(format!("property `{prop}` on `{ty}`")))?;
        if !kind.admits(&value) {
            return Err(Error::Type(format!(
                "value `{value}` does not fit {} property `{prop}`",
                kind.token()
            )));
        }
        let entity = &mut self.entities[pos];
        if entity.values.contains_key(prop) {
            return Err(Error::Spec(format!("duplicate value for `{id}.{prop}`")));
        }
        entity.values.insert(prop.to_string(), value.clone());
        self.pools.entry(ty).or_default().insert(value);
        Ok(())
    }

    pub fn types(&self) -> &[TypeSchema] {
        &self.types
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn schema(&self, ty: &str) -> Option<&TypeSchema> {
        self.types.iter().find(|t| t.name == ty)
    }

    fn schema_mut(&mut self, ty: &str) -> Result<&mut TypeSchema> {
        self.types
            .iter_mut()
            .find(|t| t.name == ty)
            .ok_or_else(|| Error::UnknownName(format!("type `{ty}`")))
    }

    /// Literal pool of a type: data values plus declared extras.
    pub fn literal_pool(&self, ty: &str) -> BTreeSet<Literal> {
        self.pools.get(ty).cloned().unwrap_or_default()
    }

    fn in_pool(&self, ty: &str, lit: &Literal) -> bool {
        self.pools.get(ty).is_some_and(|p| p.contains(lit))
    }

    /// The grammar induced by the schema: each property of a type accepts
    /// every literal in the type's pool.
    pub fn grammar(&self, max_conjuncts: usize) -> Result<Grammar> {
        let types = self
            .types
            .iter()
            .map(|t| {
                let vocab: Vec<Literal> = self.literal_pool(&t.name).into_iter().collect();
                EntityTypeSpec {
                    name: t.name.clone(),
                    properties: t
                        .properties
                        .iter()
                        .map(|(p, _)| PropertySpec {
                            name: p.clone(),
                            vocab: vocab.clone(),
                        })
                        .collect(),
                }
            })
            .collect();
        Grammar::new(types, max_conjuncts)
    }

    /// Runs `p`. Every condition is checked against the schema before any row
    /// is read, so errors never depend on the data.
    pub fn execute(&self, p: &Program) -> Result<Denotation> {
        let schema = self
            .schema(&p.target_type)
            .ok_or_else(|| Error::UnknownName(format!("type `{}`", p.target_type)))?;
        for c in &p.conditions {
            let kind = schema.kind_of(&c.property).ok_or_else(|| {
                Error::UnknownName(format!("property `{}` on `{}`", c.property, schema.name))
            })?;
            if matches!(c.value, Literal::Cat(_)) && !self.in_pool(&schema.name, &c.value) {
                return Err(Error::UnknownName(format!("value `{}`", c.value)));
            }
            match (kind, c.op, &c.value) {
                (PropKind::Numeric, _, Literal::Num(_)) => {}
                (PropKind::Categorical, Op::Eq, Literal::Cat(_)) => {}
                (PropKind::Categorical, Op::Gt | Op::Lt, _) => {
                    return Err(Error::Type(format!(
                        "`{}` on categorical property `{}`",
                        c.op, c.property
                    )))
                }
                _ => {
                    return Err(Error::Type(format!(
                        "literal `{}` does not match {} property `{}`",
                        c.value,
                        kind.token(),
                        c.property
                    )))
                }
            }
        }
        Ok(self
            .entities
            .iter()
            .filter(|e| e.entity_type == p.target_type)
            .filter(|e| {
                p.conditions
                    .iter()
                    .all(|c| match (e.values.get(&c.property), &c.value) {
                        (Some(Literal::Num(v)), Literal::Num(lit)) => match c.op {
                            Op::Eq => v == lit,
                            Op::Gt => v > lit,
                            Op::Lt => v < lit,
                        },
                        (Some(v), lit) => v == lit,
                        (None, _) => false,
                    })
            })
            .map(|e| e.id.clone())
            .collect())
    }

    /// 1 iff `p` executes without error and returns a non-empty result.
    pub fn reward(&self, p: &Program) -> Reward {
        match self.execute(p) {
            Ok(d) if !d.is_empty() => Reward::One,
            _ => Reward::Zero,
        }
    }

    /// Execution-accuracy match: `p` runs and returns exactly gold's result set.
    pub fn denotation_match(&self, p: &Program, gold: &Program) -> bool {
        match (self.execute(p), self.execute(gold)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kb = KnowledgeBase::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            let fail = |message: String| Error::KbFormat { line, message };
            let wrap = |e: Error| Error::KbFormat {
                line,
                message: e.to_string(),
            };
            match toks[0] {
                "!type" => {
                    if toks.len() != 2 {
                        return Err(fail("expected `!type <name>`".into()));
                    }
                    kb.add_type(toks[1]).map_err(wrap)?;
                }
                "!prop" => {
                    if toks.len() != 4 {
                        return Err(fail(
                            "expected `!prop <type> <prop> numeric|categorical`".into(),
                        ));
                    }
                    let kind = match toks[3] {
                        "numeric" => PropKind::Numeric,
                        "categorical" => PropKind::Categorical,
                        other => return Err(fail(format!("unknown property kind `{other}`"))),
                    };
                    kb.add_property(toks[1], toks[2], kind).map_err(wrap)?;
                }
                "!vocab" => {
                    if toks.len() < 2 {
                        return Err(fail("expected `!vocab <type> <literal>...`".into()));
                    }
                    for t in &toks[2..] {
                        let lit = Literal::from_token(t)
                            .ok_or_else(|| fail(format!("bad literal `{t}`")))?;
                        kb.add_vocab(toks[1], lit).map_err(wrap)?;
                    }
                }
                d if d.starts_with('!') => return Err(fail(format!("unknown directive `{d}`"))),
                _ => {
                    if toks.len() != 3 {
                        return Err(fail("expected `<entity-id> <prop> <value>`".into()));
                    }
                    if toks[1] == "type" {
                        kb.add_entity(toks[0], toks[2]).map_err(wrap)?;
                    } else {
                        let value = Literal::from_token(toks[2])
                            .ok_or_else(|| fail(format!("bad value `{}`", toks[2])))?;
                        kb.set_value(toks[0], toks[1], value).map_err(wrap)?;
                    }
                }
            }
        }
        Ok(kb)
    }

    /// Canonical text form; `header` lines are written as `#` comments first.
    pub fn to_text(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        for t in &self.types {
            let _ = writeln!(out, "!type {}", t.name);
        }
        for t in &self.types {
            for (p, k) in &t.properties {
                let _ = writeln!(out, "!prop {} {} {}", t.name, p, k.token());
            }
        }
        for t in &self.types {
            if !t.extra_vocab.is_empty() {
                let lits: Vec<String> = t.extra_vocab.iter().map(|l| l.to_string()).collect();
                let _ = writeln!(out, "!vocab {} {}", t.name, lits.join(" "));
            }
        }
        for e in &self.entities {
            let _ = writeln!(out, "{} type {}", e.id, e.entity_type);
            let schema = self.schema(&e.entity_type).expect("entity type declared");
            for (p, _) in &schema.properties {
                if let Some(v) = e.values.get(p) {
                    let _ = writeln!(out, "{} {} {}", e.id, p, v);
                }
            }
        }
        out
    }
}

fn is_schema_name(s: &str) -> bool {
    let mut chars = s.chars();
    let head_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(s, "select" | "where" | "and" | "type")
}

/// Binary executability reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reward {
    Zero,
    One,
}

impl Reward {
    pub fn value(self) -> f64 {
        match self {
            Reward::Zero => 0.0,
            Reward::One => 1.0,
        }
    }

    pub fn is_one(self) -> bool {
        self == Reward::One
    }
}
