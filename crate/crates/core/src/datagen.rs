//! Synthetic corpora: a random knowledge base, template-generated utterances
//! with gold programs, labeled/unlabeled splits and their TSV files.
//!
//! Templates are plain strings with slots:
//!
//! - `{type}`: a noun phrase for the target entity type
//! - `{conds}`: all remaining condition phrases, joined by `and`
//! - `{cond:<prop>}`: the phrase of a condition on `<prop>`, which is then
//!   always part of the gold program
//!
//! A template is only used for types that have every property it names.
//!
//! Gold programs are built around a randomly chosen row, so they always
//! select at least that row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::executor::{KnowledgeBase, PropKind};
use crate::minilang::{parse, Condition, Literal, Op, Program, MAX_CONDITIONS};

#[derive(Debug, Clone, PartialEq)]
pub struct PropGen {
    pub name: String,
    pub kind: PropKind,
    pub values: Vec<Literal>,
    /// Surface patterns per operator; `{v}` is replaced by the literal.
    pub phrases: Vec<(Op, Vec<String>)>,
}

impl PropGen {
    fn patterns(&self, op: Op) -> &[String] {
        self.phrases
            .iter()
            .find(|(o, _)| *o == op)
            .map(|(_, p)| p.as_slice())
            .unwrap_or(&[])
    }

    fn ops(&self) -> Vec<Op> {
        Op::ALL
            .into_iter()
            .filter(|op| !self.patterns(*op).is_empty())
            .filter(|op| self.kind == PropKind::Numeric || *op == Op::Eq)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeGen {
    pub name: String,
    pub nouns: Vec<String>,
    pub rows: usize,
    pub properties: Vec<PropGen>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub types: Vec<TypeGen>,
    pub templates: Vec<String>,
    pub noise_words: Vec<String>,
    /// Chance of inserting one noise word into an utterance.
    pub noise_prob: f64,
    pub num_examples: usize,
    pub max_conjuncts: usize,
    /// Chance of leaving one free condition unmentioned in a multi-condition
    /// utterance.
    pub ambiguity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Slot {
    Text(String),
    Type,
    Conds,
    Cond(String),
}

fn parse_template(t: &str) -> Result<Vec<Slot>> {
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Slot::Text(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Spec(format!("unclosed slot in template `{t}`")))?
            + open;
        let name = &rest[open + 1..close];
        out.push(match name {
            "type" => Slot::Type,
            "conds" => Slot::Conds,
            _ => match name.strip_prefix("cond:") {
                Some(p) if !p.is_empty() => Slot::Cond(p.to_string()),
                _ => {
                    return Err(Error::Spec(format!(
                        "unknown slot `{{{name}}}` in template `{t}`"
                    )))
                }
            },
        });
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Slot::Text(rest.to_string()));
    }
    Ok(out)
}

fn lit(s: &str) -> Literal {
    Literal::from_token(s).expect("valid literal")
}

fn phrases(items: &[(Op, &[&str])]) -> Vec<(Op, Vec<String>)> {
    items
        .iter()
        .map(|(op, ps)| (*op, ps.iter().map(|s| s.to_string()).collect()))
        .collect()
}

fn numeric(name: &str, range: std::ops::RangeInclusive<i64>, items: &[(Op, &[&str])]) -> PropGen {
    PropGen {
        name: name.into(),
        kind: PropKind::Numeric,
        values: range.map(Literal::Num).collect(),
        phrases: phrases(items),
    }
}

fn categorical(name: &str, values: &[&str], items: &[(Op, &[&str])]) -> PropGen {
    PropGen {
        name: name.into(),
        kind: PropKind::Categorical,
        values: values.iter().map(|v| lit(v)).collect(),
        phrases: phrases(items),
    }
}

impl DomainSpec {
    /// Restaurants and hotels with ratings, prices, cities, cuisines and
    /// amenities.
    pub fn restaurants(num_examples: usize, seed: u64) -> Self {
        let stars = || {
            numeric(
                "star_rating",
                1..=5,
                &[
                    (Op::Eq, &["with {v} stars", "rated {v} stars"]),
                    (Op::Gt, &["with more than {v} stars", "rated above {v}"]),
                    (Op::Lt, &["with fewer than {v} stars", "rated below {v}"]),
                ],
            )
        };
        let price = || {
            numeric(
                "price",
                1..=4,
                &[
                    (Op::Eq, &["at price level {v}", "costing {v}"]),
                    (Op::Gt, &["pricier than {v}", "with price above {v}"]),
                    (Op::Lt, &["cheaper than {v}", "with price below {v}"]),
                ],
            )
        };
        let city = || {
            categorical(
                "city",
                &["paris", "tokyo", "austin", "berlin"],
                &[(Op::Eq, &["in {v}", "located in {v}"])],
            )
        };
        DomainSpec {
            types: vec![
                TypeGen {
                    name: "restaurant".into(),
                    nouns: vec!["restaurants".into(), "places to eat".into()],
                    rows: 16,
                    properties: vec![
                        stars(),
                        price(),
                        categorical(
                            "cuisine",
                            &["thai", "italian", "mexican", "chinese", "indian", "french"],
                            &[(Op::Eq, &["serving {v} food", "with {v} cuisine"])],
                        ),
                        city(),
                    ],
                },
                TypeGen {
                    name: "hotel".into(),
                    nouns: vec!["hotels".into(), "places to stay".into()],
                    rows: 12,
                    properties: vec![
                        stars(),
                        price(),
                        categorical(
                            "amenity",
                            &["pool", "gym", "spa", "sauna"],
                            &[(Op::Eq, &["with a {v}", "offering a {v}"])],
                        ),
                        city(),
                    ],
                },
            ],
            templates: vec![
                "show me {type} {conds}".into(),
                "find {type} {conds}".into(),
                "list {type} {conds}".into(),
                "i want {type} {conds}".into(),
                "which {type} are {conds}".into(),
            ],
            noise_words: vec!["please".into(), "now".into(), "all".into()],
            noise_prob: 0.1,
            num_examples,
            max_conjuncts: 2,
            ambiguity: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Spec("no entity types".into()));
        }
        if self.max_conjuncts == 0 || self.max_conjuncts > MAX_CONDITIONS {
            return Err(Error::Spec(format!(
                "max_conjuncts must be in 1..={MAX_CONDITIONS}"
            )));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) || !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::Spec("probabilities must lie in [0, 1]".into()));
        }
        let known: BTreeSet<&str> = self
            .types
            .iter()
            .flat_map(|t| t.properties.iter().map(|p| p.name.as_str()))
            .collect();
        for t in &self.types {
            if t.nouns.is_empty() || t.rows == 0 {
                return Err(Error::Spec(format!(
                    "type `{}` needs nouns and rows",
                    t.name
                )));
            }
            for p in &t.properties {
                if p.values.is_empty() || p.ops().is_empty() {
                    return Err(Error::Spec(format!(
                        "property `{}` needs values and phrases",
                        p.name
                    )));
                }
                for v in &p.values {
                    if v.is_numeric() != (p.kind == PropKind::Numeric) {
                        return Err(Error::Spec(format!(
                            "value `{v}` does not fit property `{}`",
                            p.name
                        )));
                    }
                }
            }
        }
        if self.templates.is_empty() {
            return Err(Error::Spec("no templates".into()));
        }
        for t in &self.templates {
            let slots = parse_template(t)?;
            if !slots.contains(&Slot::Type) {
                return Err(Error::Spec(format!("template `{t}` lacks {{type}}")));
            }
            let forced = slots.iter().filter(|s| matches!(s, Slot::Cond(_))).count();
            if forced == 0 && !slots.contains(&Slot::Conds) {
                return Err(Error::Spec(format!("template `{t}` mentions no condition")));
            }
            if forced > self.max_conjuncts {
                return Err(Error::Spec(format!(
                    "template `{t}` has more conditions than max_conjuncts"
                )));
            }
            for s in &slots {
                if let Slot::Cond(p) = s {
                    if !known.contains(p.as_str()) {
                        return Err(Error::Spec(format!(
                            "template `{t}` references unknown property `{p}`"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One utterance with its gold program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub utterance: String,
    pub program: Program,
}

impl Example {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.utterance.split_whitespace()
    }
}

fn build_kb(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::new();
    for t in &spec.types {
        kb.add_type(&t.name)?;
        for p in &t.properties {
            kb.add_property(&t.name, &p.name, p.kind)?;
            for v in &p.values {
                kb.add_vocab(&t.name, v.clone())?;
            }
        }
    }
    for t in &spec.types {
        for i in 0..t.rows {
            let id = format!("{}_{i}", t.name);
            kb.add_entity(&id, &t.name)?;
            for p in &t.properties {
                let v = p.values.choose(rng).expect("validated").clone();
                kb.set_value(&id, &p.name, v)?;
            }
        }
    }
    Ok(kb)
}

fn render_phrase(pattern: &str, value: &Literal) -> String {
    pattern.replace("{v}", &value.to_string())
}

/// Builds the knowledge base and up to `num_examples` distinct examples.
/// Fewer are returned when the domain has fewer distinct pairs.
pub fn generate(spec: &DomainSpec) -> Result<(KnowledgeBase, Vec<Example>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let kb = build_kb(spec, &mut rng)?;
    let templates: Vec<Vec<Slot>> = spec
        .templates
        .iter()
        .map(|t| parse_template(t))
        .collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let budget = 200 * spec.num_examples.max(1) + 1000;
    for _ in 0..budget {
        if out.len() >= spec.num_examples {
            break;
        }
        let Some((utterance, program)) = sample_example(spec, &kb, &templates, &mut rng)? else {
            continue;
        };
        if seen.insert((utterance.clone(), program.render())) {
            out.push(Example {
                id: format!("ex{:05}", out.len()),
                utterance,
                program,
            });
        }
    }
    if out.len() < spec.num_examples {
        log::warn!(
            "domain yielded {} of {} requested examples",
            out.len(),
            spec.num_examples
        );
    }
    Ok((kb, out))
}

fn sample_example(
    spec: &DomainSpec,
    kb: &KnowledgeBase,
    templates: &[Vec<Slot>],
    rng: &mut ChaCha8Rng,
) -> Result<Option<(String, Program)>> {
    let ti = rng.gen_range(0..spec.types.len());
    let ty = &spec.types[ti];
    let usable: Vec<&Vec<Slot>> = templates
        .iter()
        .filter(|slots| {
            slots.iter().all(|s| match s {
                Slot::Cond(p) => ty.properties.iter().any(|q| &q.name == p),
                _ => true,
            })
        })
        .collect();
    let Some(slots) = usable.choose(rng) else {
        return Ok(None);
    };
    let forced: Vec<&str> = slots
        .iter()
        .filter_map(|s| match s {
            Slot::Cond(p) => Some(p.as_str()),
            _ => None,
        })
        .collect();
    if forced.iter().collect::<BTreeSet<_>>().len() != forced.len() {
        return Ok(None);
    }
    let limit = spec.max_conjuncts.min(ty.properties.len());
    let n = if slots.contains(&Slot::Conds) {
        rng.gen_range(forced.len().max(1)..=limit.max(forced.len().max(1)))
    } else {
        forced.len()
    };
    if n > ty.properties.len() {
        return Ok(None);
    }
    let mut free: Vec<usize> = (0..ty.properties.len())
        .filter(|&i| !forced.contains(&ty.properties[i].name.as_str()))
        .collect();
    free.shuffle(rng);
    let mut props: Vec<usize> = forced
        .iter()
        .map(|p| {
            ty.properties
                .iter()
                .position(|q| q.name == *p)
                .expect("checked")
        })
        .collect();
    let n_free = n - forced.len();
    props.extend(free.into_iter().take(n_free));

    let row = rng.gen_range(0..ty.rows);
    let id = format!("{}_{row}", ty.name);
    let entity = kb
        .entities()
        .iter()
        .find(|e| e.id == id)
        .expect("generated row");
    let mut conds = Vec::new();
    let mut texts = Vec::new();
    for &pi in &props {
        let p = &ty.properties[pi];
        let Some(v) = entity.values.get(&p.name) else {
            return Ok(None);
        };
        let mut options: Vec<(Op, Literal)> = Vec::new();
        for op in p.ops() {
            let thresholds: Vec<&Literal> = match (op, v) {
                (Op::Eq, _) => vec![v],
                (Op::Gt, Literal::Num(x)) => p
                    .values
                    .iter()
                    .filter(|w| matches!(w, Literal::Num(y) if y < x))
                    .collect(),
                (Op::Lt, Literal::Num(x)) => p
                    .values
                    .iter()
                    .filter(|w| matches!(w, Literal::Num(y) if y > x))
                    .collect(),
                _ => vec![],
            };
            if let Some(t) = thresholds.choose(rng) {
                options.push((op, (*t).clone()));
            }
        }
        let (op, value) = options.choose(rng).cloned().expect("Eq always available");
        let pattern = p.patterns(op).choose(rng).expect("ops have patterns");
        texts.push(render_phrase(pattern, &value));
        conds.push(Condition::new(p.name.clone(), op, value));
    }
    let program = Program::new(ty.name.clone(), conds)?;
    if !kb.reward(&program).is_one() {
        return Ok(None);
    }

    // texts[..forced.len()] fill {cond:*} slots in order, the rest fill {conds}
    let mut free_texts: Vec<String> = texts[forced.len()..].to_vec();
    if free_texts.len() + forced.len() >= 2
        && !free_texts.is_empty()
        && rng.gen_bool(spec.ambiguity)
    {
        let drop = rng.gen_range(0..free_texts.len());
        free_texts.remove(drop);
    }
    let mut forced_iter = texts[..forced.len()].iter();
    let noun = ty.nouns.choose(rng).expect("validated");
    let mut text = String::new();
    for s in slots.iter() {
        match s {
            Slot::Text(t) => text.push_str(t),
            Slot::Type => text.push_str(noun),
            Slot::Conds => text.push_str(&free_texts.join(" and ")),
            Slot::Cond(_) => text.push_str(forced_iter.next().expect("one per slot")),
        }
    }
    let mut tokens: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
    if !spec.noise_words.is_empty() && rng.gen_bool(spec.noise_prob) {
        let at = rng.gen_range(0..=tokens.len());
        tokens.insert(at, spec.noise_words.choose(rng).expect("non-empty").clone());
    }
    Ok(Some((tokens.join(" "), program)))
}

/// Labeled examples plus unlabeled utterances whose gold programs are kept
/// aside for diagnostics only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Unlabeled>,
    pub hidden_gold: BTreeMap<String, Program>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unlabeled {
    pub id: String,
    pub utterance: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform random split; `round(labeled_frac · n)` examples keep their
/// programs. Both parts keep corpus order.
pub fn split(examples: &[Example], labeled_frac: f64, seed: u64) -> Result<Corpus> {
    if !(labeled_frac > 0.0 && labeled_frac < 1.0) {
        return Err(Error::Config(format!(
            "labeled fraction must be in (0, 1), got {labeled_frac}"
        )));
    }
    let n_labeled = (labeled_frac * examples.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: BTreeSet<usize> = order[..n_labeled].iter().copied().collect();
    let mut corpus = Corpus::default();
    for (i, ex) in examples.iter().enumerate() {
        if chosen.contains(&i) {
            corpus.labeled.push(ex.clone());
        } else {
            corpus.unlabeled.push(Unlabeled {
                id: ex.id.clone(),
                utterance: ex.utterance.clone(),
            });
            corpus.hidden_gold.insert(ex.id.clone(), ex.program.clone());
        }
    }
    Ok(corpus)
}

/// Removes `n` random examples as a held-out set: `(rest, held_out)`.
pub fn holdout(examples: &[Example], n: usize, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    if n > examples.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n} of {} examples",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held: BTreeSet<usize> = order[..n].iter().copied().collect();
    let (mut rest, mut out) = (Vec::new(), Vec::new());
    for (i, ex) in examples.iter().enumerate() {
        if held.contains(&i) {
            out.push(ex.clone());
        } else {
            rest.push(ex.clone());
        }
    }
    Ok((rest, out))
}

fn header_lines(header: &[String]) -> String {
    header.iter().map(|h| format!("# {h}\n")).collect()
}

/// `id \t labeled|unlabeled \t utterance \t program`
pub fn corpus_to_tsv(corpus: &Corpus, header: &[String]) -> String {
    let mut rows: Vec<(&str, String)> = corpus
        .labeled
        .iter()
        .map(|e| {
            (
                e.id.as_str(),
                format!("{}\tlabeled\t{}\t{}\n", e.id, e.utterance, e.program),
            )
        })
        .chain(corpus.unlabeled.iter().map(|u| {
            (
                u.id.as_str(),
                format!("{}\tunlabeled\t{}\t\n", u.id, u.utterance),
            )
        }))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = header_lines(header);
    for (_, r) in rows {
        out.push_str(&r);
    }
    out
}

/// Hidden gold programs: `id \t program`.
pub fn gold_to_tsv(gold: &BTreeMap<String, Program>, header: &[String]) -> String {
    let mut out = header_lines(header);
    for (id, p) in gold {
        let _ = writeln!(out, "{id}\t{p}");
    }
    out
}

/// Fully labeled examples in corpus format.
pub fn examples_to_tsv(examples: &[Example], header: &[String]) -> String {
    corpus_to_tsv(
        &Corpus {
            labeled: examples.to_vec(),
            ..Corpus::default()
        },
        header,
    )
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn corpus_from_tsv(text: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut ids = BTreeSet::new();
    for (line, l) in data_lines(text) {
        let fail = |message: String| Error::CorpusFormat { line, message };
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(fail(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (id, kind, utterance, program) = (fields[0], fields[1], fields[2], fields[3]);
        if id.is_empty() || !ids.insert(id.to_string()) {
            return Err(fail(format!("empty or duplicate id `{id}`")));
        }
        if utterance.split_whitespace().next().is_none() {
            return Err(fail("empty utterance".into()));
        }
        match kind {
            "labeled" => {
                let program = parse(program).map_err(|e| fail(e.to_string()))?;
                corpus.labeled.push(Example {
                    id: id.to_string(),
                    utterance: utterance.to_string(),
                    program,
                });
            }
            "unlabeled" => {
                if !program.trim().is_empty() {
                    return Err(fail("unlabeled row carries a program".into()));
                }
                corpus.unlabeled.push(Unlabeled {
                    id: id.to_string(),
                    utterance: utterance.to_string(),
                });
            }
            other => {
                return Err(fail(format!(
                    "expected `labeled` or `unlabeled`, found `{other}`"
                )))
            }
        }
    }
    Ok(corpus)
}

pub fn gold_from_tsv(text: &str) -> Result<BTreeMap<String, Program>> {
    let mut out = BTreeMap::new();
    for (line, l) in data_lines(text) {
        let fail = |message: String| Error::CorpusFormat { line, message };
        let (id, program) = l
            .split_once('\t')
            .ok_or_else(|| fail("expected `id<TAB>program`".into()))?;
        let p = parse(program).map_err(|e| fail(e.to_string()))?;
        if out.insert(id.to_string(), p).is_some() {
            return Err(fail(format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

/// Knowledge base, training corpus and dev set, as used by one run.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    pub dev: Vec<Example>,
    pub max_conjuncts: usize,
}

pub const KB_FILE: &str = "kb.txt";
pub const CORPUS_FILE: &str = "corpus.tsv";
pub const GOLD_FILE: &str = "gold.tsv";
pub const DEV_FILE: &str = "dev.tsv";

impl Dataset {
    /// Generates `spec`, holds out `dev_size` examples and splits the rest.
    pub fn synthetic(spec: &DomainSpec, dev_size: usize, labeled_frac: f64) -> Result<Self> {
        let (kb, examples) = generate(spec)?;
        let (rest, dev) = holdout(&examples, dev_size, spec.seed)?;
        let corpus = split(&rest, labeled_frac, spec.seed.wrapping_add(1))?;
        Ok(Dataset {
            kb,
            corpus,
            dev,
            max_conjuncts: spec.max_conjuncts,
        })
    }

    /// Loads a KB file and corpus file. Without a dev file, `dev_size`
    /// labeled examples are held out.
    pub fn from_files(
        kb: &Path,
        corpus: &Path,
        dev: Option<&Path>,
        gold: Option<&Path>,
        dev_size: usize,
        max_conjuncts: usize,
    ) -> Result<Self> {
        let kb = KnowledgeBase::parse(&fs::read_to_string(kb)?)?;
        let mut corpus = corpus_from_tsv(&fs::read_to_string(corpus)?)?;
        if let Some(g) = gold {
            corpus.hidden_gold = gold_from_tsv(&fs::read_to_string(g)?)?;
        }
        let dev = match dev {
            Some(d) => corpus_from_tsv(&fs::read_to_string(d)?)?.labeled,
            None => {
                let (rest, dev) = holdout(&corpus.labeled, dev_size, 0)?;
                corpus.labeled = rest;
                dev
            }
        };
        Ok(Dataset {
            kb,
            corpus,
            dev,
            max_conjuncts,
        })
    }

    /// Reads the four files written by [`Dataset::write_dir`].
    pub fn read_dir(dir: &Path, max_conjuncts: usize) -> Result<Self> {
        let gold = dir.join(GOLD_FILE);
        Self::from_files(
            &dir.join(KB_FILE),
            &dir.join(CORPUS_FILE),
            Some(&dir.join(DEV_FILE)),
            gold.exists().then_some(gold.as_path()),
            0,
            max_conjuncts,
        )
    }

    pub fn write_dir(&self, dir: &Path, header: &[String]) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(KB_FILE), self.kb.to_text(header))?;
        fs::write(dir.join(CORPUS_FILE), corpus_to_tsv(&self.corpus, header))?;
        fs::write(
            dir.join(GOLD_FILE),
            gold_to_tsv(&self.corpus.hidden_gold, header),
        )?;
        fs::write(dir.join(DEV_FILE), examples_to_tsv(&self.dev, header))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> DomainSpec {
        DomainSpec {
            types: vec![TypeGen {
                name: "shop".into(),
                nouns: vec!["shops".into()],
                rows: 30,
                properties: vec![
                    categorical(
                        "color",
                        &["red", "blue", "green"],
                        &[(Op::Eq, &["painted {v}"])],
                    ),
                    categorical("town", &["rome", "oslo", "lima"], &[(Op::Eq, &["in {v}"])]),
                ],
            }],
            templates: vec!["find {type} {conds}".into()],
            noise_words: vec![],
            noise_prob: 0.0,
            num_examples: 100,
            max_conjuncts: 1,
            ambiguity: 0.0,
            seed: 4,
        }
    }

    #[test]
    fn slot_product_is_exhausted() {
        let mut spec = tiny_spec();
        spec.types[0].rows = 200;
        let (_, ex) = generate(&spec).unwrap();
        assert_eq!(ex.len(), 6);
    }

    #[test]
    fn generation_is_deterministic_and_executable() {
        let spec = DomainSpec::restaurants(300, 9);
        let (kb1, a) = generate(&spec).unwrap();
        let (kb2, b) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(kb1.to_text(&[]), kb2.to_text(&[]));
        assert_eq!(a.len(), 300);
        let ids: BTreeSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), a.len());
        for e in &a {
            assert!(kb1.reward(&e.program).is_one(), "{}", e.program);
        }
        let g = kb1.grammar(spec.max_conjuncts).unwrap();
        for e in &a {
            g.actions(&e.program).unwrap();
        }
    }

    #[test]
    fn unknown_property_in_template_is_rejected() {
        let mut spec = tiny_spec();
        spec.templates = vec!["find {type} {cond:weight}".into()];
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
        spec.templates = vec!["find {type} {bogus}".into()];
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn forced_property_slots_appear_in_gold() {
        let mut spec = tiny_spec();
        spec.max_conjuncts = 2;
        spec.templates = vec!["find {type} {cond:town} {conds}".into()];
        let (_, ex) = generate(&spec).unwrap();
        assert!(!ex.is_empty());
        for e in ex {
            assert_eq!(e.program.conditions[0].property, "town");
        }
    }

    #[test]
    fn ambiguity_drops_a_mention() {
        let mut spec = DomainSpec::restaurants(200, 1);
        spec.ambiguity = 1.0;
        spec.noise_prob = 0.0;
        let (_, ex) = generate(&spec).unwrap();
        let multi: Vec<_> = ex
            .iter()
            .filter(|e| e.program.conditions.len() == 2)
            .collect();
        assert!(!multi.is_empty());
        for e in multi {
            assert!(!e.utterance.contains(" and "), "{}", e.utterance);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let (_, ex) = generate(&DomainSpec::restaurants(1000, 2)).unwrap();
        let c = split(&ex, 0.3, 5).unwrap();
        assert_eq!((c.labeled.len(), c.unlabeled.len()), (300, 700));
        let c = split(&ex, 0.1, 5).unwrap();
        assert_eq!((c.labeled.len(), c.unlabeled.len()), (100, 900));
        let mut ids: Vec<&String> = c
            .labeled
            .iter()
            .map(|e| &e.id)
            .chain(c.unlabeled.iter().map(|u| &u.id))
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
        assert_eq!(c.hidden_gold.len(), 900);
        assert!(split(&ex, 1.0, 0).is_err());
        assert!(split(&ex, 0.0, 0).is_err());
        assert_eq!(split(&ex, 0.3, 5).unwrap(), split(&ex, 0.3, 5).unwrap());
    }

    #[test]
    fn tsv_round_trip() {
        let (_, ex) = generate(&DomainSpec::restaurants(50, 2)).unwrap();
        let c = split(&ex, 0.3, 1).unwrap();
        let text = corpus_to_tsv(&c, &["config seed=1".into()]);
        assert!(text.starts_with("# config seed=1\n"));
        let back = corpus_from_tsv(&text).unwrap();
        assert_eq!(back.labeled, c.labeled);
        assert_eq!(back.unlabeled, c.unlabeled);
        let gold = gold_from_tsv(&gold_to_tsv(&c.hidden_gold, &[])).unwrap();
        assert_eq!(gold, c.hidden_gold);
    }

    #[test]
    fn malformed_corpus_lines() {
        assert!(matches!(
            corpus_from_tsv("a\tlabeled\tx y\n"),
            Err(Error::CorpusFormat { line: 1, .. })
        ));
        assert!(matches!(
            corpus_from_tsv("# h\na\tmaybe\tx\t\n"),
            Err(Error::CorpusFormat { line: 2, .. })
        ));
        assert!(corpus_from_tsv("a\tunlabeled\tx\t\na\tunlabeled\ty\t\n").is_err());
        assert!(corpus_from_tsv("a\tlabeled\tx\tselect\n").is_err());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let ds = Dataset::synthetic(&DomainSpec::restaurants(120, 4), 20, 0.3).unwrap();
        assert_eq!(ds.dev.len(), 20);
        assert_eq!(ds.corpus.len(), 100);
        let dir = tempfile::tempdir().unwrap();
        ds.write_dir(dir.path(), &["gen seed=4".into()]).unwrap();
        let back = Dataset::read_dir(dir.path(), 2).unwrap();
        assert_eq!(back.kb, ds.kb);
        assert_eq!(back.corpus, ds.corpus);
        assert_eq!(back.dev, ds.dev);
        let held = Dataset::from_files(
            &dir.path().join(KB_FILE),
            &dir.path().join(CORPUS_FILE),
            None,
            None,
            10,
            2,
        )
        .unwrap();
        assert_eq!(held.dev.len(), 10);
        assert_eq!(held.corpus.labeled.len(), 20);
        assert!(held.corpus.hidden_gold.is_empty());
    }
}
