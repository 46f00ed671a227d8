//! Immutable triple store with dense id vocabularies and adjacency indices.
//!
//! Relation ids follow a fixed layout: base relations occupy `0..B` in
//! first-appearance order, their inverses (when enabled) occupy `B..2B` with
//! `inverse(r) = r + B`, and the optional self-loop relation comes last.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// A triple as read from disk, before id assignment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, rel: impl Into<String>, tail: impl Into<String>) -> Self {
        Self { head: head.into(), rel: rel.into(), tail: tail.into() }
    }
}

/// Parses tab-separated `head<TAB>relation<TAB>tail` lines.
///
/// Blank lines are skipped; duplicates are kept in order.
pub fn load_triples<R: BufRead>(reader: R) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 non-empty tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn load_triples_file(path: &Path) -> Result<Vec<RawTriple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_triples(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

pub fn write_triples<W: Write>(mut w: W, triples: &[RawTriple]) -> std::io::Result<()> {
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.head, t.rel, t.tail)?;
    }
    Ok(())
}

/// Bidirectional string ↔ dense id map in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let mut v = Self::new();
        for n in names {
            v.intern(&n.into());
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = u32::try_from(self.names.len()).expect("vocabulary exceeds u32 range");
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationKind {
    Base,
    Inverse,
    SelfLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphOptions {
    pub add_inverse: bool,
    pub add_self_loop: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { add_inverse: true, add_self_loop: true }
    }
}

impl GraphOptions {
    pub const PLAIN: GraphOptions = GraphOptions { add_inverse: false, add_self_loop: false };
}

pub const SELF_LOOP_NAME: &str = "SELF";
const INVERSE_SUFFIX: &str = "_inv";

/// Relation vocabulary: base names plus the derived inverse and self-loop ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationVocab {
    base: Vocab,
    options: GraphOptions,
}

impl RelationVocab {
    pub fn new(base: Vocab, options: GraphOptions) -> Self {
        Self { base, options }
    }

    pub fn base(&self) -> &Vocab {
        &self.base
    }

    pub fn options(&self) -> GraphOptions {
        self.options
    }

    pub fn num_base(&self) -> usize {
        self.base.len()
    }

    pub fn len(&self) -> usize {
        let b = self.base.len();
        b + if self.options.add_inverse { b } else { 0 } + usize::from(self.options.add_self_loop)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn self_loop(&self) -> Option<RelationId> {
        self.options.add_self_loop.then(|| (self.len() - 1) as RelationId)
    }

    pub fn kind(&self, r: RelationId) -> RelationKind {
        let b = self.base.len() as RelationId;
        if r < b {
            RelationKind::Base
        } else if self.options.add_inverse && r < 2 * b {
            RelationKind::Inverse
        } else {
            debug_assert_eq!(Some(r), self.self_loop());
            RelationKind::SelfLoop
        }
    }

    /// Inverse of `r`. Self-loops are their own inverse; `None` when inverses are disabled.
    pub fn inverse(&self, r: RelationId) -> Option<RelationId> {
        let b = self.base.len() as RelationId;
        match self.kind(r) {
            RelationKind::SelfLoop => Some(r),
            _ if !self.options.add_inverse => None,
            RelationKind::Base => Some(r + b),
            RelationKind::Inverse => Some(r - b),
        }
    }

    pub fn name(&self, r: RelationId) -> String {
        match self.kind(r) {
            RelationKind::Base => self.base.name(r).to_owned(),
            RelationKind::Inverse => {
                format!("{}{INVERSE_SUFFIX}", self.base.name(r - self.base.len() as RelationId))
            }
            RelationKind::SelfLoop => SELF_LOOP_NAME.to_owned(),
        }
    }

    pub fn base_id(&self, name: &str) -> Option<RelationId> {
        self.base.get(name)
    }
}

/// Outgoing edge in the adjacency index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub rel: RelationId,
    pub tail: EntityId,
}

/// Immutable, indexed knowledge graph.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: RelationVocab,
    triples: Vec<Triple>,
    num_base_triples: usize,
    offsets: Vec<usize>,
    edges: Vec<Edge>,
    incident_offsets: Vec<usize>,
    incident: Vec<RelationId>,
}

/// Builds a graph whose relation vocabulary is taken from the triples themselves.
pub fn build_graph(raw: &[RawTriple], options: GraphOptions) -> KnowledgeGraph {
    let mut rels = Vocab::new();
    for t in raw {
        rels.intern(&t.rel);
    }
    build_graph_with_relations(raw, options, &rels, &[]).expect("relation vocabulary covers every input triple")
}

/// Builds a graph over a fixed base relation vocabulary.
///
/// Unknown relations are rejected. `extra_entities` are registered after the
/// triple entities, so query-only entities exist as isolated nodes.
pub fn build_graph_with_relations(
    raw: &[RawTriple],
    options: GraphOptions,
    base_relations: &Vocab,
    extra_entities: &[&str],
) -> Result<KnowledgeGraph> {
    let mut entities = Vocab::new();
    let mut seen = HashSet::with_capacity(raw.len());
    let mut base = Vec::with_capacity(raw.len());
    for t in raw {
        let rel = base_relations.get(&t.rel).ok_or_else(|| Error::UnknownRelation(t.rel.clone()))?;
        let head = entities.intern(&t.head);
        let tail = entities.intern(&t.tail);
        let triple = Triple::new(head, rel, tail);
        if seen.insert(triple) {
            base.push(triple);
        }
    }
    for e in extra_entities {
        entities.intern(e);
    }
    Ok(KnowledgeGraph::assemble(entities, RelationVocab::new(base_relations.clone(), options), base))
}

impl KnowledgeGraph {
    fn assemble(entities: Vocab, relations: RelationVocab, base: Vec<Triple>) -> Self {
        let n = entities.len();
        let num_base_triples = base.len();
        let mut triples = base;
        let options = relations.options();
        if options.add_inverse {
            let inv: Vec<Triple> = triples
                .iter()
                .map(|t| Triple::new(t.tail, relations.inverse(t.rel).expect("inverse enabled"), t.head))
                .collect();
            triples.extend(inv);
        }
        if let Some(self_rel) = relations.self_loop() {
            triples.extend((0..n as EntityId).map(|v| Triple::new(v, self_rel, v)));
        }

        // Counting sort by head keeps triple-list order within each head.
        let mut offsets = vec![0usize; n + 1];
        for t in &triples {
            offsets[t.head as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut edges = vec![Edge { rel: 0, tail: 0 }; triples.len()];
        for t in &triples {
            let slot = &mut cursor[t.head as usize];
            edges[*slot] = Edge { rel: t.rel, tail: t.tail };
            *slot += 1;
        }

        let mut incident_offsets = Vec::with_capacity(n + 1);
        let mut incident = Vec::new();
        incident_offsets.push(0);
        for v in 0..n {
            let start = incident.len();
            incident.extend(edges[offsets[v]..offsets[v + 1]].iter().map(|e| e.rel));
            incident[start..].sort_unstable();
            let mut w = start;
            for i in start..incident.len() {
                if i == start || incident[i] != incident[w - 1] {
                    incident[w] = incident[i];
                    w += 1;
                }
            }
            incident.truncate(w);
            incident_offsets.push(incident.len());
        }

        Self { entities, relations, triples, num_base_triples, offsets, edges, incident_offsets, incident }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    /// All triples: base, then inverses, then self-loops.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn base_triples(&self) -> &[Triple] {
        &self.triples[..self.num_base_triples]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name)
    }

    pub fn check_entity(&self, v: EntityId) -> Result<()> {
        if (v as usize) < self.num_entities() {
            Ok(())
        } else {
            Err(Error::EntityOutOfBounds(v))
        }
    }

    /// Outgoing edges of `v` in triple-list order. Panics if `v` is out of bounds.
    #[inline]
    pub fn out_edges(&self, v: EntityId) -> &[Edge] {
        let v = v as usize;
        &self.edges[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Sorted set of relations on edges leaving `v`.
    pub fn incident_relations(&self, v: EntityId) -> Result<&[RelationId]> {
        self.check_entity(v)?;
        let v = v as usize;
        Ok(&self.incident[self.incident_offsets[v]..self.incident_offsets[v + 1]])
    }

    /// Base triples rendered back to names, in id order.
    pub fn to_raw(&self) -> Vec<RawTriple> {
        self.base_triples()
            .iter()
            .map(|t| RawTriple::new(self.entities.name(t.head), self.relations.name(t.rel), self.entities.name(t.tail)))
            .collect()
    }

    pub fn triple_from_raw(&self, raw: &RawTriple) -> Result<Triple> {
        let head = self.entity_id(&raw.head).ok_or_else(|| Error::UnknownEntity(raw.head.clone()))?;
        let tail = self.entity_id(&raw.tail).ok_or_else(|| Error::UnknownEntity(raw.tail.clone()))?;
        let rel = self.relations.base_id(&raw.rel).ok_or_else(|| Error::UnknownRelation(raw.rel.clone()))?;
        Ok(Triple::new(head, rel, tail))
    }
}

/// Train graph, entity-disjoint inference graph, and their query sets.
#[derive(Clone, Debug)]
pub struct InductiveSplit {
    pub train: KnowledgeGraph,
    pub inference: KnowledgeGraph,
    /// Validation queries over `train` entities.
    pub valid: Vec<Triple>,
    /// Additional known facts over `inference` entities; used for filtering only.
    pub inference_valid: Vec<Triple>,
    /// Test queries over `inference` entities.
    pub test: Vec<Triple>,
}

/// The raw files of a split: `dir/{train,valid}.txt` and `ind_dir/{train,valid,test}.txt`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawSplit {
    pub train: Vec<RawTriple>,
    pub valid: Vec<RawTriple>,
    pub inference: Vec<RawTriple>,
    pub inference_valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

fn load_optional(path: &Path) -> Result<Vec<RawTriple>> {
    if path.exists() {
        load_triples_file(path)
    } else {
        Ok(Vec::new())
    }
}

impl RawSplit {
    pub fn load(dir: &Path, ind_dir: &Path) -> Result<Self> {
        Ok(Self {
            train: load_triples_file(&dir.join("train.txt"))?,
            valid: load_optional(&dir.join("valid.txt"))?,
            inference: load_triples_file(&ind_dir.join("train.txt"))?,
            inference_valid: load_optional(&ind_dir.join("valid.txt"))?,
            test: load_triples_file(&ind_dir.join("test.txt"))?,
        })
    }

    pub fn write(&self, dir: &Path, ind_dir: &Path) -> Result<()> {
        let put = |path: std::path::PathBuf, triples: &[RawTriple]| -> Result<()> {
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            write_triples(&mut w, triples).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
        };
        for d in [dir, ind_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        put(dir.join("train.txt"), &self.train)?;
        put(dir.join("valid.txt"), &self.valid)?;
        put(dir.join("test.txt"), &[])?;
        put(ind_dir.join("train.txt"), &self.inference)?;
        put(ind_dir.join("valid.txt"), &self.inference_valid)?;
        put(ind_dir.join("test.txt"), &self.test)
    }

    /// Assigns ids. The relation vocabulary comes from the training facts and is
    /// shared by the inference graph; unknown relations anywhere are rejected.
    pub fn build(&self, options: GraphOptions) -> Result<InductiveSplit> {
        let mut rels = Vocab::new();
        for t in &self.train {
            rels.intern(&t.rel);
        }
        let query_entities = |qs: &[&[RawTriple]]| -> Vec<String> {
            qs.iter().flat_map(|q| q.iter()).flat_map(|t| [t.head.clone(), t.tail.clone()]).collect()
        };
        let train_extra = query_entities(&[&self.valid]);
        let train_extra: Vec<&str> = train_extra.iter().map(String::as_str).collect();
        let train = build_graph_with_relations(&self.train, options, &rels, &train_extra)?;

        let ind_extra = query_entities(&[&self.inference_valid, &self.test]);
        let ind_extra: Vec<&str> = ind_extra.iter().map(String::as_str).collect();
        let inference = build_graph_with_relations(&self.inference, options, &rels, &ind_extra)?;

        if let Some(shared) = inference.entities().names().iter().find(|n| train.entity_id(n).is_some()) {
            return Err(Error::Split(format!("entity `{shared}` appears in both train and inference graphs")));
        }

        let ids = |g: &KnowledgeGraph, qs: &[RawTriple]| -> Result<Vec<Triple>> {
            qs.iter().map(|q| g.triple_from_raw(q)).collect()
        };
        Ok(InductiveSplit {
            valid: ids(&train, &self.valid)?,
            inference_valid: ids(&inference, &self.inference_valid)?,
            test: ids(&inference, &self.test)?,
            train,
            inference,
        })
    }
}
