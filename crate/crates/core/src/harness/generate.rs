//! Synthetic templatized corpora with ground truth.
//!
//! Pages are 612 x 792 units with 36-unit margins. Every row is 10 units tall
//! on a 14-unit pitch and never crosses a page, and a key-value block keeps
//! all its rows on one page. Field texts are title-case words and values
//! always carry a digit, so the heuristic oracle separates them exactly.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::ExtractionObject;
use crate::harness::score::{flatten_kv, Pair};
use crate::model::{BBox, DocumentStream, Phrase};
use crate::template::{template_from_nodes, NodeType, Template};

pub const PAGE_WIDTH: f64 = 612.0;
pub const PAGE_HEIGHT: f64 = 792.0;
pub const MARGIN: f64 = 36.0;
pub const ROW_HEIGHT: f64 = 10.0;
pub const ROW_PITCH: f64 = 14.0;
const CONTENT_WIDTH: f64 = PAGE_WIDTH - 2.0 * MARGIN;
const GAP: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueAlphabet {
    Number,
    Date,
    Code,
    Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeSpec {
    /// Probability that each field's value is missing; shorter lists pad with 0.
    pub missing: Vec<f64>,
    /// Value rows per table block, inclusive range.
    pub tuples: [usize; 2],
    /// Child groups per parent block, inclusive range; parents only.
    pub repetitions: Option<[usize; 2]>,
    pub alphabet: ValueAlphabet,
    /// Field slots per key-value row.
    pub pairs_per_row: usize,
}

impl Default for NodeSpec {
    fn default() -> Self {
        Self {
            missing: Vec::new(),
            tuples: [1, 3],
            repetitions: None,
            alphabet: ValueAlphabet::Number,
            pairs_per_row: 2,
        }
    }
}

impl NodeSpec {
    fn missing(&self, j: usize) -> f64 {
        self.missing.get(j).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataPolicy {
    /// Metadata spans the full content width, so it is aligned with no key row.
    Unaligned,
    /// Metadata is narrow and sits under the first column.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataSpec {
    pub page_headers: bool,
    /// Free-text rows per record, placed between top-level blocks.
    pub per_record: usize,
    pub policy: MetadataPolicy,
}

impl Default for MetadataSpec {
    fn default() -> Self {
        Self {
            page_headers: true,
            per_record: 0,
            policy: MetadataPolicy::Unaligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub template: Template,
    /// Records per document.
    pub records: usize,
    #[serde(default = "one")]
    pub documents: usize,
    /// Per-node settings by node id; missing entries use defaults.
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub metadata: MetadataSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub compliant: bool,
    /// Share of value phrases turned non-compliant when `compliant` is false.
    #[serde(default)]
    pub noise_rate: f64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl GeneratorSpec {
    pub fn node_spec(&self, id: usize) -> NodeSpec {
        self.nodes.get(id).cloned().unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GeneratorSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        self.template.validate()?;
        if self.records == 0 || self.documents == 0 {
            return bad("records and documents must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]".into());
        }
        if self.nodes.len() > self.template.len() {
            return bad("more node settings than template nodes".into());
        }
        let t = &self.template;
        for node in &t.nodes {
            let ns = self.node_spec(node.id);
            let id = node.id;
            if node.fields.len() < 2 {
                return bad(format!("node {id} needs at least two fields"));
            }
            if ns.missing.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("node {id} has a missing probability outside [0, 1]"));
            }
            if ns.tuples[0] == 0 || ns.tuples[0] > ns.tuples[1] {
                return bad(format!("node {id} needs a tuple range with 1 <= min <= max"));
            }
            match (node.children.is_empty(), ns.repetitions) {
                (true, Some(_)) => return bad(format!("node {id} sets repetitions but has no children")),
                (false, Some([lo, hi])) if lo == 0 || lo > hi => {
                    return bad(format!("node {id} needs a repetition range with 1 <= min <= max"))
                }
                _ => {}
            }
            if !node.children.is_empty() {
                if node.node_type != NodeType::Table {
                    return bad(format!("node {id} has children but only tables can nest"));
                }
                if t.parent(id).is_some() {
                    return bad(format!("node {id} nests more than two levels deep"));
                }
                if node.fields.len() > 6 {
                    return bad(format!("parent node {id} has more than six fields"));
                }
                if ns.missing(0) > 0.0 {
                    return bad(format!("parent node {id} must never miss its first field"));
                }
            }
            let present = (0..node.fields.len()).filter(|&j| ns.missing(j) < 1.0).count();
            if node.node_type == NodeType::Table && present < 2 {
                return bad(format!("table node {id} needs two fields that can hold values"));
            }
            if node.node_type == NodeType::KeyValue {
                if ns.pairs_per_row == 0 {
                    return bad(format!("node {id} needs pairs_per_row >= 1"));
                }
                for (r, chunk) in (0..node.fields.len()).collect::<Vec<_>>().chunks(ns.pairs_per_row).enumerate() {
                    if chunk.iter().any(|&j| ns.missing(j) > 0.0 && ns.missing(j) < 1.0) {
                        continue;
                    }
                    let pattern: Vec<bool> = chunk
                        .iter()
                        .flat_map(|&j| if ns.missing(j) >= 1.0 { vec![true] } else { vec![true, false] })
                        .collect();
                    let (k, kv) = pair_counts(&pattern);
                    if kv <= k {
                        return bad(format!("key-value row {r} of node {id} would read as a key row"));
                    }
                }
            }
        }
        for siblings in std::iter::once(&t.root).chain(t.nodes.iter().map(|n| &n.children)) {
            for w in siblings.windows(2) {
                if t.node(w[0]).node_type == NodeType::KeyValue && t.node(w[1]).node_type == NodeType::KeyValue {
                    return bad(format!("key-value nodes {} and {} would run together", w[0], w[1]));
                }
            }
        }
        if t.node(t.root[0]).node_type != NodeType::Table {
            return bad("the first top-level node must be a table".into());
        }
        Ok(())
    }
}

/// (field,field) and (field,value) pair counts of a field/value pattern.
fn pair_counts(is_field: &[bool]) -> (usize, usize) {
    let k = is_field.windows(2).filter(|w| w[0] && w[1]).count();
    let kv = is_field.windows(2).filter(|w| w[0] && !w[1]).count();
    (k, kv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub objects: Vec<ExtractionObject>,
    /// Index of the first and last structural phrase of the record.
    pub first_index: u32,
    pub last_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
    pub pairs: Vec<Pair>,
    /// Value phrases made non-compliant.
    pub injected: usize,
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDocument {
    pub stream: DocumentStream,
    pub truth: GroundTruth,
}

struct Writer<'a> {
    rng: &'a mut ChaCha8Rng,
    used: &'a mut HashSet<String>,
    spec: &'a GeneratorSpec,
    doc: usize,
    phrases: Vec<Phrase>,
    page: u32,
    y: f64,
    injected: usize,
    meta_serial: usize,
}

fn text_width(text: &str) -> f64 {
    5.0 * text.chars().count() as f64 + 4.0
}

impl<'a> Writer<'a> {
    fn new_page(&mut self) {
        self.page += 1;
        self.y = MARGIN;
        if self.spec.metadata.page_headers {
            let text = self.metadata_text("Page");
            self.place_row(vec![self.metadata_cell(text)]);
        }
    }

    fn metadata_text(&mut self, kind: &str) -> String {
        self.meta_serial += 1;
        let tag: u32 = self.rng.gen_range(1000..10000);
        format!("{kind} {} doc {} ref {}-{}", self.page, self.doc, tag, self.meta_serial)
    }

    fn metadata_cell(&self, text: String) -> (String, f64, f64) {
        match self.spec.metadata.policy {
            MetadataPolicy::Unaligned => (text, MARGIN, PAGE_WIDTH - MARGIN),
            MetadataPolicy::Aligned => (text, MARGIN, MARGIN + 30.0),
        }
    }

    /// Places cells on the next row without page handling.
    fn place_row(&mut self, cells: Vec<(String, f64, f64)>) {
        let y = self.y;
        for (text, x1, x2) in cells {
            let index = self.phrases.len() as u32 + 1;
            self.phrases.push(Phrase::new(text, index, self.page, BBox::new(x1, y, x2, y + ROW_HEIGHT)));
        }
        self.y += ROW_PITCH;
    }

    fn row(&mut self, cells: Vec<(String, f64, f64)>) -> (u32, u32) {
        if self.page == 0 || self.y + ROW_HEIGHT > PAGE_HEIGHT - MARGIN {
            self.new_page();
        }
        let first = self.phrases.len() as u32 + 1;
        let n = cells.len() as u32;
        self.place_row(cells);
        (first, first + n - 1)
    }

    /// Starts a new page unless `rows` more rows fit on this one.
    fn keep_together(&mut self, rows: usize) {
        let need = (rows.max(1) - 1) as f64 * ROW_PITCH + ROW_HEIGHT;
        if self.page == 0 || self.y + need > PAGE_HEIGHT - MARGIN {
            self.new_page();
        }
    }

    fn metadata_row(&mut self) {
        if self.page == 0 || self.y + ROW_HEIGHT > PAGE_HEIGHT - MARGIN {
            self.new_page();
        }
        let text = self.metadata_text("Note");
        let cell = self.metadata_cell(text);
        self.place_row(vec![cell]);
    }

    fn value(&mut self, alphabet: ValueAlphabet) -> String {
        for attempt in 0.. {
            let mut v = match alphabet {
                ValueAlphabet::Number => self.rng.gen_range(10..1_000_000u32).to_string(),
                ValueAlphabet::Date => format!(
                    "{}/{}/{}",
                    self.rng.gen_range(1..=12),
                    self.rng.gen_range(1..=28),
                    self.rng.gen_range(1950..2050)
                ),
                ValueAlphabet::Code => {
                    let a = self.rng.gen_range(b'A'..=b'Z') as char;
                    let b = self.rng.gen_range(b'A'..=b'Z') as char;
                    format!("{a}{b}-{:04}", self.rng.gen_range(0..10000))
                }
                ValueAlphabet::Amount => {
                    format!("{}.{:02}", self.rng.gen_range(1..100_000), self.rng.gen_range(0..100))
                }
            };
            if attempt > 50 {
                v = format!("{v}-{attempt}");
            }
            if self.used.insert(v.clone()) {
                return v;
            }
        }
        unreachable!("the retry loop always returns")
    }

    fn inject(&mut self) -> bool {
        !self.spec.compliant && self.rng.gen_bool(self.spec.noise_rate)
    }

    /// Emits one block of `id` (with any nested children) and returns its object.
    fn node(&mut self, t: &Template, id: usize, span: &mut (u32, u32)) -> ExtractionObject {
        let node = t.node(id).clone();
        let ns = self.spec.node_spec(id);
        let track = |s: &mut (u32, u32), r: (u32, u32)| {
            s.0 = s.0.min(r.0);
            s.1 = s.1.max(r.1);
        };
        let mut obj = ExtractionObject {
            node_id: id,
            obj_type: node.node_type,
            fields: node.fields.clone(),
            content: Vec::new(),
            children: Vec::new(),
        };
        let n = node.fields.len();
        match node.node_type {
            NodeType::Table => {
                let parent_id = t.parent(id);
                let is_parent = !node.children.is_empty();
                // Column geometry: (slot start, header width, max value width, room for misalignment)
                let (slot, header_w, value_w) = if is_parent {
                    let slot = CONTENT_WIDTH / n as f64;
                    (slot, slot - GAP, slot - GAP)
                } else if let Some(p) = parent_id {
                    let pslot = CONTENT_WIDTH / t.node(p).fields.len() as f64;
                    let cslot = (CONTENT_WIDTH / n as f64).min((pslot - GAP) / 2.0 - 1.0);
                    (cslot, cslot - 4.0, cslot - 4.0)
                } else {
                    let slot = CONTENT_WIDTH / n as f64;
                    let hw = ((slot - GAP) * 0.6).floor();
                    (slot, hw, hw)
                };
                let x = |j: usize| MARGIN + j as f64 * slot;
                let header = node
                    .fields
                    .iter()
                    .enumerate()
                    .map(|(j, f)| (f.clone(), x(j), x(j) + header_w))
                    .collect();
                let r = self.row(header);
                track(span, r);

                let value_row = |w: &mut Self, obj: &mut ExtractionObject, span: &mut (u32, u32)| {
                    let cells = loop {
                        let present: Vec<bool> = (0..n)
                            .map(|j| (is_parent && j == 0) || !w.rng.gen_bool(ns.missing(j)))
                            .collect();
                        if present.iter().filter(|p| **p).count() >= 2 {
                            break present;
                        }
                    };
                    let mut tuple = Vec::with_capacity(n);
                    let mut row = Vec::new();
                    for (j, present) in cells.into_iter().enumerate() {
                        if !present {
                            tuple.push(None);
                            continue;
                        }
                        let v = w.value(ns.alphabet);
                        let width = if is_parent { value_w } else { text_width(&v).clamp(4.0, value_w) };
                        let misalign_room = slot - GAP - header_w;
                        if parent_id.is_none() && !is_parent && misalign_room > 6.0 && w.inject() {
                            w.injected += 1;
                            row.push((v.clone(), x(j) + header_w + 2.0, x(j) + slot - GAP));
                        } else {
                            row.push((v.clone(), x(j), x(j) + width));
                        }
                        tuple.push(Some(v));
                    }
                    let r = w.row(row);
                    track(span, r);
                    obj.content.push(tuple);
                };

                let tuples = |w: &mut Self| w.rng.gen_range(ns.tuples[0]..=ns.tuples[1]);
                let count = tuples(self);
                for _ in 0..count {
                    value_row(self, &mut obj, span);
                }
                if is_parent {
                    let [lo, hi] = ns.repetitions.unwrap_or([1, 1]);
                    let reps = self.rng.gen_range(lo..=hi);
                    for _ in 0..reps {
                        for &c in &node.children {
                            let child = self.node(t, c, span);
                            obj.children.push(child);
                        }
                        let count = tuples(self);
                        for _ in 0..count {
                            value_row(self, &mut obj, span);
                        }
                    }
                }
            }
            NodeType::KeyValue => {
                let per_row = ns.pairs_per_row;
                let slot = CONTENT_WIDTH / (2 * per_row + 1) as f64;
                let mut orphan = false;
                // a page header between the rows of one block would break the
                // fixed offsets between its fields
                self.keep_together(n.div_ceil(per_row));
                for (r, chunk) in node.fields.chunks(per_row).enumerate() {
                    let mut cells = Vec::new();
                    let mut pos = 0usize;
                    let place = |cells: &mut Vec<(String, f64, f64)>, text: String, pos: &mut usize| {
                        let x1 = MARGIN + *pos as f64 * slot;
                        cells.push((text, x1, x1 + slot - GAP));
                        *pos += 1;
                    };
                    let mut pairs = Vec::new();
                    for (k, f) in chunk.iter().enumerate() {
                        let j = r * per_row + k;
                        place(&mut cells, f.clone(), &mut pos);
                        if self.rng.gen_bool(ns.missing(j)) {
                            pairs.push(vec![Some(f.clone()), None]);
                        } else {
                            let v = self.value(ns.alphabet);
                            place(&mut cells, v.clone(), &mut pos);
                            pairs.push(vec![Some(f.clone()), Some(v)]);
                            if r == 0 && !orphan && self.inject() {
                                orphan = true;
                            }
                        }
                    }
                    if r == 0 && orphan {
                        self.injected += 1;
                        let v = self.value(ns.alphabet);
                        for c in cells.iter_mut() {
                            c.1 += slot;
                            c.2 += slot;
                        }
                        cells.insert(0, (v, MARGIN, MARGIN + slot - GAP));
                    }
                    let rr = self.row(cells);
                    track(span, rr);
                    obj.content.extend(pairs);
                }
            }
        }
        obj
    }
}

/// Generates `spec.documents` documents named `doc_0001`, `doc_0002`, ...
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<GeneratedDocument>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = HashSet::new();
    let t = &spec.template;
    let mut out = Vec::with_capacity(spec.documents);
    for d in 1..=spec.documents {
        let mut w = Writer {
            rng: &mut rng,
            used: &mut used,
            spec,
            doc: d,
            phrases: Vec::new(),
            page: 0,
            y: 0.0,
            injected: 0,
            meta_serial: 0,
        };
        let mut records = Vec::with_capacity(spec.records);
        for _ in 0..spec.records {
            let slots = t.root.len();
            let mut meta_at: Vec<usize> = (0..spec.metadata.per_record).map(|_| w.rng.gen_range(0..slots)).collect();
            meta_at.sort_unstable();
            let mut span = (u32::MAX, 0u32);
            let mut objects = Vec::new();
            for (k, &id) in t.root.iter().enumerate() {
                for _ in meta_at.iter().filter(|&&m| m == k) {
                    w.metadata_row();
                }
                objects.push(w.node(t, id, &mut span));
            }
            records.push(TruthRecord {
                objects,
                first_index: span.0,
                last_index: span.1,
            });
        }
        let pairs = records.iter().flat_map(|r| flatten_kv(&r.objects)).collect();
        let injected = w.injected;
        let stream = DocumentStream::new(format!("doc_{d:04}"), std::mem::take(&mut w.phrases))?;
        out.push(GeneratedDocument {
            stream,
            truth: GroundTruth { records, pairs, injected },
        });
    }
    Ok(out)
}

const WORDS: &[&str] = &[
    "Account", "Address", "Agent", "Amount", "Balance", "Batch", "Billing", "Branch", "Carrier", "Case",
    "Category", "City", "Claim", "Client", "Code", "Contact", "Contract", "Cost", "County", "Credit",
    "Customer", "Delivery", "Department", "Deposit", "Discount", "District", "Due", "Employee", "Entry",
    "Event", "Facility", "Fee", "Filing", "Grade", "Group", "Hours", "Incident", "Invoice", "Item",
    "Label", "Lease", "Line", "Location", "Member", "Method", "Name", "Office", "Officer", "Order",
    "Owner", "Parcel", "Party", "Payment", "Period", "Permit", "Plan", "Policy", "Price", "Product",
    "Project", "Quantity", "Rate", "Reason", "Region", "Report", "Route", "Sales", "Service", "Shift",
    "Site", "Source", "Stage", "State", "Status", "Store", "Subject", "Supplier", "Tax", "Team",
    "Term", "Title", "Total", "Tracking", "Type", "Unit", "Vendor", "Weight", "Zone",
];

/// Distinct two-word title-case field names.
pub struct FieldNames {
    used: BTreeSet<String>,
}

impl Default for FieldNames {
    fn default() -> Self {
        Self::new()
    }
}

impl FieldNames {
    pub fn new() -> Self {
        Self { used: BTreeSet::new() }
    }

    pub fn next(&mut self, rng: &mut impl Rng) -> String {
        loop {
            let a = WORDS.choose(rng).expect("word list is non-empty");
            let b = WORDS.choose(rng).expect("word list is non-empty");
            if a == b {
                continue;
            }
            let name = format!("{a} {b}");
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }

    pub fn take(&mut self, rng: &mut impl Rng, n: usize) -> Vec<String> {
        (0..n).map(|_| self.next(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// One or two leaf tables.
    Easy,
    /// Two to four leaf nodes mixing tables and key-value nodes.
    Medium,
    /// A parent table with nested children, plus leaf nodes.
    Hard,
}

fn random_alphabet(rng: &mut impl Rng) -> ValueAlphabet {
    *[ValueAlphabet::Number, ValueAlphabet::Date, ValueAlphabet::Code, ValueAlphabet::Amount]
        .choose(rng)
        .expect("non-empty")
}

fn random_table(rng: &mut impl Rng, names: &mut FieldNames, parent: bool) -> (Vec<String>, NodeSpec) {
    let n = if parent { rng.gen_range(2..=3) } else { rng.gen_range(2..=5) };
    let fields = names.take(rng, n);
    let missing = (0..n)
        .map(|j| if j < 2 { 0.0 } else { *[0.0, 0.2, 0.5].choose(rng).expect("non-empty") })
        .collect();
    let spec = NodeSpec {
        missing,
        tuples: [1, rng.gen_range(1..=3)],
        repetitions: parent.then(|| [1, rng.gen_range(1..=2)]),
        alphabet: random_alphabet(rng),
        pairs_per_row: 2,
    };
    (fields, spec)
}

fn random_kv(rng: &mut impl Rng, names: &mut FieldNames) -> (Vec<String>, NodeSpec) {
    let n = rng.gen_range(2..=5);
    let per_row = rng.gen_range(2..=3);
    let fields = names.take(rng, n);
    let mut missing: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.25) { 1.0 } else { 0.0 }).collect();
    // Keep every row reading as key-value: more field-value than field-field pairs.
    for chunk in (0..n).collect::<Vec<_>>().chunks(per_row) {
        let pattern: Vec<bool> = chunk
            .iter()
            .flat_map(|&j| if missing[j] >= 1.0 { vec![true] } else { vec![true, false] })
            .collect();
        let (k, kv) = pair_counts(&pattern);
        if kv <= k {
            chunk.iter().for_each(|&j| missing[j] = 0.0);
        }
    }
    let spec = NodeSpec {
        missing,
        tuples: [1, 1],
        repetitions: None,
        alphabet: random_alphabet(rng),
        pairs_per_row: per_row,
    };
    (fields, spec)
}

/// A random compliant spec of the given shape with `records` records.
pub fn random_spec(shape: Shape, seed: u64, records: usize) -> GeneratorSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let mut names = FieldNames::new();
    // (type, fields, children, spec), in pre-order
    let mut nodes: Vec<(NodeType, Vec<String>, Vec<usize>)> = Vec::new();
    let mut specs: Vec<NodeSpec> = Vec::new();
    let mut root = Vec::new();
    let push = |nodes: &mut Vec<_>, specs: &mut Vec<NodeSpec>, ty, (f, s): (Vec<String>, NodeSpec)| {
        nodes.push((ty, f, Vec::new()));
        specs.push(s);
        nodes.len() - 1
    };
    match shape {
        Shape::Easy => {
            for _ in 0..rng.gen_range(1..=2) {
                let t = random_table(&mut rng, &mut names, false);
                root.push(push(&mut nodes, &mut specs, NodeType::Table, t));
            }
        }
        Shape::Medium | Shape::Hard => {
            let mut prev_kv = true;
            if shape == Shape::Hard {
                let t = random_table(&mut rng, &mut names, true);
                let p = push(&mut nodes, &mut specs, NodeType::Table, t);
                root.push(p);
                let mut child_prev_kv = false;
                for _ in 0..rng.gen_range(1..=2) {
                    let kv = !child_prev_kv && rng.gen_bool(0.4);
                    let c = if kv {
                        let s = random_kv(&mut rng, &mut names);
                        push(&mut nodes, &mut specs, NodeType::KeyValue, s)
                    } else {
                        let s = random_table(&mut rng, &mut names, false);
                        push(&mut nodes, &mut specs, NodeType::Table, s)
                    };
                    nodes[p].2.push(c);
                    child_prev_kv = kv;
                }
                prev_kv = false;
            }
            let leaves = if shape == Shape::Hard { rng.gen_range(0..=2) } else { rng.gen_range(2..=4) };
            for _ in 0..leaves {
                let kv = !prev_kv && rng.gen_bool(0.5);
                let id = if kv {
                    let s = random_kv(&mut rng, &mut names);
                    push(&mut nodes, &mut specs, NodeType::KeyValue, s)
                } else {
                    let s = random_table(&mut rng, &mut names, false);
                    push(&mut nodes, &mut specs, NodeType::Table, s)
                };
                root.push(id);
                prev_kv = kv;
            }
        }
    }
    let template = template_from_nodes(nodes, root).expect("generated template is valid");
    let spec = GeneratorSpec {
        template,
        records,
        documents: 1,
        nodes: specs,
        metadata: MetadataSpec {
            page_headers: true,
            per_record: rng.gen_range(0..=1),
            policy: MetadataPolicy::Unaligned,
        },
        seed,
        compliant: true,
        noise_rate: 0.0,
    };
    debug_assert!(spec.validate().is_ok(), "{:?}", spec.validate());
    spec
}

/// A corpus for checking field-match properties: one target node of the given
/// type, optionally followed by a node of the other type sharing one field.
/// Key-value missing probabilities are all 0 or 1.
pub fn prop_spec(target: NodeType, seed: u64, records: usize, share_field: bool) -> GeneratorSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut names = FieldNames::new();
    let table = random_table(&mut rng, &mut names, false);
    let kv = random_kv(&mut rng, &mut names);
    let (mut nodes, mut specs) = (Vec::new(), Vec::new());
    let mut add = |ty, (f, s): (Vec<String>, NodeSpec)| {
        nodes.push((ty, f, Vec::new()));
        specs.push(s);
    };
    match target {
        NodeType::Table => {
            add(NodeType::Table, table.clone());
            if share_field {
                let (mut f, s) = kv;
                f[0] = table.0[rng.gen_range(0..table.0.len())].clone();
                add(NodeType::KeyValue, (f, s));
            }
        }
        NodeType::KeyValue => {
            // the first top-level node is always a table
            let (mut f, s) = table;
            if share_field {
                f[0] = kv.0[rng.gen_range(0..kv.0.len())].clone();
            }
            add(NodeType::Table, (f, s));
            add(NodeType::KeyValue, kv);
        }
    }
    let root = (0..nodes.len()).collect();
    let template = template_from_nodes(nodes, root).expect("valid template");
    GeneratorSpec {
        template,
        records,
        documents: 1,
        nodes: specs,
        metadata: MetadataSpec::default(),
        seed,
        compliant: true,
        noise_rate: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::TemplateNode;

    fn strings(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn police_spec() -> GeneratorSpec {
        let template = template_from_nodes(
            vec![
                (NodeType::Table, strings(&["Date", "Number", "Completed"]), vec![]),
                (NodeType::KeyValue, strings(&["Complaint", "Gender"]), vec![]),
            ],
            vec![0, 1],
        )
        .unwrap();
        GeneratorSpec {
            template,
            records: 2,
            documents: 1,
            nodes: vec![
                NodeSpec { missing: vec![0.0, 0.0, 0.5], ..Default::default() },
                NodeSpec::default(),
            ],
            metadata: MetadataSpec::default(),
            seed: 7,
            compliant: true,
            noise_rate: 0.0,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&police_spec()).unwrap();
        let b = generate(&police_spec()).unwrap();
        assert_eq!(a[0].stream, b[0].stream);
        assert_eq!(a[0].truth, b[0].truth);
        let mut other = police_spec();
        other.seed = 8;
        assert_ne!(generate(&other).unwrap()[0].stream, a[0].stream);
    }

    #[test]
    fn truth_matches_layout() {
        let docs = generate(&police_spec()).unwrap();
        let d = &docs[0];
        assert_eq!(d.truth.records.len(), 2);
        let texts: HashSet<&str> = d.stream.phrases.iter().map(|p| p.text.as_str()).collect();
        for (k, v) in &d.truth.pairs {
            assert!(texts.contains(k.as_str()));
            if let Some(v) = v {
                assert!(texts.contains(v.as_str()));
            }
        }
        let values: Vec<&String> = d.truth.pairs.iter().filter_map(|(_, v)| v.as_ref()).collect();
        let distinct: HashSet<_> = values.iter().collect();
        assert_eq!(values.len(), distinct.len());
        assert!(d.stream.phrases.iter().all(|p| p.bbox.validate().is_ok()));
        assert!(d.stream.phrases.iter().all(|p| p.bbox.y2 <= PAGE_HEIGHT - MARGIN));
    }

    #[test]
    fn many_records_break_pages() {
        let mut s = police_spec();
        s.records = 40;
        let d = &generate(&s).unwrap()[0];
        let pages: BTreeSet<u32> = d.stream.phrases.iter().map(|p| p.page).collect();
        assert!(pages.len() > 1);
        // rows never cross pages
        assert!(d.stream.rows.iter().all(|r| r.phrases.iter().all(|p| p.page == r.page())));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = police_spec();
        s.nodes[1].repetitions = Some([1, 2]);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));

        let mut s = police_spec();
        s.nodes[1].missing = vec![1.0, 1.0];
        assert!(s.validate().is_err());

        let mut s = police_spec();
        s.template.nodes[0].node_type = NodeType::KeyValue;
        assert!(s.validate().is_err());

        let mut s = police_spec();
        s.records = 0;
        assert!(s.validate().is_err());

        let mut s = police_spec();
        s.template.nodes.push(TemplateNode {
            id: 2,
            node_type: NodeType::Table,
            fields: strings(&["X"]),
            children: vec![],
        });
        s.template.root.push(2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn random_specs_are_valid_and_generate() {
        for seed in 0..30 {
            for shape in [Shape::Easy, Shape::Medium, Shape::Hard] {
                let s = random_spec(shape, seed, 3);
                s.validate().unwrap();
                let docs = generate(&s).unwrap();
                assert_eq!(docs[0].truth.records.len(), 3);
                assert_eq!(docs[0].truth.injected, 0);
            }
        }
        let hard = random_spec(Shape::Hard, 1, 2);
        assert!(!hard.template.nodes[0].children.is_empty());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = random_spec(Shape::Hard, 4, 5);
        let back = GeneratorSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let minimal = r#"{"template":{"root":[0],"nodes":[{"id":0,"type":"Table","fields":["A b","C d"],"children":[]}]},"records":2}"#;
        let m = GeneratorSpec::from_json(minimal).unwrap();
        assert_eq!((m.documents, m.compliant), (1, true));
    }

    #[test]
    fn noise_is_injected_when_requested() {
        let mut s = random_spec(Shape::Medium, 2, 20);
        s.compliant = false;
        s.noise_rate = 0.5;
        let docs = generate(&s).unwrap();
        assert!(docs[0].truth.injected > 0);
    }

    #[test]
    fn prop_specs_share_a_field() {
        for target in [NodeType::Table, NodeType::KeyValue] {
            let s = prop_spec(target, 3, 4, true);
            s.validate().unwrap();
            let a = s.template.nodes[0].field_set();
            let b = s.template.nodes[1].field_set();
            assert_eq!(a.intersection(&b).count(), 1);
        }
    }
}
