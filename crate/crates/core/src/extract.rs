//! Template-driven extraction: records, blocks, and extraction objects.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rows_well_aligned, vertically_aligned, BBox, DocumentStream, Phrase, Row};
use crate::template::{NodeType, Template};

/// A consecutive row range `start_row..end_row` of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordSpan {
    pub ordinal: usize,
    pub start_row: usize,
    pub end_row: usize,
    /// Not every template node was visited (usually a truncated last record).
    pub partial: bool,
}

/// Splits rows into records. A node is visited when its fields all occur
/// among the phrases accumulated since the previous visit. Once every node
/// has been visited, a new visit of the first pre-order node opens the next
/// record at the earliest accumulated row holding one of its fields.
pub fn separate_records(rows: &[Row], template: &Template) -> Result<Vec<RecordSpan>> {
    let order = template.pre_order();
    let first = *order.first().ok_or(Error::NoStructure)?;
    let first_fields = template.node(first).field_set();
    let node_fields: Vec<BTreeSet<&str>> = template.nodes.iter().map(|n| n.field_set()).collect();

    let mut spans = Vec::new();
    let mut visited = vec![false; template.len()];
    let mut acc: BTreeSet<&str> = BTreeSet::new();
    let mut acc_rows: Vec<usize> = Vec::new();
    let mut start = 0;
    let mut found_first = false;

    for (i, row) in rows.iter().enumerate() {
        acc.extend(row.texts());
        acc_rows.push(i);
        let hits: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&n| node_fields[n].is_subset(&acc))
            .collect();
        if hits.is_empty() {
            continue;
        }
        if hits.contains(&first) {
            found_first = true;
            if visited.iter().all(|v| *v) {
                let cut = acc_rows
                    .iter()
                    .copied()
                    .find(|&r| rows[r].texts().any(|t| first_fields.contains(t)))
                    .unwrap_or(i);
                spans.push(RecordSpan {
                    ordinal: spans.len() + 1,
                    start_row: start,
                    end_row: cut,
                    partial: false,
                });
                start = cut;
                visited.iter_mut().for_each(|v| *v = false);
            }
        }
        for n in hits {
            visited[n] = true;
        }
        acc.clear();
        acc_rows.clear();
    }
    if !found_first {
        return Err(Error::TemplateMismatch);
    }
    let partial = !visited.iter().all(|v| *v);
    if partial {
        log::warn!("last record does not visit every template node");
    }
    spans.push(RecordSpan {
        ordinal: spans.len() + 1,
        start_row: start,
        end_row: rows.len(),
        partial,
    });
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub node_id: usize,
    pub block_type: NodeType,
    /// Document row indexes, ascending; a table block starts with its key row.
    pub rows: Vec<usize>,
}

impl Block {
    pub fn first_row(&self) -> usize {
        self.rows[0]
    }

    pub fn last_row(&self) -> usize {
        *self.rows.last().expect("blocks are never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Key(usize),
    KeyValue,
    Value,
}

fn classify(row: &Row, template: &Template) -> RowKind {
    let texts: BTreeSet<&str> = row.texts().collect();
    let table = template
        .nodes
        .iter()
        .filter(|n| n.node_type == NodeType::Table && n.field_set().is_subset(&texts))
        .max_by_key(|n| (n.fields.len(), std::cmp::Reverse(n.id)));
    if let Some(n) = table {
        return RowKind::Key(n.id);
    }
    let kv = template
        .nodes
        .iter()
        .any(|n| n.node_type == NodeType::KeyValue && n.fields.iter().any(|f| texts.contains(f.as_str())));
    if kv {
        RowKind::KeyValue
    } else {
        RowKind::Value
    }
}

/// Key-value node sharing the most field texts with the given rows.
fn best_kv_node(rows: &[&Row], template: &Template) -> Option<usize> {
    let texts: BTreeSet<&str> = rows.iter().flat_map(|r| r.texts()).collect();
    template
        .nodes
        .iter()
        .filter(|n| n.node_type == NodeType::KeyValue)
        .map(|n| (n.fields.iter().filter(|f| texts.contains(f.as_str())).count(), n.id))
        .filter(|(c, _)| *c > 0)
        .max_by_key(|(c, id)| (*c, std::cmp::Reverse(*id)))
        .map(|(_, id)| id)
}

/// Splits the rows of one record into blocks; returns the blocks and the rows
/// left over as metadata.
pub fn separate_blocks(rows: &[Row], span: &RecordSpan, template: &Template) -> (Vec<Block>, Vec<usize>) {
    let mut blocks: Vec<Block> = Vec::new();
    let mut metadata = Vec::new();
    // block index of each key row seen so far, latest last
    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut prev_kv: Option<usize> = None;

    for r in span.start_row..span.end_row {
        let kind = classify(&rows[r], template);
        if kind != RowKind::KeyValue {
            prev_kv = None;
        }
        match kind {
            RowKind::Key(node) => {
                keys.push((r, blocks.len()));
                blocks.push(Block {
                    node_id: node,
                    block_type: NodeType::Table,
                    rows: vec![r],
                });
            }
            RowKind::KeyValue => match prev_kv {
                Some(b) => blocks[b].rows.push(r),
                None => {
                    prev_kv = Some(blocks.len());
                    blocks.push(Block {
                        node_id: usize::MAX,
                        block_type: NodeType::KeyValue,
                        rows: vec![r],
                    });
                }
            },
            RowKind::Value => {
                let owner = match keys.last() {
                    Some(&(k, b)) if rows_well_aligned(&rows[k], &rows[r]) => Some(b),
                    _ => keys
                        .iter()
                        .rev()
                        .find(|&&(k, b)| {
                            !template.node(blocks[b].node_id).children.is_empty()
                                && rows_well_aligned(&rows[k], &rows[r])
                        })
                        .map(|&(_, b)| b),
                };
                match owner {
                    Some(b) => blocks[b].rows.push(r),
                    None => metadata.push(r),
                }
            }
        }
    }
    for b in blocks.iter_mut().filter(|b| b.block_type == NodeType::KeyValue) {
        let members: Vec<&Row> = b.rows.iter().map(|&r| &rows[r]).collect();
        b.node_id = best_kv_node(&members, template).expect("key-value rows intersect some node");
    }
    (blocks, metadata)
}

/// Extracted content of one block. Table content holds one array per value
/// row aligned to `fields`; key-value content holds `[key, value]` pairs.
/// Missing values are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionObject {
    pub node_id: usize,
    #[serde(rename = "type")]
    pub obj_type: NodeType,
    pub fields: Vec<String>,
    pub content: Vec<Vec<Option<String>>>,
    pub children: Vec<ExtractionObject>,
}

impl ExtractionObject {
    /// Key-value pairs of this object only, in content order.
    pub fn pairs(&self) -> Vec<(String, Option<String>)> {
        match self.obj_type {
            NodeType::Table => self
                .content
                .iter()
                .flat_map(|tuple| self.fields.iter().cloned().zip(tuple.iter().cloned()))
                .collect(),
            NodeType::KeyValue => self
                .content
                .iter()
                .filter_map(|p| match p.as_slice() {
                    [Some(k), v] => Some((k.clone(), v.clone())),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Table cells by vertical alignment with the key row; a phrase aligned with
/// several fields goes to the one it overlaps most, leftmost on ties.
/// Returns the object and phrases that fit no cell.
pub fn extract_table<'a>(block: &Block, rows: &'a [Row], template: &Template) -> (ExtractionObject, Vec<&'a Phrase>) {
    let node = template.node(block.node_id);
    let header = &rows[block.first_row()];
    let mut stray = Vec::new();
    let mut used = vec![false; header.phrases.len()];
    let anchors: Vec<&Phrase> = node
        .fields
        .iter()
        .map(|f| {
            let pos = header
                .phrases
                .iter()
                .enumerate()
                .position(|(i, p)| !used[i] && &p.text == f)
                .expect("key row holds every node field");
            used[pos] = true;
            &header.phrases[pos]
        })
        .collect();
    stray.extend(header.phrases.iter().zip(&used).filter(|(_, u)| !**u).map(|(p, _)| p));

    let mut content = Vec::new();
    for &r in &block.rows[1..] {
        let mut tuple: Vec<Option<String>> = vec![None; anchors.len()];
        for p in &rows[r].phrases {
            let target = anchors
                .iter()
                .enumerate()
                .filter(|(_, a)| vertically_aligned(a, p))
                .max_by(|(_, a), (_, b)| {
                    a.bbox
                        .x_overlap(&p.bbox)
                        .total_cmp(&b.bbox.x_overlap(&p.bbox))
                        .then(b.bbox.x1.total_cmp(&a.bbox.x1))
                })
                .map(|(j, _)| j);
            match target {
                Some(j) if tuple[j].is_none() => tuple[j] = Some(p.text.clone()),
                _ => {
                    log::warn!("phrase {} ({:?}) fits no table cell; kept as metadata", p.index, p.text);
                    stray.push(p);
                }
            }
        }
        content.push(tuple);
    }
    let obj = ExtractionObject {
        node_id: node.id,
        obj_type: NodeType::Table,
        fields: node.fields.clone(),
        content,
        children: Vec::new(),
    };
    (obj, stray)
}

/// Pairs each field phrase with the following non-field phrase; a field
/// followed by another field, or by nothing, gets a missing value. Non-field
/// phrases that follow no field are returned as strays.
pub fn extract_kv<'a>(block: &Block, rows: &'a [Row], template: &Template) -> (ExtractionObject, Vec<&'a Phrase>) {
    let node = template.node(block.node_id);
    let fields = node.field_set();
    let mut phrases: Vec<&Phrase> = block.rows.iter().flat_map(|&r| &rows[r].phrases).collect();
    phrases.sort_by_key(|p| p.index);
    let is_field = |p: &Phrase| fields.contains(p.text.as_str());

    let mut content = Vec::new();
    let mut stray = Vec::new();
    let mut i = 0;
    while i < phrases.len() {
        let p = phrases[i];
        if is_field(p) {
            match phrases.get(i + 1) {
                Some(q) if !is_field(q) => {
                    content.push(vec![Some(p.text.clone()), Some(q.text.clone())]);
                    i += 2;
                }
                _ => {
                    content.push(vec![Some(p.text.clone()), None]);
                    i += 1;
                }
            }
        } else {
            log::warn!("phrase {} ({:?}) follows no field; kept as metadata", p.index, p.text);
            stray.push(p);
            i += 1;
        }
    }
    let obj = ExtractionObject {
        node_id: node.id,
        obj_type: NodeType::KeyValue,
        fields: node.fields.clone(),
        content,
        children: Vec::new(),
    };
    (obj, stray)
}

/// Builds the object forest of one record. A block's parent is the innermost
/// earlier block whose row span strictly brackets its first row; failing
/// that, the latest earlier block of the template parent node.
pub fn assemble_objects(blocks: &[Block], objects: Vec<ExtractionObject>, template: &Template) -> Vec<ExtractionObject> {
    let n = blocks.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for j in 0..n {
        let bj = &blocks[j];
        parent[j] = (0..j)
            .filter(|&i| blocks[i].first_row() < bj.first_row() && bj.first_row() < blocks[i].last_row())
            .max_by_key(|&i| blocks[i].first_row())
            .or_else(|| {
                let tp = template.parent(bj.node_id)?;
                (0..j).rev().find(|&i| blocks[i].node_id == tp)
            });
    }
    let mut slots: Vec<Option<ExtractionObject>> = objects.into_iter().map(Some).collect();
    // children come after parents, so attach from the back
    for j in (0..n).rev() {
        if let Some(p) = parent[j] {
            let child = slots[j].take().expect("each object is attached once");
            slots[p].as_mut().expect("parents precede children").children.insert(0, child);
        }
    }
    slots.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Above,
    Below,
    SameRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NearestObject {
    pub node_id: usize,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataEntry {
    pub text: String,
    pub page: u32,
    pub bbox: BBox,
    pub relation: Option<NearestObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutput {
    pub ordinal: usize,
    pub partial: bool,
    pub objects: Vec<ExtractionObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub records: Vec<RecordOutput>,
    pub metadata: Vec<MetadataEntry>,
}

impl Extraction {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn nearest(row: usize, blocks: &[Block]) -> Option<NearestObject> {
    blocks
        .iter()
        .map(|b| {
            let (dist, relation) = if row < b.first_row() {
                (b.first_row() - row, Relation::Above)
            } else if row > b.last_row() {
                (row - b.last_row(), Relation::Below)
            } else {
                (0, Relation::SameRow)
            };
            (dist, b.node_id, relation)
        })
        .min_by_key(|(d, _, _)| *d)
        .map(|(_, node_id, relation)| NearestObject { node_id, relation })
}

/// Runs record, block and content extraction over one document.
pub fn extract_document(doc: &DocumentStream, template: &Template) -> Result<Extraction> {
    let rows = &doc.rows;
    let spans = separate_records(rows, template)?;
    let mut records = Vec::with_capacity(spans.len());
    let mut loose: Vec<(usize, &Phrase)> = Vec::new();
    let mut all_blocks: Vec<Block> = Vec::new();
    let row_of: HashMap<u32, usize> = rows
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.phrases.iter().map(move |p| (p.index, r)))
        .collect();

    for span in &spans {
        let (blocks, meta_rows) = separate_blocks(rows, span, template);
        for r in meta_rows {
            loose.extend(rows[r].phrases.iter().map(|p| (r, p)));
        }
        let mut objects = Vec::with_capacity(blocks.len());
        for b in &blocks {
            let (obj, stray) = match b.block_type {
                NodeType::Table => extract_table(b, rows, template),
                NodeType::KeyValue => extract_kv(b, rows, template),
            };
            for p in stray {
                loose.push((row_of[&p.index], p));
            }
            objects.push(obj);
        }
        records.push(RecordOutput {
            ordinal: span.ordinal,
            partial: span.partial,
            objects: assemble_objects(&blocks, objects, template),
        });
        all_blocks.extend(blocks);
    }
    loose.sort_by_key(|(_, p)| p.index);
    let metadata = loose
        .into_iter()
        .map(|(r, p)| MetadataEntry {
            text: p.text.clone(),
            page: p.page,
            bbox: p.bbox,
            relation: nearest(r, &all_blocks),
        })
        .collect();
    Ok(Extraction { records, metadata })
}
