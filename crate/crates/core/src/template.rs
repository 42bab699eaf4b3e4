//! Template trees and their inference from a labeled window.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldSet;
use crate::labeling::{InferenceWindow, Label, LabelAssignment};
use crate::model::{rows_well_aligned, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Table,
    KeyValue,
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeType::Table => "Table",
            NodeType::KeyValue => "KeyValue",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateNode {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    /// Field texts in layout order, without repeats.
    pub fields: Vec<String>,
    pub children: Vec<usize>,
}

impl TemplateNode {
    pub fn field_set(&self) -> BTreeSet<&str> {
        self.fields.iter().map(String::as_str).collect()
    }
}

/// Ordered tree under an implicit root. Node ids are positions in `nodes`
/// and follow pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub root: Vec<usize>,
    pub nodes: Vec<TemplateNode>,
}

impl Template {
    pub fn node(&self, id: usize) -> &TemplateNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pre_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<usize> = self.root.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes.iter().find(|n| n.children.contains(&id)).map(|n| n.id)
    }

    /// Checks ids, tree shape and field sets.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTemplate(m));
        if self.nodes.is_empty() {
            return bad("template has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return bad(format!("node at position {i} has id {}", n.id));
            }
            if n.fields.is_empty() {
                return bad(format!("node {i} has no fields"));
            }
            if n.field_set().len() != n.fields.len() {
                return bad(format!("node {i} repeats a field"));
            }
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for &c in self.root.iter().chain(self.nodes.iter().flat_map(|n| &n.children)) {
            match parents.get_mut(c) {
                Some(p) => *p += 1,
                None => return bad(format!("unknown node id {c}")),
            }
        }
        if let Some(i) = parents.iter().position(|&p| p != 1) {
            return bad(format!("node {i} has {} parents", parents[i]));
        }
        if self.pre_order().len() != self.nodes.len() {
            return bad("template contains a cycle".into());
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert((n.node_type, n.field_set())) {
                return bad(format!("node {} duplicates another node's type and fields", n.id));
            }
        }
        Ok(())
    }

    /// Field sets of later nodes that contain the first node's fields make
    /// record boundaries ambiguous.
    pub fn lint(&self) -> Vec<String> {
        let order = self.pre_order();
        let Some(&first) = order.first() else {
            return Vec::new();
        };
        let first_fields = self.nodes[first].field_set();
        order[1..]
            .iter()
            .filter(|&&id| self.nodes[id].field_set().is_superset(&first_fields))
            .map(|id| {
                format!(
                    "node {id} contains every field of the first node {first}; records may be split early"
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Template = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// Renumbers nodes in pre-order of the given tree.
    fn renumbered(nodes: Vec<TemplateNode>, root: Vec<usize>) -> Self {
        let draft = Template { root, nodes };
        let order = draft.pre_order();
        let mut new_id = vec![0usize; draft.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new;
        }
        let nodes = order
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                let n = &draft.nodes[old];
                TemplateNode {
                    id: new,
                    node_type: n.node_type,
                    fields: n.fields.clone(),
                    children: n.children.iter().map(|c| new_id[*c]).collect(),
                }
            })
            .collect();
        Template {
            root: draft.root.iter().map(|c| new_id[*c]).collect(),
            nodes,
        }
    }
}

/// Builds a template from explicit nodes; children lists determine the tree.
pub fn template_from_nodes(nodes: Vec<(NodeType, Vec<String>, Vec<usize>)>, root: Vec<usize>) -> Result<Template> {
    let nodes = nodes
        .into_iter()
        .enumerate()
        .map(|(id, (node_type, fields, children))| TemplateNode {
            id,
            node_type,
            fields,
            children,
        })
        .collect();
    let raw = Template { root, nodes };
    raw.validate()?;
    let t = Template::renumbered(raw.nodes, raw.root);
    t.validate()?;
    Ok(t)
}

/// One occurrence of a node in the window: a key row plus attached value
/// rows, or a run of key-value rows.
#[derive(Debug)]
struct Instance {
    node: usize,
    first: usize,
    last: usize,
}

fn dedup_texts<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    texts
        .filter(|t| seen.insert(*t))
        .map(str::to_string)
        .collect()
}

/// Key rows that hold no predicted field are treated as metadata.
pub fn effective_labels(window: &InferenceWindow, labels: &LabelAssignment, fields: &FieldSet) -> Vec<Label> {
    window
        .rows
        .iter()
        .zip(&labels.labels)
        .map(|(row, &l)| {
            if l == Label::K && !row.texts().any(|t| fields.contains(t)) {
                log::debug!("key row {} holds no predicted field; treating it as metadata", row.row_index);
                Label::M
            } else {
                l
            }
        })
        .collect()
}

/// Field texts that also occur in rows labeled V.
pub fn refine_fields(window: &InferenceWindow, labels: &LabelAssignment, fields: &FieldSet) -> FieldSet {
    let in_values: BTreeSet<&str> = window
        .rows
        .iter()
        .zip(&labels.labels)
        .filter(|(_, l)| **l == Label::V)
        .flat_map(|(r, _)| r.texts())
        .collect();
    fields
        .iter()
        .filter(|f| !in_values.contains(f.as_str()))
        .cloned()
        .collect()
}

pub fn infer_template(window: &InferenceWindow, labels: &LabelAssignment, fields: &FieldSet) -> Result<Template> {
    let rows = &window.rows;
    let labels = effective_labels(window, labels, fields);

    let mut nodes: Vec<TemplateNode> = Vec::new();
    let mut by_key: HashMap<(NodeType, Vec<String>), usize> = HashMap::new();
    let mut intern = |node_type: NodeType, fields: Vec<String>| -> usize {
        let mut key_fields = fields.clone();
        key_fields.sort();
        *by_key.entry((node_type, key_fields)).or_insert_with(|| {
            nodes.push(TemplateNode {
                id: nodes.len(),
                node_type,
                fields,
                children: Vec::new(),
            });
            nodes.len() - 1
        })
    };

    let mut instances: Vec<Instance> = Vec::new();
    // instance index of each K row
    let mut key_instance: Vec<Option<usize>> = vec![None; rows.len()];
    let mut i = 0;
    while i < rows.len() {
        match labels[i] {
            Label::K => {
                let node = intern(NodeType::Table, dedup_texts(rows[i].texts()));
                key_instance[i] = Some(instances.len());
                instances.push(Instance { node, first: i, last: i });
                i += 1;
            }
            Label::KV => {
                let start = i;
                while i < rows.len() && labels[i] == Label::KV {
                    i += 1;
                }
                let run_fields = dedup_texts(
                    rows[start..i]
                        .iter()
                        .flat_map(Row::texts)
                        .filter(|t| fields.contains(*t)),
                );
                if run_fields.is_empty() {
                    log::debug!("key-value rows {start}..{i} hold no predicted field; skipped");
                    continue;
                }
                let node = intern(NodeType::KeyValue, run_fields);
                instances.push(Instance { node, first: start, last: i - 1 });
            }
            Label::V => {
                let owner = (0..i)
                    .rev()
                    .find(|&k| labels[k] == Label::K && rows_well_aligned(&rows[k], &rows[i]));
                match owner.and_then(|k| key_instance[k]) {
                    Some(inst) => instances[inst].last = i,
                    None => log::debug!("value row {} has no aligned key row above it; treated as metadata", rows[i].row_index),
                }
                i += 1;
            }
            Label::M => i += 1,
        }
    }
    if nodes.is_empty() {
        return Err(Error::NoStructure);
    }

    // Parent of a node: the innermost earlier instance bracketing its first instance.
    let mut parent: Vec<Option<usize>> = vec![None; nodes.len()];
    let mut placed = vec![false; nodes.len()];
    let mut first_seen: Vec<usize> = vec![usize::MAX; nodes.len()];
    for (j, inst) in instances.iter().enumerate() {
        first_seen[inst.node] = first_seen[inst.node].min(inst.first);
        if placed[inst.node] {
            continue;
        }
        placed[inst.node] = true;
        let host = instances[..j]
            .iter()
            .filter(|h| h.first < inst.first && inst.first < h.last && h.node != inst.node)
            .max_by_key(|h| h.first);
        if let Some(h) = host {
            let mut up = Some(h.node);
            let mut cyclic = false;
            while let Some(p) = up {
                if p == inst.node {
                    cyclic = true;
                    break;
                }
                up = parent[p];
            }
            if !cyclic {
                parent[inst.node] = Some(h.node);
            }
        }
    }

    let mut root = Vec::new();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by_key(|&n| (first_seen[n], n));
    for n in order {
        match parent[n] {
            Some(p) => nodes[p].children.push(n),
            None => root.push(n),
        }
    }
    let t = Template::renumbered(nodes, root);
    for w in t.lint() {
        log::warn!("{w}");
    }
    debug_assert!(t.validate().is_ok());
    Ok(t)
}
