//! Phrase streams, rows, and the geometric predicates shared by every stage.
//!
//! A document arrives as a list of OCR phrases with reading-order indexes and
//! page-coordinate bounding boxes (`x` from the left edge, `y` from the top).
//! Rows are built greedily from horizontal alignment; every later stage works
//! on rows.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[x1, y1, x2, y2]` in page units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(format!("bbox {coords:?} must be finite and non-negative"));
        }
        if self.x1 >= self.x2 {
            return Err(format!("bbox x1 ({}) must be < x2 ({})", self.x1, self.x2));
        }
        if self.y1 >= self.y2 {
            return Err(format!("bbox y1 ({}) must be < y2 ({})", self.y1, self.y2));
        }
        Ok(())
    }

    /// Length of the overlap of the closed x-intervals; negative when disjoint.
    pub fn x_overlap(&self, other: &BBox) -> f64 {
        self.x2.min(other.x2) - self.x1.max(other.x1)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    pub index: u32,
    pub page: u32,
    pub bbox: BBox,
}

impl Phrase {
    pub fn new(text: impl Into<String>, index: u32, page: u32, bbox: BBox) -> Self {
        Self {
            text: text.into(),
            index,
            page,
            bbox,
        }
    }
}

/// Closed y-interval overlap on the same page. Phrases on different pages are
/// never in the same row.
pub fn horizontally_aligned(a: &Phrase, b: &Phrase) -> bool {
    a.page == b.page && a.bbox.y1 <= b.bbox.y2 && a.bbox.y2 >= b.bbox.y1
}

/// Closed x-interval overlap. Page is ignored: column alignment is a property
/// of the layout, and tables may continue on the next page.
pub fn vertically_aligned(a: &Phrase, b: &Phrase) -> bool {
    b.bbox.x1 <= a.bbox.x2 && b.bbox.x2 >= a.bbox.x1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub row_index: usize,
    pub phrases: Vec<Phrase>,
}

impl Row {
    pub fn first_index(&self) -> u32 {
        self.phrases.first().map_or(0, |p| p.index)
    }

    pub fn last_index(&self) -> u32 {
        self.phrases.last().map_or(0, |p| p.index)
    }

    pub fn page(&self) -> u32 {
        self.phrases.first().map_or(0, |p| p.page)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.phrases.iter().map(|p| p.text.as_str())
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.phrases.iter().any(|p| p.text == text)
    }
}

/// `A(upper, lower)`: true unless some phrase of `lower` is vertically
/// aligned with two or more distinct phrases of `upper`.
pub fn rows_well_aligned(upper: &Row, lower: &Row) -> bool {
    lower.phrases.iter().all(|q| {
        upper
            .phrases
            .iter()
            .filter(|p| vertically_aligned(p, q))
            .take(2)
            .count()
            < 2
    })
}

/// Greedy row construction over phrases sorted by index: a phrase joins the
/// earliest-created row whose every member it is horizontally aligned with.
pub fn build_rows(phrases: &[Phrase]) -> Vec<Row> {
    let mut rows: Vec<Row> = Vec::new();
    // Rows never cross pages, so only rows of the current page are candidates.
    let mut page_rows: Vec<usize> = Vec::new();
    let mut current_page = None;

    for phrase in phrases {
        if current_page != Some(phrase.page) {
            current_page = Some(phrase.page);
            page_rows = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.page() == phrase.page)
                .map(|(i, _)| i)
                .collect();
        }
        let target = page_rows.iter().copied().find(|&ri| {
            rows[ri]
                .phrases
                .iter()
                .all(|q| horizontally_aligned(phrase, q))
        });
        match target {
            Some(ri) => rows[ri].phrases.push(phrase.clone()),
            None => {
                let row_index = rows.len();
                rows.push(Row {
                    row_index,
                    phrases: vec![phrase.clone()],
                });
                page_rows.push(row_index);
            }
        }
    }
    rows
}

/// A validated phrase stream and its derived rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentStream {
    pub source_id: String,
    pub phrases: Vec<Phrase>,
    pub rows: Vec<Row>,
}

impl DocumentStream {
    /// Sorts by index, rejects duplicate indexes and malformed boxes, then builds rows.
    pub fn new(source_id: impl Into<String>, mut phrases: Vec<Phrase>) -> Result<Self> {
        phrases.sort_by_key(|p| p.index);
        for w in phrases.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::DuplicateIndex(w[0].index));
            }
        }
        for p in &phrases {
            validate_phrase(p).map_err(|reason| Error::InvalidPhrase {
                index: p.index,
                reason,
            })?;
        }
        let rows = build_rows(&phrases);
        Ok(Self {
            source_id: source_id.into(),
            phrases,
            rows,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Parses newline-delimited phrase records. Blank lines are skipped;
    /// errors carry the 1-based line number.
    pub fn from_jsonl(source_id: impl Into<String>, reader: impl BufRead) -> Result<Self> {
        let mut phrases = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let phrase: Phrase = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            validate_phrase(&phrase).map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
            if !seen.insert(phrase.index) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate phrase index {}", phrase.index),
                });
            }
            phrases.push(phrase);
        }
        Self::new(source_id, phrases)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for p in &self.phrases {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Concatenates documents in order, shifting indexes and pages so both stay
    /// unique and increasing across the whole corpus.
    pub fn concat<'a>(
        source_id: impl Into<String>,
        docs: impl IntoIterator<Item = &'a DocumentStream>,
    ) -> Self {
        let mut phrases = Vec::new();
        let mut index_offset = 0u32;
        let mut page_offset = 0u32;
        for doc in docs {
            let (mut max_index, mut max_page) = (0, 0);
            for p in &doc.phrases {
                max_index = max_index.max(p.index);
                max_page = max_page.max(p.page);
                let mut q = p.clone();
                q.index += index_offset;
                q.page += page_offset;
                phrases.push(q);
            }
            index_offset += max_index;
            page_offset += max_page;
        }
        let rows = build_rows(&phrases);
        Self {
            source_id: source_id.into(),
            phrases,
            rows,
        }
    }
}

fn validate_phrase(p: &Phrase) -> std::result::Result<(), String> {
    if p.index == 0 {
        return Err("index must be a positive integer".into());
    }
    if p.page == 0 {
        return Err("page must be a positive integer".into());
    }
    p.bbox.validate()
}
