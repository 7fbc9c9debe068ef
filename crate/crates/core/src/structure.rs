//! Token-level entity structure.
//!
//! Every ordered token pair of a document is assigned one of six
//! dependency types. Mention–mention pairs are split by sentence
//! co-occurrence (intra/inter) and coreference (coref/relate); a mention
//! token paired with a non-entity token of the same sentence is `IntraNE`;
//! everything else, including every pair of two non-entity tokens, is `NA`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum DependencyType {
    Na = 0,
    IntraNe = 1,
    InterRelate = 2,
    IntraRelate = 3,
    InterCoref = 4,
    IntraCoref = 5,
}

impl DependencyType {
    pub const ALL: [DependencyType; 6] = [
        DependencyType::IntraCoref,
        DependencyType::InterCoref,
        DependencyType::IntraRelate,
        DependencyType::InterRelate,
        DependencyType::IntraNe,
        DependencyType::Na,
    ];

    /// The five types that carry transformation parameters.
    pub const STRUCTURED: [DependencyType; 5] = [
        DependencyType::IntraCoref,
        DependencyType::InterCoref,
        DependencyType::IntraRelate,
        DependencyType::InterRelate,
        DependencyType::IntraNe,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Na,
            1 => Self::IntraNe,
            2 => Self::InterRelate,
            3 => Self::IntraRelate,
            4 => Self::InterCoref,
            5 => Self::IntraCoref,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::IntraCoref => "intra+coref",
            Self::InterCoref => "inter+coref",
            Self::IntraRelate => "intra+relate",
            Self::InterRelate => "inter+relate",
            Self::IntraNe => "intraNE",
            Self::Na => "NA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Index into [`DependencyType::STRUCTURED`]; `None` for `NA`.
    pub fn structured_index(self) -> Option<usize> {
        Self::STRUCTURED.iter().position(|&d| d == self)
    }
}

impl fmt::Display for DependencyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MentionRef {
    pub entity: usize,
    pub mention: usize,
}

/// Sentence and mention membership of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenAnnotation {
    pub sentence: usize,
    pub mention: Option<MentionRef>,
}

impl TokenAnnotation {
    pub fn outside(sentence: usize) -> Self {
        Self {
            sentence,
            mention: None,
        }
    }

    pub fn inside(sentence: usize, entity: usize, mention: usize) -> Self {
        Self {
            sentence,
            mention: Some(MentionRef { entity, mention }),
        }
    }

    pub fn entity_index(&self) -> Option<usize> {
        self.mention.map(|m| m.entity)
    }

    pub fn mention_index(&self) -> Option<usize> {
        self.mention.map(|m| m.mention)
    }
}

pub fn classify_dependency(a: &TokenAnnotation, b: &TokenAnnotation) -> DependencyType {
    use DependencyType::*;
    let same_sentence = a.sentence == b.sentence;
    match (a.mention, b.mention) {
        (Some(x), Some(y)) => match (same_sentence, x.entity == y.entity) {
            (true, true) => IntraCoref,
            (false, true) => InterCoref,
            (true, false) => IntraRelate,
            (false, false) => InterRelate,
        },
        (Some(_), None) | (None, Some(_)) if same_sentence => IntraNe,
        _ => Na,
    }
}

/// Symmetric `n x n` grid of dependency types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureMatrix {
    doc_id: String,
    n: usize,
    cells: Vec<DependencyType>,
}

impl StructureMatrix {
    /// Validates squareness and symmetry.
    pub fn from_cells(doc_id: impl Into<String>, n: usize, cells: Vec<DependencyType>) -> Result<Self> {
        let doc_id = doc_id.into();
        if cells.len() != n * n {
            return Err(Error::doc(&doc_id, format!("{} cells for n = {n}", cells.len())));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if cells[i * n + j] != cells[j * n + i] {
                    return Err(Error::doc(&doc_id, format!("asymmetric cell ({i}, {j})")));
                }
            }
        }
        Ok(Self { doc_id, n, cells })
    }

    pub fn all_na(doc_id: impl Into<String>, n: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            n,
            cells: vec![DependencyType::Na; n * n],
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> DependencyType {
        self.cells[i * self.n + j]
    }

    pub fn cells(&self) -> &[DependencyType] {
        &self.cells
    }

    /// Whether any cell carries `dep`.
    pub fn contains(&self, dep: DependencyType) -> bool {
        self.cells.contains(&dep)
    }

    /// Extends to `len x len`; new cells are `NA`.
    pub fn padded(&self, len: usize) -> Self {
        if len <= self.n {
            return self.clone();
        }
        let mut cells = vec![DependencyType::Na; len * len];
        for i in 0..self.n {
            cells[i * len..i * len + self.n].copy_from_slice(&self.cells[i * self.n..(i + 1) * self.n]);
        }
        Self {
            doc_id: self.doc_id.clone(),
            n: len,
            cells,
        }
    }

    pub fn write_grid<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        let id = self.doc_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.cells.iter().map(|d| d.code()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_grid<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::doc("<grid>", m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(bad("bad grid magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut id)?;
        let doc_id = String::from_utf8(id).map_err(|_| bad("non-utf8 doc id"))?;
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut bytes = vec![0u8; n * n];
        r.read_exact(&mut bytes)?;
        let cells = bytes
            .into_iter()
            .map(|c| DependencyType::from_code(c).ok_or_else(|| bad("unknown cell code")))
            .collect::<Result<Vec<_>>>()?;
        Self::from_cells(doc_id, n, cells)
    }
}

/// Byte grid header: magic, u32 doc id length, doc id, u32 n, then `n*n`
/// cell codes row-major.
pub const GRID_MAGIC: &[u8; 4] = b"SSM1";

pub fn build_structure_matrix(doc: &Document) -> Result<StructureMatrix> {
    let ann = doc.token_annotations()?;
    Ok(matrix_from_annotations(&doc.doc_id, &ann))
}

pub fn matrix_from_annotations(doc_id: &str, ann: &[TokenAnnotation]) -> StructureMatrix {
    let n = ann.len();
    let mut cells = vec![DependencyType::Na; n * n];
    for i in 0..n {
        cells[i * n + i] = classify_dependency(&ann[i], &ann[i]);
        for j in (i + 1)..n {
            let d = classify_dependency(&ann[i], &ann[j]);
            cells[i * n + j] = d;
            cells[j * n + i] = d;
        }
    }
    StructureMatrix {
        doc_id: doc_id.to_string(),
        n,
        cells,
    }
}

/// Turns every cell whose type is in `excluded` into `NA`.
pub fn apply_ablation(m: &StructureMatrix, excluded: &BTreeSet<DependencyType>) -> Result<StructureMatrix> {
    if excluded.contains(&DependencyType::Na) {
        return Err(Error::InvalidDependency(DependencyType::Na));
    }
    let cells = m
        .cells
        .iter()
        .map(|&d| if excluded.contains(&d) { DependencyType::Na } else { d })
        .collect();
    Ok(StructureMatrix {
        doc_id: m.doc_id.clone(),
        n: m.n,
        cells,
    })
}

/// Count per dependency type; every type is present as a key.
pub fn dependency_histogram(m: &StructureMatrix) -> BTreeMap<DependencyType, usize> {
    let mut h: BTreeMap<DependencyType, usize> = DependencyType::ALL.iter().map(|&d| (d, 0)).collect();
    for &c in &m.cells {
        *h.get_mut(&c).expect("all types present") += 1;
    }
    h
}
