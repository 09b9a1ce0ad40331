//! In-memory ordinal dataset.
//!
//! Rows are respondents, columns are items in group-major order (all items of
//! group 1, then group 2, ...). Codes are 0-based; `k[j]` is the number of
//! categories of item j. File ingestion and any column reordering live in the
//! companion CLI crate.

use crate::model::GroupStructure;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDataset {
    item_names: Vec<String>,
    k: Vec<usize>,
    groups: GroupStructure,
    n: usize,
    codes: Vec<u8>, // n * d, row-major
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    ShapeMismatch { expected: usize, got: usize },
    CodeOutOfRange { row: usize, item: usize, code: u8, k: usize },
    EmptyDataset,
    /// An item shows a single observed category; cutpoints are undefined.
    DegenerateItem { item: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::ShapeMismatch { expected, got } => {
                write!(f, "expected {expected} items per row, got {got}")
            }
            DataError::CodeOutOfRange { row, item, code, k } => write!(
                f,
                "code {code} at row {row}, item {item} exceeds K-1 = {}",
                k - 1
            ),
            DataError::EmptyDataset => write!(f, "dataset has no rows"),
            DataError::DegenerateItem { item } => {
                write!(f, "item {item} has a single observed category")
            }
        }
    }
}

impl core::error::Error for DataError {}

impl OrdinalDataset {
    pub fn new(
        item_names: Vec<String>,
        k: Vec<usize>,
        groups: GroupStructure,
        codes: Vec<u8>,
    ) -> Result<Self, DataError> {
        let d = groups.total_items();
        if item_names.len() != d {
            return Err(DataError::ShapeMismatch {
                expected: d,
                got: item_names.len(),
            });
        }
        if k.len() != d {
            return Err(DataError::ShapeMismatch { expected: d, got: k.len() });
        }
        if codes.is_empty() || codes.len() % d != 0 {
            return Err(DataError::EmptyDataset);
        }
        let n = codes.len() / d;
        for row in 0..n {
            for item in 0..d {
                let code = codes[row * d + item];
                if (code as usize) >= k[item] {
                    return Err(DataError::CodeOutOfRange {
                        row,
                        item,
                        code,
                        k: k[item],
                    });
                }
            }
        }
        Ok(Self {
            item_names,
            k,
            groups,
            n,
            codes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.k.len()
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn categories(&self) -> &[usize] {
        &self.k
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        let d = self.k.len();
        &self.codes[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Per-category counts for one item.
    pub fn counts(&self, item: usize) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.k[item]];
        for row in self.rows() {
            counts[row[item] as usize] += 1;
        }
        counts
    }

    /// Two-way contingency table of a pair of items.
    pub fn pair_table(&self, a: usize, b: usize) -> Vec<Vec<usize>> {
        let mut t = alloc::vec![alloc::vec![0usize; self.k[b]]; self.k[a]];
        for row in self.rows() {
            t[row[a] as usize][row[b] as usize] += 1;
        }
        t
    }
}
