//! CSV ingestion and emission for ordinal datasets.
//!
//! Input: comma-separated, one header row of item names, integer cells.
//! Codes are shifted by `code_offset` (1-based scales become 0-based) and
//! columns are permuted into the group-major order of the configuration.
//! Rows with blanks or non-integer cells are rejected with their location;
//! the likelihood here is complete-data only.

use crate::config::RunConfig;
use crate::error::CliError;
use factor_copula::data::OrdinalDataset;
use factor_copula::model::GroupStructure;
use std::io::Write;
use std::path::Path;

pub fn read_csv(path: &Path, config: &RunConfig) -> Result<OrdinalDataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, config)
}

pub fn parse_csv(text: &str, config: &RunConfig) -> Result<OrdinalDataset, CliError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data("empty csv: missing header row"))?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();

    // Wanted order: group-major per the config; default single group over
    // all columns when the config names none.
    let (wanted, sizes): (Vec<String>, Vec<usize>) = if config.groups.is_empty() {
        (columns.clone(), vec![columns.len()])
    } else {
        (config.grouped_items(), config.group_sizes())
    };
    let mut col_of = Vec::with_capacity(wanted.len());
    for item in &wanted {
        let idx = columns
            .iter()
            .position(|c| c == item)
            .ok_or_else(|| CliError::data(format!("group config names unknown item '{item}'")))?;
        col_of.push(idx);
    }
    let d = wanted.len();

    let mut raw: Vec<i64> = Vec::new();
    let mut n = 0usize;
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if cells.len() != columns.len() {
            return Err(CliError::data(format!(
                "row {}: expected {} cells, got {}",
                lineno + 1,
                columns.len(),
                cells.len()
            )));
        }
        for &c in &col_of {
            let cell = cells[c];
            let value: i64 = cell.parse().map_err(|_| {
                CliError::data(format!(
                    "row {}, column '{}': non-integer cell '{}'",
                    lineno + 1,
                    columns[c],
                    cell
                ))
            })?;
            let code = value - config.code_offset;
            if code < 0 {
                return Err(CliError::data(format!(
                    "row {}, column '{}': code {} below offset {}",
                    lineno + 1,
                    columns[c],
                    value,
                    config.code_offset
                )));
            }
            raw.push(code);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::data("csv has a header but no data rows"));
    }

    // Categories: configured K applies to every item, otherwise max code + 1.
    let mut k = vec![0usize; d];
    for row in 0..n {
        for j in 0..d {
            let code = raw[row * d + j] as usize;
            if code + 1 > k[j] {
                k[j] = code + 1;
            }
        }
    }
    if let Some(k_cfg) = config.k {
        for (j, kj) in k.iter_mut().enumerate() {
            if *kj > k_cfg {
                return Err(CliError::data(format!(
                    "item '{}' has codes beyond K = {k_cfg}",
                    wanted[j]
                )));
            }
            *kj = k_cfg;
        }
    }
    for (j, &kj) in k.iter().enumerate() {
        if kj < 2 {
            return Err(CliError::data(format!(
                "item '{}' shows a single category",
                wanted[j]
            )));
        }
    }

    let codes: Vec<u8> = raw
        .iter()
        .map(|&v| {
            u8::try_from(v).map_err(|_| CliError::data(format!("code {v} out of u8 range")))
        })
        .collect::<Result<_, _>>()?;
    let groups = GroupStructure::new(sizes)
        .map_err(|e| CliError::data(format!("invalid group structure: {e}")))?;
    OrdinalDataset::new(wanted, k, groups, codes)
        .map_err(|e| CliError::data(format!("dataset validation: {e}")))
}

/// Writes a dataset in the same schema `read_csv` accepts (no offset).
pub fn write_csv(dataset: &OrdinalDataset, out: &mut impl Write) -> Result<(), CliError> {
    writeln!(out, "{}", dataset.item_names().join(","))?;
    for row in dataset.rows() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}
