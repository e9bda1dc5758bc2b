//! Edge lists and per-unit data files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NetworkData;
use crate::error::{Error, Result};
use crate::network::FriendshipNetwork;

/// A network read from an edge list, with the file's id for each unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedNetwork {
    pub network: FriendshipNetwork,
    /// `original_ids[u]` is the id that unit `u` carried in the file.
    pub original_ids: Vec<u64>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads an edge list: two integer ids per line separated by whitespace or
/// a comma. Lines starting with `#` and blank lines are skipped, and so is
/// a first content line of two non-numeric tokens (a CSV header such as
/// `node_1,node_2`). Ids are compacted to `0..N` in order of first
/// appearance; repeated edges collapse.
pub fn read_edge_list<R: Read>(reader: R) -> Result<LoadedNetwork> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut original_ids = Vec::new();
    let mut edges = Vec::new();
    let mut seen_content = false;
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let number = k + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();
        if tokens.len() != 2 {
            return Err(parse_error(number, format!("expected two ids, found {} fields", tokens.len())));
        }
        let parsed: Vec<Option<u64>> = tokens.iter().map(|t| t.parse().ok()).collect();
        let first_content = !seen_content;
        seen_content = true;
        let (Some(a), Some(b)) = (parsed[0], parsed[1]) else {
            if first_content && parsed.iter().all(Option::is_none) {
                continue;
            }
            return Err(parse_error(number, format!("ids must be non-negative integers, got '{text}'")));
        };
        if a == b {
            return Err(parse_error(number, format!("self-loop on id {a}")));
        }
        let mut unit = |id: u64| {
            *index.entry(id).or_insert_with(|| {
                original_ids.push(id);
                original_ids.len() - 1
            })
        };
        let (u, v) = (unit(a), unit(b));
        edges.push((u, v));
    }
    let network = FriendshipNetwork::from_edges(original_ids.len(), edges)?;
    Ok(LoadedNetwork { network, original_ids })
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<FriendshipNetwork> {
    Ok(read_edge_list(File::open(path)?)?.network)
}

pub fn write_edge_list<W: Write>(net: &FriendshipNetwork, mut writer: W) -> Result<()> {
    for (i, j) in net.edges() {
        writeln!(writer, "{i} {j}")?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DataRow {
    unit: usize,
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "Y")]
    y: f64,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => parse_error(line, format!("{kind:?}")),
    }
}

/// Reads a `unit,L,A,Y` table with one row per unit, in any order. `L` is
/// taken as real-valued when any entry is not 0 or 1.
pub fn read_data<R: Read>(reader: R) -> Result<NetworkData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["unit", "L", "A", "Y"] {
        return Err(parse_error(
            1,
            format!("expected header unit,L,A,Y, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows: Vec<DataRow> = Vec::new();
    for (k, row) in rdr.deserialize().enumerate() {
        rows.push(row.map_err(|e| match csv_error(e) {
            Error::Parse { message, .. } => parse_error(k + 2, message),
            other => other,
        })?);
    }
    let n = rows.len();
    let mut slot: Vec<Option<(f64, f64, f64)>> = vec![None; n];
    for (k, r) in rows.iter().enumerate() {
        if r.unit >= n {
            return Err(parse_error(k + 2, format!("unit {} outside 0..{n}", r.unit)));
        }
        if slot[r.unit].replace((r.l, r.a, r.y)).is_some() {
            return Err(parse_error(k + 2, format!("unit {} listed twice", r.unit)));
        }
    }
    let values: Vec<(f64, f64, f64)> = slot.into_iter().map(|s| s.expect("n rows, n distinct units")).collect();
    let l: Vec<f64> = values.iter().map(|v| v.0).collect();
    let continuous = l.iter().any(|&x| x != 0.0 && x != 1.0);
    NetworkData::new(l, continuous, values.iter().map(|v| v.1).collect(), values.iter().map(|v| v.2).collect())
}

pub fn load_data(path: impl AsRef<Path>) -> Result<NetworkData> {
    read_data(File::open(path)?)
}

pub fn write_data<W: Write>(data: &NetworkData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let v = data.view();
    for unit in 0..data.n_units() {
        w.serialize(DataRow { unit, l: v.l[unit], a: v.a[unit], y: v.y[unit] }).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a treatment vector: one `0` or `1` per line, or a `unit,A` table.
pub fn read_treatment<R: Read>(reader: R, n_units: usize) -> Result<Vec<f64>> {
    let mut a = vec![None; n_units];
    let mut plain = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') || text.eq_ignore_ascii_case("unit,a") {
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        let value = |s: &str| match s {
            "0" => Ok(0.0),
            "1" => Ok(1.0),
            _ => Err(parse_error(k + 1, format!("treatment must be 0 or 1, got '{s}'"))),
        };
        match fields.as_slice() {
            [v] => plain.push(value(v)?),
            [u, v] => {
                let unit: usize = u.parse().map_err(|_| parse_error(k + 1, format!("bad unit id '{u}'")))?;
                if unit >= n_units {
                    return Err(parse_error(k + 1, format!("unit {unit} outside 0..{n_units}")));
                }
                a[unit] = Some(value(v)?);
            }
            _ => return Err(parse_error(k + 1, "expected 'A' or 'unit,A'")),
        }
    }
    if !plain.is_empty() {
        if a.iter().any(Option::is_some) || plain.len() != n_units {
            return Err(parse_error(0, format!("expected {n_units} treatment values, found {}", plain.len())));
        }
        return Ok(plain);
    }
    a.into_iter()
        .enumerate()
        .map(|(u, v)| v.ok_or_else(|| parse_error(0, format!("no treatment given for unit {u}"))))
        .collect()
}
