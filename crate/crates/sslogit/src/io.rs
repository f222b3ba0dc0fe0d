//! Long-format panel CSV: one row per household and period.
//!
//! Required columns are the household id, the period (0..=T) and the two
//! outcomes. Optional columns are a group label, an integer window key and
//! covariates named `x1_*` / `x2_*` (the same number for each spouse).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use sslogit_core::{CovariatePath, Household, Panel, PairSequence};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read panel: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("{x1} `x1_*` columns but {x2} `x2_*` columns")]
    CovariateMismatch { x1: usize, x2: usize },
    #[error("row {row}, column `{column}`: {reason} (value {value:?})")]
    Field {
        row: u64,
        column: String,
        value: String,
        reason: &'static str,
    },
    #[error("no household passed validation; {0} rejected")]
    Empty(usize),
}

/// Column names of a panel file.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub id: String,
    pub period: String,
    pub y1: String,
    pub y2: String,
    /// Group label column; when `None` every household is in group "".
    pub group: Option<String>,
    pub window_key: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            id: "household_id".into(),
            period: "period".into(),
            y1: "y1".into(),
            y2: "y2".into(),
            group: Some("group".into()),
            window_key: "window_key".into(),
        }
    }
}

/// A household left out of the panel and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub household: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub panel: Panel,
    pub rejected: Vec<Rejection>,
    pub rows: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "loaded {} households (T = {}) from {} rows; rejected {}",
            self.panel.len(),
            self.panel.periods().unwrap_or(0),
            self.rows,
            self.rejected.len()
        )?;
        for r in &self.rejected {
            writeln!(f, "  rejected household {}: {}", r.household, r.reason)?;
        }
        Ok(())
    }
}

struct Row {
    line: u64,
    period: usize,
    y: (u8, u8),
    x1: Vec<f64>,
    x2: Vec<f64>,
    group: String,
    window_key: Option<i64>,
}

fn field_error(line: u64, column: &str, value: &str, reason: &'static str) -> LoadError {
    LoadError::Field {
        row: line,
        column: column.to_string(),
        value: value.to_string(),
        reason,
    }
}

/// Sort key that orders integer ids numerically and the rest as text.
fn id_key(id: &str) -> (u8, i128, String) {
    match id.parse::<i128>() {
        Ok(v) => (0, v, String::new()),
        Err(_) => (1, 0, id.to_string()),
    }
}

pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<LoadReport, LoadError> {
    read_panel(std::fs::File::open(path)?, schema)
}

/// Parses a panel. Field-level problems abort the load; households with
/// gaps, duplicate periods, inconsistent labels or a `T` different from the
/// most common one are rejected and listed.
pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<LoadReport, LoadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| LoadError::MissingColumn(name.to_string()));
    let (c_id, c_period, c_y1, c_y2) = (need(&schema.id)?, need(&schema.period)?, need(&schema.y1)?, need(&schema.y2)?);
    let c_group = schema.group.as_deref().and_then(col);
    let c_key = col(&schema.window_key);
    let c_x1: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("x1_")).collect();
    let c_x2: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with("x2_")).collect();
    if c_x1.len() != c_x2.len() {
        return Err(LoadError::CovariateMismatch {
            x1: c_x1.len(),
            x2: c_x2.len(),
        });
    }

    let mut by_id: BTreeMap<(u8, i128, String), (String, Vec<Row>)> = BTreeMap::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        rows += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| rec.get(c).unwrap_or("");
        let bit = |c: usize| match get(c) {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            v => Err(field_error(line, &headers[c], v, "outcome must be 0 or 1")),
        };
        let id = get(c_id);
        if id.is_empty() {
            return Err(field_error(line, &headers[c_id], id, "empty household id"));
        }
        let period: usize = get(c_period)
            .parse()
            .map_err(|_| field_error(line, &headers[c_period], get(c_period), "period must be a non-negative integer"))?;
        let y = (bit(c_y1)?, bit(c_y2)?);
        let num = |c: usize| -> Result<f64, LoadError> {
            let v = get(c);
            if v.is_empty() {
                return Err(field_error(line, &headers[c], v, "missing covariate value"));
            }
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(field_error(line, &headers[c], v, "covariate must be a finite number")),
            }
        };
        let x1 = c_x1.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?;
        let x2 = c_x2.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?;
        let window_key = match c_key.map(get) {
            None | Some("") => None,
            Some(v) => Some(
                v.parse::<i64>()
                    .map_err(|_| field_error(line, &schema.window_key, v, "window key must be an integer"))?,
            ),
        };
        let group = c_group.map(get).unwrap_or("").to_string();
        by_id
            .entry(id_key(id))
            .or_insert_with(|| (id.to_string(), Vec::new()))
            .1
            .push(Row {
                line,
                period,
                y,
                x1,
                x2,
                group,
                window_key,
            });
    }

    let mut rejected = Vec::new();
    let mut complete = Vec::new();
    for (_, (id, mut hrows)) in by_id {
        hrows.sort_by_key(|r| (r.period, r.line));
        match assemble(&id, &hrows) {
            Ok(h) => complete.push(h),
            Err(reason) => rejected.push(Rejection { household: id, reason }),
        }
    }

    // the panel length is the most common T (ties go to the longer panel)
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for h in &complete {
        *freq.entry(h.seq.periods()).or_default() += 1;
    }
    let Some(t) = freq.iter().max_by_key(|(t, n)| (**n, **t)).map(|(t, _)| *t) else {
        return Err(LoadError::Empty(rejected.len()));
    };
    let mut households = Vec::new();
    for h in complete {
        if h.seq.periods() == t {
            households.push(h);
        } else {
            rejected.push(Rejection {
                household: h.id.clone(),
                reason: format!("has T = {} but the panel has T = {t}", h.seq.periods()),
            });
        }
    }
    rejected.sort_by_key(|r| id_key(&r.household));
    Ok(LoadReport {
        panel: Panel { households },
        rejected,
        rows,
    })
}

fn assemble(id: &str, rows: &[Row]) -> Result<Household, String> {
    for (expect, r) in rows.iter().enumerate() {
        if r.period != expect {
            return Err(if r.period < expect {
                format!("period {} appears twice (line {})", r.period, r.line)
            } else {
                format!("missing period {expect}")
            });
        }
    }
    if rows.len() < 2 {
        return Err("needs periods 0 and at least 1".into());
    }
    let first = &rows[0];
    if rows.iter().any(|r| r.group != first.group) {
        return Err("group label changes within the household".into());
    }
    if rows.iter().any(|r| r.window_key != first.window_key) {
        return Err("window key changes within the household".into());
    }
    let seq = PairSequence::new(rows.iter().map(|r| r.y.0).collect(), rows.iter().map(|r| r.y.1).collect())
        .map_err(|e| e.to_string())?;
    let x = CovariatePath::new(
        rows[1..].iter().map(|r| r.x1.clone()).collect(),
        rows[1..].iter().map(|r| r.x2.clone()).collect(),
    )
    .map_err(|e| e.to_string())?;
    Ok(Household {
        id: id.to_string(),
        seq,
        x,
        x_initial: (first.x1.clone(), first.x2.clone()),
        group: first.group.clone(),
        window_key: first.window_key,
    })
}

/// Writes the panel in the format `read_panel` accepts. The group and
/// window-key columns appear only when some household uses them. Numbers
/// use the shortest representation that parses back exactly.
pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<(), LoadError> {
    let k = panel.covariate_dim();
    let with_group = panel.households.iter().any(|h| !h.group.is_empty());
    let with_key = panel.households.iter().any(|h| h.window_key.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["household_id", "period", "y1", "y2"].map(String::from).to_vec();
    if with_group {
        header.push("group".into());
    }
    if with_key {
        header.push("window_key".into());
    }
    header.extend((1..=k).map(|j| format!("x1_{j}")));
    header.extend((1..=k).map(|j| format!("x2_{j}")));
    w.write_record(&header)?;
    for h in &panel.households {
        for s in 0..=h.seq.periods() {
            let (a, b) = h.seq.at(s);
            let mut rec = vec![h.id.clone(), s.to_string(), a.to_string(), b.to_string()];
            if with_group {
                rec.push(h.group.clone());
            }
            if with_key {
                rec.push(h.window_key.map(|v| v.to_string()).unwrap_or_default());
            }
            let (x1, x2) = if s == 0 { (&h.x_initial.0[..], &h.x_initial.1[..]) } else { h.x.row(s) };
            rec.extend(x1.iter().chain(x2).map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_panel(panel: &Panel, path: &Path) -> Result<(), LoadError> {
    write_panel(panel, std::fs::File::create(path)?)
}
