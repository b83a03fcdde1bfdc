//! CSV ingestion: delimiter detection, `# key=value` metadata lines, and
//! binding columns to the model data types.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use fbst_core::mcmc::ParameterDraws;
use fbst_core::models::{ModelError, RegressionData, TwoGroupData};
use thiserror::Error;

/// Name of the optional chain-index column in draw files.
pub const CHAIN_COLUMN: &str = "chain";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("the input has no header row")]
    NoHeader,
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    Unparseable { row: usize, column: String, value: String },
    #[error("row {row}, column {column:?}: missing value")]
    MissingValue { row: usize, column: String },
    #[error("group {0:?} has no observations")]
    EmptyGroup(String),
    #[error("expected exactly 2 groups in column {column:?}, found {found:?}")]
    GroupCount { column: String, found: Vec<String> },
    #[error("bad formula {0:?}: expected `response ~ term + term + ...`")]
    Formula(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid draws: {0}")]
    Draws(String),
}

type Result<T> = std::result::Result<T, IngestError>;

/// A parsed CSV: header, string cells, source line of each row, and the
/// `# key=value` metadata found in comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<usize>,
    pub metadata: BTreeMap<String, String>,
}

/// `;` when the header has more semicolons than commas, `,` otherwise.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let mut in_quotes = false;
    let (mut commas, mut semis) = (0, 0);
    for c in header.chars() {
        match c {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => commas += 1,
            ';' if !in_quotes => semis += 1,
            _ => {}
        }
    }
    if semis > commas {
        b';'
    } else {
        b','
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_table(text: &str) -> Result<Table> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut metadata = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.trim_start().strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(IngestError::NoHeader);
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        lines.push(record.position().map_or(0, |p| p.line() as usize));
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(Table {
        headers,
        rows,
        lines,
        metadata,
    })
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    fn cell(&self, row: usize, col: usize) -> Result<&str> {
        let cell = self.rows[row][col].as_str();
        if is_missing(cell) {
            return Err(IngestError::MissingValue {
                row: self.lines[row],
                column: self.headers[col].clone(),
            });
        }
        Ok(cell)
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = self.cell(row, col)?;
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(IngestError::Unparseable {
                row: self.lines[row],
                column: self.headers[col].clone(),
                value: cell.to_string(),
            }),
        }
    }

    /// Every value of a column as a number.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column_index(name)?;
        (0..self.rows.len()).map(|r| self.number(r, col)).collect()
    }

    /// A column is numeric when any of its present values parses as a
    /// number; such a column must then parse everywhere.
    fn looks_numeric(&self, col: usize) -> bool {
        self.rows
            .iter()
            .any(|r| !is_missing(&r[col]) && r[col].parse::<f64>().is_ok())
    }
}

/// Splits rows into two groups by `group_col`. Without `groups`, the two
/// distinct labels are taken in sorted order.
pub fn two_groups(
    table: &Table,
    group_col: &str,
    value_col: &str,
    groups: Option<&[String; 2]>,
) -> Result<TwoGroupData> {
    let g = table.column_index(group_col)?;
    let v = table.column_index(value_col)?;
    let mut by_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in 0..table.rows.len() {
        let label = table.cell(r, g)?.to_string();
        let value = table.number(r, v)?;
        by_label.entry(label).or_default().push(value);
    }
    let labels: [String; 2] = match groups {
        Some(gs) => gs.clone(),
        None => {
            let found: Vec<String> = by_label.keys().cloned().collect();
            if found.len() != 2 {
                return Err(IngestError::GroupCount {
                    column: group_col.to_string(),
                    found,
                });
            }
            [found[0].clone(), found[1].clone()]
        }
    };
    let take = |label: &str| -> Result<Vec<f64>> {
        match by_label.get(label) {
            Some(v) if !v.is_empty() => Ok(v.clone()),
            _ => Err(IngestError::EmptyGroup(label.to_string())),
        }
    };
    let (a, b) = (take(&labels[0])?, take(&labels[1])?);
    Ok(TwoGroupData::with_labels(a, b, labels)?)
}

/// `response ~ term + term + …`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub response: String,
    pub terms: Vec<String>,
}

impl std::str::FromStr for Formula {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || IngestError::Formula(s.to_string());
        let (lhs, rhs) = s.split_once('~').ok_or_else(bad)?;
        let response = lhs.trim().to_string();
        if response.is_empty() || response.contains(['+', '~', '*', ':']) {
            return Err(bad());
        }
        let terms: Vec<String> = rhs.split('+').map(|t| t.trim().to_string()).collect();
        let valid = |t: &String| !t.is_empty() && !t.contains(['~', '*', ':', '(', ')', '^']);
        if !terms.iter().all(valid) || terms.is_empty() {
            return Err(bad());
        }
        if rhs.trim() == "1" {
            return Ok(Self {
                response,
                terms: Vec::new(),
            });
        }
        Ok(Self { response, terms })
    }
}

/// Builds the regression design. Numeric terms enter as-is; categorical
/// terms are dummy-coded against their alphabetically first level, with
/// columns named `{term}{level}`.
pub fn regression(table: &Table, formula: &Formula) -> Result<RegressionData> {
    let y = table.numeric_column(&formula.response)?;
    let mut predictors = Vec::new();
    for term in &formula.terms {
        let col = table.column_index(term)?;
        if table.looks_numeric(col) {
            predictors.push((term.clone(), table.numeric_column(term)?));
            continue;
        }
        let cells: Vec<&str> = (0..table.rows.len())
            .map(|r| table.cell(r, col))
            .collect::<Result<_>>()?;
        let mut levels: Vec<&str> = cells.clone();
        levels.sort_unstable();
        levels.dedup();
        for level in levels.iter().skip(1) {
            let dummy = cells.iter().map(|c| if c == level { 1.0 } else { 0.0 }).collect();
            predictors.push((format!("{term}{level}"), dummy));
        }
    }
    Ok(RegressionData::from_columns(&formula.response, y, predictors)?)
}

/// Draws from a CSV with one column per parameter and an optional `chain`
/// column (chains are numbered from 0 or 1 and listed in order of first
/// appearance).
pub fn draws(table: &Table) -> Result<ParameterDraws> {
    let chain_col = table.headers.iter().position(|h| h == CHAIN_COLUMN);
    let params: Vec<usize> = (0..table.headers.len()).filter(|&c| Some(c) != chain_col).collect();
    if params.is_empty() {
        return Err(IngestError::Draws("no parameter columns".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut chains: Vec<Vec<Vec<f64>>> = Vec::new();
    for r in 0..table.rows.len() {
        let key = match chain_col {
            Some(c) => table.cell(r, c)?.to_string(),
            None => String::new(),
        };
        let idx = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                chains.push(Vec::new());
                order.len() - 1
            }
        };
        let row = params.iter().map(|&c| table.number(r, c)).collect::<Result<Vec<_>>>()?;
        chains[idx].push(row);
    }
    if chains.is_empty() {
        return Err(IngestError::Draws("no rows".into()));
    }
    let names = params.iter().map(|&c| table.headers[c].clone()).collect();
    let n = chains.len();
    ParameterDraws::new(names, chains, 0, vec![0.0; n]).map_err(|e| IngestError::Draws(e.to_string()))
}

/// CSV text (`group,value`) for two groups, preceded by metadata comments.
pub fn two_groups_csv(data: &TwoGroupData, metadata: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("group,value\n");
    for (label, group) in data.labels.iter().zip([&data.group1, &data.group2]) {
        for v in group {
            let _ = writeln!(out, "{label},{v:?}");
        }
    }
    out
}

/// CSV text of the draws: a `chain` column (from 1) then one column per
/// parameter.
pub fn draws_csv(draws: &ParameterDraws) -> String {
    let mut out = String::from(CHAIN_COLUMN);
    for n in draws.names() {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for c in 0..draws.n_chains() {
        for i in 0..draws.chain_len(c) {
            let _ = write!(out, "{}", c + 1);
            for v in draws.row(c, i) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimiter_detection() {
        assert_eq!(detect_delimiter("a,b,c\n1,2,3"), b',');
        assert_eq!(detect_delimiter("\"a\";\"b\";\"c\"\n1;2;3"), b';');
        assert_eq!(detect_delimiter("# note=1,2,3\n\"x;y\",b\n"), b',');
    }

    #[test]
    fn metadata_and_comments() {
        let t = parse_table("# true_effect=-0.32\n# seed=7\ngroup,value\na,1\nb,2\n").unwrap();
        assert_eq!(t.metadata["true_effect"], "-0.32");
        assert_eq!(t.metadata["seed"], "7");
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.lines, vec![4, 5]);
    }

    #[test]
    fn groups_sorted_by_default() {
        let t = parse_table("rotation,score\ncw,1\nccw,2\ncw,3\nccw,5\n").unwrap();
        let d = two_groups(&t, "rotation", "score", None).unwrap();
        assert_eq!(d.labels, ["ccw".to_string(), "cw".to_string()]);
        assert_eq!(d.group1, vec![2.0, 5.0]);
        let swapped = two_groups(&t, "rotation", "score", Some(&["cw".into(), "ccw".into()])).unwrap();
        assert_eq!(swapped.group1, vec![1.0, 3.0]);
    }

    #[test]
    fn group_errors() {
        let t = parse_table("g,v\na,1\nb,2\nc,3\n").unwrap();
        assert!(matches!(
            two_groups(&t, "g", "v", None),
            Err(IngestError::GroupCount { .. })
        ));
        assert!(matches!(
            two_groups(&t, "g", "w", None),
            Err(IngestError::MissingColumn(_))
        ));
        let t = parse_table("g,v\na,1\na,2\n").unwrap();
        assert!(matches!(
            two_groups(&t, "g", "v", Some(&["a".into(), "z".into()])),
            Err(IngestError::EmptyGroup(_))
        ));
        let t = parse_table("g,v\na,1\na,\nb,2\nb,3\n").unwrap();
        assert!(matches!(
            two_groups(&t, "g", "v", None),
            Err(IngestError::MissingValue { row: 3, .. })
        ));
    }

    #[test]
    fn formula_parsing() {
        let f: Formula = "G1 ~ sex + age".parse().unwrap();
        assert_eq!(f.response, "G1");
        assert_eq!(f.terms, vec!["sex", "age"]);
        assert!("G1 sex".parse::<Formula>().is_err());
        assert!("G1 ~ sex * age".parse::<Formula>().is_err());
        assert!("G1 ~ log(age)".parse::<Formula>().is_err());
        assert!(" ~ age".parse::<Formula>().is_err());
        assert!("y ~ a + ".parse::<Formula>().is_err());
    }

    #[test]
    fn dummy_coding_and_numeric_errors() {
        let t = parse_table("y;sex;age;romantic\n1;F;15;no\n2;M;16;yes\n4;F;17;yes\n3;M;15;no\n5;F;18;no\n").unwrap();
        let d = regression(&t, &"y ~ sex + age + romantic".parse().unwrap()).unwrap();
        assert_eq!(d.labels(), ["(Intercept)", "sexM", "age", "romanticyes"]);
        assert_eq!(d.design().column(1).as_slice(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
        let bad = parse_table("y,age\n1,15\n2,sixteen\n3,17\n").unwrap();
        match regression(&bad, &"y ~ age".parse().unwrap()) {
            Err(IngestError::Unparseable { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "age", "sixteen"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn draws_round_trip() {
        let d = ParameterDraws::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![vec![0.1, 1.0], vec![0.2, 2.0]],
                vec![vec![0.3, 3.0], vec![0.1 + 0.2, -4.5e-300]],
            ],
            0,
            vec![0.0, 0.0],
        )
        .unwrap();
        let back = draws(&parse_table(&draws_csv(&d)).unwrap()).unwrap();
        assert_eq!(back.names(), d.names());
        assert_eq!(back.n_chains(), 2);
        for c in 0..2 {
            for i in 0..2 {
                assert_eq!(back.row(c, i), d.row(c, i));
            }
        }
    }
}
