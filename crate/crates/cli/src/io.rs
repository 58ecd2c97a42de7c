//! CSV datasets and all-or-nothing output writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use msgp::dataset::Dataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Version tag written into every JSON output.
pub const FORMAT_VERSION: u32 = 1;

/// Rows of a dataset or target file; `y` may be missing in target files.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub coords: Vec<Vec<f64>>,
    pub y: Vec<Option<f64>>,
    pub true_component: Option<Vec<usize>>,
}

impl Table {
    pub fn dims(&self) -> usize {
        self.coords.first().map_or(0, |c| c.len())
    }

    /// All outcomes, or `None` if any is missing.
    pub fn outcomes(&self) -> Option<Vec<f64>> {
        self.y.iter().copied().collect()
    }

    pub fn into_dataset(self, path: &Path) -> CliResult<Dataset> {
        let y = self.y.iter().enumerate().map(|(i, v)| {
            v.ok_or_else(|| CliError::Data(format!("{}: line {}: missing y", path.display(), i + 2)))
        });
        let y = y.collect::<CliResult<Vec<_>>>()?;
        let mut data = Dataset::new(self.coords, y)?;
        data.true_component = self.true_component;
        Ok(data)
    }
}

impl From<&Dataset> for Table {
    fn from(d: &Dataset) -> Self {
        Table {
            coords: d.coords.clone(),
            y: d.y.iter().map(|&v| Some(v)).collect(),
            true_component: d.true_component.clone(),
        }
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_table(file, &path.display().to_string())
}

pub fn parse_table<R: std::io::Read>(input: R, name: &str) -> CliResult<Table> {
    let err = |line: u64, msg: String| CliError::Data(format!("{name}: line {line}: {msg}"));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let d = names.iter().take_while(|h| h.starts_with('x')).count();
    let expected: Vec<String> = (1..=d).map(|l| format!("x{l}")).collect();
    if d == 0 || names[..d] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(err(1, format!("header must start with x1..xd, got {names:?}")));
    }
    let has_y = names.get(d) == Some(&"y");
    let has_truth = names.get(d + usize::from(has_y)) == Some(&"true_component");
    let width = d + usize::from(has_y) + usize::from(has_truth);
    if names.len() != width {
        return Err(err(1, format!("unexpected columns {:?}", &names[width.min(names.len())..])));
    }
    let mut table = Table {
        coords: Vec::new(),
        y: Vec::new(),
        true_component: has_truth.then(Vec::new),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> CliResult<f64> {
            let field = &record[i];
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("column `{}`: `{field}` is not a finite number", names[i])))
        };
        table.coords.push((0..d).map(num).collect::<CliResult<_>>()?);
        table.y.push(if has_y && !record[d].is_empty() { Some(num(d)?) } else { None });
        if let Some(t) = table.true_component.as_mut() {
            let field = &record[width - 1];
            t.push(
                field
                    .parse::<usize>()
                    .map_err(|_| err(line, format!("true_component `{field}` is not a label")))?,
            );
        }
    }
    if table.coords.is_empty() {
        return Err(CliError::Data(format!("{name}: no data rows")));
    }
    Ok(table)
}

pub fn dataset_csv(data: &Dataset) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = data.dims();
    let mut header: Vec<String> = (1..=d).map(|l| format!("x{l}")).collect();
    header.push("y".into());
    if data.true_component.is_some() {
        header.push("true_component".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.coords[i].iter().map(|v| v.to_string()).collect();
        row.push(data.y[i].to_string());
        if let Some(t) = &data.true_component {
            row.push(t[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// CSV with a header and numeric rows.
pub fn numeric_csv(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

pub fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Output files collected in memory and written together: every file goes to
/// a temporary name first and is renamed only once all of them are written.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> CliResult<()> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let result = (|| -> std::io::Result<()> {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                name.push(".partial");
                let tmp = path.with_file_name(name);
                staged.push((tmp.clone(), path.clone()));
                let mut f = fs::File::create(&tmp)?;
                f.write_all(bytes)?;
                f.sync_all()?;
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(CliError::Data(format!("writing outputs failed: {e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_targets_with_missing_outcomes() {
        let t = parse_table("x1,x2,y\n1,2,3.5\n4,5,\n".as_bytes(), "t.csv").unwrap();
        assert_eq!(t.coords, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(t.y, vec![Some(3.5), None]);
        assert!(t.outcomes().is_none());
    }

    #[test]
    fn bad_row_reports_its_line() {
        let e = parse_table("x1,y\n1,2\n2,abc\n".as_bytes(), "d.csv").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_table("x1,y\n1,2\n2\n".as_bytes(), "d.csv").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn header_is_checked() {
        assert!(parse_table("a,y\n1,2\n".as_bytes(), "d.csv").is_err());
        assert!(parse_table("x1,y,extra\n1,2,3\n".as_bytes(), "d.csv").is_err());
    }

    #[test]
    fn round_trip() {
        let mut d = Dataset::new(vec![vec![1.0], vec![2.5]], vec![0.1, -3.0]).unwrap();
        d.true_component = Some(vec![0, 1]);
        let bytes = dataset_csv(&d).unwrap();
        let t = parse_table(bytes.as_slice(), "x").unwrap();
        assert_eq!(t.into_dataset(Path::new("x")).unwrap(), d);
    }
}
