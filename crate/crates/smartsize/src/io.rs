//! Trial data in CSV form.
//!
//! Header: `x1_1,...,x1_p1,a1,x2_1,...,x2_p2,a2,y`, one trajectory per row,
//! treatments coded `-1`/`1`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use smartsize_core::data::{Dataset, FeatureSpec, Term, Trajectory};

use crate::error::{CliError, Result};

/// Covariate dimensions declared by a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub p1: usize,
    pub p2: usize,
}

impl Layout {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (1..=self.p1).map(|i| format!("x1_{i}")).collect();
        h.push("a1".into());
        h.extend((1..=self.p2).map(|i| format!("x2_{i}")));
        h.push("a2".into());
        h.push("y".into());
        h
    }

    pub fn from_header(header: &[&str]) -> std::result::Result<Self, String> {
        let p1 = header.iter().take_while(|c| c.starts_with("x1_")).count();
        let p2 = header.iter().skip(p1 + 1).take_while(|c| c.starts_with("x2_")).count();
        let layout = Layout { p1, p2 };
        let expected = layout.header();
        if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(format!(
                "header must be x1_1,...,x1_p1,a1,x2_1,...,x2_p2,a2,y; got '{}'",
                header.join(",")
            ));
        }
        Ok(layout)
    }
}

/// Linear summaries in every covariate, with `a1` among the stage-2 terms.
pub fn linear_features(layout: Layout) -> FeatureSpec {
    let mut stage1 = vec![Term::Intercept];
    stage1.extend((1..=layout.p1).map(|i| format!("x1_{i}").parse::<Term>().expect("valid term")));
    let mut stage2 = stage1.clone();
    stage2.push("a1".parse().expect("valid term"));
    stage2.extend((1..=layout.p2).map(|i| format!("x2_{i}").parse::<Term>().expect("valid term")));
    FeatureSpec {
        h10: stage1.clone(),
        h11: stage1.clone(),
        h12: stage1.clone(),
        h13: stage1,
        h20: stage2.clone(),
        h21: stage2,
    }
}

fn parse_treatment(s: &str) -> Option<i8> {
    match s.parse::<f64>() {
        Ok(v) if v == 1.0 => Some(1),
        Ok(v) if v == -1.0 => Some(-1),
        _ => None,
    }
}

/// Rows of a trial file before a feature spec is attached.
pub fn read_trajectories(reader: impl Read, path: &Path) -> Result<(Layout, Vec<Trajectory>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let data_err = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let header = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let layout = Layout::from_header(&names).map_err(data_err)?;
    let width = names.len();
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| data_err(format!("row {row}: {e}")))?;
        if rec.len() != width {
            return Err(data_err(format!("row {row}: expected {width} fields, found {}", rec.len())));
        }
        let cell_err = |col: usize, message: String| CliError::Row {
            path: path.to_path_buf(),
            row,
            column: names[col].to_string(),
            message,
        };
        let num = |col: usize| -> Result<f64> {
            let s = &rec[col];
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(cell_err(col, format!("'{s}' is not finite"))),
                Err(_) => Err(cell_err(col, format!("'{s}' is not a number"))),
            }
        };
        let treat = |col: usize| -> Result<i8> {
            parse_treatment(&rec[col]).ok_or_else(|| cell_err(col, format!("treatment '{}' must be -1 or 1", &rec[col])))
        };
        let x1 = (0..layout.p1).map(num).collect::<Result<Vec<_>>>()?;
        let a1 = treat(layout.p1)?;
        let x2 = (layout.p1 + 1..layout.p1 + 1 + layout.p2).map(num).collect::<Result<Vec<_>>>()?;
        let a2 = treat(width - 2)?;
        let y = num(width - 1)?;
        out.push(Trajectory { x1, a1, x2, a2, y });
    }
    if out.is_empty() {
        return Err(data_err("no trajectories".into()));
    }
    Ok((layout, out))
}

/// Parses a trial and checks both arms appear at each stage.
pub fn parse_dataset(reader: impl Read, path: &Path, features: Option<&FeatureSpec>) -> Result<Dataset> {
    let (layout, rows) = read_trajectories(reader, path)?;
    let features = features.cloned().unwrap_or_else(|| linear_features(layout));
    let data = Dataset::new(rows, layout.p1, layout.p2, features).map_err(|e| CliError::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    data.check_arms().map_err(|e| CliError::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(data)
}

/// Loads a trial file; without a feature spec the summaries are linear.
pub fn load_dataset(path: &Path, features: Option<&FeatureSpec>) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(f, path, features)
}

pub fn write_dataset(data: &Dataset, w: impl Write) -> csv::Result<()> {
    let layout = Layout {
        p1: data.p1(),
        p2: data.p2(),
    };
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(layout.header())?;
    let mut rec = Vec::with_capacity(layout.p1 + layout.p2 + 3);
    for t in data.trajectories() {
        rec.clear();
        rec.extend(t.x1.iter().map(f64::to_string));
        rec.push(t.a1.to_string());
        rec.extend(t.x2.iter().map(f64::to_string));
        rec.push(t.a2.to_string());
        rec.push(t.y.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(data, f).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

/// The `y` column of a CSV file.
pub fn load_outcomes(path: &Path) -> Result<Vec<f64>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let data_err = |message: String| CliError::Data {
        path: path.to_path_buf(),
        message,
    };
    let header = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let col = header
        .iter()
        .position(|c| c == "y")
        .ok_or_else(|| data_err("no 'y' column".into()))?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(format!("row {}: {e}", k + 1)))?;
        let s = rec.get(col).unwrap_or("");
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => {
                return Err(CliError::Row {
                    path: path.to_path_buf(),
                    row: k + 1,
                    column: "y".into(),
                    message: format!("'{s}' is not a finite number"),
                })
            }
        }
    }
    Ok(out)
}
