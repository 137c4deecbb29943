//! ADNI-style wide CSV ingestion.
//!
//! One row per subject. A schema maps logical names to CSV columns, one
//! `logical=column` pair per line:
//!
//! ```text
//! id=RID
//! age=AGE
//! sex=PTGENDER
//! apoe4=APOE4
//! education=PTEDUCAT
//! CDRSB@0=CDRSB_bl
//! CDRSB@6=CDRSB_m06
//! ...
//! ```
//!
//! Variables appear in the order their first `VAR@month` key is listed.
//! Months outside the canonical grid are ignored.

use std::collections::HashMap;
use std::path::Path;

use super::{Cohort, Demographics, Sex, SubjectRecord, DEFAULT_VARIABLES, N_VISITS, VISIT_MONTHS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub id: String,
    pub age: String,
    pub sex: String,
    pub apoe4: String,
    pub education: String,
    /// `(variable, column per canonical visit)`.
    pub variables: Vec<(String, [String; N_VISITS])>,
}

fn month_suffix(month: u32) -> String {
    if month == 0 {
        "bl".to_string()
    } else {
        format!("m{month:02}")
    }
}

impl Default for Schema {
    /// ADNIMERGE-style columns: `CDRSB_bl`, `CDRSB_m06`, ...
    fn default() -> Self {
        Self::for_variables(&DEFAULT_VARIABLES)
    }
}

impl Schema {
    pub fn for_variables(vars: &[&str]) -> Self {
        Self {
            id: "RID".into(),
            age: "AGE".into(),
            sex: "PTGENDER".into(),
            apoe4: "APOE4".into(),
            education: "PTEDUCAT".into(),
            variables: vars
                .iter()
                .map(|v| {
                    let cols = VISIT_MONTHS.map(|m| format!("{v}_{}", month_suffix(m)));
                    (v.to_string(), cols)
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fixed: HashMap<&str, String> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        let mut cells: HashMap<String, [Option<String>; N_VISITS]> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, col) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected `logical=column`, got `{line}`", lineno + 1))
            })?;
            let (key, col) = (key.trim(), col.trim().to_string());
            if col.is_empty() {
                return Err(Error::Schema(format!("line {}: empty column for `{key}`", lineno + 1)));
            }
            match key {
                "id" | "age" | "sex" | "apoe4" | "education" => {
                    fixed.insert(key_static(key), col);
                }
                _ => {
                    let (var, month) = key
                        .split_once('@')
                        .ok_or_else(|| Error::Schema(format!("line {}: unknown logical name `{key}`", lineno + 1)))?;
                    let month: u32 = month
                        .trim()
                        .parse()
                        .map_err(|_| Error::Schema(format!("line {}: bad visit month in `{key}`", lineno + 1)))?;
                    let Some(slot) = super::visit_slot(month) else {
                        log::warn!("schema: month {month} is off the visit grid; `{key}` ignored");
                        continue;
                    };
                    let var = var.trim().to_string();
                    if !cells.contains_key(&var) {
                        order.push(var.clone());
                    }
                    cells.entry(var).or_default()[slot] = Some(col);
                }
            }
        }
        let take = |k: &str| {
            fixed
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("schema lacks `{k}`")))
        };
        let mut variables = Vec::with_capacity(order.len());
        for var in order {
            let slots = cells.remove(&var).expect("listed");
            let mut cols: [String; N_VISITS] = Default::default();
            for (slot, c) in slots.into_iter().enumerate() {
                cols[slot] = c.ok_or_else(|| Error::Schema(format!("schema lacks `{var}@{}`", VISIT_MONTHS[slot])))?;
            }
            variables.push((var, cols));
        }
        if variables.is_empty() {
            return Err(Error::Schema("schema maps no variables".into()));
        }
        Ok(Self {
            id: take("id")?,
            age: take("age")?,
            sex: take("sex")?,
            apoe4: take("apoe4")?,
            education: take("education")?,
            variables,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "id={}\nage={}\nsex={}\napoe4={}\neducation={}\n",
            self.id, self.age, self.sex, self.apoe4, self.education
        );
        for (var, cols) in &self.variables {
            for (m, c) in VISIT_MONTHS.iter().zip(cols) {
                out.push_str(&format!("{var}@{m}={c}\n"));
            }
        }
        out
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|(v, _)| v.clone()).collect()
    }
}

fn key_static(k: &str) -> &'static str {
    match k {
        "id" => "id",
        "age" => "age",
        "sex" => "sex",
        "apoe4" => "apoe4",
        _ => "education",
    }
}

/// Invalid, empty and non-finite cells all count as missing.
fn parse_score(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_sex(cell: &str) -> Option<Sex> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "female" | "f" => Some(Sex::Female),
        "male" | "m" => Some(Sex::Male),
        _ => None,
    }
}

fn parse_apoe4(cell: &str) -> Option<u8> {
    let v = parse_score(cell)?;
    (v == 0.0 || v == 1.0 || v == 2.0).then_some(v as u8)
}

/// Reads a wide CSV into a cohort. No imputation; no row filtering.
pub fn parse_adni_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_adni_reader(file, schema)
}

pub(crate) fn parse_adni_reader(reader: impl std::io::Read, schema: &Schema) -> Result<Cohort> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let (c_id, c_age, c_sex, c_apoe, c_edu) = (
        col(&schema.id)?,
        col(&schema.age)?,
        col(&schema.sex)?,
        col(&schema.apoe4)?,
        col(&schema.education)?,
    );
    let var_cols: Vec<[usize; N_VISITS]> = schema
        .variables
        .iter()
        .map(|(_, cols)| {
            let mut idx = [0; N_VISITS];
            for (slot, c) in cols.iter().enumerate() {
                idx[slot] = col(c)?;
            }
            Ok(idx)
        })
        .collect::<Result<_>>()?;

    let mut subjects = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec?;
        let data_err = |msg: String| Error::Data { row, msg };
        let id = rec[c_id].trim().to_string();
        if id.is_empty() {
            return Err(data_err("empty subject id".into()));
        }
        let age = parse_score(&rec[c_age]).ok_or_else(|| data_err(format!("bad age `{}`", &rec[c_age])))?;
        let sex = parse_sex(&rec[c_sex]).ok_or_else(|| data_err(format!("bad sex `{}`", &rec[c_sex])))?;
        let edu = parse_score(&rec[c_edu]).ok_or_else(|| data_err(format!("bad education `{}`", &rec[c_edu])))?;
        let demo = Demographics::new(age, sex, parse_apoe4(&rec[c_apoe]), edu).map_err(|e| data_err(e.to_string()))?;
        let mut values = Vec::with_capacity(var_cols.len());
        let mut observed = Vec::with_capacity(var_cols.len());
        for idx in &var_cols {
            let mut v = [f64::NAN; N_VISITS];
            let mut m = [false; N_VISITS];
            for slot in 0..N_VISITS {
                if let Some(x) = parse_score(&rec[idx[slot]]) {
                    v[slot] = x;
                    m[slot] = true;
                }
            }
            values.push(v);
            observed.push(m);
        }
        subjects.push(SubjectRecord::new(id, demo, values, observed).map_err(|e| data_err(e.to_string()))?);
    }
    Cohort::new(subjects, schema.variable_names()).map_err(|e| match e {
        Error::Data { row, msg } => Error::Data { row: row + 2, msg },
        other => other,
    })
}

/// Writes the cohort back in the same wide layout.
pub fn write_adni_csv(cohort: &Cohort, schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_adni_writer(cohort, schema, file)
}

pub(crate) fn write_adni_writer(cohort: &Cohort, schema: &Schema, out: impl std::io::Write) -> Result<()> {
    if schema.variable_names() != cohort.variable_names {
        return Err(Error::Schema("schema variables differ from the cohort's".into()));
    }
    let mut w = ::csv::Writer::from_writer(out);
    let mut header = vec![
        schema.id.clone(),
        schema.age.clone(),
        schema.sex.clone(),
        schema.apoe4.clone(),
        schema.education.clone(),
    ];
    for (_, cols) in &schema.variables {
        header.extend(cols.iter().cloned());
    }
    w.write_record(&header)?;
    for s in &cohort.subjects {
        let d = &s.demographics;
        let mut rec = vec![
            s.subject_id.clone(),
            d.age_years.to_string(),
            if d.sex == Sex::Female { "Female" } else { "Male" }.to_string(),
            d.apoe4.map(|a| a.to_string()).unwrap_or_default(),
            d.education_years.to_string(),
        ];
        for v in 0..cohort.n_variables() {
            for t in 0..N_VISITS {
                rec.push(s.value(v, t).map(|x| x.to_string()).unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
