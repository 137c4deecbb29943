//! Cohort cache: a named-tensor container plus a JSON sidecar of ids and masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, Demographics, Sex, SubjectRecord, N_VISITS, VISIT_MONTHS};
use crate::container::{Container, NamedTensor, TensorData};
use crate::error::{Error, Result};

pub const COHORT_CACHE_FILE: &str = "cohort.tensors";
pub const COHORT_MANIFEST_FILE: &str = "cohort.json";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    variables: Vec<String>,
    visit_months: Vec<u32>,
    subjects: Vec<SidecarSubject>,
}

#[derive(Serialize, Deserialize)]
struct SidecarSubject {
    id: String,
    /// One `0`/`1` string per variable, one character per visit slot.
    observed: Vec<String>,
}

/// Writes `cohort.tensors` and `cohort.json` into `dir`.
pub fn save_cohort_cache(cohort: &Cohort, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (n, d) = (cohort.len(), cohort.n_variables());
    let mut values = Vec::with_capacity(n * d * N_VISITS);
    let mut demo = Vec::with_capacity(n * 4);
    let mut subjects = Vec::with_capacity(n);
    for s in &cohort.subjects {
        for v in 0..d {
            values.extend((0..N_VISITS).map(|t| s.value(v, t).unwrap_or(f64::NAN)));
        }
        let g = &s.demographics;
        demo.extend([
            g.age_years,
            if g.sex == Sex::Female { 0.0 } else { 1.0 },
            g.apoe4.map_or(f64::NAN, f64::from),
            g.education_years,
        ]);
        subjects.push(SidecarSubject {
            id: s.subject_id.clone(),
            observed: (0..d)
                .map(|v| s.mask(v).iter().map(|&m| if m { '1' } else { '0' }).collect())
                .collect(),
        });
    }
    let mut c = Container::default();
    c.metadata.insert("kind".into(), "cohort".into());
    c.push(NamedTensor {
        name: "values".into(),
        shape: vec![n, d, N_VISITS],
        data: TensorData::F64(values),
    });
    c.push(NamedTensor {
        name: "demographics".into(),
        shape: vec![n, 4],
        data: TensorData::F64(demo),
    });
    c.save(dir.join(COHORT_CACHE_FILE))?;
    let sidecar = Sidecar {
        variables: cohort.variable_names.clone(),
        visit_months: VISIT_MONTHS.to_vec(),
        subjects,
    };
    let path = dir.join(COHORT_MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_cohort_cache(dir: impl AsRef<Path>) -> Result<Cohort> {
    let dir = dir.as_ref();
    let c = Container::load(dir.join(COHORT_CACHE_FILE))?;
    let path = dir.join(COHORT_MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.visit_months != VISIT_MONTHS {
        return Err(Error::Format(format!(
            "unexpected visit grid {:?}",
            sidecar.visit_months
        )));
    }
    let (n, d) = (sidecar.subjects.len(), sidecar.variables.len());
    let fetch = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
        let t = c
            .get(name)
            .ok_or_else(|| Error::Format(format!("cohort cache lacks tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::Validation {
                tensor: name.into(),
                msg: format!("expected shape {shape:?}, found {:?}", t.shape),
            });
        }
        Ok(t.data.to_f64())
    };
    let values = fetch("values", vec![n, d, N_VISITS])?;
    let demo = fetch("demographics", vec![n, 4])?;
    let mut subjects = Vec::with_capacity(n);
    for (i, s) in sidecar.subjects.into_iter().enumerate() {
        if s.observed.len() != d {
            return Err(Error::Data {
                row: i,
                msg: format!("subject `{}` mask has wrong arity", s.id),
            });
        }
        let mut rows = Vec::with_capacity(d);
        let mut masks = Vec::with_capacity(d);
        for (v, bits) in s.observed.iter().enumerate() {
            let chars: Vec<char> = bits.chars().collect();
            if chars.len() != N_VISITS || chars.iter().any(|c| *c != '0' && *c != '1') {
                return Err(Error::Data {
                    row: i,
                    msg: format!("bad mask string `{bits}`"),
                });
            }
            let base = (i * d + v) * N_VISITS;
            let mut row = [0.0; N_VISITS];
            row.copy_from_slice(&values[base..base + N_VISITS]);
            let mut mask = [false; N_VISITS];
            for (m, c) in mask.iter_mut().zip(&chars) {
                *m = *c == '1';
            }
            rows.push(row);
            masks.push(mask);
        }
        let g = &demo[i * 4..i * 4 + 4];
        let sex = if g[1] == 0.0 { Sex::Female } else { Sex::Male };
        let apoe4 = (!g[2].is_nan()).then_some(g[2] as u8);
        let demographics = Demographics::new(g[0], sex, apoe4, g[3])?;
        subjects.push(SubjectRecord::new(s.id, demographics, rows, masks)?);
    }
    Cohort::new(subjects, sidecar.variables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_cohort, SynthProfile};

    #[test]
    fn round_trip_is_exact() {
        let c = synth_cohort(30, 4, &SynthProfile::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_cohort_cache(&c, dir.path()).unwrap();
        let back = load_cohort_cache(dir.path()).unwrap();
        assert_eq!(back.ids(), c.ids());
        for (a, b) in c.subjects.iter().zip(&back.subjects) {
            assert_eq!(a.demographics, b.demographics);
            for v in 0..4 {
                assert_eq!(a.mask(v), b.mask(v));
                for t in 0..N_VISITS {
                    assert_eq!(a.value(v, t).map(f64::to_bits), b.value(v, t).map(f64::to_bits));
                }
            }
        }
        let first = std::fs::read(dir.path().join(COHORT_CACHE_FILE)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_cohort_cache(&back, dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join(COHORT_CACHE_FILE)).unwrap());
    }
}
