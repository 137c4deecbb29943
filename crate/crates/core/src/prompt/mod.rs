//! Clinical prompt rendering, tokenization and embedding.

mod vocab;

pub use self::vocab::Vocab;

use crate::data::{Demographics, Sex};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str = "\
Forecast {variable} at month {horizon_months}.
Patient: {age} year old {sex}, {apoe4}, {education} years of education.
Visits at months {visit_months}.
{variable} min {min}, max {max}, median {median}, trend {trend}.
";

pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 64;

const PLACEHOLDERS: [&str; 11] = [
    "age",
    "sex",
    "apoe4",
    "education",
    "variable",
    "horizon_months",
    "visit_months",
    "min",
    "max",
    "median",
    "trend",
];

/// Words the builtin vocabulary must cover.
pub(crate) const TEMPLATE_WORDS: [&str; 35] = [
    "Forecast",
    "at",
    "month",
    "Patient",
    "year",
    "old",
    "female",
    "male",
    "APOE4",
    "allele",
    "copies",
    "status",
    "unknown",
    "years",
    "of",
    "education",
    "Visits",
    "months",
    "min",
    "max",
    "median",
    "trend",
    "increasing",
    "decreasing",
    "stable",
    "none",
    "CDR-SB",
    "ADAS13",
    "FAQTOTAL",
    "AVDEL30",
    "CDRSB",
    "TOTAL13",
    "AVDEL30MIN",
    "forecast",
    "visit",
];

/// Human-facing name of a cohort variable.
pub fn display_name(variable: &str) -> &str {
    match variable {
        "CDRSB" => "CDR-SB",
        "TOTAL13" => "ADAS13",
        "AVDEL30MIN" => "AVDEL30",
        other => other,
    }
}

/// Values substituted into a template.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptFields {
    pub age: f64,
    pub sex: Sex,
    pub apoe4: Option<u8>,
    pub education: f64,
    pub variable: String,
    pub horizon_months: u32,
    pub visit_months: Vec<u32>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub median: Option<f64>,
    pub trend: &'static str,
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        None => "none".into(),
        Some(x) => {
            let s = format!("{x:.1}");
            if s == "-0.0" {
                "0.0".into()
            } else {
                s
            }
        }
    }
}

/// Least-squares slope sign of value against month.
fn trend(points: &[(f64, f64)]) -> &'static str {
    let n = points.len() as f64;
    if points.len() < 2 {
        return "stable";
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if !slope.is_finite() || slope.abs() < 1e-6 {
        "stable"
    } else if slope > 0.0 {
        "increasing"
    } else {
        "decreasing"
    }
}

impl PromptFields {
    /// Collects fields from the observed part of a window; masked cells are never read.
    pub fn new(
        demo: &Demographics,
        months: &[u32],
        series: &[f64],
        mask: &[bool],
        variable: &str,
        horizon_months: u32,
    ) -> Self {
        let points: Vec<(f64, f64)> = months
            .iter()
            .zip(series)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&t, &x), _)| (t as f64, x))
            .collect();
        let mut vals: Vec<f64> = points.iter().map(|p| p.1).collect();
        vals.sort_by(f64::total_cmp);
        let median = match vals.len() {
            0 => None,
            n if n % 2 == 1 => Some(vals[n / 2]),
            n => Some((vals[n / 2 - 1] + vals[n / 2]) / 2.0),
        };
        Self {
            age: demo.age_years,
            sex: demo.sex,
            apoe4: demo.apoe4,
            education: demo.education_years,
            variable: display_name(variable).to_string(),
            horizon_months,
            visit_months: points.iter().map(|p| p.0 as u32).collect(),
            min: vals.first().copied(),
            max: vals.last().copied(),
            median,
            trend: trend(&points),
        }
    }

    fn value(&self, key: &str) -> String {
        match key {
            "age" => format!("{:.1}", self.age),
            "sex" => self.sex.as_str().into(),
            "apoe4" => match self.apoe4 {
                Some(n) => format!("{n} APOE4 allele copies"),
                None => "APOE4 status unknown".into(),
            },
            "education" => format!("{:.0}", self.education),
            "variable" => self.variable.clone(),
            "horizon_months" => self.horizon_months.to_string(),
            "visit_months" => {
                let v: Vec<String> = self.visit_months.iter().map(u32::to_string).collect();
                v.join(", ")
            }
            "min" => fmt_num(self.min),
            "max" => fmt_num(self.max),
            "median" => fmt_num(self.median),
            "trend" => self.trend.into(),
            _ => unreachable!("placeholders are validated at parse time"),
        }
    }
}

/// Line-oriented template with `{placeholder}` fields.
///
/// The line holding `{horizon_months}` is the task instruction and is never
/// dropped; the line holding `{visit_months}` is the timeline and is the
/// first to shrink.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    lines: Vec<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<String> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        for line in &lines {
            let mut rest = line.as_str();
            while let Some(open) = rest.find('{') {
                let close = rest[open..]
                    .find('}')
                    .ok_or_else(|| Error::Argument(format!("unclosed placeholder in `{line}`")))?;
                let key = &rest[open + 1..open + close];
                if !PLACEHOLDERS.contains(&key) {
                    return Err(Error::Argument(format!("unknown placeholder `{{{key}}}`")));
                }
                rest = &rest[open + close + 1..];
            }
        }
        if !lines.iter().any(|l| l.contains("{horizon_months}")) {
            return Err(Error::Argument(
                "template needs a task line with {horizon_months}".into(),
            ));
        }
        Ok(Self { lines })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn render_line(line: &str, f: &PromptFields) -> String {
        let mut out = line.to_string();
        for key in PLACEHOLDERS {
            let pat = format!("{{{key}}}");
            if out.contains(&pat) {
                out = out.replace(&pat, &f.value(key));
            }
        }
        out
    }

    pub fn render(&self, f: &PromptFields) -> String {
        let lines: Vec<String> = self.lines.iter().map(|l| Self::render_line(l, f)).collect();
        lines.join("\n")
    }
}

/// Renders the default template without any length cap.
pub fn render_prompt(
    demo: &Demographics,
    months: &[u32],
    series: &[f64],
    mask: &[bool],
    variable: &str,
    horizon_months: u32,
) -> String {
    PromptTemplate::default().render(&PromptFields::new(demo, months, series, mask, variable, horizon_months))
}

/// Template, vocabulary and length cap: text in, token ids out.
#[derive(Clone, Debug)]
pub struct PromptBuilder {
    pub template: PromptTemplate,
    pub vocab: Vocab,
    pub max_tokens: usize,
}

impl PromptBuilder {
    pub fn new(template: PromptTemplate, vocab: Vocab, max_tokens: usize) -> Self {
        Self {
            template,
            vocab,
            max_tokens,
        }
    }

    /// Renders and tokenizes, shrinking the timeline first (earliest months),
    /// then dropping other non-task lines from the end.
    pub fn build(&self, fields: &PromptFields) -> Result<(String, Vec<u32>)> {
        let mut f = fields.clone();
        let mut keep: Vec<bool> = vec![true; self.template.lines.len()];
        loop {
            let lines: Vec<(usize, String)> = self
                .template
                .lines
                .iter()
                .enumerate()
                .filter(|(i, l)| keep[*i] && !(l.contains("{visit_months}") && f.visit_months.is_empty()))
                .map(|(i, l)| (i, PromptTemplate::render_line(l, &f)))
                .collect();
            let text = lines.iter().map(|(_, l)| l.as_str()).collect::<Vec<_>>().join("\n");
            let ids = self.vocab.tokenize(&text);
            if ids.len() <= self.max_tokens {
                return Ok((text, ids));
            }
            let has_timeline = lines
                .iter()
                .any(|(i, _)| self.template.lines[*i].contains("{visit_months}"));
            if has_timeline && !f.visit_months.is_empty() {
                f.visit_months.remove(0);
                continue;
            }
            let droppable = lines
                .iter()
                .rev()
                .find(|(i, _)| !self.template.lines[*i].contains("{horizon_months}"));
            match droppable {
                Some((i, _)) => keep[*i] = false,
                None => {
                    return Err(Error::Capacity {
                        len: ids.len(),
                        max: self.max_tokens,
                    })
                }
            }
        }
    }

    pub fn tokens(&self, fields: &PromptFields) -> Result<Vec<u32>> {
        Ok(self.build(fields)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demo(apoe4: Option<u8>) -> Demographics {
        Demographics::new(73.5, Sex::Female, apoe4, 16.0).unwrap()
    }

    const MONTHS: [u32; 3] = [0, 6, 12];

    #[test]
    fn worked_example() {
        let text = render_prompt(
            &demo(Some(1)),
            &MONTHS,
            &[0.5, f64::NAN, 1.0],
            &[true, false, true],
            "CDRSB",
            12,
        );
        for needle in ["73", "female", "1 APOE4", "CDR-SB", "12", "months 0, 12.", "increasing"] {
            assert!(text.contains(needle), "missing `{needle}` in\n{text}");
        }
    }

    #[test]
    fn constant_series_is_stable_and_missing_apoe_is_unknown() {
        let text = render_prompt(&demo(None), &MONTHS, &[2.0; 3], &[true; 3], "TOTAL13", 18);
        assert!(text.contains("trend stable"));
        assert!(text.contains("APOE4 status unknown"));
        assert!(text.contains("ADAS13"));
    }

    #[test]
    fn rendering_is_pure() {
        let a = render_prompt(&demo(Some(2)), &MONTHS, &[1.0, 2.0, 1.5], &[true; 3], "CDRSB", 12);
        let b = render_prompt(&demo(Some(2)), &MONTHS, &[1.0, 2.0, 1.5], &[true; 3], "CDRSB", 12);
        assert_eq!(a, b);
        assert!(a.contains("median 1.5"));
    }

    #[test]
    fn bad_templates_rejected() {
        assert!(PromptTemplate::parse("Forecast {horizon_months} {nope}").is_err());
        assert!(PromptTemplate::parse("no task here {age}").is_err());
        assert!(PromptTemplate::parse("Forecast {horizon_months").is_err());
    }

    #[test]
    fn truncation_order() {
        let vocab = Vocab::builtin(512).unwrap();
        let fields = PromptFields::new(
            &demo(Some(0)),
            &[0, 6, 12, 18, 24, 36],
            &[1.0, 1.2, 1.3, 1.8, 2.0, 2.5],
            &[true; 6],
            "CDRSB",
            48,
        );
        let full = PromptBuilder::new(PromptTemplate::default(), vocab.clone(), 1000)
            .build(&fields)
            .unwrap();
        let n = full.1.len();
        let (text, ids) = PromptBuilder::new(PromptTemplate::default(), vocab.clone(), n - 2)
            .build(&fields)
            .unwrap();
        assert!(ids.len() <= n - 2);
        assert!(text.contains("Visits at months 6, 12, 18"));
        let (text, ids) = PromptBuilder::new(PromptTemplate::default(), vocab.clone(), 10)
            .build(&fields)
            .unwrap();
        assert!(ids.len() <= 10);
        assert_eq!(text, "Forecast CDR-SB at month 48.");
        assert!(matches!(
            PromptBuilder::new(PromptTemplate::default(), vocab, 3).build(&fields),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn default_prompts_use_known_tokens() {
        let vocab = Vocab::builtin(512).unwrap();
        let text = render_prompt(&demo(None), &MONTHS, &[-0.25, 3.0, 199.9], &[true; 3], "AVDEL30MIN", 12);
        assert!(!vocab.tokenize(&text).contains(&vocab.unk_id()), "{text}");
    }

    proptest! {
        #[test]
        fn unobserved_values_never_leak(mask in prop::collection::vec(any::<bool>(), 6), k in 0usize..6) {
            let mut mask = mask;
            mask[k] = true;
            let series: Vec<f64> = (0..6).map(|i| if mask[i] { i as f64 } else { 987654.0 + i as f64 }).collect();
            let text = render_prompt(&demo(Some(1)), &[0, 6, 12, 18, 24, 36], &series, &mask, "CDRSB", 48);
            prop_assert!(!text.contains("98765"));
        }
    }
}
