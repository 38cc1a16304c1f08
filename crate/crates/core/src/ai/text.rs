//! Plain-text rendering of a resolved record for the summarizer.

use std::fmt::Write;

use crate::records::*;

const NONE: &str = "- none recorded";

fn section(out: &mut String, title: &str, lines: Vec<String>) {
    let _ = writeln!(out, "## {title}");
    if lines.is_empty() {
        let _ = writeln!(out, "{NONE}");
    }
    for l in lines {
        let _ = writeln!(out, "- {l}");
    }
}

fn opt_date(d: Option<chrono::NaiveDate>) -> String {
    d.map_or_else(|| "unknown".to_owned(), |d| d.to_string())
}

fn label<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Deterministic, section-ordered text. Visits are listed newest first.
pub fn serialize_record_to_text(r: &ResolvedRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Medical history for patient {}", r.record.patient_id);

    section(
        &mut out,
        "Conditions",
        r.conditions
            .iter()
            .map(|c| {
                let mut l = format!(
                    "{} ({}), onset {}",
                    c.name,
                    if c.chronic { "chronic" } else { "non-chronic" },
                    opt_date(c.onset_date)
                );
                if !c.notes.is_empty() {
                    let _ = write!(l, "; notes: {}", c.notes);
                }
                l
            })
            .collect(),
    );
    section(
        &mut out,
        "Medications",
        r.medications
            .iter()
            .map(|m| {
                let status = if m.active {
                    format!("active since {}", opt_date(m.start_date))
                } else {
                    format!("stopped {}", opt_date(m.end_date))
                };
                format!("{} {}, {}, {status}", m.name, m.dosage, m.frequency)
            })
            .collect(),
    );
    section(
        &mut out,
        "Allergies",
        r.allergies
            .iter()
            .map(|a| format!("{} ({}), {}", a.allergen, label(a.category), label(a.severity)))
            .collect(),
    );
    section(
        &mut out,
        "Surgeries",
        r.surgeries
            .iter()
            .map(|s| format!("{} on {}: {}", s.name, s.date, s.outcome))
            .collect(),
    );
    section(
        &mut out,
        "Immunizations",
        r.immunizations
            .iter()
            .map(|i| format!("{} on {}", i.vaccine, i.date))
            .collect(),
    );
    section(
        &mut out,
        "Lifestyle",
        r.record
            .lifestyle
            .iter()
            .map(|l| {
                format!(
                    "smoking: {}; alcohol: {}; exercise: {}",
                    label(l.smoking),
                    label(l.alcohol),
                    l.exercise
                )
            })
            .collect(),
    );

    let mut visits: Vec<&Visit> = r.visits.iter().collect();
    visits.sort_by(|a, b| b.date.cmp(&a.date).then_with(|| b.visit_id.cmp(&a.visit_id)));
    section(
        &mut out,
        "Visits",
        visits
            .into_iter()
            .map(|v| {
                let mut l = format!(
                    "{} {} by {}: diagnosis {}",
                    v.date,
                    v.examination_type.label(),
                    v.doctor_id,
                    v.diagnosis
                );
                if !v.complaints.is_empty() {
                    let _ = write!(l, "; complaints {}", v.complaints);
                }
                if !v.symptoms.is_empty() {
                    let _ = write!(l, "; symptoms {}", v.symptoms.join(", "));
                }
                if !v.treatments.is_empty() {
                    let t: Vec<String> = v
                        .treatments
                        .iter()
                        .map(|t| {
                            if t.dosage.is_empty() {
                                t.name.clone()
                            } else {
                                format!("{} ({})", t.name, t.dosage)
                            }
                        })
                        .collect();
                    let _ = write!(l, "; treatments {}", t.join(", "));
                }
                l
            })
            .collect(),
    );
    out
}
