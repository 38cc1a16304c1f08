//! Visit report assembly and its paginated layout.

use serde::{Deserialize, Serialize};

use crate::directory::PatientProfile;
use crate::ids::{PatientId, ReportId, VisitId};
use crate::records::{AttachmentKind, ResolvedRecord, Visit};
use crate::time::{iso, to_iso};
use crate::Result;

pub const LINES_PER_PAGE: usize = 50;
pub const CHARS_PER_LINE: usize = 90;

pub(crate) const DEGRADED_RECOMMENDATIONS: &str =
    "AI recommendations are unavailable because the text generator did not respond. \
     Review the findings above manually.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKey {
    PatientInformation,
    VisitSummary,
    DiagnosisAndTreatment,
    VitalsAndLabResults,
    AiRecommendations,
}

impl SectionKey {
    pub const ORDER: [SectionKey; 5] = [
        SectionKey::PatientInformation,
        SectionKey::VisitSummary,
        SectionKey::DiagnosisAndTreatment,
        SectionKey::VitalsAndLabResults,
        SectionKey::AiRecommendations,
    ];

    pub fn title(self) -> &'static str {
        match self {
            SectionKey::PatientInformation => "Patient Information",
            SectionKey::VisitSummary => "Visit Summary",
            SectionKey::DiagnosisAndTreatment => "Diagnosis and Treatment",
            SectionKey::VitalsAndLabResults => "Vitals and Lab Results",
            SectionKey::AiRecommendations => "AI Recommendations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub key: SectionKey,
    pub title: String,
    pub body: String,
}

/// Lines of one section that land on a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageBlock {
    pub section: Option<SectionKey>,
    pub first_line: usize,
    pub line_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLayout {
    pub page: usize,
    pub blocks: Vec<PageBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLayout {
    pub page_size: String,
    pub lines_per_page: usize,
    pub chars_per_line: usize,
    pub pages: Vec<PageLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicalReport {
    pub report_id: ReportId,
    pub patient_id: PatientId,
    pub visit_id: VisitId,
    pub sections: Vec<ReportSection>,
    /// True when the recommendations section holds the fallback text.
    pub degraded: bool,
    pub prompt_version: u32,
    pub storage_ref: String,
    pub layout: ReportLayout,
    #[serde(with = "iso")]
    pub generated_at: i64,
}

impl MedicalReport {
    pub fn section(&self, key: SectionKey) -> Option<&ReportSection> {
        self.sections.iter().find(|s| s.key == key)
    }
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "none recorded"
    } else {
        s
    }
}

fn patient_information(p: &PatientProfile, r: &ResolvedRecord) -> String {
    let allergies: Vec<String> = r
        .allergies
        .iter()
        .map(|a| format!("{} ({:?}, {:?})", a.allergen, a.category, a.severity).to_lowercase())
        .collect();
    let meds: Vec<String> = r
        .medications
        .iter()
        .filter(|m| m.active)
        .map(|m| format!("{} {} {}", m.name, m.dosage, m.frequency))
        .collect();
    format!(
        "Name: {}\nPatient ID: {}\nNational ID: {}\nContact: {}\nAllergies: {}\nActive medications: {}",
        p.name,
        p.patient_id,
        p.national_id,
        or_none(&p.contact),
        or_none(&allergies.join(", ")),
        or_none(&meds.join(", ")),
    )
}

fn visit_summary(v: &Visit) -> String {
    format!(
        "Date: {}\nExamination type: {}\nDoctor: {}\nComplaints: {}\nSymptoms: {}",
        v.date,
        v.examination_type.label(),
        v.doctor_id,
        or_none(&v.complaints),
        or_none(&v.symptoms.join(", ")),
    )
}

fn diagnosis_and_treatment(v: &Visit) -> String {
    let mut out = format!("Diagnosis: {}\nTreatments:", v.diagnosis);
    if v.treatments.is_empty() {
        out.push_str(" none recorded");
    }
    for t in &v.treatments {
        if t.dosage.is_empty() {
            out.push_str(&format!("\n- {}", t.name));
        } else {
            out.push_str(&format!("\n- {} ({})", t.name, t.dosage));
        }
    }
    out.push_str(&format!("\nNotes: {}", or_none(&v.notes)));
    out
}

fn vitals_and_labs(v: &Visit) -> String {
    let mut out = String::from("Vitals:");
    if v.vitals.is_empty() {
        out.push_str(" no vitals recorded");
    }
    for (name, m) in &v.vitals {
        out.push_str(&format!("\n- {name}: {} {}", m.value, m.unit));
    }
    out.push_str("\nLab results:");
    let labs: Vec<_> = v
        .attachments
        .iter()
        .filter(|a| a.kind == AttachmentKind::LabResult)
        .collect();
    if labs.is_empty() {
        out.push_str(" no lab results attached");
    }
    for a in labs {
        out.push_str(&format!("\n- attachment {}", a.storage_ref));
    }
    out
}

fn recommendation_facts(p: &PatientProfile, r: &ResolvedRecord, v: &Visit) -> String {
    format!(
        "{}\n\n{}\n\n{}\n\n{}",
        patient_information(p, r),
        visit_summary(v),
        diagnosis_and_treatment(v),
        vitals_and_labs(v)
    )
}

/// Greedy word wrap. Words longer than the width are split.
pub(crate) fn wrap(line: &str, width: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for word in line.split_whitespace() {
        let mut word: Vec<char> = word.chars().collect();
        while word.len() > width {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(word.drain(..width).collect());
        }
        let word: String = word.into_iter().collect();
        let len = cur.chars().count();
        if len > 0 && len + 1 + word.chars().count() > width {
            out.push(std::mem::take(&mut cur));
        }
        if !cur.is_empty() {
            cur.push(' ');
        }
        cur.push_str(&word);
    }
    if !cur.is_empty() || out.is_empty() {
        out.push(cur);
    }
    out
}

/// Renders the report as plain text and tags each line with its section.
fn render(header: &[String], sections: &[ReportSection]) -> Vec<(Option<SectionKey>, String)> {
    let mut lines: Vec<(Option<SectionKey>, String)> = header.iter().map(|h| (None, h.clone())).collect();
    for (i, s) in sections.iter().enumerate() {
        lines.push((Some(s.key), String::new()));
        lines.push((Some(s.key), format!("{}. {}", i + 1, s.title)));
        for raw in s.body.lines() {
            for l in wrap(raw, CHARS_PER_LINE) {
                lines.push((Some(s.key), l));
            }
        }
    }
    lines
}

fn paginate(lines: &[(Option<SectionKey>, String)]) -> Vec<PageLayout> {
    lines
        .chunks(LINES_PER_PAGE)
        .enumerate()
        .map(|(i, chunk)| {
            let mut blocks: Vec<PageBlock> = Vec::new();
            for (j, (key, _)) in chunk.iter().enumerate() {
                match blocks.last_mut() {
                    Some(b) if b.section == *key => b.line_count += 1,
                    _ => blocks.push(PageBlock {
                        section: *key,
                        first_line: i * LINES_PER_PAGE + j,
                        line_count: 1,
                    }),
                }
            }
            PageLayout { page: i + 1, blocks }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build(
    report_id: ReportId,
    patient: &PatientProfile,
    record: &ResolvedRecord,
    visit: &Visit,
    now: i64,
    prompt_version: u32,
    recommend: impl FnOnce(String) -> Result<String>,
    store: impl FnOnce(String) -> Result<String>,
) -> Result<MedicalReport> {
    let (recommendations, degraded) = match recommend(recommendation_facts(patient, record, visit)) {
        Ok(text) => (text, false),
        Err(_) => (DEGRADED_RECOMMENDATIONS.to_owned(), true),
    };
    let bodies = [
        patient_information(patient, record),
        visit_summary(visit),
        diagnosis_and_treatment(visit),
        vitals_and_labs(visit),
        recommendations,
    ];
    let sections: Vec<ReportSection> = SectionKey::ORDER
        .into_iter()
        .zip(bodies)
        .map(|(key, body)| ReportSection {
            key,
            title: key.title().to_owned(),
            body,
        })
        .collect();
    let header = vec![
        "MEDICAL REPORT".to_owned(),
        format!(
            "Report {report_id} | Patient {} | Visit {}",
            patient.patient_id, visit.visit_id
        ),
        format!("Generated {}", to_iso(now)),
    ];
    let lines = render(&header, &sections);
    let document: String = lines.iter().map(|(_, l)| format!("{l}\n")).collect();
    let storage_ref = store(document)?;
    Ok(MedicalReport {
        report_id,
        patient_id: patient.patient_id.clone(),
        visit_id: visit.visit_id.clone(),
        sections,
        degraded,
        prompt_version,
        storage_ref,
        layout: ReportLayout {
            page_size: "A4".into(),
            lines_per_page: LINES_PER_PAGE,
            chars_per_line: CHARS_PER_LINE,
            pages: paginate(&lines),
        },
        generated_at: now,
    })
}
