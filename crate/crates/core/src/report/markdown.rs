use std::fmt::Write;

use super::AuditReport;
use crate::session::WorkflowStage;

const SECTIONS: [(WorkflowStage, &str); 3] = [
    (WorkflowStage::ExpectationQuestions, "Expectations"),
    (
        WorkflowStage::SingleModelReflection,
        "Single-Model Findings",
    ),
    (WorkflowStage::CrossModelReflection, "Cross-Model Findings"),
];

fn quote(text: &str) -> String {
    text.lines()
        .map(|l| format!("> {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders a report as Markdown with one image link per stored image,
/// pointing at `{image_base}/{image_id}`.
pub fn render_markdown(report: &AuditReport, image_base: &str) -> String {
    let base = image_base.trim_end_matches('/');
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report `{}`\n", report.report_id);
    let _ = writeln!(out, "- Session: `{}`", report.session_id);
    let _ = writeln!(out, "- Models: {}", report.model_ids.join(", "));
    let _ = writeln!(out, "- Created: {}", report.created_at.to_rfc3339());
    let _ = writeln!(out, "- Schema version: {}\n", report.schema_version);

    let _ = writeln!(out, "## Prompt\n\n{}\n", quote(&report.prompt));

    for (stage, title) in SECTIONS {
        let _ = writeln!(out, "## {title}\n");
        let entries: Vec<_> = report.qa.iter().filter(|e| e.stage == stage).collect();
        if entries.is_empty() {
            out.push_str("_No answers recorded._\n\n");
        }
        for e in entries {
            let _ = writeln!(out, "**{}**\n\n{}\n", e.question, quote(&e.answer));
        }
    }

    out.push_str("## Images\n\n");
    if report.image_refs.is_empty() {
        out.push_str("_No images stored._\n");
    }
    for (model, ids) in &report.image_refs {
        let _ = writeln!(out, "### {model}\n");
        for (i, id) in ids.iter().enumerate() {
            let _ = writeln!(out, "![{model} #{i}]({base}/{id})");
        }
        out.push('\n');
    }
    out
}
