//! Prompt rendering: single-step task prompts P1-P6 and multi-step sequences
//! with processing prompts, bound to data points.
//!
//! Multi-step records defer model round-trips to the consumer: steps after
//! the first keep a literal `{prior_answer}` marker to be filled by the
//! caller's evaluation loop.

use crate::error::{Error, Result};
use crate::features::DataPoint;
use crate::testbed::SeTask;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The versioned default catalog shipped with the tool.
pub const DEFAULT_CATALOG: &str = include_str!("../assets/templates.toml");

pub const PRIOR_ANSWER_SLOT: &str = "prior_answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Task,
    Processing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub slots: Vec<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TemplateCatalog {
    pub version: String,
    pub templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateCatalog {
    pub fn default_catalog() -> Self {
        Self::from_toml(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let catalog: TemplateCatalog = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("bad template catalog: {e}")))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every placeholder in a body must appear in the template's slot list.
    fn validate(&self) -> Result<()> {
        for (id, template) in &self.templates {
            for slot in placeholders(&template.body) {
                if !template.slots.iter().any(|s| s == &slot) {
                    return Err(Error::InvalidConfig(format!(
                        "template {id} uses placeholder {{{slot}}} not in its slots"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(id)
            .ok_or_else(|| Error::TemplateUnknown(id.to_string()))
    }
}

/// `{name}` placeholders in a body, in order of appearance.
fn placeholders(body: &str) -> Vec<String> {
    let mut found = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(close) = body[i + 1..].find('}') {
                let name = &body[i + 1..i + 1 + close];
                if !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c == '_')
                {
                    found.push(name.to_string());
                    i += close + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub point_id: String,
    pub task: SeTask,
    pub template_ids: Vec<String>,
    pub steps: Vec<String>,
    pub expected_output: String,
}

/// Slot values a data point provides. `docstring` is only available when the
/// docstring passed validity, `cut_code`/code-pairing slots only when the
/// point carries a mutation.
fn slot_value<'a>(point: &'a DataPoint, slot: &str) -> Option<&'a str> {
    match slot {
        "language" => Some(crate::SNIPPET_LANGUAGE),
        "code" => Some(&point.snippet.code),
        "signature" => Some(&point.snippet.signature),
        "cut_code" => point.mutation.as_ref().map(|m| m.prefix.as_str()),
        "docstring" => {
            if point.doc_valid {
                point.snippet.docstring.as_deref()
            } else {
                None
            }
        }
        "commit_message" => Some(&point.snippet.commit_message),
        _ => None,
    }
}

/// The gold text for a rendered template: the held-out suffix for completion
/// and change-description prompts, the full code for description-to-code, the
/// commit message for commit generation, the docstring for summarization.
fn expected_output(template_id: &str, point: &DataPoint) -> Result<String> {
    let missing = |slot: &str| Error::MissingSlot {
        template: template_id.to_string(),
        slot: slot.to_string(),
    };
    match template_id {
        "P1" | "P2" | "P4" => point
            .mutation
            .as_ref()
            .map(|m| m.expected_suffix.clone())
            .ok_or_else(|| missing("cut_code")),
        "P3" => Ok(point.snippet.code.clone()),
        "P5" => Ok(point.snippet.commit_message.clone()),
        // P6 renders on any point; the gold summary is empty when the point
        // has no docstring.
        "P6" => Ok(point.snippet.docstring.clone().unwrap_or_default()),
        _ => Ok(String::new()),
    }
}

fn render_body(
    template_id: &str,
    template: &PromptTemplate,
    point: &DataPoint,
    keep_prior_marker: bool,
) -> Result<String> {
    let mut text = template.body.clone();
    for slot in placeholders(&template.body) {
        if slot == PRIOR_ANSWER_SLOT && keep_prior_marker {
            continue;
        }
        let value = slot_value(point, &slot).ok_or_else(|| Error::MissingSlot {
            template: template_id.to_string(),
            slot: slot.clone(),
        })?;
        text = text.replace(&format!("{{{slot}}}"), value);
    }
    Ok(text)
}

/// Render a single-step prompt for a data point.
pub fn render(
    catalog: &TemplateCatalog,
    template_id: &str,
    point: &DataPoint,
    task: SeTask,
) -> Result<PromptRecord> {
    let template = catalog.get(template_id)?;
    // A lone processing prompt has no prior answer to process.
    let step = render_body(template_id, template, point, false)?;
    Ok(PromptRecord {
        point_id: point.point_id.clone(),
        task,
        template_ids: vec![template_id.to_string()],
        steps: vec![step],
        expected_output: expected_output(template_id, point)?,
    })
}

/// Compose a multi-step sequence: the first template must be a task prompt,
/// later ones processing prompts (or P6, which works in either position).
/// Steps after the first keep the literal `{prior_answer}` marker.
pub fn compose(
    catalog: &TemplateCatalog,
    sequence: &[&str],
    point: &DataPoint,
    task: SeTask,
) -> Result<PromptRecord> {
    if sequence.len() < 2 {
        return Err(Error::InvalidSequence {
            reason: format!("sequence {sequence:?} has fewer than 2 steps"),
        });
    }
    let first = catalog.get(sequence[0])?;
    if first.kind != TemplateKind::Task {
        return Err(Error::InvalidSequence {
            reason: format!("step 1 ({}) is not a task prompt", sequence[0]),
        });
    }
    for id in &sequence[1..] {
        let template = catalog.get(id)?;
        if template.kind != TemplateKind::Processing && *id != "P6" {
            return Err(Error::InvalidSequence {
                reason: format!("step template {id} is neither a processing prompt nor P6"),
            });
        }
    }

    let mut steps = Vec::with_capacity(sequence.len());
    for (i, id) in sequence.iter().enumerate() {
        let template = catalog.get(id)?;
        steps.push(render_body(id, template, point, i > 0)?);
    }
    Ok(PromptRecord {
        point_id: point.point_id.clone(),
        task,
        template_ids: sequence.iter().map(|s| s.to_string()).collect(),
        steps,
        expected_output: expected_output(sequence[0], point)?,
    })
}

/// Parse a CLI template spec: either `P1` or a `P1+P8` composition.
pub fn parse_template_spec(spec: &str) -> Vec<String> {
    spec.split('+').map(|s| s.trim().to_string()).collect()
}
