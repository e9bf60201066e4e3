//! Prompt templates and construction for the three levels.
//!
//! Templates carry an explicit output-format instruction so responses stay
//! machine-parseable; all three are config-overridable. Placeholders:
//! `[task]`, `[objects]`, `[rationales]`.

use serde::{Deserialize, Serialize};

use super::{MlcotError, ObjectExample, PromptLevel, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplates {
    pub object: String,
    pub rationale: String,
    pub summary: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            object: "What common objects in daily life can be used as a vehicle for the human \
                     to [task]? Please list the twenty most suitable objects. Answer with a \
                     single comma-separated list of object names only."
                .to_string(),
            rationale: "The candidate objects to [task] are: [objects]. For each object, let's \
                        think about the rationales for why they afford the task from the \
                        perspective of visual features. Answer with one line per object, \
                        formatted as 'object: rationale; rationale'."
                .to_string(),
            summary: "Summary corresponding visual features of the object for each rationale. \
                      Wrap each object's visual features in braces, in the same order as the \
                      rationales, joining the features with 'and'.\n[rationales]"
                .to_string(),
        }
    }
}

/// Prior-level results a prompt may depend on.
#[derive(Debug, Clone, Copy)]
pub enum PromptContext<'a> {
    None,
    Objects(&'a [String]),
    Rationales(&'a [ObjectExample]),
}

/// Render the prompt for one level. Deterministic for fixed inputs.
pub fn build_prompt(
    level: PromptLevel,
    task: &TaskSpec,
    context: PromptContext<'_>,
    templates: &PromptTemplates,
) -> Result<String, MlcotError> {
    match level {
        PromptLevel::ObjectLevel => Ok(templates.object.replace("[task]", &task.phrase)),
        PromptLevel::RationaleLevel => {
            let objects = match context {
                PromptContext::Objects(objects) if !objects.is_empty() => objects,
                _ => {
                    return Err(MlcotError::MissingContext {
                        level: level.name(),
                        what: "non-empty object list from the object level".to_string(),
                    })
                }
            };
            Ok(templates
                .rationale
                .replace("[task]", &task.phrase)
                .replace("[objects]", &format_object_list(objects)))
        }
        PromptLevel::SummaryLevel => {
            let examples = match context {
                PromptContext::Rationales(examples) if !examples.is_empty() => examples,
                _ => {
                    return Err(MlcotError::MissingContext {
                        level: level.name(),
                        what: "per-object rationales from the rationale level".to_string(),
                    })
                }
            };
            Ok(templates
                .summary
                .replace("[rationales]", &format_rationales(examples)))
        }
    }
}

/// Serialize an object list the way `parse_objects` reads it back.
pub fn format_object_list(objects: &[String]) -> String {
    objects.join(", ")
}

/// Serialize per-object rationales the way `parse_rationales` reads them
/// back: one `name: rationale; rationale` line per object.
pub fn format_rationales(examples: &[ObjectExample]) -> String {
    examples
        .iter()
        .map(|example| format!("{}: {}", example.name, example.rationales.join("; ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Serialize affordance summaries the way `parse_summaries` reads them back:
/// one brace group per object, phrases joined with "and".
pub fn format_summaries(summaries: &[Vec<String>]) -> String {
    summaries
        .iter()
        .map(|phrases| format!("{{{}}}", phrases.join(" and ")))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> TaskSpec {
        TaskSpec::new(9, "open parcel")
    }

    #[test]
    fn object_prompt_substitutes_task_once() {
        let text = build_prompt(
            PromptLevel::ObjectLevel,
            &task(),
            PromptContext::None,
            &PromptTemplates::default(),
        )
        .unwrap();
        assert!(text.contains("to open parcel? Please list the twenty most suitable objects."));
        assert_eq!(text.matches("open parcel").count(), 1);
    }

    #[test]
    fn rationale_prompt_requires_objects() {
        let err = build_prompt(
            PromptLevel::RationaleLevel,
            &task(),
            PromptContext::Objects(&[]),
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("rationale"));
    }

    #[test]
    fn summary_prompt_embeds_rationales_verbatim() {
        let examples = vec![ObjectExample {
            name: "knife".to_string(),
            rationales: vec![
                "they have a sharp blade which can easily cut through paper".to_string(),
                "they have a handle which provides a good grip".to_string(),
            ],
        }];
        let text = build_prompt(
            PromptLevel::SummaryLevel,
            &task(),
            PromptContext::Rationales(&examples),
            &PromptTemplates::default(),
        )
        .unwrap();
        for rationale in &examples[0].rationales {
            assert!(text.contains(rationale.as_str()));
        }
    }

    #[test]
    fn summary_prompt_requires_rationales() {
        let err = build_prompt(
            PromptLevel::SummaryLevel,
            &task(),
            PromptContext::None,
            &PromptTemplates::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MlcotError::MissingContext { level: "summary", .. }));
    }
}
