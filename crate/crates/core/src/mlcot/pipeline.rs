//! The three-level pipeline: objects → rationales → summaries → drafts.

use super::cache::TranscriptCache;
use super::parse::{parse_objects, parse_rationales, parse_summaries};
use super::prompt::{build_prompt, PromptContext, PromptTemplates};
use super::transport::LlmTransport;
use super::{
    prompt_digest, KnowledgeUnitDraft, MlcotError, ObjectExample, PromptLevel, TaskSpec,
    TransportRecord,
};

#[derive(Debug, Clone)]
pub struct MlcotOptions {
    pub templates: PromptTemplates,
    /// Parse-failure retries per level; each retry appends a reformat
    /// instruction so the cached exchange stays distinct.
    pub retries: usize,
}

impl Default for MlcotOptions {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::default(),
            retries: 2,
        }
    }
}

fn reformat_instruction(level: PromptLevel) -> &'static str {
    match level {
        PromptLevel::ObjectLevel => {
            "Reformat your answer as a single comma-separated list of object names only."
        }
        PromptLevel::RationaleLevel => {
            "Reformat your answer as one line per object: 'object: rationale; rationale'."
        }
        PromptLevel::SummaryLevel => {
            "Reformat your answer as one brace group per object in order, like \
             {feature and feature}, {feature}."
        }
    }
}

/// One exchange: cache lookup first, then the transport; every live response
/// is persisted before use.
fn exchange(
    transport: &dyn LlmTransport,
    cache: &TranscriptCache,
    prompt: &str,
) -> Result<String, MlcotError> {
    let digest = prompt_digest(transport.id(), prompt);
    if let Some(record) = cache.lookup(&digest) {
        return Ok(record.response_text);
    }
    let response = transport.complete(prompt)?;
    cache.insert(TransportRecord::new(transport.id(), prompt, &response))?;
    Ok(response)
}

/// Exchange plus parse with bounded reformat retries.
fn exchange_parsed<T>(
    level: PromptLevel,
    base_prompt: &str,
    transport: &dyn LlmTransport,
    cache: &TranscriptCache,
    options: &MlcotOptions,
    parse: impl Fn(&str) -> Result<T, MlcotError>,
) -> Result<T, MlcotError> {
    let mut prompt = base_prompt.to_string();
    let mut last_error = String::new();
    for _attempt in 0..=options.retries {
        let response = exchange(transport, cache, &prompt)?;
        match parse(&response) {
            Ok(value) => return Ok(value),
            Err(err) => {
                last_error = err.to_string();
                prompt.push('\n');
                prompt.push_str(reformat_instruction(level));
            }
        }
    }
    Err(MlcotError::RetriesExhausted {
        level: level.name(),
        attempts: options.retries + 1,
        last: last_error,
    })
}

/// Run the full pipeline for one task, returning one draft per brainstormed
/// object example. Replaying against a warm cache is a pure function of the
/// task.
pub fn run_mlcot(
    task: &TaskSpec,
    transport: &dyn LlmTransport,
    cache: &TranscriptCache,
    options: &MlcotOptions,
) -> Result<Vec<KnowledgeUnitDraft>, MlcotError> {
    // Level 1: brainstorm object examples.
    let object_prompt = build_prompt(
        PromptLevel::ObjectLevel,
        task,
        PromptContext::None,
        &options.templates,
    )?;
    let objects = exchange_parsed(
        PromptLevel::ObjectLevel,
        &object_prompt,
        transport,
        cache,
        options,
        |r| parse_objects(r),
    )?;

    // Level 2: rationales for why each object affords the task. Every
    // brainstormed object must be covered.
    let rationale_prompt = build_prompt(
        PromptLevel::RationaleLevel,
        task,
        PromptContext::Objects(&objects),
        &options.templates,
    )?;
    let rationales = exchange_parsed(
        PromptLevel::RationaleLevel,
        &rationale_prompt,
        transport,
        cache,
        options,
        |r| {
            let examples = parse_rationales(r)?;
            for name in &objects {
                if !examples.iter().any(|e| &e.name == name) {
                    return Err(MlcotError::Parse {
                        level: PromptLevel::RationaleLevel.name(),
                        reason: format!("no rationale line for object {name:?}"),
                        raw: r.to_string(),
                    });
                }
            }
            Ok(examples)
        },
    )?;
    let examples: Vec<ObjectExample> = objects
        .iter()
        .map(|name| {
            rationales
                .iter()
                .find(|e| &e.name == name)
                .cloned()
                .expect("coverage checked above")
        })
        .collect();

    // Level 3: summarize visual affordances, one brace group per object.
    let summary_prompt = build_prompt(
        PromptLevel::SummaryLevel,
        task,
        PromptContext::Rationales(&examples),
        &options.templates,
    )?;
    let summaries = exchange_parsed(
        PromptLevel::SummaryLevel,
        &summary_prompt,
        transport,
        cache,
        options,
        |r| {
            let groups = parse_summaries(r)?;
            if groups.len() != examples.len() {
                return Err(MlcotError::Parse {
                    level: PromptLevel::SummaryLevel.name(),
                    reason: format!(
                        "expected {} brace groups (one per object), found {}",
                        examples.len(),
                        groups.len()
                    ),
                    raw: r.to_string(),
                });
            }
            Ok(groups)
        },
    )?;

    Ok(examples
        .into_iter()
        .zip(summaries)
        .map(|(example, phrases)| KnowledgeUnitDraft {
            attribute_phrases: phrases,
            source_object: example.name,
            source_rationales: example.rationales,
        })
        .collect())
}
