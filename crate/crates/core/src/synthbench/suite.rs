//! Suite generation: tasks, scripted transcripts, and scene splits.
//!
//! The transcripts are generated with the same prompt builder and response
//! serializers the parser round-trips against, so the real prompting
//! pipeline consumes them unmodified through the recorded transport.

use crate::config::SynthConfig;
use crate::knowledge::{embed_unit, filter_outliers, KnowledgeBase, KnowledgeError, TextEmbedder};
use crate::mlcot::{
    build_prompt, format_object_list, format_rationales, format_summaries, run_mlcot,
    KnowledgeUnitDraft, MlcotError, MlcotOptions, ObjectExample, PromptContext, PromptLevel,
    PromptTemplates, RecordedTransport, TaskSpec, TranscriptCache, TransportRecord,
};

use super::catalog::{category, decoy_objects, task_suite, SynthTask};
use super::scene::{generate_scene, Split, SynthScene};
use super::SynthError;

pub const SCRIPTED_BACKEND_ID: &str = "synth-scripted";

#[derive(Debug, Clone)]
pub struct TaskTranscripts {
    pub task_id: u32,
    pub records: Vec<TransportRecord>,
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub config: SynthConfig,
    pub tasks: Vec<SynthTask>,
    pub transcripts: Vec<TaskTranscripts>,
    pub train: Vec<SynthScene>,
    pub test: Vec<SynthScene>,
}

/// Scripted responses for one task: object examples drawn from the listed
/// categories (one per predicate subset by default) plus decoys, rationales
/// naming the attributes, and affordance summaries that embed exactly the
/// predicate subsets.
fn scripted_transcript(
    task: &SynthTask,
    config: &SynthConfig,
) -> Result<Vec<TransportRecord>, MlcotError> {
    let templates = PromptTemplates::default();
    let decoys = decoy_objects();

    let mut objects: Vec<String> = Vec::new();
    let mut examples: Vec<ObjectExample> = Vec::new();
    let mut summaries: Vec<Vec<String>> = Vec::new();
    for (subset, names) in task.subsets.iter().zip(&task.listed_per_subset) {
        for name in names.iter().take(config.objects_per_subset) {
            let cat = category(name);
            objects.push(cat.name.clone());
            examples.push(ObjectExample {
                name: cat.name.clone(),
                rationales: subset
                    .iter()
                    .map(|a| format!("it has a {a} that helps to {}", task.spec.phrase))
                    .collect(),
            });
            summaries.push(subset.clone());
        }
    }
    for i in 0..config.decoy_units {
        let (name, phrase) = &decoys[i % decoys.len()];
        objects.push(name.clone());
        examples.push(ObjectExample {
            name: name.clone(),
            rationales: vec![format!("it has {phrase}")],
        });
        summaries.push(vec![phrase.clone()]);
    }

    let object_prompt = build_prompt(
        PromptLevel::ObjectLevel,
        &task.spec,
        PromptContext::None,
        &templates,
    )?;
    let rationale_prompt = build_prompt(
        PromptLevel::RationaleLevel,
        &task.spec,
        PromptContext::Objects(&objects),
        &templates,
    )?;
    let summary_prompt = build_prompt(
        PromptLevel::SummaryLevel,
        &task.spec,
        PromptContext::Rationales(&examples),
        &templates,
    )?;
    Ok(vec![
        TransportRecord::new(
            SCRIPTED_BACKEND_ID,
            &object_prompt,
            &format_object_list(&objects),
        ),
        TransportRecord::new(
            SCRIPTED_BACKEND_ID,
            &rationale_prompt,
            &format_rationales(&examples),
        ),
        TransportRecord::new(
            SCRIPTED_BACKEND_ID,
            &summary_prompt,
            &format_summaries(&summaries),
        ),
    ])
}

/// Generate the full suite: tasks, scripted transcripts, and both scene
/// splits. Deterministic per seed.
pub fn generate_suite(config: &SynthConfig) -> Result<Suite, SynthError> {
    let all_tasks = task_suite();
    if config.tasks > all_tasks.len() {
        return Err(SynthError::TooManyTasks {
            requested: config.tasks,
            available: all_tasks.len(),
        });
    }
    let tasks: Vec<SynthTask> = all_tasks.into_iter().take(config.tasks).collect();
    let vocab = super::catalog::attribute_vocabulary();
    for task in &tasks {
        for subset in &task.subsets {
            for attr in subset {
                if !vocab.contains(attr) {
                    return Err(SynthError::UnknownAttribute(attr.clone()));
                }
            }
        }
    }

    let mut transcripts = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let records = scripted_transcript(task, config)
            .expect("scripted prompts always have their contexts");
        transcripts.push(TaskTranscripts {
            task_id: task.spec.id,
            records,
        });
    }

    let mut train = Vec::with_capacity(tasks.len() * config.train_scenes);
    let mut test = Vec::with_capacity(tasks.len() * config.test_scenes);
    for task in &tasks {
        for index in 0..config.train_scenes {
            train.push(generate_scene(task, config, Split::Train, index, config.seed));
        }
        for index in 0..config.test_scenes {
            test.push(generate_scene(task, config, Split::Test, index, config.seed));
        }
    }

    Ok(Suite {
        config: config.clone(),
        tasks,
        transcripts,
        train,
        test,
    })
}

impl Suite {
    pub fn task(&self, id: u32) -> Option<&SynthTask> {
        self.tasks.iter().find(|t| t.spec.id == id)
    }

    pub fn transcript(&self, id: u32) -> Option<&TaskTranscripts> {
        self.transcripts.iter().find(|t| t.task_id == id)
    }

    /// Run the real prompting pipeline over the scripted transcripts for one
    /// task and return the parsed drafts.
    pub fn run_mlcot_for(
        &self,
        task: &TaskSpec,
        options: &MlcotOptions,
    ) -> Result<Vec<KnowledgeUnitDraft>, MlcotError> {
        let transcript = self
            .transcript(task.id)
            .ok_or_else(|| MlcotError::Transport {
                backend: SCRIPTED_BACKEND_ID.to_string(),
                reason: format!("no transcript for task {}", task.id),
            })?;
        let transport = RecordedTransport::from_records(transcript.records.iter().cloned());
        let cache = TranscriptCache::in_memory();
        run_mlcot(task, &transport, &cache, options)
    }

    /// Build one task's knowledge base through the full mlcot → embed →
    /// filter path.
    pub fn build_kb(
        &self,
        task: &TaskSpec,
        embedder: &dyn TextEmbedder,
        threshold: f64,
    ) -> Result<KnowledgeBase, KnowledgeError> {
        let drafts = self
            .run_mlcot_for(task, &MlcotOptions::default())
            .map_err(|e| KnowledgeError::UnknownEmbedder(format!("mlcot failed: {e}")))?;
        let units = drafts
            .iter()
            .map(|d| embed_unit(d, embedder))
            .collect::<Result<Vec<_>, _>>()?;
        filter_outliers(task.clone(), units, threshold, embedder.id().to_string())
    }
}

/// Drafts for the object-name-only knowledge variant: one unit per
/// brainstormed object, embedding just the category name.
pub fn object_kb_drafts(objects: &[String]) -> Vec<KnowledgeUnitDraft> {
    objects
        .iter()
        .map(|name| KnowledgeUnitDraft {
            attribute_phrases: vec![name.clone()],
            source_object: name.clone(),
            source_rationales: Vec::new(),
        })
        .collect()
}
