//! Response parsing for the three prompt levels.

use super::{MlcotError, ObjectExample, PromptLevel};

/// Level-tagged parse result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    /// Ordered, deduplicated, lowercased object names.
    Objects(Vec<String>),
    /// Objects with their rationale lists, in response order.
    Rationales(Vec<ObjectExample>),
    /// One list of affordance phrases per brace group, in response order.
    Summaries(Vec<Vec<String>>),
}

pub fn parse_response(level: PromptLevel, response: &str) -> Result<Parsed, MlcotError> {
    if response.trim().is_empty() {
        return Err(MlcotError::EmptyResponse);
    }
    match level {
        PromptLevel::ObjectLevel => parse_objects(response).map(Parsed::Objects),
        PromptLevel::RationaleLevel => parse_rationales(response).map(Parsed::Rationales),
        PromptLevel::SummaryLevel => parse_summaries(response).map(Parsed::Summaries),
    }
}

fn parse_error(level: PromptLevel, reason: &str, raw: &str) -> MlcotError {
    MlcotError::Parse {
        level: level.name(),
        reason: reason.to_string(),
        raw: raw.to_string(),
    }
}

/// Strip a leading "output:" tag some models echo back.
fn strip_output_tag(text: &str) -> &str {
    let trimmed = text.trim_start();
    if trimmed.len() >= 7 && trimmed[..7].eq_ignore_ascii_case("output:") {
        &trimmed[7..]
    } else {
        trimmed
    }
}

fn clean_name(raw: &str) -> String {
    raw.trim()
        .trim_end_matches('.')
        .trim()
        .to_lowercase()
}

/// Object level: a comma-separated list of names. Names are lowercased and
/// deduplicated preserving first occurrence.
pub fn parse_objects(response: &str) -> Result<Vec<String>, MlcotError> {
    let body = strip_output_tag(response);
    let mut names = Vec::new();
    for piece in body.split(|c| c == ',' || c == '\n') {
        let name = clean_name(piece);
        if name.is_empty() {
            continue;
        }
        if !names.contains(&name) {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(parse_error(
            PromptLevel::ObjectLevel,
            "no object names found",
            response,
        ));
    }
    Ok(names)
}

/// Rationale level: one `object: rationale; rationale` line per object.
pub fn parse_rationales(response: &str) -> Result<Vec<ObjectExample>, MlcotError> {
    let mut examples: Vec<ObjectExample> = Vec::new();
    for line in strip_output_tag(response).lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((name, rest)) = line.split_once(':') else {
            return Err(parse_error(
                PromptLevel::RationaleLevel,
                "line has no 'object:' prefix",
                response,
            ));
        };
        let name = clean_name(name);
        let rationales: Vec<String> = rest
            .split(';')
            .map(|r| r.trim().trim_end_matches('.').trim().to_string())
            .filter(|r| !r.is_empty())
            .collect();
        if name.is_empty() || rationales.is_empty() {
            return Err(parse_error(
                PromptLevel::RationaleLevel,
                "empty object name or rationale list",
                response,
            ));
        }
        examples.push(ObjectExample { name, rationales });
    }
    if examples.is_empty() {
        return Err(parse_error(
            PromptLevel::RationaleLevel,
            "no rationale lines found",
            response,
        ));
    }
    Ok(examples)
}

/// Summary level: affordance phrases wrapped in braces, one group per
/// object, phrases separated by semicolons or "and".
pub fn parse_summaries(response: &str) -> Result<Vec<Vec<String>>, MlcotError> {
    let mut groups = Vec::new();
    let mut rest = response;
    while let Some(open) = rest.find('{') {
        let Some(close_rel) = rest[open + 1..].find('}') else {
            return Err(parse_error(
                PromptLevel::SummaryLevel,
                "unclosed brace group",
                response,
            ));
        };
        let body = &rest[open + 1..open + 1 + close_rel];
        let phrases: Vec<String> = body
            .to_lowercase()
            .split(|c| c == ';' || c == ',')
            .flat_map(|part| {
                part.split(" and ")
                    .map(str::to_string)
                    .collect::<Vec<_>>()
            })
            .map(|p| p.trim().trim_end_matches('.').trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.is_empty() {
            return Err(parse_error(
                PromptLevel::SummaryLevel,
                "brace group with no phrases",
                response,
            ));
        }
        groups.push(phrases);
        rest = &rest[open + 1 + close_rel + 1..];
    }
    if groups.is_empty() {
        return Err(parse_error(
            PromptLevel::SummaryLevel,
            "no brace groups found",
            response,
        ));
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlcot::prompt::{format_object_list, format_rationales, format_summaries};

    #[test]
    fn objects_from_paper_example() {
        let names = parse_objects("knife, pen, paper cutter, scissors").unwrap();
        assert_eq!(names, vec!["knife", "pen", "paper cutter", "scissors"]);
    }

    #[test]
    fn objects_dedup_and_lowercase() {
        assert_eq!(parse_objects("Knife, knife").unwrap(), vec!["knife"]);
    }

    #[test]
    fn objects_strip_output_tag() {
        assert_eq!(
            parse_objects("Output: knife, pen").unwrap(),
            vec!["knife", "pen"]
        );
    }

    #[test]
    fn objects_reject_garbage() {
        assert!(parse_objects(",,, .").is_err());
    }

    #[test]
    fn summary_from_paper_example() {
        let groups = parse_summaries("{A sharp blade and a handle.}").unwrap();
        assert_eq!(groups, vec![vec!["a sharp blade", "a handle"]]);
    }

    #[test]
    fn summary_multiple_groups_in_order() {
        let groups =
            parse_summaries("{A sharp blade and a handle.}, {a pointed tip; a rigid body}")
                .unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[1], vec!["a pointed tip", "a rigid body"]);
    }

    #[test]
    fn summary_without_braces_is_parse_error() {
        let err = parse_summaries("a sharp blade and a handle").unwrap_err();
        assert!(err.to_string().contains("sharp blade"), "error keeps raw text");
    }

    #[test]
    fn rationales_by_object() {
        let text = "Knife: They have a sharp blade; They have a handle.\nPen: It has a hard tip.";
        let examples = parse_rationales(text).unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].name, "knife");
        assert_eq!(examples[0].rationales.len(), 2);
        assert_eq!(examples[1].rationales, vec!["It has a hard tip"]);
    }

    #[test]
    fn empty_response_rejected() {
        assert!(matches!(
            parse_response(PromptLevel::ObjectLevel, "  \n "),
            Err(MlcotError::EmptyResponse)
        ));
    }

    #[test]
    fn round_trip_objects() {
        let objects: Vec<String> = ["knife", "paper cutter", "scissors"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(parse_objects(&format_object_list(&objects)).unwrap(), objects);
    }

    #[test]
    fn round_trip_rationales() {
        let examples = vec![
            ObjectExample {
                name: "knife".to_string(),
                rationales: vec!["sharp blade cuts tape".to_string(), "handle grips".to_string()],
            },
            ObjectExample {
                name: "paper cutter".to_string(),
                rationales: vec!["a guided blade".to_string()],
            },
        ];
        assert_eq!(
            parse_rationales(&format_rationales(&examples)).unwrap(),
            examples
        );
    }

    #[test]
    fn round_trip_summaries() {
        let summaries = vec![
            vec!["a sharp blade".to_string(), "a handle".to_string()],
            vec!["a pointed tip".to_string()],
        ];
        assert_eq!(
            parse_summaries(&format_summaries(&summaries)).unwrap(),
            summaries
        );
    }
}
