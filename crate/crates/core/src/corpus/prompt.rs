use serde::{Deserialize, Serialize};

use super::{EntityHint, QAInstance, RelationHint};

pub const SYSTEM_PROMPT_COT: &str = include_str!("../../assets/prompts/v1/system_cot.txt");
pub const SYSTEM_PROMPT_DIRECT: &str = include_str!("../../assets/prompts/v1/system_direct.txt");
pub const USER_PROMPT_TEMPLATE: &str = include_str!("../../assets/prompts/v1/user.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system_text: String,
    pub user_text: String,
}

fn entity_item(e: &EntityHint) -> String {
    format!("<{}> ({})", e.uri, e.label)
}

fn relation_item(r: &RelationHint) -> String {
    let mut item = format!("<{}> ({})", r.uri, r.label);
    let schema: Vec<String> = [("domain", &r.domain), ("range", &r.range), ("comment", &r.comment)]
        .into_iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .map(|(k, v)| format!("{k}: {v}"))
        .collect();
    if !schema.is_empty() {
        item.push_str(&format!(" [{}]", schema.join("; ")));
    }
    item
}

fn list(items: Vec<String>) -> String {
    format!("[{}]", items.join(", "))
}

/// Substitute `{name}` placeholders in one left-to-right pass, so values
/// containing braces are never re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let placeholder = format!("{{{name}}}");
            if tail.starts_with(&placeholder) {
                out.push_str(value);
                rest = &tail[placeholder.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn render_prompt(instance: &QAInstance, cot: bool) -> Prompt {
    let entities = list(instance.entities.iter().map(entity_item).collect());
    let relations = list(instance.relations.iter().map(relation_item).collect());
    let user_text = fill(
        USER_PROMPT_TEMPLATE,
        &[
            ("question", instance.question.as_str()),
            ("entities", entities.as_str()),
            ("relations", relations.as_str()),
        ],
    );
    Prompt {
        system_text: if cot { SYSTEM_PROMPT_COT } else { SYSTEM_PROMPT_DIRECT }.to_string(),
        user_text,
    }
}
