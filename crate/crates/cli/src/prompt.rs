//! Instruction templates per task.
//!
//! `{question}` and `{text}` are both replaced by the item input, so any
//! template may use either placeholder.

use std::collections::BTreeMap;

use crate::dataset::{DatasetItem, Task};

pub const QA_TEMPLATE: &str = "# Question: {question}\n\n# Answer:";
pub const TS_TEMPLATE: &str = "Article: {text}\n\nSummarize the above article in 1 sentence.";
pub const MT_TEMPLATE: &str = "Translate the following sentence from German to English.\n{text}";
pub const CG_TEMPLATE: &str =
    "Please complete the remaining Python function code based on the following docstring content.\n{text}";

pub fn default_template(task: Task) -> &'static str {
    match task {
        Task::Qa => QA_TEMPLATE,
        Task::Ts => TS_TEMPLATE,
        Task::Mt => MT_TEMPLATE,
        Task::Cg => CG_TEMPLATE,
    }
}

/// Substitutes the item input into the task's template, honouring
/// per-task overrides.
pub fn render_prompt(item: &DatasetItem, overrides: &BTreeMap<Task, String>) -> String {
    let template = overrides
        .get(&item.task)
        .map(String::as_str)
        .unwrap_or_else(|| default_template(item.task));
    substitute(template, &item.input)
}

fn substitute(template: &str, input: &str) -> String {
    // single left-to-right pass so placeholders inside the input survive
    let mut out = String::with_capacity(template.len() + input.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("{question}") {
            out.push_str(input);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{text}") {
            out.push_str(input);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}
