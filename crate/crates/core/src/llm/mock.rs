//! Deterministic offline backend.
//!
//! Every response is a pure function of the prompt text: decisions are drawn
//! from SHA-256 over a domain tag plus the prompt, so a given prompt always
//! yields the same response regardless of threading, batching, or resume
//! points. Failure injection (unparseable output, judge rejections,
//! paraphrased snippets, format violations) runs through the same hashing,
//! and the `would_*` predicates expose each decision so tests can recompute
//! planted sets exactly.

use sha2::{Digest, Sha256};

use crate::prompt::{
    EVIDENCE_MARKER, GEN_MARKER, JUDGE_MARKER, REPHRASE_MCQ_MARKER, REPHRASE_YESNO_MARKER,
};

use super::{BackendError, ChatBackend, CompletionRequest};

/// Injection rates, each in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct MockKnobs {
    /// Fraction of generation prompts answered with free text instead of JSON.
    pub gen_parse_failure_rate: f64,
    /// Fraction of judge prompts answered with a rejecting verdict.
    pub judge_reject_rate: f64,
    /// Fraction of judge prompts answered with unparseable text.
    pub judge_parse_failure_rate: f64,
    /// Fraction of evidence prompts marked relevant.
    pub evidence_relevant_rate: f64,
    /// Fraction of relevant evidence responses whose first snippet is
    /// paraphrased rather than copied verbatim.
    pub evidence_paraphrase_rate: f64,
    /// Fraction of rephrase prompts answered with a format violation.
    pub rephrase_violation_rate: f64,
}

impl Default for MockKnobs {
    fn default() -> Self {
        MockKnobs {
            gen_parse_failure_rate: 0.0,
            judge_reject_rate: 0.0,
            judge_parse_failure_rate: 0.0,
            evidence_relevant_rate: 0.7,
            evidence_paraphrase_rate: 0.0,
            rephrase_violation_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub knobs: MockKnobs,
}

/// Uniform draw in [0, 1) from a domain-separated hash of the prompt.
fn roll(domain: &str, prompt: &str) -> f64 {
    (hash64(domain, prompt) >> 11) as f64 / (1u64 << 53) as f64
}

fn hash64(domain: &str, prompt: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update(b"\x00");
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl MockBackend {
    pub fn new(knobs: MockKnobs) -> Self {
        MockBackend { knobs }
    }

    pub fn would_fail_generation(&self, prompt: &str) -> bool {
        roll("gen-parse", prompt) < self.knobs.gen_parse_failure_rate
    }

    pub fn would_reject_judge(&self, prompt: &str) -> bool {
        roll("judge-verdict", prompt) < self.knobs.judge_reject_rate
    }

    pub fn would_fail_judge_parse(&self, prompt: &str) -> bool {
        roll("judge-parse", prompt) < self.knobs.judge_parse_failure_rate
    }

    pub fn is_evidence_relevant(&self, prompt: &str) -> bool {
        roll("evidence-relevant", prompt) < self.knobs.evidence_relevant_rate
    }

    pub fn would_paraphrase(&self, prompt: &str) -> bool {
        roll("evidence-paraphrase", prompt) < self.knobs.evidence_paraphrase_rate
    }

    pub fn would_violate_rephrase(&self, prompt: &str) -> bool {
        roll("rephrase-violate", prompt) < self.knobs.rephrase_violation_rate
    }

    fn generation(&self, prompt: &str) -> String {
        if self.would_fail_generation(prompt) {
            return "The requested structure is hard to commit to, but informally \
                    the chain seems to run through the middle entity."
                .to_string();
        }
        let names = last_node_block(prompt);
        if names.len() < 3 {
            return "I could not locate a node list in the request.".to_string();
        }
        let h = hash64("variant", prompt);
        // First one or two nodes anchor the question, the last answers it,
        // the rest stay hidden.
        let question_count = if names.len() >= 4 && h & 1 == 1 { 2 } else { 1 };
        let question_nodes = &names[..question_count];
        let answer_node = names.last().expect("nonempty").clone();
        let hidden: Vec<&String> =
            names[question_count..names.len() - 1].iter().collect();
        let hops = hidden.len() + 1;
        let question = format!(
            "Which entity is reached from {} after {} related step{} (series {})?",
            question_nodes.join(" and "),
            hops,
            if hops == 1 { "" } else { "s" },
            h % 997,
        );
        serde_json::json!({
            "question": question,
            "answer": answer_node,
            "question_nodes": question_nodes,
            "hidden_nodes": hidden,
            "answer_node": answer_node,
            "reasoning": format!("Traced the {hops}-step chain through the listed connections."),
        })
        .to_string()
    }

    fn judge(&self, prompt: &str) -> String {
        if self.would_fail_judge_parse(prompt) {
            return "Verdict: the question reads fine and the answer looks defensible overall."
                .to_string();
        }
        let (valid_question, original_answer_valid) = if self.would_reject_judge(prompt) {
            // Split rejections between the two failure modes.
            if hash64("judge-mode", prompt) & 1 == 0 {
                (false, true)
            } else {
                (true, false)
            }
        } else {
            (true, true)
        };
        serde_json::json!({
            "valid_question": valid_question,
            "original_answer_valid": original_answer_valid,
            "reasoning": "Re-derived the answer independently and compared.",
        })
        .to_string()
    }

    fn evidence(&self, prompt: &str) -> String {
        if !self.is_evidence_relevant(prompt) {
            return serde_json::json!({
                "relevant": false,
                "snippets": [],
                "reasoning": "The abstract does not bear on the answer.",
            })
            .to_string();
        }
        let mut snippets: Vec<String> = fenced_abstract(prompt)
            .map(|text| {
                let sentences: Vec<&str> =
                    text.split_inclusive(". ").filter(|s| !s.trim().is_empty()).collect();
                let mut picks = Vec::new();
                if let Some(first) = sentences.first() {
                    picks.push(first.trim().to_string());
                }
                if sentences.len() > 1 {
                    let i = 1 + (hash64("snippet-pick", prompt) as usize) % (sentences.len() - 1);
                    let extra = sentences[i].trim().to_string();
                    if !picks.contains(&extra) {
                        picks.push(extra);
                    }
                }
                picks
            })
            .unwrap_or_default();
        if snippets.is_empty() {
            return serde_json::json!({
                "relevant": false,
                "snippets": [],
                "reasoning": "No quotable text found.",
            })
            .to_string();
        }
        if self.would_paraphrase(prompt) {
            snippets[0] = format!("(paraphrased) {}", snippets[0]);
        }
        serde_json::json!({
            "relevant": true,
            "snippets": snippets,
            "reasoning": "The abstract states the supporting facts directly.",
        })
        .to_string()
    }

    fn rephrase_yesno(&self, prompt: &str) -> String {
        let question = prompt_field(prompt, "Original question: ").unwrap_or("the claim");
        let answer = prompt_field(prompt, "Original answer: ").unwrap_or("the answer");
        if self.would_violate_rephrase(prompt) {
            return serde_json::json!({
                "question": format!("Is {answer} the correct resolution of: {question}"),
                "label": "probably",
            })
            .to_string();
        }
        let affirmative = !hash64("yesno-label", prompt).is_multiple_of(5);
        let (question, label) = if affirmative {
            (format!("Is {answer} the correct resolution of: {question}"), "yes")
        } else {
            (format!("Is the resolution of \"{question}\" something other than {answer}?"), "no")
        };
        serde_json::json!({ "question": question, "label": label }).to_string()
    }

    fn rephrase_mcq(&self, prompt: &str) -> String {
        let question = prompt_field(prompt, "Original question: ").unwrap_or("the claim");
        let answer =
            prompt_field(prompt, "Original answer: ").unwrap_or("the answer").to_string();
        let h = hash64("mcq-layout", prompt);
        if self.would_violate_rephrase(prompt) {
            // Two distinct violation kinds, split by hash: duplicated
            // options, or a correct letter outside the option range.
            if h & 1 == 0 {
                return serde_json::json!({
                    "question": question,
                    "options": [answer, answer, "Neither finding", "Both findings"],
                    "correct": "A",
                })
                .to_string();
            }
            return serde_json::json!({
                "question": question,
                "options": [answer, "Option two", "Option three", "Option four"],
                "correct": "E",
            })
            .to_string();
        }
        let correct_index = (h % 4) as usize;
        let mut options = Vec::with_capacity(4);
        let mut filler = 1;
        for i in 0..4 {
            if i == correct_index {
                options.push(answer.clone());
            } else {
                options.push(format!("Unrelated candidate {filler} (set {})", h % 499));
                filler += 1;
            }
        }
        let correct = char::from(b'A' + correct_index as u8).to_string();
        serde_json::json!({ "question": question, "options": options, "correct": correct })
            .to_string()
    }
}

/// Node names from the last `Nodes:` block in the prompt. Worked examples
/// embed earlier blocks; the actual excerpt is always serialized after them.
fn last_node_block(prompt: &str) -> Vec<String> {
    let start = match prompt.rfind("Nodes:\n") {
        Some(i) => i + "Nodes:\n".len(),
        None => return Vec::new(),
    };
    let mut names = Vec::new();
    for line in prompt[start..].lines() {
        let Some(entry) = line.strip_prefix("- ") else { break };
        match entry.rsplit_once(" (") {
            Some((name, _)) => names.push(name.to_string()),
            None => break,
        }
    }
    names
}

/// The abstract between the first pair of `"""` fences.
fn fenced_abstract(prompt: &str) -> Option<&str> {
    let open = prompt.find("\"\"\"\n")? + 4;
    let close = prompt[open..].find("\n\"\"\"")?;
    Some(&prompt[open..open + close])
}

fn prompt_field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|line| line.strip_prefix(prefix))
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let prompt = request.prompt.as_str();
        let response = if prompt.contains(JUDGE_MARKER) {
            self.judge(prompt)
        } else if prompt.contains(EVIDENCE_MARKER) {
            self.evidence(prompt)
        } else if prompt.contains(REPHRASE_YESNO_MARKER) {
            self.rephrase_yesno(prompt)
        } else if prompt.contains(REPHRASE_MCQ_MARKER) {
            self.rephrase_mcq(prompt)
        } else if prompt.contains(GEN_MARKER) {
            self.generation(prompt)
        } else {
            return Err(BackendError::NonRetryable {
                message: "mock backend cannot identify the request stage".to_string(),
            });
        };
        Ok(response)
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}
