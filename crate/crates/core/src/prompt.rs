//! Prompt assembly for every model-facing stage.
//!
//! Generation prompts are built from a fixed catalog of six modules, two of
//! which (the graphlet serialization and the output schema) are mandatory.
//! The four optional modules span an ablation grid of 15 non-empty
//! combinations; the designated `full` configuration is their union and is
//! the production default. Judge, evidence, and rephrase prompts use fixed
//! single templates.
//!
//! Serialized graphlets list node names with their types and plain
//! name-to-name edge lines. Edge-type labels never reach a prompt.
//!
//! Every template ends with a task code (`#GEN`, `#JUDGE`, ...) so a mock
//! backend can recognize the stage from the prompt text alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphlet::Graphlet;

pub const GEN_MARKER: &str = "#GEN";
pub const JUDGE_MARKER: &str = "#JUDGE";
pub const EVIDENCE_MARKER: &str = "#EVIDENCE";
pub const REPHRASE_YESNO_MARKER: &str = "#REPHRASE_YESNO";
pub const REPHRASE_MCQ_MARKER: &str = "#REPHRASE_MCQ";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt configuration {id:?}")]
    UnknownConfig { id: String },
    #[error("invalid prompt configuration: {message}")]
    InvalidConfig { message: String },
    #[error("graphlet node {id} has no name")]
    UnnamedNode { id: String },
    #[error("template references unknown placeholder {{{{{name}}}}}")]
    UnresolvedPlaceholder { name: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog manifest: {message}")]
    Manifest { message: String },
}

/// The six generation prompt modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleId {
    RoleInstruction,
    FewShotExamples,
    GraphletSerialization,
    GuidedReasoning,
    SelfReflection,
    OutputSchema,
}

impl ModuleId {
    pub const ALL: [ModuleId; 6] = [
        ModuleId::RoleInstruction,
        ModuleId::FewShotExamples,
        ModuleId::GraphletSerialization,
        ModuleId::GuidedReasoning,
        ModuleId::SelfReflection,
        ModuleId::OutputSchema,
    ];

    pub const MANDATORY: [ModuleId; 2] =
        [ModuleId::GraphletSerialization, ModuleId::OutputSchema];

    /// Optional modules in assembly-position order.
    pub const OPTIONAL: [ModuleId; 4] = [
        ModuleId::RoleInstruction,
        ModuleId::FewShotExamples,
        ModuleId::GuidedReasoning,
        ModuleId::SelfReflection,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModuleId::RoleInstruction => "role-instruction",
            ModuleId::FewShotExamples => "few-shot-examples",
            ModuleId::GraphletSerialization => "graphlet-serialization",
            ModuleId::GuidedReasoning => "guided-reasoning",
            ModuleId::SelfReflection => "self-reflection",
            ModuleId::OutputSchema => "output-schema",
        }
    }

    pub fn from_str_id(s: &str) -> Option<ModuleId> {
        ModuleId::ALL.iter().copied().find(|m| m.as_str() == s)
    }

    /// Short token used when composing ablation config ids.
    fn token(&self) -> &'static str {
        match self {
            ModuleId::RoleInstruction => "roles",
            ModuleId::FewShotExamples => "examples",
            ModuleId::GuidedReasoning => "reasoning",
            ModuleId::SelfReflection => "reflection",
            _ => unreachable!("mandatory modules carry no ablation token"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptModule {
    pub id: ModuleId,
    /// Assembly position; modules are concatenated in ascending order.
    pub position: u8,
    pub template: String,
}

/// Named subset of modules. Any config must include the serialization and
/// output-schema modules; assembly orders modules by position regardless of
/// the order given here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub id: String,
    pub modules: Vec<ModuleId>,
}

impl PromptConfig {
    pub fn new(id: impl Into<String>, modules: Vec<ModuleId>) -> Result<Self, PromptError> {
        let config = PromptConfig { id: id.into(), modules };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let mut seen = self.modules.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.modules.len() {
            return Err(PromptError::InvalidConfig {
                message: format!("config {:?} lists a module twice", self.id),
            });
        }
        for required in ModuleId::MANDATORY {
            if !self.modules.contains(&required) {
                return Err(PromptError::InvalidConfig {
                    message: format!(
                        "config {:?} is missing mandatory module {}",
                        self.id,
                        required.as_str()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// One of the quality criteria a generated pair must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QualityCriterion {
    pub id: &'static str,
    pub description: &'static str,
}

/// The six acceptance criteria referenced by the reflection module and the
/// judge instructions.
pub const QUALITY_CRITERIA: [QualityCriterion; 6] = [
    QualityCriterion { id: "C1", description: "the answer is not present in the question" },
    QualityCriterion { id: "C2", description: "the question does not use graph terminology" },
    QualityCriterion { id: "C3", description: "the answer does not use graph terminology" },
    QualityCriterion { id: "C4", description: "the question is scientifically accurate" },
    QualityCriterion { id: "C5", description: "the answer is scientifically accurate" },
    QualityCriterion { id: "C6", description: "the answer properly addresses the question" },
];

const ROLE_INSTRUCTION_TEMPLATE: &str = "\
You write challenging multi-hop questions over small knowledge graph excerpts. \
Pick one or two nodes as question nodes: only their names may be mentioned in the question. \
Pick a different node as the answer node: its name is the answer and must not appear in the question. \
All remaining nodes are hidden nodes: the question should force reasoning through them without naming them. \
Declare your choices in the question_nodes, hidden_nodes, and answer_node output fields.";

const FEW_SHOT_TEMPLATE: &str = "\
Worked example.

Nodes:
- Imatinib (compound)
- BCR-ABL (protein)
- Chronic myeloid leukemia (disease)
Edges:
- Imatinib -- BCR-ABL
- BCR-ABL -- Chronic myeloid leukemia

Output:
{\"question\": \"Which compound inhibits the protein whose activity drives chronic myeloid leukemia?\", \"answer\": \"Imatinib\", \"question_nodes\": [\"Chronic myeloid leukemia\"], \"hidden_nodes\": [\"BCR-ABL\"], \"answer_node\": \"Imatinib\", \"reasoning\": \"The disease is driven by BCR-ABL, and Imatinib inhibits that protein.\"}";

const SERIALIZATION_TEMPLATE: &str = "\
Here is the knowledge graph excerpt to work from. Nodes are listed with their \
type in parentheses; each edge line connects two related node names.

{{graphlet}}";

const GUIDED_REASONING_TEMPLATE: &str = "\
Before writing anything, reason step by step: trace how the candidate question \
nodes connect to the candidate answer node through the other nodes, and decide \
which relationship chain the question should exercise. Base the question only \
on connections present in the excerpt.";

const SELF_REFLECTION_TEMPLATE: &str = "\
After drafting, check your work: the answer must not appear inside the question; \
neither question nor answer may use structural vocabulary such as graph, node, \
edge, or excerpt; both must be scientifically sound; and the answer must \
directly address the question. Revise once before emitting the final output.";

const OUTPUT_SCHEMA_TEMPLATE: &str = "\
Respond with a single JSON object and nothing else, in exactly this shape:
{\"question\": string, \"answer\": string, \"question_nodes\": [string], \"hidden_nodes\": [string], \"answer_node\": string}
question_nodes lists the one or two node names the question is anchored on, \
hidden_nodes the remaining node names, and answer_node the node name that \
answers the question. Copy node names exactly as written in the excerpt. \
Task code: #GEN";

const JUDGE_TEMPLATE: &str = "\
You are reviewing a generated question-answer pair for quality.

Question: {{question}}
Answer: {{answer}}
Entities involved: {{entities}}

Proceed in three steps. First, check the question is well-posed and the listed \
entities are meaningfully connected by it. Second, answer the question yourself \
without looking at the provided answer. Third, compare your answer against the \
provided one.

Respond with a single JSON object and nothing else:
{\"valid_question\": boolean, \"original_answer_valid\": boolean, \"reasoning\": string}
Task code: #JUDGE";

const EVIDENCE_TEMPLATE: &str = "\
Assess whether the following document helps answer the question.

Question: {{question}}
Answer: {{answer}}

Document title: {{title}}
Abstract:
\"\"\"
{{abstract}}
\"\"\"

If the abstract contains evidence supporting the answer, mark it relevant and \
copy up to three supporting snippets from the abstract verbatim, character for \
character. Never paraphrase a snippet. If the abstract does not support the \
answer, mark it not relevant and return an empty snippet list.

Respond with a single JSON object and nothing else:
{\"relevant\": boolean, \"snippets\": [string], \"reasoning\": string}
Task code: #EVIDENCE";

const REPHRASE_YESNO_TEMPLATE: &str = "\
Convert this question-answer pair into a yes/no question written in the style \
of the examples below.

Original question: {{question}}
Original answer: {{answer}}

Supporting evidence:
{{snippets}}

Style examples:
{{exemplars}}

Write one yes/no question whose correct label follows from the original answer \
and the evidence. Respond with a single JSON object and nothing else:
{\"question\": string, \"label\": \"yes\" or \"no\"}
Task code: #REPHRASE_YESNO";

const REPHRASE_MCQ_TEMPLATE: &str = "\
Convert this question-answer pair into a multiple-choice question written in \
the style of the examples below.

Original question: {{question}}
Original answer: {{answer}}

Supporting evidence:
{{snippets}}

Style examples:
{{exemplars}}

Write one question with four answer options, exactly one of which is correct \
and equivalent to the original answer. Respond with a single JSON object and \
nothing else:
{\"question\": string, \"options\": [string, string, string, string], \"correct\": one of \"A\", \"B\", \"C\", \"D\"}
Task code: #REPHRASE_MCQ";

/// Fixed single-template stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTemplate {
    Judge,
    Evidence,
    RephraseYesNo,
    RephraseMultipleChoice,
}

impl StageTemplate {
    pub const ALL: [StageTemplate; 4] = [
        StageTemplate::Judge,
        StageTemplate::Evidence,
        StageTemplate::RephraseYesNo,
        StageTemplate::RephraseMultipleChoice,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StageTemplate::Judge => "judge",
            StageTemplate::Evidence => "evidence",
            StageTemplate::RephraseYesNo => "rephrase-yes-no",
            StageTemplate::RephraseMultipleChoice => "rephrase-multiple-choice",
        }
    }

    fn from_str_id(s: &str) -> Option<StageTemplate> {
        StageTemplate::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

/// The full prompt catalog: generation modules, stage templates, and the
/// named configurations. Stored on disk as a directory of template files
/// plus a JSON manifest.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    modules: BTreeMap<ModuleId, PromptModule>,
    stages: BTreeMap<StageTemplate, String>,
    configs: Vec<PromptConfig>,
}

pub const FULL_CONFIG_ID: &str = "full";

fn builtin_modules() -> BTreeMap<ModuleId, PromptModule> {
    [
        (ModuleId::RoleInstruction, 10, ROLE_INSTRUCTION_TEMPLATE),
        (ModuleId::FewShotExamples, 20, FEW_SHOT_TEMPLATE),
        (ModuleId::GraphletSerialization, 30, SERIALIZATION_TEMPLATE),
        (ModuleId::GuidedReasoning, 40, GUIDED_REASONING_TEMPLATE),
        (ModuleId::SelfReflection, 50, SELF_REFLECTION_TEMPLATE),
        (ModuleId::OutputSchema, 60, OUTPUT_SCHEMA_TEMPLATE),
    ]
    .into_iter()
    .map(|(id, position, template)| {
        (id, PromptModule { id, position, template: template.to_string() })
    })
    .collect()
}

/// The ablation grid: every non-empty subset of the four optional modules
/// (15 configs), each on top of both mandatory modules, plus the designated
/// `full` config equal to their union.
fn builtin_configs() -> Vec<PromptConfig> {
    let mut configs = Vec::new();
    for mask in 1u8..16 {
        let mut modules = Vec::new();
        let mut tokens = Vec::new();
        for (bit, &module) in ModuleId::OPTIONAL.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                modules.push(module);
                tokens.push(module.token());
            }
        }
        modules.extend(ModuleId::MANDATORY);
        configs.push(PromptConfig { id: tokens.join("+"), modules });
    }
    let mut full: Vec<ModuleId> = ModuleId::OPTIONAL.to_vec();
    full.extend(ModuleId::MANDATORY);
    configs.push(PromptConfig { id: FULL_CONFIG_ID.to_string(), modules: full });
    configs
}

impl Default for PromptCatalog {
    fn default() -> Self {
        PromptCatalog::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        PromptCatalog {
            modules: builtin_modules(),
            stages: StageTemplate::ALL
                .iter()
                .map(|&s| {
                    let t = match s {
                        StageTemplate::Judge => JUDGE_TEMPLATE,
                        StageTemplate::Evidence => EVIDENCE_TEMPLATE,
                        StageTemplate::RephraseYesNo => REPHRASE_YESNO_TEMPLATE,
                        StageTemplate::RephraseMultipleChoice => REPHRASE_MCQ_TEMPLATE,
                    };
                    (s, t.to_string())
                })
                .collect(),
            configs: builtin_configs(),
        }
    }

    pub fn module(&self, id: ModuleId) -> &PromptModule {
        &self.modules[&id]
    }

    /// The 15 ablation configurations followed by `full`.
    pub fn configurations(&self) -> &[PromptConfig] {
        &self.configs
    }

    pub fn config(&self, id: &str) -> Result<&PromptConfig, PromptError> {
        self.configs
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| PromptError::UnknownConfig { id: id.to_string() })
    }

    /// Builds the generation prompt for one graphlet under a config.
    pub fn assemble(&self, config: &PromptConfig, graphlet: &Graphlet) -> Result<String, PromptError> {
        config.validate()?;
        for node in &graphlet.nodes {
            if node.name.is_empty() {
                return Err(PromptError::UnnamedNode { id: node.id.clone() });
            }
        }
        let serialized = serialize_graphlet(graphlet);
        let values = BTreeMap::from([("graphlet", serialized.as_str())]);
        let mut ordered: Vec<&PromptModule> =
            config.modules.iter().map(|id| self.module(*id)).collect();
        ordered.sort_by_key(|m| m.position);
        let blocks = ordered
            .iter()
            .map(|m| fill(&m.template, &values))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(blocks.join("\n\n"))
    }

    pub fn judge_prompt(
        &self,
        question: &str,
        answer: &str,
        entities: &[&str],
    ) -> Result<String, PromptError> {
        let entities = entities.join("; ");
        let values = BTreeMap::from([
            ("question", question),
            ("answer", answer),
            ("entities", entities.as_str()),
        ]);
        fill(&self.stages[&StageTemplate::Judge], &values)
    }

    pub fn evidence_prompt(
        &self,
        question: &str,
        answer: &str,
        title: &str,
        abstract_text: &str,
    ) -> Result<String, PromptError> {
        let values = BTreeMap::from([
            ("question", question),
            ("answer", answer),
            ("title", title),
            ("abstract", abstract_text),
        ]);
        fill(&self.stages[&StageTemplate::Evidence], &values)
    }

    /// `snippets_block` and `exemplars_block` arrive preformatted from the
    /// rephraser, which owns those record types.
    pub fn rephrase_prompt(
        &self,
        stage: StageTemplate,
        question: &str,
        answer: &str,
        snippets_block: &str,
        exemplars_block: &str,
    ) -> Result<String, PromptError> {
        debug_assert!(matches!(
            stage,
            StageTemplate::RephraseYesNo | StageTemplate::RephraseMultipleChoice
        ));
        let values = BTreeMap::from([
            ("question", question),
            ("answer", answer),
            ("snippets", snippets_block),
            ("exemplars", exemplars_block),
        ]);
        fill(&self.stages[&stage], &values)
    }

    /// Writes the catalog as one file per template plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<(), PromptError> {
        let io = |path: &Path, source| PromptError::Io {
            path: path.display().to_string(),
            source,
        };
        let modules_dir = dir.join("modules");
        let stages_dir = dir.join("stages");
        fs::create_dir_all(&modules_dir).map_err(|e| io(&modules_dir, e))?;
        fs::create_dir_all(&stages_dir).map_err(|e| io(&stages_dir, e))?;
        let mut manifest_modules = Vec::new();
        for module in self.modules.values() {
            let file = format!("modules/{}.txt", module.id.as_str());
            let path = dir.join(&file);
            fs::write(&path, &module.template).map_err(|e| io(&path, e))?;
            manifest_modules.push(serde_json::json!({
                "id": module.id.as_str(),
                "position": module.position,
                "file": file,
            }));
        }
        let mut manifest_stages = Vec::new();
        for (stage, template) in &self.stages {
            let file = format!("stages/{}.txt", stage.as_str());
            let path = dir.join(&file);
            fs::write(&path, template).map_err(|e| io(&path, e))?;
            manifest_stages.push(serde_json::json!({ "id": stage.as_str(), "file": file }));
        }
        let configs: Vec<serde_json::Value> = self
            .configs
            .iter()
            .map(|c| {
                serde_json::json!({
                    "id": c.id,
                    "modules": c.modules.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let manifest = serde_json::json!({
            "modules": manifest_modules,
            "stages": manifest_stages,
            "configs": configs,
        });
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("valid json"))
            .map_err(|e| io(&path, e))?;
        Ok(())
    }

    /// Loads a catalog previously written by [`PromptCatalog::save`] (or
    /// hand-edited in place). Missing modules, stages, or invalid configs
    /// are rejected.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let io = |path: &Path, source| PromptError::Io {
            path: path.display().to_string(),
            source,
        };
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| io(&manifest_path, e))?;
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| PromptError::Manifest {
                message: format!("{}: {e}", manifest_path.display()),
            })?;

        let entries = manifest
            .get("modules")
            .and_then(|v| v.as_array())
            .ok_or_else(|| PromptError::Manifest { message: "missing modules list".into() })?;
        let mut modules = BTreeMap::new();
        for entry in entries {
            let id = entry
                .get("id")
                .and_then(|v| v.as_str())
                .and_then(ModuleId::from_str_id)
                .ok_or_else(|| PromptError::Manifest {
                    message: format!("bad module entry: {entry}"),
                })?;
            let position = entry.get("position").and_then(|v| v.as_u64()).ok_or_else(|| {
                PromptError::Manifest { message: format!("module {} lacks position", id.as_str()) }
            })? as u8;
            let file = entry.get("file").and_then(|v| v.as_str()).ok_or_else(|| {
                PromptError::Manifest { message: format!("module {} lacks file", id.as_str()) }
            })?;
            let path = dir.join(file);
            let template = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            modules.insert(id, PromptModule { id, position, template });
        }
        for required in ModuleId::ALL {
            if !modules.contains_key(&required) {
                return Err(PromptError::Manifest {
                    message: format!("catalog is missing module {}", required.as_str()),
                });
            }
        }

        let entries = manifest
            .get("stages")
            .and_then(|v| v.as_array())
            .ok_or_else(|| PromptError::Manifest { message: "missing stages list".into() })?;
        let mut stages = BTreeMap::new();
        for entry in entries {
            let id = entry
                .get("id")
                .and_then(|v| v.as_str())
                .and_then(StageTemplate::from_str_id)
                .ok_or_else(|| PromptError::Manifest {
                    message: format!("bad stage entry: {entry}"),
                })?;
            let file = entry.get("file").and_then(|v| v.as_str()).ok_or_else(|| {
                PromptError::Manifest { message: format!("stage {} lacks file", id.as_str()) }
            })?;
            let path = dir.join(file);
            stages.insert(id, fs::read_to_string(&path).map_err(|e| io(&path, e))?);
        }
        for required in StageTemplate::ALL {
            if !stages.contains_key(&required) {
                return Err(PromptError::Manifest {
                    message: format!("catalog is missing stage template {}", required.as_str()),
                });
            }
        }

        let entries = manifest
            .get("configs")
            .and_then(|v| v.as_array())
            .ok_or_else(|| PromptError::Manifest { message: "missing configs list".into() })?;
        let mut configs = Vec::new();
        for entry in entries {
            let id = entry.get("id").and_then(|v| v.as_str()).ok_or_else(|| {
                PromptError::Manifest { message: format!("bad config entry: {entry}") }
            })?;
            let module_ids = entry
                .get("modules")
                .and_then(|v| v.as_array())
                .ok_or_else(|| PromptError::Manifest {
                    message: format!("config {id} lacks modules"),
                })?;
            let mut list = Vec::new();
            for m in module_ids {
                let module = m
                    .as_str()
                    .and_then(ModuleId::from_str_id)
                    .ok_or_else(|| PromptError::Manifest {
                        message: format!("config {id}: unknown module {m}"),
                    })?;
                list.push(module);
            }
            configs.push(PromptConfig::new(id, list)?);
        }
        Ok(PromptCatalog { modules, stages, configs })
    }
}

/// Deterministic text form of a graphlet: typed node lines then bare
/// name-to-name edge lines. Contains no edge-type labels and no ids.
pub fn serialize_graphlet(graphlet: &Graphlet) -> String {
    let mut out = String::from("Nodes:\n");
    for node in &graphlet.nodes {
        out.push_str(&format!("- {} ({})\n", node.name, node.node_type));
    }
    out.push_str("Edges:\n");
    let lines: Vec<String> = graphlet
        .edges
        .iter()
        .map(|&(i, j)| {
            format!("- {} -- {}", graphlet.nodes[i as usize].name, graphlet.nodes[j as usize].name)
        })
        .collect();
    out.push_str(&lines.join("\n"));
    out
}

/// Single-pass placeholder substitution: `{{name}}` is replaced from
/// `values`; a name with no value is an error. Text inserted from values is
/// never rescanned, so data containing brace pairs cannot break assembly.
fn fill(template: &str, values: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && bytes[i + 1] == b'{' {
            if let Some(end) = template[i + 2..].find("}}") {
                let name = &template[i + 2..i + 2 + end];
                if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                {
                    let value = values.get(name).ok_or_else(|| {
                        PromptError::UnresolvedPlaceholder { name: name.to_string() }
                    })?;
                    out.push_str(value);
                    i += 2 + end + 2;
                    continue;
                }
            }
        }
        let ch = template[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphlet::materialize;
    use crate::kg::graph_from_edges;

    fn sample_graphlet() -> Graphlet {
        let g = graph_from_edges(3, &[(0, 1), (1, 2)]);
        materialize(&g, &[0, 1, 2]).unwrap()
    }

    #[test]
    fn catalog_has_fifteen_ablations_plus_full() {
        let catalog = PromptCatalog::builtin();
        let configs = catalog.configurations();
        assert_eq!(configs.len(), 16);
        assert_eq!(configs.last().unwrap().id, FULL_CONFIG_ID);
        let full = catalog.config(FULL_CONFIG_ID).unwrap();
        assert_eq!(full.modules.len(), ModuleId::ALL.len());
        for config in configs {
            config.validate().unwrap();
            for module in &config.modules {
                assert!(full.modules.contains(module), "full must be the union");
            }
        }
        let mut ids: Vec<&str> = configs.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 16, "config ids must be distinct");
    }

    #[test]
    fn minimal_config_assembles_two_blocks() {
        let catalog = PromptCatalog::builtin();
        let minimal = PromptConfig::new(
            "minimal",
            vec![ModuleId::GraphletSerialization, ModuleId::OutputSchema],
        )
        .unwrap();
        let prompt = catalog.assemble(&minimal, &sample_graphlet()).unwrap();
        assert!(prompt.contains("Nodes:"));
        assert!(prompt.contains("node 0 (t)"));
        assert!(prompt.contains(GEN_MARKER));
        assert!(!prompt.contains("Worked example"));
        assert!(!prompt.contains("step by step"));
    }

    #[test]
    fn config_without_schema_is_rejected() {
        let err = PromptConfig::new("bad", vec![ModuleId::GraphletSerialization]).unwrap_err();
        assert!(matches!(err, PromptError::InvalidConfig { .. }));
    }

    #[test]
    fn full_prompt_contains_every_module_once() {
        let catalog = PromptCatalog::builtin();
        let full = catalog.config(FULL_CONFIG_ID).unwrap().clone();
        let prompt = catalog.assemble(&full, &sample_graphlet()).unwrap();
        assert_eq!(prompt.matches("Task code: #GEN").count(), 1);
        assert_eq!(prompt.matches("Worked example").count(), 1);
        // The worked example precedes the actual excerpt, so the excerpt is
        // always the last node block in the prompt.
        let example_pos = prompt.find("Worked example").unwrap();
        let excerpt_pos = prompt.find("excerpt to work from").unwrap();
        assert!(example_pos < excerpt_pos);
    }

    #[test]
    fn serialization_lists_typed_nodes_and_unlabeled_edges() {
        let text = serialize_graphlet(&sample_graphlet());
        assert_eq!(
            text,
            "Nodes:\n- node 0 (t)\n- node 1 (t)\n- node 2 (t)\nEdges:\n- node 0 -- node 1\n- node 1 -- node 2"
        );
    }

    #[test]
    fn assembled_prompts_carry_no_edge_type_tokens() {
        // Build a graph whose edge types are distinctive strings, then make
        // sure none of them survive into any config's prompt.
        let dir = tempfile::tempdir().unwrap();
        let nodes = dir.path().join("n.tsv");
        let edges = dir.path().join("e.tsv");
        std::fs::write(&nodes, "id\ttype\tname\na\tgene\tAlpha\nb\tgene\tBeta\nc\tgene\tGamma\n")
            .unwrap();
        std::fs::write(
            &edges,
            "source\tedge_type\ttarget\na\tedgekind_upregulates\tb\nb\tedgekind_represses\tc\n",
        )
        .unwrap();
        let g = crate::kg::load_graph(&nodes, &edges).unwrap().simplify();
        let glet = materialize(&g, &[0, 1, 2]).unwrap();
        let catalog = PromptCatalog::builtin();
        for config in catalog.configurations() {
            let prompt = catalog.assemble(config, &glet).unwrap();
            for edge_type in g.edge_types() {
                assert!(!prompt.contains(edge_type), "edge type leaked into prompt");
            }
        }
    }

    #[test]
    fn unnamed_node_fails_assembly() {
        let mut glet = sample_graphlet();
        glet.nodes[1].name = String::new();
        let catalog = PromptCatalog::builtin();
        let config = catalog.config(FULL_CONFIG_ID).unwrap().clone();
        assert!(matches!(
            catalog.assemble(&config, &glet),
            Err(PromptError::UnnamedNode { .. })
        ));
    }

    #[test]
    fn stage_prompts_fill_placeholders() {
        let catalog = PromptCatalog::builtin();
        let judge = catalog.judge_prompt("Q?", "A.", &["x", "y"]).unwrap();
        assert!(judge.contains("Question: Q?"));
        assert!(judge.contains("x; y"));
        assert!(judge.contains(JUDGE_MARKER));

        let evidence = catalog.evidence_prompt("Q?", "A.", "T", "Body text.").unwrap();
        assert!(evidence.contains("Document title: T"));
        assert!(evidence.contains("Body text."));
        assert!(evidence.contains(EVIDENCE_MARKER));

        let yn = catalog
            .rephrase_prompt(StageTemplate::RephraseYesNo, "Q?", "A.", "- s1", "Q: e1")
            .unwrap();
        assert!(yn.contains(REPHRASE_YESNO_MARKER));
        assert!(yn.contains("- s1"));
        assert!(yn.contains("Q: e1"));
    }

    #[test]
    fn fill_rejects_unknown_placeholder_and_keeps_braces_in_data() {
        let values = BTreeMap::from([("known", "{{sneaky}}")]);
        let out = fill("x {{known}} y", &values).unwrap();
        assert_eq!(out, "x {{sneaky}} y");
        let err = fill("x {{missing}}", &values).unwrap_err();
        assert!(matches!(err, PromptError::UnresolvedPlaceholder { .. }));
        // JSON braces in templates pass through untouched.
        let out = fill("{\"a\": {\"b\": 1}}", &BTreeMap::new()).unwrap();
        assert_eq!(out, "{\"a\": {\"b\": 1}}");
    }

    #[test]
    fn catalog_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = PromptCatalog::builtin();
        catalog.save(dir.path()).unwrap();
        let loaded = PromptCatalog::load(dir.path()).unwrap();
        assert_eq!(loaded.configurations(), catalog.configurations());
        let glet = sample_graphlet();
        let full = catalog.config(FULL_CONFIG_ID).unwrap();
        assert_eq!(
            loaded.assemble(full, &glet).unwrap(),
            catalog.assemble(full, &glet).unwrap()
        );
    }

    #[test]
    fn six_quality_criteria_with_stable_ids() {
        assert_eq!(QUALITY_CRITERIA.len(), 6);
        for (i, c) in QUALITY_CRITERIA.iter().enumerate() {
            assert_eq!(c.id, format!("C{}", i + 1));
        }
    }
}
