//! Stage prompt rendering.
//!
//! Each prompt is a sequence of blocks joined by a blank line. Blocks come
//! from template files with `{name}` placeholders; `{{` and `}}` are literal
//! braces. Sections whose stage was ablated are dropped entirely.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::Device;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("{stage} prompt requires {field}")]
    MissingField { stage: Stage, field: &'static str },
    #[error("unknown baseline mode {0:?}")]
    UnknownMode(String),
    #[error("template {name}: {message}")]
    BadTemplate { name: String, message: String },
    #[error("cannot read template set {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Emotion,
    Domain,
    CrossInfo,
    FinalLabel,
    Verification,
    BaselineStandard,
    BaselineCot,
    BaselineTogether,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Emotion => "emotion",
            Stage::Domain => "domain",
            Stage::CrossInfo => "cross_info",
            Stage::FinalLabel => "final_label",
            Stage::Verification => "verification",
            Stage::BaselineStandard => "baseline_standard",
            Stage::BaselineCot => "baseline_cot",
            Stage::BaselineTogether => "baseline_together",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the response parser should look for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerGrammar {
    /// Free text.
    FreeText,
    /// `Source domain:` / `Target domain:` / `Connection:` lines.
    DomainLines,
    /// A `Label: <yes|no>` line.
    Label,
    /// `Hyperbole: <yes|no>` and `Metaphor: <yes|no>` lines.
    DeviceLabels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Standard,
    Cot,
    Together,
}

impl FromStr for BaselineMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(BaselineMode::Standard),
            "cot" => Ok(BaselineMode::Cot),
            "together" => Ok(BaselineMode::Together),
            other => Err(PromptError::UnknownMode(other.to_string())),
        }
    }
}

/// Sections deliberately left out because their stage is disabled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Omitted {
    pub emotion: bool,
    pub domain: bool,
    pub cross_info: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageContext {
    pub sentence: String,
    pub emotion: Option<String>,
    pub domain_mapping: Option<String>,
    /// Analysis of the counterpart device (metaphor info when `device` is
    /// hyperbole, and the reverse) for label stages; the device's own
    /// analysis is produced by the cross-info stage.
    pub cross_info: Option<String>,
    pub device: Device,
    pub omitted: Omitted,
}

impl StageContext {
    pub fn new(sentence: impl Into<String>, device: Device) -> Self {
        StageContext {
            sentence: sentence.into(),
            emotion: None,
            domain_mapping: None,
            cross_info: None,
            device,
            omitted: Omitted::default(),
        }
    }

    pub fn with_emotion(mut self, e: impl Into<String>) -> Self {
        self.emotion = Some(e.into());
        self
    }

    pub fn with_domain(mut self, d: impl Into<String>) -> Self {
        self.domain_mapping = Some(d.into());
        self
    }

    pub fn with_cross_info(mut self, c: impl Into<String>) -> Self {
        self.cross_info = Some(c.into());
        self
    }

    pub fn omitting(mut self, omitted: Omitted) -> Self {
        self.omitted = omitted;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<Device>,
    pub answer_grammar: AnswerGrammar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Part {
    Literal(String),
    Var(String),
}

const PLACEHOLDERS: &[&str] = &[
    "sentence",
    "emotion",
    "domain_mapping",
    "cross_info",
    "device",
    "prior_label",
];

#[derive(Clone, Debug, PartialEq, Eq)]
struct Template {
    parts: Vec<Part>,
}

impl Template {
    fn parse(name: &str, source: &str) -> Result<Template, PromptError> {
        let bad = |message: String| PromptError::BadTemplate {
            name: name.to_string(),
            message,
        };
        let mut parts = Vec::new();
        let mut lit = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut var = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => var.push(ch),
                            None => return Err(bad("unterminated placeholder".into())),
                        }
                    }
                    if !PLACEHOLDERS.contains(&var.as_str()) {
                        return Err(bad(format!("unknown placeholder {{{var}}}")));
                    }
                    if !lit.is_empty() {
                        parts.push(Part::Literal(std::mem::take(&mut lit)));
                    }
                    parts.push(Part::Var(var));
                }
                '}' => return Err(bad("unmatched '}'".into())),
                other => lit.push(other),
            }
        }
        if !lit.is_empty() {
            parts.push(Part::Literal(lit));
        }
        Ok(Template { parts })
    }

    /// Substitutes in one pass; inserted values are never re-expanded.
    fn render(&self, vars: &BTreeMap<&str, &str>) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                Part::Literal(s) => out.push_str(s),
                Part::Var(v) => out.push_str(vars.get(v.as_str()).copied().unwrap_or("")),
            }
        }
        out
    }
}

macro_rules! builtin_templates {
    ($($name:literal),* $(,)?) => {
        const TEMPLATE_NAMES: &[&str] = &[$($name),*];
        const BUILTIN: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../templates/default/", $name, ".txt")))),*
        ];
    };
}

builtin_templates!(
    "sentence",
    "emotion_instruction",
    "emotion_section",
    "domain_section",
    "metaphor_section",
    "hyperbole_section",
    "domain_instruction",
    "domain_answer",
    "cross_info_metaphor",
    "cross_info_hyperbole",
    "final_hyperbole",
    "final_metaphor",
    "label_answer",
    "verification",
    "baseline_standard",
    "baseline_cot",
    "baseline_answer",
);

const BUILTIN_VERSION: &str = include_str!("../templates/default/VERSION");

/// A complete, validated set of prompt templates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    digest: String,
    templates: BTreeMap<String, Template>,
    sources: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        let sources = BUILTIN.iter().map(|(n, s)| (n.to_string(), s.to_string())).collect();
        TemplateSet::from_sources(BUILTIN_VERSION, sources).expect("built-in templates are valid")
    }

    /// Loads `<dir>/<name>.txt` for every template plus `<dir>/VERSION`.
    pub fn load_dir(dir: &Path) -> Result<TemplateSet, PromptError> {
        let read = |file: String| {
            let path = dir.join(&file);
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let version = read("VERSION".into())?;
        let mut sources = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            sources.insert(name.to_string(), read(format!("{name}.txt"))?);
        }
        TemplateSet::from_sources(&version, sources)
    }

    /// `"default"` selects the built-in set; anything else is a directory.
    pub fn resolve(id: &str) -> Result<TemplateSet, PromptError> {
        if id == "default" {
            Ok(TemplateSet::builtin())
        } else {
            TemplateSet::load_dir(Path::new(id))
        }
    }

    fn from_sources(version: &str, sources: BTreeMap<String, String>) -> Result<TemplateSet, PromptError> {
        let mut templates = BTreeMap::new();
        let mut hasher = Sha256::new();
        for name in TEMPLATE_NAMES {
            let src = sources.get(*name).ok_or_else(|| PromptError::BadTemplate {
                name: name.to_string(),
                message: "missing".into(),
            })?;
            // one trailing newline belongs to the file, not the block
            let src = src.strip_suffix('\n').unwrap_or(src);
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(src.as_bytes());
            hasher.update([0]);
            templates.insert(name.to_string(), Template::parse(name, src)?);
        }
        Ok(TemplateSet {
            version: version.trim().to_string(),
            digest: hex::encode(hasher.finalize())[..12].to_string(),
            templates,
            sources,
        })
    }

    /// Human-assigned version plus a content digest, e.g. `default-v1+3f2a...`.
    pub fn version(&self) -> String {
        format!("{}+{}", self.version, self.digest)
    }

    /// Writes the set to a directory in the layout `load_dir` reads.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("VERSION"), format!("{}\n", self.version))?;
        for (name, src) in &self.sources {
            std::fs::write(dir.join(format!("{name}.txt")), src)?;
        }
        Ok(())
    }

    /// The answer-format block for a grammar, as it appears in prompts.
    pub fn answer_instruction(&self, grammar: AnswerGrammar) -> Option<String> {
        let name = match grammar {
            AnswerGrammar::FreeText => return None,
            AnswerGrammar::DomainLines => "domain_answer",
            AnswerGrammar::Label => "label_answer",
            AnswerGrammar::DeviceLabels => "baseline_answer",
        };
        Some(self.block(name, &BTreeMap::new()))
    }

    fn block(&self, name: &str, vars: &BTreeMap<&str, &str>) -> String {
        self.templates[name].render(vars)
    }

    fn vars<'a>(ctx: &'a StageContext) -> BTreeMap<&'static str, &'a str> {
        let mut v = BTreeMap::new();
        v.insert("sentence", ctx.sentence.as_str());
        v.insert("device", ctx.device.as_str());
        if let Some(e) = &ctx.emotion {
            v.insert("emotion", e.as_str());
        }
        if let Some(d) = &ctx.domain_mapping {
            v.insert("domain_mapping", d.as_str());
        }
        if let Some(c) = &ctx.cross_info {
            v.insert("cross_info", c.as_str());
        }
        v
    }

    fn check_sentence(ctx: &StageContext) -> Result<(), PromptError> {
        if ctx.sentence.trim().is_empty() {
            Err(PromptError::EmptySentence)
        } else {
            Ok(())
        }
    }

    /// Pushes the evidence sections present in `ctx`. A section that is
    /// absent without being marked omitted is an error when `required`.
    fn evidence(
        &self,
        ctx: &StageContext,
        stage: Stage,
        want_cross_info: bool,
        blocks: &mut Vec<String>,
    ) -> Result<(), PromptError> {
        let vars = Self::vars(ctx);
        match (&ctx.emotion, ctx.omitted.emotion) {
            (Some(_), _) => blocks.push(self.block("emotion_section", &vars)),
            (None, true) => {}
            (None, false) => return Err(PromptError::MissingField { stage, field: "emotion" }),
        }
        match (&ctx.domain_mapping, ctx.omitted.domain) {
            (Some(_), _) => blocks.push(self.block("domain_section", &vars)),
            (None, true) => {}
            (None, false) => {
                return Err(PromptError::MissingField { stage, field: "domain_mapping" })
            }
        }
        if want_cross_info {
            let section = match ctx.device.counterpart() {
                Device::Metaphor => "metaphor_section",
                Device::Hyperbole => "hyperbole_section",
            };
            match (&ctx.cross_info, ctx.omitted.cross_info) {
                (Some(_), _) => blocks.push(self.block(section, &vars)),
                (None, true) => {}
                (None, false) => {
                    return Err(PromptError::MissingField { stage, field: "cross_info" })
                }
            }
        }
        Ok(())
    }

    fn finish(
        blocks: Vec<String>,
        stage: Stage,
        device: Option<Device>,
        answer_grammar: AnswerGrammar,
    ) -> RenderedPrompt {
        RenderedPrompt {
            text: blocks.join("\n\n"),
            stage,
            device,
            answer_grammar,
        }
    }

    pub fn render_emotion_prompt(&self, ctx: &StageContext) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let vars = Self::vars(ctx);
        let blocks = vec![self.block("emotion_instruction", &vars), self.block("sentence", &vars)];
        Ok(Self::finish(blocks, Stage::Emotion, None, AnswerGrammar::FreeText))
    }

    pub fn render_domain_prompt(&self, ctx: &StageContext) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let vars = Self::vars(ctx);
        let mut blocks = vec![self.block("sentence", &vars)];
        match (&ctx.emotion, ctx.omitted.emotion) {
            (Some(_), _) => blocks.push(self.block("emotion_section", &vars)),
            (None, true) => {}
            (None, false) => {
                return Err(PromptError::MissingField { stage: Stage::Domain, field: "emotion" })
            }
        }
        blocks.push(self.block("domain_instruction", &vars));
        blocks.push(self.block("domain_answer", &vars));
        Ok(Self::finish(blocks, Stage::Domain, None, AnswerGrammar::DomainLines))
    }

    /// Asks for free-text analysis of `ctx.device` given the sentence,
    /// emotion and domain mapping.
    pub fn render_cross_info_prompt(&self, ctx: &StageContext) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let vars = Self::vars(ctx);
        let mut blocks = vec![self.block("sentence", &vars)];
        self.evidence(ctx, Stage::CrossInfo, false, &mut blocks)?;
        let instruction = match ctx.device {
            Device::Metaphor => "cross_info_metaphor",
            Device::Hyperbole => "cross_info_hyperbole",
        };
        blocks.push(self.block(instruction, &vars));
        Ok(Self::finish(blocks, Stage::CrossInfo, Some(ctx.device), AnswerGrammar::FreeText))
    }

    /// Final decision for `ctx.device`; `ctx.cross_info` carries the
    /// counterpart device's analysis.
    pub fn render_final_label_prompt(&self, ctx: &StageContext) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let vars = Self::vars(ctx);
        let mut blocks = vec![self.block("sentence", &vars)];
        self.evidence(ctx, Stage::FinalLabel, true, &mut blocks)?;
        let instruction = match ctx.device {
            Device::Hyperbole => "final_hyperbole",
            Device::Metaphor => "final_metaphor",
        };
        blocks.push(self.block(instruction, &vars));
        blocks.push(self.block("label_answer", &vars));
        Ok(Self::finish(blocks, Stage::FinalLabel, Some(ctx.device), AnswerGrammar::Label))
    }

    /// Re-evaluation of a prior decision with the full evidence chain.
    pub fn render_verification_prompt(
        &self,
        ctx: &StageContext,
        prior: crate::corpus::Label,
    ) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let mut vars = Self::vars(ctx);
        vars.insert("prior_label", prior.as_word());
        let mut blocks = vec![self.block("sentence", &vars)];
        self.evidence(ctx, Stage::Verification, true, &mut blocks)?;
        blocks.push(self.block("verification", &vars));
        blocks.push(self.block("label_answer", &vars));
        Ok(Self::finish(blocks, Stage::Verification, Some(ctx.device), AnswerGrammar::Label))
    }

    pub fn render_baseline_prompt(&self, sentence: &str, mode: BaselineMode) -> Result<RenderedPrompt, PromptError> {
        let ctx = StageContext::new(sentence, Device::Hyperbole);
        self.render_joint_prompt(&ctx, mode)
    }

    /// Single prompt asking for both labels. In `Together` mode any emotion
    /// and domain evidence in `ctx` is included.
    pub fn render_joint_prompt(&self, ctx: &StageContext, mode: BaselineMode) -> Result<RenderedPrompt, PromptError> {
        Self::check_sentence(ctx)?;
        let vars = Self::vars(ctx);
        let (instruction, stage) = match mode {
            BaselineMode::Standard => ("baseline_standard", Stage::BaselineStandard),
            BaselineMode::Cot => ("baseline_cot", Stage::BaselineCot),
            BaselineMode::Together => ("baseline_standard", Stage::BaselineTogether),
        };
        let mut blocks = vec![self.block(instruction, &vars), self.block("sentence", &vars)];
        if mode == BaselineMode::Together {
            if ctx.emotion.is_some() {
                blocks.push(self.block("emotion_section", &vars));
            }
            if ctx.domain_mapping.is_some() {
                blocks.push(self.block("domain_section", &vars));
            }
        }
        blocks.push(self.block("baseline_answer", &vars));
        Ok(Self::finish(blocks, stage, None, AnswerGrammar::DeviceLabels))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}
