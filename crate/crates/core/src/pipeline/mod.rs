//! Per-sentence stage graph.
//!
//! In the full mode a sentence goes through emotion analysis, domain
//! mapping, one cross-device analysis per device, one label decision per
//! device (conditioned on the *other* device's analysis) and an optional
//! bounded re-evaluation of each decision. Every call is captured as a
//! [`StageRecord`] in the sentence's [`PipelineTrace`].

mod parse;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Label, SentenceRecord};
use crate::device::Device;
use crate::gateway::{CompletionRequest, Gateway, GatewayError, ProviderConfig, Session};
use crate::prompts::{BaselineMode, Omitted, PromptError, RenderedPrompt, Stage, StageContext, TemplateSet};

pub use parse::{parse_device_labels, parse_domain_mapping, parse_label, DomainMapping, ParseError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Emobi,
    Separate,
    Together,
    BaselineStandard,
    BaselineCot,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Emobi => "emobi",
            RunMode::Separate => "separate",
            RunMode::Together => "together",
            RunMode::BaselineStandard => "baseline_standard",
            RunMode::BaselineCot => "baseline_cot",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "emobi" => Ok(RunMode::Emobi),
            "separate" => Ok(RunMode::Separate),
            "together" => Ok(RunMode::Together),
            "baseline_standard" => Ok(RunMode::BaselineStandard),
            "baseline_cot" => Ok(RunMode::BaselineCot),
            other => Err(format!("unknown run_mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            model_id: "mock".into(),
            temperature: 0.0,
            max_tokens: 1024,
            stop: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_mode: RunMode,
    pub use_emotion: bool,
    pub use_domain: bool,
    pub use_interaction: bool,
    pub use_verification: bool,
    pub max_verification_rounds: u32,
    /// Extra fresh attempts when a label response has no grammar line.
    pub label_retries: u32,
    pub template_set: String,
    pub record_timing: bool,
    pub decoding: Decoding,
    pub provider: ProviderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_mode: RunMode::Emobi,
            use_emotion: true,
            use_domain: true,
            use_interaction: true,
            use_verification: true,
            max_verification_rounds: 1,
            label_retries: 0,
            template_set: "default".into(),
            record_timing: false,
            decoding: Decoding::default(),
            provider: ProviderConfig::default(),
        }
    }
}

/// The four single-component ablations of the full pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Emotion,
    Interaction,
    Domain,
    Verification,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Emotion,
        Ablation::Interaction,
        Ablation::Domain,
        Ablation::Verification,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Emotion => "w/o emotion",
            Ablation::Interaction => "w/o interaction",
            Ablation::Domain => "w/o domain",
            Ablation::Verification => "w/o verification",
        }
    }

    /// The stage whose calls this ablation removes.
    pub fn stage(self) -> Stage {
        match self {
            Ablation::Emotion => Stage::Emotion,
            Ablation::Interaction => Stage::CrossInfo,
            Ablation::Domain => Stage::Domain,
            Ablation::Verification => Stage::Verification,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.decoding.temperature.is_finite() || self.decoding.temperature < 0.0 {
            return Err("decoding.temperature must be >= 0".into());
        }
        if self.decoding.max_tokens == 0 {
            return Err("decoding.max_tokens must be >= 1".into());
        }
        if self.decoding.model_id.is_empty() {
            return Err("decoding.model_id must not be empty".into());
        }
        self.provider.validate().map_err(|e| format!("provider: {e}"))
    }

    /// Copy with exactly one component switched off.
    pub fn ablated(&self, ablation: Ablation) -> PipelineConfig {
        let mut cfg = self.clone();
        match ablation {
            Ablation::Emotion => cfg.use_emotion = false,
            Ablation::Interaction => cfg.use_interaction = false,
            Ablation::Domain => cfg.use_domain = false,
            Ablation::Verification => cfg.use_verification = false,
        }
        cfg
    }

    fn omitted(&self) -> Omitted {
        Omitted {
            emotion: !self.use_emotion,
            domain: !self.use_domain,
            cross_info: !self.use_interaction,
        }
    }

    fn request(&self, prompt: &RenderedPrompt) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.text.clone(),
            model_id: self.decoding.model_id.clone(),
            temperature: self.decoding.temperature,
            max_tokens: self.decoding.max_tokens,
            stop: self.decoding.stop.clone(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{source}; raw response: {raw:?}")]
    Unparseable {
        #[source]
        source: ParseError,
        raw: String,
    },
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage{} failed: {failure}", device.map(|d| format!(" ({d})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub device: Option<Device>,
    #[source]
    pub failure: StageFailure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionAnalysis {
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhetoricInfo {
    pub device: Device,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub device: Device,
    pub label: Label,
    pub rationale: String,
    pub verification_rounds: u32,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub hyperbole: LabelDecision,
    pub metaphor: LabelDecision,
}

impl Decisions {
    pub fn get(&self, device: Device) -> &LabelDecision {
        match device {
            Device::Hyperbole => &self.hyperbole,
            Device::Metaphor => &self.metaphor,
        }
    }
}

/// What a stage's response was parsed into.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Emotion(EmotionAnalysis),
    Domain(DomainMapping),
    CrossInfo(RhetoricInfo),
    Label { label: Label },
    JointLabels { hyperbole: Label, metaphor: Label },
    ParseFailure { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<Device>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub prompt: String,
    pub response: String,
    pub parsed: Artifact,
    pub cached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub record: SentenceRecord,
    pub run_mode: RunMode,
    pub template_version: String,
    pub config_fingerprint: String,
    pub stages: Vec<StageRecord>,
    pub decisions: Decisions,
}

impl PipelineTrace {
    pub fn stages_of(&self, stage: Stage) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(move |s| s.stage == stage)
    }

    pub fn prediction(&self, device: Device) -> Label {
        self.decisions.get(device).label
    }
}

/// A sentence whose pipeline aborted, with the stages completed before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceFailure {
    pub record: SentenceRecord,
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<Device>,
    pub error: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub traces: Vec<PipelineTrace>,
    pub failures: Vec<SentenceFailure>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    templates: TemplateSet,
    fingerprint: String,
}

/// Stage calls for one sentence.
struct SentenceRun<'p, 'g> {
    pipeline: &'p Pipeline,
    session: Session<'g>,
    stages: Vec<StageRecord>,
}

type StageResult<T> = Result<T, PipelineError>;

fn stage_err(stage: Stage, device: Option<Device>, failure: impl Into<StageFailure>) -> PipelineError {
    PipelineError {
        stage,
        device,
        failure: failure.into(),
    }
}

impl SentenceRun<'_, '_> {
    fn render(
        &self,
        stage: Stage,
        device: Option<Device>,
        r: Result<RenderedPrompt, PromptError>,
    ) -> StageResult<RenderedPrompt> {
        r.map_err(|e| stage_err(stage, device, e))
    }

    /// Issues the prompt and records the exchange; `parse` turns the raw
    /// text into the stage artifact.
    fn call<T>(
        &mut self,
        prompt: &RenderedPrompt,
        round: Option<u32>,
        fresh: bool,
        parse: impl FnOnce(&str) -> (Artifact, T),
    ) -> StageResult<T> {
        let cfg = &self.pipeline.cfg;
        let req = cfg.request(prompt);
        let started = Instant::now();
        let resp = if fresh {
            self.session.complete_fresh(&req)
        } else {
            self.session.complete(&req)
        }
        .map_err(|e| stage_err(prompt.stage, prompt.device, e))?;
        let (artifact, value) = parse(&resp.text);
        self.stages.push(StageRecord {
            stage: prompt.stage,
            device: prompt.device,
            round,
            prompt: prompt.text.clone(),
            response: resp.text,
            parsed: artifact,
            cached: resp.cached,
            elapsed_ms: cfg.record_timing.then(|| started.elapsed().as_millis() as u64),
        });
        Ok(value)
    }

    fn analyze_emotion(&mut self, sentence: &str) -> StageResult<EmotionAnalysis> {
        let ctx = StageContext::new(sentence, Device::Hyperbole);
        let prompt = self.render(Stage::Emotion, None, self.pipeline.templates.render_emotion_prompt(&ctx))?;
        self.call(&prompt, None, false, |text| {
            let e = EmotionAnalysis { raw: text.to_string() };
            (Artifact::Emotion(e.clone()), e)
        })
    }

    fn map_domains(&mut self, sentence: &str, emotion: Option<&EmotionAnalysis>, omitted: Omitted) -> StageResult<DomainMapping> {
        let mut ctx = StageContext::new(sentence, Device::Hyperbole).omitting(omitted);
        ctx.emotion = emotion.map(|e| e.raw.clone());
        let prompt = self.render(Stage::Domain, None, self.pipeline.templates.render_domain_prompt(&ctx))?;
        self.call(&prompt, None, false, |text| {
            let d = parse_domain_mapping(text);
            (Artifact::Domain(d.clone()), d)
        })
    }

    fn derive_cross_info(&mut self, ctx: &StageContext) -> StageResult<RhetoricInfo> {
        let device = ctx.device;
        let prompt = self.render(
            Stage::CrossInfo,
            Some(device),
            self.pipeline.templates.render_cross_info_prompt(ctx),
        )?;
        self.call(&prompt, None, false, |text| {
            let info = RhetoricInfo { device, raw: text.to_string() };
            (Artifact::CrossInfo(info.clone()), info)
        })
    }

    fn label_call(&mut self, prompt: &RenderedPrompt, round: Option<u32>, fresh: bool) -> StageResult<Result<(Label, String), ParseError>> {
        self.call(prompt, round, fresh, |text| match parse_label(text) {
            Ok(label) => (Artifact::Label { label }, Ok((label, text.to_string()))),
            Err(e) => (Artifact::ParseFailure { error: e.to_string() }, Err(e)),
        })
    }

    fn detect_label(&mut self, ctx: &StageContext) -> StageResult<LabelDecision> {
        let device = ctx.device;
        let prompt = self.render(
            Stage::FinalLabel,
            Some(device),
            self.pipeline.templates.render_final_label_prompt(ctx),
        )?;
        let mut outcome = self.label_call(&prompt, None, false)?;
        for _ in 0..self.pipeline.cfg.label_retries {
            if outcome.is_ok() {
                break;
            }
            outcome = self.label_call(&prompt, None, true)?;
        }
        match outcome {
            Ok((label, rationale)) => Ok(LabelDecision {
                device,
                label,
                rationale,
                verification_rounds: 0,
                flipped: false,
            }),
            Err(source) => {
                let raw = self.stages.last().map(|s| s.response.clone()).unwrap_or_default();
                Err(stage_err(
                    Stage::FinalLabel,
                    Some(device),
                    StageFailure::Unparseable { source, raw },
                ))
            }
        }
    }

    /// Re-asks up to `max_rounds` times, stopping as soon as a round agrees
    /// with the current label. An unparseable round keeps the current label
    /// and ends verification.
    fn verify(&mut self, mut decision: LabelDecision, ctx: &StageContext, max_rounds: u32) -> StageResult<LabelDecision> {
        let initial = decision.label;
        for round in 1..=max_rounds {
            decision.verification_rounds = round;
            let prompt = self.render(
                Stage::Verification,
                Some(ctx.device),
                self.pipeline.templates.render_verification_prompt(ctx, decision.label),
            )?;
            match self.label_call(&prompt, Some(round), false)? {
                Ok((label, rationale)) => {
                    let agreed = label == decision.label;
                    decision.label = label;
                    decision.rationale = rationale;
                    if agreed {
                        break;
                    }
                }
                Err(e) => {
                    log::warn!("verification round {round} for {} unparseable: {e}", ctx.device);
                    break;
                }
            }
        }
        decision.flipped = decision.label != initial;
        Ok(decision)
    }

    fn joint(&mut self, ctx: &StageContext, mode: BaselineMode) -> StageResult<Decisions> {
        let stage = match mode {
            BaselineMode::Standard => Stage::BaselineStandard,
            BaselineMode::Cot => Stage::BaselineCot,
            BaselineMode::Together => Stage::BaselineTogether,
        };
        let prompt = self.render(stage, None, self.pipeline.templates.render_joint_prompt(ctx, mode))?;
        let outcome = self.call(&prompt, None, false, |text| match parse_device_labels(text) {
            Ok((h, m)) => (Artifact::JointLabels { hyperbole: h, metaphor: m }, Ok((h, m, text.to_string()))),
            Err(e) => (Artifact::ParseFailure { error: e.to_string() }, Err(e)),
        })?;
        let (h, m, text) = outcome.map_err(|source| {
            let raw = self.stages.last().map(|s| s.response.clone()).unwrap_or_default();
            stage_err(stage, None, StageFailure::Unparseable { source, raw })
        })?;
        let decision = |device, label| LabelDecision {
            device,
            label,
            rationale: text.clone(),
            verification_rounds: 0,
            flipped: false,
        };
        Ok(Decisions {
            hyperbole: decision(Device::Hyperbole, h),
            metaphor: decision(Device::Metaphor, m),
        })
    }

    fn run(&mut self, sentence: &str) -> StageResult<Decisions> {
        let cfg = &self.pipeline.cfg;
        match cfg.run_mode {
            RunMode::Emobi => self.run_full(sentence),
            RunMode::Separate => self.run_separate(sentence),
            RunMode::Together => {
                let emotion = self.analyze_emotion(sentence)?;
                let domain = self.map_domains(sentence, Some(&emotion), Omitted::default())?;
                let ctx = StageContext::new(sentence, Device::Hyperbole)
                    .with_emotion(emotion.raw)
                    .with_domain(domain.raw);
                self.joint(&ctx, BaselineMode::Together)
            }
            RunMode::BaselineStandard => self.joint(&StageContext::new(sentence, Device::Hyperbole), BaselineMode::Standard),
            RunMode::BaselineCot => self.joint(&StageContext::new(sentence, Device::Hyperbole), BaselineMode::Cot),
        }
    }

    fn run_full(&mut self, sentence: &str) -> StageResult<Decisions> {
        let cfg = self.pipeline.cfg.clone();
        let omitted = cfg.omitted();
        let emotion = if cfg.use_emotion { Some(self.analyze_emotion(sentence)?) } else { None };
        let domain = if cfg.use_domain {
            Some(self.map_domains(sentence, emotion.as_ref(), omitted)?)
        } else {
            None
        };
        let base = |device| {
            let mut ctx = StageContext::new(sentence, device).omitting(omitted);
            ctx.emotion = emotion.as_ref().map(|e| e.raw.clone());
            ctx.domain_mapping = domain.as_ref().map(|d| d.raw.clone());
            ctx
        };

        // x_m feeds the hyperbole decision and x_h the metaphor decision
        let mut info = [None, None];
        if cfg.use_interaction {
            for (slot, device) in [(0, Device::Metaphor), (1, Device::Hyperbole)] {
                info[slot] = Some(self.derive_cross_info(&base(device))?);
            }
        }

        let decide = |run: &mut Self, device: Device| -> StageResult<LabelDecision> {
            let mut ctx = base(device);
            let counterpart = match device.counterpart() {
                Device::Metaphor => &info[0],
                Device::Hyperbole => &info[1],
            };
            ctx.cross_info = counterpart.as_ref().map(|i| i.raw.clone());
            let decision = run.detect_label(&ctx)?;
            if cfg.use_verification {
                run.verify(decision, &ctx, cfg.max_verification_rounds)
            } else {
                Ok(decision)
            }
        };
        let hyperbole = decide(self, Device::Hyperbole)?;
        let metaphor = decide(self, Device::Metaphor)?;
        Ok(Decisions { hyperbole, metaphor })
    }

    fn run_separate(&mut self, sentence: &str) -> StageResult<Decisions> {
        let cfg = self.pipeline.cfg.clone();
        let omitted = Omitted { cross_info: true, ..cfg.omitted() };
        let decide = |run: &mut Self, device: Device| -> StageResult<LabelDecision> {
            let emotion = if cfg.use_emotion { Some(run.analyze_emotion(sentence)?) } else { None };
            let domain = if cfg.use_domain {
                Some(run.map_domains(sentence, emotion.as_ref(), omitted)?)
            } else {
                None
            };
            let mut ctx = StageContext::new(sentence, device).omitting(omitted);
            ctx.emotion = emotion.map(|e| e.raw);
            ctx.domain_mapping = domain.map(|d| d.raw);
            run.detect_label(&ctx)
        };
        let hyperbole = decide(self, Device::Hyperbole)?;
        let metaphor = decide(self, Device::Metaphor)?;
        Ok(Decisions { hyperbole, metaphor })
    }
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, templates: TemplateSet) -> Result<Pipeline, String> {
        cfg.validate()?;
        let fingerprint = config_fingerprint(&cfg, &templates);
        Ok(Pipeline {
            cfg,
            templates,
            fingerprint,
        })
    }

    /// Resolves `cfg.template_set` and builds the pipeline.
    pub fn from_config(cfg: PipelineConfig) -> Result<Pipeline, String> {
        let templates = TemplateSet::resolve(&cfg.template_set).map_err(|e| e.to_string())?;
        Pipeline::new(cfg, templates)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Runs every stage for one sentence. On failure the stages completed
    /// so far are returned with the error.
    pub fn run_pipeline(&self, gateway: &Gateway, record: &SentenceRecord) -> Result<PipelineTrace, SentenceFailure> {
        let mut run = SentenceRun {
            pipeline: self,
            session: gateway.session(),
            stages: Vec::new(),
        };
        match run.run(&record.text) {
            Ok(decisions) => Ok(PipelineTrace {
                record: record.clone(),
                run_mode: self.cfg.run_mode,
                template_version: self.templates.version(),
                config_fingerprint: self.fingerprint.clone(),
                stages: run.stages,
                decisions,
            }),
            Err(e) => Err(SentenceFailure {
                record: record.clone(),
                stage: e.stage,
                device: e.device,
                error: e.to_string(),
                stages: run.stages,
            }),
        }
    }

    /// Runs sentences on up to `concurrency` worker threads. Output order
    /// follows input order; a failed sentence never stops the batch.
    pub fn run_batch(&self, gateway: &Gateway, records: &[SentenceRecord], concurrency: usize) -> BatchOutput {
        let workers = concurrency.max(1).min(records.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<PipelineTrace, SentenceFailure>>>> =
            Mutex::new((0..records.len()).map(|_| None).collect());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(record) = records.get(i) else { break };
                    let outcome = self.run_pipeline(gateway, record);
                    if let Err(f) = &outcome {
                        log::warn!("sentence {} failed: {}", f.record.id, f.error);
                    }
                    slots.lock().unwrap()[i] = Some(outcome);
                });
            }
        });

        let mut out = BatchOutput::default();
        for slot in slots.into_inner().unwrap() {
            match slot.expect("every index is processed") {
                Ok(t) => out.traces.push(t),
                Err(f) => out.failures.push(f),
            }
        }
        out
    }

    /// Number of provider calls a sentence needs when every label parses
    /// and verification agrees in its first round.
    pub fn expected_calls(&self) -> usize {
        let c = &self.cfg;
        match c.run_mode {
            RunMode::Emobi => {
                let verify = if c.use_verification { 2 * (c.max_verification_rounds.min(1) as usize) } else { 0 };
                c.use_emotion as usize + c.use_domain as usize + 2 * c.use_interaction as usize + 2 + verify
            }
            RunMode::Separate => 2 * (c.use_emotion as usize + c.use_domain as usize + 1),
            RunMode::Together => 3,
            RunMode::BaselineStandard | RunMode::BaselineCot => 1,
        }
    }
}

/// Digest of the behavior-relevant configuration and the template content.
pub fn config_fingerprint(cfg: &PipelineConfig, templates: &TemplateSet) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update([0]);
    h.update(templates.version().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}
