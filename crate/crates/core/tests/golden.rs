//! Rendered prompts for every stage and mode, compared against files in
//! `tests/golden`. Set `FIGLENS_UPDATE_GOLDEN=1` to rewrite them.

use std::path::PathBuf;

use figlens::corpus::Label;
use figlens::prompts::{BaselineMode, Omitted, StageContext, TemplateSet};
use figlens::Device;

const SENTENCE: &str = "Time is a butcher's knife that carves every face without mercy.";
const EMOTION: &str = "The sentence conveys a cruel and ruthless feeling about the passing of time.";
const DOMAIN: &str = "Source domain: butcher's knife\nTarget domain: time\nConnection: cruel, ruthless force";
const X_M: &str = "Time is described through a butcher's knife; the knife stands for the damage time does.";
const X_H: &str = "Carving every face without mercy overstates how harshly time marks people.";

fn full(device: Device) -> StageContext {
    let counterpart = if device == Device::Hyperbole { X_M } else { X_H };
    StageContext::new(SENTENCE, device)
        .with_emotion(EMOTION)
        .with_domain(DOMAIN)
        .with_cross_info(counterpart)
}

fn without(device: Device, emotion: bool, domain: bool, cross: bool) -> StageContext {
    let mut ctx = full(device).omitting(Omitted {
        emotion,
        domain,
        cross_info: cross,
    });
    if emotion {
        ctx.emotion = None;
    }
    if domain {
        ctx.domain_mapping = None;
    }
    if cross {
        ctx.cross_info = None;
    }
    ctx
}

fn cases() -> Vec<(&'static str, String)> {
    let t = TemplateSet::builtin();
    let h = Device::Hyperbole;
    let m = Device::Metaphor;
    let txt = |r: Result<figlens::prompts::RenderedPrompt, _>| r.unwrap().text;
    vec![
        ("emotion", txt(t.render_emotion_prompt(&full(h)))),
        ("domain", txt(t.render_domain_prompt(&full(h)))),
        ("domain_wo_emotion", txt(t.render_domain_prompt(&without(h, true, false, false)))),
        ("cross_info_metaphor", txt(t.render_cross_info_prompt(&full(m)))),
        ("cross_info_hyperbole", txt(t.render_cross_info_prompt(&full(h)))),
        ("cross_info_hyperbole_wo_emotion", txt(t.render_cross_info_prompt(&without(h, true, false, false)))),
        ("cross_info_hyperbole_wo_domain", txt(t.render_cross_info_prompt(&without(h, false, true, false)))),
        ("final_hyperbole", txt(t.render_final_label_prompt(&full(h)))),
        ("final_metaphor", txt(t.render_final_label_prompt(&full(m)))),
        ("final_hyperbole_wo_emotion", txt(t.render_final_label_prompt(&without(h, true, false, false)))),
        ("final_hyperbole_wo_domain", txt(t.render_final_label_prompt(&without(h, false, true, false)))),
        ("final_hyperbole_wo_interaction", txt(t.render_final_label_prompt(&without(h, false, false, true)))),
        ("final_metaphor_wo_interaction", txt(t.render_final_label_prompt(&without(m, false, false, true)))),
        ("verification_hyperbole", txt(t.render_verification_prompt(&full(h), Label::Positive))),
        ("verification_metaphor", txt(t.render_verification_prompt(&full(m), Label::Negative))),
        ("baseline_standard", txt(t.render_baseline_prompt(SENTENCE, BaselineMode::Standard))),
        ("baseline_cot", txt(t.render_baseline_prompt(SENTENCE, BaselineMode::Cot))),
        ("together", txt(t.render_joint_prompt(&full(h), BaselineMode::Together))),
    ]
}

#[test]
fn prompts_match_golden_files() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("FIGLENS_UPDATE_GOLDEN").is_some();
    let mut mismatches = Vec::new();
    for (name, text) in cases() {
        let path = dir.join(format!("{name}.txt"));
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
        if expected != text {
            mismatches.push(format!("{name}:\n--- expected\n{expected}\n--- rendered\n{text}"));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n\n"));
}

#[test]
fn together_without_evidence_is_the_standard_prompt() {
    let t = TemplateSet::builtin();
    let bare = StageContext::new(SENTENCE, Device::Hyperbole);
    assert_eq!(
        t.render_joint_prompt(&bare, BaselineMode::Together).unwrap().text,
        t.render_baseline_prompt(SENTENCE, BaselineMode::Standard).unwrap().text
    );
}

#[test]
fn written_template_dir_renders_identically() {
    let tmp = tempfile::tempdir().unwrap();
    TemplateSet::builtin().write_dir(tmp.path()).unwrap();
    let loaded = TemplateSet::load_dir(tmp.path()).unwrap();
    assert_eq!(loaded.version(), TemplateSet::builtin().version());
    let ctx = full(Device::Metaphor);
    assert_eq!(
        loaded.render_final_label_prompt(&ctx).unwrap(),
        TemplateSet::builtin().render_final_label_prompt(&ctx).unwrap()
    );
}
