#![allow(dead_code)]

use std::path::{Path, PathBuf};

use figlens::corpus::{load_dataset, ColumnFormat, Dataset, DatasetSpec, Label, SentenceRecord};
use figlens::gateway::{MockRule, ProviderConfig};
use figlens::pipeline::PipelineConfig;
use figlens::Device;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_spec() -> DatasetSpec {
    DatasetSpec {
        name: Dataset::Hypo,
        path: fixture_path("fixture20.csv"),
        format: ColumnFormat::default(),
        split: None,
    }
}

pub fn fixture_records() -> Vec<SentenceRecord> {
    let records = load_dataset(&fixture_spec()).expect("fixture loads");
    for a in &records {
        for b in &records {
            assert!(a.id == b.id || !a.text.contains(&b.text), "fixture texts must not nest");
        }
    }
    records
}

/// The scripted prediction for a fixture sentence: the gold label with a
/// few deterministic flips so that metrics are not trivially perfect.
pub fn predicted(index: usize, record: &SentenceRecord, device: Device) -> Label {
    let (gold, flip) = match device {
        Device::Hyperbole => (record.hyperbole_gold, index % 5 == 2),
        Device::Metaphor => (record.metaphor_gold, index % 6 == 4),
    };
    if flip {
        Label::from_bit(1 - gold.bit()).unwrap()
    } else {
        gold
    }
}

pub fn emotion_text(r: &SentenceRecord) -> String {
    format!("[EMO {}] The speaker sounds intense and earnest.", r.id)
}

pub fn domain_text(r: &SentenceRecord) -> String {
    format!("Source domain: SRC-{0}\nTarget domain: TGT-{0}\nConnection: CON-{0}", r.id)
}

pub fn cross_text(r: &SentenceRecord, device: Device) -> String {
    format!("[X-{} {}] notes on {} use.", device, r.id, device)
}

pub fn final_text(r: &SentenceRecord, device: Device, label: Label) -> String {
    format!("[FIN {} {}] reasoning.\nLabel: {}", device, r.id, label.as_word())
}

/// Rules answering every stage of every mode for `records`. Responses are
/// unique per sentence so threading can be checked verbatim; verification
/// always confirms the prior label.
pub fn fixture_rules(records: &[SentenceRecord]) -> Vec<MockRule> {
    let mut rules = vec![
        MockRule::new(&["Re-evaluate", "was \"yes\""], "Confirmed.\nLabel: yes"),
        MockRule::new(&["Re-evaluate", "was \"no\""], "Confirmed.\nLabel: no"),
    ];
    for (i, r) in records.iter().enumerate() {
        let t = r.text.as_str();
        let h = predicted(i, r, Device::Hyperbole);
        let m = predicted(i, r, Device::Metaphor);
        rules.push(MockRule::new(&["Please analyze the emotion", t], emotion_text(r)));
        rules.push(MockRule::new(&["identify the source domain", t], domain_text(r)));
        rules.push(MockRule::new(&["uses metaphor", t], cross_text(r, Device::Metaphor)));
        rules.push(MockRule::new(&["uses hyperbole", t], cross_text(r, Device::Hyperbole)));
        rules.push(MockRule::new(&["is a hyperbole sentence", t], final_text(r, Device::Hyperbole, h)));
        rules.push(MockRule::new(&["is a metaphor sentence", t], final_text(r, Device::Metaphor, m)));
        rules.push(MockRule::new(
            &["Hyperbole: <yes|no>", t],
            format!("Joint reasoning for {}.\nHyperbole: {}\nMetaphor: {}", r.id, h.as_word(), m.as_word()),
        ));
    }
    rules
}

pub fn mock_config(records: &[SentenceRecord]) -> PipelineConfig {
    PipelineConfig {
        provider: ProviderConfig::scripted(fixture_rules(records)),
        ..PipelineConfig::default()
    }
}
