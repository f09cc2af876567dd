//! Scripted workflow scenarios shared by the simulation tests and the
//! acceptance run.

use std::collections::BTreeMap;

use misattrib_core::label::{Misattribution, Score};
use misattrib_core::synth::{workflow_script, ScriptedTask};
use misattrib_core::taxonomy::SecondaryCategory;
use misattrib_core::workflow::{QcMode, QcReport, QcVerdict, Role, WorkflowState};

pub const BASE: [&str; 6] = ["ann-0", "ann-1", "ann-2", "ann-3", "ann-4", "ann-5"];
pub const EXPERTS: [&str; 2] = ["expert-a", "expert-b"];

pub fn staffed() -> WorkflowState {
    let mut w = WorkflowState::new();
    for a in BASE {
        w.add_annotator(a, Role::Base);
    }
    for e in EXPERTS {
        w.add_annotator(e, Role::SeniorExpert);
    }
    w
}

/// Trio of task `i`: a rotating window over the base pool.
pub fn trio(i: usize) -> [&'static str; 3] {
    [BASE[i % 6], BASE[(i + 1) % 6], BASE[(i + 2) % 6]]
}

/// Creates and annotates one task per scripted item.
pub fn annotate_script(w: &mut WorkflowState, script: &[ScriptedTask]) {
    for (i, t) in script.iter().enumerate() {
        let names = trio(i);
        w.create_task(t.item_id.clone(), names).unwrap();
        for (k, (score, m)) in t.annotations.iter().enumerate() {
            w.submit_annotation(&t.item_id, names[k], *score, *m, (i * 3 + k) as u64).unwrap();
        }
    }
}

pub fn scripted_batch(n: usize, unanimous: usize, seed: u64) -> (WorkflowState, Vec<ScriptedTask>) {
    let script = workflow_script(n, unanimous, seed);
    let mut w = staffed();
    annotate_script(&mut w, &script);
    (w, script)
}

/// Majority label of a scripted task.
pub fn majority(t: &ScriptedTask) -> (Score, Misattribution) {
    let a = &t.annotations;
    if a[0] == a[1] || a[0] == a[2] {
        a[0]
    } else {
        a[1]
    }
}

/// A label that differs from `label` in both fields.
pub fn wrong(label: (Score, Misattribution)) -> QcVerdict {
    if label.1.is_null() {
        QcVerdict { score: Score::new(1).unwrap(), misattribution: Misattribution::Category(SecondaryCategory::Typo) }
    } else {
        QcVerdict { score: Score::new(3).unwrap(), misattribution: Misattribution::Null }
    }
}

/// Accepts every task with its majority label (expert A), puts them all in
/// one batch, and has expert B check the sample, agreeing on the first
/// `matches` sampled tasks only.
pub fn qc_with_matches(n: usize, matches: usize, seed: u64) -> (WorkflowState, QcReport) {
    let (mut w, script) = scripted_batch(n, n, 17);
    let labels: BTreeMap<String, (Score, Misattribution)> =
        script.iter().map(|t| (t.item_id.clone(), majority(t))).collect();
    for (id, (s, m)) in &labels {
        w.adjudicate(id, EXPERTS[0], *s, *m, 0).unwrap();
    }
    let batches = w.partition(1).unwrap();
    let sample = w.start_qc(&batches[0], seed, QcMode::Blind).unwrap().qc_sample.clone();
    let verdicts = sample
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (s, m) = labels[id];
            let v = if i < matches { QcVerdict { score: s, misattribution: m } } else { wrong((s, m)) };
            (id.clone(), v)
        })
        .collect();
    let report = w.submit_qc_verdicts(&batches[0], EXPERTS[1], &verdicts).unwrap();
    (w, report)
}
