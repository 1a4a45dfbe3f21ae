//! Labeling backend: task queue, trust-gated annotators, trust-weighted label
//! aggregation and an adjudication queue.
//!
//! Every accepted state change is an [`Event`]. Events are validated against
//! the current state, appended to the journal when one is attached, then
//! applied. Replaying a journal therefore rebuilds the exact same state.
//! Aggregates are derived on demand from judgments and current trust scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::trainset::{Label, LabeledExample, Provenance};

pub const SENSITIVITY_NOTICE: &str = "Content warning: the text below may contain offensive, hateful or \
disturbing language. You may stop at any time and your completed work is kept.";

pub const LABELING_CRITERION: &str = "Choose \"discrimination\" when the text expresses, endorses or \
recounts hostility or unfair treatment aimed at people because of their race, ethnicity or national origin, \
even when that bias is only one of several motives. Choose \"no discrimination\" for everything else.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotationError {
    #[error("annotator {0} is not active")]
    AnnotatorInactive(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} already exists")]
    DuplicateTask(String),
    #[error("task {task} is not assigned to annotator {annotator}")]
    NotAssigned { task: String, annotator: String },
    #[error("annotator {annotator} already judged task {task}")]
    DuplicateJudgment { task: String, annotator: String },
    #[error("task {0} is not in conflict")]
    NotInConflict(String),
    #[error("empty identifier")]
    EmptyId,
    #[error("journal: {0}")]
    Journal(String),
}

type AResult<T> = std::result::Result<T, AnnotationError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Judgments needed before a task can resolve.
    pub min_judgments: usize,
    /// Every `test_rate`-th task served to an annotator is a hidden test task.
    pub test_rate: usize,
    pub trust_gate: f64,
    /// Test tasks seen before the trust gate applies.
    pub gate_after: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { min_judgments: 2, test_rate: 10, trust_gate: 0.8, gate_after: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Annotator {
    pub annotator_id: String,
    pub trust: f64,
    pub test_correct: u32,
    pub test_seen: u32,
    pub active: bool,
    /// Judgments submitted, test tasks included.
    pub completed: usize,
    pub stopped: bool,
    /// Completed work stays payable whether the annotator stopped or was removed.
    pub payment_eligible: bool,
}

impl Annotator {
    fn new(id: &str) -> Self {
        Annotator {
            annotator_id: id.to_string(),
            trust: 1.0,
            test_correct: 0,
            test_seen: 0,
            active: true,
            completed: 0,
            stopped: false,
            payment_eligible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator_id: String,
    pub label: Label,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateStatus {
    Pending,
    Resolved,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedLabel {
    pub task_id: String,
    /// Leading label; `None` before any judgment or on a tie.
    pub label: Option<Label>,
    pub confidence: f64,
    pub status: AggregateStatus,
    /// `crowd` or `adjudicated` once resolved.
    pub provenance: Option<String>,
    /// (winning mass - losing mass) / total mass.
    pub margin: f64,
    pub judgments: usize,
}

/// What an annotator sees: text only, never who else judged it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_id: String,
    pub text: String,
    pub sensitivity_notice: String,
    pub labeling_criterion: String,
    pub is_adjudication: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vote {
    pub label: Label,
    pub trust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConflictView {
    pub task_id: String,
    pub text: String,
    pub sensitivity_notice: String,
    pub is_adjudication: bool,
    pub votes: Vec<Vote>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportRow {
    pub task_id: String,
    pub text: String,
    pub label: Label,
    pub confidence: f64,
    pub provenance: String,
    pub margin: f64,
}

impl ExportRow {
    pub fn to_example(&self) -> LabeledExample {
        LabeledExample {
            id: self.task_id.clone(),
            text: self.text.clone(),
            label: self.label,
            confidence: self.confidence,
            provenance: if self.provenance == "adjudicated" { Provenance::Adjudicated } else { Provenance::Crowd },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Export {
    pub rows: Vec<ExportRow>,
    /// `None` when nothing has resolved yet.
    pub mean_confidence: Option<f64>,
}

impl Export {
    /// CSV `task_id,text,label,confidence,provenance,margin`.
    pub fn write_csv<W: Write>(&self, writer: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["task_id", "text", "label", "confidence", "provenance", "margin"])?;
        for r in &self.rows {
            w.write_record([
                r.task_id.as_str(),
                r.text.as_str(),
                r.label.as_str(),
                &r.confidence.to_string(),
                &r.provenance,
                &r.margin.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TaskAdded { task_id: String, text: String, gold: Option<Label> },
    Served { annotator_id: String, task_id: String },
    Judged(Judgment),
    Adjudicated { task_id: String, label: Label, adjudicator_id: String, at: DateTime<Utc> },
    Stopped { annotator_id: String },
}

#[derive(Debug, Clone)]
struct Task {
    id: String,
    text: String,
    gold: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitOutcome {
    pub annotator: Annotator,
    /// Aggregate of the judged task; `None` for hidden test tasks.
    pub aggregate: Option<AggregatedLabel>,
}

pub struct AnnotationService {
    config: ServiceConfig,
    tasks: Vec<Task>,
    index: HashMap<String, usize>,
    /// Regular task indices in insertion order.
    regular: Vec<usize>,
    tests: Vec<usize>,
    annotators: BTreeMap<String, Annotator>,
    judgments: HashMap<usize, Vec<Judgment>>,
    judged: HashSet<(usize, String)>,
    outstanding: HashMap<String, usize>,
    adjudicated: HashMap<usize, Label>,
    journal: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for AnnotationService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationService")
            .field("tasks", &self.tasks.len())
            .field("annotators", &self.annotators.len())
            .finish()
    }
}

impl AnnotationService {
    pub fn new(config: ServiceConfig) -> Self {
        AnnotationService {
            config,
            tasks: Vec::new(),
            index: HashMap::new(),
            regular: Vec::new(),
            tests: Vec::new(),
            annotators: BTreeMap::new(),
            judgments: HashMap::new(),
            judged: HashSet::new(),
            outstanding: HashMap::new(),
            adjudicated: HashMap::new(),
            journal: None,
        }
    }

    /// Replay `path` if it exists, then append all further events to it.
    pub fn with_journal(config: ServiceConfig, path: &Path) -> crate::Result<Self> {
        let mut svc = Self::new(config);
        if path.exists() {
            let f = File::open(path).map_err(|e| crate::Error::io(path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| crate::Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: Event = serde_json::from_str(&line)
                    .map_err(|e| crate::Error::invalid(format!("journal line {}: {e}", i + 1)))?;
                svc.record(ev)?;
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| crate::Error::io(path, e))?;
        svc.journal = Some(Box::new(f));
        Ok(svc)
    }

    /// Attach an arbitrary event sink (already-applied events are not written).
    pub fn set_journal(&mut self, sink: Box<dyn Write + Send>) {
        self.journal = Some(sink);
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn contains_task(&self, task_id: &str) -> bool {
        self.index.contains_key(task_id)
    }

    pub fn add_task(&mut self, task_id: &str, text: &str) -> AResult<()> {
        self.record(Event::TaskAdded { task_id: task_id.into(), text: text.into(), gold: None })
    }

    pub fn add_test_task(&mut self, task_id: &str, text: &str, gold: Label) -> AResult<()> {
        self.record(Event::TaskAdded { task_id: task_id.into(), text: text.into(), gold: Some(gold) })
    }

    /// Next task for an annotator, registering unknown annotators on first
    /// contact. Repeated calls before submitting return the same task.
    pub fn next_task(&mut self, annotator_id: &str) -> AResult<Option<TaskPayload>> {
        if annotator_id.trim().is_empty() {
            return Err(AnnotationError::EmptyId);
        }
        if let Some(a) = self.annotators.get(annotator_id) {
            if !a.active {
                return Err(AnnotationError::AnnotatorInactive(annotator_id.into()));
            }
        }
        if let Some(&t) = self.outstanding.get(annotator_id) {
            return Ok(Some(self.payload(t)));
        }
        let Some(t) = self.choose(annotator_id) else {
            return Ok(None);
        };
        let task_id = self.tasks[t].id.clone();
        self.record(Event::Served { annotator_id: annotator_id.into(), task_id })?;
        Ok(Some(self.payload(t)))
    }

    pub fn submit_judgment(
        &mut self,
        task_id: &str,
        annotator_id: &str,
        label: Label,
        submitted_at: DateTime<Utc>,
    ) -> AResult<SubmitOutcome> {
        let ev = Event::Judged(Judgment {
            task_id: task_id.into(),
            annotator_id: annotator_id.into(),
            label,
            submitted_at,
        });
        self.record(ev)?;
        let t = self.index[task_id];
        Ok(SubmitOutcome {
            annotator: self.annotators[annotator_id].clone(),
            aggregate: self.tasks[t].gold.is_none().then(|| self.aggregate_index(t)),
        })
    }

    /// Voluntary stop: releases any outstanding task and keeps completed work.
    pub fn stop(&mut self, annotator_id: &str) -> AResult<Annotator> {
        self.record(Event::Stopped { annotator_id: annotator_id.into() })?;
        Ok(self.annotators[annotator_id].clone())
    }

    pub fn adjudicate(
        &mut self,
        task_id: &str,
        label: Label,
        adjudicator_id: &str,
        at: DateTime<Utc>,
    ) -> AResult<AggregatedLabel> {
        self.record(Event::Adjudicated {
            task_id: task_id.into(),
            label,
            adjudicator_id: adjudicator_id.into(),
            at,
        })?;
        Ok(self.aggregate_index(self.index[task_id]))
    }

    pub fn annotator(&self, annotator_id: &str) -> Option<&Annotator> {
        self.annotators.get(annotator_id)
    }

    pub fn aggregate(&self, task_id: &str) -> AResult<AggregatedLabel> {
        let &t = self.index.get(task_id).ok_or_else(|| AnnotationError::UnknownTask(task_id.into()))?;
        if self.tasks[t].gold.is_some() {
            return Err(AnnotationError::UnknownTask(task_id.into()));
        }
        Ok(self.aggregate_index(t))
    }

    pub fn aggregates(&self) -> Vec<AggregatedLabel> {
        self.regular.iter().map(|&t| self.aggregate_index(t)).collect()
    }

    pub fn conflicts(&self) -> Vec<ConflictView> {
        self.regular
            .iter()
            .filter_map(|&t| {
                let agg = self.aggregate_index(t);
                (agg.status == AggregateStatus::Conflict).then(|| ConflictView {
                    task_id: self.tasks[t].id.clone(),
                    text: self.tasks[t].text.clone(),
                    sensitivity_notice: SENSITIVITY_NOTICE.into(),
                    is_adjudication: true,
                    votes: self
                        .task_judgments(t)
                        .iter()
                        .map(|j| Vote { label: j.label, trust: self.annotators[&j.annotator_id].trust })
                        .collect(),
                    margin: agg.margin,
                })
            })
            .collect()
    }

    /// Every resolved task once, crowd-resolved and adjudicated alike.
    pub fn export(&self) -> Export {
        let rows: Vec<ExportRow> = self
            .regular
            .iter()
            .filter_map(|&t| {
                let agg = self.aggregate_index(t);
                match (agg.status, agg.label, agg.provenance) {
                    (AggregateStatus::Resolved, Some(label), Some(provenance)) => Some(ExportRow {
                        task_id: agg.task_id,
                        text: self.tasks[t].text.clone(),
                        label,
                        confidence: agg.confidence,
                        provenance,
                        margin: agg.margin,
                    }),
                    _ => None,
                }
            })
            .collect();
        let mean_confidence =
            (!rows.is_empty()).then(|| rows.iter().map(|r| r.confidence).sum::<f64>() / rows.len() as f64);
        Export { rows, mean_confidence }
    }

    fn payload(&self, t: usize) -> TaskPayload {
        TaskPayload {
            task_id: self.tasks[t].id.clone(),
            text: self.tasks[t].text.clone(),
            sensitivity_notice: SENSITIVITY_NOTICE.into(),
            labeling_criterion: LABELING_CRITERION.into(),
            is_adjudication: false,
        }
    }

    fn task_judgments(&self, t: usize) -> &[Judgment] {
        self.judgments.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    fn choose(&self, annotator_id: &str) -> Option<usize> {
        let completed = self.annotators.get(annotator_id).map_or(0, |a| a.completed);
        let unjudged = |t: &usize| !self.judged.contains(&(*t, annotator_id.to_string()));
        if self.config.test_rate > 0 && (completed + 1).is_multiple_of(self.config.test_rate) {
            if let Some(&t) = self.tests.iter().find(|t| unjudged(t)) {
                return Some(t);
            }
        }
        self.regular
            .iter()
            .filter(|t| unjudged(t))
            .filter(|&&t| self.aggregate_index(t).status == AggregateStatus::Pending)
            .min_by_key(|&&t| self.task_judgments(t).len())
            .copied()
    }

    fn aggregate_index(&self, t: usize) -> AggregatedLabel {
        let task_id = self.tasks[t].id.clone();
        let js = self.task_judgments(t);
        if let Some(&label) = self.adjudicated.get(&t) {
            return AggregatedLabel {
                task_id,
                label: Some(label),
                confidence: 1.0,
                status: AggregateStatus::Resolved,
                provenance: Some("adjudicated".into()),
                margin: 1.0,
                judgments: js.len(),
            };
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for j in js {
            let w = self.annotators[&j.annotator_id].trust;
            if j.label.is_positive() {
                pos += w;
            } else {
                neg += w;
            }
        }
        let total = pos + neg;
        let tie = (pos - neg).abs() <= 1e-12 * total.max(1.0);
        let label = (!js.is_empty() && !tie).then(|| Label::from_bool(pos > neg));
        let (confidence, margin) = if js.is_empty() {
            (0.0, 0.0)
        } else if total <= 0.0 {
            (0.5, 0.0)
        } else {
            (pos.max(neg) / total, (pos - neg).abs() / total)
        };
        let status = if js.len() < self.config.min_judgments {
            AggregateStatus::Pending
        } else if tie {
            AggregateStatus::Conflict
        } else {
            AggregateStatus::Resolved
        };
        AggregatedLabel {
            task_id,
            label,
            confidence: if tie && !js.is_empty() { 0.5 } else { confidence },
            status,
            provenance: (status == AggregateStatus::Resolved).then(|| "crowd".into()),
            margin,
            judgments: js.len(),
        }
    }

    fn validate(&self, ev: &Event) -> AResult<()> {
        let task = |id: &str| self.index.get(id).copied().ok_or_else(|| AnnotationError::UnknownTask(id.into()));
        match ev {
            Event::TaskAdded { task_id, .. } => {
                if task_id.trim().is_empty() {
                    return Err(AnnotationError::EmptyId);
                }
                if self.index.contains_key(task_id) {
                    return Err(AnnotationError::DuplicateTask(task_id.clone()));
                }
            }
            Event::Served { annotator_id, task_id } => {
                task(task_id)?;
                if self.annotators.get(annotator_id).is_some_and(|a| !a.active) {
                    return Err(AnnotationError::AnnotatorInactive(annotator_id.clone()));
                }
            }
            Event::Judged(j) => {
                let t = task(&j.task_id)?;
                let a = self
                    .annotators
                    .get(&j.annotator_id)
                    .ok_or_else(|| AnnotationError::UnknownAnnotator(j.annotator_id.clone()))?;
                if !a.active {
                    return Err(AnnotationError::AnnotatorInactive(j.annotator_id.clone()));
                }
                if self.judged.contains(&(t, j.annotator_id.clone())) {
                    return Err(AnnotationError::DuplicateJudgment {
                        task: j.task_id.clone(),
                        annotator: j.annotator_id.clone(),
                    });
                }
                if self.outstanding.get(&j.annotator_id) != Some(&t) {
                    return Err(AnnotationError::NotAssigned {
                        task: j.task_id.clone(),
                        annotator: j.annotator_id.clone(),
                    });
                }
            }
            Event::Adjudicated { task_id, .. } => {
                let t = task(task_id)?;
                if self.tasks[t].gold.is_some() || self.aggregate_index(t).status != AggregateStatus::Conflict {
                    return Err(AnnotationError::NotInConflict(task_id.clone()));
                }
                if self.adjudicated.contains_key(&t) {
                    return Err(AnnotationError::NotInConflict(task_id.clone()));
                }
            }
            Event::Stopped { annotator_id } => {
                if !self.annotators.contains_key(annotator_id) {
                    return Err(AnnotationError::UnknownAnnotator(annotator_id.clone()));
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, ev: Event) {
        match ev {
            Event::TaskAdded { task_id, text, gold } => {
                let t = self.tasks.len();
                self.index.insert(task_id.clone(), t);
                if gold.is_some() {
                    self.tests.push(t);
                } else {
                    self.regular.push(t);
                }
                self.tasks.push(Task { id: task_id, text, gold });
            }
            Event::Served { annotator_id, task_id } => {
                let a = self.annotators.entry(annotator_id.clone()).or_insert_with(|| Annotator::new(&annotator_id));
                a.stopped = false;
                self.outstanding.insert(annotator_id, self.index[&task_id]);
            }
            Event::Judged(j) => {
                let t = self.index[&j.task_id];
                self.outstanding.remove(&j.annotator_id);
                self.judged.insert((t, j.annotator_id.clone()));
                let gate = (self.config.gate_after, self.config.trust_gate);
                let a = self.annotators.get_mut(&j.annotator_id).expect("validated");
                a.completed += 1;
                a.payment_eligible = true;
                if let Some(gold) = self.tasks[t].gold {
                    a.test_seen += 1;
                    if gold == j.label {
                        a.test_correct += 1;
                    }
                    a.trust = a.test_correct as f64 / a.test_seen as f64;
                    if a.test_seen >= gate.0 && a.trust < gate.1 {
                        a.active = false;
                        log::info!("annotator {} removed at trust {:.3}", a.annotator_id, a.trust);
                    }
                }
                self.judgments.entry(t).or_default().push(j);
            }
            Event::Adjudicated { task_id, label, .. } => {
                self.adjudicated.insert(self.index[&task_id], label);
            }
            Event::Stopped { annotator_id } => {
                self.outstanding.remove(&annotator_id);
                if let Some(a) = self.annotators.get_mut(&annotator_id) {
                    a.stopped = true;
                }
            }
        }
    }

    fn record(&mut self, ev: Event) -> AResult<()> {
        self.validate(&ev)?;
        if let Some(j) = self.journal.as_mut() {
            let line = serde_json::to_string(&ev).map_err(|e| AnnotationError::Journal(e.to_string()))?;
            writeln!(j, "{line}")
                .and_then(|_| j.flush())
                .map_err(|e| AnnotationError::Journal(e.to_string()))?;
        }
        self.apply(ev);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: Label = Label::Discrimination;
    const N: Label = Label::NoDiscrimination;

    fn now() -> DateTime<Utc> {
        DateTime::from_timestamp(1_600_000_000, 0).unwrap()
    }

    fn service(n: usize) -> AnnotationService {
        let mut s = AnnotationService::new(ServiceConfig::default());
        for i in 0..n {
            s.add_task(&format!("t{i}"), &format!("text {i}")).unwrap();
        }
        s
    }

    fn judge(s: &mut AnnotationService, annotator: &str, label: Label) -> SubmitOutcome {
        let task = s.next_task(annotator).unwrap().unwrap();
        s.submit_judgment(&task.task_id, annotator, label, now()).unwrap()
    }

    /// Give `a` the trust `correct / 5` by answering five test tasks.
    fn with_trust(s: &mut AnnotationService, a: &str, correct: u32) {
        let mut cfg = *s.config();
        cfg.test_rate = 1;
        let saved = std::mem::replace(&mut s.config, cfg);
        for i in 0..5 {
            let id = format!("gold-{a}-{i}");
            s.add_test_task(&id, "gold", D).unwrap();
        }
        for i in 0..5u32 {
            let t = s.next_task(a).unwrap().unwrap();
            assert!(t.task_id.starts_with("gold"));
            s.submit_judgment(&t.task_id, a, if i < correct { D } else { N }, now()).unwrap();
        }
        s.config = saved;
    }

    #[test]
    fn both_annotators_get_the_first_task() {
        let mut s = service(3);
        assert_eq!(s.next_task("a").unwrap().unwrap().task_id, "t0");
        assert_eq!(s.next_task("b").unwrap().unwrap().task_id, "t0");
    }

    #[test]
    fn refetch_returns_outstanding_task() {
        let mut s = service(3);
        let first = s.next_task("a").unwrap().unwrap();
        assert_eq!(s.next_task("a").unwrap().unwrap(), first);
    }

    #[test]
    fn payload_carries_notice_and_criterion() {
        let mut s = service(1);
        let p = s.next_task("a").unwrap().unwrap();
        assert_eq!(p.sensitivity_notice, SENSITIVITY_NOTICE);
        assert_eq!(p.labeling_criterion, LABELING_CRITERION);
        assert!(!p.is_adjudication);
    }

    #[test]
    fn unanimous_is_certain() {
        let mut s = service(1);
        judge(&mut s, "a", D);
        let out = judge(&mut s, "b", D);
        let agg = out.aggregate.unwrap();
        assert_eq!(agg.status, AggregateStatus::Resolved);
        assert_eq!(agg.confidence, 1.0);
        assert_eq!(agg.label, Some(D));
    }

    #[test]
    fn weighted_split() {
        let mut s = service(1);
        s.add_test_task("g0", "g", D).unwrap();
        // b answers 9 of 10 test tasks correctly
        let mut cfg = *s.config();
        cfg.test_rate = 1;
        s.config = cfg;
        for i in 1..10 {
            s.add_test_task(&format!("g{i}"), "g", D).unwrap();
        }
        for i in 0..10 {
            let t = s.next_task("b").unwrap().unwrap();
            s.submit_judgment(&t.task_id, "b", if i == 0 { N } else { D }, now()).unwrap();
        }
        s.config = ServiceConfig::default();
        assert!((s.annotator("b").unwrap().trust - 0.9).abs() < 1e-15);
        judge(&mut s, "a", D);
        let agg = judge(&mut s, "b", N).aggregate.unwrap();
        assert_eq!(agg.label, Some(D));
        assert_eq!(agg.status, AggregateStatus::Resolved);
        assert!((agg.confidence - 1.0 / 1.9).abs() < 1e-12);
    }

    #[test]
    fn equal_trust_split_is_conflict_then_adjudicated() {
        let mut s = service(1);
        with_trust(&mut s, "a", 4);
        with_trust(&mut s, "b", 4);
        assert_eq!(s.annotator("a").unwrap().trust, 0.8);
        judge(&mut s, "a", D);
        let agg = judge(&mut s, "b", N).aggregate.unwrap();
        assert_eq!(agg.status, AggregateStatus::Conflict);
        assert_eq!(s.conflicts().len(), 1);
        assert!(s.export().rows.is_empty());

        let adj = s.adjudicate("t0", N, "lead", now()).unwrap();
        assert_eq!((adj.status, adj.confidence, adj.label), (AggregateStatus::Resolved, 1.0, Some(N)));
        assert_eq!(adj.provenance.as_deref(), Some("adjudicated"));
        assert!(s.conflicts().is_empty());
        let ex = s.export();
        assert_eq!(ex.rows.len(), 1);
        assert_eq!(ex.rows[0].to_example().provenance, Provenance::Adjudicated);
        assert!(matches!(s.adjudicate("t0", D, "lead", now()), Err(AnnotationError::NotInConflict(_))));
    }

    #[test]
    fn adjudicating_resolved_task_fails() {
        let mut s = service(1);
        judge(&mut s, "a", D);
        judge(&mut s, "b", D);
        assert!(matches!(s.adjudicate("t0", N, "lead", now()), Err(AnnotationError::NotInConflict(_))));
    }

    #[test]
    fn low_accuracy_annotator_is_removed() {
        let mut s = service(4);
        with_trust(&mut s, "a", 3);
        let a = s.annotator("a").unwrap();
        assert!(!a.active);
        assert!((a.trust - 0.6).abs() < 1e-15);
        assert!(a.payment_eligible);
        assert!(matches!(s.next_task("a"), Err(AnnotationError::AnnotatorInactive(_))));
    }

    #[test]
    fn gate_waits_for_five_tests() {
        let mut s = service(2);
        let mut cfg = *s.config();
        cfg.test_rate = 1;
        s.config = cfg;
        for i in 0..4 {
            s.add_test_task(&format!("g{i}"), "g", D).unwrap();
        }
        for _ in 0..4 {
            let t = s.next_task("a").unwrap().unwrap();
            s.submit_judgment(&t.task_id, "a", N, now()).unwrap();
        }
        let a = s.annotator("a").unwrap();
        assert_eq!(a.trust, 0.0);
        assert!(a.active);
    }

    #[test]
    fn duplicate_and_unassigned_rejected() {
        let mut s = service(2);
        judge(&mut s, "a", D);
        assert!(matches!(
            s.submit_judgment("t0", "a", D, now()),
            Err(AnnotationError::DuplicateJudgment { .. })
        ));
        assert!(matches!(
            s.submit_judgment("t1", "a", D, now()),
            Err(AnnotationError::NotAssigned { .. })
        ));
        assert!(matches!(s.submit_judgment("t1", "zz", D, now()), Err(AnnotationError::UnknownAnnotator(_))));
    }

    #[test]
    fn test_tasks_interleave_at_rate() {
        let mut s = service(30);
        s.add_test_task("gold", "g", D).unwrap();
        let mut served = Vec::new();
        for _ in 0..12 {
            let t = s.next_task("a").unwrap().unwrap();
            served.push(t.task_id.clone());
            s.submit_judgment(&t.task_id, "a", D, now()).unwrap();
        }
        assert_eq!(served.iter().position(|t| t == "gold"), Some(9));
        assert_eq!(served.iter().filter(|t| *t == "gold").count(), 1);
    }

    #[test]
    fn queue_drains_to_empty() {
        let mut s = service(1);
        judge(&mut s, "a", D);
        judge(&mut s, "b", D);
        assert_eq!(s.next_task("c").unwrap(), None);
        assert_eq!(s.next_task("a").unwrap(), None);
    }

    #[test]
    fn stop_keeps_work() {
        let mut s = service(3);
        judge(&mut s, "a", D);
        s.next_task("a").unwrap();
        let a = s.stop("a").unwrap();
        assert!(a.stopped && a.payment_eligible);
        assert_eq!(a.completed, 1);
        // the released task can be served again after resuming
        assert_eq!(s.next_task("a").unwrap().unwrap().task_id, "t1");
    }

    #[test]
    fn journal_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let mut s = AnnotationService::with_journal(ServiceConfig::default(), &path).unwrap();
            for i in 0..3 {
                s.add_task(&format!("t{i}"), "x").unwrap();
            }
            with_trust(&mut s, "a", 4);
            with_trust(&mut s, "b", 4);
            // both fetch before either submits, so both judge t0
            assert_eq!(s.next_task("a").unwrap().unwrap().task_id, "t0");
            assert_eq!(s.next_task("b").unwrap().unwrap().task_id, "t0");
            s.submit_judgment("t0", "a", D, now()).unwrap();
            s.submit_judgment("t0", "b", N, now()).unwrap();
            judge(&mut s, "a", D);
            s.next_task("b").unwrap();
        }
        let s = AnnotationService::with_journal(ServiceConfig::default(), &path).unwrap();
        assert_eq!(s.conflicts().len(), 1);
        assert_eq!(s.annotator("a").unwrap().completed, 7);
        assert_eq!(s.outstanding.get("b"), Some(&s.index["t2"]));
    }

    #[test]
    fn confidence_bounds_and_unanimity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut s = service(4);
            let n_ann = rng.random_range(2..6);
            for a in 0..n_ann {
                let id = format!("a{a}");
                with_trust(&mut s, &id, rng.random_range(4..=5));
                for _ in 0..4 {
                    if let Some(t) = s.next_task(&id).unwrap() {
                        let l = Label::from_bool(rng.random_bool(0.5));
                        s.submit_judgment(&t.task_id, &id, l, now()).unwrap();
                    }
                }
            }
            for agg in s.aggregates() {
                assert!((0.0..=1.0).contains(&agg.confidence));
                let js = s.task_judgments(s.index[&agg.task_id]);
                if !js.is_empty() && js.iter().all(|j| j.label == js[0].label) {
                    assert_eq!(agg.confidence, 1.0);
                }
            }
        }
    }
}
