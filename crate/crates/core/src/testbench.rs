//! AB/ABX listening-test plans and response aggregation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TRIALS_PER_LISTENER: usize = 16;
pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TestbenchError {
    #[error("not enough utterances for {needed} trials: only {available} resolvable")]
    InsufficientStimuli { needed: usize, available: usize },
    #[error("no utterance has stimuli for both {0} and {1}")]
    UnpairedUtterance(String, String),
    #[error("ABX pairing {0} vs {1} needs a reference system present for the same utterance")]
    MissingReference(String, String),
    #[error("AB pairing {0} vs {1} must not carry a reference")]
    UnexpectedReference(String, String),
    #[error("pairing compares {0} with itself")]
    SelfPairing(String),
    #[error("no pairings given")]
    NoPairings,
    #[error("stimulus id {0} is not unique")]
    DuplicateStimulus(String),
    #[error("utterance {utt_id} has more than one stimulus for system {system_tag}")]
    AmbiguousStimulus { utt_id: String, system_tag: String },
    #[error("confidence {0} outside 1..7")]
    BadConfidence(i64),
    #[error("response refers to trial {0}, which is not in the plan")]
    UnknownTrial(usize),
    #[error("session {session_id} answered trial {trial_index} twice")]
    DuplicateResponse { session_id: String, trial_index: usize },
    #[error("plan file line {line}: {message}")]
    BadPlanFile { line: usize, message: String },
    #[error("response log line {line}: {message}")]
    BadResponseLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TestbenchError> = std::result::Result<T, E>;

/// First or second language, for each of voice quality, segmentals and prosody.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    L1,
    L2,
}

/// `{Q, S, P}`: voice quality, segmental and prosodic origin of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionTriplet {
    pub q: Lang,
    pub s: Lang,
    pub p: Lang,
}

impl fmt::Display for ConditionTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = |l: Lang| if l == Lang::L1 { 1 } else { 2 };
        write!(f, "Q{}S{}P{}", n(self.q), n(self.s), n(self.p))
    }
}

impl FromStr for ConditionTriplet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let b = s.as_bytes();
        let lang = |c: u8| match c {
            b'1' => Ok(Lang::L1),
            b'2' => Ok(Lang::L2),
            _ => Err(format!("bad condition {s:?}")),
        };
        if b.len() != 6 || b[0] != b'Q' || b[2] != b'S' || b[4] != b'P' {
            return Err(format!("bad condition {s:?}, expected like Q1S2P1"));
        }
        Ok(Self {
            q: lang(b[1])?,
            s: lang(b[3])?,
            p: lang(b[5])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimulus {
    pub stim_id: String,
    pub path: PathBuf,
    pub condition: ConditionTriplet,
    pub utt_id: String,
    pub system_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Comprehensibility,
    VoiceSimilarity,
    ProsodySimilarity,
}

impl Question {
    pub fn as_str(self) -> &'static str {
        match self {
            Question::Comprehensibility => "comprehensibility",
            Question::VoiceSimilarity => "voice_similarity",
            Question::ProsodySimilarity => "prosody_similarity",
        }
    }

    /// Instructions shown to the listener.
    pub fn text(self) -> &'static str {
        match self {
            Question::Comprehensibility => {
                "Listen to recordings A and B. Select the recording that required the least effort \
                 to understand. Focus on the words being uttered by the speaker, and ignore noise or \
                 distortions in the audio. Then rate your confidence from 1 (not confident at all) \
                 to 7 (extremely confident)."
            }
            Question::VoiceSimilarity => {
                "Listen to recordings A and B, then to the reference X. Select the recording whose \
                 voice (timbre) is closest to the speaker in X. Focus only on the voice, and ignore \
                 noise or distortions in the audio. Then rate your confidence from 1 (not confident \
                 at all) to 7 (extremely confident)."
            }
            Question::ProsodySimilarity => {
                "Listen to recordings A and B, then to the reference X. Select the recording whose \
                 speaking style (speaking rate, pauses, intonation) is closest to X, and ignore noise \
                 or distortions in the audio. Then rate your confidence from 1 (not confident at all) \
                 to 7 (extremely confident)."
            }
        }
    }
}

impl FromStr for Question {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "comprehensibility" => Ok(Question::Comprehensibility),
            "voice_similarity" => Ok(Question::VoiceSimilarity),
            "prosody_similarity" => Ok(Question::ProsodySimilarity),
            _ => Err(format!("unknown question {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Design {
    Ab,
    Abx,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Ab => "AB",
            Design::Abx => "ABX",
        })
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "AB" => Ok(Design::Ab),
            "ABX" => Ok(Design::Abx),
            _ => Err(format!("unknown design {s:?}")),
        }
    }
}

/// Two systems to compare. For VSS, `system_1` is the baseline and
/// `system_2` the proposed system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub system_1: String,
    pub system_2: String,
    pub reference: Option<String>,
    pub question: Question,
}

impl Pairing {
    pub fn ab(system_1: &str, system_2: &str) -> Self {
        Self {
            system_1: system_1.into(),
            system_2: system_2.into(),
            reference: None,
            question: Question::Comprehensibility,
        }
    }

    pub fn abx(baseline: &str, proposed: &str, reference: &str, question: Question) -> Self {
        Self {
            system_1: baseline.into(),
            system_2: proposed.into(),
            reference: Some(reference.into()),
            question,
        }
    }

    pub fn label(&self) -> String {
        format!("{} vs {}", self.system_1, self.system_2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub trial_index: usize,
    pub pairing: usize,
    pub slot_a: String,
    pub slot_b: String,
    pub reference_x: Option<String>,
    pub question: Question,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPlan {
    pub plan_id: String,
    pub design: Design,
    pub trials_per_listener: usize,
    pub seed: u64,
    pub pairings: Vec<Pairing>,
    pub stimuli: Vec<Stimulus>,
    pub trials: Vec<Trial>,
}

impl TestPlan {
    pub fn stimulus(&self, stim_id: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.stim_id == stim_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" | "a" => Ok(Choice::A),
            "B" | "b" => Ok(Choice::B),
            _ => Err(format!("choice must be A or B, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResponse {
    pub session_id: String,
    pub trial_index: usize,
    pub choice: Choice,
    pub confidence: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// Which side of a baseline/proposed comparison the listener picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Baseline,
    Proposed,
}

pub fn check_confidence(confidence: i64) -> Result<u8> {
    if (1..=7).contains(&confidence) {
        Ok(confidence as u8)
    } else {
        Err(TestbenchError::BadConfidence(confidence))
    }
}

/// Voice similarity score: `+confidence` for the proposed system,
/// `-confidence` for the baseline.
pub fn vss(side: Side, confidence: i64) -> Result<i8> {
    let c = check_confidence(confidence)? as i8;
    Ok(match side {
        Side::Proposed => c,
        Side::Baseline => -c,
    })
}

pub fn build_test_plan(
    plan_id: &str,
    stimuli: Vec<Stimulus>,
    design: Design,
    pairings: Vec<Pairing>,
    trials_per_listener: usize,
    seed: u64,
) -> Result<TestPlan> {
    if pairings.is_empty() {
        return Err(TestbenchError::NoPairings);
    }
    let mut ids = HashSet::new();
    let mut by_utt: BTreeMap<(&str, &str), &Stimulus> = BTreeMap::new();
    for s in &stimuli {
        if !ids.insert(s.stim_id.as_str()) {
            return Err(TestbenchError::DuplicateStimulus(s.stim_id.clone()));
        }
        if by_utt.insert((&s.utt_id, &s.system_tag), s).is_some() {
            return Err(TestbenchError::AmbiguousStimulus {
                utt_id: s.utt_id.clone(),
                system_tag: s.system_tag.clone(),
            });
        }
    }

    // utterances each pairing can be asked about
    let mut resolvable: Vec<BTreeSet<&str>> = Vec::with_capacity(pairings.len());
    for p in &pairings {
        if p.system_1 == p.system_2 {
            return Err(TestbenchError::SelfPairing(p.system_1.clone()));
        }
        match (design, &p.reference) {
            (Design::Ab, Some(_)) => {
                return Err(TestbenchError::UnexpectedReference(p.system_1.clone(), p.system_2.clone()))
            }
            (Design::Abx, None) => {
                return Err(TestbenchError::MissingReference(p.system_1.clone(), p.system_2.clone()))
            }
            _ => {}
        }
        let paired: BTreeSet<&str> = stimuli
            .iter()
            .filter(|s| s.system_tag == p.system_1)
            .map(|s| s.utt_id.as_str())
            .filter(|u| by_utt.contains_key(&(*u, p.system_2.as_str())))
            .collect();
        if paired.is_empty() {
            return Err(TestbenchError::UnpairedUtterance(p.system_1.clone(), p.system_2.clone()));
        }
        let usable: BTreeSet<&str> = match &p.reference {
            Some(r) => paired.into_iter().filter(|u| by_utt.contains_key(&(*u, r.as_str()))).collect(),
            None => paired,
        };
        if usable.is_empty() {
            return Err(TestbenchError::MissingReference(p.system_1.clone(), p.system_2.clone()));
        }
        resolvable.push(usable);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = stimuli.iter().map(|s| s.utt_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    order.shuffle(&mut rng);
    let first_parity: bool = rng.random();

    let mut used: HashSet<&str> = HashSet::new();
    let mut swaps: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut trials = Vec::with_capacity(trials_per_listener);
    for trial_index in 0..trials_per_listener {
        let pi = trial_index % pairings.len();
        let p = &pairings[pi];
        let Some(&utt) = order.iter().find(|u| !used.contains(*u) && resolvable[pi].contains(*u)) else {
            let available = trial_index
                + order.iter().filter(|u| !used.contains(*u) && resolvable.iter().any(|r| r.contains(*u))).count();
            return Err(TestbenchError::InsufficientStimuli { needed: trials_per_listener, available });
        };
        used.insert(utt);

        let (lo, hi) = if p.system_1 <= p.system_2 { (&p.system_1, &p.system_2) } else { (&p.system_2, &p.system_1) };
        let count = swaps.entry((lo.clone(), hi.clone())).or_default();
        let lo_first = (*count % 2 == 0) == first_parity;
        *count += 1;
        let (a, b) = if lo_first { (lo, hi) } else { (hi, lo) };
        trials.push(Trial {
            trial_index,
            pairing: pi,
            slot_a: by_utt[&(utt, a.as_str())].stim_id.clone(),
            slot_b: by_utt[&(utt, b.as_str())].stim_id.clone(),
            reference_x: p.reference.as_ref().map(|r| by_utt[&(utt, r.as_str())].stim_id.clone()),
            question: p.question,
        });
    }

    Ok(TestPlan {
        plan_id: plan_id.to_string(),
        design,
        trials_per_listener,
        seed,
        pairings,
        stimuli,
        trials,
    })
}

/// Counts for one system inside one pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSummary {
    pub system: String,
    pub chosen: usize,
    pub choice_pct: f64,
    /// Mean confidence over the responses that chose this system.
    pub mean_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingSummary {
    pub pairing: Pairing,
    /// Answered trials.
    pub n: usize,
    pub systems: [SystemSummary; 2],
    /// ABX only; positive favours `system_2`.
    pub mean_vss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub plan_id: String,
    pub pairings: Vec<PairingSummary>,
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("plan_id,pairing,system,n,chosen,choice_pct,mean_confidence,mean_vss\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for p in &self.pairings {
            for s in &p.systems {
                out.push_str(&format!(
                    "{},{},{},{},{},{:.4},{},{}\n",
                    self.plan_id,
                    p.pairing.label(),
                    s.system,
                    p.n,
                    s.chosen,
                    s.choice_pct,
                    opt(s.mean_confidence),
                    opt(p.mean_vss)
                ));
            }
        }
        out
    }
}

pub fn aggregate(responses: &[TrialResponse], plan: &TestPlan) -> Result<Aggregate> {
    let mut seen = HashSet::new();
    // per pairing: [chosen, confidence sum] for system_1 and system_2, plus vss sum
    let mut tallies = vec![([(0usize, 0u64); 2], 0i64); plan.pairings.len()];
    for r in responses {
        let trial = plan.trials.get(r.trial_index).ok_or(TestbenchError::UnknownTrial(r.trial_index))?;
        if !seen.insert((r.session_id.as_str(), r.trial_index)) {
            return Err(TestbenchError::DuplicateResponse {
                session_id: r.session_id.clone(),
                trial_index: r.trial_index,
            });
        }
        let confidence = check_confidence(r.confidence as i64)?;
        let picked = match r.choice {
            Choice::A => &trial.slot_a,
            Choice::B => &trial.slot_b,
        };
        let pairing = &plan.pairings[trial.pairing];
        let tag = plan.stimulus(picked).map(|s| s.system_tag.as_str()).unwrap_or_default();
        let side = if tag == pairing.system_2 { 1 } else { 0 };
        let t = &mut tallies[trial.pairing];
        t.0[side].0 += 1;
        t.0[side].1 += confidence as u64;
        t.1 += vss(if side == 1 { Side::Proposed } else { Side::Baseline }, confidence as i64)? as i64;
    }

    let pairings = plan
        .pairings
        .iter()
        .zip(&tallies)
        .map(|(p, (sides, vss_sum))| {
            let n = sides[0].0 + sides[1].0;
            let summary = |system: &str, (chosen, conf): (usize, u64)| SystemSummary {
                system: system.to_string(),
                chosen,
                choice_pct: if n == 0 { 0.0 } else { 100.0 * chosen as f64 / n as f64 },
                mean_confidence: (chosen > 0).then(|| conf as f64 / chosen as f64),
            };
            PairingSummary {
                pairing: p.clone(),
                n,
                systems: [summary(&p.system_1, sides[0]), summary(&p.system_2, sides[1])],
                mean_vss: (plan.design == Design::Abx && n > 0).then(|| *vss_sum as f64 / n as f64),
            }
        })
        .collect();
    Ok(Aggregate {
        plan_id: plan.plan_id.clone(),
        pairings,
    })
}

fn check_field(value: &str, line: usize) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(TestbenchError::BadPlanFile {
            line,
            message: format!("field {value:?} must be non-empty without tabs or newlines"),
        });
    }
    Ok(())
}

/// Tab-separated, versioned text form of a plan: a header of `key value`
/// records, then one `pairing`, `stimulus` or `trial` record per line.
pub fn plan_to_text(plan: &TestPlan) -> Result<String> {
    let mut out = String::from("# vqdr listening-test plan\n");
    out.push_str(&format!("version\t{PLAN_FORMAT_VERSION}\n"));
    check_field(&plan.plan_id, 0)?;
    out.push_str(&format!("plan_id\t{}\n", plan.plan_id));
    out.push_str(&format!("design\t{}\n", plan.design));
    out.push_str(&format!("trials_per_listener\t{}\n", plan.trials_per_listener));
    out.push_str(&format!("seed\t{}\n", plan.seed));
    for p in &plan.pairings {
        out.push_str(&format!(
            "pairing\t{}\t{}\t{}\t{}\n",
            p.system_1,
            p.system_2,
            p.reference.as_deref().unwrap_or("-"),
            p.question.as_str()
        ));
    }
    for s in &plan.stimuli {
        let path = s.path.to_string_lossy();
        for f in [s.stim_id.as_str(), &s.utt_id, &s.system_tag, &path] {
            check_field(f, 0)?;
        }
        out.push_str(&format!("stimulus\t{}\t{}\t{}\t{}\t{}\n", s.stim_id, s.utt_id, s.system_tag, s.condition, path));
    }
    for t in &plan.trials {
        out.push_str(&format!(
            "trial\t{}\t{}\t{}\t{}\t{}\t{}\n",
            t.trial_index,
            t.pairing,
            t.question.as_str(),
            t.slot_a,
            t.slot_b,
            t.reference_x.as_deref().unwrap_or("-")
        ));
    }
    Ok(out)
}

pub fn plan_from_text(text: &str) -> Result<TestPlan> {
    let mut header: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut pairings = Vec::new();
    let mut stimuli = Vec::new();
    let mut trials = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let bad = |message: String| TestbenchError::BadPlanFile { line, message };
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        let arity = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(bad(format!("{} record needs {} fields, found {}", f[0], n, f.len())))
            }
        };
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let opt = |s: &str| (s != "-").then(|| s.to_string());
        match f[0] {
            "version" | "plan_id" | "design" | "trials_per_listener" | "seed" => {
                arity(2)?;
                if header.insert(f[0], (line, f[1])).is_some() {
                    return Err(bad(format!("repeated {}", f[0])));
                }
            }
            "pairing" => {
                arity(5)?;
                pairings.push(Pairing {
                    system_1: f[1].into(),
                    system_2: f[2].into(),
                    reference: opt(f[3]),
                    question: f[4].parse().map_err(bad)?,
                });
            }
            "stimulus" => {
                arity(6)?;
                stimuli.push(Stimulus {
                    stim_id: f[1].into(),
                    utt_id: f[2].into(),
                    system_tag: f[3].into(),
                    condition: f[4].parse().map_err(bad)?,
                    path: PathBuf::from(f[5]),
                });
            }
            "trial" => {
                arity(7)?;
                trials.push(Trial {
                    trial_index: num(f[1])?,
                    pairing: num(f[2])?,
                    question: f[3].parse().map_err(bad)?,
                    slot_a: f[4].into(),
                    slot_b: f[5].into(),
                    reference_x: opt(f[6]),
                });
            }
            other => return Err(bad(format!("unknown record {other:?}"))),
        }
    }

    let get = |key: &str| {
        header.get(key).copied().ok_or_else(|| TestbenchError::BadPlanFile {
            line: 0,
            message: format!("missing {key}"),
        })
    };
    let parse_err = |(line, v): (usize, &str), what: &str| TestbenchError::BadPlanFile {
        line,
        message: format!("bad {what} {v:?}"),
    };
    let version = get("version")?;
    if version.1 != PLAN_FORMAT_VERSION.to_string() {
        return Err(parse_err(version, "version"));
    }
    let design = get("design")?;
    let tpl = get("trials_per_listener")?;
    let seed = get("seed")?;
    let plan = TestPlan {
        plan_id: get("plan_id")?.1.to_string(),
        design: design.1.parse().map_err(|_| parse_err(design, "design"))?,
        trials_per_listener: tpl.1.parse().map_err(|_| parse_err(tpl, "trials_per_listener"))?,
        seed: seed.1.parse().map_err(|_| parse_err(seed, "seed"))?,
        pairings,
        stimuli,
        trials,
    };
    validate_plan(&plan)?;
    Ok(plan)
}

fn validate_plan(plan: &TestPlan) -> Result<()> {
    let bad = |message: String| TestbenchError::BadPlanFile { line: 0, message };
    let ids: HashSet<&str> = plan.stimuli.iter().map(|s| s.stim_id.as_str()).collect();
    if ids.len() != plan.stimuli.len() {
        return Err(bad("stimulus ids are not unique".into()));
    }
    if plan.trials.len() != plan.trials_per_listener {
        return Err(bad(format!(
            "{} trials listed, trials_per_listener is {}",
            plan.trials.len(),
            plan.trials_per_listener
        )));
    }
    for (i, t) in plan.trials.iter().enumerate() {
        if t.trial_index != i {
            return Err(bad(format!("trial {} listed at position {i}", t.trial_index)));
        }
        if t.pairing >= plan.pairings.len() {
            return Err(bad(format!("trial {i} refers to unknown pairing {}", t.pairing)));
        }
        if t.slot_a == t.slot_b {
            return Err(bad(format!("trial {i} plays the same stimulus in both slots")));
        }
        if t.reference_x.is_some() != (plan.design == Design::Abx) {
            return Err(bad(format!("trial {i}: reference presence does not match design {}", plan.design)));
        }
        for s in [Some(&t.slot_a), Some(&t.slot_b), t.reference_x.as_ref()].into_iter().flatten() {
            if !ids.contains(s.as_str()) {
                return Err(bad(format!("trial {i} refers to unknown stimulus {s}")));
            }
        }
    }
    Ok(())
}

pub fn save_plan(plan: &TestPlan, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, plan_to_text(plan)?)?;
    Ok(())
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<TestPlan> {
    plan_from_text(&std::fs::read_to_string(path)?)
}

pub fn response_to_json(r: &TrialResponse) -> String {
    serde_json::to_string(r).expect("response serializes")
}

/// Parses a JSONL response log. A torn final line (no trailing newline)
/// is ignored.
pub fn parse_responses(text: &str) -> Result<Vec<TrialResponse>> {
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TestbenchError::BadResponseLog {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L1: Lang = Lang::L1;
    const L2: Lang = Lang::L2;

    fn stimuli(n_utts: usize, tags: &[(&str, ConditionTriplet)]) -> Vec<Stimulus> {
        (0..n_utts)
            .flat_map(|u| {
                tags.iter().map(move |(tag, cond)| Stimulus {
                    stim_id: format!("{tag}_{u:03}"),
                    path: PathBuf::from(format!("{tag}/utt{u:03}.wav")),
                    condition: *cond,
                    utt_id: format!("utt{u:03}"),
                    system_tag: tag.to_string(),
                })
            })
            .collect()
    }

    fn abx_stimuli(n: usize) -> Vec<Stimulus> {
        let c = ConditionTriplet { q: L2, s: L1, p: L2 };
        let orig = ConditionTriplet { q: L2, s: L2, p: L2 };
        stimuli(n, &[("baseline", c), ("proposed", c), ("original_L2", orig)])
    }

    fn ab_plan(seed: u64) -> TestPlan {
        let c1 = ConditionTriplet { q: L1, s: L1, p: L1 };
        let c2 = ConditionTriplet { q: L2, s: L2, p: L2 };
        build_test_plan("p", stimuli(20, &[("l1", c1), ("l2", c2)]), Design::Ab, vec![Pairing::ab("l1", "l2")], 16, seed)
            .unwrap()
    }

    fn tag_of<'a>(plan: &'a TestPlan, stim: &str) -> &'a str {
        &plan.stimulus(stim).unwrap().system_tag
    }

    #[test]
    fn sixteen_trials_half_in_slot_a() {
        let plan = ab_plan(3);
        assert_eq!(plan.trials.len(), 16);
        let a = plan.trials.iter().filter(|t| tag_of(&plan, &t.slot_a) == "l1").count();
        assert_eq!(a, 8);
    }

    #[test]
    fn abx_reference_is_original_of_same_utterance() {
        let pairing = Pairing::abx("baseline", "proposed", "original_L2", Question::VoiceSimilarity);
        let plan = build_test_plan("x", abx_stimuli(30), Design::Abx, vec![pairing], 16, 11).unwrap();
        for t in &plan.trials {
            let x = plan.stimulus(t.reference_x.as_ref().unwrap()).unwrap();
            assert_eq!(x.system_tag, "original_L2");
            assert_eq!(x.utt_id, plan.stimulus(&t.slot_a).unwrap().utt_id);
            assert_eq!(x.utt_id, plan.stimulus(&t.slot_b).unwrap().utt_id);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(ab_plan(5), ab_plan(5));
        assert_ne!(ab_plan(5).trials, ab_plan(6).trials);
    }

    #[test]
    fn plan_errors() {
        let c = ConditionTriplet { q: L1, s: L1, p: L1 };
        let few = stimuli(10, &[("a", c), ("b", c)]);
        assert!(matches!(
            build_test_plan("p", few.clone(), Design::Ab, vec![Pairing::ab("a", "b")], 16, 0),
            Err(TestbenchError::InsufficientStimuli { needed: 16, available: 10 })
        ));
        assert!(matches!(
            build_test_plan("p", few.clone(), Design::Ab, vec![Pairing::ab("a", "zzz")], 4, 0),
            Err(TestbenchError::UnpairedUtterance(_, _))
        ));
        assert!(matches!(
            build_test_plan("p", few.clone(), Design::Abx, vec![Pairing::ab("a", "b")], 4, 0),
            Err(TestbenchError::MissingReference(_, _))
        ));
        let with_ref = Pairing::abx("a", "b", "orig", Question::VoiceSimilarity);
        assert!(matches!(
            build_test_plan("p", few.clone(), Design::Abx, vec![with_ref.clone()], 4, 0),
            Err(TestbenchError::MissingReference(_, _))
        ));
        assert!(matches!(
            build_test_plan("p", few.clone(), Design::Ab, vec![with_ref], 4, 0),
            Err(TestbenchError::UnexpectedReference(_, _))
        ));
        let mut dup = few.clone();
        dup[1].stim_id = dup[0].stim_id.clone();
        assert!(matches!(
            build_test_plan("p", dup, Design::Ab, vec![Pairing::ab("a", "b")], 4, 0),
            Err(TestbenchError::DuplicateStimulus(_))
        ));
    }

    #[test]
    fn vss_examples_and_bijection() {
        assert_eq!(vss(Side::Proposed, 7).unwrap(), 7);
        assert_eq!(vss(Side::Baseline, 7).unwrap(), -7);
        assert_eq!(vss(Side::Proposed, 1).unwrap(), 1);
        assert!(matches!(vss(Side::Proposed, 0), Err(TestbenchError::BadConfidence(0))));
        assert!(matches!(vss(Side::Baseline, 8), Err(TestbenchError::BadConfidence(8))));
        let mut image = BTreeSet::new();
        for side in [Side::Baseline, Side::Proposed] {
            for c in 1..=7 {
                image.insert(vss(side, c).unwrap());
            }
        }
        let expected: BTreeSet<i8> = (-7..=7).filter(|&v| v != 0).collect();
        assert_eq!(image, expected);
    }

    fn respond(plan: &TestPlan, session: &str, trial: usize, tag: &str, confidence: u8) -> TrialResponse {
        let t = &plan.trials[trial];
        let choice = if tag_of(plan, &t.slot_a) == tag { Choice::A } else { Choice::B };
        TrialResponse { session_id: session.into(), trial_index: trial, choice, confidence, timestamp: 0 }
    }

    fn abx_plan(seed: u64) -> TestPlan {
        let pairing = Pairing::abx("baseline", "proposed", "original_L2", Question::VoiceSimilarity);
        build_test_plan("x", abx_stimuli(30), Design::Abx, vec![pairing], 16, seed).unwrap()
    }

    #[test]
    fn aggregate_counts() {
        let plan = abx_plan(1);
        let rs = vec![
            respond(&plan, "s", 0, "proposed", 5),
            respond(&plan, "s", 1, "proposed", 5),
            respond(&plan, "s", 2, "proposed", 5),
            respond(&plan, "s", 3, "baseline", 5),
        ];
        let agg = aggregate(&rs, &plan).unwrap();
        let p = &agg.pairings[0];
        assert_eq!(p.n, 4);
        assert_eq!(p.systems[1].choice_pct, 75.0);
        assert_eq!(p.systems[0].choice_pct, 25.0);
        assert_eq!(p.systems[1].mean_confidence, Some(5.0));
        assert_eq!(p.systems[0].mean_confidence, Some(5.0));
    }

    #[test]
    fn aggregate_vss() {
        let plan = abx_plan(2);
        let rs = vec![respond(&plan, "s", 0, "proposed", 7), respond(&plan, "s", 1, "baseline", 3)];
        let agg = aggregate(&rs, &plan).unwrap();
        assert_eq!(agg.pairings[0].mean_vss, Some(2.0));
    }

    #[test]
    fn aggregate_empty_and_errors() {
        let plan = abx_plan(2);
        let agg = aggregate(&[], &plan).unwrap();
        assert_eq!(agg.pairings[0].n, 0);
        assert_eq!(agg.pairings[0].systems[0].choice_pct, 0.0);
        assert_eq!(agg.pairings[0].mean_vss, None);
        assert_eq!(agg.to_csv().lines().count(), 3);

        let r = respond(&plan, "s", 0, "proposed", 7);
        assert!(matches!(aggregate(&[r.clone(), r.clone()], &plan), Err(TestbenchError::DuplicateResponse { .. })));
        let far = TrialResponse { trial_index: 99, ..r.clone() };
        assert!(matches!(aggregate(&[far], &plan), Err(TestbenchError::UnknownTrial(99))));
        let other_session = TrialResponse { session_id: "t".into(), ..r.clone() };
        assert_eq!(aggregate(&[r, other_session], &plan).unwrap().pairings[0].n, 2);
    }

    #[test]
    fn plan_text_round_trip() {
        for plan in [ab_plan(4), abx_plan(4)] {
            let text = plan_to_text(&plan).unwrap();
            assert!(text.starts_with("# vqdr listening-test plan\nversion\t1\n"));
            assert_eq!(plan_from_text(&text).unwrap(), plan);
        }
        let text = plan_to_text(&ab_plan(4)).unwrap().replace("version\t1", "version\t9");
        assert!(matches!(plan_from_text(&text), Err(TestbenchError::BadPlanFile { .. })));
        let truncated: String = plan_to_text(&ab_plan(4)).unwrap().lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(plan_from_text(&truncated).is_err());
    }

    #[test]
    fn response_log_round_trip() {
        let r = TrialResponse { session_id: "abc".into(), trial_index: 3, choice: Choice::B, confidence: 6, timestamp: 17 };
        let line = response_to_json(&r);
        assert_eq!(line, r#"{"session_id":"abc","trial_index":3,"choice":"B","confidence":6,"timestamp":17}"#);
        let log = format!("{line}\n{line}\n{{\"session_id\":\"x\"");
        assert_eq!(parse_responses(&log).unwrap(), vec![r.clone(), r]);
        assert!(parse_responses("garbage\n").is_err());
    }

    #[test]
    fn condition_labels() {
        let c = ConditionTriplet { q: L2, s: L1, p: L2 };
        assert_eq!(c.to_string(), "Q2S1P2");
        assert_eq!("Q2S1P2".parse::<ConditionTriplet>().unwrap(), c);
        assert!("Q3S1P1".parse::<ConditionTriplet>().is_err());
        for q in [Question::Comprehensibility, Question::VoiceSimilarity, Question::ProsodySimilarity] {
            assert!(q.text().contains("ignore noise or distortions in the audio"));
        }
    }

    fn multi_pairing_plan(seed: u64, trials: usize) -> TestPlan {
        let c = ConditionTriplet { q: L2, s: L2, p: L2 };
        let stims = stimuli(40, &[("a", c), ("b", c), ("c", c)]);
        let pairings = vec![Pairing::ab("a", "b"), Pairing::ab("b", "c"), Pairing::ab("c", "a"), Pairing::ab("b", "a")];
        build_test_plan("m", stims, Design::Ab, pairings, trials, seed).unwrap()
    }

    proptest! {
        #[test]
        fn counterbalanced_without_repeats(seed in any::<u64>(), trials in 1usize..40) {
            let plan = multi_pairing_plan(seed, trials);
            let mut balance: BTreeMap<(String, String), i64> = BTreeMap::new();
            let mut utts = HashSet::new();
            for t in &plan.trials {
                let a = tag_of(&plan, &t.slot_a).to_string();
                let b = tag_of(&plan, &t.slot_b).to_string();
                prop_assert_ne!(&t.slot_a, &t.slot_b);
                prop_assert!(utts.insert(plan.stimulus(&t.slot_a).unwrap().utt_id.clone()));
                let (key, sign) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                *balance.entry(key).or_default() += sign;
            }
            for v in balance.values() {
                prop_assert!(v.abs() <= 1);
            }
        }

        #[test]
        fn aggregate_ignores_slot_assignment(seed in any::<u64>(), picks in proptest::collection::vec((any::<bool>(), 1u8..=7), 16)) {
            let plan = abx_plan(seed);
            let rs: Vec<TrialResponse> = picks
                .iter()
                .enumerate()
                .map(|(i, &(proposed, c))| respond(&plan, "s", i, if proposed { "proposed" } else { "baseline" }, c))
                .collect();
            let mut swapped = plan.clone();
            for t in &mut swapped.trials {
                std::mem::swap(&mut t.slot_a, &mut t.slot_b);
            }
            let flipped: Vec<TrialResponse> = rs
                .iter()
                .map(|r| TrialResponse { choice: if r.choice == Choice::A { Choice::B } else { Choice::A }, ..r.clone() })
                .collect();
            prop_assert_eq!(aggregate(&rs, &plan).unwrap(), aggregate(&flipped, &swapped).unwrap());
        }
    }
}
