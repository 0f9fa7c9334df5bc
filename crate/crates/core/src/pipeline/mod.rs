//! Generate, verify and refine loop for template formulas.
//!
//! A [`Generator`] is asked for the subtask list, then for each subtask its
//! completion formula, proximity formula and action masks. The result is
//! verified; every formula named by a failing verdict is re-requested with a
//! debug prompt while the others are kept.

mod generator;
mod specfile;

pub use generator::{
    ChatGenerator, ChatMessage, Expected, Generator, GeneratorError, GeneratorRequest, MockGenerator, Role,
    ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use specfile::{MrbtSpecFile, Provenance, SpecFileError, SubtaskEntry};

use std::collections::{BTreeMap, HashMap};

use crate::formula::{Formula, ParseError};
use crate::gridworld::TaskSpace;
use crate::schema::{EnvSchema, SchemaError};
use crate::template::{SubtaskSpec, MAX_SUBTASKS};
use crate::verifier::{ConfigError, Spec, Trace, VerdictResult, Verifier, VerifyConfig, VerifyVerdict};

pub const DEFAULT_MAX_ITERS: usize = 5;

const SYSTEM: &str = include_str!("../../assets/prompts/system.txt");
const SUBTASKS: &str = include_str!("../../assets/prompts/subtasks.txt");
const PSI: &str = include_str!("../../assets/prompts/psi.txt");
const PHI: &str = include_str!("../../assets/prompts/phi.txt");
const MASKS: &str = include_str!("../../assets/prompts/masks.txt");
const DEBUG: &str = include_str!("../../assets/prompts/debug.txt");
const PARSE_ERROR: &str = include_str!("../../assets/prompts/parse_error.txt");

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ResponseError {
    #[error("no fenced code block found")]
    NoBlock,
    #[error("the subtask list is empty")]
    EmptyList,
    #[error("at most {MAX_SUBTASKS} subtasks are supported, got {0}")]
    TooManySubtasks(usize),
    #[error("formula does not parse: {0}")]
    Formula(ParseError),
    #[error("missing `{0}:` line")]
    MaskLine(&'static str),
    #[error("`{line}` mask: {source}")]
    Mask {
        line: &'static str,
        source: SchemaError,
    },
}

/// Body of the first fenced block of `text`, without its info string.
pub fn extract_block(text: &str) -> Result<&str, ResponseError> {
    let start = text.find("```").ok_or(ResponseError::NoBlock)?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```").ok_or(ResponseError::NoBlock)?;
    Ok(&body[..end])
}

pub fn parse_subtask_list(text: &str) -> Result<Vec<String>, ResponseError> {
    let names: Vec<String> = extract_block(text)?
        .lines()
        .map(|l| {
            let l = l.trim().trim_start_matches(['-', '*']).trim_start();
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            let rest = &l[digits..];
            if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) {
                rest[1..].trim().to_string()
            } else {
                l.to_string()
            }
        })
        .filter(|l| !l.is_empty())
        .collect();
    match names.len() {
        0 => Err(ResponseError::EmptyList),
        n if n > MAX_SUBTASKS => Err(ResponseError::TooManySubtasks(n)),
        _ => Ok(names),
    }
}

pub fn parse_formula_response(text: &str, space: &TaskSpace) -> Result<Formula, ResponseError> {
    let body = extract_block(text)?;
    let joined = body.lines().map(str::trim).collect::<Vec<_>>().join(" ");
    Formula::parse(joined.trim(), space.schema(), &space.task_vars()).map_err(ResponseError::Formula)
}

/// Parses `nav:` and `interact:` lines into action-name lists in schema order.
pub fn parse_masks_response(text: &str, schema: &EnvSchema) -> Result<(Vec<String>, Vec<String>), ResponseError> {
    let body = extract_block(text)?;
    let line = |key: &'static str| -> Result<Vec<String>, ResponseError> {
        let rest = body
            .lines()
            .find_map(|l| l.trim().strip_prefix(key)?.trim_start().strip_prefix(':'))
            .ok_or(ResponseError::MaskLine(key))?;
        let names: Vec<&str> = rest
            .split(',')
            .map(|s| s.trim().trim_matches(['"', '\'', '[', ']']))
            .filter(|s| !s.is_empty())
            .collect();
        let mask = schema
            .mask_from_names(&names)
            .map_err(|source| ResponseError::Mask { line: key, source })?;
        Ok(schema.mask_names(mask))
    };
    Ok((line("nav")?, line("interact")?))
}

/// The system prompt: instructions, the template and the task-space summary.
pub fn system_prompt(space: &TaskSpace) -> String {
    fill(SYSTEM, &[("space_info", &space.describe())])
}

/// Which formula of which subtask a verdict blames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FormulaSlot {
    Psi(usize),
    Phi(usize),
}

impl FormulaSlot {
    fn expected(self) -> Expected {
        match self {
            FormulaSlot::Psi(i) => Expected::FormulaPsi(i),
            FormulaSlot::Phi(i) => Expected::FormulaPhi(i),
        }
    }
}

/// The formula a failing verdict asks to revise. Proximity correctness
/// blames the proximity formula, which must hold before completion.
pub fn blamed_formula(verdict: &VerifyVerdict) -> Option<FormulaSlot> {
    let i = verdict.subtask_index?;
    Some(match verdict.spec {
        Spec::CompletionCorrectness | Spec::CompletionNonTriviality | Spec::CompositionPersistence => {
            FormulaSlot::Psi(i)
        }
        Spec::ObjectProximityCorrectness | Spec::ObjectProximityNonTriviality => FormulaSlot::Phi(i),
    })
}

fn label_series(trace: &Trace, names: &[String]) -> Option<Vec<bool>> {
    let bit = trace.label_names.iter().position(|n| names.contains(n))?;
    Some(trace.labels.iter().map(|l| l.contains(bit)).collect())
}

fn failure_description(verdict: &VerifyVerdict) -> String {
    let i = verdict.subtask_index.unwrap_or(0);
    let psi_names = ["psi".to_string(), format!("psi{}", i + 1)];
    let psi = verdict.trace.as_ref().and_then(|t| label_series(t, &psi_names));
    match (verdict.spec, verdict.result) {
        (Spec::CompletionCorrectness, _) => {
            let last = verdict.trace.as_ref().map_or(0, |t| t.len().saturating_sub(1));
            format!("the task goal holds at the final step t={last}, but psi never held on the trajectory below")
        }
        (Spec::ObjectProximityCorrectness, _) => {
            let flip = psi.as_ref().and_then(|p| p.windows(2).position(|w| !w[0] && w[1]));
            match flip {
                Some(t) => format!("psi becomes true between t={t} and t={}, but phi is false at t={t}", t + 1),
                None => "psi becomes true at a step where phi was false just before".into(),
            }
        }
        (Spec::CompositionPersistence, _) => {
            let revert = psi.as_ref().and_then(|p| p.windows(2).position(|w| w[0] && !w[1]));
            let mut s = format!(
                "subtask {} is the first subtask whose completion formula does not persist: too few goal-reaching trajectories keep it true once it becomes true",
                i + 1
            );
            if let Some(t) = revert {
                s += &format!(". On the goal-reaching trajectory below it is true at t={t} and false at t={}", t + 1);
            }
            s
        }
        (_, VerdictResult::InsufficientWitnesses { found }) => format!(
            "only {found} trajectories with distinct initial states keep the formula false for the whole horizon, so it is trivially satisfied"
        ),
        (_, r) => format!("verdict: {}", r.label()),
    }
}

/// Prompt asking the generator to revise the formula blamed by `verdict`.
pub fn build_debug_prompt(verdict: &VerifyVerdict, spec: &MrbtSpecFile, schema: &EnvSchema) -> String {
    let slot = blamed_formula(verdict).unwrap_or(FormulaSlot::Psi(0));
    let (i, name, text) = match slot {
        FormulaSlot::Psi(i) => (i, format!("psi{}", i + 1), spec.subtasks.get(i).map(|s| s.psi.as_str())),
        FormulaSlot::Phi(i) => (i, format!("phi{}", i + 1), spec.subtasks.get(i).map(|s| s.phi.as_str())),
    };
    let trace = verdict.trace.as_ref().map_or(String::new(), |t| {
        format!("Counterexample trajectory and task:\n{}", t.render(schema))
    });
    fill(
        DEBUG,
        &[
            ("formula_name", &name),
            ("index", &(i + 1).to_string()),
            ("name", spec.subtasks.get(i).map_or("", |s| s.name.as_str())),
            ("spec", verdict.spec.title()),
            ("statement", verdict.spec.statement()),
            ("formula", text.unwrap_or("")),
            ("failure", &failure_description(verdict)),
            ("trace", &trace),
        ],
    )
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("no complete specification was produced in {iterations} iterations; last error: {last_error}")]
    NothingUsable { iterations: usize, last_error: String },
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    /// The accepted specification, or the best one seen when not verified.
    pub spec: MrbtSpecFile,
    pub verdicts: Vec<VerifyVerdict>,
    pub iterations: usize,
    pub verified: bool,
    /// Every request and the raw response it received.
    pub transcript: Vec<(GeneratorRequest, String)>,
}

#[derive(Default)]
struct Draft {
    names: Option<Vec<String>>,
    psi: BTreeMap<usize, Formula>,
    phi: BTreeMap<usize, Formula>,
    masks: BTreeMap<usize, (Vec<String>, Vec<String>)>,
    /// Conversation to send instead of the initial prompt.
    pending: HashMap<Expected, Vec<ChatMessage>>,
    last_response: HashMap<Expected, String>,
}

impl Draft {
    fn missing(&self) -> Vec<Expected> {
        let Some(names) = &self.names else {
            return vec![Expected::SubtaskList];
        };
        let mut out = Vec::new();
        for i in 0..names.len() {
            if !self.psi.contains_key(&i) {
                out.push(Expected::FormulaPsi(i));
            }
            if !self.phi.contains_key(&i) {
                out.push(Expected::FormulaPhi(i));
            }
            if !self.masks.contains_key(&i) {
                out.push(Expected::Masks(i));
            }
        }
        out
    }

    fn initial_prompt(&self, expected: Expected, space: &TaskSpace) -> String {
        let names = self.names.clone().unwrap_or_default();
        let list = names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{}. {n}", i + 1))
            .collect::<Vec<_>>()
            .join("; ");
        let name = |i: usize| names.get(i).cloned().unwrap_or_default();
        match expected {
            Expected::SubtaskList => SUBTASKS.to_string(),
            Expected::FormulaPsi(i) => fill(PSI, &[("subtasks", &list), ("index", &(i + 1).to_string()), ("name", &name(i))]),
            Expected::FormulaPhi(i) => {
                let psi = self.psi.get(&i).map_or("(not available)".to_string(), |f| f.to_string());
                fill(
                    PHI,
                    &[("subtasks", &list), ("index", &(i + 1).to_string()), ("name", &name(i)), ("psi", &psi)],
                )
            }
            Expected::Masks(i) => fill(
                MASKS,
                &[
                    ("subtasks", &list),
                    ("index", &(i + 1).to_string()),
                    ("name", &name(i)),
                    ("actions", &space.schema().actions().join(", ")),
                ],
            ),
        }
    }

    /// Parses and stores a response.
    fn accept(&mut self, expected: Expected, response: &str, space: &TaskSpace) -> Result<(), ResponseError> {
        match expected {
            Expected::SubtaskList => self.names = Some(parse_subtask_list(response)?),
            Expected::FormulaPsi(i) => {
                self.psi.insert(i, parse_formula_response(response, space)?);
            }
            Expected::FormulaPhi(i) => {
                self.phi.insert(i, parse_formula_response(response, space)?);
            }
            Expected::Masks(i) => {
                self.masks.insert(i, parse_masks_response(response, space.schema())?);
            }
        }
        Ok(())
    }

    fn spec_file(&self, space: &TaskSpace) -> Option<(MrbtSpecFile, Vec<SubtaskSpec>)> {
        let names = self.names.as_ref()?;
        let mut entries = Vec::new();
        let mut subtasks = Vec::new();
        let schema = space.schema();
        for (i, name) in names.iter().enumerate() {
            let psi = self.psi.get(&i)?;
            let phi = self.phi.get(&i)?;
            let (nav, interact) = self.masks.get(&i)?;
            entries.push(SubtaskEntry {
                name: name.clone(),
                psi: psi.to_string(),
                phi: phi.to_string(),
                mask_nav: nav.clone(),
                mask_interact: interact.clone(),
            });
            subtasks.push(SubtaskSpec {
                name: name.clone(),
                psi: psi.clone(),
                phi: phi.clone(),
                mask_nav: schema.mask_from_names(nav).ok()?,
                mask_interact: schema.mask_from_names(interact).ok()?,
            });
        }
        Some((MrbtSpecFile::new(space.name(), entries), subtasks))
    }
}

/// Runs generate, verify and refine rounds until every check passes or
/// `max_iters` rounds are used. A round whose responses do not all parse
/// counts as an iteration and re-prompts with the parse error.
pub fn run_pipeline(
    space: &TaskSpace,
    generator: &mut dyn Generator,
    cfg: &VerifyConfig,
    max_iters: usize,
) -> Result<PipelineOutcome, PipelineError> {
    if max_iters == 0 {
        return Err(PipelineError::NoIterations);
    }
    cfg.validate()?;
    let system = system_prompt(space);
    let mut verifier = Verifier::new(space, *cfg);
    let mut used = 0;
    let mut draft = Draft::default();
    let mut transcript = Vec::new();
    let mut best: Option<(usize, MrbtSpecFile, Vec<VerifyVerdict>)> = None;
    let mut last_error = String::new();

    for iteration in 1..=max_iters {
        used = iteration;
        let mut complete = true;
        // Subtask names gate the per-subtask requests, so they come first.
        let mut queue = draft.missing();
        while let Some(expected) = queue.first().copied() {
            queue.remove(0);
            let initial = draft.initial_prompt(expected, space);
            let messages = draft
                .pending
                .remove(&expected)
                .unwrap_or_else(|| vec![ChatMessage::user(initial.clone())]);
            let request = GeneratorRequest {
                system_prompt: system.clone(),
                messages: messages.clone(),
                expected,
            };
            let response = generator.generate(&request)?;
            transcript.push((request, response.clone()));
            match draft.accept(expected, &response, space) {
                Ok(()) => {
                    draft.last_response.insert(expected, response);
                    if expected == Expected::SubtaskList {
                        queue = draft.missing();
                    }
                }
                Err(e) => {
                    complete = false;
                    last_error = e.to_string();
                    let mut retry = messages;
                    retry.push(ChatMessage::assistant(response));
                    retry.push(ChatMessage::user(fill(
                        PARSE_ERROR,
                        &[("error", &last_error), ("request", &initial)],
                    )));
                    draft.pending.insert(expected, retry);
                }
            }
        }
        if !complete {
            continue;
        }
        let Some((mut spec, subtasks)) = draft.spec_file(space) else {
            continue;
        };
        verifier.set_subtask_labels(&subtasks);
        let verdicts = verifier.verify_all(&subtasks);
        let failing = verdicts.iter().filter(|v| !v.result.passed()).count();
        spec.provenance = Provenance {
            generator: Some(generator.id()),
            iterations: iteration,
            verified: failing == 0,
            notes: Vec::new(),
        };
        if failing == 0 {
            return Ok(PipelineOutcome {
                spec,
                verdicts,
                iterations: iteration,
                verified: true,
                transcript,
            });
        }
        let mut feedback: BTreeMap<FormulaSlot, Vec<String>> = BTreeMap::new();
        for v in verdicts.iter().filter(|v| v.result.failed()) {
            if let Some(slot) = blamed_formula(v) {
                feedback
                    .entry(slot)
                    .or_default()
                    .push(build_debug_prompt(v, &spec, space.schema()));
            }
        }
        if best.as_ref().is_none_or(|(f, _, _)| failing < *f) {
            best = Some((failing, spec.clone(), verdicts.clone()));
        }
        if feedback.is_empty() {
            // Only inconclusive verdicts remain; another round cannot help.
            break;
        }
        for (slot, prompts) in feedback {
            let expected = slot.expected();
            match slot {
                FormulaSlot::Psi(i) => draft.psi.remove(&i),
                FormulaSlot::Phi(i) => draft.phi.remove(&i),
            };
            let mut conversation = vec![ChatMessage::user(draft.initial_prompt(expected, space))];
            if let Some(previous) = draft.last_response.get(&expected) {
                conversation.push(ChatMessage::assistant(previous.clone()));
            }
            conversation.push(ChatMessage::user(prompts.join("\n\n")));
            draft.pending.insert(expected, conversation);
        }
    }
    let iterations = used;
    match best {
        Some((_, mut spec, verdicts)) => {
            spec.provenance.verified = false;
            spec.provenance.notes.push(format!("unverified after {iterations} iterations"));
            Ok(PipelineOutcome {
                spec,
                verdicts,
                iterations,
                verified: false,
                transcript,
            })
        }
        None => Err(PipelineError::NothingUsable { iterations, last_error }),
    }
}

#[cfg(test)]
mod tests;
