//! Layer 4: privacy gatekeeper.
//!
//! The agent may ask for a computation over values it only knows as
//! placeholders. A request is checked for relevance, necessity and
//! minimization, in that order; if allowed, the operation runs over the raw
//! values and only a boolean or a label from a fixed vocabulary comes back.

mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{classify_length, compare_dates, compare_numbers, parse_date, parse_number};

use crate::detect::AdapterError;
use crate::model::{Placeholder, SessionState};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criterion {
    Relevance,
    Necessity,
    Minimization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OperationKind {
    NumericCompare,
    DateCompare,
    Equality,
    SubstringContains,
    LengthClass,
    Unknown,
}

impl OperationKind {
    pub const REGISTERED: [OperationKind; 5] = [
        OperationKind::NumericCompare,
        OperationKind::DateCompare,
        OperationKind::Equality,
        OperationKind::SubstringContains,
        OperationKind::LengthClass,
    ];

    /// Number of operands the operation takes.
    pub fn arity(self) -> Option<usize> {
        match self {
            OperationKind::LengthClass => Some(1),
            OperationKind::Unknown => None,
            _ => Some(2),
        }
    }

    /// Every value the operation can return, serialized.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            OperationKind::NumericCompare | OperationKind::DateCompare => &["greater_than", "less_than", "equal"],
            OperationKind::Equality | OperationKind::SubstringContains => &["true", "false"],
            OperationKind::LengthClass => &["short", "medium", "long"],
            OperationKind::Unknown => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeRequest {
    pub tokens: Vec<String>,
    pub instruction: String,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_criterion: Option<Criterion>,
    pub rationale: String,
    pub kind: OperationKind,
}

impl PolicyDecision {
    fn allow(kind: OperationKind) -> Self {
        Self {
            allowed: true,
            failed_criterion: None,
            rationale: "request satisfies relevance, necessity and minimization".into(),
            kind,
        }
    }

    fn deny(kind: OperationKind, criterion: Criterion, rationale: impl Into<String>) -> Self {
        Self {
            allowed: false,
            failed_criterion: Some(criterion),
            rationale: rationale.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ComputeValue {
    Boolean { value: bool },
    Categorical { label: String },
}

impl ComputeValue {
    /// Serialized value as it appears in the operation's vocabulary.
    pub fn as_word(&self) -> String {
        match self {
            ComputeValue::Boolean { value } => value.to_string(),
            ComputeValue::Categorical { label } => label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeResult {
    pub kind: OperationKind,
    pub value: ComputeValue,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GateError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error("policy denied ({}): {}", .0.failed_criterion.map_or("no allow decision".to_string(), |c| format!("{c:?}")), .0.rationale)]
    PolicyDenied(PolicyDecision),
    #[error("operation error: {0}")]
    Operation(String),
    #[error("call budget exhausted for {0}")]
    BudgetExhausted(String),
    #[error("policy model error: {0}")]
    Model(String),
}

impl ErrorCode for GateError {
    fn code(&self) -> &'static str {
        match self {
            GateError::Malformed(_) => "malformed-request",
            GateError::UnknownPlaceholder(_) => "unknown-placeholder",
            GateError::PolicyDenied(_) => "policy-denied",
            GateError::Operation(_) => "operation-error",
            GateError::BudgetExhausted(_) => "budget-exhausted",
            GateError::Model(_) => "adapter-unavailable",
        }
    }
}

/// Wire contract of an external policy model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyModelRequest {
    pub instruction: String,
    pub kinds: Vec<OperationKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyModelResponse {
    pub kind: OperationKind,
    pub relevant: bool,
}

/// Classifies operations and scores relevance. [`RuleModel`] is the default.
pub trait PolicyModel: Send + Sync {
    fn assess(&self, req: &PolicyModelRequest) -> Result<PolicyModelResponse, AdapterError>;
}

/// Keyword rules; every request is considered relevant.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleModel;

impl PolicyModel for RuleModel {
    fn assess(&self, req: &PolicyModelRequest) -> Result<PolicyModelResponse, AdapterError> {
        Ok(PolicyModelResponse {
            kind: classify_operation(&req.instruction),
            relevant: true,
        })
    }
}

fn words(pattern: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b(?:{pattern})\b")).unwrap()
}

static LENGTH: LazyLock<Regex> =
    LazyLock::new(|| words(r"length|how long|how many (?:characters|chars|letters|digits)|short or long"));
static DATE: LazyLock<Regex> =
    LazyLock::new(|| words(r"dates?|earlier|earliest|later|latest|before|after|sooner|older|newer|expir\w*|deadline"));
static SUBSTRING: LazyLock<Regex> =
    LazyLock::new(|| words(r"contains?|containing|includes?|substring|part of|appears? in"));
static NUMERIC: LazyLock<Regex> = LazyLock::new(|| {
    words(r"larger|largest|greater|bigger|smaller|less|lower|higher|more|fewer|exceeds?|cheaper|expensive|amounts?|prices?|balance|sufficient|enough|numerically")
});
static EQUALITY: LazyLock<Regex> =
    LazyLock::new(|| words(r"same|equal|equals|identical|match|matches|equivalent|differ|different"));
/// Requests answerable from the placeholders themselves.
static PLACEHOLDER_ONLY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:repeat|echo|copy|restate|duplicate)\b|\b(?:list|count|return|show|print)\b.*\b(?:placeholders?|tokens?)\b").unwrap()
});

/// Rule-based operation classifier.
pub fn classify_operation(instruction: &str) -> OperationKind {
    if LENGTH.is_match(instruction) {
        OperationKind::LengthClass
    } else if DATE.is_match(instruction) {
        OperationKind::DateCompare
    } else if SUBSTRING.is_match(instruction) {
        OperationKind::SubstringContains
    } else if NUMERIC.is_match(instruction) {
        OperationKind::NumericCompare
    } else if EQUALITY.is_match(instruction) {
        OperationKind::Equality
    } else {
        OperationKind::Unknown
    }
}

/// Per-session gatekeeper bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct GateState {
    /// Allowed request fingerprints awaiting their compute call.
    pending: BTreeMap<String, OperationKind>,
    calls: BTreeMap<String, u32>,
    audit: Vec<AuditRecord>,
}

/// One audit-log line. Operands appear as placeholders only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: u64,
    pub session: String,
    pub tokens: Vec<String>,
    pub kind: OperationKind,
    pub decision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_criterion: Option<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ComputeValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn fingerprint(req: &ComputeRequest) -> String {
    format!("{}\u{1f}{}", req.tokens.join("\u{1e}"), req.instruction)
}

fn check_grammar(req: &ComputeRequest) -> Result<(), GateError> {
    if req.tokens.is_empty() {
        return Err(GateError::Malformed("tokens must be non-empty".into()));
    }
    for t in &req.tokens {
        Placeholder::parse(t).map_err(|_| GateError::Malformed(format!("{t:?} is not a placeholder")))?;
    }
    Ok(())
}

/// Applies relevance, necessity and minimization in order.
pub fn evaluate_policy(
    session: &SessionState,
    req: &ComputeRequest,
    model: &dyn PolicyModel,
) -> Result<PolicyDecision, GateError> {
    check_grammar(req)?;
    let assessed = model
        .assess(&PolicyModelRequest {
            instruction: req.instruction.clone(),
            kinds: OperationKind::REGISTERED.to_vec(),
        })
        .map_err(|e| GateError::Model(e.to_string()))?;
    let kind = assessed.kind;

    if let Some(t) = req.tokens.iter().find(|t| !session.exposed_placeholders().contains(*t)) {
        return Ok(PolicyDecision::deny(kind, Criterion::Relevance, format!("{t} was never shown this session")));
    }
    if !assessed.relevant {
        return Ok(PolicyDecision::deny(kind, Criterion::Relevance, "request judged unrelated to the task"));
    }
    if PLACEHOLDER_ONLY.is_match(&req.instruction) {
        return Ok(PolicyDecision::deny(kind, Criterion::Necessity, "answerable from the placeholders alone"));
    }
    match kind.arity() {
        None => Ok(PolicyDecision::deny(kind, Criterion::Minimization, "no bounded-result operation matches the request")),
        Some(n) if n != req.tokens.len() => Ok(PolicyDecision::deny(
            kind,
            Criterion::Minimization,
            format!("{kind:?} takes {n} operand(s), got {}", req.tokens.len()),
        )),
        Some(_) => Ok(PolicyDecision::allow(kind)),
    }
}

impl SessionState {
    fn audit(&mut self, record: AuditRecord) {
        if let Some(path) = &self.config().policy.audit_log {
            let line = serde_json::to_string(&record).expect("audit record serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::error!("audit log {}: {e}", path.display());
            }
        }
        self.gate.audit.push(record);
    }

    pub fn audit_records(&self) -> &[AuditRecord] {
        &self.gate.audit
    }

    fn record(&self, req: &ComputeRequest, kind: OperationKind, decision: &str) -> AuditRecord {
        AuditRecord {
            ts: self.elapsed_ms(),
            session: self.id().to_string(),
            tokens: req.tokens.clone(),
            kind,
            decision: decision.into(),
            failed_criterion: None,
            result: None,
            error: None,
        }
    }

    fn charge_budget(&mut self, req: &ComputeRequest) -> Result<(), GateError> {
        let budget = self.config().policy.call_budget;
        let distinct: BTreeSet<&String> = req.tokens.iter().collect();
        if let Some(t) = distinct.iter().find(|t| self.gate.calls.get(**t).copied().unwrap_or(0) >= budget) {
            return Err(GateError::BudgetExhausted((*t).clone()));
        }
        for t in distinct {
            *self.gate.calls.entry(t.clone()).or_default() += 1;
        }
        Ok(())
    }
}

/// Runs the registered operation for an allowed request. Without a matching
/// prior allow decision the call is refused.
pub fn compute(session: &mut SessionState, req: &ComputeRequest) -> Result<ComputeResult, GateError> {
    session.stats.gatekeeper_calls += 1;
    let mut record = session.record(req, OperationKind::Unknown, "deny");
    let result = compute_inner(session, req);
    match &result {
        Ok(r) => {
            record.kind = r.kind;
            record.decision = "allow".into();
            record.result = Some(r.value.clone());
        }
        Err(e) => {
            if let GateError::PolicyDenied(d) = e {
                record.failed_criterion = d.failed_criterion;
            }
            record.error = Some(e.code().to_string());
        }
    }
    session.audit(record);
    result
}

fn compute_inner(session: &mut SessionState, req: &ComputeRequest) -> Result<ComputeResult, GateError> {
    check_grammar(req)?;
    let Some(kind) = session.gate.pending.remove(&fingerprint(req)) else {
        return Err(GateError::PolicyDenied(PolicyDecision {
            allowed: false,
            failed_criterion: None,
            rationale: "compute called without an allow decision".into(),
            kind: OperationKind::Unknown,
        }));
    };
    session.charge_budget(req)?;
    let mut raws = Vec::with_capacity(req.tokens.len());
    for t in &req.tokens {
        let entry = session
            .mapping()
            .resolve(t)
            .map_err(|_| GateError::UnknownPlaceholder(t.clone()))?;
        raws.push(entry.raw.clone());
    }
    let policy = &session.config().policy;
    let value = ops::run(kind, &raws, policy)?;
    Ok(ComputeResult { kind, value })
}

/// Evaluates the policy and remembers an allow decision for the next
/// [`compute`] call on the same request.
pub fn authorize(
    session: &mut SessionState,
    req: &ComputeRequest,
    model: &dyn PolicyModel,
) -> Result<PolicyDecision, GateError> {
    let decision = evaluate_policy(session, req, model)?;
    if decision.allowed {
        session.gate.pending.insert(fingerprint(req), decision.kind);
    }
    Ok(decision)
}

/// Evaluates the policy and, if allowed, computes. Exactly one audit record is
/// written per call.
pub fn handle_compute(
    session: &mut SessionState,
    req: &ComputeRequest,
    model: &dyn PolicyModel,
) -> Result<ComputeResult, GateError> {
    let decision = match authorize(session, req, model) {
        Ok(d) => d,
        Err(e) => {
            session.stats.gatekeeper_calls += 1;
            let mut record = session.record(req, OperationKind::Unknown, "deny");
            record.error = Some(e.code().to_string());
            session.audit(record);
            return Err(e);
        }
    };
    if !decision.allowed {
        session.stats.gatekeeper_calls += 1;
        let mut record = session.record(req, decision.kind, "deny");
        record.failed_criterion = decision.failed_criterion;
        session.audit(record);
        return Err(GateError::PolicyDenied(decision));
    }
    compute(session, req)
}
