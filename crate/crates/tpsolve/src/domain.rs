//! Problem structures: state variables, tokens, rules, plans.
//!
//! A state variable owns a finite value set, a successor relation over values,
//! and a duration interval per value. A timeline for a variable is a non-empty
//! token sequence that chains along the successor relation and respects the
//! duration intervals. Synchronization rules relate token endpoints: a trigger
//! rule `o[x=v] -> E1 | ... | Ek` must be witnessed for every token of value
//! `v`, while a trigger-less rule `true -> E1 | ... | Ek` is witnessed once
//! globally. Each `Ei` existentially quantifies tokens and constrains
//! endpoint distances with interval atoms and time-point atoms.
//!
//! Invariants enforced at construction:
//! - value identifiers are globally unique across variables;
//! - every value has a duration interval and transition targets are declared;
//! - rule names, and token names within a statement, are unique;
//! - atoms only mention the trigger name or names quantified in their
//!   statement.

use num_rational::Rational64;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use thiserror::Error;

/// Exact rational time.
pub type Time = Rational64;

/// Convenience constructor for a rational time `num/den`.
///
/// # Panics
///
/// Panics if `den` is zero.
pub fn time(num: i64, den: i64) -> Time {
    Rational64::new(num, den)
}

/// Errors raised by structure construction and plan validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("interval has empty content: lo {0} exceeds hi {1}")]
    EmptyInterval(u64, u64),
    #[error("singular interval [{0},{0}] must be closed on both ends")]
    SingularOpen(u64),
    #[error("unbounded interval cannot be right-closed")]
    InfiniteClosed,
    #[error("state variable `{0}` declared twice")]
    DuplicateVariable(String),
    #[error("state variable `{0}` has no values")]
    NoValues(String),
    #[error("value `{0}` declared twice (variables `{1}` and `{2}`)")]
    DuplicateValue(String, String, String),
    #[error("variable `{0}`: value `{1}` has no duration interval")]
    MissingDuration(String, String),
    #[error("variable `{0}`: duration declared for unknown value `{1}`")]
    StrayDuration(String, String),
    #[error("variable `{0}`: transition mentions unknown value `{1}`")]
    UnknownTransValue(String, String),
    #[error("rule `{0}` declared twice")]
    DuplicateRule(String),
    #[error("rule `{0}`: token name `{1}` bound twice in one scope")]
    DuplicateName(String, String),
    #[error("rule `{0}`: unknown variable `{1}`")]
    UnknownVariable(String, String),
    #[error("rule `{0}`: variable `{1}` has no value `{2}`")]
    UnknownValue(String, String, String),
    #[error("rule `{0}`: atom mentions unbound token name `{1}`")]
    UnboundName(String, String),
    #[error("rule `{0}` is trigger-less and cannot be futurized")]
    TriggerlessFuturize(String),
    #[error("plan has no timeline for variable `{0}`")]
    MissingTimeline(String),
    #[error("plan has a timeline for unknown variable `{0}`")]
    StrayTimeline(String),
    #[error("timeline for `{0}` is empty")]
    EmptyTimeline(String),
    #[error("timeline for `{0}` uses unknown value `{1}`")]
    UnknownTimelineValue(String, String),
    #[error("timeline for `{0}` has a negative duration")]
    NegativeDuration(String),
    #[error("no binding for token name `{0}`")]
    MissingBinding(String),
}

/// A closed, half-open, open, or unbounded interval with natural endpoints.
///
/// The empty interval is unrepresentable: construction fails when the bounds
/// cross or a singular interval is not closed on both ends. Unbounded
/// intervals are always right-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    lo: u64,
    hi: Option<u64>,
    lo_closed: bool,
    hi_closed: bool,
}

impl Interval {
    /// Builds an interval, rejecting shapes with empty content.
    pub fn new(
        lo: u64,
        hi: Option<u64>,
        lo_closed: bool,
        hi_closed: bool,
    ) -> Result<Self, DomainError> {
        match hi {
            Some(h) => {
                if lo > h {
                    return Err(DomainError::EmptyInterval(lo, h));
                }
                if lo == h && !(lo_closed && hi_closed) {
                    return Err(DomainError::SingularOpen(lo));
                }
            }
            None => {
                if hi_closed {
                    return Err(DomainError::InfiniteClosed);
                }
            }
        }
        Ok(Interval { lo, hi, lo_closed, hi_closed })
    }

    /// The closed singleton `[n,n]`.
    ///
    /// # Panics
    ///
    /// Never panics; the shape is always valid.
    pub fn singular(n: u64) -> Self {
        Interval::new(n, Some(n), true, true).unwrap()
    }

    /// The closed interval `[lo,hi]`.
    ///
    /// # Panics
    ///
    /// Panics if `lo > hi`.
    pub fn closed(lo: u64, hi: u64) -> Self {
        Interval::new(lo, Some(hi), true, true).unwrap()
    }

    /// The unbounded interval `[lo,inf)`.
    pub fn at_least(lo: u64) -> Self {
        Interval { lo, hi: None, lo_closed: true, hi_closed: false }
    }

    /// The unbounded open interval `(lo,inf)`.
    pub fn greater_than(lo: u64) -> Self {
        Interval { lo, hi: None, lo_closed: false, hi_closed: false }
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> Option<u64> {
        self.hi
    }

    pub fn lo_closed(&self) -> bool {
        self.lo_closed
    }

    pub fn hi_closed(&self) -> bool {
        self.hi_closed
    }

    /// Membership test for a rational point.
    pub fn contains(&self, t: Time) -> bool {
        let lo = Rational64::from_integer(self.lo as i64);
        let lo_ok = if self.lo_closed { t >= lo } else { t > lo };
        let hi_ok = match self.hi {
            None => true,
            Some(h) => {
                let h = Rational64::from_integer(h as i64);
                if self.hi_closed {
                    t <= h
                } else {
                    t < h
                }
            }
        };
        lo_ok && hi_ok
    }

    /// Whether `0` is a member.
    pub fn contains_zero(&self) -> bool {
        self.lo == 0 && self.lo_closed
    }

    /// Whether the interval is a single point.
    pub fn is_singular(&self) -> bool {
        self.hi == Some(self.lo)
    }

    /// Whether the interval is unbounded or has a closed left endpoint at 0.
    ///
    /// These are the intervals whose until operators admit a single-clock,
    /// merge-friendly compilation: the window constraint is one-sided.
    pub fn is_zero_inf(&self) -> bool {
        self.hi.is_none() || (self.lo == 0 && self.lo_closed)
    }

    /// Whether the interval is `[0,inf)`.
    pub fn is_trivial(&self) -> bool {
        self.lo == 0 && self.lo_closed && self.hi.is_none()
    }

    /// Greatest finite endpoint, if any (0 for `(0,inf)`-style lows).
    pub fn max_constant(&self) -> u64 {
        match self.hi {
            Some(h) => h,
            None => self.lo,
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_closed { '[' } else { '(' };
        match self.hi {
            Some(h) => {
                let close = if self.hi_closed { ']' } else { ')' };
                write!(f, "{}{},{}{}", open, self.lo, h, close)
            }
            None => write!(f, "{}{},inf)", open, self.lo),
        }
    }
}

/// Token endpoint selector: the start or the end of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Start,
    End,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Start => write!(f, "s"),
            Endpoint::End => write!(f, "e"),
        }
    }
}

/// An atomic temporal constraint over bound token names.
///
/// With `b(o)` the token bound to name `o` and `s(t)`/`e(t)` its endpoint
/// times, the atoms read:
/// - `Interval`: `e2(b(o2)) - e1(b(o1))` lies in `interval`;
/// - `PointLeft`: `n - e(b(o))` lies in `interval`;
/// - `PointRight`: `e(b(o)) - n` lies in `interval`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    Interval {
        o1: String,
        e1: Endpoint,
        o2: String,
        e2: Endpoint,
        interval: Interval,
    },
    PointLeft {
        o: String,
        e: Endpoint,
        n: u64,
        interval: Interval,
    },
    PointRight {
        n: u64,
        o: String,
        e: Endpoint,
        interval: Interval,
    },
}

impl Atom {
    /// Token names mentioned by the atom, left side first.
    pub fn names(&self) -> Vec<&str> {
        match self {
            Atom::Interval { o1, o2, .. } => {
                if o1 == o2 {
                    vec![o1.as_str()]
                } else {
                    vec![o1.as_str(), o2.as_str()]
                }
            }
            Atom::PointLeft { o, .. } | Atom::PointRight { o, .. } => vec![o.as_str()],
        }
    }

    pub fn interval(&self) -> &Interval {
        match self {
            Atom::Interval { interval, .. }
            | Atom::PointLeft { interval, .. }
            | Atom::PointRight { interval, .. } => interval,
        }
    }

    /// Greatest integer constant occurring in the atom.
    pub fn max_constant(&self) -> u64 {
        match self {
            Atom::Interval { interval, .. } => interval.max_constant(),
            Atom::PointLeft { n, interval, .. } | Atom::PointRight { n, interval, .. } => {
                (*n).max(interval.max_constant())
            }
        }
    }
}

/// An existentially quantified token name `name[var=value]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quantifier {
    pub name: String,
    pub var: String,
    pub value: String,
}

/// One disjunct of a rule: quantifiers plus a conjunction of atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub quantifiers: Vec<Quantifier>,
    pub atoms: Vec<Atom>,
}

/// A synchronization rule. `trigger: None` encodes a trigger-less rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncRule {
    pub name: String,
    pub trigger: Option<Quantifier>,
    pub statements: Vec<Statement>,
}

impl SyncRule {
    /// Whether every non-trigger name occurs in at most one interval atom,
    /// per statement. Trigger-less rules are simple by convention.
    pub fn is_simple(&self) -> bool {
        let trigger = self.trigger.as_ref().map(|q| q.name.as_str());
        for st in &self.statements {
            let mut seen: HashSet<&str> = HashSet::new();
            for atom in &st.atoms {
                if let Atom::Interval { .. } = atom {
                    for name in atom.names() {
                        if Some(name) == trigger {
                            continue;
                        }
                        if !seen.insert(name) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

/// A multi-valued state variable with successor relation and durations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateVariable {
    pub name: String,
    /// Declaration order; also the canonical value order everywhere else.
    pub values: Vec<String>,
    /// Successor values per value; absent key means no successors.
    pub trans: BTreeMap<String, Vec<String>>,
    /// Duration interval per value; total on `values` after validation.
    pub dur: BTreeMap<String, Interval>,
}

impl StateVariable {
    pub fn duration(&self, value: &str) -> &Interval {
        &self.dur[value]
    }

    pub fn successors(&self, value: &str) -> &[String] {
        self.trans.get(value).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn has_value(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }
}

/// A token: a value held for an exact rational duration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub value: String,
    pub duration: Time,
}

impl Token {
    pub fn new(value: impl Into<String>, duration: Time) -> Self {
        Token { value: value.into(), duration }
    }
}

/// A plan: one non-empty token sequence per state variable.
pub type MultiTimeline = BTreeMap<String, Vec<Token>>;

/// A validated planning problem with derived size parameters.
#[derive(Debug, Clone)]
pub struct Problem {
    vars: Vec<StateVariable>,
    rules: Vec<SyncRule>,
    var_index: HashMap<String, usize>,
    value_owner: HashMap<String, usize>,
}

impl Problem {
    /// Validates and assembles a problem.
    pub fn new(vars: Vec<StateVariable>, rules: Vec<SyncRule>) -> Result<Self, DomainError> {
        let mut var_index = HashMap::new();
        let mut value_owner: HashMap<String, usize> = HashMap::new();
        for (i, v) in vars.iter().enumerate() {
            if var_index.insert(v.name.clone(), i).is_some() {
                return Err(DomainError::DuplicateVariable(v.name.clone()));
            }
            if v.values.is_empty() {
                return Err(DomainError::NoValues(v.name.clone()));
            }
            for val in &v.values {
                if let Some(&j) = value_owner.get(val) {
                    return Err(DomainError::DuplicateValue(
                        val.clone(),
                        vars[j].name.clone(),
                        v.name.clone(),
                    ));
                }
                value_owner.insert(val.clone(), i);
            }
            for val in &v.values {
                if !v.dur.contains_key(val) {
                    return Err(DomainError::MissingDuration(v.name.clone(), val.clone()));
                }
            }
            for val in v.dur.keys() {
                if !v.has_value(val) {
                    return Err(DomainError::StrayDuration(v.name.clone(), val.clone()));
                }
            }
            for (src, dsts) in &v.trans {
                if !v.has_value(src) {
                    return Err(DomainError::UnknownTransValue(v.name.clone(), src.clone()));
                }
                for d in dsts {
                    if !v.has_value(d) {
                        return Err(DomainError::UnknownTransValue(v.name.clone(), d.clone()));
                    }
                }
            }
        }
        let mut rule_names = HashSet::new();
        for r in &rules {
            if !rule_names.insert(r.name.as_str()) {
                return Err(DomainError::DuplicateRule(r.name.clone()));
            }
            let check_quant = |q: &Quantifier| -> Result<(), DomainError> {
                let vi = var_index
                    .get(&q.var)
                    .ok_or_else(|| DomainError::UnknownVariable(r.name.clone(), q.var.clone()))?;
                if !vars[*vi].has_value(&q.value) {
                    return Err(DomainError::UnknownValue(
                        r.name.clone(),
                        q.var.clone(),
                        q.value.clone(),
                    ));
                }
                Ok(())
            };
            if let Some(t) = &r.trigger {
                check_quant(t)?;
            }
            for st in &r.statements {
                let mut bound: HashSet<&str> = HashSet::new();
                if let Some(t) = &r.trigger {
                    bound.insert(t.name.as_str());
                }
                for q in &st.quantifiers {
                    check_quant(q)?;
                    if !bound.insert(q.name.as_str()) {
                        return Err(DomainError::DuplicateName(r.name.clone(), q.name.clone()));
                    }
                }
                for atom in &st.atoms {
                    for n in atom.names() {
                        if !bound.contains(n) {
                            return Err(DomainError::UnboundName(r.name.clone(), n.to_string()));
                        }
                    }
                }
            }
        }
        Ok(Problem { vars, rules, var_index, value_owner })
    }

    pub fn vars(&self) -> &[StateVariable] {
        &self.vars
    }

    pub fn rules(&self) -> &[SyncRule] {
        &self.rules
    }

    pub fn var(&self, name: &str) -> Option<&StateVariable> {
        self.var_index.get(name).map(|&i| &self.vars[i])
    }

    pub fn var_position(&self, name: &str) -> Option<usize> {
        self.var_index.get(name).copied()
    }

    /// The variable owning a value identifier.
    pub fn value_var(&self, value: &str) -> Option<&StateVariable> {
        self.value_owner.get(value).map(|&i| &self.vars[i])
    }

    /// Greatest integer constant in rule atoms and duration intervals.
    pub fn k_p(&self) -> u64 {
        let mut k = 0;
        for v in &self.vars {
            for iv in v.dur.values() {
                k = k.max(iv.max_constant());
            }
        }
        for r in &self.rules {
            for st in &r.statements {
                for a in &st.atoms {
                    k = k.max(a.max_constant());
                }
            }
        }
        k
    }

    /// Total number of values across all variables.
    pub fn n_v(&self) -> usize {
        self.vars.iter().map(|v| v.values.len()).sum()
    }

    /// Total number of quantified token names across all rules (triggers
    /// included).
    pub fn n_q(&self) -> usize {
        self.rules
            .iter()
            .map(|r| {
                usize::from(r.trigger.is_some())
                    + r.statements.iter().map(|s| s.quantifiers.len()).sum::<usize>()
            })
            .sum()
    }

    /// Total number of atoms across all rules.
    pub fn n_a(&self) -> usize {
        self.rules
            .iter()
            .map(|r| r.statements.iter().map(|s| s.atoms.len()).sum::<usize>())
            .sum()
    }
}

/// Start and end stamps of each token, with the timeline starting at time 0.
pub fn token_bounds(timeline: &[Token]) -> Vec<(Time, Time)> {
    let mut out = Vec::with_capacity(timeline.len());
    let mut t = Time::from_integer(0);
    for tok in timeline {
        let s = t;
        t += tok.duration;
        out.push((s, t));
    }
    out
}

/// A defect found in a structurally well-formed timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimelineViolation {
    /// Token at this index has a duration outside its value's interval.
    Duration(usize),
    /// The value at this index is not a successor of its predecessor's value.
    Transition(usize),
}

/// Checks a timeline against a variable's durations and successor relation.
///
/// Structural defects (unknown values, empty or negative-duration timelines)
/// are errors; semantic defects are returned as violations.
pub fn check_timeline(
    var: &StateVariable,
    timeline: &[Token],
) -> Result<Vec<TimelineViolation>, DomainError> {
    if timeline.is_empty() {
        return Err(DomainError::EmptyTimeline(var.name.clone()));
    }
    for tok in timeline {
        if !var.has_value(&tok.value) {
            return Err(DomainError::UnknownTimelineValue(var.name.clone(), tok.value.clone()));
        }
        if tok.duration < Time::from_integer(0) {
            return Err(DomainError::NegativeDuration(var.name.clone()));
        }
    }
    let mut violations = Vec::new();
    for (i, tok) in timeline.iter().enumerate() {
        if !var.duration(&tok.value).contains(tok.duration) {
            violations.push(TimelineViolation::Duration(i));
        }
        if i > 0 {
            let prev = &timeline[i - 1].value;
            if !var.successors(prev).iter().any(|s| s == &tok.value) {
                violations.push(TimelineViolation::Transition(i));
            }
        }
    }
    Ok(violations)
}

/// Evaluates an atom under a binding of token names to (start, end) stamps.
pub fn atom_holds(
    atom: &Atom,
    binding: &HashMap<String, (Time, Time)>,
) -> Result<bool, DomainError> {
    let pick = |name: &str, e: Endpoint| -> Result<Time, DomainError> {
        let (s, t) = binding
            .get(name)
            .ok_or_else(|| DomainError::MissingBinding(name.to_string()))?;
        Ok(match e {
            Endpoint::Start => *s,
            Endpoint::End => *t,
        })
    };
    Ok(match atom {
        Atom::Interval { o1, e1, o2, e2, interval } => {
            let a = pick(o1, *e1)?;
            let b = pick(o2, *e2)?;
            interval.contains(b - a)
        }
        Atom::PointLeft { o, e, n, interval } => {
            let a = pick(o, *e)?;
            interval.contains(Time::from_integer(*n as i64) - a)
        }
        Atom::PointRight { n, o, e, interval } => {
            let a = pick(o, *e)?;
            interval.contains(a - Time::from_integer(*n as i64))
        }
    })
}

/// Validation semantics: whether quantified tokens may start before the
/// trigger token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Plain,
    Future,
}

/// Rewrites a trigger rule for the future semantics: every quantified name
/// additionally starts no earlier than the trigger.
pub fn futurize_rule(rule: &SyncRule) -> Result<SyncRule, DomainError> {
    let trigger = rule
        .trigger
        .as_ref()
        .ok_or_else(|| DomainError::TriggerlessFuturize(rule.name.clone()))?;
    let mut out = rule.clone();
    for st in &mut out.statements {
        for q in &st.quantifiers {
            st.atoms.push(Atom::Interval {
                o1: trigger.name.clone(),
                e1: Endpoint::Start,
                o2: q.name.clone(),
                e2: Endpoint::Start,
                interval: Interval::at_least(0),
            });
        }
    }
    Ok(out)
}

/// Per-rule outcome of plan validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleOutcome {
    pub rule: String,
    pub satisfied: bool,
    /// For trigger rules: index (within the trigger variable's timeline) of
    /// the first trigger token with no witnessed statement.
    pub failing_token: Option<usize>,
}

/// Result of validating a plan against a problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub timeline_violations: BTreeMap<String, Vec<TimelineViolation>>,
    pub rule_outcomes: Vec<RuleOutcome>,
}

impl ValidationReport {
    pub fn satisfied(&self) -> bool {
        self.timeline_violations.values().all(|v| v.is_empty())
            && self.rule_outcomes.iter().all(|r| r.satisfied)
    }
}

/// Token stamps per variable, computed once per validation.
struct PlanIndex<'a> {
    bounds: BTreeMap<&'a str, Vec<(Time, Time)>>,
    plan: &'a MultiTimeline,
}

impl<'a> PlanIndex<'a> {
    /// Indices of tokens with the given value on a variable's timeline.
    fn tokens_of(&self, var: &str, value: &str) -> Vec<usize> {
        match self.plan.get(var) {
            None => Vec::new(),
            Some(tl) => tl
                .iter()
                .enumerate()
                .filter(|(_, t)| t.value == value)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    fn bounds_at(&self, var: &str, idx: usize) -> (Time, Time) {
        self.bounds[var][idx]
    }
}

/// Searches for a witness of one statement: an assignment of quantified
/// names to tokens satisfying all atoms, given pre-bound names (trigger).
fn statement_witnessed(
    st: &Statement,
    idx: &PlanIndex<'_>,
    pre: &HashMap<String, (Time, Time)>,
) -> bool {
    fn assign(
        st: &Statement,
        idx: &PlanIndex<'_>,
        binding: &mut HashMap<String, (Time, Time)>,
        q: usize,
    ) -> bool {
        if q == st.quantifiers.len() {
            return st.atoms.iter().all(|a| atom_holds(a, binding).unwrap_or(false));
        }
        let quant = &st.quantifiers[q];
        for tok in idx.tokens_of(&quant.var, &quant.value) {
            let b = idx.bounds_at(&quant.var, tok);
            binding.insert(quant.name.clone(), b);
            if assign(st, idx, binding, q + 1) {
                return true;
            }
        }
        binding.remove(&quant.name);
        false
    }
    let mut binding = pre.clone();
    assign(st, idx, &mut binding, 0)
}

/// Validates a plan against a problem under the chosen semantics.
///
/// Structural defects in the plan (missing or extra timelines, unknown
/// values, empty timelines) are errors. Duration and transition defects are
/// reported per timeline; each rule gets an outcome. Under the future
/// semantics every trigger rule is validated in its futurized form.
pub fn validate_plan(
    problem: &Problem,
    plan: &MultiTimeline,
    semantics: Semantics,
) -> Result<ValidationReport, DomainError> {
    for var in plan.keys() {
        if problem.var(var).is_none() {
            return Err(DomainError::StrayTimeline(var.clone()));
        }
    }
    let mut bounds = BTreeMap::new();
    let mut timeline_violations = BTreeMap::new();
    for v in problem.vars() {
        let tl = plan
            .get(&v.name)
            .ok_or_else(|| DomainError::MissingTimeline(v.name.clone()))?;
        let violations = check_timeline(v, tl)?;
        timeline_violations.insert(v.name.clone(), violations);
        bounds.insert(v.name.as_str(), token_bounds(tl));
    }
    let idx = PlanIndex { bounds, plan };
    let mut rule_outcomes = Vec::new();
    for rule in problem.rules() {
        let effective;
        let rule = match (semantics, &rule.trigger) {
            (Semantics::Future, Some(_)) => {
                effective = futurize_rule(rule)?;
                &effective
            }
            _ => rule,
        };
        match &rule.trigger {
            None => {
                let ok = rule
                    .statements
                    .iter()
                    .any(|st| statement_witnessed(st, &idx, &HashMap::new()));
                rule_outcomes.push(RuleOutcome {
                    rule: rule.name.clone(),
                    satisfied: ok,
                    failing_token: None,
                });
            }
            Some(trig) => {
                let mut failing = None;
                for tok in idx.tokens_of(&trig.var, &trig.value) {
                    let b = idx.bounds_at(&trig.var, tok);
                    let mut pre = HashMap::new();
                    pre.insert(trig.name.clone(), b);
                    let ok = rule.statements.iter().any(|st| statement_witnessed(st, &idx, &pre));
                    if !ok {
                        failing = Some(tok);
                        break;
                    }
                }
                rule_outcomes.push(RuleOutcome {
                    rule: rule.name.clone(),
                    satisfied: failing.is_none(),
                    failing_token: failing,
                });
            }
        }
    }
    Ok(ValidationReport { timeline_violations, rule_outcomes })
}

/// Summary classification of a problem's rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub trigger_rules: usize,
    pub trigger_less_rules: usize,
    /// Names of trigger rules that are not simple.
    pub non_simple_triggers: Vec<String>,
    /// Whether every atom interval is unbounded or left-closed at zero.
    pub intervals_all_zero_inf: bool,
    /// Whether no atom interval is a single point.
    pub intervals_non_singular: bool,
}

/// Classifies rules by shape: simplicity is only meaningful (and only
/// checked) for trigger rules, on their original, non-futurized form.
pub fn classify_problem(problem: &Problem) -> Classification {
    let mut c = Classification {
        trigger_rules: 0,
        trigger_less_rules: 0,
        non_simple_triggers: Vec::new(),
        intervals_all_zero_inf: true,
        intervals_non_singular: true,
    };
    for r in problem.rules() {
        if r.trigger.is_some() {
            c.trigger_rules += 1;
            if !r.is_simple() {
                c.non_simple_triggers.push(r.name.clone());
            }
        } else {
            c.trigger_less_rules += 1;
        }
        for st in &r.statements {
            for a in &st.atoms {
                let iv = a.interval();
                if !iv.is_zero_inf() {
                    c.intervals_all_zero_inf = false;
                }
                if iv.is_singular() {
                    c.intervals_non_singular = false;
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var_xy() -> (StateVariable, StateVariable) {
        let x = StateVariable {
            name: "x".into(),
            values: vec!["a".into(), "b".into()],
            trans: BTreeMap::from([
                ("a".into(), vec!["b".into()]),
                ("b".into(), vec!["a".into()]),
            ]),
            dur: BTreeMap::from([
                ("a".into(), Interval::closed(1, 3)),
                ("b".into(), Interval::at_least(0)),
            ]),
        };
        let y = StateVariable {
            name: "y".into(),
            values: vec!["c".into()],
            trans: BTreeMap::from([("c".into(), vec!["c".into()])]),
            dur: BTreeMap::from([("c".into(), Interval::closed(0, 5))]),
        };
        (x, y)
    }

    #[test]
    fn interval_construction_rejects_empty_shapes() {
        assert!(Interval::new(3, Some(2), true, true).is_err());
        assert!(Interval::new(2, Some(2), true, false).is_err());
        assert!(Interval::new(2, Some(2), false, true).is_err());
        assert!(Interval::new(0, None, true, true).is_err());
        assert!(Interval::new(2, Some(2), true, true).is_ok());
        assert!(Interval::new(0, Some(1), false, false).is_ok());
    }

    #[test]
    fn interval_membership_at_boundaries() {
        let i = Interval::new(1, Some(3), false, true).unwrap();
        assert!(!i.contains(time(1, 1)));
        assert!(i.contains(time(3, 2)));
        assert!(i.contains(time(3, 1)));
        assert!(!i.contains(time(7, 2)));
        let u = Interval::greater_than(0);
        assert!(!u.contains(time(0, 1)));
        assert!(u.contains(time(1, 1000)));
    }

    #[test]
    fn zero_inf_classification() {
        assert!(Interval::singular(0).is_zero_inf());
        assert!(Interval::closed(0, 4).is_zero_inf());
        assert!(Interval::new(0, Some(4), true, false).unwrap().is_zero_inf());
        assert!(Interval::at_least(2).is_zero_inf());
        assert!(Interval::greater_than(0).is_zero_inf());
        assert!(!Interval::new(0, Some(4), false, true).unwrap().is_zero_inf());
        assert!(!Interval::closed(1, 2).is_zero_inf());
        assert!(!Interval::singular(5).is_zero_inf());
    }

    #[test]
    fn token_bounds_accumulate() {
        let tl = vec![
            Token::new("a", time(3, 2)),
            Token::new("b", time(0, 1)),
            Token::new("a", time(2, 1)),
        ];
        let b = token_bounds(&tl);
        assert_eq!(b[0], (time(0, 1), time(3, 2)));
        assert_eq!(b[1], (time(3, 2), time(3, 2)));
        assert_eq!(b[2], (time(3, 2), time(7, 2)));
    }

    #[test]
    fn atom_holds_sign_conventions() {
        let mut b = HashMap::new();
        b.insert("o".to_string(), (time(5, 1), time(7, 1)));
        b.insert("p".to_string(), (time(6, 1), time(6, 1)));
        // e(o) - s(o) = 2 in [2,2].
        let dur = Atom::Interval {
            o1: "o".into(),
            e1: Endpoint::Start,
            o2: "o".into(),
            e2: Endpoint::End,
            interval: Interval::singular(2),
        };
        assert!(atom_holds(&dur, &b).unwrap());
        // s(p) - s(o) = 1 in (0,inf).
        let gap = Atom::Interval {
            o1: "o".into(),
            e1: Endpoint::Start,
            o2: "p".into(),
            e2: Endpoint::Start,
            interval: Interval::greater_than(0),
        };
        assert!(atom_holds(&gap, &b).unwrap());
        // 20 - s(o) = 15 in [13,15].
        let pl = Atom::PointLeft {
            o: "o".into(),
            e: Endpoint::Start,
            n: 20,
            interval: Interval::closed(13, 15),
        };
        assert!(atom_holds(&pl, &b).unwrap());
        // s(o) - 20 = -15, never in a natural interval.
        let pr = Atom::PointRight {
            n: 20,
            o: "o".into(),
            e: Endpoint::Start,
            interval: Interval::closed(0, 100),
        };
        assert!(!atom_holds(&pr, &b).unwrap());
        let missing = Atom::PointLeft {
            o: "q".into(),
            e: Endpoint::End,
            n: 0,
            interval: Interval::singular(0),
        };
        assert!(atom_holds(&missing, &b).is_err());
    }

    #[test]
    fn check_timeline_reports_defects() {
        let (x, _) = var_xy();
        let ok = vec![Token::new("a", time(2, 1)), Token::new("b", time(0, 1))];
        assert!(check_timeline(&x, &ok).unwrap().is_empty());
        let bad = vec![
            Token::new("a", time(5, 1)),
            Token::new("a", time(2, 1)),
        ];
        let v = check_timeline(&x, &bad).unwrap();
        assert!(v.contains(&TimelineViolation::Duration(0)));
        assert!(v.contains(&TimelineViolation::Transition(1)));
        assert!(matches!(
            check_timeline(&x, &[]),
            Err(DomainError::EmptyTimeline(_))
        ));
        assert!(matches!(
            check_timeline(&x, &[Token::new("z", time(1, 1))]),
            Err(DomainError::UnknownTimelineValue(_, _))
        ));
    }

    #[test]
    fn problem_rejects_cross_variable_value_clash() {
        let (x, _) = var_xy();
        let clash = StateVariable {
            name: "y".into(),
            values: vec!["a".into()],
            trans: BTreeMap::new(),
            dur: BTreeMap::from([("a".into(), Interval::at_least(0))]),
        };
        let err = Problem::new(vec![x, clash], vec![]).unwrap_err();
        assert!(matches!(err, DomainError::DuplicateValue(_, _, _)));
    }

    #[test]
    fn problem_rejects_unbound_atom_names() {
        let (x, y) = var_xy();
        let rule = SyncRule {
            name: "r".into(),
            trigger: Some(Quantifier { name: "o".into(), var: "x".into(), value: "a".into() }),
            statements: vec![Statement {
                quantifiers: vec![],
                atoms: vec![Atom::PointLeft {
                    o: "nope".into(),
                    e: Endpoint::Start,
                    n: 0,
                    interval: Interval::singular(0),
                }],
            }],
        };
        let err = Problem::new(vec![x, y], vec![rule]).unwrap_err();
        assert!(matches!(err, DomainError::UnboundName(_, _)));
    }

    #[test]
    fn derived_parameters() {
        let (x, y) = var_xy();
        let rule = SyncRule {
            name: "r".into(),
            trigger: Some(Quantifier { name: "o".into(), var: "x".into(), value: "a".into() }),
            statements: vec![Statement {
                quantifiers: vec![Quantifier {
                    name: "p".into(),
                    var: "y".into(),
                    value: "c".into(),
                }],
                atoms: vec![Atom::PointLeft {
                    o: "p".into(),
                    e: Endpoint::End,
                    n: 7,
                    interval: Interval::closed(0, 2),
                }],
            }],
        };
        let p = Problem::new(vec![x, y], vec![rule]).unwrap();
        // Constants: durations contribute 3 and 5, the atom contributes 7.
        assert_eq!(p.k_p(), 7);
        assert_eq!(p.n_v(), 3);
        assert_eq!(p.n_q(), 2);
        assert_eq!(p.n_a(), 1);
    }

    #[test]
    fn simplicity_is_per_statement_and_ignores_trigger() {
        let trig = Quantifier { name: "t".into(), var: "x".into(), value: "a".into() };
        let q1 = Quantifier { name: "o1".into(), var: "y".into(), value: "c".into() };
        let q2 = Quantifier { name: "o2".into(), var: "y".into(), value: "c".into() };
        let ivl = |o1: &str, o2: &str| Atom::Interval {
            o1: o1.into(),
            e1: Endpoint::Start,
            o2: o2.into(),
            e2: Endpoint::Start,
            interval: Interval::at_least(0),
        };
        // Trigger may appear in many interval atoms.
        let simple = SyncRule {
            name: "r".into(),
            trigger: Some(trig.clone()),
            statements: vec![Statement {
                quantifiers: vec![q1.clone(), q2.clone()],
                atoms: vec![ivl("t", "o1"), ivl("t", "o2")],
            }],
        };
        assert!(simple.is_simple());
        // A non-trigger name in two interval atoms is not simple.
        let non_simple = SyncRule {
            name: "r".into(),
            trigger: Some(trig.clone()),
            statements: vec![Statement {
                quantifiers: vec![q1.clone(), q2.clone()],
                atoms: vec![ivl("t", "o1"), ivl("o1", "o2")],
            }],
        };
        assert!(!non_simple.is_simple());
        // Same name across different statements stays simple.
        let split = SyncRule {
            name: "r".into(),
            trigger: Some(trig),
            statements: vec![
                Statement { quantifiers: vec![q1.clone()], atoms: vec![ivl("t", "o1")] },
                Statement { quantifiers: vec![q1], atoms: vec![ivl("o1", "o1")] },
            ],
        };
        assert!(split.is_simple());
    }

    #[test]
    fn futurize_adds_start_ordering_atoms() {
        let trig = Quantifier { name: "t".into(), var: "x".into(), value: "a".into() };
        let q = Quantifier { name: "o".into(), var: "y".into(), value: "c".into() };
        let rule = SyncRule {
            name: "r".into(),
            trigger: Some(trig),
            statements: vec![Statement { quantifiers: vec![q], atoms: vec![] }],
        };
        let fut = futurize_rule(&rule).unwrap();
        assert_eq!(fut.statements[0].atoms.len(), 1);
        match &fut.statements[0].atoms[0] {
            Atom::Interval { o1, e1, o2, e2, interval } => {
                assert_eq!(o1, "t");
                assert_eq!(*e1, Endpoint::Start);
                assert_eq!(o2, "o");
                assert_eq!(*e2, Endpoint::Start);
                assert!(interval.is_trivial());
            }
            _ => panic!("expected interval atom"),
        }
        let triggerless = SyncRule { name: "r".into(), trigger: None, statements: vec![] };
        assert!(futurize_rule(&triggerless).is_err());
    }

    #[test]
    fn validate_plain_vs_future() {
        let (x, y) = var_xy();
        // Every token of value a needs a c-token starting at or after it
        // under future semantics; plain allows earlier c-tokens.
        let rule = SyncRule {
            name: "sync".into(),
            trigger: Some(Quantifier { name: "t".into(), var: "x".into(), value: "a".into() }),
            statements: vec![Statement {
                quantifiers: vec![Quantifier {
                    name: "o".into(),
                    var: "y".into(),
                    value: "c".into(),
                }],
                atoms: vec![Atom::Interval {
                    o1: "o".into(),
                    e1: Endpoint::Start,
                    o2: "t".into(),
                    e2: Endpoint::End,
                    interval: Interval::at_least(0),
                }],
            }],
        };
        let p = Problem::new(vec![x, y], vec![rule]).unwrap();
        let plan: MultiTimeline = BTreeMap::from([
            (
                "x".to_string(),
                vec![Token::new("b", time(2, 1)), Token::new("a", time(2, 1))],
            ),
            ("y".to_string(), vec![Token::new("c", time(1, 1))]),
        ]);
        let plain = validate_plan(&p, &plan, Semantics::Plain).unwrap();
        assert!(plain.satisfied());
        let future = validate_plan(&p, &plan, Semantics::Future).unwrap();
        assert!(!future.satisfied());
        assert_eq!(future.rule_outcomes[0].failing_token, Some(1));
    }

    #[test]
    fn validate_triggerless_and_structure() {
        let (x, y) = var_xy();
        let rule = SyncRule {
            name: "init".into(),
            trigger: None,
            statements: vec![Statement {
                quantifiers: vec![Quantifier {
                    name: "o".into(),
                    var: "x".into(),
                    value: "b".into(),
                }],
                atoms: vec![Atom::PointRight {
                    n: 0,
                    o: "o".into(),
                    e: Endpoint::Start,
                    interval: Interval::closed(0, 1),
                }],
            }],
        };
        let p = Problem::new(vec![x, y], vec![rule]).unwrap();
        let good: MultiTimeline = BTreeMap::from([
            (
                "x".to_string(),
                vec![Token::new("a", time(1, 1)), Token::new("b", time(1, 1))],
            ),
            ("y".to_string(), vec![Token::new("c", time(1, 1))]),
        ]);
        assert!(validate_plan(&p, &good, Semantics::Future).unwrap().satisfied());
        let late: MultiTimeline = BTreeMap::from([
            (
                "x".to_string(),
                vec![Token::new("a", time(3, 1)), Token::new("b", time(1, 1))],
            ),
            ("y".to_string(), vec![Token::new("c", time(1, 1))]),
        ]);
        assert!(!validate_plan(&p, &late, Semantics::Future).unwrap().satisfied());
        let mut missing = good.clone();
        missing.remove("y");
        assert!(matches!(
            validate_plan(&p, &missing, Semantics::Future),
            Err(DomainError::MissingTimeline(_))
        ));
        let mut stray = good;
        stray.insert("z".into(), vec![Token::new("c", time(1, 1))]);
        assert!(matches!(
            validate_plan(&p, &stray, Semantics::Future),
            Err(DomainError::StrayTimeline(_))
        ));
    }

    #[test]
    fn classify_reports_shapes() {
        let (x, y) = var_xy();
        let trig = Quantifier { name: "t".into(), var: "x".into(), value: "a".into() };
        let q1 = Quantifier { name: "o1".into(), var: "y".into(), value: "c".into() };
        let q2 = Quantifier { name: "o2".into(), var: "y".into(), value: "c".into() };
        let ivl = |o1: &str, o2: &str, i: Interval| Atom::Interval {
            o1: o1.into(),
            e1: Endpoint::Start,
            o2: o2.into(),
            e2: Endpoint::Start,
            interval: i,
        };
        let r1 = SyncRule {
            name: "r1".into(),
            trigger: Some(trig),
            statements: vec![Statement {
                quantifiers: vec![q1.clone(), q2.clone()],
                atoms: vec![
                    ivl("t", "o1", Interval::closed(1, 2)),
                    ivl("o1", "o2", Interval::singular(5)),
                ],
            }],
        };
        let r2 = SyncRule { name: "r2".into(), trigger: None, statements: vec![] };
        let p = Problem::new(vec![x, y], vec![r1, r2]).unwrap();
        let c = classify_problem(&p);
        assert_eq!(c.trigger_rules, 1);
        assert_eq!(c.trigger_less_rules, 1);
        assert_eq!(c.non_simple_triggers, vec!["r1".to_string()]);
        assert!(!c.intervals_all_zero_inf);
        assert!(!c.intervals_non_singular);
    }
}
