//! Timeline codes: timed words over a structural proposition alphabet.
//!
//! A plan is encoded as a timed word. Each position carries, per variable,
//! at most one main proposition recording a token boundary event: `(beg,v)`
//! opens the first token with value `v`, `(u,v)` simultaneously ends a
//! `u`-token and starts a `v`-token, and `(v,end)` closes the final token.
//! Every position also carries derived propositions that make the word
//! self-describing for a future-time logic:
//! - one stamp proposition per derived time window containing the stamp;
//! - a strict-advance proposition, present iff the stamp strictly grew
//!   (always present at position 0);
//! - past propositions: `past_s(v)` / `past_e(v)` hold iff an earlier
//!   position with the same stamp carries a start / an end event of `v`.
//!
//! The canonical encoding merges the per-variable event sequences greedily:
//! within a group of equal stamps, the j-th pending events of all variables
//! share the j-th position. Decoding projects per variable, so any legal
//! alignment decodes to the same plan.
//!
//! Two automata are built over this alphabet: `build_a_sv` accepts exactly
//! the codes of plans (with `|vars| + 2` clocks), and `build_a_exists`
//! accepts the words whose decoded plans satisfy all trigger-less rules.

use crate::domain::{Atom, Endpoint, Interval, MultiTimeline, Problem, Time, Token};
use crate::ta::{
    ClockId, LetterPred, Location, PropSet, TimedAutomaton, TimedWord, Transition,
};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use thiserror::Error;

/// Errors from encoding, decoding, and automaton construction.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("word is not a timeline code: {0}")]
    NotACode(String),
    #[error("automaton construction exceeded {0} locations")]
    LocationCap(usize),
    #[error("plan is structurally invalid: {0}")]
    BadPlan(String),
}

/// Meaning of a proposition id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prop {
    /// Token boundary on `var`: `prev` ends and `next` starts. `prev: None`
    /// is the begin marker, `next: None` the end marker.
    Main { var: String, prev: Option<String>, next: Option<String> },
    /// The position's stamp lies in the window.
    Stamp(Interval),
    /// The stamp strictly exceeds the previous position's (or position 0).
    StrictAdvance,
    /// An earlier equal-stamp position starts this value.
    PastStart(String),
    /// An earlier equal-stamp position ends this value.
    PastEnd(String),
    /// A token of this value with both endpoints at the current stamp
    /// ended at an earlier equal-stamp position. Strictly stronger than
    /// the conjunction of the two props above, which may be witnessed by
    /// two different tokens (an end before a start at the same stamp).
    PastTok(String),
}

/// Derived time windows of the problem's time-point atoms.
///
/// `n - e(o) in I` constrains the event stamp to `n - I`, `e(o) - n in I`
/// to `n + I`; both are clipped to the nonnegative axis. `None` means the
/// window is empty (the atom is unsatisfiable).
pub fn window_left(n: u64, i: &Interval) -> Option<Interval> {
    // stamp in [n - hi, n - lo], bounds and closedness swapped.
    let n = n as i64;
    let lo_signed: Option<i64> = i.hi().map(|h| n - h as i64);
    let hi_signed: i64 = n - i.lo() as i64;
    let hi_closed = i.lo_closed();
    if hi_signed < 0 {
        return None;
    }
    let (lo, lo_closed) = match lo_signed {
        None => (0, true),
        Some(l) if l <= 0 => (0, true),
        Some(l) => (l as u64, i.hi_closed()),
    };
    Interval::new(lo, Some(hi_signed as u64), lo_closed, hi_closed).ok()
}

/// See [`window_left`]; this is the `n + I` case.
pub fn window_right(n: u64, i: &Interval) -> Option<Interval> {
    let lo = n + i.lo();
    let hi = i.hi().map(|h| n + h);
    Interval::new(lo, hi, i.lo_closed(), i.hi_closed()).ok()
}

/// The window of a time-point atom; interval atoms have none.
pub fn point_window(atom: &Atom) -> Option<Interval> {
    match atom {
        Atom::PointLeft { n, interval, .. } => window_left(*n, interval),
        Atom::PointRight { n, interval, .. } => window_right(*n, interval),
        Atom::Interval { .. } => None,
    }
}

/// Collects the sorted, deduplicated stamp windows of all point atoms.
pub fn derive_intv_r(problem: &Problem) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::new();
    for r in problem.rules() {
        for st in &r.statements {
            for a in &st.atoms {
                if let Atom::Interval { .. } = a {
                    continue;
                }
                if let Some(w) = point_window(a) {
                    out.push(w);
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// The proposition alphabet of a problem, with stable ids.
#[derive(Debug, Clone)]
pub struct PropTable {
    props: Vec<Prop>,
    index: HashMap<Prop, u32>,
    intv_r: Vec<Interval>,
    /// Main prop ids per variable (problem order).
    var_mains: Vec<Vec<u32>>,
}

impl PropTable {
    pub fn new(problem: &Problem) -> Self {
        let mut props = Vec::new();
        let mut var_mains = Vec::new();
        for v in problem.vars() {
            let mut mains = Vec::new();
            let mut push = |props: &mut Vec<Prop>, p: Prop| {
                mains.push(props.len() as u32);
                props.push(p);
            };
            for val in &v.values {
                push(
                    &mut props,
                    Prop::Main { var: v.name.clone(), prev: None, next: Some(val.clone()) },
                );
            }
            for u in &v.values {
                for w in &v.values {
                    push(
                        &mut props,
                        Prop::Main {
                            var: v.name.clone(),
                            prev: Some(u.clone()),
                            next: Some(w.clone()),
                        },
                    );
                }
            }
            for val in &v.values {
                push(
                    &mut props,
                    Prop::Main { var: v.name.clone(), prev: Some(val.clone()), next: None },
                );
            }
            var_mains.push(mains);
        }
        let intv_r = derive_intv_r(problem);
        for w in &intv_r {
            props.push(Prop::Stamp(*w));
        }
        props.push(Prop::StrictAdvance);
        for v in problem.vars() {
            for val in &v.values {
                props.push(Prop::PastStart(val.clone()));
            }
        }
        for v in problem.vars() {
            for val in &v.values {
                props.push(Prop::PastEnd(val.clone()));
            }
        }
        for v in problem.vars() {
            for val in &v.values {
                props.push(Prop::PastTok(val.clone()));
            }
        }
        let index = props
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        PropTable { props, index, intv_r, var_mains }
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn prop(&self, id: u32) -> &Prop {
        &self.props[id as usize]
    }

    pub fn id(&self, p: &Prop) -> Option<u32> {
        self.index.get(p).copied()
    }

    /// # Panics
    ///
    /// Panics if the proposition is not in the table.
    pub fn id_of(&self, p: &Prop) -> u32 {
        self.index[p]
    }

    pub fn intv_r(&self) -> &[Interval] {
        &self.intv_r
    }

    pub fn strict_advance(&self) -> u32 {
        self.id_of(&Prop::StrictAdvance)
    }

    pub fn past_start(&self, value: &str) -> u32 {
        self.id_of(&Prop::PastStart(value.to_string()))
    }

    pub fn past_end(&self, value: &str) -> u32 {
        self.id_of(&Prop::PastEnd(value.to_string()))
    }

    pub fn past_tok(&self, value: &str) -> u32 {
        self.id_of(&Prop::PastTok(value.to_string()))
    }

    pub fn main(&self, var: &str, prev: Option<&str>, next: Option<&str>) -> u32 {
        self.id_of(&Prop::Main {
            var: var.to_string(),
            prev: prev.map(str::to_string),
            next: next.map(str::to_string),
        })
    }

    /// All main ids of one variable (by problem position).
    pub fn mains_of_var(&self, var_pos: usize) -> &[u32] {
        &self.var_mains[var_pos]
    }

    /// Main ids carrying a start event of this value.
    pub fn starts_of(&self, value: &str) -> Vec<u32> {
        self.props
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Prop::Main { next: Some(n), .. } if n == value))
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Main ids carrying an end event of this value.
    pub fn ends_of(&self, value: &str) -> Vec<u32> {
        self.props
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Prop::Main { prev: Some(q), .. } if q == value))
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn stamp_props(&self) -> Vec<(u32, Interval)> {
        self.props
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                Prop::Stamp(w) => Some((i as u32, *w)),
                _ => None,
            })
            .collect()
    }

    /// Human-readable rendering of a proposition.
    pub fn render(&self, id: u32) -> String {
        match self.prop(id) {
            Prop::Main { var, prev, next } => {
                let p = prev.as_deref().unwrap_or("beg");
                let n = next.as_deref().unwrap_or("end");
                format!("{var}:{p}->{n}")
            }
            Prop::Stamp(w) => format!("in{w}"),
            Prop::StrictAdvance => "adv".to_string(),
            Prop::PastStart(v) => format!("ps({v})"),
            Prop::PastEnd(v) => format!("pe({v})"),
            Prop::PastTok(v) => format!("pt({v})"),
        }
    }

    /// Human-readable rendering of a letter.
    pub fn render_letter(&self, letter: &PropSet) -> String {
        let mut s = String::from("{");
        for (i, id) in letter.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", self.render(id));
        }
        s.push('}');
        s
    }
}

/// Atomic cells of the stamp-window arrangement.
///
/// Returns (cell, ids of windows containing it) so that a transition can
/// enforce a consistent stamp proposition set with one global-clock guard.
/// Cells partition the nonnegative axis without splitting any window.
pub fn stamp_cells(table: &PropTable) -> Vec<(Interval, Vec<u32>)> {
    let windows = table.stamp_props();
    let mut bounds: Vec<u64> = vec![0];
    for (_, w) in &windows {
        bounds.push(w.lo());
        if let Some(h) = w.hi() {
            bounds.push(h);
        }
    }
    bounds.sort_unstable();
    bounds.dedup();
    let mut cells: Vec<Interval> = Vec::new();
    for (k, &b) in bounds.iter().enumerate() {
        cells.push(Interval::singular(b));
        if let Some(&next) = bounds.get(k + 1) {
            if next > b {
                if let Ok(open) = Interval::new(b, Some(next), false, false) {
                    cells.push(open);
                }
            }
        }
    }
    cells.push(Interval::greater_than(*bounds.last().unwrap()));
    cells
        .into_iter()
        .map(|cell| {
            let probe = sample_point(&cell);
            let ids = windows
                .iter()
                .filter(|(_, w)| w.contains(probe))
                .map(|(id, _)| *id)
                .collect();
            (cell, ids)
        })
        .collect()
}

fn sample_point(cell: &Interval) -> Time {
    if cell.lo_closed() {
        Time::from_integer(cell.lo() as i64)
    } else {
        match cell.hi() {
            // Open cell ]a,b[: midpoint.
            Some(h) => (Time::from_integer(cell.lo() as i64) + Time::from_integer(h as i64)) / 2,
            None => Time::from_integer(cell.lo() as i64 + 1),
        }
    }
}

/// Canonical encoding of a plan as a timed word.
///
/// # Panics
///
/// Panics if the plan mentions values outside the problem (validate first).
pub fn encode(problem: &Problem, table: &PropTable, plan: &MultiTimeline) -> TimedWord {
    // Per-variable event queues: (stamp, main prop id, start value, end value).
    struct Ev {
        stamp: Time,
        main: u32,
        starts: Option<String>,
        ends: Option<String>,
    }
    let mut queues: Vec<VecDeque<Ev>> = Vec::new();
    for v in problem.vars() {
        let tl = &plan[&v.name];
        assert!(!tl.is_empty(), "empty timeline for {}", v.name);
        let mut q = VecDeque::new();
        let mut t = Time::from_integer(0);
        for (j, tok) in tl.iter().enumerate() {
            let prev = if j == 0 { None } else { Some(tl[j - 1].value.as_str()) };
            q.push_back(Ev {
                stamp: t,
                main: table.main(&v.name, prev, Some(&tok.value)),
                starts: Some(tok.value.clone()),
                ends: prev.map(str::to_string),
            });
            t += tok.duration;
        }
        let last = tl.last().unwrap().value.clone();
        q.push_back(Ev {
            stamp: t,
            main: table.main(&v.name, Some(&last), None),
            starts: None,
            ends: Some(last),
        });
        queues.push(q);
    }
    let mut word: TimedWord = Vec::new();
    let mut prev_stamp: Option<Time> = None;
    let mut started_here: BTreeSet<String> = BTreeSet::new();
    let mut ended_here: BTreeSet<String> = BTreeSet::new();
    let mut completed_here: BTreeSet<String> = BTreeSet::new();
    // Per variable: the pending token started at the current stamp.
    let mut fresh: Vec<bool> = vec![false; queues.len()];
    let stamp_windows = table.stamp_props();
    loop {
        // Next stamp = least front stamp among queues.
        let stamp = match queues.iter().filter_map(|q| q.front().map(|e| e.stamp)).min() {
            None => break,
            Some(s) => s,
        };
        if prev_stamp != Some(stamp) {
            started_here.clear();
            ended_here.clear();
            completed_here.clear();
            fresh.iter_mut().for_each(|f| *f = false);
        }
        let mut letter = PropSet::empty();
        let mut new_starts = Vec::new();
        let mut new_ends = Vec::new();
        let mut new_completed = Vec::new();
        for (qi, q) in queues.iter_mut().enumerate() {
            if let Some(ev) = q.pop_front_if(|e| e.stamp == stamp) {
                letter.insert(ev.main);
                if let Some(e) = ev.ends {
                    if fresh[qi] {
                        new_completed.push(e.clone());
                    }
                    new_ends.push(e);
                }
                fresh[qi] = ev.starts.is_some();
                if let Some(s) = ev.starts {
                    new_starts.push(s);
                }
            }
        }
        for (id, w) in &stamp_windows {
            if w.contains(stamp) {
                letter.insert(*id);
            }
        }
        if prev_stamp.map(|p| stamp > p).unwrap_or(true) {
            letter.insert(table.strict_advance());
        }
        for v in &started_here {
            letter.insert(table.past_start(v));
        }
        for v in &ended_here {
            letter.insert(table.past_end(v));
        }
        for v in &completed_here {
            letter.insert(table.past_tok(v));
        }
        started_here.extend(new_starts);
        ended_here.extend(new_ends);
        completed_here.extend(new_completed);
        prev_stamp = Some(stamp);
        word.push((letter, stamp));
    }
    word
}

/// Decodes a timed word to a plan by per-variable projection.
pub fn decode(
    problem: &Problem,
    table: &PropTable,
    word: &[(PropSet, Time)],
) -> Result<MultiTimeline, EncodingError> {
    let mut plan: MultiTimeline = BTreeMap::new();
    for (vi, v) in problem.vars().iter().enumerate() {
        let mains = table.mains_of_var(vi);
        let mut events: Vec<(Time, &Prop)> = Vec::new();
        for (letter, stamp) in word {
            let here: Vec<u32> = mains.iter().copied().filter(|m| letter.contains(*m)).collect();
            match here.len() {
                0 => {}
                1 => events.push((*stamp, table.prop(here[0]))),
                _ => {
                    return Err(EncodingError::NotACode(format!(
                        "two events of {} at one position",
                        v.name
                    )))
                }
            }
        }
        if events.len() < 2 {
            return Err(EncodingError::NotACode(format!("no complete chain for {}", v.name)));
        }
        let mut tokens: Vec<Token> = Vec::new();
        for (k, (stamp, prop)) in events.iter().enumerate() {
            let Prop::Main { prev, next, .. } = prop else { unreachable!() };
            if k == 0 {
                if prev.is_some() {
                    return Err(EncodingError::NotACode(format!(
                        "{} does not open with a begin marker",
                        v.name
                    )));
                }
            } else {
                let expect = tokens.last().map(|t| t.value.as_str());
                if prev.as_deref() != expect {
                    return Err(EncodingError::NotACode(format!(
                        "broken event chain for {}",
                        v.name
                    )));
                }
                let dur = *stamp - events[k - 1].0;
                let value = expect.unwrap().to_string();
                tokens.last_mut().unwrap().duration = dur;
                let _ = value;
            }
            match next {
                Some(nv) => tokens.push(Token::new(nv.clone(), Time::from_integer(0))),
                None => {
                    if k != events.len() - 1 {
                        return Err(EncodingError::NotACode(format!(
                            "events of {} after its end marker",
                            v.name
                        )));
                    }
                }
            }
        }
        plan.insert(v.name.clone(), tokens);
    }
    Ok(plan)
}

/// Full predicate: is this word the code of some plan?
///
/// Checks event-chain shape with successor and duration legality, the
/// initialization condition (every variable events at position 0, stamp 0),
/// weakly monotone stamps, and exact derived propositions at all positions.
pub fn is_code(problem: &Problem, table: &PropTable, word: &[(PropSet, Time)]) -> bool {
    if word.is_empty() || word[0].1 != Time::from_integer(0) {
        return false;
    }
    let n_props = table.len() as u32;
    let mut prev_stamp: Option<Time> = None;
    for (letter, stamp) in word {
        if letter.iter().any(|id| id >= n_props) {
            return false;
        }
        if let Some(p) = prev_stamp {
            if *stamp < p {
                return false;
            }
        }
        prev_stamp = Some(*stamp);
    }
    // Per-variable chains decode and check against the variable's relation.
    let plan = match decode(problem, table, word) {
        Ok(p) => p,
        Err(_) => return false,
    };
    for v in problem.vars() {
        match crate::domain::check_timeline(v, &plan[&v.name]) {
            Ok(violations) if violations.is_empty() => {}
            _ => return false,
        }
    }
    // Initialization: every variable has an event at position 0.
    for (vi, _) in problem.vars().iter().enumerate() {
        let mains = table.mains_of_var(vi);
        if !mains.iter().any(|m| word[0].0.contains(*m)) {
            return false;
        }
    }
    // Exact derived propositions and at least one event per position.
    let stamp_windows = table.stamp_props();
    let mut prev_stamp: Option<Time> = None;
    let mut started_here: BTreeSet<String> = BTreeSet::new();
    let mut ended_here: BTreeSet<String> = BTreeSet::new();
    let mut completed_here: BTreeSet<String> = BTreeSet::new();
    // Variables whose pending token started at the current stamp.
    let mut fresh: BTreeSet<String> = BTreeSet::new();
    for (letter, stamp) in word {
        if prev_stamp != Some(*stamp) {
            started_here.clear();
            ended_here.clear();
            completed_here.clear();
            fresh.clear();
        }
        let mut expected = PropSet::empty();
        let mut any_main = false;
        let mut new_starts = Vec::new();
        let mut new_ends = Vec::new();
        let mut new_completed = Vec::new();
        for id in letter.iter() {
            if let Prop::Main { var, prev, next } = table.prop(id) {
                any_main = true;
                expected.insert(id);
                if let Some(pv) = prev {
                    if fresh.contains(var) {
                        new_completed.push(pv.clone());
                    }
                    new_ends.push(pv.clone());
                }
                if next.is_some() {
                    fresh.insert(var.clone());
                } else {
                    fresh.remove(var);
                }
                if let Some(nv) = next {
                    new_starts.push(nv.clone());
                }
            }
        }
        if !any_main {
            return false;
        }
        for (id, w) in &stamp_windows {
            if w.contains(*stamp) {
                expected.insert(*id);
            }
        }
        if prev_stamp.map(|p| *stamp > p).unwrap_or(true) {
            expected.insert(table.strict_advance());
        }
        for v in &started_here {
            expected.insert(table.past_start(v));
        }
        for v in &ended_here {
            expected.insert(table.past_end(v));
        }
        for v in &completed_here {
            expected.insert(table.past_tok(v));
        }
        if *letter != expected {
            return false;
        }
        started_here.extend(new_starts);
        ended_here.extend(new_ends);
        completed_here.extend(new_completed);
        prev_stamp = Some(*stamp);
    }
    true
}

// Location of the structural automaton: per-variable phase plus same-stamp
// event memories, used to emit past propositions exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Phase {
    /// A token with this value (index into the variable's values) runs.
    Pending(u32),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct SvLoc {
    phases: Vec<Phase>,
    mem_start: BTreeSet<String>,
    mem_end: BTreeSet<String>,
    /// Values of tokens completed within the current stamp block.
    mem_tok: BTreeSet<String>,
    /// Per variable: the pending token started at the current stamp.
    fresh: Vec<bool>,
}

const SV_LOCATION_CAP: usize = 200_000;

/// Builds the automaton accepting exactly the timeline codes of the problem.
///
/// Clocks: one per variable (reset at its events, guarding durations), one
/// strict-advance clock (reset at every position, `> 0` iff the stamp
/// advanced), and one global clock (never reset, guarding stamp windows).
pub fn build_a_sv(problem: &Problem, table: &PropTable) -> Result<TimedAutomaton, EncodingError> {
    let nv = problem.vars().len();
    let c_adv: ClockId = nv as ClockId;
    let c_glob: ClockId = nv as ClockId + 1;
    let cells = stamp_cells(table);
    let zero_stamp_ids: Vec<u32> = table
        .stamp_props()
        .iter()
        .filter(|(_, w)| w.contains(Time::from_integer(0)))
        .map(|(id, _)| *id)
        .collect();

    let mut clock_names: Vec<String> =
        problem.vars().iter().map(|v| format!("c_{}", v.name)).collect();
    clock_names.push("c_adv".into());
    clock_names.push("c_glob".into());

    let mut locations: Vec<Location> = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();
    let mut index: HashMap<SvLoc, usize> = HashMap::new();
    let mut queue: VecDeque<SvLoc> = VecDeque::new();

    locations.push(Location { name: "init".into(), initial: true, accepting: false });

    let intern = |loc: SvLoc,
                      locations: &mut Vec<Location>,
                      queue: &mut VecDeque<SvLoc>,
                      index: &mut HashMap<SvLoc, usize>|
     -> Result<usize, EncodingError> {
        if let Some(&i) = index.get(&loc) {
            return Ok(i);
        }
        let i = locations.len();
        if i > SV_LOCATION_CAP {
            return Err(EncodingError::LocationCap(SV_LOCATION_CAP));
        }
        let accepting = loc.phases.iter().all(|p| *p == Phase::Done);
        locations.push(Location { name: format!("q{i}"), initial: false, accepting });
        index.insert(loc.clone(), i);
        queue.push_back(loc);
        Ok(i)
    };

    // Initial transitions: one per combination of opening values.
    {
        let mut combo: Vec<u32> = vec![0; nv];
        loop {
            let mut letter = PropSet::empty();
            let mut phases = Vec::with_capacity(nv);
            let mut mem_start = BTreeSet::new();
            for (vi, v) in problem.vars().iter().enumerate() {
                let val = &v.values[combo[vi] as usize];
                letter.insert(table.main(&v.name, None, Some(val)));
                phases.push(Phase::Pending(combo[vi]));
                mem_start.insert(val.clone());
            }
            for id in &zero_stamp_ids {
                letter.insert(*id);
            }
            letter.insert(table.strict_advance());
            let target = SvLoc {
                phases,
                mem_start,
                mem_end: BTreeSet::new(),
                mem_tok: BTreeSet::new(),
                fresh: vec![true; nv],
            };
            let to = intern(target, &mut locations, &mut queue, &mut index)?;
            let mut resets: Vec<ClockId> = (0..nv as ClockId).collect();
            resets.push(c_adv);
            transitions.push(Transition {
                from: 0,
                to,
                letter: LetterPred::Exact(letter),
                guard: vec![(c_glob, Interval::singular(0))],
                resets,
            });
            // Next combination.
            let mut vi = 0;
            loop {
                if vi == nv {
                    break;
                }
                combo[vi] += 1;
                if (combo[vi] as usize) < problem.vars()[vi].values.len() {
                    break;
                }
                combo[vi] = 0;
                vi += 1;
            }
            if vi == nv {
                break;
            }
        }
    }

    // Per-variable event options from a phase.
    #[derive(Clone)]
    struct EventOpt {
        main: u32,
        guard_clock: ClockId,
        guard: Interval,
        new_phase: Phase,
        starts: Option<String>,
        ends: String,
    }

    while let Some(loc) = queue.pop_front() {
        let from = index[&loc];
        // Options per variable; None entry = variable does not event.
        let mut options: Vec<Vec<EventOpt>> = Vec::new();
        for (vi, v) in problem.vars().iter().enumerate() {
            let mut opts = Vec::new();
            if let Phase::Pending(val_idx) = loc.phases[vi] {
                let val = &v.values[val_idx as usize];
                let dur = *v.duration(val);
                for w in v.successors(val) {
                    let w_idx = v.values.iter().position(|x| x == w).unwrap() as u32;
                    opts.push(EventOpt {
                        main: table.main(&v.name, Some(val), Some(w)),
                        guard_clock: vi as ClockId,
                        guard: dur,
                        new_phase: Phase::Pending(w_idx),
                        starts: Some(w.clone()),
                        ends: val.clone(),
                    });
                }
                opts.push(EventOpt {
                    main: table.main(&v.name, Some(val), None),
                    guard_clock: vi as ClockId,
                    guard: dur,
                    new_phase: Phase::Done,
                    starts: None,
                    ends: val.clone(),
                });
            }
            options.push(opts);
        }
        // Enumerate nonempty subsets of eventing variables with one option
        // each, by a recursive walk.
        fn walk(
            vi: usize,
            options: &[Vec<EventOpt>],
            chosen: &mut Vec<Option<EventOpt>>,
            out: &mut Vec<Vec<Option<EventOpt>>>,
        ) {
            if vi == options.len() {
                if chosen.iter().any(|c| c.is_some()) {
                    out.push(chosen.clone());
                }
                return;
            }
            chosen.push(None);
            walk(vi + 1, options, chosen, out);
            chosen.pop();
            for opt in &options[vi] {
                chosen.push(Some(opt.clone()));
                walk(vi + 1, options, chosen, out);
                chosen.pop();
            }
        }
        let mut combos = Vec::new();
        walk(0, &options, &mut Vec::new(), &mut combos);
        let single_var = nv == 1;
        for combo in combos {
            let mut base_letter = PropSet::empty();
            let mut guard: Vec<(ClockId, Interval)> = Vec::new();
            let mut resets: Vec<ClockId> = vec![c_adv];
            let mut phases = loc.phases.clone();
            let mut starts = BTreeSet::new();
            let mut ends = BTreeSet::new();
            for (vi, c) in combo.iter().enumerate() {
                if let Some(opt) = c {
                    base_letter.insert(opt.main);
                    guard.push((opt.guard_clock, opt.guard));
                    resets.push(vi as ClockId);
                    phases[vi] = opt.new_phase.clone();
                    if let Some(s) = &opt.starts {
                        starts.insert(s.clone());
                    }
                    ends.insert(opt.ends.clone());
                }
            }
            for advance in [true, false] {
                // A lone variable events at every position, so its clock
                // matches the advance clock; skip stutter transitions its
                // duration window cannot allow.
                if !advance
                    && single_var
                    && !guard.iter().all(|(_, iv)| iv.contains_zero())
                {
                    continue;
                }
                let mut letter = base_letter.clone();
                let mut g = guard.clone();
                let (mem_start, mem_end, mem_tok);
                let mut fresh = vec![false; nv];
                if advance {
                    letter.insert(table.strict_advance());
                    g.push((c_adv, Interval::greater_than(0)));
                    mem_start = starts.clone();
                    mem_end = ends.clone();
                    // An advancing event cannot close a token opened at
                    // the same stamp: the block begins here.
                    mem_tok = BTreeSet::new();
                    for (vi, c) in combo.iter().enumerate() {
                        if let Some(opt) = c {
                            fresh[vi] = opt.starts.is_some();
                        }
                    }
                } else {
                    g.push((c_adv, Interval::singular(0)));
                    for v in &loc.mem_start {
                        letter.insert(table.past_start(v));
                    }
                    for v in &loc.mem_end {
                        letter.insert(table.past_end(v));
                    }
                    for v in &loc.mem_tok {
                        letter.insert(table.past_tok(v));
                    }
                    mem_start = loc.mem_start.union(&starts).cloned().collect();
                    mem_end = loc.mem_end.union(&ends).cloned().collect();
                    let mut mt = loc.mem_tok.clone();
                    for (vi, c) in combo.iter().enumerate() {
                        match c {
                            Some(opt) => {
                                if loc.fresh[vi] {
                                    mt.insert(opt.ends.clone());
                                }
                                fresh[vi] = opt.starts.is_some();
                            }
                            None => fresh[vi] = loc.fresh[vi],
                        }
                    }
                    mem_tok = mt;
                }
                let target =
                    SvLoc { phases: phases.clone(), mem_start, mem_end, mem_tok, fresh };
                let to = intern(target, &mut locations, &mut queue, &mut index)?;
                if cells.len() <= 1 {
                    let mut l = letter.clone();
                    if let Some((_, ids)) = cells.first() {
                        for id in ids {
                            l.insert(*id);
                        }
                    }
                    transitions.push(Transition {
                        from,
                        to,
                        letter: LetterPred::Exact(l),
                        guard: g.clone(),
                        resets: resets.clone(),
                    });
                } else {
                    for (cell, ids) in &cells {
                        let mut l = letter.clone();
                        for id in ids {
                            l.insert(*id);
                        }
                        let mut gc = g.clone();
                        gc.push((c_glob, *cell));
                        transitions.push(Transition {
                            from,
                            to,
                            letter: LetterPred::Exact(l),
                            guard: gc,
                            resets: resets.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(TimedAutomaton::new(clock_names, locations, transitions))
}

// ---------------------------------------------------------------------------
// Trigger-less rules: an automaton checking all of them on codes.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum QStatus {
    Unseen,
    Started,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum AStatus {
    Unarmed,
    /// Left event seen; anchor clock runs.
    Armed12,
    /// Right event seen first (window must contain 0; stamps must not
    /// advance until the left event arrives).
    Armed21,
    Sat,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum ExLoc {
    Init,
    At { stmt: usize, qs: Vec<QStatus>, atoms: Vec<AStatus> },
}

/// Builds the automaton accepting exactly the codes whose decoded plans
/// satisfy every trigger-less rule (one automaton per rule, intersected).
///
/// Letters are required/forbidden sets over main propositions (plus the
/// strict-advance proposition for reverse-armed atoms), so the automaton
/// composes with the structural one by product. Clocks: one per anchor
/// endpoint used by some interval atom, plus a never-reset global clock for
/// time-point windows.
pub fn build_a_exists(
    problem: &Problem,
    table: &PropTable,
) -> Result<TimedAutomaton, EncodingError> {
    let rules: Vec<_> = problem.rules().iter().filter(|r| r.trigger.is_none()).collect();
    let universal = || {
        TimedAutomaton::new(
            vec![],
            vec![Location { name: "u".into(), initial: true, accepting: true }],
            vec![Transition {
                from: 0,
                to: 0,
                letter: LetterPred::ReqForb { req: PropSet::empty(), forb: PropSet::empty() },
                guard: vec![],
                resets: vec![],
            }],
        )
    };
    if rules.is_empty() {
        return Ok(universal());
    }
    let mut automata = Vec::new();
    for rule in rules {
        automata.push(build_rule_automaton(problem, table, rule)?);
    }
    let mut acc = automata.remove(0);
    for a in automata {
        acc = crate::ta::product(&acc, &a);
    }
    Ok(acc)
}

fn build_rule_automaton(
    problem: &Problem,
    table: &PropTable,
    rule: &crate::domain::SyncRule,
) -> Result<TimedAutomaton, EncodingError> {
    // A statement with no quantifiers has no atoms (names would be unbound),
    // hence is trivially witnessed: the rule is universal.
    if rule.statements.iter().any(|st| st.quantifiers.is_empty()) {
        return Ok(TimedAutomaton::new(
            vec![],
            vec![Location { name: "u".into(), initial: true, accepting: true }],
            vec![Transition {
                from: 0,
                to: 0,
                letter: LetterPred::ReqForb { req: PropSet::empty(), forb: PropSet::empty() },
                guard: vec![],
                resets: vec![],
            }],
        ));
    }

    // Anchor clocks: one per (statement-local) left endpoint of an interval
    // atom; statements reuse ids since only one statement runs per word.
    let mut max_anchors = 0usize;
    let mut anchor_ids: Vec<HashMap<(String, Endpoint), ClockId>> = Vec::new();
    for st in &rule.statements {
        let mut map = HashMap::new();
        for a in &st.atoms {
            if let Atom::Interval { o1, e1, .. } = a {
                let next = map.len() as ClockId;
                map.entry((o1.clone(), *e1)).or_insert(next);
            }
        }
        max_anchors = max_anchors.max(map.len());
        anchor_ids.push(map);
    }
    let c_glob: ClockId = max_anchors as ClockId;
    let mut clock_names: Vec<String> = (0..max_anchors).map(|i| format!("a{i}")).collect();
    clock_names.push("glob".into());

    let adv = table.strict_advance();

    let mut locations: Vec<Location> = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();
    let mut index: HashMap<ExLoc, usize> = HashMap::new();
    let mut queue: VecDeque<ExLoc> = VecDeque::new();

    let intern = |loc: ExLoc,
                  rule: &crate::domain::SyncRule,
                  locations: &mut Vec<Location>,
                  queue: &mut VecDeque<ExLoc>,
                  index: &mut HashMap<ExLoc, usize>|
     -> usize {
        if let Some(&i) = index.get(&loc) {
            return i;
        }
        let i = locations.len();
        let accepting = match &loc {
            ExLoc::Init => false,
            ExLoc::At { qs, atoms, .. } => {
                qs.iter().all(|q| *q == QStatus::Done)
                    && atoms.iter().all(|a| *a == AStatus::Sat)
            }
        };
        let name = match &loc {
            ExLoc::Init => format!("{}:init", rule.name),
            ExLoc::At { stmt, .. } => format!("{}:{}:{}", rule.name, stmt, i),
        };
        locations.push(Location { name, initial: matches!(loc, ExLoc::Init), accepting });
        index.insert(loc.clone(), i);
        queue.push_back(loc);
        i
    };

    intern(ExLoc::Init, rule, &mut locations, &mut queue, &mut index);

    while let Some(loc) = queue.pop_front() {
        let from = index[&loc];
        let starting_points: Vec<(usize, Vec<QStatus>, Vec<AStatus>)> = match &loc {
            ExLoc::Init => rule
                .statements
                .iter()
                .enumerate()
                .map(|(si, st)| {
                    // Time-point atoms carry no status: they become guards
                    // at the event that marks their endpoint.
                    let atoms = st
                        .atoms
                        .iter()
                        .map(|a| match a {
                            Atom::Interval { .. } => AStatus::Unarmed,
                            _ => AStatus::Sat,
                        })
                        .collect();
                    (si, vec![QStatus::Unseen; st.quantifiers.len()], atoms)
                })
                .collect(),
            ExLoc::At { stmt, qs, atoms } => vec![(*stmt, qs.clone(), atoms.clone())],
        };
        let accepting_here = locations[from].accepting;
        if accepting_here {
            transitions.push(Transition {
                from,
                to: from,
                letter: LetterPred::ReqForb { req: PropSet::empty(), forb: PropSet::empty() },
                guard: vec![],
                resets: vec![],
            });
            continue;
        }
        for (si, qs, atoms) in starting_points {
            let st = &rule.statements[si];
            let anchors = &anchor_ids[si];
            // Enumerate per-quantifier actions.
            #[derive(Clone)]
            enum QAction {
                Stay,
                /// Start marked via this concrete main prop.
                Mark(u32),
                /// Waiting token: forbid all events of its variable.
                Hold,
                /// Token ends via this concrete main prop.
                End(u32),
            }
            let mut per_q: Vec<Vec<QAction>> = Vec::new();
            for (qi, q) in st.quantifiers.iter().enumerate() {
                let mut acts = Vec::new();
                match qs[qi] {
                    QStatus::Unseen => {
                        acts.push(QAction::Stay);
                        for m in table.starts_of(&q.value) {
                            acts.push(QAction::Mark(m));
                        }
                    }
                    QStatus::Started => {
                        acts.push(QAction::Hold);
                        for m in table.ends_of(&q.value) {
                            acts.push(QAction::End(m));
                        }
                    }
                    QStatus::Done => acts.push(QAction::Stay),
                }
                per_q.push(acts);
            }
            let mut choice = vec![0usize; per_q.len()];
            'combos: loop {
                // Assemble one transition for the current choice vector.
                let mut req = PropSet::empty();
                let mut forb = PropSet::empty();
                let mut guard: Vec<(ClockId, Interval)> = Vec::new();
                let mut resets: Vec<ClockId> = Vec::new();
                let mut new_qs = qs.clone();
                let mut events: Vec<(String, Endpoint)> = Vec::new();
                let mut feasible = true;
                for (qi, q) in st.quantifiers.iter().enumerate() {
                    match &per_q[qi][choice[qi]] {
                        QAction::Stay => {}
                        QAction::Hold => {
                            let vp = problem.var_position(&q.var).unwrap();
                            for m in table.mains_of_var(vp) {
                                forb.insert(*m);
                            }
                        }
                        QAction::Mark(m) => {
                            req.insert(*m);
                            new_qs[qi] = QStatus::Started;
                            events.push((q.name.clone(), Endpoint::Start));
                        }
                        QAction::End(m) => {
                            req.insert(*m);
                            new_qs[qi] = QStatus::Done;
                            events.push((q.name.clone(), Endpoint::End));
                        }
                    }
                }
                // Time-point windows attach at the event.
                for a in &st.atoms {
                    let (name, ep) = match a {
                        Atom::PointLeft { o, e, .. } | Atom::PointRight { o, e, .. } => {
                            (o.clone(), *e)
                        }
                        Atom::Interval { .. } => continue,
                    };
                    if events.contains(&(name, ep)) {
                        match point_window(a) {
                            Some(w) => guard.push((c_glob, w)),
                            None => feasible = false,
                        }
                    }
                }
                // Interval atom transitions.
                let mut new_atoms = atoms.clone();
                for (ai, a) in st.atoms.iter().enumerate() {
                    let Atom::Interval { o1, e1, o2, e2, interval } = a else {
                        continue;
                    };
                    let left_here = events.contains(&(o1.clone(), *e1));
                    let right_here = events.contains(&(o2.clone(), *e2));
                    let clock = anchors.get(&(o1.clone(), *e1)).copied();
                    match (atoms[ai], left_here, right_here) {
                        (AStatus::Sat, _, _) => {}
                        (AStatus::Unarmed, false, false) => {}
                        (AStatus::Unarmed, true, true) => {
                            if interval.contains_zero() {
                                new_atoms[ai] = AStatus::Sat;
                            } else {
                                feasible = false;
                            }
                        }
                        (AStatus::Unarmed, true, false) => {
                            new_atoms[ai] = AStatus::Armed12;
                            resets.push(clock.unwrap());
                        }
                        (AStatus::Unarmed, false, true) => {
                            if interval.contains_zero() {
                                new_atoms[ai] = AStatus::Armed21;
                            } else {
                                feasible = false;
                            }
                        }
                        (AStatus::Armed12, false, true) => {
                            guard.push((clock.unwrap(), *interval));
                            new_atoms[ai] = AStatus::Sat;
                        }
                        (AStatus::Armed12, false, false) => {}
                        (AStatus::Armed21, true, false) => {
                            new_atoms[ai] = AStatus::Sat;
                        }
                        (AStatus::Armed21, false, false) => {}
                        // An endpoint event cannot repeat.
                        _ => feasible = false,
                    }
                }
                // While an atom is reverse-armed, stamps must not advance
                // (the pending left event must share the right event's
                // stamp); this covers the arming letter's successors up to
                // and including the left event.
                if atoms.contains(&AStatus::Armed21) {
                    forb.insert(adv);
                }
                if feasible && req.is_disjoint(&forb) {
                    let target = ExLoc::At { stmt: si, qs: new_qs, atoms: new_atoms };
                    let to = intern(target, rule, &mut locations, &mut queue, &mut index);
                    transitions.push(Transition {
                        from,
                        to,
                        letter: LetterPred::ReqForb { req, forb },
                        guard,
                        resets,
                    });
                }
                // Advance the choice vector.
                let mut qi = 0;
                loop {
                    if qi == per_q.len() {
                        break 'combos;
                    }
                    choice[qi] += 1;
                    if choice[qi] < per_q[qi].len() {
                        break;
                    }
                    choice[qi] = 0;
                    qi += 1;
                }
                if per_q.is_empty() {
                    break;
                }
            }
        }
    }
    Ok(TimedAutomaton::new(clock_names, locations, transitions))
}
