//! Timed automata over propositional letters, with DBM zones.
//!
//! Automata read finite timed words: sequences of (letter, stamp) pairs with
//! weakly monotone stamps starting at or after 0. A letter is a finite set of
//! proposition ids; transitions match letters exactly or by required/forbidden
//! sets. Guards are conjunctions of clock-vs-interval constraints
//! (diagonal-free by construction: the guard type cannot express clock
//! differences).
//!
//! Reachability uses difference bound matrices in the classic integer
//! encoding with strictness bits, canonicalized by Floyd-Warshall, with
//! future closure, reset, per-clock maximum-constant extrapolation, and
//! inclusion subsumption (Bengtsson & Yi, "Timed automata: semantics,
//! algorithms and tools"). Zones carry a dynamic clock set so that products
//! with many declared but mostly inactive clocks stay small.
//!
//! A non-empty search yields a symbolic run; `concretize_path` turns it into
//! exact rational stamps by solving the run's difference constraints with a
//! lexicographic Bellman-Ford (values first, then as many strict slacks as
//! possible), realizing strictness with a power-of-two epsilon.

use crate::domain::{Interval, Time};
use num_rational::Rational64;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::hash::Hash;

/// Clock identifier within a (possibly shared) global clock space.
pub type ClockId = u32;

/// A sorted set of proposition ids; the letter alphabet is its powerset.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PropSet(Vec<u32>);

impl PropSet {
    pub fn empty() -> Self {
        PropSet(Vec::new())
    }

    pub fn from_vec(mut v: Vec<u32>) -> Self {
        v.sort_unstable();
        v.dedup();
        PropSet(v)
    }

    pub fn contains(&self, p: u32) -> bool {
        self.0.binary_search(&p).is_ok()
    }

    pub fn insert(&mut self, p: u32) {
        if let Err(i) = self.0.binary_search(&p) {
            self.0.insert(i, p);
        }
    }

    pub fn remove(&mut self, p: u32) {
        if let Ok(i) = self.0.binary_search(&p) {
            self.0.remove(i);
        }
    }

    pub fn union(&self, other: &PropSet) -> PropSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        PropSet::from_vec(v)
    }

    pub fn is_subset(&self, other: &PropSet) -> bool {
        self.0.iter().all(|p| other.contains(*p))
    }

    pub fn is_disjoint(&self, other: &PropSet) -> bool {
        self.0.iter().all(|p| !other.contains(*p))
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for PropSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// A timed word: letters with weakly monotone stamps, first stamp >= 0.
pub type TimedWord = Vec<(PropSet, Time)>;

/// Letter predicate on transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LetterPred {
    /// Matches exactly this letter.
    Exact(PropSet),
    /// Matches letters containing all of `req` and none of `forb`.
    ReqForb { req: PropSet, forb: PropSet },
}

impl LetterPred {
    pub fn matches(&self, letter: &PropSet) -> bool {
        match self {
            LetterPred::Exact(p) => p == letter,
            LetterPred::ReqForb { req, forb } => {
                req.is_subset(letter) && forb.is_disjoint(letter)
            }
        }
    }

    /// A concrete letter matching the predicate (the minimal model).
    pub fn witness_letter(&self) -> PropSet {
        match self {
            LetterPred::Exact(p) => p.clone(),
            LetterPred::ReqForb { req, .. } => req.clone(),
        }
    }

    /// Conjunction of two predicates; `None` when unsatisfiable.
    pub fn conjoin(&self, other: &LetterPred) -> Option<LetterPred> {
        match (self, other) {
            (LetterPred::Exact(a), LetterPred::Exact(b)) => {
                if a == b {
                    Some(LetterPred::Exact(a.clone()))
                } else {
                    None
                }
            }
            (LetterPred::Exact(a), rf @ LetterPred::ReqForb { .. })
            | (rf @ LetterPred::ReqForb { .. }, LetterPred::Exact(a)) => {
                if rf.matches(a) {
                    Some(LetterPred::Exact(a.clone()))
                } else {
                    None
                }
            }
            (
                LetterPred::ReqForb { req: r1, forb: f1 },
                LetterPred::ReqForb { req: r2, forb: f2 },
            ) => {
                let req = r1.union(r2);
                let forb = f1.union(f2);
                if req.is_disjoint(&forb) {
                    Some(LetterPred::ReqForb { req, forb })
                } else {
                    None
                }
            }
        }
    }
}

// Encoded DBM bound: value shifted left once, low bit clear for strict.
const INF: i64 = i64::MAX;

fn enc(v: i64, strict: bool) -> i64 {
    (v << 1) | i64::from(!strict)
}

fn bval(b: i64) -> i64 {
    b >> 1
}

fn bstrict(b: i64) -> bool {
    b & 1 == 0
}

fn badd(a: i64, b: i64) -> i64 {
    if a == INF || b == INF {
        INF
    } else {
        enc(bval(a) + bval(b), bstrict(a) || bstrict(b))
    }
}

const LE_ZERO: i64 = 1; // enc(0, false)

/// A convex clock zone over a dynamic set of clocks.
///
/// Row/column 0 is the reference; clock `clocks[k]` maps to row `k + 1`.
/// The matrix is kept canonical (all-pairs tightest bounds) by every
/// mutating operation; operations that can empty the zone return `false`
/// and leave the zone unusable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    clocks: Vec<ClockId>,
    dim: usize,
    m: Vec<i64>,
}

impl Zone {
    /// The zone where every clock equals 0.
    pub fn zero(mut clocks: Vec<ClockId>) -> Self {
        clocks.sort_unstable();
        clocks.dedup();
        let dim = clocks.len() + 1;
        Zone { clocks, dim, m: vec![LE_ZERO; dim * dim] }
    }

    pub fn clocks(&self) -> &[ClockId] {
        &self.clocks
    }

    fn at(&self, i: usize, j: usize) -> i64 {
        self.m[i * self.dim + j]
    }

    fn set(&mut self, i: usize, j: usize, b: i64) {
        self.m[i * self.dim + j] = b;
    }

    fn row_of(&self, c: ClockId) -> usize {
        match self.clocks.binary_search(&c) {
            Ok(k) => k + 1,
            Err(_) => panic!("clock {c} not active in zone"),
        }
    }

    /// Floyd-Warshall closure; returns false when the zone became empty.
    fn canonicalize(&mut self) -> bool {
        let d = self.dim;
        for k in 0..d {
            for i in 0..d {
                let ik = self.at(i, k);
                if ik == INF {
                    continue;
                }
                for j in 0..d {
                    let kj = self.at(k, j);
                    if kj == INF {
                        continue;
                    }
                    let via = badd(ik, kj);
                    if via < self.at(i, j) {
                        self.set(i, j, via);
                    }
                }
            }
        }
        (0..d).all(|i| self.at(i, i) >= LE_ZERO)
    }

    /// Future closure: erase upper bounds on all clocks.
    pub fn delay(&mut self) {
        for i in 1..self.dim {
            self.set(i, 0, INF);
        }
    }

    /// Intersects with `c in interval`; false when empty.
    pub fn constrain(&mut self, c: ClockId, interval: &Interval) -> bool {
        let r = self.row_of(c);
        let lo = interval.lo() as i64;
        let lo_bound = enc(-lo, !interval.lo_closed());
        if lo_bound < self.at(0, r) {
            self.set(0, r, lo_bound);
        }
        if let Some(hi) = interval.hi() {
            let hi_bound = enc(hi as i64, !interval.hi_closed());
            if hi_bound < self.at(r, 0) {
                self.set(r, 0, hi_bound);
            }
        }
        self.canonicalize()
    }

    /// Resets a clock to 0.
    pub fn reset(&mut self, c: ClockId) {
        let r = self.row_of(c);
        for j in 0..self.dim {
            let b0 = self.at(0, j);
            self.set(r, j, b0);
            let b1 = self.at(j, 0);
            self.set(j, r, b1);
        }
        self.set(r, r, LE_ZERO);
    }

    /// Adds a fresh clock at value 0.
    pub fn add_clock(&mut self, c: ClockId) {
        assert!(
            self.clocks.binary_search(&c).is_err(),
            "clock {c} already active"
        );
        let pos = self.clocks.binary_search(&c).unwrap_err();
        let old_dim = self.dim;
        let new_dim = old_dim + 1;
        let new_row = pos + 1;
        let mut m = vec![LE_ZERO; new_dim * new_dim];
        let map = |i: usize| if i < new_row { i } else { i + 1 };
        for i in 0..old_dim {
            for j in 0..old_dim {
                m[map(i) * new_dim + map(j)] = self.at(i, j);
            }
        }
        // The new clock equals 0, i.e. it mirrors the reference row/column.
        for j in 0..old_dim {
            m[new_row * new_dim + map(j)] = self.at(0, j);
            m[map(j) * new_dim + new_row] = self.at(j, 0);
        }
        m[new_row * new_dim + new_row] = LE_ZERO;
        self.clocks.insert(pos, c);
        self.dim = new_dim;
        self.m = m;
    }

    /// Removes a clock (existential projection; canonicity is preserved).
    pub fn drop_clock(&mut self, c: ClockId) {
        let r = self.row_of(c);
        let old_dim = self.dim;
        let new_dim = old_dim - 1;
        let mut m = vec![LE_ZERO; new_dim * new_dim];
        let map = |i: usize| if i < r { i } else { i + 1 };
        for i in 0..new_dim {
            for j in 0..new_dim {
                m[i * new_dim + j] = self.at(map(i), map(j));
            }
        }
        self.clocks.remove(r - 1);
        self.dim = new_dim;
        self.m = m;
    }

    /// Maximum-constant extrapolation: bounds beyond a clock's constant are
    /// widened, preserving reachability for diagonal-free automata.
    pub fn extrapolate(&mut self, max_const: impl Fn(ClockId) -> u64) {
        let d = self.dim;
        let k = |i: usize, zone: &Zone| -> i64 {
            if i == 0 {
                0
            } else {
                max_const(zone.clocks[i - 1]) as i64
            }
        };
        for i in 0..d {
            let ki = k(i, self);
            for j in 0..d {
                if i == j {
                    continue;
                }
                let b = self.at(i, j);
                if b == INF {
                    continue;
                }
                if bval(b) > ki {
                    self.set(i, j, INF);
                } else {
                    let kj = k(j, self);
                    if bval(b) < -kj {
                        self.set(i, j, enc(-kj, true));
                    }
                }
            }
        }
        let ok = self.canonicalize();
        debug_assert!(ok, "extrapolation cannot empty a zone");
    }

    /// Whether this zone includes `other` (same clock set required).
    pub fn includes(&self, other: &Zone) -> bool {
        assert_eq!(self.clocks, other.clocks, "zone clock sets differ");
        self.m.iter().zip(other.m.iter()).all(|(a, b)| a >= b)
    }

    /// Exact membership of a rational clock valuation.
    pub fn contains_point(&self, vals: &[(ClockId, Time)]) -> bool {
        let val = |i: usize| -> Time {
            if i == 0 {
                Time::from_integer(0)
            } else {
                let c = self.clocks[i - 1];
                vals.iter()
                    .find(|(k, _)| *k == c)
                    .map(|(_, v)| *v)
                    .expect("valuation missing an active clock")
            }
        };
        for i in 0..self.dim {
            for j in 0..self.dim {
                let b = self.at(i, j);
                if b == INF {
                    continue;
                }
                let diff = val(i) - val(j);
                let bound = Rational64::from_integer(bval(b));
                let ok = if bstrict(b) { diff < bound } else { diff <= bound };
                if !ok {
                    return false;
                }
            }
        }
        true
    }
}

/// A symbolic transition: letter predicate, guard, clocks reset to 0.
#[derive(Debug, Clone)]
pub struct SymTransition<L> {
    pub to: L,
    pub letter: LetterPred,
    pub guard: Vec<(ClockId, Interval)>,
    pub resets: Vec<ClockId>,
}

/// Letter-driven view of a timed transition system.
///
/// Locations carry their active clock set; a transition implicitly spawns
/// (at 0) the target's clocks missing at the source and drops the source's
/// clocks missing at the target.
pub trait LetterStep {
    type Loc: Clone + Eq + Hash + Ord + fmt::Debug;

    fn initials(&self) -> Vec<Self::Loc>;
    fn accepting(&self, loc: &Self::Loc) -> bool;
    fn active_clocks(&self, loc: &Self::Loc) -> Vec<ClockId>;
    /// Transitions from `loc` enabled on the concrete `letter`.
    fn step(&self, loc: &Self::Loc, letter: &PropSet) -> Vec<SymTransition<Self::Loc>>;
    /// Maximum constant relevant to a clock (for extrapolation).
    fn clock_max(&self, c: ClockId) -> u64;
}

/// Transition systems that can enumerate transitions symbolically.
pub trait SymbolicSource: LetterStep {
    fn symbolic_from(&self, loc: &Self::Loc) -> Vec<SymTransition<Self::Loc>>;
}

/// An explicit location of an explicit automaton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub name: String,
    pub initial: bool,
    pub accepting: bool,
}

/// An explicit transition between location indices.
#[derive(Debug, Clone)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub letter: LetterPred,
    pub guard: Vec<(ClockId, Interval)>,
    pub resets: Vec<ClockId>,
}

/// An explicit timed automaton with a fixed clock set.
#[derive(Debug, Clone)]
pub struct TimedAutomaton {
    pub clock_names: Vec<String>,
    pub locations: Vec<Location>,
    pub transitions: Vec<Transition>,
    /// Per-clock maximum constant for extrapolation.
    pub clock_bounds: Vec<u64>,
    outgoing: Vec<Vec<usize>>,
}

impl TimedAutomaton {
    pub fn new(
        clock_names: Vec<String>,
        locations: Vec<Location>,
        transitions: Vec<Transition>,
    ) -> Self {
        let mut clock_bounds = vec![0u64; clock_names.len()];
        for t in &transitions {
            for (c, iv) in &t.guard {
                let b = &mut clock_bounds[*c as usize];
                *b = (*b).max(iv.max_constant());
            }
        }
        let mut outgoing = vec![Vec::new(); locations.len()];
        for (i, t) in transitions.iter().enumerate() {
            outgoing[t.from].push(i);
        }
        TimedAutomaton { clock_names, locations, transitions, clock_bounds, outgoing }
    }

    pub fn num_clocks(&self) -> u32 {
        self.clock_names.len() as u32
    }

    /// Graphviz rendering for inspection.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ta {\n  rankdir=LR;\n");
        for (i, l) in self.locations.iter().enumerate() {
            let shape = if l.accepting { "doublecircle" } else { "circle" };
            let style = if l.initial { ",style=bold" } else { "" };
            let _ = writeln!(s, "  n{i} [label=\"{}\",shape={shape}{style}];", l.name);
        }
        for t in &self.transitions {
            let mut label = String::new();
            match &t.letter {
                LetterPred::Exact(p) => {
                    let _ = write!(label, "={p:?}");
                }
                LetterPred::ReqForb { req, forb } => {
                    let _ = write!(label, "+{req:?}-{forb:?}");
                }
            }
            for (c, iv) in &t.guard {
                let _ = write!(label, " {}:{iv}", self.clock_names[*c as usize]);
            }
            if !t.resets.is_empty() {
                let _ = write!(label, " r");
                for c in &t.resets {
                    let _ = write!(label, "[{}]", self.clock_names[*c as usize]);
                }
            }
            let _ = writeln!(s, "  n{} -> n{} [label=\"{label}\"];", t.from, t.to);
        }
        s.push_str("}\n");
        s
    }
}

impl LetterStep for TimedAutomaton {
    type Loc = usize;

    fn initials(&self) -> Vec<usize> {
        self.locations
            .iter()
            .enumerate()
            .filter(|(_, l)| l.initial)
            .map(|(i, _)| i)
            .collect()
    }

    fn accepting(&self, loc: &usize) -> bool {
        self.locations[*loc].accepting
    }

    fn active_clocks(&self, _loc: &usize) -> Vec<ClockId> {
        (0..self.num_clocks()).collect()
    }

    fn step(&self, loc: &usize, letter: &PropSet) -> Vec<SymTransition<usize>> {
        self.outgoing[*loc]
            .iter()
            .map(|&i| &self.transitions[i])
            .filter(|t| t.letter.matches(letter))
            .map(|t| SymTransition {
                to: t.to,
                letter: t.letter.clone(),
                guard: t.guard.clone(),
                resets: t.resets.clone(),
            })
            .collect()
    }

    fn clock_max(&self, c: ClockId) -> u64 {
        self.clock_bounds[c as usize]
    }
}

impl SymbolicSource for TimedAutomaton {
    fn symbolic_from(&self, loc: &usize) -> Vec<SymTransition<usize>> {
        self.outgoing[*loc]
            .iter()
            .map(|&i| &self.transitions[i])
            .map(|t| SymTransition {
                to: t.to,
                letter: t.letter.clone(),
                guard: t.guard.clone(),
                resets: t.resets.clone(),
            })
            .collect()
    }
}

/// Synchronous product of two explicit automata.
///
/// The second automaton's clocks are shifted past the first's. Transitions
/// pair up when their letter predicates are jointly satisfiable; only
/// locations reachable from initial pairs are materialized.
pub fn product(a: &TimedAutomaton, b: &TimedAutomaton) -> TimedAutomaton {
    let off = a.num_clocks();
    let mut clock_names = a.clock_names.clone();
    clock_names.extend(b.clock_names.iter().map(|n| format!("b_{n}")));
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut locations = Vec::new();
    let mut transitions = Vec::new();
    let mut queue = VecDeque::new();
    for ia in a.initials() {
        for ib in b.initials() {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry((ia, ib)) {
                e.insert(locations.len());
                locations.push(Location {
                    name: format!("{}|{}", a.locations[ia].name, b.locations[ib].name),
                    initial: true,
                    accepting: a.locations[ia].accepting && b.locations[ib].accepting,
                });
                queue.push_back((ia, ib));
            }
        }
    }
    while let Some((ia, ib)) = queue.pop_front() {
        let from = index[&(ia, ib)];
        for ta in a.outgoing[ia].iter().map(|&i| &a.transitions[i]) {
            for tb in b.outgoing[ib].iter().map(|&i| &b.transitions[i]) {
                let Some(letter) = ta.letter.conjoin(&tb.letter) else {
                    continue;
                };
                let key = (ta.to, tb.to);
                let to = *index.entry(key).or_insert_with(|| {
                    let id = locations.len();
                    locations.push(Location {
                        name: format!(
                            "{}|{}",
                            a.locations[ta.to].name, b.locations[tb.to].name
                        ),
                        initial: false,
                        accepting: a.locations[ta.to].accepting
                            && b.locations[tb.to].accepting,
                    });
                    queue.push_back(key);
                    id
                });
                let mut guard = ta.guard.clone();
                guard.extend(tb.guard.iter().map(|(c, iv)| (c + off, *iv)));
                let mut resets = ta.resets.clone();
                resets.extend(tb.resets.iter().map(|c| c + off));
                transitions.push(Transition { from, to, letter, guard, resets });
            }
        }
    }
    TimedAutomaton::new(clock_names, locations, transitions)
}

/// Exact-membership simulation of a timed word.
///
/// Tracks the full set of reachable (location, rational valuation) states.
/// Stamps must be weakly monotone and start at or after 0.
pub fn membership<S: LetterStep>(src: &S, word: &[(PropSet, Time)]) -> bool {
    membership_with(src, word, |_| {})
}

/// As [`membership`], additionally calling `visit` on every location the
/// simulation reaches, dead branches included.
pub fn membership_with<S: LetterStep>(
    src: &S,
    word: &[(PropSet, Time)],
    mut visit: impl FnMut(&S::Loc),
) -> bool {
    type Val = Vec<(ClockId, Time)>;
    let mut states: HashSet<(S::Loc, Val)> = src
        .initials()
        .into_iter()
        .map(|l| {
            visit(&l);
            let val: Val = src
                .active_clocks(&l)
                .into_iter()
                .map(|c| (c, Time::from_integer(0)))
                .collect();
            (l, val)
        })
        .collect();
    if word.is_empty() {
        return states.iter().any(|(l, _)| src.accepting(l));
    }
    let mut prev = Time::from_integer(0);
    for (letter, stamp) in word {
        if *stamp < prev {
            return false;
        }
        let delta = *stamp - prev;
        prev = *stamp;
        let mut next: HashSet<(S::Loc, Val)> = HashSet::new();
        for (loc, val) in &states {
            let val: Val = val.iter().map(|(c, v)| (*c, *v + delta)).collect();
            for tr in src.step(loc, letter) {
                let ok = tr.guard.iter().all(|(c, iv)| {
                    let v = val
                        .iter()
                        .find(|(k, _)| k == c)
                        .map(|(_, v)| *v)
                        .expect("guard on inactive clock");
                    iv.contains(v)
                });
                if !ok {
                    continue;
                }
                let target_clocks = src.active_clocks(&tr.to);
                let new_val: Val = target_clocks
                    .into_iter()
                    .map(|c| {
                        if tr.resets.contains(&c) {
                            (c, Time::from_integer(0))
                        } else {
                            match val.iter().find(|(k, _)| *k == c) {
                                Some((_, v)) => (c, *v),
                                // Spawned clock: starts at 0.
                                None => (c, Time::from_integer(0)),
                            }
                        }
                    })
                    .collect();
                visit(&tr.to);
                next.insert((tr.to.clone(), new_val));
            }
        }
        states = next;
        if states.is_empty() {
            return false;
        }
    }
    states.iter().any(|(l, _)| src.accepting(l))
}

/// One step of a symbolic run: the concrete letter, the guard that was
/// checked, and the clocks that are 0 afterwards (resets and spawns).
#[derive(Debug, Clone)]
pub struct RunStep {
    pub letter: PropSet,
    pub guard: Vec<(ClockId, Interval)>,
    pub resets: Vec<ClockId>,
}

/// Result of an emptiness check.
#[derive(Debug, Clone)]
pub enum Emptiness {
    /// The language is empty (search exhausted).
    Empty,
    /// A symbolic accepting run was found.
    NonEmpty(Vec<RunStep>),
    /// The node budget was exhausted before a verdict.
    BudgetExceeded,
}

struct SearchNode<L> {
    loc: L,
    zone: Zone,
    parent: Option<(usize, RunStep)>,
}

/// Zone-based emptiness with inclusion subsumption and breadth-first order.
///
/// The empty word is accepted iff an initial location is accepting. The
/// budget bounds the number of expanded nodes.
pub fn empty_or_witness<S: SymbolicSource>(src: &S, max_nodes: usize) -> Emptiness {
    empty_or_witness_watch(src, max_nodes, |_| {})
}

/// As [`empty_or_witness`], additionally calling `watch` on every location
/// the search generates (initials included, subsumed nodes included).
pub fn empty_or_witness_watch<S: SymbolicSource>(
    src: &S,
    max_nodes: usize,
    mut watch: impl FnMut(&S::Loc),
) -> Emptiness {
    let mut nodes: Vec<SearchNode<S::Loc>> = Vec::new();
    let mut seen: HashMap<S::Loc, Vec<Zone>> = HashMap::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    for loc in src.initials() {
        watch(&loc);
        if src.accepting(&loc) {
            return Emptiness::NonEmpty(Vec::new());
        }
        let mut zone = Zone::zero(src.active_clocks(&loc));
        zone.delay();
        let stored = seen.entry(loc.clone()).or_default();
        if stored.iter().any(|z| z.includes(&zone)) {
            continue;
        }
        stored.push(zone.clone());
        nodes.push(SearchNode { loc, zone, parent: None });
        queue.push_back(nodes.len() - 1);
    }
    let mut expanded = 0usize;
    while let Some(ni) = queue.pop_front() {
        if expanded >= max_nodes {
            return Emptiness::BudgetExceeded;
        }
        expanded += 1;
        let (loc, zone) = (nodes[ni].loc.clone(), nodes[ni].zone.clone());
        let src_clocks = src.active_clocks(&loc);
        for tr in src.symbolic_from(&loc) {
            let mut z = zone.clone();
            let mut feasible = true;
            for (c, iv) in &tr.guard {
                if !z.constrain(*c, iv) {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                continue;
            }
            watch(&tr.to);
            let dst_clocks = src.active_clocks(&tr.to);
            let mut zeroed = tr.resets.clone();
            for c in &tr.resets {
                z.reset(*c);
            }
            for c in &src_clocks {
                if !dst_clocks.contains(c) {
                    z.drop_clock(*c);
                }
            }
            for c in &dst_clocks {
                if !src_clocks.contains(c) {
                    z.add_clock(*c);
                    zeroed.push(*c);
                }
            }
            let step = RunStep {
                letter: tr.letter.witness_letter(),
                guard: tr.guard.clone(),
                resets: zeroed,
            };
            if src.accepting(&tr.to) {
                // Reconstruct the run along parent pointers.
                let mut steps = vec![step];
                let mut cur = ni;
                while let Some((p, s)) = &nodes[cur].parent {
                    steps.push(s.clone());
                    cur = *p;
                }
                steps.reverse();
                return Emptiness::NonEmpty(steps);
            }
            z.extrapolate(|c| src.clock_max(c));
            z.delay();
            let stored = seen.entry(tr.to.clone()).or_default();
            if stored.iter().any(|old| old.includes(&z)) {
                continue;
            }
            stored.push(z.clone());
            nodes.push(SearchNode { loc: tr.to.clone(), zone: z, parent: Some((ni, step)) });
            queue.push_back(nodes.len() - 1);
        }
    }
    Emptiness::Empty
}

/// Turns a symbolic run into exact stamps satisfying every guard.
///
/// The run induces difference constraints over the step stamps (guards
/// measure a stamp against the clock's last zeroing, stamps are weakly
/// monotone, and consecutive stamps are additionally kept within `K + 1` of
/// each other, which never excludes a feasible run because every finite
/// guard constant is at most `K`). A lexicographic Bellman-Ford minimizes
/// values and then maximizes the number of strict inequalities that can be
/// left slack; strictness is realized as `d - s * eps` with `eps` the
/// largest power of two below `1 / (max strict count + 1)`.
///
/// # Panics
///
/// Panics if the constraint system is infeasible: zone search guarantees
/// feasibility, so that indicates an internal invariant breach.
pub fn concretize_path(steps: &[RunStep]) -> Vec<Time> {
    let n = steps.len();
    if n == 0 {
        return Vec::new();
    }
    let mut k_max: i64 = 0;
    for st in steps {
        for (_, iv) in &st.guard {
            k_max = k_max.max(iv.max_constant() as i64);
        }
    }
    // Edge (i -> j, bound, strict) encodes x_j - x_i <= bound.
    let mut edges: Vec<(usize, usize, i64, bool)> = Vec::new();
    for t in 1..=n {
        edges.push((t, t - 1, 0, false));
        edges.push((t - 1, t, k_max + 1, false));
    }
    // Reset positions: clock -> index of the step that last zeroed it
    // (0 = the origin, where every initial clock is 0).
    let mut reset_at: HashMap<ClockId, usize> = HashMap::new();
    for (t, st) in steps.iter().enumerate() {
        let pos = t + 1;
        for (c, iv) in &st.guard {
            let r = reset_at.get(c).copied().unwrap_or(0);
            let lo = iv.lo() as i64;
            // x_pos - x_r >= lo: edge pos -> r with bound -lo.
            edges.push((pos, r, -lo, !iv.lo_closed()));
            if let Some(hi) = iv.hi() {
                edges.push((r, pos, hi as i64, !iv.hi_closed()));
            }
        }
        for c in &st.resets {
            reset_at.insert(*c, pos);
        }
    }
    // Lexicographic Bellman-Ford: order (value, -strict_count).
    let num = n + 1;
    let mut dist: Vec<(i64, u32)> = vec![(i64::MAX, 0); num];
    dist[0] = (0, 0);
    let better = |a: (i64, u32), b: (i64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);
    for round in 0..=num {
        let mut changed = false;
        for &(i, j, b, strict) in &edges {
            if dist[i].0 == i64::MAX {
                continue;
            }
            let cand = (dist[i].0 + b, dist[i].1 + u32::from(strict));
            if better(cand, dist[j]) {
                assert!(round < num, "negative cycle: infeasible symbolic run");
                dist[j] = cand;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let max_strict = dist.iter().map(|d| d.1).max().unwrap_or(0);
    let mut denom: i64 = 1;
    while denom <= max_strict as i64 {
        denom *= 2;
    }
    let eps = Rational64::new(1, denom);
    let origin = Rational64::from_integer(dist[0].0) - Rational64::from_integer(dist[0].1 as i64) * eps;
    (1..=n)
        .map(|t| {
            Rational64::from_integer(dist[t].0) - Rational64::from_integer(dist[t].1 as i64) * eps
                - origin
        })
        .collect()
}

/// Exhaustive bounded search for an accepted word (testing oracle).
///
/// Explores words whose stamps are multiples of `1/denom` up to `horizon`
/// and whose length is at most `max_len`, over the given letter alphabet.
pub fn bounded_word_search<S: LetterStep>(
    src: &S,
    alphabet: &[PropSet],
    horizon: u64,
    max_len: usize,
    denom: i64,
) -> Option<TimedWord> {
    type Val = Vec<(ClockId, Time)>;
    let ticks = (horizon as i64) * denom;
    let stamps: Vec<Time> = (0..=ticks).map(|i| Rational64::new(i, denom)).collect();
    struct Dfs<'a, S: LetterStep> {
        src: &'a S,
        alphabet: &'a [PropSet],
        stamps: &'a [Time],
        max_len: usize,
    }
    impl<S: LetterStep> Dfs<'_, S> {
        fn go(
            &self,
            loc: &S::Loc,
            val: &[(ClockId, Time)],
            from_tick: usize,
            word: &mut TimedWord,
        ) -> bool {
            if self.src.accepting(loc) {
                return true;
            }
            if word.len() == self.max_len {
                return false;
            }
            for ti in from_tick..self.stamps.len() {
                let stamp = self.stamps[ti];
                let prev = word.last().map(|(_, t)| *t).unwrap_or(Time::from_integer(0));
                let delta = stamp - prev;
                let moved: Val =
                    val.iter().map(|(c, v)| (*c, *v + delta)).collect();
                for letter in self.alphabet {
                    for tr in self.src.step(loc, letter) {
                        let ok = tr.guard.iter().all(|(c, iv)| {
                            let v = moved
                                .iter()
                                .find(|(k, _)| k == c)
                                .map(|(_, v)| *v)
                                .expect("guard on inactive clock");
                            iv.contains(v)
                        });
                        if !ok {
                            continue;
                        }
                        let new_val: Val = self
                            .src
                            .active_clocks(&tr.to)
                            .into_iter()
                            .map(|c| {
                                if tr.resets.contains(&c) {
                                    (c, Time::from_integer(0))
                                } else {
                                    moved
                                        .iter()
                                        .find(|(k, _)| *k == c)
                                        .map(|(_, v)| (c, *v))
                                        .unwrap_or((c, Time::from_integer(0)))
                                }
                            })
                            .collect();
                        word.push((letter.clone(), stamp));
                        if self.go(&tr.to, &new_val, ti, word) {
                            return true;
                        }
                        word.pop();
                    }
                }
            }
            false
        }
    }
    let dfs = Dfs { src, alphabet, stamps: &stamps, max_len };
    for loc in src.initials() {
        let val: Val = src
            .active_clocks(&loc)
            .into_iter()
            .map(|c| (c, Time::from_integer(0)))
            .collect();
        let mut word = Vec::new();
        if dfs.go(&loc, &val, 0, &mut word) {
            return Some(word);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::time;

    fn iv(lo: u64, hi: u64) -> Interval {
        Interval::closed(lo, hi)
    }

    #[test]
    fn zone_zero_and_delay() {
        let mut z = Zone::zero(vec![0, 1]);
        assert!(z.contains_point(&[(0, time(0, 1)), (1, time(0, 1))]));
        assert!(!z.contains_point(&[(0, time(1, 1)), (1, time(1, 1))]));
        z.delay();
        assert!(z.contains_point(&[(0, time(5, 2)), (1, time(5, 2))]));
        // Delay keeps clocks synchronized.
        assert!(!z.contains_point(&[(0, time(1, 1)), (1, time(2, 1))]));
    }

    #[test]
    fn zone_constrain_and_reset() {
        let mut z = Zone::zero(vec![0, 1]);
        z.delay();
        assert!(z.constrain(0, &iv(2, 3)));
        assert!(z.contains_point(&[(0, time(5, 2)), (1, time(5, 2))]));
        z.reset(1);
        assert!(z.contains_point(&[(0, time(5, 2)), (1, time(0, 1))]));
        z.delay();
        // x0 - x1 stays in [2,3] after reset and delay.
        assert!(z.contains_point(&[(0, time(7, 2)), (1, time(1, 1))]));
        assert!(!z.contains_point(&[(0, time(7, 2)), (1, time(2, 1))]));
        let mut dead = Zone::zero(vec![0]);
        assert!(!dead.constrain(0, &Interval::greater_than(0)));
    }

    #[test]
    fn zone_strict_bounds() {
        let mut z = Zone::zero(vec![0]);
        z.delay();
        assert!(z.constrain(0, &Interval::new(1, Some(2), false, false).unwrap()));
        assert!(!z.contains_point(&[(0, time(1, 1))]));
        assert!(z.contains_point(&[(0, time(3, 2))]));
        assert!(!z.contains_point(&[(0, time(2, 1))]));
    }

    #[test]
    fn zone_add_drop_clock() {
        let mut z = Zone::zero(vec![0]);
        z.delay();
        assert!(z.constrain(0, &iv(3, 3)));
        z.add_clock(5);
        // New clock is 0 while clock 0 is 3.
        assert!(z.contains_point(&[(0, time(3, 1)), (5, time(0, 1))]));
        assert!(!z.contains_point(&[(0, time(3, 1)), (5, time(3, 1))]));
        z.drop_clock(0);
        assert_eq!(z.clocks(), &[5]);
        assert!(z.contains_point(&[(5, time(0, 1))]));
    }

    #[test]
    fn zone_inclusion_and_extrapolation() {
        let mut small = Zone::zero(vec![0]);
        small.delay();
        assert!(small.constrain(0, &iv(1, 2)));
        let mut big = Zone::zero(vec![0]);
        big.delay();
        assert!(big.constrain(0, &iv(0, 5)));
        assert!(big.includes(&small));
        assert!(!small.includes(&big));
        // Extrapolating with max constant 2 erases bounds beyond 2.
        let mut far = Zone::zero(vec![0]);
        far.delay();
        assert!(far.constrain(0, &iv(7, 9)));
        far.extrapolate(|_| 2);
        assert!(far.contains_point(&[(0, time(100, 1))]));
        assert!(!far.contains_point(&[(0, time(2, 1))]));
    }

    /// One-clock automaton accepting exactly words ({p},t) with t in [2,3].
    fn gate_automaton() -> TimedAutomaton {
        let p = PropSet::from_vec(vec![0]);
        TimedAutomaton::new(
            vec!["c".into()],
            vec![
                Location { name: "i".into(), initial: true, accepting: false },
                Location { name: "f".into(), initial: false, accepting: true },
            ],
            vec![Transition {
                from: 0,
                to: 1,
                letter: LetterPred::Exact(p),
                guard: vec![(0, iv(2, 3))],
                resets: vec![],
            }],
        )
    }

    #[test]
    fn membership_checks_guards_exactly() {
        let ta = gate_automaton();
        let p = PropSet::from_vec(vec![0]);
        assert!(membership(&ta, &[(p.clone(), time(2, 1))]));
        assert!(membership(&ta, &[(p.clone(), time(5, 2))]));
        assert!(!membership(&ta, &[(p.clone(), time(1, 1))]));
        assert!(!membership(&ta, &[(PropSet::empty(), time(2, 1))]));
        assert!(!membership(&ta, &[]));
    }

    #[test]
    fn emptiness_finds_witness_and_concretizes() {
        let ta = gate_automaton();
        match empty_or_witness(&ta, 1000) {
            Emptiness::NonEmpty(steps) => {
                let stamps = concretize_path(&steps);
                assert_eq!(stamps.len(), 1);
                assert!(iv(2, 3).contains(stamps[0]));
                let word: TimedWord = steps
                    .iter()
                    .zip(&stamps)
                    .map(|(s, t)| (s.letter.clone(), *t))
                    .collect();
                assert!(membership(&ta, &word));
            }
            other => panic!("expected witness, got {other:?}"),
        }
    }

    #[test]
    fn emptiness_detects_empty_language() {
        let p = PropSet::from_vec(vec![0]);
        // Guard x in [2,3] but x is reset on a mandatory earlier self-loop
        // that must happen strictly after 3.
        let ta = TimedAutomaton::new(
            vec!["c".into()],
            vec![
                Location { name: "i".into(), initial: true, accepting: false },
                Location { name: "m".into(), initial: false, accepting: false },
                Location { name: "f".into(), initial: false, accepting: true },
            ],
            vec![
                Transition {
                    from: 0,
                    to: 1,
                    letter: LetterPred::Exact(p.clone()),
                    guard: vec![(0, Interval::greater_than(3))],
                    resets: vec![0],
                },
                Transition {
                    from: 1,
                    to: 2,
                    letter: LetterPred::Exact(p),
                    guard: vec![(0, iv(2, 3)), (0, Interval::greater_than(3))],
                    resets: vec![],
                },
            ],
        );
        assert!(matches!(empty_or_witness(&ta, 1000), Emptiness::Empty));
    }

    #[test]
    fn concretize_respects_strictness() {
        // Single step with guard x in ]0,1[: expect stamp 1/2.
        let steps = vec![RunStep {
            letter: PropSet::empty(),
            guard: vec![(0, Interval::new(0, Some(1), false, false).unwrap())],
            resets: vec![],
        }];
        assert_eq!(concretize_path(&steps), vec![time(1, 2)]);
        // Singular guard: exactly 5.
        let steps = vec![RunStep {
            letter: PropSet::empty(),
            guard: vec![(0, Interval::closed(5, 5))],
            resets: vec![],
        }];
        assert_eq!(concretize_path(&steps), vec![time(5, 1)]);
    }

    #[test]
    fn concretize_chains_resets() {
        // Step 1 resets c at time in [1,1]; step 2 requires c in ]1,2].
        let steps = vec![
            RunStep {
                letter: PropSet::empty(),
                guard: vec![(0, iv(1, 1))],
                resets: vec![0],
            },
            RunStep {
                letter: PropSet::empty(),
                guard: vec![(0, Interval::new(1, Some(2), false, true).unwrap())],
                resets: vec![],
            },
        ];
        let stamps = concretize_path(&steps);
        assert_eq!(stamps[0], time(1, 1));
        let gap = stamps[1] - stamps[0];
        assert!(gap > time(1, 1) && gap <= time(2, 1));
        assert!(stamps[1] >= stamps[0]);
    }

    #[test]
    fn product_intersects_languages() {
        let p = PropSet::from_vec(vec![0]);
        let mk = |lo: u64, hi: u64| {
            TimedAutomaton::new(
                vec!["c".into()],
                vec![
                    Location { name: "i".into(), initial: true, accepting: false },
                    Location { name: "f".into(), initial: false, accepting: true },
                ],
                vec![Transition {
                    from: 0,
                    to: 1,
                    letter: LetterPred::Exact(p.clone()),
                    guard: vec![(0, iv(lo, hi))],
                    resets: vec![],
                }],
            )
        };
        let a = mk(2, 5);
        let b = mk(4, 9);
        let prod = product(&a, &b);
        let w = |t: Time| vec![(PropSet::from_vec(vec![0]), t)];
        assert!(membership(&prod, &w(time(4, 1))));
        assert!(membership(&prod, &w(time(9, 2))));
        assert!(!membership(&prod, &w(time(3, 1))));
        assert!(!membership(&prod, &w(time(6, 1))));
        match empty_or_witness(&prod, 100) {
            Emptiness::NonEmpty(steps) => {
                let stamps = concretize_path(&steps);
                assert!(iv(4, 5).contains(stamps[0]));
            }
            other => panic!("expected witness, got {other:?}"),
        }
    }

    #[test]
    fn bounded_search_agrees_with_emptiness() {
        let ta = gate_automaton();
        let found = bounded_word_search(&ta, &[PropSet::from_vec(vec![0])], 4, 2, 2);
        assert!(found.is_some());
        assert!(membership(&ta, &found.unwrap()));
    }

    #[test]
    fn letter_predicates() {
        let p01 = PropSet::from_vec(vec![0, 1]);
        let p0 = PropSet::from_vec(vec![0]);
        let rf = LetterPred::ReqForb { req: p0.clone(), forb: PropSet::from_vec(vec![2]) };
        assert!(rf.matches(&p01));
        assert!(rf.matches(&p0));
        assert!(!rf.matches(&PropSet::from_vec(vec![0, 2])));
        assert!(!rf.matches(&PropSet::empty()));
        let ex = LetterPred::Exact(p01.clone());
        assert_eq!(rf.conjoin(&ex), Some(LetterPred::Exact(p01)));
        let rf2 = LetterPred::ReqForb { req: PropSet::from_vec(vec![2]), forb: PropSet::empty() };
        assert_eq!(rf.conjoin(&rf2), None);
    }
}
