//! MTL over finite timed words, pointwise semantics, and the translation of
//! simple future trigger rules into a single formula.
//!
//! Syntax is kept in negation normal form plus one derived modality: `And`,
//! `Or` are n-ary, negation appears only on propositions, and `Always` is
//! the unbounded "globally" (the only shape the rule translation needs at
//! the top level). `F_I(f) := f | (T U_I f)` is provided literally; the
//! translation uses it only where the window contains 0 and falls back to a
//! bare until otherwise.
//!
//! The until is strict: `(w,i) |= f U_I g` iff there is `j > i` with
//! `t_j - t_i in I`, `g` at `j`, and `f` at all positions strictly between.
//!
//! `build_phi_forall` produces, for each trigger rule, a conjunct
//! `G>=0(start-of-trigger-value -> OR of statement formulas)` evaluated
//! over timeline codes. Statement formulas locate witness tokens for the
//! quantified names through the code's event propositions, enforcing the
//! future restriction that every witness token starts no earlier than the
//! trigger token. Derivations for the variants the source displays leave
//! implicit are documented case by case at the emission sites; a small set
//! of atom shapes is provably not expressible in this future-only logic
//! over the code alphabet and is rejected with a typed error.

use crate::domain::{Atom, Endpoint, Interval, Problem, SyncRule, Time};
use crate::encoding::{point_window, Prop, PropTable};
use crate::ta::PropSet;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::rc::Rc;
use thiserror::Error;

/// A hash-consed formula handle.
pub type Formula = Rc<Mtl>;

#[derive(Debug, PartialEq, Eq)]
pub enum Mtl {
    True,
    False,
    Prop(u32),
    NotProp(u32),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Until(Formula, Formula, Interval),
    /// Unbounded globally; body must hold at every position from here on.
    Always(Formula),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fragment {
    Mtl,
    Mitl,
    Mitl0Inf,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MtlError {
    #[error("rule {0} is not simple")]
    NonSimple(String),
    #[error("rule {rule}: name {name} is not the trigger and not quantified")]
    FreeName { rule: String, name: String },
    #[error("rule {rule}: atom not expressible in future MTL over codes: {detail}")]
    UnsupportedAtom { rule: String, detail: String },
}

#[derive(Hash, PartialEq, Eq)]
enum Key {
    True,
    False,
    Prop(u32),
    NotProp(u32),
    And(Vec<usize>),
    Or(Vec<usize>),
    Until(usize, usize, Interval),
    Always(usize),
}

/// Hash-consing factory; equal structures share one node, so subformula
/// counts and evaluator memo tables stay proportional to distinct content.
#[derive(Default)]
pub struct FormulaFactory {
    cons: HashMap<Key, Formula>,
}

fn addr(f: &Formula) -> usize {
    Rc::as_ptr(f) as usize
}

impl FormulaFactory {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(&mut self, key: Key, make: impl FnOnce() -> Mtl) -> Formula {
        if let Some(f) = self.cons.get(&key) {
            return f.clone();
        }
        let f = Rc::new(make());
        self.cons.insert(key, f.clone());
        f
    }

    pub fn tt(&mut self) -> Formula {
        self.intern(Key::True, || Mtl::True)
    }

    pub fn ff(&mut self) -> Formula {
        self.intern(Key::False, || Mtl::False)
    }

    pub fn prop(&mut self, p: u32) -> Formula {
        self.intern(Key::Prop(p), || Mtl::Prop(p))
    }

    pub fn nprop(&mut self, p: u32) -> Formula {
        self.intern(Key::NotProp(p), || Mtl::NotProp(p))
    }

    /// N-ary conjunction: flattens, folds constants, deduplicates.
    pub fn and(&mut self, parts: Vec<Formula>) -> Formula {
        let mut flat: Vec<Formula> = Vec::new();
        for p in parts {
            match &*p {
                Mtl::True => {}
                Mtl::False => return self.ff(),
                Mtl::And(inner) => {
                    for q in inner {
                        if !flat.iter().any(|r| Rc::ptr_eq(r, q)) {
                            flat.push(q.clone());
                        }
                    }
                }
                _ => {
                    if !flat.iter().any(|r| Rc::ptr_eq(r, &p)) {
                        flat.push(p);
                    }
                }
            }
        }
        match flat.len() {
            0 => self.tt(),
            1 => flat.pop().unwrap(),
            _ => {
                let key = Key::And(flat.iter().map(addr).collect());
                self.intern(key, || Mtl::And(flat))
            }
        }
    }

    /// N-ary disjunction: flattens, folds constants, deduplicates.
    pub fn or(&mut self, parts: Vec<Formula>) -> Formula {
        let mut flat: Vec<Formula> = Vec::new();
        for p in parts {
            match &*p {
                Mtl::False => {}
                Mtl::True => return self.tt(),
                Mtl::Or(inner) => {
                    for q in inner {
                        if !flat.iter().any(|r| Rc::ptr_eq(r, q)) {
                            flat.push(q.clone());
                        }
                    }
                }
                _ => {
                    if !flat.iter().any(|r| Rc::ptr_eq(r, &p)) {
                        flat.push(p);
                    }
                }
            }
        }
        match flat.len() {
            0 => self.ff(),
            1 => flat.pop().unwrap(),
            _ => {
                let key = Key::Or(flat.iter().map(addr).collect());
                self.intern(key, || Mtl::Or(flat))
            }
        }
    }

    pub fn until(&mut self, l: Formula, r: Formula, i: Interval) -> Formula {
        if matches!(&*r, Mtl::False) {
            return self.ff();
        }
        let key = Key::Until(addr(&l), addr(&r), i);
        self.intern(key, || Mtl::Until(l, r, i))
    }

    /// The literal shortcut `F_I(f) := f | (T U_I f)`. The first disjunct
    /// is position i itself; callers use this form only when `0 in I`.
    pub fn finally(&mut self, i: Interval, f: Formula) -> Formula {
        let t = self.tt();
        let u = self.until(t, f.clone(), i);
        self.or(vec![f, u])
    }

    pub fn always(&mut self, f: Formula) -> Formula {
        if matches!(&*f, Mtl::True) {
            return self.tt();
        }
        let key = Key::Always(addr(&f));
        self.intern(key, || Mtl::Always(f))
    }

    /// Number of distinct interned nodes.
    pub fn count(&self) -> usize {
        self.cons.len()
    }
}

/// Exact pointwise evaluation at position `i`, memoized per (node, position).
///
/// # Panics
///
/// Panics if `i >= w.len()`.
pub fn eval(f: &Formula, w: &[(PropSet, Time)], i: usize) -> bool {
    assert!(i < w.len(), "eval position out of range");
    let mut memo: HashMap<(usize, usize), bool> = HashMap::new();
    eval_memo(f, w, i, &mut memo)
}

fn eval_memo(
    f: &Formula,
    w: &[(PropSet, Time)],
    i: usize,
    memo: &mut HashMap<(usize, usize), bool>,
) -> bool {
    let key = (addr(f), i);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let v = match &**f {
        Mtl::True => true,
        Mtl::False => false,
        Mtl::Prop(p) => w[i].0.contains(*p),
        Mtl::NotProp(p) => !w[i].0.contains(*p),
        Mtl::And(parts) => parts.iter().all(|p| eval_memo(p, w, i, memo)),
        Mtl::Or(parts) => parts.iter().any(|p| eval_memo(p, w, i, memo)),
        Mtl::Until(l, r, iv) => {
            let mut ok = false;
            for j in i + 1..w.len() {
                if iv.contains(w[j].1 - w[i].1) && eval_memo(r, w, j, memo) {
                    ok = true;
                    break;
                }
                if !eval_memo(l, w, j, memo) {
                    break;
                }
                if let Some(hi) = iv.hi() {
                    // Beyond the window no later position can qualify.
                    let d = w[j].1 - w[i].1;
                    if d > Time::from_integer(hi as i64) {
                        break;
                    }
                }
            }
            ok
        }
        Mtl::Always(body) => (i..w.len()).all(|j| eval_memo(body, w, j, memo)),
    };
    memo.insert(key, v);
    v
}

/// Largest interval endpoint occurring in the formula.
pub fn max_constant(f: &Formula) -> u64 {
    fn go(f: &Formula, seen: &mut HashMap<usize, u64>) -> u64 {
        if let Some(&v) = seen.get(&addr(f)) {
            return v;
        }
        let v = match &**f {
            Mtl::True | Mtl::False | Mtl::Prop(_) | Mtl::NotProp(_) => 0,
            Mtl::And(ps) | Mtl::Or(ps) => ps.iter().map(|p| go(p, seen)).max().unwrap_or(0),
            Mtl::Until(l, r, iv) => go(l, seen).max(go(r, seen)).max(iv.max_constant()),
            Mtl::Always(b) => go(b, seen),
        };
        seen.insert(addr(f), v);
        v
    }
    go(f, &mut HashMap::new())
}

/// Tightest fragment: intervals all non-singular gives MITL; additionally
/// all of the form [0,a], [0,a[, or unbounded gives MITL over (0,inf).
pub fn classify_formula(f: &Formula) -> Fragment {
    fn scan(f: &Formula, nonsingular: &mut bool, zeroinf: &mut bool, seen: &mut Vec<usize>) {
        if seen.contains(&addr(f)) {
            return;
        }
        seen.push(addr(f));
        match &**f {
            Mtl::True | Mtl::False | Mtl::Prop(_) | Mtl::NotProp(_) => {}
            Mtl::And(ps) | Mtl::Or(ps) => {
                for p in ps {
                    scan(p, nonsingular, zeroinf, seen);
                }
            }
            Mtl::Until(l, r, iv) => {
                if iv.is_singular() {
                    *nonsingular = false;
                }
                if !((iv.lo() == 0 && iv.lo_closed()) || iv.hi().is_none()) {
                    *zeroinf = false;
                }
                scan(l, nonsingular, zeroinf, seen);
                scan(r, nonsingular, zeroinf, seen);
            }
            Mtl::Always(b) => scan(b, nonsingular, zeroinf, seen),
        }
    }
    let (mut ns, mut zi) = (true, true);
    scan(f, &mut ns, &mut zi, &mut Vec::new());
    if ns && zi {
        Fragment::Mitl0Inf
    } else if ns {
        Fragment::Mitl
    } else {
        Fragment::Mtl
    }
}

/// Renders a formula with a caller-supplied proposition namer.
pub fn pretty(f: &Formula, name: &dyn Fn(u32) -> String) -> String {
    let mut s = String::new();
    go_pretty(f, name, &mut s);
    s
}

fn go_pretty(f: &Formula, name: &dyn Fn(u32) -> String, s: &mut String) {
    match &**f {
        Mtl::True => s.push('T'),
        Mtl::False => s.push('F'),
        Mtl::Prop(p) => s.push_str(&name(*p)),
        Mtl::NotProp(p) => {
            s.push('!');
            s.push_str(&name(*p));
        }
        Mtl::And(ps) => {
            s.push('(');
            for (k, p) in ps.iter().enumerate() {
                if k > 0 {
                    s.push_str(" & ");
                }
                go_pretty(p, name, s);
            }
            s.push(')');
        }
        Mtl::Or(ps) => {
            s.push('(');
            for (k, p) in ps.iter().enumerate() {
                if k > 0 {
                    s.push_str(" | ");
                }
                go_pretty(p, name, s);
            }
            s.push(')');
        }
        Mtl::Until(l, r, iv) => {
            // Recognize the F shortcut T U_I f for readability.
            if matches!(&**l, Mtl::True) {
                let _ = write!(s, "F{iv}");
                s.push('(');
                go_pretty(r, name, s);
                s.push(')');
            } else {
                s.push('[');
                go_pretty(l, name, s);
                let _ = write!(s, " U{iv} ");
                go_pretty(r, name, s);
                s.push(']');
            }
        }
        Mtl::Always(b) => {
            s.push_str("G[0,inf)(");
            go_pretty(b, name, s);
            s.push(')');
        }
    }
}

// ---------------------------------------------------------------------------
// Translation of trigger rules.

struct RuleCx<'a> {
    fac: &'a mut FormulaFactory,
    problem: &'a Problem,
    table: &'a PropTable,
    /// Trigger variable position and value.
    xt: usize,
    vt: String,
}

impl<'a> RuleCx<'a> {
    /// Start-event disjunction for a value.
    fn psi_s(&mut self, value: &str) -> Formula {
        let ids = self.table.starts_of(value);
        let props = ids.into_iter().map(|p| self.fac.prop(p)).collect();
        self.fac.or(props)
    }

    /// End-event disjunction for a value.
    fn psi_e(&mut self, value: &str) -> Formula {
        let ids = self.table.ends_of(value);
        let props = ids.into_iter().map(|p| self.fac.prop(p)).collect();
        self.fac.or(props)
    }

    /// No event of the variable at this position.
    fn not_var(&mut self, var_pos: usize) -> Formula {
        let mains: Vec<u32> = self.table.mains_of_var(var_pos).to_vec();
        let parts = mains.into_iter().map(|m| self.fac.nprop(m)).collect();
        self.fac.and(parts)
    }

    fn past_s(&mut self, value: &str) -> Formula {
        let id = self.table.past_start(value);
        self.fac.prop(id)
    }

    /// A token of `value` with both endpoints at the current stamp ended
    /// at an earlier same-stamp position. Unlike the conjunction of the
    /// two past propositions, this certifies one complete token: the pair
    /// may be witnessed by an old token's end merged before a fresh start.
    fn past_tok(&mut self, value: &str) -> Formula {
        let id = self.table.past_tok(value);
        self.fac.prop(id)
    }

    fn no_adv(&mut self) -> Formula {
        let id = self.table.strict_advance();
        self.fac.nprop(id)
    }

    /// A zero-duration token of `value` ends here: an end event whose
    /// token started at an earlier position with the same stamp (weakly
    /// monotone stamps squeeze the start stamp to the current one).
    fn dur0(&mut self, value: &str) -> Formula {
        let e = self.psi_e(value);
        let ps = self.past_s(value);
        self.fac.and(vec![e, ps])
    }

    /// `theta` holds now or at a later position with the same stamp.
    fn eq_time(&mut self, theta: Formula) -> Formula {
        let na = self.no_adv();
        let tgt = self.fac.and(vec![na.clone(), theta.clone()]);
        let u = self.fac.until(na, tgt, Interval::at_least(0));
        self.fac.or(vec![theta, u])
    }

    /// Walks to the trigger token's end (the first trigger-variable event
    /// after the current trigger start) and checks `theta` there.
    fn nav_end(&mut self, theta: Formula) -> Formula {
        let nx = self.not_var(self.xt);
        let vt = self.vt.clone();
        let pe = self.psi_e(&vt);
        let tgt = self.fac.and(vec![pe, theta]);
        self.fac.until(nx, tgt, Interval::at_least(0))
    }

    /// The trigger token's duration lies in `iv` (window to its end).
    fn win_trig(&mut self, iv: Interval) -> Formula {
        let nx = self.not_var(self.xt);
        let vt = self.vt.clone();
        let pe = self.psi_e(&vt);
        self.fac.until(nx, pe, iv)
    }

    /// The trigger token ends at the current stamp (no strict advance up
    /// to and including its end event).
    fn zero_nav(&mut self) -> Formula {
        let nx = self.not_var(self.xt);
        let na = self.no_adv();
        let left = self.fac.and(vec![nx, na.clone()]);
        let vt = self.vt.clone();
        let pe = self.psi_e(&vt);
        let tgt = self.fac.and(vec![pe, na]);
        self.fac.until(left, tgt, Interval::at_least(0))
    }

    /// From a position where a token of `value` on `var_pos` is running or
    /// starting, lands on its end (the next event of the variable) and
    /// checks `xe` there. Emits nothing when `xe` is trivial: on codes the
    /// end always exists.
    fn walk_end(&mut self, var_pos: usize, value: &str, xe: &Formula) -> Formula {
        if matches!(&**xe, Mtl::True) {
            return self.fac.tt();
        }
        let ny = self.not_var(var_pos);
        let pe = self.psi_e(value);
        let tgt = self.fac.and(vec![pe, xe.clone()]);
        self.fac.until(ny, tgt, Interval::at_least(0))
    }

    /// Like `walk_end` but the landing must be strictly later in time;
    /// anchored at the token's start this requires positive duration.
    fn walk_end_strict(&mut self, var_pos: usize, value: &str, xe: &Formula) -> Formula {
        let ny = self.not_var(var_pos);
        let pe = self.psi_e(value);
        let tgt = self.fac.and(vec![pe, xe.clone()]);
        self.fac.until(ny, tgt, Interval::greater_than(0))
    }

    /// End handling for a token whose start lies at an earlier position
    /// with the current stamp: it already ended (also at this stamp, where
    /// stamp propositions carry the end constraints), its end event is
    /// merged into this very position, or it is still running and the next
    /// variable event is its end. When `xe` is trivial one of the three
    /// always holds on codes. The already-ended case demands a whole
    /// completed token, not a loose end: a stale token's end can precede a
    /// fresh start at one stamp without any token being contained in it.
    fn end_past(&mut self, var_pos: usize, value: &str, xe: &Formula) -> Formula {
        if matches!(&**xe, Mtl::True) {
            return self.fac.tt();
        }
        let pt = self.past_tok(value);
        let done = self.fac.and(vec![pt, xe.clone()]);
        let here = {
            let e = self.psi_e(value);
            self.fac.and(vec![e, xe.clone()])
        };
        let run = self.walk_end_forced(var_pos, value, xe);
        self.fac.or(vec![done, here, run])
    }

    /// Locates the end of a token known (from context) to have started at
    /// an earlier position with the current stamp, and checks `then`
    /// there. The end lies strictly earlier at this stamp (then `then` is
    /// anchored here, stamps being equal), at this very position, or
    /// strictly later at the next variable event.
    fn locate_end_from_past(
        &mut self,
        var_pos: usize,
        value: &str,
        xe: &Formula,
        then: &Formula,
    ) -> Formula {
        let pt = self.past_tok(value);
        let done = self.fac.and(vec![pt, xe.clone(), then.clone()]);
        let here = {
            let e = self.psi_e(value);
            self.fac.and(vec![e, xe.clone(), then.clone()])
        };
        let ny = self.not_var(var_pos);
        let e2 = self.psi_e(value);
        let tgt = self.fac.and(vec![e2, xe.clone(), then.clone()]);
        let run = self.fac.until(ny, tgt, Interval::at_least(0));
        self.fac.or(vec![done, here, run])
    }

    /// `walk_end` without the trivial-`xe` shortcut (used where reaching
    /// the end is itself part of the claim).
    fn walk_end_forced(&mut self, var_pos: usize, value: &str, xe: &Formula) -> Formula {
        let ny = self.not_var(var_pos);
        let pe = self.psi_e(value);
        let tgt = self.fac.and(vec![pe, xe.clone()]);
        self.fac.until(ny, tgt, Interval::at_least(0))
    }

    /// A legitimate witness token exists with end at or after the current
    /// stamp: it starts at or after the current position (any later stamp
    /// qualifies), or it started at an earlier position with the same
    /// stamp (then it either completed at this stamp or is still running).
    fn chi_exist(&mut self, var_pos: usize, value: &str, xs: &Formula, xe: &Formula) -> Formula {
        let ps = self.psi_s(value);
        let walk = self.walk_end(var_pos, value, xe);
        let fut_body = self.fac.and(vec![ps, xs.clone(), walk]);
        let fut = self.fac.finally(Interval::at_least(0), fut_body);
        let past = self.past_s(value);
        let ep = self.end_past(var_pos, value, xe);
        let past_branch = self.fac.and(vec![past, xs.clone(), ep]);
        self.fac.or(vec![fut, past_branch])
    }

    /// As `chi_exist` but the end must be strictly later than the current
    /// stamp. Starts strictly later make the end strictly later for free;
    /// starts at the current stamp need a strictly positive duration,
    /// measured from the start (same stamp, so the anchors agree); a
    /// same-stamp earlier start is handled by walking from here.
    fn chi_exist_strict(
        &mut self,
        var_pos: usize,
        value: &str,
        xs: &Formula,
        xe: &Formula,
    ) -> Formula {
        let ps = self.psi_s(value);
        let strict_walk = self.walk_end_strict(var_pos, value, xe);
        let here_body = self.fac.and(vec![ps.clone(), xs.clone(), strict_walk.clone()]);
        let here = self.eq_time(here_body);
        let walk = self.walk_end(var_pos, value, xe);
        let later_body = self.fac.and(vec![ps, xs.clone(), walk]);
        let t = self.fac.tt();
        let later = self.fac.until(t, later_body, Interval::greater_than(0));
        let past = self.past_s(value);
        let running = self.fac.and(vec![past, xs.clone(), strict_walk]);
        self.fac.or(vec![here, later, running])
    }
}

/// Builds the conjunction over trigger rules; trigger-less rules are
/// ignored (they are handled by an automaton, not a formula).
pub fn build_phi_forall(
    fac: &mut FormulaFactory,
    problem: &Problem,
    table: &PropTable,
) -> Result<Formula, MtlError> {
    let mut conjuncts = Vec::new();
    for rule in problem.rules() {
        let Some(trigger) = &rule.trigger else {
            continue;
        };
        if !rule.is_simple() {
            return Err(MtlError::NonSimple(rule.name.clone()));
        }
        let xt = problem.var_position(&trigger.var).unwrap();
        let mut cx = RuleCx {
            fac,
            problem,
            table,
            xt,
            vt: trigger.value.clone(),
        };
        let mut statement_formulas = Vec::new();
        for st in &rule.statements {
            statement_formulas.push(build_statement(&mut cx, rule, st, trigger)?);
        }
        let body_or = cx.fac.or(statement_formulas);
        let vt = trigger.value.clone();
        let start_ids = table.starts_of(&vt);
        let nstarts: Vec<Formula> = start_ids.iter().map(|p| fac.nprop(*p)).collect();
        let not_start = fac.and(nstarts);
        let body = fac.or(vec![not_start, body_or]);
        conjuncts.push(fac.always(body));
    }
    Ok(fac.and(conjuncts))
}

fn build_statement(
    cx: &mut RuleCx,
    rule: &SyncRule,
    st: &crate::domain::Statement,
    trigger: &crate::domain::Quantifier,
) -> Result<Formula, MtlError> {
    // Name environment: trigger plus quantifiers.
    let mut env: HashMap<&str, (usize, &str)> = HashMap::new();
    env.insert(
        trigger.name.as_str(),
        (cx.problem.var_position(&trigger.var).unwrap(), trigger.value.as_str()),
    );
    for q in &st.quantifiers {
        env.insert(q.name.as_str(), (cx.problem.var_position(&q.var).unwrap(), q.value.as_str()));
    }
    // Point-atom stamp windows per (name, endpoint).
    let mut xi: HashMap<(&str, Endpoint), Vec<Formula>> = HashMap::new();
    for a in &st.atoms {
        let (o, e) = match a {
            Atom::PointLeft { o, e, .. } | Atom::PointRight { o, e, .. } => (o.as_str(), *e),
            Atom::Interval { .. } => continue,
        };
        if !env.contains_key(o) {
            return Err(MtlError::FreeName { rule: rule.name.clone(), name: o.to_string() });
        }
        let f = match point_window(a) {
            // The stamp window proposition is registered for every point
            // atom of the problem, so the lookup cannot fail.
            Some(w) => {
                let id = cx.table.id_of(&Prop::Stamp(w));
                cx.fac.prop(id)
            }
            None => cx.fac.ff(),
        };
        xi.entry((o, e)).or_default().push(f);
    }
    let xi_of = |cx: &mut RuleCx, o: &str, e: Endpoint| -> Formula {
        match xi.get(&(o, e)) {
            Some(fs) => cx.fac.and(fs.clone()),
            None => cx.fac.tt(),
        }
    };

    let mut parts: Vec<Formula> = Vec::new();
    // Trigger's own point atoms: start windows hold at the trigger start
    // (stamp propositions depend only on the stamp), end windows at its
    // end event, reached by the navigation walk.
    let xs_t = xi_of(cx, &trigger.name, Endpoint::Start);
    let xe_t = xi_of(cx, &trigger.name, Endpoint::End);
    parts.push(xs_t);
    let nav = cx.nav_end(xe_t);
    parts.push(nav);
    // Existence of a legitimate token per quantified name (the interval
    // atoms alone do not always force one, e.g. a same-name atom with a
    // zero-containing window reduces to a constant).
    for q in &st.quantifiers {
        let vp = cx.problem.var_position(&q.var).unwrap();
        let xs = xi_of(cx, &q.name, Endpoint::Start);
        let xe = xi_of(cx, &q.name, Endpoint::End);
        parts.push(cx.chi_exist(vp, &q.value, &xs, &xe));
    }
    // Interval atoms.
    for a in &st.atoms {
        let Atom::Interval { o1, e1, o2, e2, interval } = a else {
            continue;
        };
        for o in [o1, o2] {
            if !env.contains_key(o.as_str()) {
                return Err(MtlError::FreeName { rule: rule.name.clone(), name: o.clone() });
            }
        }
        let f = chi_atom(cx, rule, trigger, &env, &xi_of, o1, *e1, o2, *e2, *interval)?;
        parts.push(f);
    }
    Ok(cx.fac.and(parts))
}

/// Emits the formula for one interval atom `e2(o2) - e1(o1) in I`,
/// evaluated at the trigger token's start position. Every branch keeps the
/// future restriction: each witness token starts no earlier (in time) than
/// the trigger token.
#[allow(clippy::too_many_arguments)]
fn chi_atom(
    cx: &mut RuleCx,
    rule: &SyncRule,
    trigger: &crate::domain::Quantifier,
    env: &HashMap<&str, (usize, &str)>,
    xi_of: &dyn Fn(&mut RuleCx, &str, Endpoint) -> Formula,
    o1: &str,
    e1: Endpoint,
    o2: &str,
    e2: Endpoint,
    iv: Interval,
) -> Result<Formula, MtlError> {
    let ot = trigger.name.as_str();
    let zero = iv.contains_zero();
    match (o1 == ot, o2 == ot) {
        // Trigger against itself: both times are fixed relative to the
        // trigger token, so the atom is a constant or a duration window.
        (true, true) => Ok(match (e1, e2) {
            // Same endpoint twice: difference 0.
            (Endpoint::Start, Endpoint::Start) | (Endpoint::End, Endpoint::End) => {
                if zero {
                    cx.fac.tt()
                } else {
                    cx.fac.ff()
                }
            }
            // End minus start: the trigger duration.
            (Endpoint::Start, Endpoint::End) => cx.win_trig(iv),
            // Start minus end is nonpositive: needs 0 in I and a
            // zero-duration trigger token.
            (Endpoint::End, Endpoint::Start) => {
                if zero {
                    cx.zero_nav()
                } else {
                    cx.fac.ff()
                }
            }
        }),
        (false, true) => {
            let (vp, v) = env[o1];
            let v = v.to_string();
            let xs = xi_of(cx, o1, Endpoint::Start);
            let xe = xi_of(cx, o1, Endpoint::End);
            Ok(chi_case_a(cx, vp, &v, &xs, &xe, e1, e2, iv))
        }
        (true, false) => {
            let (vp, v) = env[o2];
            let v = v.to_string();
            let xs = xi_of(cx, o2, Endpoint::Start);
            let xe = xi_of(cx, o2, Endpoint::End);
            chi_case_b(cx, rule, vp, &v, &xs, &xe, e1, e2, iv)
        }
        (false, false) if o1 == o2 => {
            let (vp, v) = env[o1];
            let v = v.to_string();
            let xs = xi_of(cx, o1, Endpoint::Start);
            let xe = xi_of(cx, o1, Endpoint::End);
            Ok(chi_same_name(cx, vp, &v, &xs, &xe, e1, e2, iv))
        }
        (false, false) => {
            let (vp1, v1) = env[o1];
            let (vp2, v2) = env[o2];
            let (v1, v2) = (v1.to_string(), v2.to_string());
            let xs1 = xi_of(cx, o1, Endpoint::Start);
            let xe1 = xi_of(cx, o1, Endpoint::End);
            let xs2 = xi_of(cx, o2, Endpoint::Start);
            let xe2 = xi_of(cx, o2, Endpoint::End);
            chi_case_c(cx, rule, (vp1, &v1, &xs1, &xe1), e1, (vp2, &v2, &xs2, &xe2), e2, iv)
        }
    }
}

/// Case: the trigger's `e2`-time minus the witness's `e1`-time lies in I
/// (the witness is on the left). The future restriction pins the witness
/// near or inside the trigger token, so every sub-case is expressible.
#[allow(clippy::too_many_arguments)]
fn chi_case_a(
    cx: &mut RuleCx,
    vp: usize,
    v: &str,
    xs: &Formula,
    xe: &Formula,
    e1: Endpoint,
    e2: Endpoint,
    iv: Interval,
) -> Formula {
    let zero = iv.contains_zero();
    match (e1, e2) {
        // start(trigger) - start(o) in I: the witness start is both at or
        // after the trigger start (future) and at or before it (I is
        // nonnegative), hence exactly at the trigger-start stamp; needs
        // 0 in I. The start is found at an earlier same-stamp position or
        // now-or-later at the same stamp; end windows ride along.
        (Endpoint::Start, Endpoint::Start) => {
            if !zero {
                return cx.fac.ff();
            }
            let ps = cx.psi_s(v);
            let walk = cx.walk_end(vp, v, xe);
            let now_body = cx.fac.and(vec![ps, walk]);
            let now = cx.eq_time(now_body);
            let past = cx.past_s(v);
            let ep = cx.end_past(vp, v, xe);
            let past_branch = cx.fac.and(vec![past, ep]);
            let located = cx.fac.or(vec![now, past_branch]);
            cx.fac.and(vec![xs.clone(), located])
        }
        // start(trigger) - end(o) in I: the end is at or before the
        // trigger start, the start (future) at or after it, so the
        // witness is a zero-duration token at the trigger-start stamp and
        // 0 in I is forced. Witness completed strictly earlier (the
        // completed-token proposition pins one whole same-stamp token) or
        // its end event sits now-or-later at this stamp.
        (Endpoint::End, Endpoint::Start) => {
            if !zero {
                return cx.fac.ff();
            }
            let pt = cx.past_tok(v);
            let d0 = cx.dur0(v);
            let ahead = cx.eq_time(d0);
            let located = cx.fac.or(vec![pt, ahead]);
            cx.fac.and(vec![xs.clone(), xe.clone(), located])
        }
        // end(trigger) - start(o) in I: three positions for the witness
        // start. Strictly inside the trigger: walk there, then the
        // remaining distance to the trigger end must lie in I. At the
        // trigger-start stamp (here or earlier same-stamp): the distance
        // is the full trigger duration, checked by a windowed walk to the
        // trigger end. After (or at) the trigger end with equal stamps:
        // distance 0, needs 0 in I.
        (Endpoint::Start, Endpoint::End) => {
            let nx = cx.not_var(cx.xt);
            let ps = cx.psi_s(v);
            let walk = cx.walk_end(vp, v, xe);
            let wt = cx.win_trig(iv);
            let inside_tgt = cx.fac.and(vec![xs.clone(), ps.clone(), nx.clone(), walk.clone(), wt.clone()]);
            let inside = cx.fac.until(nx, inside_tgt, Interval::at_least(0));
            let past = cx.past_s(v);
            let ep = cx.end_past(vp, v, xe);
            let at_start_located = {
                let here = cx.fac.and(vec![ps.clone(), walk.clone()]);
                let before = cx.fac.and(vec![past, ep]);
                cx.fac.or(vec![here, before])
            };
            let at_start = cx.fac.and(vec![xs.clone(), at_start_located, wt]);
            let mut branches = vec![inside, at_start];
            if zero {
                let walk2 = cx.walk_end(vp, v, xe);
                let eq_body = cx.fac.and(vec![ps, xs.clone(), walk2]);
                let eq = cx.eq_time(eq_body);
                branches.push(cx.nav_end(eq));
            }
            cx.fac.or(branches)
        }
        // end(trigger) - end(o) in I: the witness end is at or before the
        // trigger end and its start at or after the trigger start, so the
        // token nests inside the trigger up to stamp equalities. Branches
        // by the end's position: at the trigger-start stamp (a
        // zero-duration token, distance = trigger duration), strictly
        // inside (windowed walk to the trigger end from the witness end),
        // at the trigger end or beyond with equal stamps (distance 0).
        (Endpoint::End, Endpoint::End) => {
            let wt = cx.win_trig(iv);
            let pt = cx.past_tok(v);
            let d0 = cx.dur0(v);
            let at_i = {
                let loc = cx.fac.or(vec![pt, d0]);
                cx.fac.and(vec![xs.clone(), xe.clone(), loc, wt])
            };
            // Inside branches: the witness runs from the trigger-start
            // stamp or starts strictly inside, ends strictly inside. The
            // trigger's end is the first trigger-variable event after its
            // start, so inner landings must carry no such event: the
            // windowed walk from the witness end then meets exactly that
            // end. Landings merged with the trigger end are handled by the
            // dedicated branches below.
            let ny = cx.not_var(vp);
            let nx = cx.not_var(cx.xt);
            let pe = cx.psi_e(v);
            let win_from_end = cx.win_trig(iv);
            let end_tgt = cx.fac.and(vec![pe.clone(), xe.clone(), nx.clone(), win_from_end]);
            let run_left = cx.fac.and(vec![ny.clone(), nx.clone()]);
            let run_to_end = cx.fac.until(run_left.clone(), end_tgt, Interval::at_least(0));
            let open = {
                let s = cx.psi_s(v);
                let p = cx.past_s(v);
                cx.fac.or(vec![s, p])
            };
            let from_start_stamp = cx.fac.and(vec![open.clone(), xs.clone(), run_to_end.clone()]);
            let ps = cx.psi_s(v);
            let inside_start_tgt =
                cx.fac.and(vec![ps.clone(), xs.clone(), nx.clone(), run_to_end]);
            let inside_start = cx.fac.until(nx.clone(), inside_start_tgt, Interval::at_least(0));
            let mut branches = vec![at_i, from_start_stamp, inside_start];
            if zero {
                // Witness end at the trigger end (merged position) or
                // beyond it at the same stamp.
                let vt = cx.vt.clone();
                let pet = cx.psi_e(&vt);
                let at_j_tgt = cx.fac.and(vec![pe.clone(), pet.clone(), xe.clone()]);
                let at_j_walk =
                    cx.fac.until(run_left.clone(), at_j_tgt.clone(), Interval::at_least(0));
                let at_j_from_i = cx.fac.and(vec![open.clone(), xs.clone(), at_j_walk]);
                let at_j_inner = cx.fac.until(run_left.clone(), at_j_tgt, Interval::at_least(0));
                let at_j_inside_tgt =
                    cx.fac.and(vec![ps.clone(), xs.clone(), nx.clone(), at_j_inner]);
                let at_j_inside = cx.fac.until(nx.clone(), at_j_inside_tgt, Interval::at_least(0));
                // Runs past the trigger end, ending at its stamp.
                let na = cx.no_adv();
                let tail_left = cx.fac.and(vec![ny.clone(), na.clone()]);
                let tail_tgt = cx.fac.and(vec![pe.clone(), na.clone(), xe.clone()]);
                let tail = cx.fac.until(tail_left, tail_tgt, Interval::at_least(0));
                let through_tgt = cx.fac.and(vec![pet, tail]);
                let through = cx.fac.until(run_left.clone(), through_tgt, Interval::at_least(0));
                let through_from_i = cx.fac.and(vec![open, xs.clone(), through.clone()]);
                let through_inside_tgt = cx.fac.and(vec![ps, xs.clone(), nx.clone(), through]);
                let through_inside =
                    cx.fac.until(nx, through_inside_tgt, Interval::at_least(0));
                // Zero tokens at the trigger-end stamp, at or after its
                // end event.
                let d0b = cx.dur0(v);
                let zb = cx.fac.and(vec![d0b, xs.clone(), xe.clone()]);
                let zeq = cx.eq_time(zb);
                let after = cx.nav_end(zeq);
                branches.extend([at_j_from_i, at_j_inside, through_from_i, through_inside, after]);
            }
            cx.fac.or(branches)
        }
    }
}

/// Case: the witness's `e2`-time minus the trigger's `e1`-time lies in I
/// (the witness is on the right). Start targets are fully expressible;
/// end targets look backwards from the landed event to its start, which
/// this future-only logic cannot do in general. Supported end-target
/// shapes: witness on the trigger variable with no start windows (its
/// start is then pinned by the surrounding trigger events), or an
/// unbounded window anchored at 0.
#[allow(clippy::too_many_arguments)]
fn chi_case_b(
    cx: &mut RuleCx,
    rule: &SyncRule,
    vp: usize,
    v: &str,
    xs: &Formula,
    xe: &Formula,
    e1: Endpoint,
    e2: Endpoint,
    iv: Interval,
) -> Result<Formula, MtlError> {
    let zero = iv.contains_zero();
    match e2 {
        Endpoint::Start => {
            // Window on the witness start, anchored at the trigger start
            // (e1 = s) or the trigger end (e1 = e, reached by navigation).
            let ps = cx.psi_s(v);
            let walk = cx.walk_end(vp, v, xe);
            let body = cx.fac.and(vec![ps, xs.clone(), walk]);
            let windowed = if zero {
                cx.fac.finally(iv, body)
            } else {
                let t = cx.fac.tt();
                cx.fac.until(t, body, iv)
            };
            let past_branch = if zero {
                let p = cx.past_s(v);
                let ep = cx.end_past(vp, v, xe);
                cx.fac.and(vec![p, xs.clone(), ep])
            } else {
                cx.fac.ff()
            };
            Ok(match e1 {
                Endpoint::Start => cx.fac.or(vec![windowed, past_branch]),
                Endpoint::End => {
                    // Two separate navigations keep the display shape with
                    // the eventuality and the past disjunct side by side.
                    let a = cx.nav_end(windowed);
                    if zero {
                        let b = cx.nav_end(past_branch);
                        cx.fac.or(vec![a, b])
                    } else {
                        a
                    }
                }
            })
        }
        Endpoint::End => {
            if vp == cx.xt && matches!(&**xs, Mtl::True) {
                // Witness on the trigger variable: every token of it that
                // ends strictly after the trigger start began at that
                // start or later (events of one variable are sequential),
                // so a windowed landing on the end is already legitimate.
                let pe = cx.psi_e(v);
                let t = cx.fac.tt();
                let land_tgt = cx.fac.and(vec![pe, xe.clone()]);
                let land = cx.fac.until(t, land_tgt, iv);
                let anchored = match e1 {
                    Endpoint::Start => land,
                    Endpoint::End => cx.nav_end(land),
                };
                let mut branches = vec![anchored];
                if zero {
                    // Ends merged with the anchor position itself, or a
                    // token completed strictly earlier at the anchor stamp.
                    let pt = cx.past_tok(v);
                    match e1 {
                        Endpoint::Start => {
                            // A token of the value ending at the trigger
                            // start's position or earlier at its stamp.
                            let d0 = cx.dur0(v);
                            branches.push(cx.fac.and(vec![d0, xe.clone()]));
                            branches.push(cx.fac.and(vec![pt, xe.clone()]));
                        }
                        Endpoint::End => {
                            let pe2 = cx.psi_e(v);
                            let at_j = cx.fac.and(vec![pe2, xe.clone()]);
                            branches.push(cx.nav_end(at_j));
                            // Or the trigger itself is zero-duration and
                            // the witness ended at or before the trigger
                            // start at its stamp.
                            let d0 = cx.dur0(v);
                            let zn = cx.zero_nav();
                            branches.push(cx.fac.and(vec![d0, xe.clone(), zn.clone()]));
                            branches.push(cx.fac.and(vec![pt, xe.clone(), zn]));
                        }
                    }
                }
                return Ok(cx.fac.or(branches));
            }
            if iv.hi().is_some() || iv.lo() > 0 {
                return Err(MtlError::UnsupportedAtom {
                    rule: rule.name.clone(),
                    detail: format!(
                        "end-of-{v} constrained through window {iv} cannot be \
                         checked without looking back to the token's start"
                    ),
                });
            }
            // Unbounded window from 0: the constraint degenerates to the
            // witness end lying at/after (or strictly after) the anchor.
            let strict = !zero;
            let at_anchor = |cx: &mut RuleCx| -> Formula {
                if strict {
                    cx.chi_exist_strict(vp, v, xs, xe)
                } else {
                    cx.chi_exist(vp, v, xs, xe)
                }
            };
            match e1 {
                Endpoint::Start => Ok(at_anchor(cx)),
                Endpoint::End => {
                    // Anchored at the trigger end. Tokens starting at or
                    // after it are found there; tokens that start inside
                    // the trigger (legitimate) and end past its end are
                    // found by spanning walks from the trigger start.
                    let at_j = at_anchor(cx);
                    let nav = cx.nav_end(at_j);
                    let ny = cx.not_var(vp);
                    let nx = cx.not_var(cx.xt);
                    let run_left = cx.fac.and(vec![ny.clone(), nx.clone()]);
                    let vt = cx.vt.clone();
                    let pet = cx.psi_e(&vt);
                    let pe = cx.psi_e(v);
                    let after_end = if strict {
                        let tgt = cx.fac.and(vec![pe.clone(), xe.clone()]);
                        cx.fac.until(ny.clone(), tgt, Interval::greater_than(0))
                    } else {
                        let tgt = cx.fac.and(vec![pe.clone(), xe.clone()]);
                        let w = cx.fac.until(ny.clone(), tgt.clone(), Interval::at_least(0));
                        // The witness may end at the merged trigger-end
                        // position itself.
                        cx.fac.or(vec![w, tgt])
                    };
                    let span_tgt = cx.fac.and(vec![pet, after_end]);
                    let span = cx.fac.until(run_left.clone(), span_tgt, Interval::at_least(0));
                    let open = {
                        let s = cx.psi_s(v);
                        let p = cx.past_s(v);
                        cx.fac.or(vec![s, p])
                    };
                    let span_from_i = cx.fac.and(vec![open.clone(), xs.clone(), span.clone()]);
                    let ps = cx.psi_s(v);
                    let span_inside_tgt = cx.fac.and(vec![ps, xs.clone(), span]);
                    let span_inside =
                        cx.fac.until(nx.clone(), span_inside_tgt, Interval::at_least(0));
                    let mut branches = vec![nav, span_from_i, span_inside];
                    if !strict {
                        // Tokens fully at the trigger-end stamp but ending
                        // before its event, or at the trigger-start stamp
                        // when the trigger itself has zero duration.
                        let d0 = cx.dur0(v);
                        let zbody = cx.fac.and(vec![d0, xs.clone(), xe.clone()]);
                        let zeq = cx.eq_time(zbody.clone());
                        branches.push(cx.nav_end(zeq));
                        let pt = cx.past_tok(v);
                        let zn = cx.zero_nav();
                        let before = cx.fac.or(vec![pt, zbody.clone()]);
                        branches.push(cx.fac.and(vec![before, xs.clone(), xe.clone(), zn.clone()]));
                        // Tokens ending strictly inside the trigger at the
                        // trigger-end stamp: walk to the end while both
                        // variables stay silent, then require no further
                        // stamp advance up to the trigger end. A past
                        // start class plus the silent walk pins the
                        // running token's start to this stamp.
                        let inner_tgt = cx.fac.and(vec![pe.clone(), xe.clone(), zn]);
                        let inner =
                            cx.fac.until(run_left.clone(), inner_tgt, Interval::at_least(0));
                        branches.push(cx.fac.and(vec![open.clone(), xs.clone(), inner.clone()]));
                        let ps2 = cx.psi_s(v);
                        let late_tgt = cx.fac.and(vec![ps2, xs.clone(), inner]);
                        let late = cx.fac.until(nx.clone(), late_tgt, Interval::at_least(0));
                        branches.push(late);
                    }
                    Ok(cx.fac.or(branches))
                }
            }
        }
    }
}

/// Same non-trigger name on both sides: the atom constrains one token
/// against itself, so it reduces to a constant (equal endpoints), a
/// duration window (end minus start, measured from the located start), or
/// a zero-duration requirement (start minus end).
#[allow(clippy::too_many_arguments)]
fn chi_same_name(
    cx: &mut RuleCx,
    vp: usize,
    v: &str,
    xs: &Formula,
    xe: &Formula,
    e1: Endpoint,
    e2: Endpoint,
    iv: Interval,
) -> Formula {
    let zero = iv.contains_zero();
    match (e1, e2) {
        // Difference of an endpoint with itself is 0; token existence is
        // enforced separately.
        (Endpoint::Start, Endpoint::Start) | (Endpoint::End, Endpoint::End) => {
            if zero {
                cx.fac.tt()
            } else {
                cx.fac.ff()
            }
        }
        // Duration window, anchored at the witness start (located at this
        // stamp, later, or earlier at this stamp while still running; a
        // completed earlier token has duration 0).
        (Endpoint::Start, Endpoint::End) => {
            let ny = cx.not_var(vp);
            let pe = cx.psi_e(v);
            let end_tgt = cx.fac.and(vec![pe, xe.clone()]);
            let dur_walk = cx.fac.until(ny, end_tgt, iv);
            let ps = cx.psi_s(v);
            let fut_body = cx.fac.and(vec![ps, xs.clone(), dur_walk.clone()]);
            let fut = cx.fac.finally(Interval::at_least(0), fut_body);
            let past = cx.past_s(v);
            let running = cx.fac.and(vec![past, xs.clone(), dur_walk]);
            let mut branches = vec![fut, running];
            if zero {
                let pt = cx.past_tok(v);
                branches.push(cx.fac.and(vec![pt, xs.clone(), xe.clone()]));
                // A zero-length token ending at or after this position is
                // also a witness; its merged end evades both the strict
                // walk above and the completed-token class.
                let d0 = cx.dur0(v);
                let d0_body = cx.fac.and(vec![d0, xs.clone(), xe.clone()]);
                branches.push(cx.fac.finally(Interval::at_least(0), d0_body));
            }
            cx.fac.or(branches)
        }
        // Start minus end nonnegative forces a zero-duration token.
        (Endpoint::End, Endpoint::Start) => {
            if !zero {
                return cx.fac.ff();
            }
            let d0 = cx.dur0(v);
            let body = cx.fac.and(vec![d0, xs.clone(), xe.clone()]);
            let ahead = cx.fac.finally(Interval::at_least(0), body);
            let pt = cx.past_tok(v);
            let before = cx.fac.and(vec![pt, xs.clone(), xe.clone()]);
            cx.fac.or(vec![ahead, before])
        }
    }
}

/// Two distinct non-trigger names. Start targets anchor their window at
/// the located left event; end targets are supported for unbounded
/// windows only (same back-looking obstruction as in the trigger-anchored
/// case).
#[allow(clippy::type_complexity)]
fn chi_case_c(
    cx: &mut RuleCx,
    rule: &SyncRule,
    left: (usize, &str, &Formula, &Formula),
    e1: Endpoint,
    right: (usize, &str, &Formula, &Formula),
    e2: Endpoint,
    iv: Interval,
) -> Result<Formula, MtlError> {
    let (vp1, v1, xs1, xe1) = left;
    let (vp2, v2, xs2, xe2) = right;
    let zero = iv.contains_zero();
    match e2 {
        Endpoint::Start => {
            // Window on the right start, anchored at the left event's
            // stamp. The anchor position is located first; stamp windows
            // commute with same-stamp moves, so anchoring at any position
            // carrying the left event's stamp is exact.
            let start_tgt = |cx: &mut RuleCx| -> Formula {
                let ps2 = cx.psi_s(v2);
                let walk2 = cx.walk_end(vp2, v2, xe2);
                let body = cx.fac.and(vec![ps2, xs2.clone(), walk2]);
                let windowed = if zero {
                    cx.fac.finally(iv, body)
                } else {
                    let t = cx.fac.tt();
                    cx.fac.until(t, body, iv)
                };
                if zero {
                    let p = cx.past_s(v2);
                    let ep = cx.end_past(vp2, v2, xe2);
                    let past_branch = cx.fac.and(vec![p, xs2.clone(), ep]);
                    cx.fac.or(vec![windowed, past_branch])
                } else {
                    windowed
                }
            };
            match e1 {
                Endpoint::Start => {
                    // Left start at this stamp (earlier or now-or-later) or
                    // strictly later; the window starts at its position.
                    let tgt_here = start_tgt(cx);
                    let past1 = cx.past_s(v1);
                    let ep1 = cx.end_past(vp1, v1, xe1);
                    let d1 = cx.fac.and(vec![past1, xs1.clone(), ep1, tgt_here.clone()]);
                    let ps1 = cx.psi_s(v1);
                    let walk1 = cx.walk_end(vp1, v1, xe1);
                    let d2_body = cx.fac.and(vec![ps1, xs1.clone(), walk1, tgt_here]);
                    let d2 = cx.fac.finally(Interval::at_least(0), d2_body);
                    let mut branches = vec![d1, d2];
                    if zero {
                        // The right start may precede the left event's
                        // position with equal stamps: locate the right
                        // start, then require the left start at the same
                        // stamp now or later.
                        let ps1b = cx.psi_s(v1);
                        let walk1b = cx.walk_end(vp1, v1, xe1);
                        let left_here = cx.fac.and(vec![ps1b, xs1.clone(), walk1b]);
                        let left_eq = cx.eq_time(left_here);
                        let past2 = cx.past_s(v2);
                        let ep2 = cx.end_past(vp2, v2, xe2);
                        let d4 = cx.fac.and(vec![past2, xs2.clone(), ep2, left_eq.clone()]);
                        let ps2 = cx.psi_s(v2);
                        let walk2 = cx.walk_end(vp2, v2, xe2);
                        let d5_body = cx.fac.and(vec![ps2, xs2.clone(), walk2, left_eq]);
                        let d5 = cx.fac.finally(Interval::at_least(0), d5_body);
                        branches.extend([d4, d5]);
                    }
                    Ok(cx.fac.or(branches))
                }
                Endpoint::End => {
                    // Locate the left token's end by start classes and a
                    // walk, then apply the start-target window there. A
                    // completed same-stamp token anchors at this position.
                    let tgt = start_tgt(cx);
                    let past1 = cx.past_s(v1);
                    let located = cx.locate_end_from_past(vp1, v1, xe1, &tgt);
                    let from_past = cx.fac.and(vec![past1, xs1.clone(), located]);
                    let end_tgt = {
                        let pe = cx.psi_e(v1);
                        cx.fac.and(vec![pe, xe1.clone(), tgt])
                    };
                    let ny1 = cx.not_var(vp1);
                    let run_walk = cx.fac.until(ny1, end_tgt, Interval::at_least(0));
                    let ps1 = cx.psi_s(v1);
                    let fut_body = cx.fac.and(vec![ps1, xs1.clone(), run_walk]);
                    let fut = cx.fac.finally(Interval::at_least(0), fut_body);
                    Ok(cx.fac.or(vec![from_past, fut]))
                }
            }
        }
        Endpoint::End => {
            if iv.hi().is_some() || iv.lo() > 0 {
                return Err(MtlError::UnsupportedAtom {
                    rule: rule.name.clone(),
                    detail: format!(
                        "end-of-{v2} constrained through window {iv} against \
                         another quantified name cannot be checked without \
                         looking back to the token's start"
                    ),
                });
            }
            let strict = !zero;
            // Right end at/after (or strictly after) the left event.
            // Witnesses whose right token starts at or after the pivot are
            // existence checks there; a right token already running at the
            // pivot is certified by sequencing its start before the left
            // event inside nested walks.
            let exist_at = |cx: &mut RuleCx| -> Formula {
                if strict {
                    cx.chi_exist_strict(vp2, v2, xs2, xe2)
                } else {
                    cx.chi_exist(vp2, v2, xs2, xe2)
                }
            };
            let ny2 = cx.not_var(vp2);
            // From a position where the right token runs, reach the left
            // event and then the right end.
            let right_tail = |cx: &mut RuleCx| -> Formula {
                let pe2 = cx.psi_e(v2);
                let tgt = cx.fac.and(vec![pe2.clone(), xe2.clone()]);
                if strict {
                    cx.fac.until(ny2.clone(), tgt, Interval::greater_than(0))
                } else {
                    let w = cx.fac.until(ny2.clone(), tgt.clone(), Interval::at_least(0));
                    cx.fac.or(vec![w, tgt])
                }
            };
            match e1 {
                Endpoint::Start => {
                    let at_pivot = exist_at(cx);
                    // Left start located at this stamp or later.
                    let past1 = cx.past_s(v1);
                    let ep1 = cx.end_past(vp1, v1, xe1);
                    let d1 = cx.fac.and(vec![past1, xs1.clone(), ep1, at_pivot.clone()]);
                    let ps1 = cx.psi_s(v1);
                    let walk1 = cx.walk_end(vp1, v1, xe1);
                    let d2_body = cx.fac.and(vec![ps1.clone(), xs1.clone(), walk1.clone(), at_pivot]);
                    let d2 = cx.fac.finally(Interval::at_least(0), d2_body);
                    let ps2 = cx.psi_s(v2);
                    let past2 = cx.past_s(v2);
                    let mut ds = vec![d1, d2];
                    // Right token spans the left start. Tokens of one
                    // variable never overlap, so this shape needs the
                    // names on different variables; on a shared variable
                    // the left start would end the located right token and
                    // the tail would land on an unrelated one.
                    if vp1 != vp2 {
                        let tail = right_tail(cx);
                        let mid = cx.fac.and(vec![ps1.clone(), xs1.clone(), walk1.clone(), tail]);
                        let span_inner = cx.fac.until(ny2.clone(), mid, Interval::at_least(0));
                        let d3_body =
                            cx.fac.and(vec![ps2.clone(), xs2.clone(), span_inner.clone()]);
                        ds.push(cx.fac.finally(Interval::at_least(0), d3_body));
                        ds.push(cx.fac.and(vec![past2.clone(), xs2.clone(), span_inner]));
                    }
                    if !strict {
                        // A zero difference also admits a right token ending
                        // before the left start at the same stamp, which the
                        // forward walks above cannot see. Reach the right end
                        // with its variable silent, then find the left start
                        // merged into that event or later without a stamp
                        // advance; the frozen stamp forces equal times.
                        let to_s1 = {
                            let here = cx.fac.and(vec![ps1.clone(), xs1.clone(), walk1.clone()]);
                            let na = cx.no_adv();
                            let tgt = cx.fac.and(vec![na.clone(), ps1, xs1.clone(), walk1]);
                            let later = cx.fac.until(na, tgt, Interval::at_least(0));
                            cx.fac.or(vec![here, later])
                        };
                        let pe2 = cx.psi_e(v2);
                        let inner = cx.fac.and(vec![pe2, xe2.clone(), to_s1]);
                        let reach = cx.fac.until(ny2.clone(), inner.clone(), Interval::at_least(0));
                        // At this position the ending token is pinned by the
                        // located start, so the merged landing stays sound;
                        // from a fresh start the first right event is the
                        // token's own end, so only the walk applies there.
                        let reach_run = cx.fac.or(vec![inner, reach.clone()]);
                        let open2 = cx.fac.or(vec![ps2.clone(), past2]);
                        ds.push(cx.fac.and(vec![open2, xs2.clone(), reach_run]));
                        let fresh = cx.fac.and(vec![ps2, xs2.clone(), reach]);
                        ds.push(cx.fac.finally(Interval::at_least(0), fresh));
                    }
                    Ok(cx.fac.or(ds))
                }
                Endpoint::End => {
                    let at_pivot = exist_at(cx);
                    // Pivot = left token's end, located via start classes.
                    let pe1f = cx.psi_e(v1);
                    let ny1 = cx.not_var(vp1);
                    let pivot_tgt = cx.fac.and(vec![pe1f.clone(), xe1.clone(), at_pivot.clone()]);
                    let walk_pivot = cx.fac.until(ny1.clone(), pivot_tgt, Interval::at_least(0));
                    let past1 = cx.past_s(v1);
                    let located = cx.locate_end_from_past(vp1, v1, xe1, &at_pivot);
                    let b_past = cx.fac.and(vec![past1.clone(), xs1.clone(), located]);
                    let ps1 = cx.psi_s(v1);
                    let b_fut_body = cx.fac.and(vec![ps1.clone(), xs1.clone(), walk_pivot]);
                    let b_fut = cx.fac.finally(Interval::at_least(0), b_fut_body);
                    let both_left = cx.fac.and(vec![ny1.clone(), ny2.clone()]);
                    let ps2 = cx.psi_s(v2);
                    let past2 = cx.past_s(v2);
                    let mut branches = vec![b_past, b_fut];
                    // Right token spans the pivot: sequence right start
                    // (or an already-running right token), then the left
                    // end with both still pending, then the right end.
                    // Spanning needs distinct variables: tokens of one
                    // variable never overlap, and on a shared variable the
                    // left events would cut the located right token, so the
                    // tail would land on an unrelated one whose own start
                    // was never checked against the start windows.
                    if vp1 != vp2 {
                        let tail = right_tail(cx);
                        let pivot_then_tail = {
                            let tgt = cx.fac.and(vec![pe1f.clone(), xe1.clone(), tail.clone()]);
                            cx.fac.until(both_left.clone(), tgt, Interval::at_least(0))
                        };
                        // Right starts, then left runs out while right
                        // still pending; the left token may be running
                        // from the rule position or start after the right
                        // one.
                        let after_right = {
                            // The left start may share the right start's
                            // position, follow it directly, or lie strictly
                            // between right start and right end.
                            let with_left_start = {
                                let mid = cx.fac.and(vec![
                                    ps1.clone(),
                                    xs1.clone(),
                                    pivot_then_tail.clone(),
                                ]);
                                let later =
                                    cx.fac.until(ny2.clone(), mid.clone(), Interval::at_least(0));
                                cx.fac.or(vec![mid, later])
                            };
                            let left_already = cx.fac.and(vec![
                                past1.clone(),
                                xs1.clone(),
                                pivot_then_tail.clone(),
                            ]);
                            cx.fac.or(vec![with_left_start, left_already])
                        };
                        let span_fut_body =
                            cx.fac.and(vec![ps2.clone(), xs2.clone(), after_right.clone()]);
                        branches.push(cx.fac.finally(Interval::at_least(0), span_fut_body));
                        branches.push(cx.fac.and(vec![past2.clone(), xs2.clone(), after_right]));
                        // Left starts first, then the right token starts
                        // strictly later while the left one is still
                        // running: walk with the left variable silent to
                        // the right start, then with both silent to the
                        // left end, then to the right end. A left token
                        // already running here that started at this stamp
                        // is certified by a same-stamp start class; any
                        // variable event at this position ends such a token
                        // first, so on the left variable itself the walk
                        // starts fresh from a new token.
                        let lf_walk = {
                            let ps2b = cx.psi_s(v2);
                            let mid = cx.fac.and(vec![ps2b, xs2.clone(), pivot_then_tail.clone()]);
                            cx.fac.until(ny1.clone(), mid, Interval::at_least(0))
                        };
                        let lf_fut_body = cx.fac.and(vec![ps1.clone(), xs1.clone(), lf_walk.clone()]);
                        branches.push(cx.fac.finally(Interval::at_least(0), lf_fut_body));
                        let past1b = cx.past_s(v1);
                        branches.push(cx.fac.and(vec![past1b, xs1.clone(), lf_walk]));
                    } else if v1 == v2 && !strict {
                        // On a shared name class one token may serve both
                        // names, making the difference zero. The branches
                        // above cannot see it: the pivot existence check
                        // wants a start at or after the left end, and the
                        // frozen-stamp family wants the right end strictly
                        // earlier. One existence check with both windows
                        // conjoined certifies the shared witness.
                        let xs12 = cx.fac.and(vec![xs1.clone(), xs2.clone()]);
                        let xe12 = cx.fac.and(vec![xe1.clone(), xe2.clone()]);
                        branches.push(cx.chi_exist(vp1, v1, &xs12, &xe12));
                    }
                    if !strict {
                        // A zero difference also admits a right end positioned
                        // before the left end at the same stamp, invisible to
                        // the forward walks above. Locate both starts in any
                        // order, walk with both variables silent to the right
                        // end, then keep the left variable silent and the
                        // stamp frozen up to the left end; the silences pin
                        // each located token to its landed endpoint.
                        let znav1 = {
                            let na = cx.no_adv();
                            let step = cx.fac.and(vec![ny1.clone(), na.clone()]);
                            let tgt = cx.fac.and(vec![pe1f.clone(), xe1.clone(), na]);
                            cx.fac.until(step, tgt, Interval::at_least(0))
                        };
                        let pe2 = cx.psi_e(v2);
                        let inner = cx.fac.and(vec![pe2.clone(), xe2.clone(), znav1.clone()]);
                        let reach = cx.fac.until(both_left, inner.clone(), Interval::at_least(0));
                        // Merged landings are sound only where the right
                        // variable has been silent since a certified start;
                        // from a fresh right start the first right event is
                        // the token's own end, so only the walk applies.
                        let reach_run = cx.fac.or(vec![inner, reach.clone()]);
                        let pa1 = cx.past_s(v1);
                        let open1 = cx.fac.or(vec![ps1.clone(), pa1]);
                        let pa2 = cx.past_s(v2);
                        let open2 = cx.fac.or(vec![ps2.clone(), pa2]);
                        branches.push(cx.fac.and(vec![
                            open1.clone(),
                            xs1.clone(),
                            open2.clone(),
                            xs2.clone(),
                            reach_run.clone(),
                        ]));
                        let r_later = {
                            let mid = cx.fac.and(vec![ps2.clone(), xs2.clone(), reach.clone()]);
                            cx.fac.until(ny1.clone(), mid, Interval::at_least(0))
                        };
                        branches.push(cx.fac.and(vec![open1, xs1.clone(), r_later.clone()]));
                        let l_later = {
                            let mid = cx.fac.and(vec![ps1.clone(), xs1.clone(), reach_run]);
                            cx.fac.until(ny2.clone(), mid, Interval::at_least(0))
                        };
                        branches.push(cx.fac.and(vec![open2.clone(), xs2.clone(), l_later.clone()]));
                        let lr_body = cx.fac.and(vec![ps1.clone(), xs1.clone(), r_later]);
                        branches.push(cx.fac.finally(Interval::at_least(0), lr_body));
                        let rl_body = cx.fac.and(vec![ps2.clone(), xs2.clone(), l_later]);
                        branches.push(cx.fac.finally(Interval::at_least(0), rl_body));
                        let merged_body = cx.fac.and(vec![
                            ps1.clone(),
                            ps2.clone(),
                            xs1.clone(),
                            xs2.clone(),
                            reach,
                        ]);
                        branches.push(cx.fac.finally(Interval::at_least(0), merged_body));
                        // Right token wholly before the left one: reach the
                        // right end, then find the left start merged into
                        // that event or later without a stamp advance.
                        let to_s1 = {
                            let here = cx.fac.and(vec![ps1.clone(), xs1.clone(), znav1.clone()]);
                            let na = cx.no_adv();
                            let tgt = cx.fac.and(vec![na.clone(), ps1, xs1.clone(), znav1]);
                            let later = cx.fac.until(na, tgt, Interval::at_least(0));
                            cx.fac.or(vec![here, later])
                        };
                        let g_inner = cx.fac.and(vec![pe2, xe2.clone(), to_s1]);
                        let g_walk =
                            cx.fac.until(ny2.clone(), g_inner.clone(), Interval::at_least(0));
                        let g_run = cx.fac.or(vec![g_inner, g_walk.clone()]);
                        branches.push(cx.fac.and(vec![open2, xs2.clone(), g_run]));
                        let h_body = cx.fac.and(vec![ps2.clone(), xs2.clone(), g_walk]);
                        branches.push(cx.fac.finally(Interval::at_least(0), h_body));
                    }
                    Ok(cx.fac.or(branches))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        time, MultiTimeline, Quantifier, Semantics, StateVariable, Statement, Token,
    };
    use crate::encoding::encode;
    use std::collections::BTreeMap;

    fn w(entries: &[(&[u32], i64)]) -> Vec<(PropSet, Time)> {
        entries
            .iter()
            .map(|(ps, t)| (PropSet::from_vec(ps.to_vec()), Time::from_integer(*t)))
            .collect()
    }

    #[test]
    fn eval_until_strict_and_windowed() {
        let mut f = FormulaFactory::new();
        let q = f.prop(1);
        // F_[1,2] q on ({p},0)({q},1.5): j = 1, 1.5 in [1,2].
        let fq = f.finally(Interval::closed(1, 2), q.clone());
        let word = vec![
            (PropSet::from_vec(vec![0]), time(0, 1)),
            (PropSet::from_vec(vec![1]), time(3, 2)),
        ];
        assert!(eval(&fq, &word, 0));
        // F_[0,1] q at 0 is false: no position in window carries q at
        // distance <= 1, and q is not at position 0.
        let fq01 = f.finally(Interval::closed(0, 1), q.clone());
        assert!(!eval(&fq01, &word, 0));
    }

    #[test]
    fn eval_globally_with_stutter() {
        let mut f = FormulaFactory::new();
        // G>=0(p -> F_[0,0] q) on ({p},3)({q},3): stuttering stamps.
        let np = f.nprop(0);
        let q = f.prop(1);
        let fq = f.finally(Interval::singular(0), q);
        let body = f.or(vec![np, fq]);
        let g = f.always(body);
        let word = w(&[(&[0], 3), (&[1], 3)]);
        assert!(eval(&g, &word, 0));
        let word2 = w(&[(&[0], 3), (&[1], 4)]);
        assert!(!eval(&g, &word2, 0));
    }

    #[test]
    fn consing_shares_nodes() {
        let mut f = FormulaFactory::new();
        let a = f.prop(0);
        let b = f.prop(0);
        assert!(Rc::ptr_eq(&a, &b));
        let u1 = f.until(a.clone(), b.clone(), Interval::closed(0, 2));
        let u2 = f.until(a, b, Interval::closed(0, 2));
        assert!(Rc::ptr_eq(&u1, &u2));
        // And of one thing is the thing.
        let p = f.prop(3);
        let t = f.tt();
        let and = f.and(vec![p.clone(), t]);
        assert!(Rc::ptr_eq(&and, &p));
    }

    #[test]
    fn classification_is_tightest() {
        let mut f = FormulaFactory::new();
        let p = f.prop(0);
        let u = f.until(p.clone(), p.clone(), Interval::closed(2, 2));
        assert_eq!(classify_formula(&u), Fragment::Mtl);
        let u = f.until(p.clone(), p.clone(), Interval::closed(1, 3));
        assert_eq!(classify_formula(&u), Fragment::Mitl);
        let a = f.until(p.clone(), p.clone(), Interval::closed(0, 3));
        let b = f.until(p.clone(), p.clone(), Interval::at_least(2));
        let both = f.and(vec![a, b]);
        assert_eq!(classify_formula(&both), Fragment::Mitl0Inf);
        assert_eq!(max_constant(&both), 3);
    }

    fn two_var_problem(rules: Vec<SyncRule>) -> Problem {
        let x = StateVariable {
            name: "x".into(),
            values: vec!["a".into(), "b".into()],
            trans: BTreeMap::from([
                ("a".into(), vec!["b".into()]),
                ("b".into(), vec!["a".into()]),
            ]),
            dur: BTreeMap::from([
                ("a".into(), Interval::closed(0, 6)),
                ("b".into(), Interval::closed(0, 6)),
            ]),
        };
        let y = StateVariable {
            name: "y".into(),
            values: vec!["c".into(), "d".into()],
            trans: BTreeMap::from([
                ("c".into(), vec!["d".into()]),
                ("d".into(), vec!["c".into()]),
            ]),
            dur: BTreeMap::from([
                ("c".into(), Interval::closed(0, 6)),
                ("d".into(), Interval::closed(0, 6)),
            ]),
        };
        Problem::new(vec![x, y], rules).unwrap()
    }

    fn two_var_problem_self(rules: Vec<SyncRule>) -> Problem {
        let x = StateVariable {
            name: "x".into(),
            values: vec!["a".into(), "b".into()],
            trans: BTreeMap::from([
                ("a".into(), vec!["a".into(), "b".into()]),
                ("b".into(), vec!["a".into(), "b".into()]),
            ]),
            dur: BTreeMap::from([
                ("a".into(), Interval::closed(0, 6)),
                ("b".into(), Interval::closed(0, 6)),
            ]),
        };
        let y = StateVariable {
            name: "y".into(),
            values: vec!["c".into(), "d".into()],
            trans: BTreeMap::from([
                ("c".into(), vec!["c".into(), "d".into()]),
                ("d".into(), vec!["c".into(), "d".into()]),
            ]),
            dur: BTreeMap::from([
                ("c".into(), Interval::closed(0, 6)),
                ("d".into(), Interval::closed(0, 6)),
            ]),
        };
        Problem::new(vec![x, y], rules).unwrap()
    }

    fn rule(trigger: (&str, &str, &str), quants: Vec<(&str, &str, &str)>, atoms: Vec<Atom>) -> SyncRule {
        SyncRule {
            name: "r".into(),
            trigger: Some(Quantifier {
                name: trigger.0.into(),
                var: trigger.1.into(),
                value: trigger.2.into(),
            }),
            statements: vec![Statement {
                quantifiers: quants
                    .into_iter()
                    .map(|(n, x, v)| Quantifier { name: n.into(), var: x.into(), value: v.into() })
                    .collect(),
                atoms,
            }],
        }
    }

    fn agree(p: &Problem, plans: &[MultiTimeline]) {
        let t = PropTable::new(p);
        let mut fac = FormulaFactory::new();
        let phi = build_phi_forall(&mut fac, p, &t).unwrap();
        for plan in plans {
            let word = encode(p, &t, plan);
            let got = eval(&phi, &word, 0);
            let want = crate::domain::validate_plan(p, plan, Semantics::Future)
                .unwrap()
                .satisfied();
            assert_eq!(got, want, "disagreement on {plan:?}");
        }
    }

    fn xy_plan(xs: Vec<(&str, Time)>, ys: Vec<(&str, Time)>) -> MultiTimeline {
        BTreeMap::from([
            (
                "x".to_string(),
                xs.into_iter().map(|(v, d)| Token::new(v, d)).collect::<Vec<_>>(),
            ),
            (
                "y".to_string(),
                ys.into_iter().map(|(v, d)| Token::new(v, d)).collect::<Vec<_>>(),
            ),
        ])
    }

    #[test]
    fn phi_forall_case_b_start_window() {
        // Every a-token must see a d-start within [0,2] of its own start.
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::Start,
                o2: "o".into(),
                e2: Endpoint::Start,
                interval: Interval::closed(0, 2),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                xy_plan(
                    vec![("a", time(3, 1)), ("b", time(3, 1))],
                    vec![("c", time(2, 1)), ("d", time(4, 1))],
                ),
                xy_plan(
                    vec![("a", time(3, 1)), ("b", time(3, 1))],
                    vec![("c", time(4, 1)), ("d", time(2, 1))],
                ),
                xy_plan(
                    vec![("a", time(1, 1)), ("b", time(5, 1))],
                    vec![("c", time(6, 1))],
                ),
                xy_plan(
                    vec![("a", time(0, 1)), ("b", time(6, 1))],
                    vec![("d", time(0, 1)), ("c", time(6, 1))],
                ),
            ],
        );
    }

    #[test]
    fn phi_forall_case_b_after_trigger_end() {
        // Spec display case: trigger end, then a witness start in [0,2].
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::End,
                o2: "o".into(),
                e2: Endpoint::Start,
                interval: Interval::closed(0, 2),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("c", time(3, 1)), ("d", time(3, 1))],
                ),
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("c", time(5, 1)), ("d", time(1, 1))],
                ),
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("d", time(2, 1)), ("c", time(4, 1))],
                ),
                xy_plan(
                    vec![("a", time(6, 1))],
                    vec![("c", time(6, 1)), ("d", time(0, 1))],
                ),
            ],
        );
    }

    #[test]
    fn phi_forall_case_a_coincident_start() {
        // Witness end must equal the trigger start.
        let r = rule(
            ("t", "x", "b"),
            vec![("o", "y", "c")],
            vec![Atom::Interval {
                o1: "o".into(),
                e1: Endpoint::End,
                o2: "t".into(),
                e2: Endpoint::Start,
                interval: Interval::closed(0, 0),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                // c ends at 2, b starts at 2: but c started at 0 < 2, so
                // the future semantics rejects it.
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("c", time(2, 1)), ("d", time(4, 1))],
                ),
                // Zero-duration c exactly at the b start.
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("d", time(2, 1)), ("c", time(0, 1)), ("d", time(4, 1))],
                ),
                // No b at all: vacuously satisfied.
                xy_plan(vec![("a", time(6, 1))], vec![("c", time(6, 1))]),
            ],
        );
    }

    #[test]
    fn phi_forall_trigger_duration() {
        // Trigger token duration in [2,4].
        let r = rule(
            ("t", "x", "a"),
            vec![],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::Start,
                o2: "t".into(),
                e2: Endpoint::End,
                interval: Interval::closed(2, 4),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                xy_plan(vec![("a", time(3, 1)), ("b", time(3, 1))], vec![("c", time(6, 1))]),
                xy_plan(vec![("a", time(1, 1)), ("b", time(5, 1))], vec![("c", time(6, 1))]),
                xy_plan(vec![("a", time(5, 1)), ("b", time(1, 1))], vec![("c", time(6, 1))]),
            ],
        );
    }

    #[test]
    fn phi_forall_point_atoms() {
        // Trigger must start in [1,3] (as a time-point constraint).
        let r = rule(
            ("t", "x", "b"),
            vec![],
            vec![Atom::PointRight {
                n: 0,
                o: "t".into(),
                e: Endpoint::Start,
                interval: Interval::closed(1, 3),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                xy_plan(vec![("a", time(2, 1)), ("b", time(4, 1))], vec![("c", time(6, 1))]),
                xy_plan(vec![("a", time(4, 1)), ("b", time(2, 1))], vec![("c", time(6, 1))]),
                xy_plan(vec![("b", time(6, 1))], vec![("c", time(6, 1))]),
            ],
        );
    }

    #[test]
    fn phi_forall_rejects_unsupported() {
        // Bounded window on the end of a non-trigger witness on another
        // variable: not expressible, must be rejected.
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::Start,
                o2: "o".into(),
                e2: Endpoint::End,
                interval: Interval::closed(0, 3),
            }],
        );
        let p = two_var_problem(vec![r]);
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        match build_phi_forall(&mut fac, &p, &t) {
            Err(MtlError::UnsupportedAtom { .. }) => {}
            other => panic!("expected UnsupportedAtom, got {other:?}"),
        }
    }

    #[test]
    fn phi_forall_case_b_unbounded_end() {
        // Witness d-token must end at or after the trigger end.
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::End,
                o2: "o".into(),
                e2: Endpoint::End,
                interval: Interval::at_least(0),
            }],
        );
        let p = two_var_problem(vec![r]);
        agree(
            &p,
            &[
                // d spans the trigger end.
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("c", time(1, 1)), ("d", time(4, 1)), ("c", time(1, 1))],
                ),
                // d ends before the trigger end.
                xy_plan(
                    vec![("a", time(4, 1)), ("b", time(2, 1))],
                    vec![("d", time(2, 1)), ("c", time(4, 1))],
                ),
                // d starts after the trigger end.
                xy_plan(
                    vec![("a", time(2, 1)), ("b", time(4, 1))],
                    vec![("c", time(3, 1)), ("d", time(3, 1))],
                ),
                // no d at all.
                xy_plan(vec![("a", time(2, 1)), ("b", time(4, 1))], vec![("c", time(6, 1))]),
            ],
        );
    }

    #[test]
    fn phi_forall_matches_validator_randomized() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        let mut checked = 0u32;
        for case in 0..160 {
            // Random supported atom on a fixed two-variable shell.
            let e1 = if rng.gen_bool(0.5) { Endpoint::Start } else { Endpoint::End };
            let e2 = if rng.gen_bool(0.5) { Endpoint::Start } else { Endpoint::End };
            let lo = rng.gen_range(0..3u64);
            let hi = lo + rng.gen_range(0..3u64);
            let iv = if rng.gen_bool(0.2) {
                if rng.gen_bool(0.5) {
                    Interval::at_least(lo)
                } else {
                    Interval::greater_than(lo)
                }
            } else {
                Interval::closed(lo, hi)
            };
            let flip = rng.gen_bool(0.5);
            let (o1, o2) = if flip { ("o", "t") } else { ("t", "o") };
            let atom = Atom::Interval {
                o1: o1.into(),
                e1,
                o2: o2.into(),
                e2,
                interval: iv,
            };
            let r = rule(("t", "x", "a"), vec![("o", "y", "d")], vec![atom]);
            let p = two_var_problem(vec![r]);
            let t = PropTable::new(&p);
            let mut fac = FormulaFactory::new();
            let phi = match build_phi_forall(&mut fac, &p, &t) {
                Ok(f) => f,
                Err(MtlError::UnsupportedAtom { .. }) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            };
            for _ in 0..14 {
                let plan = random_plan(&mut rng, false);
                let word = encode(&p, &t, &plan);
                let got = eval(&phi, &word, 0);
                let want = crate::domain::validate_plan(&p, &plan, Semantics::Future)
                    .unwrap()
                    .satisfied();
                assert_eq!(
                    got, want,
                    "case {case}: disagreement on {plan:?} (e1={e1:?} e2={e2:?} iv={iv} flip={flip})"
                );
                checked += 1;
            }
        }
        assert!(checked > 1000, "exercised only {checked} plans");
    }

    #[test]
    fn phi_forall_matches_validator_all_families() {
        // >2000 agreement checks per seed across every emission family:
        // windows on the trigger, anchored on the trigger, between two
        // quantified names, same-name durations, point atoms, one or two
        // statements.
        oracle_sweep(41, 400, false, 2000);
        oracle_sweep(101, 400, false, 2000);
    }

    #[test]
    fn phi_forall_matches_validator_self_transitions() {
        // Same sweep over a shell whose variables may repeat a value, so
        // words carry events that end and start the same value at once.
        oracle_sweep(43, 300, true, 1500);
        oracle_sweep(103, 300, true, 1500);
    }

    #[test]
    fn phi_forall_separates_merged_past_pairs() {
        // The second trigger activation needs a zero-length c-token at
        // its start stamp (end distance one to its own end) or duration
        // three. Both plans share the x timeline, and their codes agree
        // on every start and end past class at that activation; only the
        // completed-token class tells them apart. In the first plan the
        // equal-stamp end and start of c belong to different tokens, so
        // no legitimate witness exists.
        let r = SyncRule {
            name: "r".into(),
            trigger: Some(Quantifier {
                name: "t".into(),
                var: "x".into(),
                value: "a".into(),
            }),
            statements: vec![
                Statement {
                    quantifiers: vec![Quantifier {
                        name: "p".into(),
                        var: "y".into(),
                        value: "c".into(),
                    }],
                    atoms: vec![Atom::Interval {
                        o1: "p".into(),
                        e1: Endpoint::End,
                        o2: "t".into(),
                        e2: Endpoint::End,
                        interval: Interval::singular(1),
                    }],
                },
                Statement {
                    quantifiers: vec![],
                    atoms: vec![Atom::Interval {
                        o1: "t".into(),
                        e1: Endpoint::Start,
                        o2: "t".into(),
                        e2: Endpoint::End,
                        interval: Interval::singular(3),
                    }],
                },
            ],
        };
        let p = two_var_problem_self(vec![r]);
        let xs = vec![
            ("a", time(3, 1)),
            ("b", time(0, 1)),
            ("b", time(0, 1)),
            ("a", time(1, 1)),
        ];
        let split = xy_plan(
            xs.clone(),
            vec![("c", time(2, 1)), ("c", time(1, 1)), ("c", time(3, 1)), ("c", time(0, 1))],
        );
        let whole = xy_plan(
            xs,
            vec![("c", time(3, 1)), ("c", time(0, 1)), ("c", time(3, 1)), ("c", time(0, 1))],
        );
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        let phi = build_phi_forall(&mut fac, &p, &t).unwrap();
        for (plan, want) in [(&split, false), (&whole, true)] {
            let v = crate::domain::validate_plan(&p, plan, Semantics::Future)
                .unwrap()
                .satisfied();
            assert_eq!(v, want, "ground truth moved on {plan:?}");
            let word = encode(&p, &t, plan);
            assert_eq!(eval(&phi, &word, 0), want, "formula splits from the validator on {plan:?}");
        }
    }

    #[test]
    fn phi_forall_same_variable_pair_stays_sequential() {
        // Both names quantify over one variable, so their tokens never
        // overlap: the d-token cannot span a c-endpoint. A walk that
        // locates the windowed c-start, crosses the d-token, and lands on
        // the next c-end would stitch two different c-tokens together and
        // accept the first plan, whose only in-window c ends before any d.
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "c"), ("p", "y", "d")],
            vec![
                Atom::Interval {
                    o1: "p".into(),
                    e1: Endpoint::End,
                    o2: "o".into(),
                    e2: Endpoint::End,
                    interval: Interval::greater_than(0),
                },
                Atom::PointLeft {
                    o: "o".into(),
                    e: Endpoint::Start,
                    n: 3,
                    interval: Interval::closed(2, 3),
                },
            ],
        );
        let p = two_var_problem(vec![r]);
        let xs = vec![("a", time(2, 1)), ("b", time(0, 1))];
        let crossed = xy_plan(
            xs.clone(),
            vec![("c", time(3, 1)), ("d", time(3, 1)), ("c", time(3, 1))],
        );
        let ordered = xy_plan(
            xs,
            vec![("c", time(0, 1)), ("d", time(0, 1)), ("c", time(3, 1))],
        );
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        let phi = build_phi_forall(&mut fac, &p, &t).unwrap();
        for (plan, want) in [(&crossed, false), (&ordered, true)] {
            let v = crate::domain::validate_plan(&p, plan, Semantics::Future)
                .unwrap()
                .satisfied();
            assert_eq!(v, want, "ground truth moved on {plan:?}");
            let word = encode(&p, &t, plan);
            assert_eq!(eval(&phi, &word, 0), want, "formula splits from the validator on {plan:?}");
        }
    }

    #[test]
    fn phi_forall_shared_token_serves_both_names() {
        // Two names over the same value may pick one token, making the
        // end difference zero. The positive plan's only in-window c-end
        // is the first token's own end, so the witness must reuse it for
        // both names; the other plan has no c-end inside the window.
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "c"), ("p", "y", "c")],
            vec![
                Atom::Interval {
                    o1: "o".into(),
                    e1: Endpoint::End,
                    o2: "p".into(),
                    e2: Endpoint::End,
                    interval: Interval::at_least(0),
                },
                Atom::PointRight {
                    n: 0,
                    o: "p".into(),
                    e: Endpoint::End,
                    interval: Interval::closed(1, 3),
                },
            ],
        );
        let p = two_var_problem(vec![r]);
        let xs = vec![("a", time(1, 1))];
        let shared = xy_plan(
            xs.clone(),
            vec![("c", time(2, 1)), ("d", time(0, 1)), ("c", time(3, 1))],
        );
        let outside = xy_plan(
            xs,
            vec![("c", time(4, 1)), ("d", time(0, 1)), ("c", time(1, 1))],
        );
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        let phi = build_phi_forall(&mut fac, &p, &t).unwrap();
        for (plan, want) in [(&shared, true), (&outside, false)] {
            let v = crate::domain::validate_plan(&p, plan, Semantics::Future)
                .unwrap()
                .satisfied();
            assert_eq!(v, want, "ground truth moved on {plan:?}");
            let word = encode(&p, &t, plan);
            assert_eq!(eval(&phi, &word, 0), want, "formula splits from the validator on {plan:?}");
        }
    }

    #[test]
    #[ignore = "long stress sweep; run explicitly"]
    fn phi_forall_matches_validator_stress() {
        for seed in [7, 17, 29, 59, 71, 83, 97, 113, 131, 149, 167, 181] {
            oracle_sweep(seed, 800, false, 4000);
            oracle_sweep(seed + 1000, 800, true, 4000);
        }
    }


    fn oracle_sweep(seed: u64, cases: u32, self_trans: bool, min_checked: u32) {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(seed);
        let names = ["t", "o", "p"];
        let mut checked = 0u32;
        let mut skipped = 0u32;
        for case in 0..cases {
            let statement = |rng: &mut StdRng| -> Statement {
                let o_binding = if rng.gen_bool(0.4) {
                    ("o", "x", if rng.gen_bool(0.5) { "a" } else { "b" })
                } else {
                    ("o", "y", if rng.gen_bool(0.5) { "c" } else { "d" })
                };
                let quants: Vec<(&str, &str, &str)> =
                    vec![o_binding, ("p", "y", if rng.gen_bool(0.5) { "c" } else { "d" })];
                let quants = if rng.gen_bool(0.3) { quants[..1].to_vec() } else { quants };
                let avail: Vec<&str> =
                    names.iter().copied().take(1 + quants.len()).collect();
                let mut atoms = Vec::new();
                let n_atoms = rng.gen_range(1..=2);
                let mut used: Vec<&str> = Vec::new();
                for _ in 0..n_atoms {
                    let o1 = avail[rng.gen_range(0..avail.len())];
                    let o2 = avail[rng.gen_range(0..avail.len())];
                    // Keep the rule simple: a non-trigger name joins at
                    // most one interval atom.
                    let fresh = |o: &str, used: &[&str]| o == "t" || !used.contains(&o);
                    if !fresh(o1, &used) || !fresh(o2, &used) {
                        continue;
                    }
                    let lo = rng.gen_range(0..3u64);
                    let iv = match rng.gen_range(0..4) {
                        0 => Interval::closed(lo, lo + rng.gen_range(0..3u64)),
                        1 => Interval::singular(lo),
                        2 => Interval::at_least(lo),
                        _ => Interval::greater_than(lo),
                    };
                    let ep = |r: &mut StdRng| {
                        if r.gen_bool(0.5) {
                            Endpoint::Start
                        } else {
                            Endpoint::End
                        }
                    };
                    atoms.push(Atom::Interval {
                        o1: o1.into(),
                        e1: ep(rng),
                        o2: o2.into(),
                        e2: ep(rng),
                        interval: iv,
                    });
                    if o1 != "t" {
                        used.push(o1);
                    }
                    if o2 != "t" && o2 != o1 {
                        used.push(o2);
                    }
                }
                if rng.gen_bool(0.4) {
                    let o = avail[rng.gen_range(0..avail.len())];
                    let e = if rng.gen_bool(0.5) { Endpoint::Start } else { Endpoint::End };
                    let n = rng.gen_range(0..4u64);
                    let lo = rng.gen_range(0..3u64);
                    let iv = Interval::closed(lo, lo + rng.gen_range(0..3u64));
                    atoms.push(if rng.gen_bool(0.5) {
                        Atom::PointLeft { o: o.into(), e, n, interval: iv }
                    } else {
                        Atom::PointRight { n, o: o.into(), e, interval: iv }
                    });
                }
                Statement {
                    quantifiers: quants
                        .into_iter()
                        .map(|(n, x, v)| Quantifier {
                            name: n.into(),
                            var: x.into(),
                            value: v.into(),
                        })
                        .collect(),
                    atoms,
                }
            };
            let n_statements = if rng.gen_bool(0.3) { 2 } else { 1 };
            let statements = (0..n_statements).map(|_| statement(&mut rng)).collect();
            let r = SyncRule {
                name: "r".into(),
                trigger: Some(Quantifier {
                    name: "t".into(),
                    var: "x".into(),
                    value: "a".into(),
                }),
                statements,
            };
            let p = if self_trans {
                two_var_problem_self(vec![r])
            } else {
                two_var_problem(vec![r])
            };
            let t = PropTable::new(&p);
            let mut fac = FormulaFactory::new();
            let phi = match build_phi_forall(&mut fac, &p, &t) {
                Ok(f) => f,
                Err(MtlError::UnsupportedAtom { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => panic!("case {case}: unexpected error: {e}"),
            };
            for _ in 0..10 {
                let plan = random_plan(&mut rng, self_trans);
                let word = encode(&p, &t, &plan);
                let got = eval(&phi, &word, 0);
                let want = crate::domain::validate_plan(&p, &plan, Semantics::Future)
                    .unwrap()
                    .satisfied();
                assert_eq!(
                    got, want,
                    "case {case}: disagreement on {plan:?} for rule {:?}",
                    p.rules()[0]
                );
                checked += 1;
            }
        }
        assert!(
            checked > min_checked,
            "exercised only {checked} plans ({skipped} skipped)"
        );
    }

    fn random_plan(rng: &mut impl rand::Rng, self_trans: bool) -> MultiTimeline {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let nx = rng.gen_range(1..=4);
        let ny = rng.gen_range(1..=4);
        let mut flip = rng.gen_bool(0.5);
        for _ in 0..nx {
            let d = rng.gen_range(0..=3);
            xs.push((if flip { "a" } else { "b" }, time(d, 1)));
            if !self_trans || rng.gen_bool(0.7) {
                flip = !flip;
            }
        }
        let mut flip = rng.gen_bool(0.5);
        for _ in 0..ny {
            let d = rng.gen_range(0..=3);
            ys.push((if flip { "c" } else { "d" }, time(d, 1)));
            if !self_trans || rng.gen_bool(0.7) {
                flip = !flip;
            }
        }
        xy_plan(xs, ys)
    }

    #[test]
    fn phi_forall_shape_matches_display() {
        // The second-case display: trigger end, witness start in [0,2].
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::End,
                o2: "o".into(),
                e2: Endpoint::Start,
                interval: Interval::closed(0, 2),
            }],
        );
        let p = two_var_problem(vec![r]);
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        let phi = build_phi_forall(&mut fac, &p, &t).unwrap();
        let s = pretty(&phi, &|id| t.render(id));
        // Two navigation walks to the trigger end: one carrying the
        // windowed eventuality, one carrying the past-start disjunct.
        assert!(s.contains("F[0,2]"), "windowed start missing: {s}");
        assert!(s.contains("ps(d)"), "past-start disjunct missing: {s}");
        // Walk targets land on the trigger-end event disjunction.
        let walks = s.matches("U[0,inf) ((x:a->a | x:a->b | x:a->end) &").count();
        assert!(walks >= 2, "expected separate navigation walks: {s}");
    }

    #[test]
    fn phi_forall_subformula_count_linear() {
        let r = rule(
            ("t", "x", "a"),
            vec![("o", "y", "d")],
            vec![Atom::Interval {
                o1: "t".into(),
                e1: Endpoint::End,
                o2: "o".into(),
                e2: Endpoint::Start,
                interval: Interval::closed(0, 2),
            }],
        );
        let p = two_var_problem(vec![r]);
        let t = PropTable::new(&p);
        let mut fac = FormulaFactory::new();
        let _ = build_phi_forall(&mut fac, &p, &t).unwrap();
        // Loose linearity check: a handful of nodes per value and atom.
        assert!(fac.count() < 200, "unexpected blowup: {}", fac.count());
    }
}
