//! Subcommands as functions from models to JSON reports.

use serde_json::{json, Map, Value};

use resil_core::constraints::{anti_ideal_of, as_anti_ideal, BadSet, ConstraintError, PatternSpace};
use resil_core::engine::{
    explicit_check, forward_states, minimal_step, over_approx, pre_star, under_approx, AntiIdeal, Backend, EngineError,
    Mu, Outcome, ResilienceInstance,
};
use resil_core::joint::ControlView;
use resil_core::order::{minimize, Basis};

use crate::compile::{Compiled, Model, Render};
use crate::model::*;

pub const EXIT_FOUND: i32 = 0;
pub const EXIT_UNBOUNDED: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("{0}")]
    Load(#[from] LoadError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("{0}")]
    Usage(String),
}

impl CommandError {
    pub fn to_json(&self) -> Value {
        let errors: Vec<Value> = match self {
            CommandError::Load(e) => e.located().iter().map(|l| json!({"pointer": l.pointer, "message": l.message})).collect(),
            other => vec![json!({"message": other.to_string()})],
        };
        json!({ "verdict": "error", "errors": errors })
    }
}

pub struct Report {
    pub json: Value,
    pub exit: i32,
}

impl Report {
    fn ok(json: Value) -> Self {
        Report { json, exit: EXIT_FOUND }
    }
}

/// Loads and compiles a model file.
pub fn open(path: &std::path::Path) -> Result<Model, CommandError> {
    let doc = load(path)?;
    crate::compile::compile(&doc).map_err(|e| CommandError::Load(LoadError::Invalid(e)))
}

/// Bounds shared by everything a command needs from a backend.
pub trait Space: Backend + PatternSpace<Body = <Self as Space>::B>
where
    Self::State: ControlView + Render,
{
    type B: Clone + Send + Sync;
}

impl<T> Space for T
where
    T: Backend + PatternSpace,
    T::State: ControlView + Render,
    T::Body: Clone + Send + Sync,
{
    type B = T::Body;
}

macro_rules! dispatch {
    ($model:expr, $c:ident => $body:expr) => {
        match $model {
            Model::Petri($c) => $body,
            Model::Gts($c) => $body,
        }
    };
}

fn states<S: Render>(basis: impl IntoIterator<Item = S>, c: &Compiled<impl PatternSpace>) -> Value {
    Value::Array(basis.into_iter().map(|s| serde_json::to_value(s.render(&c.names)).expect("plain data")).collect())
}

fn mu_json(m: Mu) -> Value {
    match m {
        Mu::Finite(k) => json!(k),
        Mu::Infinite => json!("infinity"),
    }
}

fn steps<W>(trace: &[Basis<W::State>], bad: &dyn AntiIdeal<W::State>, c: &Compiled<W>) -> Value
where
    W: Space,
    W::State: ControlView + Render,
{
    let items = trace.iter().enumerate().map(|(k, b)| {
        let inside: Vec<W::State> = b.iter().filter(|s| bad.contains(s)).cloned().collect();
        json!({
            "step": k,
            "size": b.len(),
            "elements": states(b.iter().cloned(), c),
            "in_bad": states(inside, c),
        })
    });
    Value::Array(items.collect())
}

fn bad_of<W>(c: &Compiled<W>) -> Result<resil_core::constraints::BadPredicate<'_, W::State>, CommandError>
where
    W: Space + Sync,
    W::State: ControlView + Render,
{
    let spec: BadSet<W::State, <W as Space>::B> = c.bad.clone();
    Ok(anti_ideal_of(&c.system, spec)?)
}

pub fn check(model: &Model, k: Option<usize>, trace: bool) -> Result<Report, CommandError> {
    dispatch!(model, c => check_in(c, k, trace))
}

fn check_in<W>(c: &Compiled<W>, k: Option<usize>, trace: bool) -> Result<Report, CommandError>
where
    W: Space + Sync,
    W::State: ControlView + Render,
{
    let Some(b_post) = &c.b_post else {
        return Err(CommandError::Usage(
            "the model gives no b_post basis; add one, or bound k_min with `resil approx --under L` and `resil approx --over`"
                .into(),
        ));
    };
    let bad = bad_of(c)?;
    let inst = ResilienceInstance {
        backend: &c.system,
        b_post: b_post.clone(),
        bad: as_anti_ideal(&bad),
        safety: c.safety.clone(),
        max_iters: c.limits.max_iters,
    };
    let v = minimal_step(&inst, trace)?;
    let mut out = Map::new();
    let (verdict, exit) = match v.outcome {
        Outcome::Found(_) => ("found", EXIT_FOUND),
        Outcome::Unbounded => ("unbounded", EXIT_UNBOUNDED),
        Outcome::Exhausted => ("exhausted", EXIT_FAILURE),
    };
    out.insert("verdict".into(), json!(verdict));
    if let Outcome::Found(k) = v.outcome {
        out.insert("k_min".into(), json!(k));
    }
    out.insert("iterations".into(), json!(v.iterations));
    if let Some(k) = k {
        out.insert("k".into(), json!(k));
        out.insert("explicit".into(), json!(explicit_check(&inst, k)?));
    }
    if let Some(t) = &v.trace {
        out.insert("bases".into(), steps(t, as_anti_ideal(&bad), c));
    }
    Ok(Report { json: Value::Object(out), exit })
}

pub fn approx(model: &Model, under: Option<usize>, over: bool) -> Result<Report, CommandError> {
    if under.is_none() && !over {
        return Err(CommandError::Usage("give --under L, --over, or both".into()));
    }
    dispatch!(model, c => approx_in(c, under, over))
}

fn start_of<W: PatternSpace>(c: &Compiled<W>) -> Result<&W::State, CommandError> {
    c.start.as_ref().ok_or_else(|| CommandError::Usage("the model gives no start state".into()))
}

fn depth_ok<W: PatternSpace>(c: &Compiled<W>, depth: usize) -> Result<(), CommandError> {
    match c.limits.forward_depth_cap {
        Some(cap) if depth > cap => Err(CommandError::Usage(format!("depth {depth} exceeds limits.forward_depth_cap = {cap}"))),
        _ => Ok(()),
    }
}

fn approx_in<W>(c: &Compiled<W>, under: Option<usize>, over: bool) -> Result<Report, CommandError>
where
    W: Space + Sync,
    W::State: ControlView + Render,
{
    let start = start_of(c)?;
    let bad = bad_of(c)?;
    let l = &c.limits;
    let mut out = Map::new();
    if let Some(depth) = under {
        depth_ok(c, depth)?;
        let k = under_approx(start, depth, as_anti_ideal(&bad), &c.safety, &c.system, l.forward_state_cap, l.max_iters)?;
        out.insert("under_depth".into(), json!(depth));
        out.insert("k_under".into(), mu_json(k));
    }
    if over {
        let k = over_approx(start, as_anti_ideal(&bad), &c.safety, &c.system, l.max_iters)?;
        out.insert("k_over".into(), mu_json(k));
    }
    out.insert("guarantee".into(), json!("k_under <= k_min <= k_over"));
    Ok(Report::ok(Value::Object(out)))
}

pub fn prestar(model: &Model) -> Result<Report, CommandError> {
    dispatch!(model, c => prestar_in(c))
}

fn prestar_in<W>(c: &Compiled<W>) -> Result<Report, CommandError>
where
    W: Space + Sync,
    W::State: ControlView + Render,
{
    let bad = bad_of(c)?;
    let run = pre_star(&c.safety, &c.system, c.limits.max_iters)?;
    Ok(Report::ok(json!({
        "index": run.index,
        "size": run.basis.len(),
        "basis": states(run.basis.iter().cloned(), c),
        "steps": steps(&run.trace, as_anti_ideal(&bad), c),
    })))
}

pub fn post(model: &Model, depth: usize) -> Result<Report, CommandError> {
    dispatch!(model, c => post_in(c, depth))
}

fn post_in<W>(c: &Compiled<W>, depth: usize) -> Result<Report, CommandError>
where
    W: Space + Sync,
    W::State: ControlView + Render,
{
    depth_ok(c, depth)?;
    let reach = forward_states(start_of(c)?, depth, &c.system, c.limits.forward_state_cap)?;
    let explored = reach.len();
    let basis = minimize(reach, &c.system);
    Ok(Report::ok(json!({
        "depth": depth,
        "explored": explored,
        "basis": states(basis.iter().cloned(), c),
    })))
}

fn merge_owner(given: Option<OwnerDoc>, party: OwnerDoc, name: &str, ptr: &Pointer) -> Result<OwnerDoc, Located> {
    match given {
        Some(o) if o != party => Err(ptr.at("owner").error(format!("\"{name}\" belongs to the other party"))),
        _ => Ok(party),
    }
}

/// Joins system rules (from a full model) with environment rules, optionally
/// replacing the control automaton. The result is validated.
pub fn compose(system: &ModelDoc, env: &ComponentDoc, automaton: Option<&AutomatonDoc>) -> Result<ModelDoc, Vec<Located>> {
    let mut out = system.clone();
    let mut errs = Vec::new();
    if env.format != FORMAT {
        errs.push(Pointer::root().at("format").error(format!("environment: expected \"{FORMAT}\"")));
    }
    if env.kind != system.kind {
        errs.push(Pointer::root().at("kind").error("system and environment kinds differ"));
    }
    let env_ptr = Pointer::root().at("environment");
    match (&mut out.petri, &mut out.gts) {
        (Some(p), _) => {
            if !env.rules.is_empty() {
                errs.push(env_ptr.at("rules").error("a petri component has transitions, not rules"));
            }
            for (i, t) in p.transitions.iter_mut().enumerate() {
                match merge_owner(t.owner, OwnerDoc::Sys, &t.name, &Pointer::root().at("petri").at("transitions").at(i)) {
                    Ok(o) => t.owner = Some(o),
                    Err(e) => errs.push(e),
                }
            }
            for place in &env.places {
                if !p.places.contains(place) {
                    p.places.push(place.clone());
                }
            }
            for (i, t) in env.transitions.iter().enumerate() {
                let mut t = t.clone();
                match merge_owner(t.owner, OwnerDoc::Env, &t.name, &env_ptr.at("transitions").at(i)) {
                    Ok(o) => t.owner = Some(o),
                    Err(e) => errs.push(e),
                }
                p.transitions.push(t);
            }
        }
        (None, Some(g)) => {
            if !env.transitions.is_empty() || !env.places.is_empty() {
                errs.push(env_ptr.at("transitions").error("a gts component has rules, not transitions"));
            }
            for (i, r) in g.rules.iter_mut().enumerate() {
                match merge_owner(r.owner, OwnerDoc::Sys, &r.name, &Pointer::root().at("gts").at("rules").at(i)) {
                    Ok(o) => r.owner = Some(o),
                    Err(e) => errs.push(e),
                }
            }
            for (i, r) in env.rules.iter().enumerate() {
                let mut r = r.clone();
                match merge_owner(r.owner, OwnerDoc::Env, &r.name, &env_ptr.at("rules").at(i)) {
                    Ok(o) => r.owner = Some(o),
                    Err(e) => errs.push(e),
                }
                g.rules.push(r);
            }
        }
        (None, None) => errs.push(Pointer::root().error("the system model has no rules section")),
    }
    if let Some(a) = automaton {
        out.automaton = Some(a.clone());
    }
    if errs.is_empty() {
        errs = validate(&out);
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(errs)
    }
}
