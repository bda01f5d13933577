//! Big-M MILP encoding of a trained ReLU network over a load domain, and
//! the interval / LP-relaxation / MILP bound-tightening cascade.
//!
//! Pre-activations are kept as affine expressions of the previous layer's
//! variables instead of separate variables. A neuron proven (or flagged)
//! active contributes its pre-activation expression directly, an inactive
//! one contributes nothing, and only free neurons get a `z` variable and a
//! binary.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::InputDomain;
use crate::grid::GridCase;
use crate::linalg::Matrix;
use crate::lp::{
    solve_milp, Clock, LinExpr, LinearModel, LpError, LpSession, Relation, Sense, SolverParams, Status, VarId,
};
use crate::math::abs;
use crate::mlp::MlpNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundSource {
    Interval,
    LpRelax,
    Milp,
}

impl BoundSource {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundSource::Interval => "interval",
            BoundSource::LpRelax => "lp_relax",
            BoundSource::Milp => "milp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [BoundSource::Interval, BoundSource::LpRelax, BoundSource::Milp]
            .into_iter()
            .find(|b| b.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stability {
    Free,
    AlwaysActive,
    AlwaysInactive,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Free => "free",
            Stability::AlwaysActive => "always_active",
            Stability::AlwaysInactive => "always_inactive",
        }
    }
}

/// How neuron phases may be fixed in the final encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilityMode {
    /// Only phases proven by the bounds are fixed.
    Certified,
    /// Additionally fix phases that never change on a dataset. Not sound
    /// over the whole domain.
    Dataset,
}

impl StabilityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityMode::Certified => "certified",
            StabilityMode::Dataset => "dataset",
        }
    }
}

/// Pre-activation interval of one hidden neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronBound {
    pub lo: f64,
    pub hi: f64,
    pub source: BoundSource,
}

impl NeuronBound {
    /// Phase implied by the interval.
    pub fn stability(&self) -> Stability {
        if self.lo >= 0.0 {
            Stability::AlwaysActive
        } else if self.hi <= 0.0 {
            Stability::AlwaysInactive
        } else {
            Stability::Free
        }
    }
}

/// Bounds for every hidden neuron, indexed `[layer][neuron]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub layers: Vec<Vec<NeuronBound>>,
}

impl NeuronBounds {
    pub fn stability(&self) -> Vec<Vec<Stability>> {
        self.layers
            .iter()
            .map(|l| l.iter().map(NeuronBound::stability).collect())
            .collect()
    }

    /// Whether every interval of `self` lies inside the matching one of `outer`.
    pub fn within(&self, outer: &NeuronBounds, tol: f64) -> bool {
        self.layers.len() == outer.layers.len()
            && self.layers.iter().zip(&outer.layers).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.lo >= y.lo - tol && x.hi <= y.hi + tol)
            })
    }

    pub fn count(&self, s: Stability) -> usize {
        self.stability().iter().flatten().filter(|x| **x == s).count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("network has {net} inputs but the domain has {domain} loads")]
    InputDimension { net: usize, domain: usize },
    #[error("network has {net} outputs but the case has {gens} non-slack generators")]
    OutputDimension { net: usize, gens: usize },
    #[error("bounds do not match the network's hidden layers")]
    BoundsShape,
    #[error("neuron ({layer}, {index}) has lower bound above upper bound")]
    InvertedBound { layer: usize, index: usize },
    #[error("bound tightening problem was {0:?}; the encoding of a network cannot be infeasible")]
    Tightening(Status),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Rounding allowance for an interval evaluation with magnitude `scale`.
fn rounding_pad(scale: f64) -> f64 {
    1e-12 * scale
}

/// Layer-by-layer interval propagation over the domain's box.
pub fn interval_bounds(net: &MlpNetwork, domain: &InputDomain) -> Result<NeuronBounds, EncodeError> {
    if net.n_inputs() != domain.dim() {
        return Err(EncodeError::InputDimension {
            net: net.n_inputs(),
            domain: domain.dim(),
        });
    }
    let folded = net.folded();
    let mut lo = domain.lo_mw();
    let mut hi = domain.hi_mw();
    let mut layers = Vec::new();
    for (w, b) in folded.iter().take(folded.len() - 1) {
        let mut layer = Vec::with_capacity(w.rows());
        for i in 0..w.rows() {
            let (mut l, mut h, mut scale) = (b[i], b[i], 0.0);
            for (j, wij) in w.row(i).iter().enumerate() {
                if *wij >= 0.0 {
                    l += wij * lo[j];
                    h += wij * hi[j];
                } else {
                    l += wij * hi[j];
                    h += wij * lo[j];
                }
                scale += abs(*wij) * abs(lo[j]).max(abs(hi[j]));
            }
            let pad = if scale > 0.0 {
                rounding_pad(scale + abs(b[i]))
            } else {
                0.0
            };
            layer.push(NeuronBound {
                lo: l - pad,
                hi: h + pad,
                source: BoundSource::Interval,
            });
        }
        lo = layer.iter().map(|n| n.lo.max(0.0)).collect();
        hi = layer.iter().map(|n| n.hi.max(0.0)).collect();
        layers.push(layer);
    }
    Ok(NeuronBounds { layers })
}

/// Phase fixings observed on a set of load vectors: a neuron whose
/// pre-activation never changes sign is flagged.
pub fn stability_from_dataset(net: &MlpNetwork, inputs: &Matrix) -> Vec<Vec<Stability>> {
    let hidden = net.hidden();
    let mut min: Vec<Vec<f64>> = hidden.iter().map(|&n| vec![f64::INFINITY; n]).collect();
    let mut max: Vec<Vec<f64>> = hidden.iter().map(|&n| vec![f64::NEG_INFINITY; n]).collect();
    for r in 0..inputs.rows() {
        for (k, z) in net.pre_activations(inputs.row(r)).iter().enumerate() {
            for (i, v) in z.iter().enumerate() {
                min[k][i] = min[k][i].min(*v);
                max[k][i] = max[k][i].max(*v);
            }
        }
    }
    min.iter()
        .zip(&max)
        .map(|(lo, hi)| {
            lo.iter()
                .zip(hi)
                .map(|(l, h)| {
                    if inputs.rows() == 0 {
                        Stability::Free
                    } else if *h <= 0.0 {
                        Stability::AlwaysInactive
                    } else if *l >= 0.0 {
                        Stability::AlwaysActive
                    } else {
                        Stability::Free
                    }
                })
                .collect()
        })
        .collect()
}

/// Incremental construction of the network constraints.
struct Builder {
    model: LinearModel,
    p_d: Vec<VarId>,
    folded: Vec<(Matrix, Vec<f64>)>,
    /// Post-activation expressions of the last emitted layer.
    prev: Vec<LinExpr>,
    z_hat: Vec<Vec<LinExpr>>,
    z: Vec<Vec<Option<VarId>>>,
    binaries: Vec<Vec<Option<VarId>>>,
    phases: Vec<Vec<Stability>>,
}

impl Builder {
    fn new(net: &MlpNetwork, domain: &InputDomain) -> Self {
        let mut model = LinearModel::new();
        let (lo, hi) = (domain.lo_mw(), domain.hi_mw());
        let p_d: Vec<VarId> = lo.iter().zip(&hi).map(|(l, h)| model.add_var(*l, *h)).collect();
        for (a, b) in &domain.polytope {
            let mut e = LinExpr::new();
            for (v, c) in p_d.iter().zip(a) {
                if *c != 0.0 {
                    e.add_term(*v, *c);
                }
            }
            model.add_constraint(e, Relation::Le, *b);
        }
        let prev = p_d.iter().map(|v| LinExpr::var(*v)).collect();
        Self {
            model,
            p_d,
            folded: net.folded(),
            prev,
            z_hat: Vec::new(),
            z: Vec::new(),
            binaries: Vec::new(),
            phases: Vec::new(),
        }
    }

    /// Pre-activation expressions of layer `k` from the current `prev`.
    fn pre_activation(&self, k: usize) -> Vec<LinExpr> {
        let (w, b) = &self.folded[k];
        (0..w.rows())
            .map(|i| {
                let mut e = LinExpr::constant(b[i]);
                for (j, wij) in w.row(i).iter().enumerate() {
                    if *wij != 0.0 {
                        e.add_scaled(&self.prev[j], *wij);
                    }
                }
                e.normalized()
            })
            .collect()
    }

    /// Emits hidden layer `k`. With `relaxed` the binaries become
    /// continuous in [0, 1].
    fn add_hidden(&mut self, k: usize, bounds: &[NeuronBound], phases: &[Stability], relaxed: bool) {
        let z_hat = self.pre_activation(k);
        let mut post = Vec::with_capacity(z_hat.len());
        let mut zs = Vec::with_capacity(z_hat.len());
        let mut bs = Vec::with_capacity(z_hat.len());
        for (i, e) in z_hat.iter().enumerate() {
            match phases[i] {
                Stability::AlwaysInactive => {
                    post.push(LinExpr::new());
                    zs.push(None);
                    bs.push(None);
                }
                Stability::AlwaysActive => {
                    post.push(e.clone());
                    zs.push(None);
                    bs.push(None);
                }
                Stability::Free => {
                    let (l, u) = (bounds[i].lo, bounds[i].hi);
                    let z = self.model.add_var(0.0, u);
                    let b = if relaxed {
                        self.model.add_var(0.0, 1.0)
                    } else {
                        self.model.add_binary()
                    };
                    // z >= z_hat
                    let mut r = LinExpr::var(z);
                    r.add_scaled(e, -1.0);
                    self.model.add_constraint(r.clone(), Relation::Ge, 0.0);
                    // z <= z_hat - l (1 - b)
                    r.add_term(b, -l).add_constant(l);
                    self.model.add_constraint(r, Relation::Le, 0.0);
                    // z <= u b
                    let mut r = LinExpr::var(z);
                    r.add_term(b, -u);
                    self.model.add_constraint(r, Relation::Le, 0.0);
                    post.push(LinExpr::var(z));
                    zs.push(Some(z));
                    bs.push(Some(b));
                }
            }
        }
        self.prev = post;
        self.z_hat.push(z_hat);
        self.z.push(zs);
        self.binaries.push(bs);
        self.phases.push(phases.to_vec());
    }
}

/// Variable handles of an encoded network inside its model.
#[derive(Debug, Clone)]
pub struct NetworkEncoding {
    pub model: LinearModel,
    pub p_d: Vec<VarId>,
    /// Pre-activation of every hidden neuron as an expression.
    pub z_hat: Vec<Vec<LinExpr>>,
    /// Post-activation variables of free neurons.
    pub z: Vec<Vec<Option<VarId>>>,
    pub binaries: Vec<Vec<Option<VarId>>>,
    /// Phase used for each neuron in this encoding.
    pub phases: Vec<Vec<Stability>>,
    /// Predicted dispatch for every generator in case order; the slack
    /// entry is the balance completion.
    pub p_hat: Vec<VarId>,
    pub slack_gen: usize,
    pub bounds: NeuronBounds,
    pub mode: StabilityMode,
}

impl NetworkEncoding {
    pub fn free_neurons(&self) -> usize {
        self.binaries.iter().flatten().filter(|b| b.is_some()).count()
    }
}

fn check_shapes(net: &MlpNetwork, domain: &InputDomain, bounds: &NeuronBounds) -> Result<(), EncodeError> {
    if net.n_inputs() != domain.dim() {
        return Err(EncodeError::InputDimension {
            net: net.n_inputs(),
            domain: domain.dim(),
        });
    }
    let hidden = net.hidden();
    if bounds.layers.len() != hidden.len() || bounds.layers.iter().zip(hidden).any(|(l, n)| l.len() != *n) {
        return Err(EncodeError::BoundsShape);
    }
    for (k, l) in bounds.layers.iter().enumerate() {
        for (i, b) in l.iter().enumerate() {
            if !(b.lo <= b.hi) {
                return Err(EncodeError::InvertedBound { layer: k, index: i });
            }
        }
    }
    Ok(())
}

/// Phases for the final encoding: proven phases always, dataset flags on
/// top of them in [`StabilityMode::Dataset`].
pub fn effective_phases(
    bounds: &NeuronBounds,
    mode: StabilityMode,
    dataset_flags: Option<&[Vec<Stability>]>,
) -> Vec<Vec<Stability>> {
    let mut phases = bounds.stability();
    if let (StabilityMode::Dataset, Some(flags)) = (mode, dataset_flags) {
        for (pl, fl) in phases.iter_mut().zip(flags) {
            for (p, f) in pl.iter_mut().zip(fl) {
                if *p == Stability::Free {
                    *p = *f;
                }
            }
        }
    }
    phases
}

/// Encodes the network over `domain` with the big-M ReLU formulation, the
/// output layer in MW and the slack completion as one equality.
pub fn encode_network(
    net: &MlpNetwork,
    case: &GridCase,
    domain: &InputDomain,
    bounds: &NeuronBounds,
    mode: StabilityMode,
    dataset_flags: Option<&[Vec<Stability>]>,
) -> Result<NetworkEncoding, EncodeError> {
    check_shapes(net, domain, bounds)?;
    let non_slack = case.non_slack_gens();
    if net.n_outputs() != non_slack.len() {
        return Err(EncodeError::OutputDimension {
            net: net.n_outputs(),
            gens: non_slack.len(),
        });
    }
    let phases = effective_phases(bounds, mode, dataset_flags);
    let mut bld = Builder::new(net, domain);
    for k in 0..bounds.layers.len() {
        bld.add_hidden(k, &bounds.layers[k], &phases[k], false);
    }
    let out = bld.pre_activation(bld.folded.len() - 1);
    let slack_gen = case.slack_gen();
    let mut p_hat = vec![VarId(usize::MAX); case.n_gens()];
    for (expr, &g) in out.iter().zip(&non_slack) {
        let v = bld.model.add_free_var();
        let mut r = LinExpr::var(v);
        r.add_scaled(expr, -1.0);
        bld.model.add_constraint(r, Relation::Eq, 0.0);
        p_hat[g] = v;
    }
    // p_slack = sum(p_d) - sum(p_hat over other generators)
    let s = bld.model.add_free_var();
    let mut r = LinExpr::var(s);
    for &d in &bld.p_d {
        r.add_term(d, -1.0);
    }
    for &g in &non_slack {
        r.add_term(p_hat[g], 1.0);
    }
    bld.model.add_constraint(r, Relation::Eq, 0.0);
    p_hat[slack_gen] = s;

    Ok(NetworkEncoding {
        model: bld.model,
        p_d: bld.p_d,
        z_hat: bld.z_hat,
        z: bld.z,
        binaries: bld.binaries,
        phases: bld.phases,
        p_hat,
        slack_gen,
        bounds: bounds.clone(),
        mode,
    })
}

/// Runs closures over `0..n`, possibly in parallel; results are returned in
/// index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightenOptions {
    /// Node limit per MILP bound solve; the proven bound is kept on the cap.
    pub milp_max_nodes: Option<usize>,
    /// Time limit per MILP bound solve in seconds (needs a real clock).
    pub milp_time_limit: Option<f64>,
    /// Relative widening applied to optimized bounds.
    pub pad: f64,
}

impl Default for TightenOptions {
    fn default() -> Self {
        Self {
            milp_max_nodes: Some(1000),
            milp_time_limit: None,
            pad: 1e-7,
        }
    }
}

/// Which optimization-based stage to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TightenStage {
    LpRelax,
    Milp,
}

fn widen(v: f64, pad: f64) -> f64 {
    pad * (1.0 + abs(v))
}

/// Tightens every hidden neuron by minimizing and maximizing its
/// pre-activation over the encoding of the preceding layers (relaxed or
/// exact) and the domain. Layers are processed in order so each feeds the
/// next; bounds never widen.
pub fn tighten_bounds<E: Executor>(
    net: &MlpNetwork,
    domain: &InputDomain,
    bounds: &NeuronBounds,
    stage: TightenStage,
    opts: &TightenOptions,
    exec: &E,
    clock: &(dyn Clock + Sync),
) -> Result<NeuronBounds, EncodeError> {
    check_shapes(net, domain, bounds)?;
    let mut out = bounds.clone();
    let mut bld = Builder::new(net, domain);
    let relaxed = stage == TightenStage::LpRelax;
    for k in 0..out.layers.len() {
        if k > 0 {
            let phases: Vec<Stability> = out.layers[k - 1].iter().map(NeuronBound::stability).collect();
            let prev = out.layers[k - 1].clone();
            bld.add_hidden(k - 1, &prev, &phases, relaxed);
        }
        let exprs = bld.pre_activation(k);
        let current = out.layers[k].clone();
        let new_layer: Vec<Result<NeuronBound, EncodeError>> = match stage {
            TightenStage::LpRelax => {
                // One warm-started session per layer on a single thread;
                // these LPs are cheap compared with the MILP stage.
                let mut session = LpSession::new(bld.model.clone())?;
                exprs
                    .iter()
                    .zip(&current)
                    .map(|(e, old)| {
                        if e.terms.is_empty() {
                            return Ok(*old);
                        }
                        let lo = lp_extreme(&mut session, e, Sense::Minimize)?;
                        let hi = lp_extreme(&mut session, e, Sense::Maximize)?;
                        Ok(merge(
                            old,
                            lo - widen(lo, opts.pad),
                            hi + widen(hi, opts.pad),
                            BoundSource::LpRelax,
                        ))
                    })
                    .collect()
            }
            TightenStage::Milp => {
                let model = &bld.model;
                exec.map(exprs.len(), |i| {
                    let (e, old) = (&exprs[i], &current[i]);
                    if e.terms.is_empty() {
                        return Ok(*old);
                    }
                    let lo = milp_extreme(model, e, Sense::Minimize, old.lo, opts, clock)?;
                    let hi = milp_extreme(model, e, Sense::Maximize, old.hi, opts, clock)?;
                    Ok(merge(
                        old,
                        lo - widen(lo, opts.pad),
                        hi + widen(hi, opts.pad),
                        BoundSource::Milp,
                    ))
                })
            }
        };
        out.layers[k] = new_layer.into_iter().collect::<Result<_, _>>()?;
    }
    Ok(out)
}

fn merge(old: &NeuronBound, lo: f64, hi: f64, source: BoundSource) -> NeuronBound {
    let (nlo, nhi) = (old.lo.max(lo), old.hi.min(hi));
    let tightened = nlo > old.lo || nhi < old.hi;
    if nlo > nhi {
        // Only possible through rounding on a constant neuron; keep a point.
        let mid = (nlo + nhi) / 2.0;
        return NeuronBound {
            lo: mid,
            hi: mid,
            source,
        };
    }
    NeuronBound {
        lo: nlo,
        hi: nhi,
        source: if tightened { source } else { old.source },
    }
}

fn lp_extreme(session: &mut LpSession, e: &LinExpr, sense: Sense) -> Result<f64, EncodeError> {
    let r = session.solve_objective(sense, e.clone())?;
    match r.status {
        Status::Optimal => Ok(r.objective),
        s => Err(EncodeError::Tightening(s)),
    }
}

fn milp_extreme(
    model: &LinearModel,
    e: &LinExpr,
    sense: Sense,
    _current: f64,
    opts: &TightenOptions,
    clock: &(dyn Clock + Sync),
) -> Result<f64, EncodeError> {
    let mut m = model.clone();
    m.set_objective(sense, e.clone());
    let params = SolverParams {
        max_nodes: opts.milp_max_nodes,
        time_limit: opts.milp_time_limit,
        ..SolverParams::default()
    };
    let r = solve_milp(&m, &params, clock)?;
    match r.status {
        Status::Optimal => Ok(r.objective),
        Status::NodeLimit | Status::TimeLimit if r.bound.is_finite() => Ok(r.bound),
        s => Err(EncodeError::Tightening(s)),
    }
}

/// Interval bounds followed by the LP and, optionally, the MILP stage.
pub fn bound_cascade<E: Executor>(
    net: &MlpNetwork,
    domain: &InputDomain,
    milp_stage: bool,
    opts: &TightenOptions,
    exec: &E,
    clock: &(dyn Clock + Sync),
) -> Result<NeuronBounds, EncodeError> {
    let b = interval_bounds(net, domain)?;
    let b = tighten_bounds(net, domain, &b, TightenStage::LpRelax, opts, exec, clock)?;
    if milp_stage {
        tighten_bounds(net, domain, &b, TightenStage::Milp, opts, exec, clock)
    } else {
        Ok(b)
    }
}
