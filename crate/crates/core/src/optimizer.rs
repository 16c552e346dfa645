//! Simultaneous area and material optimization through the trained decoder.
//!
//! Areas and latent coordinates are produced by two small networks fed with a
//! constant input, so bounds hold by construction. The constrained problem is
//! turned into an unconstrained loss with an extended log-barrier and
//! minimized with Adagrad. The continuous material is then snapped to the
//! nearest database entry and the areas are re-optimized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::materials::{Material, MaterialDatabase, Properties};
use crate::optim::Adagrad;
use crate::truss::{Truss, TrussError};
use crate::vae::{self, affine, Dense, VaeError, VaeModel, LATENT, LATENT_BOUND};

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid problem: {0}")]
    Spec(String),
    #[error("finite-element analysis failed at iteration {iteration}: {source}")]
    Analysis { iteration: usize, source: TrussError },
    #[error(transparent)]
    Truss(#[from] TrussError),
    #[error("loss diverged at iteration {iteration} (value {value})")]
    Divergence { iteration: usize, value: f64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("no feasible material at the given areas ({} evaluated)", .0.len())]
    NoFeasibleMaterial(Vec<MaterialEvaluation>),
}

/// Limits, bounds and schedule for one optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    /// C* in $.
    pub cost_limit: Option<f64>,
    /// M* in kg.
    pub mass_limit: Option<f64>,
    pub safety_factor: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Area the truss network starts from.
    pub a_init: f64,
    /// Aggregation exponent for the buckling and yield maxima.
    pub p: u32,
    pub t0: f64,
    pub mu: f64,
    pub lr: f64,
    pub max_iters: usize,
    /// Stop once the weight update norm falls below this.
    pub eps_star: f64,
    /// Allowed true-max constraint value for a design to count as feasible.
    pub tol: f64,
    pub hidden: usize,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            cost_limit: None,
            mass_limit: None,
            safety_factor: 4.0,
            a_min: 1e-9,
            a_max: 1e-2,
            a_init: 2e-3,
            p: 6,
            t0: 3.0,
            mu: 1.01,
            lr: 2e-3,
            max_iters: 2000,
            eps_star: 1e-6,
            tol: 1e-3,
            hidden: 20,
        }
    }
}

impl ProblemSpec {
    pub fn with_cost_limit(limit: f64) -> Self {
        Self {
            cost_limit: Some(limit),
            ..Self::default()
        }
    }

    pub fn with_mass_limit(limit: f64) -> Self {
        Self {
            mass_limit: Some(limit),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |msg: String| Err(OptimizeError::Spec(msg));
        if self.cost_limit.is_none() && self.mass_limit.is_none() {
            return bad("either a cost or a mass limit is required".into());
        }
        for (name, v) in [("cost limit", self.cost_limit), ("mass limit", self.mass_limit)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.safety_factor >= 1.0) {
            return bad(format!("safety factor must be at least 1, got {}", self.safety_factor));
        }
        if !(self.a_min > 0.0 && self.a_min < self.a_max && self.a_max.is_finite()) {
            return bad(format!("need 0 < A_min < A_max, got [{}, {}]", self.a_min, self.a_max));
        }
        if !(self.a_init > self.a_min && self.a_init < self.a_max) {
            return bad(format!("initial area {} must lie strictly inside the bounds", self.a_init));
        }
        if self.p < 2 || !self.p.is_multiple_of(2) {
            return bad(format!("aggregation exponent must be even and at least 2, got {}", self.p));
        }
        if !(self.t0 > 0.0) || !(self.mu > 1.0) {
            return bad(format!("barrier schedule needs t0 > 0 and mu > 1, got {} and {}", self.t0, self.mu));
        }
        if !(self.lr > 0.0) || self.max_iters == 0 || self.hidden == 0 {
            return bad("learning rate, iteration count and hidden width must be positive".into());
        }
        if !(self.eps_star >= 0.0) || !(self.tol >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }

    /// Barrier sharpness at iteration `k`.
    pub fn t_at(&self, k: usize) -> f64 {
        self.t0 * self.mu.powi(k as i32)
    }
}

/// What the optimizer is allowed to change.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignMode {
    /// Areas and latent material together.
    Simultaneous,
    /// Fixed areas; only the latent material moves.
    MaterialOnly { areas: Vec<f64> },
    /// Fixed material; only the areas move.
    AreaOnly { material: Material },
}

impl DesignMode {
    pub fn name(&self) -> &'static str {
        match self {
            DesignMode::Simultaneous => "simultaneous",
            DesignMode::MaterialOnly { .. } => "material-only",
            DesignMode::AreaOnly { .. } => "area-only",
        }
    }
}

/// Extended log-barrier ψ_t(g).
pub fn barrier_value(g: f64, t: f64) -> f64 {
    if g <= -1.0 / (t * t) {
        -(-g).ln() / t
    } else {
        t * g - (1.0 / (t * t)).ln() / t + 1.0 / t
    }
}

/// dψ_t/dg.
pub fn barrier_slope(g: f64, t: f64) -> f64 {
    if g <= -1.0 / (t * t) {
        -1.0 / (t * g)
    } else {
        t
    }
}

/// Records ψ_t(g) for a scalar `g`.
pub fn barrier(tape: &mut Tape, g: Var, t: f64) -> Result<Var, AutodiffError> {
    let gv = tape.scalar_value(g);
    if gv <= -1.0 / (t * t) {
        let neg = tape.neg(g)?;
        let l = tape.ln(neg)?;
        tape.scale(l, -1.0 / t)
    } else {
        let s = tape.scale(g, t)?;
        tape.shift(s, -(1.0 / (t * t)).ln() / t + 1.0 / t)
    }
}

/// `g_c = ρĈ ΣA_kL_k / C* − 1`.
pub fn cost_constraint(tape: &mut Tape, areas: Var, lengths: &[f64], density: Var, cost: Var, limit: f64) -> Result<Var, AutodiffError> {
    let l = tape.vector_constant(lengths);
    let volume = tape.dot(areas, l)?;
    let rho_c = tape.mul(density, cost)?;
    let total = tape.mul(volume, rho_c)?;
    let ratio = tape.scale(total, 1.0 / limit)?;
    tape.shift(ratio, -1.0)
}

/// `g_m = ρ ΣA_kL_k / M* − 1`.
pub fn mass_constraint(tape: &mut Tape, areas: Var, lengths: &[f64], density: Var, limit: f64) -> Result<Var, AutodiffError> {
    let l = tape.vector_constant(lengths);
    let volume = tape.dot(areas, l)?;
    let total = tape.mul(volume, density)?;
    let ratio = tape.scale(total, 1.0 / limit)?;
    tape.shift(ratio, -1.0)
}

/// Per-member buckling ratios `−4P_kL_k²/(π²ÊA_k²)`, positive under compression.
pub fn buckling_ratios(forces: &[f64], lengths: &[f64], areas: &[f64], e: f64) -> Vec<f64> {
    let pi2 = std::f64::consts::PI.powi(2);
    (0..forces.len())
        .map(|k| -4.0 * forces[k] * lengths[k].powi(2) / (pi2 * e * areas[k].powi(2)))
        .collect()
}

/// Per-member stress ratios `P_k/(ŶA_k)`, positive under tension.
pub fn yield_ratios(forces: &[f64], areas: &[f64], y: f64) -> Vec<f64> {
    forces.iter().zip(areas).map(|(p, a)| p / (y * a)).collect()
}

/// Buckling constraint with the maximum relaxed by a positive-part p-norm.
pub fn buckling_constraint(tape: &mut Tape, forces: Var, lengths: &[f64], areas: Var, e: Var, safety_factor: f64, p: u32) -> Result<Var, AutodiffError> {
    let pi2 = std::f64::consts::PI.powi(2);
    let a2 = tape.mul(areas, areas)?;
    let ratio = tape.div(forces, a2)?;
    let coef: Vec<f64> = lengths.iter().map(|l| -4.0 * l * l / pi2).collect();
    let coef = tape.vector_constant(&coef);
    let num = tape.mul(ratio, coef)?;
    let inv_e = tape.powf(e, -1.0)?;
    let aggregands = tape.scale_by(num, inv_e)?;
    let agg = tape.pnorm(aggregands, p)?;
    tape.shift(agg, -1.0 / safety_factor)
}

/// Tensile yield constraint with the maximum relaxed by a positive-part p-norm.
pub fn yield_constraint(tape: &mut Tape, forces: Var, areas: Var, y: Var, safety_factor: f64, p: u32) -> Result<Var, AutodiffError> {
    let stress = tape.div(forces, areas)?;
    let inv_y = tape.powf(y, -1.0)?;
    let aggregands = tape.scale_by(stress, inv_y)?;
    let agg = tape.pnorm(aggregands, p)?;
    tape.shift(agg, -1.0 / safety_factor)
}

fn positive_max(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(*v))
}

/// True (unrelaxed) constraint values of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValues {
    pub cost: Option<f64>,
    pub mass: Option<f64>,
    pub buckling: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
}

impl ConstraintValues {
    /// Largest constraint value; the design is feasible when this is ≤ tol.
    pub fn worst(&self) -> f64 {
        [self.cost, self.mass, Some(self.buckling), Some(self.yield_)]
            .into_iter()
            .flatten()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.worst() <= tol
    }

    /// Names of the constraints above `tol`.
    pub fn violated(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, v) in [("cost", self.cost), ("mass", self.mass), ("buckling", Some(self.buckling)), ("yield", Some(self.yield_))] {
            if v.is_some_and(|v| v > tol) {
                out.push(name);
            }
        }
        out
    }
}

/// Evaluates the true-max constraints from member forces.
pub fn constraint_values(truss: &Truss, spec: &ProblemSpec, areas: &[f64], props: &Properties, forces: &[f64]) -> ConstraintValues {
    let volume = truss.volume(areas);
    let inv_fs = 1.0 / spec.safety_factor;
    ConstraintValues {
        cost: spec.cost_limit.map(|c| props.density() * props.cost() * volume / c - 1.0),
        mass: spec.mass_limit.map(|m| props.density() * volume / m - 1.0),
        buckling: positive_max(&buckling_ratios(forces, truss.lengths(), areas, props.youngs_modulus())) - inv_fs,
        yield_: positive_max(&yield_ratios(forces, areas, props.yield_strength())) - inv_fs,
    }
}

/// Compliance and true-max constraints of a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEvaluation {
    pub compliance: f64,
    pub forces: Vec<f64>,
    pub constraints: ConstraintValues,
}

pub fn evaluate_design(truss: &Truss, spec: &ProblemSpec, areas: &[f64], props: &Properties) -> Result<DesignEvaluation, OptimizeError> {
    let a = truss.analyze(areas, props.youngs_modulus())?;
    let constraints = constraint_values(truss, spec, areas, props, &a.forces);
    Ok(DesignEvaluation {
        compliance: a.compliance,
        forces: a.forces,
        constraints,
    })
}

/// Feed-forward net `1 → h (relu) → h (relu) → n (sigmoid)` with a fixed input of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignNet {
    pub layers: [Dense; 3],
}

impl DesignNet {
    pub fn new(rng: &mut impl Rng, hidden: usize, outputs: usize) -> Self {
        let mut layer = |i: usize, o: usize| {
            let limit = (6.0 / (i + o) as f64).sqrt();
            Dense {
                weight: Matrix::from_fn(i, o, |_, _| rng.gen_range(-limit..limit)),
                bias: Matrix::zeros(1, o),
            }
        };
        Self {
            layers: [layer(1, hidden), layer(hidden, hidden), layer(hidden, outputs)],
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.layers[2].weight.ncols()
    }

    pub fn params(&self) -> Vec<Matrix> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn set_params(&mut self, params: &[Matrix]) {
        for (l, p) in self.layers.iter_mut().zip(params.chunks(2)) {
            l.weight = p[0].clone();
            l.bias = p[1].clone();
        }
    }

    /// Sigmoid outputs in (0, 1).
    pub fn outputs(&self) -> Vec<f64> {
        let mut h = Matrix::from_element(1, 1, 1.0);
        for (i, l) in self.layers.iter().enumerate() {
            h = &h * &l.weight + &l.bias;
            if i < 2 {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h.iter().map(|&v| crate::autodiff::sigmoid(v)).collect()
    }

    /// Records the net; returns the 1×n output and the weight handles.
    fn record(&self, tape: &mut Tape, trainable: bool) -> Result<(Var, Vec<Var>), AutodiffError> {
        let mut handles = Vec::with_capacity(6);
        let mut h = tape.constant(Matrix::from_element(1, 1, 1.0));
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
            } else {
                (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
            };
            handles.push(w);
            handles.push(b);
            h = affine(tape, h, w, b)?;
            h = if i < 2 { tape.relu(h)? } else { tape.sigmoid(h)? };
        }
        Ok((h, handles))
    }
}

/// The area network and the material network.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignNets {
    pub truss: DesignNet,
    pub material: DesignNet,
}

impl DesignNets {
    /// Glorot-initialized nets. The truss net's output bias is set so that
    /// its outputs scatter around `initial_fraction` of the area range.
    pub fn new(num_members: usize, hidden: usize, seed: u64, initial_fraction: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut truss = DesignNet::new(&mut rng, hidden, num_members);
        let material = DesignNet::new(&mut rng, hidden, LATENT);
        let logit = (initial_fraction / (1.0 - initial_fraction)).ln();
        truss.layers[2].bias.fill(logit);
        Self { truss, material }
    }

    pub fn for_problem(num_members: usize, spec: &ProblemSpec, seed: u64) -> Self {
        let fraction = (spec.a_init - spec.a_min) / (spec.a_max - spec.a_min);
        Self::new(num_members, spec.hidden, seed, fraction)
    }

    /// `A = A_min + O_T (A_max − A_min)`.
    pub fn areas(&self, a_min: f64, a_max: f64) -> Vec<f64> {
        self.truss.outputs().iter().map(|o| a_min + o * (a_max - a_min)).collect()
    }

    /// `z = −3 + 6 O_M`.
    pub fn latent(&self) -> [f64; LATENT] {
        let o = self.material.outputs();
        [-LATENT_BOUND + 2.0 * LATENT_BOUND * o[0], -LATENT_BOUND + 2.0 * LATENT_BOUND * o[1]]
    }
}

/// Records the area vector (N×1) from the truss network.
pub fn forward_areas(tape: &mut Tape, net: &DesignNet, a_min: f64, a_max: f64, trainable: bool) -> Result<(Var, Vec<Var>), AutodiffError> {
    let (o, handles) = net.record(tape, trainable)?;
    let col = tape.transpose(o)?;
    let scaled = tape.scale(col, a_max - a_min)?;
    Ok((tape.shift(scaled, a_min)?, handles))
}

/// Records the latent row (1×2) from the material network.
pub fn forward_latent(tape: &mut Tape, net: &DesignNet, trainable: bool) -> Result<(Var, Vec<Var>), AutodiffError> {
    let (o, handles) = net.record(tape, trainable)?;
    let scaled = tape.scale(o, 2.0 * LATENT_BOUND)?;
    Ok((tape.shift(scaled, -LATENT_BOUND)?, handles))
}

/// One row of the optimization history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub t: f64,
    pub loss: f64,
    pub compliance: f64,
    pub constraints: ConstraintValues,
    pub z: Option<[f64; LATENT]>,
    pub step_norm: f64,
}

/// State of the design after the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub history: Vec<HistoryEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub areas: Vec<f64>,
    pub z: Option<[f64; LATENT]>,
    /// Decoded or fixed material properties of the final design.
    pub properties: Properties,
    pub compliance: f64,
    pub constraints: ConstraintValues,
}

/// A problem bound to its truss, decoder and mode.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub truss: &'a Truss,
    pub model: Option<&'a VaeModel>,
    pub spec: &'a ProblemSpec,
    pub mode: DesignMode,
}

struct Recorded {
    loss: Var,
    handles: Vec<Var>,
    areas: Var,
    z: Option<Var>,
    props: [Var; 4],
    compliance: Var,
    forces: Var,
}

impl<'a> Problem<'a> {
    pub fn new(truss: &'a Truss, model: Option<&'a VaeModel>, spec: &'a ProblemSpec, mode: DesignMode) -> Result<Self, OptimizeError> {
        spec.validate()?;
        match &mode {
            DesignMode::Simultaneous | DesignMode::MaterialOnly { .. } if model.is_none() => {
                return Err(OptimizeError::Spec(format!("{} mode needs a trained decoder", mode.name())));
            }
            DesignMode::MaterialOnly { areas } => {
                if areas.len() != truss.num_members() {
                    return Err(TrussError::AreaCount {
                        expected: truss.num_members(),
                        found: areas.len(),
                    }
                    .into());
                }
                if areas.iter().any(|a| !(*a > 0.0)) {
                    return Err(OptimizeError::Spec("fixed areas must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(Self { truss, model, spec, mode })
    }

    fn trains_areas(&self) -> bool {
        !matches!(self.mode, DesignMode::MaterialOnly { .. })
    }

    fn trains_material(&self) -> bool {
        !matches!(self.mode, DesignMode::AreaOnly { .. })
    }

    /// Trainable parameters of `nets` for this mode, truss net first.
    pub fn params(&self, nets: &DesignNets) -> Vec<Matrix> {
        let mut p = Vec::new();
        if self.trains_areas() {
            p.extend(nets.truss.params());
        }
        if self.trains_material() {
            p.extend(nets.material.params());
        }
        p
    }

    pub fn set_params(&self, nets: &mut DesignNets, params: &[Matrix]) {
        let mut rest = params;
        if self.trains_areas() {
            nets.truss.set_params(&rest[..6]);
            rest = &rest[6..];
        }
        if self.trains_material() {
            nets.material.set_params(&rest[..6]);
        }
    }

    fn record(&self, tape: &mut Tape, nets: &DesignNets, t: f64) -> Result<Recorded, OptimizeError> {
        let spec = self.spec;
        let mut handles = Vec::new();
        let areas = match &self.mode {
            DesignMode::MaterialOnly { areas } => tape.vector_constant(areas),
            _ => {
                let (a, h) = forward_areas(tape, &nets.truss, spec.a_min, spec.a_max, true)?;
                handles.extend(h);
                a
            }
        };
        let (z, props) = match &self.mode {
            DesignMode::AreaOnly { material } => {
                let p = material.properties.0;
                (None, p.map(|v| tape.scalar_constant(v)))
            }
            _ => {
                let model = self.model.expect("checked in new");
                let (z, h) = forward_latent(tape, &nets.material, true)?;
                handles.extend(h);
                let d = model.record_decode(tape, z)?;
                (Some(z), [d.youngs_modulus, d.cost, d.density, d.yield_strength])
            }
        };
        let [e, c, rho, y] = props;

        let analysis = self.truss.record_analysis(tape, areas, e)?;
        let mut loss = analysis.compliance;
        let lengths = self.truss.lengths();
        let mut gs = Vec::with_capacity(4);
        if let Some(limit) = spec.cost_limit {
            gs.push(cost_constraint(tape, areas, lengths, rho, c, limit)?);
        }
        if let Some(limit) = spec.mass_limit {
            gs.push(mass_constraint(tape, areas, lengths, rho, limit)?);
        }
        gs.push(buckling_constraint(tape, analysis.forces, lengths, areas, e, spec.safety_factor, spec.p)?);
        gs.push(yield_constraint(tape, analysis.forces, areas, y, spec.safety_factor, spec.p)?);
        for g in gs {
            let psi = barrier(tape, g, t)?;
            loss = tape.add(loss, psi)?;
        }
        Ok(Recorded {
            loss,
            handles,
            areas,
            z,
            props,
            compliance: analysis.compliance,
            forces: analysis.forces,
        })
    }

    /// Loss value at barrier parameter `t`.
    pub fn loss(&self, nets: &DesignNets, t: f64) -> Result<f64, OptimizeError> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, nets, t)?;
        Ok(tape.scalar_value(r.loss))
    }

    /// Loss and its gradient with respect to [`Problem::params`].
    pub fn loss_and_gradient(&self, nets: &DesignNets, t: f64) -> Result<(f64, Vec<Matrix>), OptimizeError> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, nets, t)?;
        let grads = tape.backward(r.loss)?;
        Ok((tape.scalar_value(r.loss), r.handles.iter().map(|&h| grads.wrt(h)).collect()))
    }

    fn snapshot(&self, tape: &Tape, r: &Recorded) -> (Vec<f64>, Option<[f64; LATENT]>, Properties, f64, ConstraintValues) {
        let areas = tape.values(r.areas);
        let z = r.z.map(|z| {
            let v = tape.values(z);
            [v[0], v[1]]
        });
        let props = Properties(r.props.map(|p| tape.scalar_value(p)));
        let forces = tape.values(r.forces);
        let constraints = constraint_values(self.truss, self.spec, &areas, &props, &forces);
        (areas, z, props, tape.scalar_value(r.compliance), constraints)
    }

    /// Runs the barrier loop from networks initialized with `seed`.
    pub fn run(&self, seed: u64) -> Result<RunOutcome, OptimizeError> {
        let mut nets = DesignNets::for_problem(self.truss.num_members(), self.spec, seed);
        self.run_from(&mut nets)
    }

    /// Runs the barrier loop starting from `nets`, updating them in place.
    pub fn run_from(&self, nets: &mut DesignNets) -> Result<RunOutcome, OptimizeError> {
        let spec = self.spec;
        let mut params = self.params(nets);
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        let mut opt = Adagrad::new(spec.lr, &shapes);
        let mut history = Vec::with_capacity(spec.max_iters);
        let mut converged = false;

        for k in 0..spec.max_iters {
            let t = spec.t_at(k);
            let mut tape = Tape::new();
            let r = self.record(&mut tape, nets, t).map_err(|e| at_iteration(e, k))?;
            let loss = tape.scalar_value(r.loss);
            if !loss.is_finite() {
                return Err(OptimizeError::Divergence { iteration: k, value: loss });
            }
            let grads = tape.backward(r.loss)?;
            let g: Vec<Matrix> = r.handles.iter().map(|&h| grads.wrt(h)).collect();
            let step_norm = opt.step(&mut params, &g);
            let (_, z, _, compliance, constraints) = self.snapshot(&tape, &r);
            history.push(HistoryEntry {
                iteration: k,
                t,
                loss,
                compliance,
                constraints,
                z,
                step_norm,
            });
            self.set_params(nets, &params);
            if step_norm < spec.eps_star {
                converged = true;
                break;
            }
        }

        let mut tape = Tape::new();
        let t = spec.t_at(history.len());
        let r = self.record(&mut tape, nets, t).map_err(|e| at_iteration(e, history.len()))?;
        let (areas, z, properties, compliance, constraints) = self.snapshot(&tape, &r);
        Ok(RunOutcome {
            iterations: history.len(),
            history,
            converged,
            areas,
            z,
            properties,
            compliance,
            constraints,
        })
    }
}

fn at_iteration(e: OptimizeError, iteration: usize) -> OptimizeError {
    match e {
        OptimizeError::Truss(source) => OptimizeError::Analysis { iteration, source },
        other => other,
    }
}

/// A database material with its confidence γ relative to z*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMaterial {
    pub index: usize,
    pub name: String,
    pub class: String,
    pub distance: f64,
    pub confidence: f64,
}

/// `γ_m = 1 − d_m / max_k d_k`, sorted by descending γ with ties in input order.
pub fn confidence_scores(distances: &[f64]) -> Vec<(usize, f64)> {
    let max = distances.iter().copied().fold(0.0f64, f64::max);
    let mut out: Vec<(usize, f64)> = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| (i, if max > 0.0 { 1.0 - d / max } else { 1.0 }))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Ranks the model's embedded materials by confidence relative to `z_star`.
pub fn confidence_ranking(z_star: [f64; LATENT], model: &VaeModel) -> Vec<RankedMaterial> {
    let distances: Vec<f64> = model.embeddings().iter().map(|z| vae::latent_distance(z, &z_star)).collect();
    confidence_scores(&distances)
        .into_iter()
        .map(|(i, confidence)| RankedMaterial {
            index: i,
            name: model.material_names()[i].clone(),
            class: model.material_classes()[i].clone(),
            distance: distances[i],
            confidence,
        })
        .collect()
}

/// Compliance and feasibility of one database material at fixed areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialEvaluation {
    pub index: usize,
    pub name: String,
    pub class: String,
    pub compliance: f64,
    pub constraints: ConstraintValues,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub best: MaterialEvaluation,
    pub evaluations: Vec<MaterialEvaluation>,
}

/// Evaluates every material at the given areas and returns the feasible one
/// with the lowest compliance (first in database order on ties).
pub fn brute_force_material_search(truss: &Truss, db: &MaterialDatabase, spec: &ProblemSpec, areas: &[f64]) -> Result<BruteForceResult, OptimizeError> {
    spec.validate()?;
    let mut evaluations = Vec::with_capacity(db.len());
    for (index, m) in db.materials().iter().enumerate() {
        let ev = evaluate_design(truss, spec, areas, &m.properties)?;
        evaluations.push(MaterialEvaluation {
            index,
            name: m.name.clone(),
            class: m.class.clone(),
            compliance: ev.compliance,
            feasible: ev.constraints.feasible(spec.tol),
            constraints: ev.constraints,
        });
    }
    let best = evaluations
        .iter()
        .filter(|e| e.feasible)
        .fold(None::<&MaterialEvaluation>, |best, e| match best {
            Some(b) if b.compliance <= e.compliance => Some(b),
            _ => Some(e),
        })
        .cloned();
    match best {
        Some(best) => Ok(BruteForceResult { best, evaluations }),
        None => Err(OptimizeError::NoFeasibleMaterial(evaluations)),
    }
}

/// Everything produced by one optimize-and-snap pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub mode: String,
    pub seed: u64,
    pub spec: ProblemSpec,
    pub history: Vec<HistoryEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub z_star: Option<[f64; LATENT]>,
    pub decoded: Properties,
    pub areas_raw: Vec<f64>,
    pub j_raw: f64,
    pub constraints_raw: ConstraintValues,
    pub ranking: Vec<RankedMaterial>,
    pub snapped: String,
    pub snapped_class: String,
    pub snapped_properties: Properties,
    pub a_star: Vec<f64>,
    pub j_star: f64,
    pub constraints_star: ConstraintValues,
    pub reoptimization_iterations: usize,
    /// False when the final design violates a constraint by more than `tol`.
    pub feasible: bool,
    pub violated: Vec<String>,
}

impl OptimizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Confidence of the snapped material, when a ranking exists.
    pub fn snapped_confidence(&self) -> Option<f64> {
        self.ranking.first().map(|r| r.confidence)
    }
}

/// Optimizes, snaps the latent optimum to the nearest database material and
/// re-optimizes the areas with that material's true properties.
///
/// In area-only mode there is nothing to snap and the run itself is final.
/// In material-only mode the areas stay fixed, so the snapped material is
/// only re-evaluated.
pub fn optimize(truss: &Truss, model: Option<&VaeModel>, db: &MaterialDatabase, spec: &ProblemSpec, mode: DesignMode, seed: u64) -> Result<OptimizationReport, OptimizeError> {
    if let Some(m) = model {
        m.check_database(db)?;
    }
    let problem = Problem::new(truss, model, spec, mode.clone())?;
    let run = problem.run(seed)?;

    let (ranking, snapped_material) = match (&mode, run.z) {
        (DesignMode::AreaOnly { material }, _) => (Vec::new(), material.clone()),
        (_, Some(z)) => {
            let ranking = confidence_ranking(z, model.expect("checked in Problem::new"));
            let m = db.materials()[ranking[0].index].clone();
            (ranking, m)
        }
        (_, None) => unreachable!("latent modes always report z"),
    };

    let (a_star, j_star, constraints_star, reopt_iters) = match &mode {
        DesignMode::AreaOnly { .. } => (run.areas.clone(), run.compliance, run.constraints, 0),
        DesignMode::MaterialOnly { areas } => {
            let ev = evaluate_design(truss, spec, areas, &snapped_material.properties)?;
            (areas.clone(), ev.compliance, ev.constraints, 0)
        }
        DesignMode::Simultaneous => {
            let re = Problem::new(
                truss,
                model,
                spec,
                DesignMode::AreaOnly {
                    material: snapped_material.clone(),
                },
            )?;
            let out = re.run(seed)?;
            (out.areas, out.compliance, out.constraints, out.iterations)
        }
    };

    let violated: Vec<String> = constraints_star.violated(spec.tol).into_iter().map(String::from).collect();
    Ok(OptimizationReport {
        mode: mode.name().into(),
        seed,
        spec: spec.clone(),
        iterations: run.iterations,
        converged: run.converged,
        history: run.history,
        z_star: run.z,
        decoded: run.properties,
        areas_raw: run.areas,
        j_raw: run.compliance,
        constraints_raw: run.constraints,
        ranking,
        snapped: snapped_material.name.clone(),
        snapped_class: snapped_material.class.clone(),
        snapped_properties: snapped_material.properties,
        a_star,
        j_star,
        constraints_star,
        reoptimization_iterations: reopt_iters,
        feasible: violated.is_empty(),
        violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_value(-1.0, 1.0), 0.0);
        let both = 0.5 * 4f64.ln();
        assert!((barrier_value(-0.25, 2.0) - both).abs() < 1e-15);
        let linear = 2.0 * -0.25 - (0.25f64).ln() / 2.0 + 0.5;
        assert!((linear - both).abs() < 1e-15);
    }

    #[test]
    fn barrier_is_c1_at_junction() {
        for t in [1.0, 2.0, 5.0] {
            let g0 = -1.0 / (t * t);
            let h = 1e-13;
            let left = barrier_value(g0 - h, t);
            let right = barrier_value(g0 + h, t);
            assert!((left - right).abs() < 1e-10);
            assert!((barrier_slope(g0, t) - t).abs() < 1e-10);
            assert!((barrier_slope(g0 + h, t) - barrier_slope(g0 - h, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_barrier_matches_plain() {
        for (g, t) in [(-0.5, 3.0), (0.2, 3.0), (-1e-4, 10.0)] {
            let mut tape = Tape::new();
            let gv = tape.scalar(g);
            let psi = barrier(&mut tape, gv, t).unwrap();
            assert!((tape.scalar_value(psi) - barrier_value(g, t)).abs() < 1e-14);
            let d = tape.backward(psi).unwrap().wrt_scalar(gv);
            assert!((d - barrier_slope(g, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_and_mass_examples() {
        let mut tape = Tape::new();
        let a = tape.vector(&[1e-3]);
        let rho = tape.scalar(8000.0);
        let c = tape.scalar(2.0);
        let gc = cost_constraint(&mut tape, a, &[1.0], rho, c, 60.0).unwrap();
        assert!((tape.scalar_value(gc) - (16.0 / 60.0 - 1.0)).abs() < 1e-14);
        let gm = mass_constraint(&mut tape, a, &[1.0], rho, 40.0).unwrap();
        assert!((tape.scalar_value(gm) + 0.8).abs() < 1e-14);
    }

    #[test]
    fn buckling_and_yield_inactive_sides() {
        let mut tape = Tape::new();
        let tension = tape.vector(&[1e3, 2e3]);
        let a = tape.vector(&[1e-4, 1e-4]);
        let e = tape.scalar(2e11);
        let y = tape.scalar(2e8);
        let gb = buckling_constraint(&mut tape, tension, &[1.0, 1.0], a, e, 4.0, 6).unwrap();
        assert_eq!(tape.scalar_value(gb), -0.25);
        let compression = tape.vector(&[-1e3, -2e3]);
        let gy = yield_constraint(&mut tape, compression, a, y, 4.0, 6).unwrap();
        assert_eq!(tape.scalar_value(gy), -0.25);
    }

    #[test]
    fn confidence_hand_computation() {
        let r = confidence_scores(&[1.0, 2.0, 4.0]);
        assert_eq!(r, vec![(0, 0.75), (1, 0.5), (2, 0.0)]);
        let ties = confidence_scores(&[2.0, 1.0, 1.0]);
        assert_eq!(ties[0].0, 1);
        assert_eq!(ties[1].0, 2);
        assert_eq!(confidence_scores(&[0.0]), vec![(0, 1.0)]);
    }

    #[test]
    fn zero_final_layer_gives_midpoints() {
        let mut nets = DesignNets::new(4, 20, 3, 0.5);
        for net in [&mut nets.truss, &mut nets.material] {
            net.layers[2].weight.fill(0.0);
            net.layers[2].bias.fill(0.0);
        }
        for a in nets.areas(1e-4, 3e-4) {
            assert!((a - 2e-4).abs() < 1e-18);
        }
        assert_eq!(nets.latent(), [0.0, 0.0]);
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::default().validate().is_err());
        let ok = ProblemSpec::with_cost_limit(60.0);
        assert!(ok.validate().is_ok());
        assert!(ProblemSpec { p: 5, ..ok.clone() }.validate().is_err());
        assert!(ProblemSpec { a_min: 1.0, ..ok.clone() }.validate().is_err());
        assert!(ProblemSpec { mu: 1.0, ..ok.clone() }.validate().is_err());
        assert!(ProblemSpec { safety_factor: 0.5, ..ok }.validate().is_err());
    }

    #[test]
    fn constraint_values_worst_and_violations() {
        let c = ConstraintValues {
            cost: Some(-0.1),
            mass: None,
            buckling: 0.01,
            yield_: -0.2,
        };
        assert_eq!(c.worst(), 0.01);
        assert!(!c.feasible(1e-3));
        assert_eq!(c.violated(1e-3), vec!["buckling"]);
    }
}
