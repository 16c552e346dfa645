//! The three-way scenario comparison and subset refinement experiments.

use serde::{Deserialize, Serialize};

use crate::materials::{MaterialDatabase, MaterialError};
use crate::optimizer::{brute_force_material_search, optimize, DesignMode, MaterialEvaluation, OptimizationReport, OptimizeError, ProblemSpec};
use crate::truss::Truss;
use crate::vae::{self, ReconstructionReport, TrainConfig, VaeError, VaeModel};

/// Relative slack allowed in the scenario ordering.
pub const ORDERING_SLACK: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Materials(#[from] MaterialError),
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub material: String,
    pub class: String,
    /// Compliance with the real properties of `material`.
    pub compliance: f64,
    pub feasible: bool,
    pub areas: Vec<f64>,
    pub report: OptimizationReport,
}

/// One checked inequality `lhs ≤ (1 + slack)·rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    /// Material-only, area-only, simultaneous.
    pub rows: Vec<ScenarioRow>,
    pub ordering: Vec<OrderingCheck>,
    /// Brute-force choice at the material-only areas, `None` when no
    /// database material is feasible there.
    pub brute_force: Option<MaterialEvaluation>,
    pub brute_force_evaluations: Vec<MaterialEvaluation>,
}

impl ScenarioComparison {
    pub fn ordering_holds(&self) -> bool {
        self.ordering.iter().all(|c| c.holds)
    }

    /// Whether the material-only pick matches the brute-force sweep.
    pub fn brute_force_agrees(&self) -> bool {
        self.brute_force.as_ref().is_some_and(|b| b.name == self.rows[0].material)
    }

    pub fn failed_relations(&self) -> Vec<&str> {
        self.ordering.iter().filter(|c| !c.holds).map(|c| c.relation.as_str()).collect()
    }
}

fn row(scenario: &str, report: OptimizationReport) -> ScenarioRow {
    ScenarioRow {
        scenario: scenario.into(),
        material: report.snapped.clone(),
        class: report.snapped_class.clone(),
        compliance: report.j_star,
        feasible: report.feasible,
        areas: report.a_star.clone(),
        report,
    }
}

fn check(relation: &str, lhs: f64, rhs: f64) -> OrderingCheck {
    OrderingCheck {
        relation: relation.into(),
        lhs,
        rhs,
        holds: lhs <= (1.0 + ORDERING_SLACK) * rhs,
    }
}

/// Runs material-only optimization at areas fixed to `spec.a_init`, area-only
/// sizing with the material that picked, and the simultaneous optimization.
pub fn compare_scenarios(truss: &Truss, model: &VaeModel, db: &MaterialDatabase, spec: &ProblemSpec, seed: u64) -> Result<ScenarioComparison, ScenarioError> {
    let fixed = vec![spec.a_init; truss.num_members()];
    let s1 = optimize(truss, Some(model), db, spec, DesignMode::MaterialOnly { areas: fixed.clone() }, seed)?;
    let (_, material) = db.find(&s1.snapped).expect("snapped material comes from db");
    let s2 = optimize(truss, Some(model), db, spec, DesignMode::AreaOnly { material: material.clone() }, seed)?;
    let s3 = optimize(truss, Some(model), db, spec, DesignMode::Simultaneous, seed)?;

    let (brute_force, evaluations) = match brute_force_material_search(truss, db, spec, &fixed) {
        Ok(r) => (Some(r.best), r.evaluations),
        Err(OptimizeError::NoFeasibleMaterial(evals)) => (None, evals),
        Err(e) => return Err(e.into()),
    };
    let rows = vec![row("material-only", s1), row("area-only", s2), row("simultaneous", s3)];
    let ordering = vec![
        check("J(simultaneous) <= J(area-only)", rows[2].compliance, rows[1].compliance),
        check("J(area-only) <= J(material-only)", rows[1].compliance, rows[0].compliance),
    ];
    Ok(ScenarioComparison {
        rows,
        ordering,
        brute_force,
        brute_force_evaluations: evaluations,
    })
}

/// Full-database versus class-subset results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetComparison {
    pub classes: Vec<String>,
    pub full: OptimizationReport,
    pub subset: OptimizationReport,
    pub full_reconstruction: ReconstructionReport,
    pub subset_reconstruction: ReconstructionReport,
}

impl SubsetComparison {
    /// Per attribute, whether the subset model reconstructs at least as well.
    pub fn error_not_worse(&self) -> [bool; 4] {
        std::array::from_fn(|a| self.subset_reconstruction.max[a] <= self.full_reconstruction.max[a])
    }

    /// `J*` of the subset run relative to the full run.
    pub fn compliance_ratio(&self) -> f64 {
        self.subset.j_star / self.full.j_star
    }
}

/// Trains a model on the classes in `classes`, then runs the simultaneous
/// optimization with both models.
#[allow(clippy::too_many_arguments)]
pub fn refine_subset<S: AsRef<str>>(
    truss: &Truss,
    full_model: &VaeModel,
    db: &MaterialDatabase,
    classes: &[S],
    train: &TrainConfig,
    spec: &ProblemSpec,
    seed: u64,
) -> Result<(SubsetComparison, VaeModel), ScenarioError> {
    let sub_db = db.filter_by_class(classes)?;
    let sub_model = vae::train(&sub_db, train)?.model;
    let full = optimize(truss, Some(full_model), db, spec, DesignMode::Simultaneous, seed)?;
    let subset = optimize(truss, Some(&sub_model), &sub_db, spec, DesignMode::Simultaneous, seed)?;
    let comparison = SubsetComparison {
        classes: classes.iter().map(|c| c.as_ref().to_string()).collect(),
        full,
        subset,
        full_reconstruction: vae::reconstruction_report(full_model, db),
        subset_reconstruction: vae::reconstruction_report(&sub_model, &sub_db),
    };
    Ok((comparison, sub_model))
}
