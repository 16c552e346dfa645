//! Planar pin-jointed trusses: stiffness assembly, displacement solve,
//! member forces and compliance.
//!
//! Fixed DOFs are removed before assembly, so every matrix and vector here
//! lives on the free DOFs only. Global DOF `2·n + 0` is the x displacement of
//! node `n`, `2·n + 1` its y displacement.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Cholesky, Matrix, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrussError {
    #[error("cannot access truss file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed truss file: {0}")]
    Parse(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("member {member} references unknown node {node}")]
    UnknownNode { member: usize, node: usize },
    #[error("support or load references unknown node {0}")]
    UnknownSupportNode(usize),
    #[error("member {member} has zero length")]
    ZeroLength { member: usize },
    #[error("members {first} and {second} connect the same pair of nodes")]
    DuplicateMember { first: usize, second: usize },
    #[error("truss has no members")]
    NoMembers,
    #[error("only {0} DOFs are fixed; a planar truss needs at least 3")]
    TooFewSupports(usize),
    #[error("structure is under-restrained (stiffness not positive definite at free DOF {pivot})")]
    UnderRestrained { pivot: usize },
    #[error("area vector has {found} entries for {expected} members")]
    AreaCount { expected: usize, found: usize },
    #[error(transparent)]
    Autodiff(AutodiffError),
}

impl From<AutodiffError> for TrussError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::Singular { pivot, .. } => TrussError::UnderRestrained { pivot },
            other => TrussError::Autodiff(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dof {
    X,
    Y,
}

impl Dof {
    fn offset(self) -> usize {
        match self {
            Dof::X => 0,
            Dof::Y => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub id: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub node: usize,
    pub dof: Dof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub node: usize,
    #[serde(default)]
    pub fx: f64,
    #[serde(default)]
    pub fy: f64,
}

/// On-disk truss description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrussSpec {
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    pub members: Vec<MemberSpec>,
    pub supports: Vec<SupportSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
}

/// A validated truss with its assembly operators precomputed.
#[derive(Debug, Clone)]
pub struct Truss {
    spec: TrussSpec,
    coords: Vec<[f64; 2]>,
    /// node indices per member
    connectivity: Vec<(usize, usize)>,
    lengths: Vec<f64>,
    free_dofs: Vec<usize>,
    /// global DOF → free index
    free_index: Vec<Option<usize>>,
    /// reduced load vector
    forces: Vec<f64>,
    /// N × n_free; row k maps free displacements to the elongation of member k
    elongation: Matrix,
    /// n_free² × N; column k is vec(b_k b_kᵀ)
    assembly: Matrix,
}

/// Plain-value results of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// displacements on the free DOFs
    pub displacements: Vec<f64>,
    /// tension positive
    pub forces: Vec<f64>,
    pub compliance: f64,
}

/// Analysis quantities recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RecordedAnalysis {
    pub stiffness: Var,
    pub loads: Var,
    pub displacements: Var,
    pub forces: Var,
    pub compliance: Var,
}

impl Truss {
    pub fn from_spec(spec: TrussSpec) -> Result<Self, TrussError> {
        let mut index_of = HashMap::new();
        for (k, n) in spec.nodes.iter().enumerate() {
            if index_of.insert(n.id, k).is_some() {
                return Err(TrussError::DuplicateNode(n.id));
            }
        }
        if spec.members.is_empty() {
            return Err(TrussError::NoMembers);
        }
        let coords: Vec<[f64; 2]> = spec.nodes.iter().map(|n| [n.x, n.y]).collect();
        let node = |id: usize, member: usize| {
            index_of
                .get(&id)
                .copied()
                .ok_or(TrussError::UnknownNode { member, node: id })
        };

        let mut connectivity = Vec::with_capacity(spec.members.len());
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for m in &spec.members {
            let (a, b) = (node(m.i, m.id)?, node(m.j, m.id)?);
            let key = (a.min(b), a.max(b));
            if let Some(&first) = seen.get(&key) {
                return Err(TrussError::DuplicateMember { first, second: m.id });
            }
            seen.insert(key, m.id);
            connectivity.push((a, b));
        }

        let mut lengths = Vec::with_capacity(connectivity.len());
        let mut cosines = Vec::with_capacity(connectivity.len());
        for (&(a, b), m) in connectivity.iter().zip(&spec.members) {
            let dx = coords[b][0] - coords[a][0];
            let dy = coords[b][1] - coords[a][1];
            let l = dx.hypot(dy);
            if !(l > 0.0) {
                return Err(TrussError::ZeroLength { member: m.id });
            }
            lengths.push(l);
            cosines.push((dx / l, dy / l));
        }

        let mut fixed = BTreeSet::new();
        for s in &spec.supports {
            let k = *index_of.get(&s.node).ok_or(TrussError::UnknownSupportNode(s.node))?;
            fixed.insert(2 * k + s.dof.offset());
        }
        if fixed.len() < 3 {
            return Err(TrussError::TooFewSupports(fixed.len()));
        }

        let ndof = 2 * coords.len();
        let free_dofs: Vec<usize> = (0..ndof).filter(|d| !fixed.contains(d)).collect();
        let mut free_index = vec![None; ndof];
        for (i, &d) in free_dofs.iter().enumerate() {
            free_index[d] = Some(i);
        }

        let mut global_loads = vec![0.0; ndof];
        for l in &spec.loads {
            let k = *index_of.get(&l.node).ok_or(TrussError::UnknownSupportNode(l.node))?;
            global_loads[2 * k] += l.fx;
            global_loads[2 * k + 1] += l.fy;
        }
        let forces = free_dofs.iter().map(|&d| global_loads[d]).collect();

        let nf = free_dofs.len();
        let nm = connectivity.len();
        let mut elongation = Matrix::zeros(nm, nf);
        for (k, (&(a, b), &(c, s))) in connectivity.iter().zip(&cosines).enumerate() {
            for (dof, coef) in [(2 * a, -c), (2 * a + 1, -s), (2 * b, c), (2 * b + 1, s)] {
                if let Some(i) = free_index[dof] {
                    elongation[(k, i)] += coef;
                }
            }
        }
        let mut assembly = Matrix::zeros(nf * nf, nm);
        for k in 0..nm {
            let row = elongation.row(k);
            for c in 0..nf {
                for r in 0..nf {
                    assembly[(c * nf + r, k)] = row[r] * row[c];
                }
            }
        }

        let truss = Self {
            spec,
            coords,
            connectivity,
            lengths,
            free_dofs,
            free_index,
            forces,
            elongation,
            assembly,
        };
        if nf == 0 {
            return Ok(truss);
        }
        let unit = vec![1.0; nm];
        Cholesky::factor(&truss.stiffness_matrix(&unit, 1.0))?;
        Ok(truss)
    }

    pub fn from_toml(text: &str) -> Result<Self, TrussError> {
        let spec: TrussSpec = toml::from_str(text).map_err(|e| TrussError::Parse(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrussError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.spec).expect("truss spec serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrussError> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// A bundled example by name: `midcant6` or `tower47`.
    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "midcant6" => Some(Self::midcant6()),
            "tower47" => Some(Self::tower47()),
            _ => None,
        }
    }

    /// Two 1 m bays, 1 m deep, left edge pinned, 1e4 N downward at the
/// mid-height tip.
    pub fn midcant6() -> Self {
        let nodes = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (2.0, 0.5)];
        let members = [(0, 2), (1, 3), (0, 3), (2, 3), (2, 4), (3, 4)];
        let spec = TrussSpec {
            name: "midcant6".into(),
            nodes: nodes
                .iter()
                .enumerate()
                .map(|(id, &(x, y))| NodeSpec { id, x, y })
                .collect(),
            members: members
                .iter()
                .enumerate()
                .map(|(id, &(i, j))| MemberSpec { id, i, j })
                .collect(),
            supports: [(0, Dof::X), (0, Dof::Y), (1, Dof::X), (1, Dof::Y)]
                .iter()
                .map(|&(node, dof)| SupportSpec { node, dof })
                .collect(),
            loads: vec![LoadSpec {
                node: 4,
                fx: 0.0,
                fy: -1e4,
            }],
        };
        Self::from_spec(spec).expect("bundled truss is valid")
    }

    /// Tapered X-braced mast: 9 panels 1 m high narrowing from 2 m to 1 m,
    /// with a 1 m apex carrying a lateral and a downward load.
    pub fn tower47() -> Self {
        Self::from_spec(tower_spec(9, 2.0, 1.0, 1.0, 1.0, [2e3, -1e4])).expect("bundled truss is valid")
    }

    pub fn spec(&self) -> &TrussSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_members(&self) -> usize {
        self.connectivity.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_free_dofs(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Node indices (not ids) per member.
    pub fn connectivity(&self) -> &[(usize, usize)] {
        &self.connectivity
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Load vector on the free DOFs.
    pub fn forces(&self) -> &[f64] {
        &self.forces
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// `Σ A_k L_k`.
    pub fn volume(&self, areas: &[f64]) -> f64 {
        areas.iter().zip(&self.lengths).map(|(a, l)| a * l).sum()
    }

    /// Expands free-DOF displacements to all nodes; fixed DOFs are zero.
    pub fn full_displacements(&self, free: &[f64]) -> Vec<f64> {
        self.free_index.iter().map(|i| i.map_or(0.0, |i| free[i])).collect()
    }

    fn check_areas(&self, n: usize) -> Result<(), TrussError> {
        if n != self.num_members() {
            return Err(TrussError::AreaCount {
                expected: self.num_members(),
                found: n,
            });
        }
        Ok(())
    }

    /// Reduced stiffness as a plain matrix.
    pub fn stiffness_matrix(&self, areas: &[f64], e: f64) -> Matrix {
        let nf = self.num_free_dofs();
        let stiff: Vec<f64> = areas.iter().zip(&self.lengths).map(|(a, l)| e * a / l).collect();
        let v = &self.assembly * Matrix::from_column_slice(stiff.len(), 1, &stiff);
        Matrix::from_column_slice(nf, nf, v.as_slice())
    }

    /// Axial stiffnesses `E·A_k/L_k` as an N×1 variable.
    fn record_member_stiffness(&self, tape: &mut Tape, areas: Var, e: Var) -> Result<Var, TrussError> {
        let inv_l: Vec<f64> = self.lengths.iter().map(|l| 1.0 / l).collect();
        let inv_l = tape.vector_constant(&inv_l);
        let a_over_l = tape.mul(areas, inv_l)?;
        Ok(tape.scale_by(a_over_l, e)?)
    }

    /// Records the reduced global stiffness `K(A, E)`.
    pub fn assemble_stiffness(&self, tape: &mut Tape, areas: Var, e: Var) -> Result<Var, TrussError> {
        self.check_areas(areas.len())?;
        let stiff = self.record_member_stiffness(tape, areas, e)?;
        let g = tape.constant(self.assembly.clone());
        let flat = tape.matmul(g, stiff)?;
        let nf = self.num_free_dofs();
        Ok(tape.reshape(flat, nf, nf)?)
    }

    pub fn record_loads(&self, tape: &mut Tape) -> Var {
        tape.vector_constant(&self.forces)
    }

    /// `u = K⁻¹ f`.
    pub fn solve_displacements(&self, tape: &mut Tape, k: Var, f: Var) -> Result<Var, TrussError> {
        Ok(tape.linear_solve(k, f)?)
    }

    /// Internal forces `P_k = (E A_k / L_k)·elongation_k`, tension positive.
    pub fn member_forces(&self, tape: &mut Tape, u: Var, areas: Var, e: Var) -> Result<Var, TrussError> {
        self.check_areas(areas.len())?;
        let stiff = self.record_member_stiffness(tape, areas, e)?;
        let b = tape.constant(self.elongation.clone());
        let elong = tape.matmul(b, u)?;
        Ok(tape.mul(stiff, elong)?)
    }

    /// `J = fᵀu`.
    pub fn compliance(&self, tape: &mut Tape, f: Var, u: Var) -> Result<Var, TrussError> {
        Ok(tape.dot(f, u)?)
    }

    /// Assembles, solves and evaluates forces and compliance on `tape`.
    pub fn record_analysis(&self, tape: &mut Tape, areas: Var, e: Var) -> Result<RecordedAnalysis, TrussError> {
        let stiffness = self.assemble_stiffness(tape, areas, e)?;
        let loads = self.record_loads(tape);
        let displacements = self.solve_displacements(tape, stiffness, loads)?;
        let forces = self.member_forces(tape, displacements, areas, e)?;
        let compliance = self.compliance(tape, loads, displacements)?;
        Ok(RecordedAnalysis {
            stiffness,
            loads,
            displacements,
            forces,
            compliance,
        })
    }

    /// Plain evaluation without a tape.
    pub fn analyze(&self, areas: &[f64], e: f64) -> Result<Analysis, TrussError> {
        self.check_areas(areas.len())?;
        let k = self.stiffness_matrix(areas, e);
        let f = Matrix::from_column_slice(self.forces.len(), 1, &self.forces);
        let u = Cholesky::factor(&k)?.solve(&f);
        let elong = &self.elongation * &u;
        let forces = (0..self.num_members())
            .map(|m| e * areas[m] / self.lengths[m] * elong[m])
            .collect();
        Ok(Analysis {
            compliance: f.dot(&u),
            displacements: u.as_slice().to_vec(),
            forces,
        })
    }
}

/// Parameterized tapered mast. Each panel adds two legs, a top chord and two
/// crossing diagonals; the apex node joins the top chord with two members.
pub fn tower_spec(panels: usize, base_width: f64, top_width: f64, panel_height: f64, apex_height: f64, apex_load: [f64; 2]) -> TrussSpec {
    let mut nodes = Vec::new();
    for level in 0..=panels {
        let w = base_width + (top_width - base_width) * level as f64 / panels as f64;
        let y = level as f64 * panel_height;
        nodes.push((-w / 2.0, y));
        nodes.push((w / 2.0, y));
    }
    let apex = nodes.len();
    nodes.push((0.0, panels as f64 * panel_height + apex_height));

    let mut members = Vec::new();
    for p in 0..panels {
        let (bl, br, tl, tr) = (2 * p, 2 * p + 1, 2 * p + 2, 2 * p + 3);
        members.extend([(bl, tl), (br, tr), (tl, tr), (bl, tr), (br, tl)]);
    }
    members.push((2 * panels, apex));
    members.push((2 * panels + 1, apex));

    TrussSpec {
        name: format!("tower{}", members.len()),
        nodes: nodes
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| NodeSpec { id, x, y })
            .collect(),
        members: members
            .iter()
            .enumerate()
            .map(|(id, &(i, j))| MemberSpec { id, i, j })
            .collect(),
        supports: [(0, Dof::X), (0, Dof::Y), (1, Dof::X), (1, Dof::Y)]
            .iter()
            .map(|&(node, dof)| SupportSpec { node, dof })
            .collect(),
        loads: vec![LoadSpec {
            node: apex,
            fx: apex_load[0],
            fy: apex_load[1],
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nodes: &[(f64, f64)], members: &[(usize, usize)], supports: &[(usize, Dof)], loads: &[(usize, f64, f64)]) -> TrussSpec {
        TrussSpec {
            name: "t".into(),
            nodes: nodes.iter().enumerate().map(|(id, &(x, y))| NodeSpec { id, x, y }).collect(),
            members: members.iter().enumerate().map(|(id, &(i, j))| MemberSpec { id, i, j }).collect(),
            supports: supports.iter().map(|&(node, dof)| SupportSpec { node, dof }).collect(),
            loads: loads.iter().map(|&(node, fx, fy)| LoadSpec { node, fx, fy }).collect(),
        }
    }

    fn single_bar() -> Truss {
        Truss::from_spec(spec(
            &[(0.0, 0.0), (1.0, 0.0)],
            &[(0, 1)],
            &[(0, Dof::X), (0, Dof::Y), (1, Dof::Y)],
            &[(1, 1e4, 0.0)],
        ))
        .unwrap()
    }

    #[test]
    fn single_bar_reduces_to_one_dof() {
        let t = single_bar();
        assert_eq!(t.num_free_dofs(), 1);
        let k = t.stiffness_matrix(&[1e-4], 2e11);
        assert_eq!(k.shape(), (1, 1));
        assert!((k[0] - 2e7).abs() / 2e7 < 1e-14);
    }

    #[test]
    fn single_bar_tape_matches_plain() {
        let t = single_bar();
        let mut tape = Tape::new();
        let a = tape.vector(&[1e-4]);
        let e = tape.scalar(2e11);
        let r = t.record_analysis(&mut tape, a, e).unwrap();
        let plain = t.analyze(&[1e-4], 2e11).unwrap();
        assert!((tape.values(r.displacements)[0] - 5e-4).abs() / 5e-4 < 1e-12);
        assert!((tape.values(r.forces)[0] - 1e4).abs() / 1e4 < 1e-12);
        assert!((tape.scalar_value(r.compliance) - 5.0).abs() < 1e-12);
        assert_eq!(plain.displacements, tape.values(r.displacements));
    }

    #[test]
    fn zero_load_gives_zero_response() {
        let t = Truss::from_spec(spec(
            &[(0.0, 0.0), (1.0, 0.0)],
            &[(0, 1)],
            &[(0, Dof::X), (0, Dof::Y), (1, Dof::Y)],
            &[],
        ))
        .unwrap();
        let r = t.analyze(&[1e-3], 1e9).unwrap();
        assert_eq!(r.displacements, vec![0.0]);
        assert_eq!(r.compliance, 0.0);
    }

    #[test]
    fn validation_errors() {
        let supports = [(0, Dof::X), (0, Dof::Y), (1, Dof::Y)];
        let zero = spec(&[(0.0, 0.0), (0.0, 0.0)], &[(0, 1)], &supports, &[]);
        assert!(matches!(Truss::from_spec(zero), Err(TrussError::ZeroLength { member: 0 })));
        let dup = spec(&[(0.0, 0.0), (1.0, 0.0)], &[(0, 1), (1, 0)], &supports, &[]);
        assert!(matches!(Truss::from_spec(dup), Err(TrussError::DuplicateMember { first: 0, second: 1 })));
        let few = spec(&[(0.0, 0.0), (1.0, 0.0)], &[(0, 1)], &supports[..2], &[]);
        assert!(matches!(Truss::from_spec(few), Err(TrussError::TooFewSupports(2))));
        let unknown = spec(&[(0.0, 0.0), (1.0, 0.0)], &[(0, 5)], &supports, &[]);
        assert!(matches!(Truss::from_spec(unknown), Err(TrussError::UnknownNode { node: 5, .. })));
        // mechanism: a free node hanging from one bar
        let mech = spec(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)], &[(0, 1), (1, 2)], &supports, &[]);
        assert!(matches!(Truss::from_spec(mech), Err(TrussError::UnderRestrained { .. })));
    }

    #[test]
    fn toml_round_trip() {
        let t = Truss::midcant6();
        let back = Truss::from_toml(&t.to_toml()).unwrap();
        assert_eq!(back.spec(), t.spec());
        assert!(matches!(Truss::from_toml("nodes = 3"), Err(TrussError::Parse(_))));
    }

    #[test]
    fn bundled_examples() {
        let m = Truss::midcant6();
        assert_eq!(m.num_members(), 6);
        assert_eq!(m.num_free_dofs(), 6);
        let t = Truss::tower47();
        assert_eq!(t.num_members(), 47);
        assert!(Truss::bundled("bridge").is_none());
    }

    #[test]
    fn midcant6_statics() {
        // determinate: forces do not depend on areas or modulus
        let t = Truss::midcant6();
        let r = t.analyze(&[2e-3; 6], 2e11).unwrap();
        let r2 = 2f64.sqrt();
        let r5 = 5f64.sqrt();
        let expected = [-1e4, 2e4, -1e4 * r2, 5e3, -5e3 * r5, 5e3 * r5];
        for (p, e) in r.forces.iter().zip(expected) {
            assert!((p - e).abs() < 1e-6, "{:?}", r.forces);
        }
    }

    #[test]
    fn areas_length_checked() {
        let t = Truss::midcant6();
        assert!(matches!(t.analyze(&[1e-3; 5], 1e9), Err(TrussError::AreaCount { expected: 6, found: 5 })));
    }
}
