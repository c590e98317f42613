//! Symmetric interior penalty coupling of coarse elements.
//!
//! The fine operator acts on the broken space in which every coarse element
//! owns a continuous Q1 function and traces on coarse edges are duplicated.
//! With `[v] = v^- - v^+` across an edge whose normal points from the minus
//! to the plus side (zero exterior trace on the domain boundary),
//!
//! ```text
//! a(u, v) = sum_K int_K kappa grad u . grad v
//!         - sum_E int_E kt_E ({d_n u} [v] + {d_n v} [u])
//!         + sum_E delta / h_E int_E kt_E [u] [v]
//! ```
//!
//! where `kt_E` is the harmonic mean of the two adjacent fine-cell
//! coefficients and `{.}` averages the two sides of an interior edge and
//! takes the one-sided value on the boundary.

use crate::cg::{solve_dense_spd, CoarseOperator};
use crate::fem::{CsrMatrix, Q1_STIFFNESS};
use crate::grid::{CoarseGrid, EdgeOrientation, FineGrid};
use crate::spaces::{BasisMatrix, BrokenLayout, Formulation};
use crate::{Error, Result};

/// Default penalty parameter.
pub const DEFAULT_PENALTY: f64 = 4.0;

/// Broken fine operator split into its three parts.
#[derive(Debug, Clone)]
pub struct SipgOperator {
    pub layout: BrokenLayout,
    pub volume: CsrMatrix,
    pub consistency: CsrMatrix,
    pub penalty: CsrMatrix,
    pub total: CsrMatrix,
    pub delta: f64,
    /// Edge length scale `h_E`; the coarse mesh size on a uniform grid.
    pub h_edge: f64,
    /// Harmonic-mean coefficient per fine segment, per coarse edge.
    pub edge_coefficients: Vec<Vec<f64>>,
}

impl SipgOperator {
    pub fn dim(&self) -> usize {
        self.total.dim()
    }
}

type Functional = Vec<(usize, f64)>;

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Broken dofs of a fine cell's four nodes (counterclockwise).
fn cell_dofs(fine: &FineGrid, coarse: &CoarseGrid, layout: &BrokenLayout, cell: usize) -> [usize; 4] {
    let (ci, cj) = fine.cell_ij(cell);
    let k = coarse.element_of_cell(ci, cj);
    let patch = coarse.element_patch(k);
    patch.local_cell_nodes(fine, cell).map(|l| layout.dof(k, l))
}

/// Broken dof of fine node `node` owned by element `k`.
fn node_dof(fine: &FineGrid, coarse: &CoarseGrid, layout: &BrokenLayout, k: usize, node: usize) -> usize {
    let (i, j) = fine.node_ij(node);
    layout.dof(k, coarse.element_patch(k).local_node(i, j).expect("node in element"))
}

fn outer(t: &mut Vec<(usize, usize, f64)>, a: &Functional, b: &Functional, w: f64) {
    for &(i, x) in a {
        for &(j, y) in b {
            t.push((i, j, w * x * y));
        }
    }
}

/// Assemble the SIPG operator for a per-fine-cell coefficient.
pub fn assemble_sipg(fine: &FineGrid, coarse: &CoarseGrid, coef: &[f64], delta: f64) -> Result<SipgOperator> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidConfig(format!("penalty delta_E = {delta} must be positive")));
    }
    if coef.len() != fine.num_cells() {
        return Err(Error::Dimension(format!(
            "coefficient has {} values for {} cells",
            coef.len(),
            fine.num_cells()
        )));
    }
    if let Some(c) = coef.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::Domain(format!("coefficient {} in cell {c} is not positive", coef[c])));
    }
    let layout = BrokenLayout::new(coarse);
    let n = layout.num_dofs();
    let h = fine.h();
    let h_edge = coarse.H();

    let mut tv = Vec::with_capacity(16 * fine.num_cells());
    for k in 0..coarse.num_elements() {
        let patch = coarse.element_patch(k);
        for cell in patch.cells(fine) {
            let dofs = patch.local_cell_nodes(fine, cell).map(|l| layout.dof(k, l));
            for a in 0..4 {
                for b in 0..4 {
                    tv.push((dofs[a], dofs[b], coef[cell] * Q1_STIFFNESS[a][b]));
                }
            }
        }
    }

    let mut tc = Vec::new();
    let mut tp = Vec::new();
    let mut edge_coefficients = Vec::with_capacity(coarse.edges().len());
    let g = 1.0 / (2.0 * h);
    for edge in coarse.edges() {
        let pattern: [f64; 4] = match edge.orientation {
            EdgeOrientation::Vertical => [-g, g, g, -g],
            EdgeOrientation::Horizontal => [-g, -g, g, g],
        };
        let sides = [edge.minus, edge.plus];
        let l_e = if edge.is_boundary() { 1.0 } else { 2.0 };
        let mut kts = Vec::with_capacity(edge.segments.len());
        for (seg, cells) in edge.segments.iter().zip(&edge.segment_cells) {
            let kt = match (cells[0], cells[1]) {
                (Some(a), Some(b)) => harmonic_mean(coef[a], coef[b]),
                (Some(a), None) | (None, Some(a)) => coef[a],
                (None, None) => unreachable!("edge segment without cells"),
            };
            kts.push(kt);
            // jumps at the two segment nodes and the averaged normal flux
            let mut ja: Functional = Vec::with_capacity(2);
            let mut jb: Functional = Vec::with_capacity(2);
            let mut flux: Functional = Vec::with_capacity(8);
            for (s, (elem, cell)) in sides.iter().zip(cells).enumerate() {
                let (Some(k), Some(cell)) = (elem, cell) else { continue };
                let sign = if s == 0 { 1.0 } else { -1.0 };
                ja.push((node_dof(fine, coarse, &layout, *k, seg[0]), sign));
                jb.push((node_dof(fine, coarse, &layout, *k, seg[1]), sign));
                let dofs = cell_dofs(fine, coarse, &layout, *cell);
                for (d, p) in dofs.iter().zip(&pattern) {
                    flux.push((*d, p / l_e));
                }
            }
            // int_seg [v] = h/2 ([v]_a + [v]_b)
            let jsum: Functional = ja.iter().chain(&jb).copied().collect();
            outer(&mut tc, &flux, &jsum, -kt * h / 2.0);
            outer(&mut tc, &jsum, &flux, -kt * h / 2.0);
            // exact trace mass of the linear jump
            let w = delta / h_edge * kt * h / 6.0;
            outer(&mut tp, &ja, &ja, 2.0 * w);
            outer(&mut tp, &ja, &jb, w);
            outer(&mut tp, &jb, &ja, w);
            outer(&mut tp, &jb, &jb, 2.0 * w);
        }
        edge_coefficients.push(kts);
    }
    let volume = CsrMatrix::from_triplets(n, tv);
    let consistency = CsrMatrix::from_triplets(n, tc);
    let penalty = CsrMatrix::from_triplets(n, tp);
    let total = CsrMatrix::sum(&[&volume, &consistency, &penalty]);
    Ok(SipgOperator {
        layout,
        volume,
        consistency,
        penalty,
        total,
        delta,
        h_edge,
        edge_coefficients,
    })
}

/// Load `int_K f v_K` in the broken space.
pub fn assemble_broken_load(fine: &FineGrid, coarse: &CoarseGrid, f: f64) -> Vec<f64> {
    let layout = BrokenLayout::new(coarse);
    let mut out = vec![0.0; layout.num_dofs()];
    let w = f * fine.h() * fine.h() / 4.0;
    for k in 0..coarse.num_elements() {
        let patch = coarse.element_patch(k);
        for cell in patch.cells(fine) {
            for l in patch.local_cell_nodes(fine, cell) {
                out[layout.dof(k, l)] += w;
            }
        }
    }
    out
}

/// DG coarse operator `R_0 A_DG R_0^T`, `R_0 F`.
pub fn assemble_coarse_dg(r0: BasisMatrix, sipg: &SipgOperator, load: &[f64]) -> Result<CoarseOperator> {
    CoarseOperator::assemble(r0, &sipg.total, load, Formulation::Dg)
}

/// Solve the DG coarse system; returns `U_0` and its broken prolongation.
pub fn solve_coarse_dg(op: &CoarseOperator) -> Result<(Vec<f64>, Vec<f64>)> {
    let u0 = solve_dense_spd(op)?;
    let fine = op.basis.prolong(&u0);
    Ok((u0, fine))
}
