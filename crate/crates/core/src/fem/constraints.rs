//! Dirichlet, periodic and mean-zero constraints by static condensation.
//!
//! Periodic slaves are merged into their masters, Dirichlet dofs are
//! eliminated symmetrically with a right-hand-side correction, and a
//! mean-zero constraint pins the lowest admissible node per component
//! during the solve, then shifts the solution to zero weighted mean.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::sparse::{CsrMatrix, CsrPattern, SparseOperator};
use crate::mesh::StructuredGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanZero {
    /// `∫ φ_a` for every node.
    pub node_weights: Vec<f64>,
    /// Components per node; the mean is removed from each separately.
    pub components: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    dirichlet: BTreeMap<usize, f64>,
    /// `slave -> master`
    periodic: BTreeMap<usize, usize>,
    mean_zero: Option<MeanZero>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.dirichlet.is_empty() && self.periodic.is_empty() && self.mean_zero.is_none()
    }

    /// Prescribes `value` on `dof`. Re-adding the same value is allowed.
    pub fn add_dirichlet(&mut self, dof: usize, value: f64) -> Result<()> {
        if let Some(&old) = self.dirichlet.get(&dof) {
            if old != value {
                return Err(Error::InconsistentConstraint {
                    dof,
                    reason: format!("conflicting Dirichlet values {old} and {value}"),
                });
            }
        }
        self.dirichlet.insert(dof, value);
        Ok(())
    }

    pub fn add_periodic(&mut self, slave: usize, master: usize) -> Result<()> {
        if slave == master {
            return Err(Error::InconsistentConstraint { dof: slave, reason: "dof is its own periodic master".into() });
        }
        if let Some(&old) = self.periodic.get(&slave) {
            if old != master {
                return Err(Error::InconsistentConstraint { dof: slave, reason: format!("two periodic masters {old} and {master}") });
            }
        }
        self.periodic.insert(slave, master);
        Ok(())
    }

    /// Periodic constraints for every `(master, slave)` node pair of a cell grid.
    pub fn add_periodic_pairs(&mut self, grid: &StructuredGrid, components: usize) -> Result<()> {
        for &(m, s) in grid.periodic_pairs() {
            for c in 0..components {
                self.add_periodic(s * components + c, m * components + c)?;
            }
        }
        Ok(())
    }

    pub fn set_mean_zero(&mut self, mean_zero: MeanZero) {
        self.mean_zero = Some(mean_zero);
    }

    pub fn dirichlet(&self) -> &BTreeMap<usize, f64> {
        &self.dirichlet
    }

    pub fn periodic(&self) -> &BTreeMap<usize, usize> {
        &self.periodic
    }

    pub fn mean_zero(&self) -> Option<&MeanZero> {
        self.mean_zero.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Free(usize),
    Fixed(usize),
}

const NONE: usize = usize::MAX;

/// Precomputed map from a full operator pattern to the reduced system.
#[derive(Debug)]
pub struct Condensation {
    n_full: usize,
    roles: Vec<Role>,
    fixed_dofs: Vec<usize>,
    default_fixed: Vec<f64>,
    reduced_pattern: Arc<CsrPattern>,
    /// full entry -> reduced entry or `NONE`
    entry_map: Vec<usize>,
    /// (full entry, reduced row, fixed column slot)
    couplings: Vec<(usize, usize, usize)>,
    mean_zero: Option<MeanZero>,
}

impl Condensation {
    pub fn new(pattern: &CsrPattern, constraints: &ConstraintSet) -> Result<Self> {
        let n = pattern.n();
        for (&s, &m) in &constraints.periodic {
            if s >= n || m >= n {
                return Err(Error::InconsistentConstraint { dof: s.max(m), reason: format!("dof outside operator of size {n}") });
            }
            if constraints.dirichlet.contains_key(&s) || constraints.dirichlet.contains_key(&m) {
                return Err(Error::InconsistentConstraint {
                    dof: s,
                    reason: "dof is both periodic and Dirichlet constrained".into(),
                });
            }
        }
        if let Some(&d) = constraints.dirichlet.keys().find(|&&d| d >= n) {
            return Err(Error::InconsistentConstraint { dof: d, reason: format!("dof outside operator of size {n}") });
        }
        if constraints.mean_zero.is_some() && !constraints.dirichlet.is_empty() {
            return Err(Error::InconsistentConstraint {
                dof: *constraints.dirichlet.keys().next().unwrap(),
                reason: "mean-zero and Dirichlet constraints cannot be combined".into(),
            });
        }

        let root = |mut d: usize| {
            let mut steps = 0;
            while let Some(&m) = constraints.periodic.get(&d) {
                d = m;
                steps += 1;
                if steps > n {
                    return Err(Error::InconsistentConstraint { dof: d, reason: "periodic constraints form a cycle".into() });
                }
            }
            Ok(d)
        };

        let mut fixed_dofs = Vec::new();
        let mut default_fixed = Vec::new();
        let mut fixed_slot = vec![NONE; n];
        for (&d, &v) in &constraints.dirichlet {
            fixed_slot[d] = fixed_dofs.len();
            fixed_dofs.push(d);
            default_fixed.push(v);
        }
        if let Some(mz) = &constraints.mean_zero {
            let nc = mz.components;
            if mz.node_weights.len() * nc != n {
                return Err(Error::InvalidInput(format!(
                    "mean-zero weights cover {} dofs, operator has {n}",
                    mz.node_weights.len() * nc
                )));
            }
            for c in 0..nc {
                let pin = (0..mz.node_weights.len())
                    .map(|node| node * nc + c)
                    .find(|d| !constraints.periodic.contains_key(d))
                    .ok_or_else(|| Error::InvalidInput("no admissible dof to pin for mean-zero constraint".into()))?;
                fixed_slot[pin] = fixed_dofs.len();
                fixed_dofs.push(pin);
                default_fixed.push(0.0);
            }
        }

        let mut roles = vec![Role::Free(NONE); n];
        let mut n_free = 0;
        for d in 0..n {
            if constraints.periodic.contains_key(&d) {
                continue;
            }
            roles[d] = if fixed_slot[d] != NONE {
                Role::Fixed(fixed_slot[d])
            } else {
                n_free += 1;
                Role::Free(n_free - 1)
            };
        }
        for &s in constraints.periodic.keys() {
            roles[s] = roles[root(s)?];
        }

        let row_ptr = pattern.row_ptr();
        let col_idx = pattern.col_idx();
        let mut entries = Vec::new();
        for i in 0..n {
            if let Role::Free(ri) = roles[i] {
                for &j in &col_idx[row_ptr[i]..row_ptr[i + 1]] {
                    if let Role::Free(rj) = roles[j] {
                        entries.push((ri, rj));
                    }
                }
            }
        }
        let reduced_pattern = Arc::new(CsrPattern::from_entries(n_free, entries));
        let mut entry_map = vec![NONE; pattern.nnz()];
        let mut couplings = Vec::new();
        for i in 0..n {
            if let Role::Free(ri) = roles[i] {
                for k in row_ptr[i]..row_ptr[i + 1] {
                    match roles[col_idx[k]] {
                        Role::Free(rj) => entry_map[k] = reduced_pattern.find(ri, rj).expect("reduced entry"),
                        Role::Fixed(slot) => couplings.push((k, ri, slot)),
                    }
                }
            }
        }

        Ok(Condensation {
            n_full: n,
            roles,
            fixed_dofs,
            default_fixed,
            reduced_pattern,
            entry_map,
            couplings,
            mean_zero: constraints.mean_zero.clone(),
        })
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn n_reduced(&self) -> usize {
        self.reduced_pattern.n()
    }

    pub fn reduced_pattern(&self) -> &Arc<CsrPattern> {
        &self.reduced_pattern
    }

    /// Dofs eliminated by value (Dirichlet dofs, then pinned dofs).
    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed_dofs
    }

    /// Values from the constraint set, aligned with [`Self::fixed_dofs`].
    pub fn default_fixed_values(&self) -> &[f64] {
        &self.default_fixed
    }

    pub fn condense_matrix(&self, full: &CsrMatrix) -> CsrMatrix {
        let mut values = vec![0.0; self.reduced_pattern.nnz()];
        self.condense_values_into(full.values(), &mut values);
        CsrMatrix::from_values(self.reduced_pattern.clone(), values)
    }

    /// Scatter-adds full-pattern values into a reduced value array.
    pub fn condense_values_into(&self, full_values: &[f64], reduced: &mut [f64]) {
        reduced.iter_mut().for_each(|v| *v = 0.0);
        for (k, &r) in self.entry_map.iter().enumerate() {
            if r != NONE {
                reduced[r] += full_values[k];
            }
        }
    }

    /// Reduced right-hand side `P^T (b - A g)` for prescribed values `g`.
    pub fn condense_rhs(&self, full: &CsrMatrix, rhs: &[f64], fixed_values: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n_full);
        assert_eq!(fixed_values.len(), self.fixed_dofs.len());
        let mut out = vec![0.0; self.n_reduced()];
        for (d, &b) in rhs.iter().enumerate() {
            if let Role::Free(r) = self.roles[d] {
                out[r] += b;
            }
        }
        let values = full.values();
        for &(k, r, slot) in &self.couplings {
            out[r] -= values[k] * fixed_values[slot];
        }
        out
    }

    /// Reduced load from a full-length vector without fixed-value coupling.
    pub fn condense_vector(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_reduced()];
        for (d, &b) in full.iter().enumerate() {
            if let Role::Free(r) = self.roles[d] {
                out[r] += b;
            }
        }
        out
    }

    /// Full solution from the reduced one; applies the mean-zero shift.
    pub fn expand(&self, reduced: &[f64], fixed_values: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .roles
            .iter()
            .map(|role| match *role {
                Role::Free(r) => reduced[r],
                Role::Fixed(slot) => fixed_values[slot],
            })
            .collect();
        if let Some(mz) = &self.mean_zero {
            remove_weighted_mean(&mut x, &mz.node_weights, mz.components);
        }
        x
    }
}

/// Subtracts the `node_weights`-weighted mean from each component.
pub fn remove_weighted_mean(x: &mut [f64], node_weights: &[f64], components: usize) {
    let total: f64 = node_weights.iter().sum();
    for c in 0..components {
        let mean = node_weights.iter().enumerate().map(|(a, w)| w * x[a * components + c]).sum::<f64>() / total;
        for a in 0..node_weights.len() {
            x[a * components + c] -= mean;
        }
    }
}

/// Reduced operator and right-hand side, ready to solve.
#[derive(Debug)]
pub struct ConstrainedSystem {
    pub operator: SparseOperator,
    pub rhs: Vec<f64>,
    pub condensation: Arc<Condensation>,
    pub fixed_values: Vec<f64>,
}

impl ConstrainedSystem {
    /// Solves the reduced system and returns the full-length solution.
    pub fn solve(&self, reuse: bool) -> Result<Vec<f64>> {
        let y = self.operator.solve(&self.rhs, reuse).map_err(|e| Error::solve("constrained solve", e))?;
        Ok(self.condensation.expand(&y, &self.fixed_values))
    }
}

/// Condenses `op x = rhs` under `constraints`.
pub fn apply_constraints(op: &SparseOperator, rhs: &[f64], constraints: &ConstraintSet) -> Result<ConstrainedSystem> {
    if rhs.len() != op.n() {
        return Err(Error::InvalidInput(format!("rhs has length {}, operator has {} rows", rhs.len(), op.n())));
    }
    let condensation = Arc::new(Condensation::new(op.matrix().pattern(), constraints)?);
    let fixed_values = condensation.default_fixed_values().to_vec();
    let reduced_rhs = condensation.condense_rhs(op.matrix(), rhs, &fixed_values);
    let operator = SparseOperator::new(condensation.condense_matrix(op.matrix()));
    Ok(ConstrainedSystem { operator, rhs: reduced_rhs, condensation, fixed_values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn no_constraints_leave_operator_unchanged() {
        let a = laplace_1d(4);
        let op = SparseOperator::new(a.clone());
        let sys = apply_constraints(&op, &[1.0; 4], &ConstraintSet::new()).unwrap();
        assert_eq!(sys.operator.matrix().to_dense(), a.to_dense());
        assert_eq!(sys.rhs, vec![1.0; 4]);
    }

    #[test]
    fn dirichlet_constant_solution() {
        // Neumann 1D Laplacian annihilates constants
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let op = SparseOperator::new(CsrMatrix::from_triplets(n, &t));
        let mut cs = ConstraintSet::new();
        cs.add_dirichlet(0, 1.0).unwrap();
        cs.add_dirichlet(n - 1, 1.0).unwrap();
        let x = apply_constraints(&op, &vec![0.0; n], &cs).unwrap().solve(false).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn conflicting_dirichlet_rejected() {
        let mut cs = ConstraintSet::new();
        cs.add_dirichlet(3, 1.0).unwrap();
        cs.add_dirichlet(3, 1.0).unwrap();
        assert!(matches!(cs.add_dirichlet(3, 2.0), Err(Error::InconsistentConstraint { dof: 3, .. })));
    }

    #[test]
    fn periodic_and_dirichlet_on_same_dof_rejected() {
        let a = laplace_1d(4);
        let mut cs = ConstraintSet::new();
        cs.add_periodic(3, 0).unwrap();
        cs.add_dirichlet(3, 0.0).unwrap();
        assert!(Condensation::new(a.pattern(), &cs).is_err());
    }

    #[test]
    fn periodic_ring_with_mean_zero() {
        // 1D periodic chain 0..n with node n identified with node 0
        let n = 8;
        let mut t = Vec::new();
        for i in 0..n {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let a = CsrMatrix::from_triplets(n + 1, &t);
        // zero-mean load
        let mut b = vec![0.0; n + 1];
        b[2] = 1.0;
        b[6] = -1.0;
        let mut cs = ConstraintSet::new();
        cs.add_periodic(n, 0).unwrap();
        let mut w = vec![1.0; n + 1];
        w[0] = 0.5;
        w[n] = 0.5;
        cs.set_mean_zero(MeanZero { node_weights: w.clone(), components: 1 });
        let x = apply_constraints(&SparseOperator::new(a.clone()), &b, &cs).unwrap().solve(false).unwrap();
        assert_eq!(x[0], x[n]);
        let mean: f64 = x.iter().zip(&w).map(|(v, w)| v * w).sum();
        assert!(mean.abs() < 1e-14);
        // residual vanishes on the periodic space: fold slave row into master
        let mut r = a.matvec(&x);
        r.iter_mut().zip(&b).for_each(|(r, b)| *r -= b);
        r[0] += r[n];
        for v in &r[..n] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_elimination_keeps_symmetry() {
        let a = laplace_1d(7);
        let mut cs = ConstraintSet::new();
        cs.add_dirichlet(0, 2.0).unwrap();
        cs.add_dirichlet(4, -1.0).unwrap();
        let sys = apply_constraints(&SparseOperator::new(a), &[0.0; 7], &cs).unwrap();
        assert_eq!(sys.operator.n(), 5);
        assert!(sys.operator.matrix().symmetry_defect() == 0.0);
        let x = sys.solve(false).unwrap();
        assert_eq!(x[0], 2.0);
        assert_eq!(x[4], -1.0);
        // linear between the fixed values, decaying past the last one
        assert!((x[2] - 0.5).abs() < 1e-14);
        assert!((x[6] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn fully_constrained_system_is_empty() {
        let a = laplace_1d(2);
        let mut cs = ConstraintSet::new();
        cs.add_dirichlet(0, 1.0).unwrap();
        cs.add_dirichlet(1, 3.0).unwrap();
        let x = apply_constraints(&SparseOperator::new(a), &[0.0; 2], &cs).unwrap().solve(false).unwrap();
        assert_eq!(x, vec![1.0, 3.0]);
    }
}
