//! Exact discrete optimal transport and its use on the SPD cone.
//!
//! The discrete Monge–Kantorovich problem asks for a nonnegative coupling
//! `γ` with prescribed row sums `μ` and column sums `ν` minimizing the
//! Frobenius pairing `⟨γ, C⟩`. [`solve_emd`] solves it exactly with the
//! transportation simplex (Vogel initialization, steepest-edge entering rule
//! with a Bland fallback, lexicographic tie-breaking), so optima can be
//! checked against brute-force oracles at small sizes.
//!
//! On the cone, ground costs are log-Euclidean distances ([`cost_matrix_lem`]),
//! plans are turned into points again by the log-domain barycentric map
//! ([`barycentric_map_lem`]), and the induced transport map is the nearest
//! mapped point ([`c_concave_transport`]).

use crate::error::TransportError;
use crate::mat::{bimap_as_kron, vec as vec_cols, Mat};
use crate::spd::{lem_distance, mean_log, SpdMatrix, SymMatrix};

/// Tolerance used when recognizing identity couplings and feasible marginals.
pub const PLAN_TOL: f64 = 1e-9;
const REDUCED_COST_EPS: f64 = 1e-11;

/// Weights of an empirical distribution; nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self, TransportError> {
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(TransportError::NegativeWeight { index: i, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(TransportError::WeightSum { sum });
        }
        Ok(DiscreteMeasure { weights })
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteMeasure { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A matrix of nonnegative, finite ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    mat: Mat,
}

impl CostMatrix {
    pub fn new(mat: Mat) -> Result<Self, TransportError> {
        for i in 0..mat.rows() {
            for j in 0..mat.cols() {
                let v = mat[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(TransportError::InvalidCost { row: i, col: j, value: v });
                }
            }
        }
        Ok(CostMatrix { mat })
    }

    pub fn rows(&self) -> usize {
        self.mat.rows()
    }

    pub fn cols(&self) -> usize {
        self.mat.cols()
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }
}

/// A coupling matrix with prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    mat: Mat,
}

impl TransportPlan {
    /// A coupling validated against its marginals to `1e-9`.
    pub fn new(
        mat: Mat,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
    ) -> Result<Self, TransportError> {
        let plan = Self::from_raw(mat)?;
        if plan.rows() != mu.len() {
            return Err(TransportError::SizeMismatch { what: "source weights", expected: plan.rows(), found: mu.len() });
        }
        if plan.cols() != nu.len() {
            return Err(TransportError::SizeMismatch { what: "target weights", expected: plan.cols(), found: nu.len() });
        }
        for (&have, &want) in plan.row_sums().iter().zip(mu.weights()) {
            if (have - want).abs() > PLAN_TOL {
                return Err(TransportError::InfeasibleMarginals { mu_sum: have, nu_sum: want });
            }
        }
        for (&have, &want) in plan.col_sums().iter().zip(nu.weights()) {
            if (have - want).abs() > PLAN_TOL {
                return Err(TransportError::InfeasibleMarginals { mu_sum: have, nu_sum: want });
            }
        }
        Ok(plan)
    }

    /// A nonnegative matrix treated as a (possibly degenerate) coupling with
    /// no marginal validation.
    pub fn from_raw(mat: Mat) -> Result<Self, TransportError> {
        for i in 0..mat.rows() {
            for j in 0..mat.cols() {
                let v = mat[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(TransportError::InvalidCost { row: i, col: j, value: v });
                }
            }
        }
        Ok(TransportPlan { mat })
    }

    pub fn rows(&self) -> usize {
        self.mat.rows()
    }

    pub fn cols(&self) -> usize {
        self.mat.cols()
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| (0..self.cols()).map(|j| self.mat[(i, j)]).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| (0..self.rows()).map(|i| self.mat[(i, j)]).sum()).collect()
    }

    /// `⟨γ, C⟩`, the transport objective under the given cost.
    pub fn objective(&self, cost: &CostMatrix) -> f64 {
        self.mat.frobenius_inner(cost.mat())
    }

    /// The reversed coupling, exchanging the roles of the two marginals.
    pub fn transposed(&self) -> TransportPlan {
        TransportPlan { mat: self.mat.transpose() }
    }

    /// Maximum deviation from the scaled identity coupling `I/N`.
    pub fn identity_deviation(&self) -> f64 {
        let n = self.rows() as f64;
        let mut dev = 0.0f64;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let target = if i == j { 1.0 / n } else { 0.0 };
                dev = dev.max((self.mat[(i, j)] - target).abs());
            }
        }
        dev
    }

    pub fn is_identity_coupling(&self) -> bool {
        self.rows() == self.cols() && self.identity_deviation() <= PLAN_TOL
    }
}

/// Whether cost entries hold distances or squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// Squared log-Euclidean distances; the cost the squared-distance theory
    /// of the transport map requires.
    #[default]
    Squared,
    /// Raw distances.
    Unsquared,
}

/// Pairwise log-Euclidean ground costs between two sample sets.
pub fn cost_matrix_lem(
    sources: &[SpdMatrix],
    targets: &[SpdMatrix],
    kind: CostKind,
) -> Result<CostMatrix, TransportError> {
    let mut mat = Mat::zeros(sources.len(), targets.len());
    for (i, s) in sources.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            let d = lem_distance(s, t)?;
            mat[(i, j)] = match kind {
                CostKind::Squared => d * d,
                CostKind::Unsquared => d,
            };
        }
    }
    CostMatrix::new(mat)
}

/// Exact solution of the discrete Monge–Kantorovich problem
/// `min ⟨γ, C⟩ over γ ≥ 0, γ·1 = μ, γᵀ·1 = ν` by the transportation simplex.
pub fn solve_emd(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportPlan, TransportError> {
    let n = mu.len();
    let m = nu.len();
    if n != cost.rows() {
        return Err(TransportError::SizeMismatch { what: "source weights", expected: cost.rows(), found: n });
    }
    if m != cost.cols() {
        return Err(TransportError::SizeMismatch { what: "target weights", expected: cost.cols(), found: m });
    }
    let mu_sum: f64 = mu.weights().iter().sum();
    let nu_sum: f64 = nu.weights().iter().sum();
    if (mu_sum - nu_sum).abs() > PLAN_TOL {
        return Err(TransportError::InfeasibleMarginals { mu_sum, nu_sum });
    }

    let mut tableau = Tableau::vogel_init(mu.weights(), nu.weights(), cost);
    tableau.optimize(cost)?;
    Ok(tableau.into_plan())
}

/// Basic cells of the transportation tableau, always a spanning tree on the
/// bipartite row/column node set.
struct Tableau {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize, f64)>,
    row_cells: Vec<Vec<usize>>,
    col_cells: Vec<Vec<usize>>,
}

impl Tableau {
    /// Vogel approximation: repeatedly satisfy the line with the largest
    /// regret (gap between its two cheapest costs), crossing out exactly one
    /// line per assignment so that n + m - 1 basic cells always result.
    fn vogel_init(a: &[f64], b: &[f64], cost: &CostMatrix) -> Tableau {
        let n = a.len();
        let m = b.len();
        let mut rem_a = a.to_vec();
        let mut rem_b = b.to_vec();
        let mut row_active = vec![true; n];
        let mut col_active = vec![true; m];
        let mut active_rows = n;
        let mut active_cols = m;
        let mut cells: Vec<(usize, usize, f64)> = Vec::with_capacity(n + m - 1);

        while active_rows > 0 && active_cols > 0 {
            if active_rows == 1 && active_cols == 1 {
                let r = row_active.iter().position(|&x| x).unwrap();
                let c = col_active.iter().position(|&x| x).unwrap();
                cells.push((r, c, rem_a[r].max(0.0)));
                break;
            }

            let (r, c) = if active_rows == 1 {
                let r = row_active.iter().position(|&x| x).unwrap();
                (r, cheapest_in_row(cost, r, &col_active))
            } else if active_cols == 1 {
                let c = col_active.iter().position(|&x| x).unwrap();
                (cheapest_in_col(cost, c, &row_active), c)
            } else {
                // (regret, is_column, line index); rows win ties.
                let mut best = (f64::NEG_INFINITY, false, 0usize);
                for (i, _) in row_active.iter().enumerate().filter(|(_, &x)| x) {
                    let regret = row_regret(cost, i, &col_active);
                    if regret > best.0 {
                        best = (regret, false, i);
                    }
                }
                for (j, _) in col_active.iter().enumerate().filter(|(_, &x)| x) {
                    let regret = col_regret(cost, j, &row_active);
                    if regret > best.0 {
                        best = (regret, true, j);
                    }
                }
                if best.1 {
                    (cheapest_in_col(cost, best.2, &row_active), best.2)
                } else {
                    (best.2, cheapest_in_row(cost, best.2, &col_active))
                }
            };

            let amount = rem_a[r].min(rem_b[c]).max(0.0);
            cells.push((r, c, amount));
            let da = rem_a[r];
            let db = rem_b[c];
            rem_a[r] = (da - amount).max(0.0);
            rem_b[c] = (db - amount).max(0.0);
            // Cross out exactly one line; ties keep the column alive with a
            // zero remainder so the basis stays a spanning tree.
            if (da < db || active_cols == 1) && active_rows > 1 {
                row_active[r] = false;
                active_rows -= 1;
            } else {
                col_active[c] = false;
                active_cols -= 1;
            }
        }

        let mut t = Tableau {
            n,
            m,
            cells,
            row_cells: vec![Vec::new(); n],
            col_cells: vec![Vec::new(); m],
        };
        t.rebuild_adjacency();
        t
    }

    fn rebuild_adjacency(&mut self) {
        for v in self.row_cells.iter_mut() {
            v.clear();
        }
        for v in self.col_cells.iter_mut() {
            v.clear();
        }
        for (idx, &(r, c, _)) in self.cells.iter().enumerate() {
            self.row_cells[r].push(idx);
            self.col_cells[c].push(idx);
        }
    }

    /// Dual potentials from the basis tree: u_i + v_j = c_ij on basic cells.
    fn duals(&self, cost: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        // The tree spans all nodes, but walk every component defensively.
        for root in 0..self.n {
            if !u[root].is_nan() {
                continue;
            }
            u[root] = 0.0;
            let mut stack: Vec<(bool, usize)> = vec![(true, root)];
            while let Some((is_row, node)) = stack.pop() {
                let cell_ids = if is_row { &self.row_cells[node] } else { &self.col_cells[node] };
                for &id in cell_ids {
                    let (r, c, _) = self.cells[id];
                    if is_row && v[c].is_nan() {
                        v[c] = cost.get(r, c) - u[r];
                        stack.push((false, c));
                    } else if !is_row && u[r].is_nan() {
                        u[r] = cost.get(r, c) - v[c];
                        stack.push((true, r));
                    }
                }
            }
        }
        (u, v)
    }

    /// Pivot until no cell has negative reduced cost. The entering rule is
    /// most-negative with lexicographic ties; after a generous pivot budget it
    /// degrades to Bland's rule, which cannot cycle.
    fn optimize(&mut self, cost: &CostMatrix) -> Result<(), TransportError> {
        let bland_after = 200 * (self.n + self.m);
        let hard_cap = 2000 * (self.n + self.m) + 10_000;
        for iter in 0..hard_cap {
            let (u, v) = self.duals(cost);
            let bland = iter >= bland_after;
            let mut entering: Option<(usize, usize, f64)> = None;
            'scan: for (i, &ui) in u.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    let rc = cost.get(i, j) - ui - vj;
                    if rc < -REDUCED_COST_EPS {
                        match entering {
                            Some((_, _, best)) if rc >= best => {}
                            _ => entering = Some((i, j, rc)),
                        }
                        if bland {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = entering else {
                return Ok(());
            };
            self.pivot(ei, ej);
        }
        Err(TransportError::SolverStalled { iterations: hard_cap })
    }

    /// Adds cell (ei, ej), pushes flow around the unique induced cycle, and
    /// drops the blocking cell.
    fn pivot(&mut self, ei: usize, ej: usize) {
        // Path from Col(ej) back to Row(ei) through the basis tree.
        let path = self.tree_path(ej, ei);
        // Cycle cells: entering cell first, then the path edges; odd positions
        // lose flow.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &cell_id) in path.iter().enumerate() {
            if pos % 2 == 0 {
                // First path edge is position 1 in the cycle (entering is 0).
                let (r, c, flow) = self.cells[cell_id];
                let better = flow < theta - 1e-15
                    || ((flow - theta).abs() <= 1e-15
                        && leaving.is_some_and(|l| {
                            let (lr, lc, _) = self.cells[l];
                            (r, c) < (lr, lc)
                        }));
                if leaving.is_none() || better {
                    theta = flow.min(theta);
                    leaving = Some(cell_id);
                }
            }
        }
        let leaving = leaving.expect("cycle always contains a leaving candidate");
        let theta = theta.max(0.0);

        for (pos, &cell_id) in path.iter().enumerate() {
            let delta = if pos % 2 == 0 { -theta } else { theta };
            self.cells[cell_id].2 = (self.cells[cell_id].2 + delta).max(0.0);
        }
        self.cells[leaving] = (ei, ej, theta);
        self.rebuild_adjacency();
    }

    /// Edge list of the tree path from column node `cj` to row node `ri`.
    fn tree_path(&self, cj: usize, ri: usize) -> Vec<usize> {
        // Nodes: rows are 0..n, columns are n..n+m.
        let total = self.n + self.m;
        let mut parent_edge: Vec<Option<usize>> = vec![None; total];
        let mut visited = vec![false; total];
        let start = self.n + cj;
        let goal = ri;
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            let (cell_ids, is_row) =
                if node < self.n { (&self.row_cells[node], true) } else { (&self.col_cells[node - self.n], false) };
            for &id in cell_ids {
                let (r, c, _) = self.cells[id];
                let next = if is_row { self.n + c } else { r };
                if !visited[next] {
                    visited[next] = true;
                    parent_edge[next] = Some(id);
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = goal;
        while let Some(edge) = parent_edge[node] {
            path.push(edge);
            let (r, c, _) = self.cells[edge];
            let row_node = r;
            let col_node = self.n + c;
            node = if node == row_node { col_node } else { row_node };
            if node == start {
                break;
            }
        }
        // path currently runs goal -> start; the cycle orientation wants
        // start (the entering column) first.
        path.reverse();
        path
    }

    fn into_plan(self) -> TransportPlan {
        let mut mat = Mat::zeros(self.n, self.m);
        for (r, c, flow) in self.cells {
            mat[(r, c)] += flow.max(0.0);
        }
        TransportPlan { mat }
    }
}

fn cheapest_in_row(cost: &CostMatrix, row: usize, col_active: &[bool]) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for (j, &active) in col_active.iter().enumerate() {
        if active && cost.get(row, j) < best.0 {
            best = (cost.get(row, j), j);
        }
    }
    best.1
}

fn cheapest_in_col(cost: &CostMatrix, col: usize, row_active: &[bool]) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for (i, &active) in row_active.iter().enumerate() {
        if active && cost.get(i, col) < best.0 {
            best = (cost.get(i, col), i);
        }
    }
    best.1
}

fn row_regret(cost: &CostMatrix, row: usize, col_active: &[bool]) -> f64 {
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::INFINITY;
    for (j, &active) in col_active.iter().enumerate() {
        if !active {
            continue;
        }
        let c = cost.get(row, j);
        if c < c1 {
            c2 = c1;
            c1 = c;
        } else if c < c2 {
            c2 = c;
        }
    }
    if c2.is_finite() {
        c2 - c1
    } else {
        c1
    }
}

fn col_regret(cost: &CostMatrix, col: usize, row_active: &[bool]) -> f64 {
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::INFINITY;
    for (i, &active) in row_active.iter().enumerate() {
        if !active {
            continue;
        }
        let c = cost.get(i, col);
        if c < c1 {
            c2 = c1;
            c1 = c;
        } else if c < c2 {
            c2 = c;
        }
    }
    if c2.is_finite() {
        c2 - c1
    } else {
        c1
    }
}

/// Log-domain barycentric map: position `j` of the output is the exponential
/// of the column-normalized, plan-weighted mean of `log Sᵢ`, so the identity
/// coupling reproduces the sources exactly.
pub fn barycentric_map_lem(
    plan: &TransportPlan,
    sources: &[SpdMatrix],
) -> Result<Vec<SpdMatrix>, TransportError> {
    if plan.rows() != sources.len() {
        return Err(TransportError::SizeMismatch {
            what: "sources",
            expected: plan.rows(),
            found: sources.len(),
        });
    }
    let dim = sources.first().map(|s| s.dim()).unwrap_or(0);
    let logs: Vec<SymMatrix> = sources.iter().map(|s| s.log()).collect();
    let mut out = Vec::with_capacity(plan.cols());
    for j in 0..plan.cols() {
        let mass: f64 = (0..plan.rows()).map(|i| plan.get(i, j)).sum();
        if !mass.is_finite() || mass <= 0.0 {
            return Err(TransportError::ZeroColumnMass { col: j });
        }
        let mut acc = Mat::zeros(dim, dim);
        for (i, log) in logs.iter().enumerate() {
            let w = plan.get(i, j) / mass;
            if w != 0.0 {
                acc.add_in_place(log.mat(), w);
            }
        }
        out.push(SymMatrix::from_symmetric(acc).exp().map_err(TransportError::Geometry)?);
    }
    Ok(out)
}

/// The transport map induced by the mapped target set: the index and value of
/// the closest mapped point in squared log-Euclidean cost, ties broken toward
/// the smallest index.
pub fn c_concave_transport(
    s: &SpdMatrix,
    mapped_targets: &[SpdMatrix],
) -> Result<(usize, SpdMatrix), TransportError> {
    if mapped_targets.is_empty() {
        return Err(TransportError::EmptyTargets);
    }
    let mut best = (0usize, f64::INFINITY);
    for (j, t) in mapped_targets.iter().enumerate() {
        let d = lem_distance(s, t)?;
        let value = 0.5 * d * d;
        if value < best.1 {
            best = (j, value);
        }
    }
    Ok((best.0, mapped_targets[best.0].clone()))
}

/// Outcome of an affine recovery check.
#[derive(Debug, Clone)]
pub struct AffineRecoveryReport {
    /// Max deviation of the optimal plan from the scaled identity.
    pub plan_deviation: f64,
    /// Max Euclidean error of the barycentric image against `A·x + b`.
    pub map_error: f64,
    pub identity_coupling: bool,
    pub pass: bool,
}

/// Verifies that transporting samples onto their own affine image `A·x + b`
/// (`A` symmetric positive definite) recovers the identity coupling under the
/// squared Euclidean cost, and that the row-normalized barycentric map then
/// reproduces `A·x + b`.
pub fn verify_affine_recovery(
    samples: &[Vec<f64>],
    a: &Mat,
    b: &[f64],
) -> Result<AffineRecoveryReport, TransportError> {
    SpdMatrix::new(a.clone()).map_err(TransportError::Geometry)?;
    let n = samples.len();
    let dim = a.rows();
    for (i, x) in samples.iter().enumerate() {
        if x.len() != dim {
            return Err(TransportError::SizeMismatch { what: "sample", expected: dim, found: x.len() });
        }
        for (k, y) in samples.iter().enumerate().skip(i + 1) {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            if d2 == 0.0 {
                return Err(TransportError::DegenerateSamples { first: i, second: k });
            }
        }
    }
    if b.len() != dim {
        return Err(TransportError::SizeMismatch { what: "bias", expected: dim, found: b.len() });
    }

    let targets: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| {
            let ax = a.matvec(x);
            ax.iter().zip(b).map(|(p, q)| p + q).collect()
        })
        .collect();

    let cost = CostMatrix::new(Mat::from_fn(n, n, |i, j| {
        samples[i].iter().zip(&targets[j]).map(|(p, q)| (p - q) * (p - q)).sum()
    }))?;
    let uniform = DiscreteMeasure::uniform(n);
    let plan = solve_emd(&uniform, &uniform, &cost)?;
    let plan_deviation = plan.identity_deviation();

    let row_sums = plan.row_sums();
    let mut map_error = 0.0f64;
    for i in 0..n {
        let mut image = vec![0.0; dim];
        for (j, t) in targets.iter().enumerate() {
            let w = plan.get(i, j) / row_sums[i];
            for (acc, v) in image.iter_mut().zip(t) {
                *acc += w * v;
            }
        }
        let err: f64 = image
            .iter()
            .zip(&targets[i])
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        map_error = map_error.max(err);
    }

    let identity_coupling = plan_deviation <= PLAN_TOL;
    Ok(AffineRecoveryReport {
        plan_deviation,
        map_error,
        identity_coupling,
        pass: identity_coupling && map_error <= 1e-8,
    })
}

/// The congruence analogue of [`verify_affine_recovery`]: SPD samples pushed
/// through `S ↦ W·S·Wᵀ` with `W` symmetric positive definite, compared in
/// column-stacked coordinates where the push-forward is the linear map `W ⊗ W`.
pub fn verify_bimap_recovery(
    samples: &[SpdMatrix],
    w: &Mat,
) -> Result<AffineRecoveryReport, TransportError> {
    SpdMatrix::new(w.clone()).map_err(TransportError::Geometry)?;
    let vecs: Vec<Vec<f64>> = samples.iter().map(|s| vec_cols(s.mat())).collect();
    let a = bimap_as_kron(w);
    let b = vec![0.0; a.rows()];
    verify_affine_recovery(&vecs, &a, &b)
}

/// Worst-case numbers over a batch of randomized recovery trials.
#[derive(Debug, Clone)]
pub struct RecoveryTrialSummary {
    pub trials: usize,
    pub worst_plan_deviation: f64,
    pub worst_map_error: f64,
    pub all_pass: bool,
}

fn random_orthogonal(dim: usize, rng: &mut impl rand::Rng) -> Mat {
    use rand_distr::StandardNormal;
    Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal)).qr_thin()
}

fn random_spd_mat(spectrum: impl Fn(&mut dyn FnMut() -> f64) -> Vec<f64>, rng: &mut impl rand::Rng) -> Mat {
    let mut draw = || rng.random::<f64>();
    let eigs = spectrum(&mut draw);
    let u = random_orthogonal(eigs.len(), rng);
    let mut m = Mat::zeros(eigs.len(), eigs.len());
    for (k, &l) in eigs.iter().enumerate() {
        for i in 0..eigs.len() {
            for j in 0..eigs.len() {
                m[(i, j)] += l * u[(i, k)] * u[(j, k)];
            }
        }
    }
    m.symmetrize()
}

/// Runs `trials` random affine-recovery checks (`A` symmetric positive
/// definite with condition number at most 100, arbitrary bias, distinct
/// Gaussian samples) and reports the worst deviations seen.
pub fn affine_recovery_trials(
    trials: usize,
    dim: usize,
    samples_per_trial: usize,
    seed: u64,
) -> Result<RecoveryTrialSummary, TransportError> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut summary = RecoveryTrialSummary {
        trials,
        worst_plan_deviation: 0.0,
        worst_map_error: 0.0,
        all_pass: true,
    };
    for _ in 0..trials {
        // Eigenvalues log-uniform in [0.1, 10]: condition number <= 100.
        let a = random_spd_mat(
            |draw| (0..dim).map(|_| (0.1f64.ln() + draw() * 100f64.ln()).exp()).collect(),
            &mut rng,
        );
        let b: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let samples: Vec<Vec<f64>> = (0..samples_per_trial)
            .map(|_| (0..dim).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect())
            .collect();
        let report = verify_affine_recovery(&samples, &a, &b)?;
        summary.worst_plan_deviation = summary.worst_plan_deviation.max(report.plan_deviation);
        summary.worst_map_error = summary.worst_map_error.max(report.map_error);
        summary.all_pass &= report.pass;
    }
    Ok(summary)
}

/// The congruence analogue of [`affine_recovery_trials`]: random symmetric
/// positive definite `W` (so `W ⊗ W` stays within condition number 100)
/// pushing random SPD samples.
pub fn bimap_recovery_trials(
    trials: usize,
    dim: usize,
    samples_per_trial: usize,
    seed: u64,
) -> Result<RecoveryTrialSummary, TransportError> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xb1a9);
    let mut summary = RecoveryTrialSummary {
        trials,
        worst_plan_deviation: 0.0,
        worst_map_error: 0.0,
        all_pass: true,
    };
    for _ in 0..trials {
        // Spectrum in [0.4, 2.5]: the Kronecker square has condition <= 40.
        let w = random_spd_mat(
            |draw| (0..dim).map(|_| 0.4 + draw() * 2.1).collect(),
            &mut rng,
        );
        let samples: Vec<SpdMatrix> = (0..samples_per_trial)
            .map(|_| {
                SpdMatrix::new(random_spd_mat(
                    |draw| (0..dim).map(|_| 0.3 + draw() * 2.7).collect(),
                    &mut rng,
                ))
                .map_err(TransportError::Geometry)
            })
            .collect::<Result<_, _>>()?;
        let report = verify_bimap_recovery(&samples, &w)?;
        summary.worst_plan_deviation = summary.worst_plan_deviation.max(report.plan_deviation);
        summary.worst_map_error = summary.worst_map_error.max(report.map_error);
        summary.all_pass &= report.pass;
    }
    Ok(summary)
}

/// Desk-scale statement of the identity-plan corollary: the optimal coupling
/// between per-band means is the scaled identity exactly when every band's
/// nearest counterpart is its own image.
pub fn corollary_identity_plan(
    source_band_means: &[SpdMatrix],
    target_band_means: &[SpdMatrix],
) -> Result<bool, TransportError> {
    if source_band_means.len() != target_band_means.len() {
        return Err(TransportError::BandCountMismatch {
            source_bands: source_band_means.len(),
            target_bands: target_band_means.len(),
        });
    }
    let cost = cost_matrix_lem(source_band_means, target_band_means, CostKind::Squared)?;
    let uniform = DiscreteMeasure::uniform(source_band_means.len());
    let plan = solve_emd(&uniform, &uniform, &cost)?;
    Ok(plan.is_identity_coupling())
}

/// Mean plan-weighted log-Euclidean distance `Σ_ij γ_ij · d(Aᵢ, Bⱼ)`.
pub fn plan_weighted_distance(
    plan: &TransportPlan,
    rows: &[SpdMatrix],
    cols: &[SpdMatrix],
) -> Result<f64, TransportError> {
    let mut acc = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            let w = plan.get(i, j);
            if w > 0.0 {
                acc += w * lem_distance(r, c)?;
            }
        }
    }
    Ok(acc)
}

/// Log-Euclidean Fréchet-mean distance between two sample clouds.
pub fn mean_distance(a: &[SpdMatrix], b: &[SpdMatrix]) -> Result<f64, TransportError> {
    Ok(mean_log(a)?.sub(&mean_log(b)?).frobenius_norm())
}
