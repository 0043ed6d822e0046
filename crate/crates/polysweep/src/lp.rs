//! Dense two-phase simplex for the small linear programs that show up in
//! constraint-qualification checks and dual-certificate search.
//!
//! Bland's rule is used in both phases, so the iteration always terminates;
//! the problems here have at most a few hundred variables, where a dense
//! tableau is perfectly adequate and easy to audit.

/// Constraint sense.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

/// Solver outcome.
#[derive(Clone, Debug)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&[f64], f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }
}

/// Linear program `minimize c.x  s.t.  rows, bounds`.
///
/// Variables carry individual bounds; `f64::NEG_INFINITY` / `f64::INFINITY`
/// mark free sides. Constraints are dense rows.
#[derive(Clone, Debug, Default)]
pub struct LinProg {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<f64>, Rel, f64)>,
}

impl LinProg {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a variable with objective coefficient and bounds; returns its index.
    pub fn add_var(&mut self, obj: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(obj);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    /// Add a dense constraint row.
    pub fn add_row(&mut self, coefs: Vec<f64>, rel: Rel, rhs: f64) {
        debug_assert_eq!(coefs.len(), self.n_vars());
        self.rows.push((coefs, rel, rhs));
    }

    /// Add a sparse constraint row given as (index, coefficient) pairs.
    pub fn add_row_sparse(&mut self, terms: &[(usize, f64)], rel: Rel, rhs: f64) {
        let mut row = vec![0.0; self.n_vars()];
        for &(j, c) in terms {
            row[j] += c;
        }
        self.rows.push((row, rel, rhs));
    }

    /// Solve by two-phase dense simplex.
    pub fn solve(&self) -> LpOutcome {
        // Map every variable onto one or two nonnegative standard variables.
        // map[j] = (kind, idx): kind 0 -> x = lo + y_idx
        //          kind 1 -> x = up - y_idx
        //          kind 2 -> x = y_idx - y_{idx+1}
        let n = self.n_vars();
        let mut kind = vec![0u8; n];
        let mut base = vec![0usize; n];
        let mut std_n = 0usize;
        let mut extra_rows: Vec<(Vec<(usize, f64)>, Rel, f64)> = Vec::new();
        for j in 0..n {
            let lo = self.lower[j];
            let up = self.upper[j];
            if lo.is_finite() {
                kind[j] = 0;
                base[j] = std_n;
                std_n += 1;
                if up.is_finite() {
                    // y <= up - lo
                    extra_rows.push((vec![(base[j], 1.0)], Rel::Le, up - lo));
                }
            } else if up.is_finite() {
                kind[j] = 1;
                base[j] = std_n;
                std_n += 1;
            } else {
                kind[j] = 2;
                base[j] = std_n;
                std_n += 2;
            }
        }

        // Assemble standard-form rows: coefficients over std vars, rel, rhs.
        let mut rows: Vec<(Vec<f64>, Rel, f64)> = Vec::new();
        let mut push_row = |coefs: &[f64], rel: Rel, mut rhs: f64| {
            let mut std_row = vec![0.0; std_n];
            for j in 0..n {
                let c = coefs[j];
                if c == 0.0 {
                    continue;
                }
                match kind[j] {
                    0 => {
                        std_row[base[j]] += c;
                        rhs -= c * self.lower[j];
                    }
                    1 => {
                        std_row[base[j]] -= c;
                        rhs -= c * self.upper[j];
                    }
                    _ => {
                        std_row[base[j]] += c;
                        std_row[base[j] + 1] -= c;
                    }
                }
            }
            rows.push((std_row, rel, rhs));
        };
        for (coefs, rel, rhs) in &self.rows {
            push_row(coefs, *rel, *rhs);
        }
        for (terms, rel, rhs) in &extra_rows {
            let mut std_row = vec![0.0; std_n];
            for &(idx, c) in terms {
                std_row[idx] += c;
            }
            rows.push((std_row, *rel, *rhs));
        }

        // Standard objective.
        let mut obj = vec![0.0; std_n];
        let mut obj_shift = 0.0;
        for j in 0..n {
            let c = self.objective[j];
            if c == 0.0 {
                continue;
            }
            match kind[j] {
                0 => {
                    obj[base[j]] += c;
                    obj_shift += c * self.lower[j];
                }
                1 => {
                    obj[base[j]] -= c;
                    obj_shift += c * self.upper[j];
                }
                _ => {
                    obj[base[j]] += c;
                    obj[base[j] + 1] -= c;
                }
            }
        }

        match simplex_standard(std_n, &rows, &obj) {
            StdOutcome::Optimal { x: std_x, value } => {
                let mut x = vec![0.0; n];
                for j in 0..n {
                    x[j] = match kind[j] {
                        0 => self.lower[j] + std_x[base[j]],
                        1 => self.upper[j] - std_x[base[j]],
                        _ => std_x[base[j]] - std_x[base[j] + 1],
                    };
                }
                LpOutcome::Optimal { x, value: value + obj_shift }
            }
            StdOutcome::Infeasible => LpOutcome::Infeasible,
            StdOutcome::Unbounded => LpOutcome::Unbounded,
        }
    }
}

enum StdOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const EPS: f64 = 1e-9;

/// Two-phase simplex on `min c.x, A x (rel) b, x >= 0`.
fn simplex_standard(n: usize, rows: &[(Vec<f64>, Rel, f64)], c: &[f64]) -> StdOutcome {
    let m = rows.len();
    // Tableau columns: n structural, then one slack/surplus per inequality,
    // then one artificial per row that needs it.
    let mut n_slack = 0;
    for (_, rel, _) in rows {
        if *rel != Rel::Eq {
            n_slack += 1;
        }
    }
    let total = n + n_slack + m; // artificial columns allocated per row, some unused
    let mut a = vec![vec![0.0; total]; m];
    let mut b = vec![0.0; m];
    let mut basis = vec![usize::MAX; m];
    let mut slack_at = n;
    let mut n_art = 0usize;
    let art0 = n + n_slack;

    for (i, (coefs, rel, rhs)) in rows.iter().enumerate() {
        let mut sign = 1.0;
        if *rhs < 0.0 {
            sign = -1.0;
        }
        for j in 0..n {
            a[i][j] = sign * coefs[j];
        }
        b[i] = sign * rhs;
        let eff_rel = match (*rel, sign < 0.0) {
            (Rel::Le, false) | (Rel::Ge, true) => Rel::Le,
            (Rel::Ge, false) | (Rel::Le, true) => Rel::Ge,
            (Rel::Eq, _) => Rel::Eq,
        };
        match eff_rel {
            Rel::Le => {
                a[i][slack_at] = 1.0;
                basis[i] = slack_at;
                slack_at += 1;
            }
            Rel::Ge => {
                a[i][slack_at] = -1.0;
                slack_at += 1;
                a[i][art0 + n_art] = 1.0;
                basis[i] = art0 + n_art;
                n_art += 1;
            }
            Rel::Eq => {
                a[i][art0 + n_art] = 1.0;
                basis[i] = art0 + n_art;
                n_art += 1;
            }
        }
    }
    let ncols = art0 + n_art;
    for row in a.iter_mut() {
        row.truncate(ncols);
    }

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        let mut cost1 = vec![0.0; ncols];
        for j in art0..ncols {
            cost1[j] = 1.0;
        }
        let val = run_simplex(&mut a, &mut b, &mut basis, &cost1, ncols);
        match val {
            Some(v) if v <= 1e-7 => {}
            Some(_) => return StdOutcome::Infeasible,
            None => return StdOutcome::Infeasible, // phase 1 is never unbounded
        }
        // Pivot artificials out of the basis where possible.
        for i in 0..m {
            if basis[i] >= art0 {
                let mut pivoted = false;
                for j in 0..art0 {
                    if a[i][j].abs() > 1e-8 {
                        pivot(&mut a, &mut b, &mut basis, i, j);
                        pivoted = true;
                        break;
                    }
                }
                if !pivoted {
                    // Redundant row; zero it out.
                    for j in 0..ncols {
                        a[i][j] = 0.0;
                    }
                    b[i] = 0.0;
                }
            }
        }
    }

    // Phase 2: original objective, artificial columns frozen.
    let mut cost2 = vec![0.0; ncols];
    cost2[..n].copy_from_slice(c);
    // Forbid artificials from re-entering by giving them a large cost on top
    // of being nonbasic with zero value.
    for j in art0..ncols {
        cost2[j] = 0.0;
    }
    match run_simplex_restricted(&mut a, &mut b, &mut basis, &cost2, art0) {
        Some(value) => {
            let mut x = vec![0.0; n];
            for i in 0..m {
                if basis[i] < n {
                    x[basis[i]] = b[i];
                }
            }
            StdOutcome::Optimal { x, value }
        }
        None => StdOutcome::Unbounded,
    }
}

fn pivot(a: &mut [Vec<f64>], b: &mut [f64], basis: &mut [usize], r: usize, c: usize) {
    let m = a.len();
    let p = a[r][c];
    for v in a[r].iter_mut() {
        *v /= p;
    }
    b[r] /= p;
    for i in 0..m {
        if i != r {
            let f = a[i][c];
            if f != 0.0 {
                let (pr, row) = if i < r {
                    let (lo, hi) = a.split_at_mut(r);
                    (&hi[0], &mut lo[i])
                } else {
                    let (lo, hi) = a.split_at_mut(i);
                    (&lo[r], &mut hi[0])
                };
                for (vj, pj) in row.iter_mut().zip(pr.iter()) {
                    *vj -= f * pj;
                }
                b[i] -= f * b[r];
            }
        }
    }
    basis[r] = c;
}

fn reduced_costs(a: &[Vec<f64>], basis: &[usize], cost: &[f64], ncols: usize) -> Vec<f64> {
    let m = a.len();
    // y = c_B B^{-1} is implicit: with a fully pivoted tableau, reduced cost
    // r_j = c_j - sum_i c_{basis[i]} a[i][j].
    let mut red = cost[..ncols].to_vec();
    for i in 0..m {
        let cb = cost[basis[i]];
        if cb != 0.0 {
            for j in 0..ncols {
                red[j] -= cb * a[i][j];
            }
        }
    }
    red
}

/// Bland-rule simplex over all columns; returns objective value or `None` if
/// unbounded.
fn run_simplex(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
    ncols: usize,
) -> Option<f64> {
    run_simplex_restricted(a, b, basis, cost, ncols)
}

/// Same as `run_simplex` but only columns `< allowed` may enter the basis.
fn run_simplex_restricted(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
    allowed: usize,
) -> Option<f64> {
    let m = a.len();
    let ncols = if m == 0 { allowed } else { a[0].len() };
    let max_iter = 200 + 50 * (ncols + m);
    for _ in 0..max_iter {
        let red = reduced_costs(a, basis, cost, ncols);
        // Bland: first eligible entering column.
        let mut enter = None;
        for (j, rj) in red.iter().enumerate().take(allowed) {
            if *rj < -EPS && !basis.contains(&j) {
                enter = Some(j);
                break;
            }
        }
        let Some(jc) = enter else {
            let value = (0..m).map(|i| cost[basis[i]] * b[i]).sum();
            return Some(value);
        };
        // Ratio test with Bland tie-break on the leaving basic variable.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if a[i][jc] > EPS {
                let ratio = b[i] / a[i][jc];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12
                            || (ratio < lr + 1e-12 && basis[i] < basis[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((ir, _)) = leave else {
            return None;
        };
        pivot(a, b, basis, ir, jc);
    }
    // Iteration cap: treat the best point found as optimal; Bland's rule
    // makes this unreachable in exact arithmetic.
    let value = (0..m).map(|i| cost[basis[i]] * b[i]).sum();
    Some(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_bounded_min() {
        // min -x - y  s.t. x + y <= 1, x,y >= 0  -> value -1 on the segment.
        let mut lp = LinProg::new();
        let x = lp.add_var(-1.0, 0.0, f64::INFINITY);
        let y = lp.add_var(-1.0, 0.0, f64::INFINITY);
        lp.add_row_sparse(&[(x, 1.0), (y, 1.0)], Rel::Le, 1.0);
        let (sol, v) = match lp.solve() {
            LpOutcome::Optimal { x, value } => (x, value),
            o => panic!("expected optimal, got {o:?}"),
        };
        assert!((v + 1.0).abs() < 1e-9);
        assert!((sol[0] + sol[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min t s.t. x - t <= 0, -x - t <= 0  (t >= |x|), x = 3 -> t = 3.
        let mut lp = LinProg::new();
        let x = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row_sparse(&[(x, 1.0), (t, -1.0)], Rel::Le, 0.0);
        lp.add_row_sparse(&[(x, -1.0), (t, -1.0)], Rel::Le, 0.0);
        lp.add_row_sparse(&[(x, 1.0)], Rel::Eq, 3.0);
        let (sol, v) = lp.solve().optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v - 3.0).abs() < 1e-9, "value {v}");
        assert!((sol[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinProg::new();
        let x = lp.add_var(-1.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row_sparse(&[(x, 0.0)], Rel::Le, 1.0);
        assert!(matches!(lp.solve(), LpOutcome::Unbounded));
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinProg::new();
        let x = lp.add_var(0.0, 0.0, f64::INFINITY);
        lp.add_row_sparse(&[(x, 1.0)], Rel::Le, -1.0);
        assert!(matches!(lp.solve(), LpOutcome::Infeasible));
    }

    #[test]
    fn box_bounds() {
        // min x + 2y over the box [-1,1]^2 -> -3 at (-1,-1).
        let mut lp = LinProg::new();
        lp.add_var(1.0, -1.0, 1.0);
        lp.add_var(2.0, -1.0, 1.0);
        let (sol, v) = lp.solve().optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v + 3.0).abs() < 1e-9);
        assert!((sol[0] + 1.0).abs() < 1e-9 && (sol[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_with_negative_rhs() {
        // min x+y s.t. x - y = -2, x,y in [0, 10] -> x=0, y=2.
        let mut lp = LinProg::new();
        lp.add_var(1.0, 0.0, 10.0);
        lp.add_var(1.0, 0.0, 10.0);
        lp.add_row(vec![1.0, -1.0], Rel::Eq, -2.0);
        let (sol, v) = lp.solve().optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        assert!(sol[0].abs() < 1e-9 && (sol[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_guard() {
        // Classic Beale cycling example; Bland's rule must terminate.
        let mut lp = LinProg::new();
        for c in [-0.75, 150.0, -0.02, 6.0] {
            lp.add_var(c, 0.0, f64::INFINITY);
        }
        lp.add_row(vec![0.25, -60.0, -0.04, 9.0], Rel::Le, 0.0);
        lp.add_row(vec![0.5, -90.0, -0.02, 3.0], Rel::Le, 0.0);
        lp.add_row(vec![0.0, 0.0, 1.0, 0.0], Rel::Le, 1.0);
        let (_, v) = lp.solve().optimal().map(|(x, v)| (x.to_vec(), v)).unwrap();
        assert!((v + 0.05).abs() < 1e-9, "value {v}");
    }
}
