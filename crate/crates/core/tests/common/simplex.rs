//! Self-contained dense two-phase tableau simplex over nonnegative
//! variables, used only by test oracles. Bland's rule throughout, so it
//! cannot cycle; fine for the tiny LPs it is fed.

/// `min cost.x` s.t. `eq` rows hold with equality, `le` rows as `a.x <= b`,
/// `x >= 0` componentwise.
pub struct DenseLp {
    pub n: usize,
    pub cost: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64, bool)>, // (coeffs, rhs, is_eq)
}

impl DenseLp {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cost: vec![0.0; n],
            rows: Vec::new(),
        }
    }

    pub fn eq_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        self.rows.push((coeffs.to_vec(), rhs, true));
    }

    pub fn le_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        self.rows.push((coeffs.to_vec(), rhs, false));
    }
}

const TOL: f64 = 1e-9;

/// Returns `(x, objective)` at an optimal vertex, or `None` when infeasible.
/// Panics on unbounded problems (the oracle models are always bounded).
pub fn solve_dense(lp: &DenseLp) -> Option<(Vec<f64>, f64)> {
    let m = lp.rows.len();
    // Column layout: structural | slack (one per <= row) | artificial.
    let n_slack = lp.rows.iter().filter(|r| !r.2).count();
    let mut width = lp.n + n_slack;

    // Assemble dense rows with rhs >= 0.
    let mut a = vec![vec![0.0f64; width]; m];
    let mut b = vec![0.0f64; m];
    let mut slack_idx = 0usize;
    let mut needs_artificial = vec![false; m];
    for (i, (coeffs, rhs, is_eq)) in lp.rows.iter().enumerate() {
        for &(j, v) in coeffs {
            a[i][j] += v;
        }
        b[i] = *rhs;
        if !is_eq {
            a[i][lp.n + slack_idx] = 1.0;
            slack_idx += 1;
        }
        if b[i] < 0.0 {
            for v in a[i].iter_mut() {
                *v = -*v;
            }
            b[i] = -b[i];
            needs_artificial[i] = true; // slack coefficient now -1
        } else if *is_eq {
            needs_artificial[i] = true;
        }
        // A <= row with nonnegative rhs starts basic on its slack.
    }

    // Artificials for equality rows and flipped rows.
    let mut basis = vec![usize::MAX; m];
    for (i, row) in a.iter_mut().enumerate() {
        if !needs_artificial[i] {
            // Find this row's slack column (coefficient +1).
            let j = (lp.n..width).find(|&j| row[j] == 1.0).expect("slack");
            basis[i] = j;
        }
    }
    let first_artificial = width;
    let n_art = needs_artificial.iter().filter(|&&x| x).count();
    width += n_art;
    let mut art = first_artificial;
    for (i, row) in a.iter_mut().enumerate() {
        row.resize(width, 0.0);
        if needs_artificial[i] {
            row[art] = 1.0;
            basis[i] = art;
            art += 1;
        }
    }

    // Phase 1: minimize the artificial sum.
    let mut phase1 = vec![0.0f64; width];
    for j in first_artificial..width {
        phase1[j] = 1.0;
    }
    let feasible = pivot_to_optimum(&mut a, &mut b, &mut basis, &phase1, width);
    assert!(feasible, "phase-1 LP cannot be unbounded");
    let phase1_obj: f64 = basis
        .iter()
        .zip(&b)
        .filter(|(j, _)| **j >= first_artificial)
        .map(|(_, v)| v)
        .sum();
    if phase1_obj > 1e-7 {
        return None;
    }
    // Drive any degenerate artificials out of the basis.
    for i in 0..m {
        if basis[i] >= first_artificial {
            if let Some(j) = (0..first_artificial).find(|&j| a[i][j].abs() > TOL) {
                pivot(&mut a, &mut b, &mut basis, i, j);
            }
            // Otherwise the row is redundant; it stays with a zero artificial.
        }
    }

    // Phase 2: original cost, artificial columns frozen.
    let mut phase2 = vec![0.0f64; width];
    phase2[..lp.n].copy_from_slice(&lp.cost);
    let bounded = pivot_to_optimum(&mut a, &mut b, &mut basis, &phase2, first_artificial);
    assert!(bounded, "oracle LP must be bounded");

    let mut x = vec![0.0f64; lp.n];
    for (i, &j) in basis.iter().enumerate() {
        if j < lp.n {
            x[j] = b[i];
        }
    }
    let obj = x.iter().zip(&lp.cost).map(|(v, c)| v * c).sum();
    Some((x, obj))
}

/// Bland-rule simplex iterations until optimal (true) or unbounded (false).
fn pivot_to_optimum(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    basis: &mut [usize],
    cost: &[f64],
    allowed_width: usize,
) -> bool {
    let m = a.len();
    loop {
        // Reduced costs via the basic cost multipliers.
        let mut y = vec![0.0f64; m];
        for (i, &j) in basis.iter().enumerate() {
            y[i] = cost[j];
        }
        let mut entering = None;
        'cols: for j in 0..allowed_width {
            if basis.contains(&j) {
                continue;
            }
            let mut reduced = cost[j];
            for i in 0..m {
                reduced -= y[i] * a[i][j];
            }
            if reduced < -TOL {
                entering = Some(j);
                break 'cols; // Bland: lowest index
            }
        }
        let Some(j) = entering else {
            return true;
        };
        // Ratio test, Bland tie-break on basis index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if a[i][j] > TOL {
                let ratio = b[i] / a[i][j];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - TOL || (ratio < lr + TOL && basis[i] < basis[li]) {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((i, _)) = leave else {
            return false;
        };
        pivot(a, b, basis, i, j);
    }
}

fn pivot(a: &mut [Vec<f64>], b: &mut [f64], basis: &mut [usize], row: usize, col: usize) {
    let m = a.len();
    let piv = a[row][col];
    for v in a[row].iter_mut() {
        *v /= piv;
    }
    b[row] /= piv;
    for i in 0..m {
        if i != row {
            let factor = a[i][col];
            if factor.abs() > 0.0 {
                let (src, dst) = if i < row {
                    let (lo, hi) = a.split_at_mut(row);
                    (&hi[0], &mut lo[i])
                } else {
                    let (lo, hi) = a.split_at_mut(i);
                    (&lo[row], &mut hi[0])
                };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d -= factor * s;
                }
                b[i] -= factor * b[row];
            }
        }
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_lp() {
        // min -x - 2y s.t. x + y <= 4, y <= 2, x,y >= 0 -> (2,2), -6
        let mut lp = DenseLp::new(2);
        lp.cost = vec![-1.0, -2.0];
        lp.le_row(&[(0, 1.0), (1, 1.0)], 4.0);
        lp.le_row(&[(1, 1.0)], 2.0);
        let (x, obj) = solve_dense(&lp).unwrap();
        assert!((obj + 6.0).abs() < 1e-9, "{obj}");
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + 3y s.t. x + y = 1, -x <= -0.25 (x >= 0.25)
        let mut lp = DenseLp::new(2);
        lp.cost = vec![1.0, 3.0];
        lp.eq_row(&[(0, 1.0), (1, 1.0)], 1.0);
        lp.le_row(&[(0, -1.0)], -0.25);
        let (x, obj) = solve_dense(&lp).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9, "{x:?}");
        assert!((obj - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = DenseLp::new(1);
        lp.cost = vec![1.0];
        lp.le_row(&[(0, 1.0)], 1.0);
        lp.le_row(&[(0, -1.0)], -2.0); // x >= 2 contradicts x <= 1
        assert!(solve_dense(&lp).is_none());
    }
}
