//! Single-event DiD moments computed from scratch, for the subsample that
//! keeps the double cohort and every unit of another combined cohort.

use ddid_core::moments::Estimator;
use ddid_core::panel::{CellIndex, Cohort, CohortMap, ControlType, Panel};

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    solve(xtx, xty)
}

fn logit(x: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (row, &di) in x.iter().zip(d) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pi = 1.0 / (1.0 + (-eta).exp());
            for a in 0..p {
                g[a] += (di - pi) * row[a];
                for b in 0..p {
                    h[a][b] += pi * (1.0 - pi) * row[a] * row[b];
                }
            }
        }
        let step = solve(h, g);
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-15 {
            break;
        }
    }
    x.iter().map(|row| 1.0 / (1.0 + (-row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).exp())).collect()
}

/// One-event estimator for combined cohort `g` on the `W(g1, g2) = 1` subsample.
pub fn single_event(panel: &Panel, cohorts: &CohortMap, cell: &CellIndex, est: Estimator, control: ControlType) -> f64 {
    let g = cell.g1.min(cell.g2);
    let b = g.period().unwrap() - 1;
    let t = cell.t;
    let mut treat = Vec::new();
    let mut comp = Vec::new();
    for i in 0..panel.n_units() {
        let (a1, a2) = (cohorts.g1[i], cohorts.g2[i]);
        let combined = a1.min(a2);
        let keep = (a1, a2) == (cell.g1, cell.g2) || combined != g;
        if !keep {
            continue;
        }
        if combined == g {
            treat.push(i);
            continue;
        }
        let is_control = match control {
            ControlType::Never => combined == Cohort::Never,
            ControlType::NotYet => !combined.treated_at(t.max(b)),
        };
        if is_control {
            comp.push(i);
        }
    }
    let dy = |i: usize| panel.outcome(i, t) - panel.outcome(i, b);
    let row = |i: usize| {
        let mut r = vec![1.0];
        r.extend_from_slice(panel.covariates(i));
        r
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let m: Box<dyn Fn(usize) -> f64> = if matches!(est, Estimator::Or | Estimator::Dr) {
        let x: Vec<_> = comp.iter().map(|&i| row(i)).collect();
        let y: Vec<_> = comp.iter().map(|&i| dy(i)).collect();
        let beta = ols(&x, &y);
        Box::new(move |i| row(i).iter().zip(&beta).map(|(a, b)| a * b).sum())
    } else {
        Box::new(|_| 0.0)
    };
    let omega: Vec<f64> = if matches!(est, Estimator::Ipw | Estimator::Dr) {
        let pooled: Vec<usize> = treat.iter().chain(&comp).copied().collect();
        let x: Vec<_> = pooled.iter().map(|&i| row(i)).collect();
        let d: Vec<f64> = (0..pooled.len()).map(|j| (j < treat.len()) as u8 as f64).collect();
        let p = logit(&x, &d);
        p[treat.len()..].iter().map(|p| p / (1.0 - p)).collect()
    } else {
        vec![1.0; comp.len()]
    };
    let treated_term = mean(&treat.iter().map(|&i| dy(i) - m(i)).collect::<Vec<_>>());
    let comp_term = match est {
        Estimator::Or => 0.0,
        _ => {
            let num: f64 = comp.iter().zip(&omega).map(|(&i, o)| o * (dy(i) - m(i))).sum();
            num / omega.iter().sum::<f64>()
        }
    };
    treated_term - comp_term
}
