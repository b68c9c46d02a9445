//! Small dense symmetric positive-definite solves for the normal equations.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct SpdSolution {
    pub x: Vec<f64>,
    /// 1-norm condition number of the diagonally equilibrated matrix.
    pub condition: f64,
}

/// Lower Cholesky factor of a row-major `p × p` matrix, or `None` when a
/// pivot is not positive.
fn cholesky(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= l[j * p + k] * l[j * p + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * p + j] = ljj;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

fn norm1(a: &[f64], p: usize) -> f64 {
    (0..p)
        .map(|j| (0..p).map(|i| a[i * p + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major, `p × p`).
///
/// `A` is equilibrated to unit diagonal before factorization; the returned
/// condition estimate refers to that scaled matrix. Estimates above
/// `max_condition` are reported as a singular fit.
pub(crate) fn solve_spd(a: &[f64], b: &[f64], p: usize, max_condition: f64) -> Result<SpdSolution> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    let singular = Error::SingularFit {
        condition: f64::INFINITY,
    };
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let d = a[i * p + i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(singular);
        }
        scale.push(1.0 / d.sqrt());
    }
    let scaled: Vec<f64> = (0..p * p)
        .map(|k| a[k] * scale[k / p] * scale[k % p])
        .collect();
    let l = cholesky(&scaled, p).ok_or(singular)?;

    let mut inv = vec![0.0; p * p];
    let mut col = vec![0.0; p];
    for j in 0..p {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve(&l, p, &mut col);
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    let condition = norm1(&scaled, p) * norm1(&inv, p);
    if !condition.is_finite() || condition > max_condition {
        return Err(Error::SingularFit { condition });
    }

    let mut x: Vec<f64> = b.iter().zip(&scale).map(|(b, s)| b * s).collect();
    cholesky_solve(&l, p, &mut x);
    x.iter_mut().zip(&scale).for_each(|(x, s)| *x *= s);
    Ok(SpdSolution { x, condition })
}
