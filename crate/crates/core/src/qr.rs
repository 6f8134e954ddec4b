//! Householder QR factorization (no pivoting), reduced form.

use ndarray::{s, Array1, Array2, ArrayView2};

/// Reduced factorization `A = Q R` of an m×n matrix with `k = min(m, n)`:
/// `q` is m×k with orthonormal columns and `r` is k×n upper triangular with
/// a non-negative diagonal.
#[derive(Debug, Clone)]
pub struct Qr {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
}

/// Householder reflector `H = I − 2 v vᵀ` acting on rows `start..`, stored
/// with unit `v`. `None` when the column below the diagonal is already zero.
struct Reflector {
    start: usize,
    v: Array1<f64>,
}

impl Reflector {
    fn apply_left(&self, a: &mut ndarray::ArrayViewMut2<'_, f64>) {
        let mut block = a.slice_mut(s![self.start.., ..]);
        // block -= 2 v (vᵀ block)
        let proj = self.v.dot(&block);
        for (i, vi) in self.v.iter().enumerate() {
            let mut row = block.row_mut(i);
            row.scaled_add(-2.0 * vi, &proj);
        }
    }
}

fn reflector_for(x: ndarray::ArrayView1<'_, f64>, start: usize) -> Option<Reflector> {
    let norm = x.dot(&x).sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut v = x.to_owned();
    // v = x + sign(x0)|x| e1 avoids cancellation.
    let alpha = if x[0] >= 0.0 { norm } else { -norm };
    v[0] += alpha;
    let vnorm = v.dot(&v).sqrt();
    if vnorm == 0.0 {
        return None;
    }
    v /= vnorm;
    Some(Reflector { start, v })
}

pub fn householder_qr(a: ArrayView2<'_, f64>) -> Qr {
    let (m, n) = a.dim();
    let k = m.min(n);
    let mut r = a.to_owned();
    let mut reflectors = Vec::with_capacity(k);
    for j in 0..k {
        if j + 1 >= m {
            break;
        }
        let Some(h) = reflector_for(r.slice(s![j.., j]), j) else {
            continue;
        };
        h.apply_left(&mut r.slice_mut(s![.., j..]));
        // Entries below the diagonal are zero up to rounding; make it exact.
        r.slice_mut(s![j + 1.., j]).fill(0.0);
        reflectors.push(h);
    }

    // Q_k = H_0 H_1 ... H_{k-1} [I_k; 0]
    let mut q = Array2::<f64>::zeros((m, k));
    for i in 0..k {
        q[[i, i]] = 1.0;
    }
    for h in reflectors.iter().rev() {
        h.apply_left(&mut q.view_mut());
    }

    let mut r = r.slice(s![..k, ..]).to_owned();
    for i in 0..k {
        if r[[i, i]] < 0.0 {
            r.row_mut(i).mapv_inplace(|x| -x);
            q.column_mut(i).mapv_inplace(|x| -x);
        }
    }
    Qr { q, r }
}

/// Largest absolute entry of `QᵀQ − I`.
pub fn orthonormality_error(q: ArrayView2<'_, f64>) -> f64 {
    let g = q.t().dot(&q);
    g.indexed_iter()
        .map(|((i, j), v)| if i == j { (v - 1.0).abs() } else { v.abs() })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn tall_matrix_reconstructs() {
        let a = array![
            [12.0, -51.0, 4.0],
            [6.0, 167.0, -68.0],
            [-4.0, 24.0, -41.0],
            [1.0, 1.0, 1.0]
        ];
        let qr = householder_qr(a.view());
        assert_eq!(qr.q.dim(), (4, 3));
        assert_eq!(qr.r.dim(), (3, 3));
        assert!(orthonormality_error(qr.q.view()) < 1e-12);
        assert!(max_abs_diff(&qr.q.dot(&qr.r), &a) < 1e-10);
        for i in 0..3 {
            assert!(qr.r[[i, i]] >= 0.0);
            for j in 0..i {
                assert_eq!(qr.r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn wide_matrix_reconstructs() {
        let a = array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 2.0, 0.0]];
        let qr = householder_qr(a.view());
        assert_eq!(qr.q.dim(), (2, 2));
        assert_eq!(qr.r.dim(), (2, 4));
        assert!(orthonormality_error(qr.q.view()) < 1e-12);
        assert!(max_abs_diff(&qr.q.dot(&qr.r), &a) < 1e-12);
    }

    #[test]
    fn orthonormal_input_is_recovered_up_to_sign() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let a = array![[c, c], [c, -c], [0.0, 0.0]];
        let qr = householder_qr(a.view());
        for j in 0..2 {
            let dot: f64 = qr.q.column(j).dot(&a.column(j));
            assert!((dot.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_and_zero_columns() {
        let a = array![[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [3.0, 3.0, 0.0]];
        let qr = householder_qr(a.view());
        assert!(orthonormality_error(qr.q.view()) < 1e-12);
        assert!(max_abs_diff(&qr.q.dot(&qr.r), &a) < 1e-12);

        let z = Array2::<f64>::zeros((4, 2));
        let qr = householder_qr(z.view());
        assert!(orthonormality_error(qr.q.view()) < 1e-15);
    }
}
