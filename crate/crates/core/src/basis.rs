//! One-dimensional Gauss-Lobatto-Legendre nodal operators and their tensor
//! products.
//!
//! Everything two-dimensional in the solver is built from the matrices in
//! this module applied direction by direction. Nodal tensors are stored with
//! the first index running fastest: node `(i, j)` lives at `i + (N+1) * j`.

use thiserror::Error;

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("polynomial degree {0} outside supported range 1..={MAX_DEGREE}")]
    UnsupportedDegree(usize),
    #[error("dimension mismatch: expected {expected} entries, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        Matrix::from_fn(self.rows, other.cols, |r, c| {
            (0..self.cols).map(|k| self[(r, k)] * other[(k, c)]).sum()
        })
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix::from_fn(self.rows, self.cols, |r, c| self[(r, c)] + other[(r, c)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * x[c]).sum())
            .collect()
    }

    /// Solve `self * X = rhs` by Gaussian elimination with partial
    /// pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, rhs.rows);
        let n = self.rows;
        let mut a = self.clone();
        let mut x = rhs.clone();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs())).unwrap();
            for c in 0..n {
                a.data.swap(k * n + c, piv * n + c);
            }
            for c in 0..x.cols {
                x.data.swap(k * x.cols + c, piv * x.cols + c);
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for c in k..n {
                    a[(i, c)] -= f * a[(k, c)];
                }
                for c in 0..x.cols {
                    x[(i, c)] -= f * x[(k, c)];
                }
            }
        }
        for k in (0..n).rev() {
            for c in 0..x.cols {
                let mut v = x[(k, c)];
                for j in k + 1..n {
                    v -= a[(k, j)] * x[(j, c)];
                }
                x[(k, c)] = v / a[(k, k)];
            }
        }
        x
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline(always)]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline(always)]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Values that can be linearly combined at nodes (scalars, coordinates,
/// conserved states).
pub trait Nodal: Copy {
    fn zero() -> Self;
    fn axpy(&mut self, a: f64, x: &Self);
}

impl Nodal for f64 {
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
    #[inline(always)]
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
}

impl<const K: usize> Nodal for [f64; K] {
    #[inline(always)]
    fn zero() -> Self {
        [0.0; K]
    }
    #[inline(always)]
    fn axpy(&mut self, a: f64, x: &Self) {
        for k in 0..K {
            self[k] += a * x[k];
        }
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// Orthonormal Legendre polynomial `sqrt((2n+1)/2) P_n(x)` on [-1, 1].
pub fn legendre_orthonormal(n: usize, x: f64) -> f64 {
    ((2 * n + 1) as f64 / 2.0).sqrt() * legendre(n, x).0
}

/// GLL nodal basis of degree N.
#[derive(Debug, Clone)]
pub struct NodalBasis1D {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `diff[(p, q)] = l_q'(xi_p)`.
    pub diff: Matrix,
    pub lift_left: Vec<f64>,
    pub lift_right: Vec<f64>,
    bary: Vec<f64>,
}

impl NodalBasis1D {
    #[inline(always)]
    pub fn n_nodes(&self) -> usize {
        self.degree + 1
    }

    /// All Lagrange basis values at `x`.
    pub fn lagrange_eval(&self, x: f64) -> Vec<f64> {
        let n = self.n_nodes();
        (0..n)
            .map(|p| {
                let mut v = 1.0;
                for q in 0..n {
                    if q != p {
                        v *= (x - self.nodes[q]) / (self.nodes[p] - self.nodes[q]);
                    }
                }
                v
            })
            .collect()
    }

    /// Interpolate nodal values to `x`.
    pub fn interpolate<T: Nodal>(&self, values: &[T], x: f64) -> T {
        let l = self.lagrange_eval(x);
        let mut out = T::zero();
        for (lp, v) in l.iter().zip(values) {
            out.axpy(*lp, v);
        }
        out
    }

    /// Barycentric weights `1 / prod_{q != p} (xi_p - xi_q)`.
    pub fn barycentric_weights(&self) -> &[f64] {
        &self.bary
    }
}

/// Construct the GLL basis of degree `n`.
pub fn gll_basis(n: usize) -> Result<NodalBasis1D, BasisError> {
    if !(1..=MAX_DEGREE).contains(&n) {
        return Err(BasisError::UnsupportedDegree(n));
    }
    let nn = n + 1;
    let nf = n as f64;
    let mut nodes = vec![0.0; nn];
    for (i, node) in nodes.iter_mut().enumerate() {
        // Chebyshev-Gauss-Lobatto guess, Newton on (1 - x^2) P_N'(x).
        let mut x = -(std::f64::consts::PI * i as f64 / nf).cos();
        for _ in 0..100 {
            let (pn, _) = legendre(n, x);
            let (pnm1, _) = legendre(n - 1, x);
            let dx = (x * pn - pnm1) / ((nf + 1.0) * pn);
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        *node = x;
    }
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    for i in 0..nn / 2 {
        let s = 0.5 * (nodes[n - i] - nodes[i]);
        nodes[i] = -s;
        nodes[n - i] = s;
    }
    if nn % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (pn, _) = legendre(n, x);
            2.0 / (nf * (nf + 1.0) * pn * pn)
        })
        .collect();

    let bary: Vec<f64> = (0..nn)
        .map(|p| {
            let mut prod = 1.0;
            for q in 0..nn {
                if q != p {
                    prod *= nodes[p] - nodes[q];
                }
            }
            1.0 / prod
        })
        .collect();
    let mut diff = Matrix::zeros(nn, nn);
    for p in 0..nn {
        let mut row_sum = 0.0;
        for q in 0..nn {
            if q != p {
                let v = (bary[q] / bary[p]) / (nodes[p] - nodes[q]);
                diff[(p, q)] = v;
                row_sum += v;
            }
        }
        diff[(p, p)] = -row_sum;
    }

    let mut lift_left = vec![0.0; nn];
    let mut lift_right = vec![0.0; nn];
    lift_left[0] = -1.0 / weights[0];
    lift_right[n] = 1.0 / weights[n];

    Ok(NodalBasis1D { degree: n, nodes, weights, diff, lift_left, lift_right, bary })
}

/// Inverse sub-interval map: child reference coordinate to parent reference
/// coordinate for the lower (`s = 0`) or upper (`s = 1`) half.
#[inline]
pub fn sub_to_parent(s: usize, xi: f64) -> f64 {
    if s == 0 {
        0.5 * (xi - 1.0)
    } else {
        0.5 * (xi + 1.0)
    }
}

/// Interpolation (`V_s`) and projection (`P_s`) between an interval and its
/// two halves.
///
/// `P_s` is the exact L2 projection `M^-1 B_s`, with the consistent mass
/// matrix `M` and the half-interval mixed mass matrix `B_s` integrated by
/// Gauss quadrature. It satisfies `P_0 V_0 + P_1 V_1 = I` and the weighted
/// conservation `sum_p w_p (P_s)_pq = w_q / 2` exactly. Collocated GLL
/// quadrature would give the diagonal-mass variant `lumped_projection`,
/// which only has the second property.
#[derive(Debug, Clone)]
pub struct MortarOperators1D {
    pub interp: [Matrix; 2],
    pub proj: [Matrix; 2],
}

pub fn mortar_operators(basis: &NodalBasis1D) -> MortarOperators1D {
    let nn = basis.n_nodes();
    let build_v = |s: usize| {
        let mut v = Matrix::zeros(nn, nn);
        for p in 0..nn {
            let l = basis.lagrange_eval(sub_to_parent(s, basis.nodes[p]));
            for q in 0..nn {
                v[(p, q)] = l[q];
            }
        }
        v
    };
    let interp = [build_v(0), build_v(1)];
    let (gx, gw) = gauss_legendre(nn + 1);
    let at_gauss: Vec<Vec<f64>> = gx.iter().map(|&x| basis.lagrange_eval(x)).collect();
    let mass = Matrix::from_fn(nn, nn, |p, q| (0..gx.len()).map(|k| gw[k] * at_gauss[k][p] * at_gauss[k][q]).sum());
    let build_p = |s: usize| {
        let in_parent: Vec<Vec<f64>> = gx.iter().map(|&x| basis.lagrange_eval(sub_to_parent(s, x))).collect();
        let b = Matrix::from_fn(nn, nn, |p, q| {
            0.5 * (0..gx.len()).map(|k| gw[k] * in_parent[k][p] * at_gauss[k][q]).sum::<f64>()
        });
        mass.solve(&b)
    };
    let proj = [build_p(0), build_p(1)];
    MortarOperators1D { interp, proj }
}

/// Projection with the GLL-collocated (diagonal) mass matrix,
/// `(P_s)_pq = 1/2 (w_q / w_p) l_p(phi_s^-1(xi_q))`.
pub fn lumped_projection(basis: &NodalBasis1D, s: usize) -> Matrix {
    let nn = basis.n_nodes();
    let l: Vec<Vec<f64>> = basis.nodes.iter().map(|&x| basis.lagrange_eval(sub_to_parent(s, x))).collect();
    Matrix::from_fn(nn, nn, |p, q| 0.5 * basis.weights[q] / basis.weights[p] * l[q][p])
}

/// Gauss-Legendre nodes and weights with `m` points (exact to degree
/// `2m - 1`).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut xi = -(std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, xi);
            let dx = p / dp;
            xi -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(m, xi);
        x[i] = xi;
        w[i] = 2.0 / ((1.0 - xi * xi) * dp * dp);
    }
    (x, w)
}

/// Apply `ops[d]` along dimension `d` of a nodal tensor whose extents are
/// the operators' column counts (first dimension fastest).
pub fn tensor_apply<T: Nodal>(ops: &[&Matrix], field: &[T]) -> Result<Vec<T>, BasisError> {
    let expected: usize = ops.iter().map(|a| a.cols).product();
    if expected != field.len() {
        return Err(BasisError::DimensionMismatch { expected, found: field.len() });
    }
    let mut extents: Vec<usize> = ops.iter().map(|a| a.cols).collect();
    let mut cur = field.to_vec();
    for (d, a) in ops.iter().enumerate() {
        let stride: usize = extents[..d].iter().product();
        let outer: usize = extents[d + 1..].iter().product();
        let (m, n) = (a.rows, a.cols);
        let mut next = vec![T::zero(); stride * m * outer];
        for o in 0..outer {
            for r in 0..m {
                for s in 0..stride {
                    let dst = &mut next[s + stride * (r + m * o)];
                    for c in 0..n {
                        dst.axpy(a[(r, c)], &cur[s + stride * (c + n * o)]);
                    }
                }
            }
        }
        extents[d] = m;
        cur = next;
    }
    Ok(cur)
}

/// 2-D specialisation of [`tensor_apply`] for square operators.
pub fn apply_2d<T: Nodal>(a1: &Matrix, a2: &Matrix, field: &[T]) -> Vec<T> {
    let n = a1.cols;
    debug_assert_eq!(field.len(), n * a2.cols);
    let m1 = a1.rows;
    let m2 = a2.rows;
    let mut tmp = vec![T::zero(); m1 * a2.cols];
    for j in 0..a2.cols {
        for r in 0..m1 {
            let dst = &mut tmp[r + m1 * j];
            for c in 0..n {
                dst.axpy(a1[(r, c)], &field[c + n * j]);
            }
        }
    }
    let mut out = vec![T::zero(); m1 * m2];
    for r2 in 0..m2 {
        for c2 in 0..a2.cols {
            let a = a2[(r2, c2)];
            if a == 0.0 {
                continue;
            }
            for i in 0..m1 {
                out[i + m1 * r2].axpy(a, &tmp[i + m1 * c2]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degree_nodes_and_weights() {
        let b = gll_basis(1).unwrap();
        assert_eq!(b.nodes, vec![-1.0, 1.0]);
        assert!((b.weights[0] - 1.0).abs() < 1e-15 && (b.weights[1] - 1.0).abs() < 1e-15);
        let b = gll_basis(2).unwrap();
        assert_eq!(b.nodes, vec![-1.0, 0.0, 1.0]);
        for (w, e) in b.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_unsupported_degree() {
        assert_eq!(gll_basis(0).unwrap_err(), BasisError::UnsupportedDegree(0));
        assert!(gll_basis(9).is_err());
    }

    #[test]
    fn lift_coefficient_matches_end_weight() {
        for n in 1..=MAX_DEGREE {
            let b = gll_basis(n).unwrap();
            assert!((b.lift_right[n] * b.weights[n] - 1.0).abs() < 1e-14);
            assert!((b.lift_left[0] * b.weights[0] + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn lagrange_examples() {
        let b = gll_basis(1).unwrap();
        let l = b.lagrange_eval(0.5);
        assert!((l[0] - 0.25).abs() < 1e-15 && (l[1] - 0.75).abs() < 1e-15);
        let b = gll_basis(2).unwrap();
        assert_eq!(b.lagrange_eval(0.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn tensor_apply_rejects_bad_shape() {
        let i = Matrix::identity(3);
        assert!(tensor_apply(&[&i, &i], &[0.0; 8]).is_err());
    }
}
