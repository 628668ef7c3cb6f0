//! Composite kernel evaluation by recursion over the expression tree.
//!
//! Leaves evaluate a one-dimensional base kernel on their own input column;
//! `ADD` sums child matrices and `MULT` multiplies them elementwise.

use crate::error::{Error, Result};
use crate::gp::params::HyperParams;
use crate::grammar::{ExprTree, KernelFamily, Operator};
use crate::linalg::Matrix;
use crate::scalar::{lit, Scalar};

/// Base kernel value. `p` holds the leaf's parameters in slot order.
#[inline]
pub fn base_kernel<T: Scalar>(family: KernelFamily, p: &[T], x: T, y: T) -> T {
    let half: T = lit(0.5);
    match family {
        KernelFamily::Se => {
            let r = (x - y) / p[1];
            p[0] * (-half * r * r).exp()
        }
        KernelFamily::Per => {
            let s = (T::PI() * (x - y).abs() / p[2]).sin() / p[1];
            p[0] * (-half * s * s).exp()
        }
        KernelFamily::Lin => p[0] * x * y + p[1],
        KernelFamily::Rq => {
            let r2 = (x - y) * (x - y);
            let q = T::one() + r2 / (lit::<T>(2.0) * p[2] * p[1] * p[1]);
            p[0] * q.powf(-p[2])
        }
    }
}

/// Base kernel value and its derivatives with respect to each parameter,
/// written to `d`.
#[inline]
fn base_kernel_grad<T: Scalar>(family: KernelFamily, p: &[T], x: T, y: T, d: &mut [T]) -> T {
    let half: T = lit(0.5);
    match family {
        KernelFamily::Se => {
            let (v, l) = (p[0], p[1]);
            let r2 = (x - y) * (x - y);
            let e = (-half * r2 / (l * l)).exp();
            let k = v * e;
            d[0] = e;
            d[1] = k * r2 / (l * l * l);
            k
        }
        KernelFamily::Per => {
            let (v, l, per) = (p[0], p[1], p[2]);
            let a = T::PI() * (x - y).abs() / per;
            let (s, c) = a.sin_cos();
            let e = (-half * s * s / (l * l)).exp();
            let k = v * e;
            d[0] = e;
            d[1] = k * s * s / (l * l * l);
            d[2] = k * s * c * a / (l * l * per);
            k
        }
        KernelFamily::Lin => {
            d[0] = x * y;
            d[1] = T::one();
            p[0] * x * y + p[1]
        }
        KernelFamily::Rq => {
            let (v, l, alpha) = (p[0], p[1], p[2]);
            let r2 = (x - y) * (x - y);
            let q = T::one() + r2 / (lit::<T>(2.0) * alpha * l * l);
            let lq = q.ln();
            let qa = (-alpha * lq).exp();
            let k = v * qa;
            d[0] = qa;
            d[1] = k * r2 / (q * l * l * l);
            d[2] = k * ((q - T::one()) / q - lq);
            k
        }
    }
}

fn check_inputs<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, inputs: &[&Matrix<T>]) -> Result<()> {
    params.layout().check_tree(tree)?;
    let needed = tree.leaves().iter().map(|l| l.dim + 1).max().unwrap_or(0);
    for m in inputs {
        if m.cols() < needed {
            return Err(Error::DimensionMismatch { needed, got: m.cols() });
        }
    }
    Ok(())
}

/// Kernel matrix `k(A, B)` of shape `|A|×|B|`.
pub fn eval_composite_kernel<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    check_inputs(tree, params, &[a, b])?;
    let mut cursor = 0;
    Ok(eval_rec(tree, params.kernel_values(), &mut cursor, a, b))
}

fn eval_rec<T: Scalar>(tree: &ExprTree, vals: &[T], cursor: &mut usize, a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    match tree {
        ExprTree::Leaf(base) => {
            let m = crate::gp::params::ParamKind::for_family(base.family).len();
            let p = &vals[*cursor..*cursor + m];
            *cursor += m;
            Matrix::from_fn(a.rows(), b.rows(), |i, j| base_kernel(base.family, p, a[(i, base.dim)], b[(j, base.dim)]))
        }
        ExprTree::Node(n) => {
            let mut l = eval_rec(n.left(), vals, cursor, a, b);
            let r = eval_rec(n.right(), vals, cursor, a, b);
            match n.op() {
                Operator::Add => l.add_assign(&r),
                Operator::Mult => l.mul_assign_elementwise(&r),
            }
            l
        }
    }
}

/// Prior variances `k(x, x)` for each row of `a`.
pub fn kernel_diagonal<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, a: &Matrix<T>) -> Result<Vec<T>> {
    check_inputs(tree, params, &[a])?;
    Ok((0..a.rows())
        .map(|i| {
            let row = Matrix::from_vec(1, a.cols(), a.row(i).to_vec());
            let mut cursor = 0;
            eval_rec(tree, params.kernel_values(), &mut cursor, &row, &row)[(0, 0)]
        })
        .collect())
}

/// Symmetric kernel matrix `k(X, X)` and its derivative with respect to
/// every kernel slot (noise excluded), in slot order.
#[derive(Clone, Debug)]
pub struct KernelGradients<T> {
    pub value: Matrix<T>,
    pub grads: Vec<Matrix<T>>,
}

pub fn kernel_with_gradients<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, x: &Matrix<T>) -> Result<KernelGradients<T>> {
    let packed = packed_kernel_with_gradients(tree, params, x)?;
    let n = x.rows();
    Ok(KernelGradients { value: packed.value.unpack(n), grads: packed.grads.iter().map(|g| g.unpack(n)).collect() })
}

/// Lower triangle of a symmetric matrix, row by row: entry `(i, j)` with
/// `j ≤ i` lives at `i(i+1)/2 + j`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Packed<T>(pub(crate) Vec<T>);

impl<T: Scalar> Packed<T> {
    pub(crate) fn unpack(&self, n: usize) -> Matrix<T> {
        let mut m = Matrix::zeros(n, n);
        let s = m.as_mut_slice();
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                s[i * n + j] = self.0[idx];
                s[j * n + i] = self.0[idx];
                idx += 1;
            }
        }
        m
    }

    fn add_assign(&mut self, o: &Self) {
        for (a, &b) in self.0.iter_mut().zip(&o.0) {
            *a += b;
        }
    }

    fn mul_assign(&mut self, o: &Self) {
        for (a, &b) in self.0.iter_mut().zip(&o.0) {
            *a *= b;
        }
    }
}

pub(crate) struct PackedGradients<T> {
    pub(crate) value: Packed<T>,
    pub(crate) grads: Vec<Packed<T>>,
}

pub(crate) fn packed_kernel_with_gradients<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, x: &Matrix<T>) -> Result<PackedGradients<T>> {
    check_inputs(tree, params, &[x])?;
    let mut cursor = 0;
    let (value, grads) = grad_rec(tree, params.kernel_values(), &mut cursor, x);
    Ok(PackedGradients { value, grads })
}

fn grad_rec<T: Scalar>(tree: &ExprTree, vals: &[T], cursor: &mut usize, x: &Matrix<T>) -> (Packed<T>, Vec<Packed<T>>) {
    match tree {
        ExprTree::Leaf(base) => {
            let m = crate::gp::params::ParamKind::for_family(base.family).len();
            let p = &vals[*cursor..*cursor + m];
            *cursor += m;
            let n = x.rows();
            let len = n * (n + 1) / 2;
            let mut value = Vec::with_capacity(len);
            let mut grads: Vec<Vec<T>> = (0..m).map(|_| Vec::with_capacity(len)).collect();
            let mut d = [T::zero(); 3];
            for i in 0..n {
                let xi = x[(i, base.dim)];
                for j in 0..=i {
                    value.push(base_kernel_grad(base.family, p, xi, x[(j, base.dim)], &mut d));
                    for (g, &dv) in grads.iter_mut().zip(&d[..m]) {
                        g.push(dv);
                    }
                }
            }
            (Packed(value), grads.into_iter().map(Packed).collect())
        }
        ExprTree::Node(n) => {
            let (mut lv, mut lg) = grad_rec(n.left(), vals, cursor, x);
            let (rv, mut rg) = grad_rec(n.right(), vals, cursor, x);
            match n.op() {
                Operator::Add => lv.add_assign(&rv),
                Operator::Mult => {
                    for g in &mut lg {
                        g.mul_assign(&rv);
                    }
                    for g in &mut rg {
                        g.mul_assign(&lv);
                    }
                    lv.mul_assign(&rv);
                }
            }
            lg.append(&mut rg);
            (lv, lg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::params::{ParamLayout, PriorConfig};

    fn params(tree: &ExprTree, vals: Vec<f64>) -> HyperParams<f64> {
        HyperParams::new(ParamLayout::for_tree(tree, &PriorConfig::default()), vals).unwrap()
    }

    fn column(xs: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn se_at_zero_distance_is_variance() {
        let t: ExprTree = "SE0".parse().unwrap();
        let p = params(&t, vec![1.7, 0.3, 0.1]);
        let x = column(&[0.42]);
        assert_eq!(eval_composite_kernel(&t, &p, &x, &x).unwrap()[(0, 0)], 1.7);
    }

    #[test]
    fn per_is_periodic() {
        let t: ExprTree = "PER0".parse().unwrap();
        let p = params(&t, vec![0.8, 0.5, 0.25, 0.1]);
        let k = eval_composite_kernel(&t, &p, &column(&[0.1]), &column(&[0.35])).unwrap();
        assert!((k[(0, 0)] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn rq_approaches_se_for_large_alpha() {
        let se: ExprTree = "SE0".parse().unwrap();
        let rq: ExprTree = "RQ0".parse().unwrap();
        let a = column(&[0.0, 0.3]);
        let ks = eval_composite_kernel(&se, &params(&se, vec![1.0, 0.2, 0.1]), &a, &a).unwrap();
        let kr = eval_composite_kernel(&rq, &params(&rq, vec![1.0, 0.2, 1e7, 0.1]), &a, &a).unwrap();
        assert!((ks[(0, 1)] - kr[(0, 1)]).abs() < 1e-6);
    }

    #[test]
    fn operators_combine_children() {
        let t: ExprTree = "SE0 + LIN0".parse().unwrap();
        let m: ExprTree = "SE0 * LIN0".parse().unwrap();
        let se: ExprTree = "SE0".parse().unwrap();
        let lin: ExprTree = "LIN0".parse().unwrap();
        let a = column(&[0.0, 0.2, 0.9]);
        let b = column(&[0.5, 0.7]);
        let ks = eval_composite_kernel(&se, &params(&se, vec![1.3, 0.4, 0.1]), &a, &b).unwrap();
        let kl = eval_composite_kernel(&lin, &params(&lin, vec![0.6, 0.2, 0.1]), &a, &b).unwrap();
        let add = eval_composite_kernel(&t, &params(&t, vec![1.3, 0.4, 0.6, 0.2, 0.1]), &a, &b).unwrap();
        let mul = eval_composite_kernel(&m, &params(&m, vec![1.3, 0.4, 0.6, 0.2, 0.1]), &a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((add[(i, j)] - (ks[(i, j)] + kl[(i, j)])).abs() <= 1e-15);
                assert!((mul[(i, j)] - ks[(i, j)] * kl[(i, j)]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn leaves_read_their_own_dimension() {
        let t: ExprTree = "SE1".parse().unwrap();
        let p = params(&t, vec![1.0, 0.5, 0.1]);
        let a = Matrix::from_rows(&[vec![0.0, 0.2], vec![0.9, 0.2]]);
        let k = eval_composite_kernel(&t, &p, &a, &a).unwrap();
        assert_eq!(k[(0, 1)], 1.0);
        let narrow = column(&[0.1]);
        assert!(matches!(eval_composite_kernel(&t, &p, &narrow, &narrow), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let t: ExprTree = "SE0".parse().unwrap();
        let other: ExprTree = "LIN0".parse().unwrap();
        let p = params(&other, vec![1.0, 0.5, 0.1]);
        let a = column(&[0.1]);
        assert!(matches!(eval_composite_kernel(&t, &p, &a, &a), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t: ExprTree = "(SE0 * PER0) + (RQ0 * LIN0)".parse().unwrap();
        let vals = vec![1.1, 0.3, 0.7, 0.6, 0.4, 0.9, 0.25, 1.7, 0.5, 0.2, 0.05];
        let x = column(&[0.0, 0.13, 0.5, 0.77]);
        let p = params(&t, vals.clone());
        let kg = kernel_with_gradients(&t, &p, &x).unwrap();
        let direct = eval_composite_kernel(&t, &p, &x, &x).unwrap();
        for (a, b) in kg.value.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(kg.grads.len(), vals.len() - 1);
        for s in 0..kg.grads.len() {
            let h = 1e-6;
            let mut up = vals.clone();
            up[s] += h;
            let mut dn = vals.clone();
            dn[s] -= h;
            let ku = eval_composite_kernel(&t, &params(&t, up), &x, &x).unwrap();
            let kd = eval_composite_kernel(&t, &params(&t, dn), &x, &x).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let fd = (ku[(i, j)] - kd[(i, j)]) / (2.0 * h);
                    assert!((fd - kg.grads[s][(i, j)]).abs() < 1e-7, "slot {s} ({i},{j}): {fd} vs {}", kg.grads[s][(i, j)]);
                }
            }
        }
    }

    #[test]
    fn diagonal_matches_matrix() {
        let t: ExprTree = "(SE0 + LIN0) * PER0".parse().unwrap();
        let p = params(&t, vec![1.0, 0.3, 0.5, 0.1, 0.7, 0.4, 0.3, 0.01]);
        let x = column(&[0.1, 0.6, 1.3]);
        let k = eval_composite_kernel(&t, &p, &x, &x).unwrap();
        let d = kernel_diagonal(&t, &p, &x).unwrap();
        for i in 0..3 {
            assert!((k[(i, i)] - d[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let t: ExprTree = "SE0 * LIN0".parse().unwrap();
        let layout = ParamLayout::for_tree(&t, &PriorConfig::default());
        let p = HyperParams::<f32>::new(layout, vec![1.0, 0.5, 0.3, 0.1, 0.01]).unwrap();
        let x = Matrix::from_vec(2, 1, vec![0.2f32, 0.4]);
        let k = eval_composite_kernel(&t, &p, &x, &x).unwrap();
        assert!(k.asymmetry() == 0.0);
    }
}
