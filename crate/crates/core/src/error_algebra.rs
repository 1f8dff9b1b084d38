//! Finite-dimensional error structures.
//!
//! An [`ErrorVector`] carries values together with the covariance of their
//! infinitesimal errors (`gamma`) and the error biases. Pushing it through a
//! twice-differentiable map transports variances by the first-order rule and
//! biases by the second-order rule:
//!
//! ```text
//! gamma' = J gamma J^T
//! bias'_r = sum_i dF_r/dx_i bias_i + 1/2 sum_ij d2F_r/dx_i dx_j gamma_ij
//! ```
//!
//! The module also carries the one-dimensional Ornstein-Uhlenbeck generator
//! and the perturbation that generates its semigroup.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};

/// Relative slack on the smallest eigenvalue when checking positive
/// semidefiniteness: `lambda_min >= -PSD_TOLERANCE * trace`.
pub const PSD_TOLERANCE: f64 = 1e-12;

type ValueFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacobianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type HessianFn = dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync;

/// A map `R^m -> R^k` with caller-supplied first and second derivatives.
#[derive(Clone)]
pub struct SmoothMap {
    inputs: usize,
    outputs: usize,
    value: Arc<ValueFn>,
    jacobian: Arc<JacobianFn>,
    hessians: Arc<HessianFn>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .finish_non_exhaustive()
    }
}

impl SmoothMap {
    /// `jacobian` returns a `k x m` matrix; `hessians` returns one `m x m`
    /// matrix per output.
    pub fn new<V, J, H>(inputs: usize, outputs: usize, value: V, jacobian: J, hessians: H) -> Self
    where
        V: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        SmoothMap {
            inputs,
            outputs,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            hessians: Arc::new(hessians),
        }
    }

    /// A scalar function of one variable from `f`, `f'`, `f''`.
    pub fn scalar<F, D1, D2>(f: F, d1: D1, d2: D2) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        SmoothMap::new(
            1,
            1,
            move |x| vec![f(x[0])],
            move |x| DMatrix::from_element(1, 1, d1(x[0])),
            move |x| vec![DMatrix::from_element(1, 1, d2(x[0]))],
        )
    }

    pub fn identity(dim: usize) -> Self {
        SmoothMap::new(
            dim,
            dim,
            |x| x.to_vec(),
            move |_| DMatrix::identity(dim, dim),
            move |_| vec![DMatrix::zeros(dim, dim); dim],
        )
    }

    /// A linear map `x -> A x` (second derivatives vanish).
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let (outputs, inputs) = matrix.shape();
        let a = matrix.clone();
        SmoothMap::new(
            inputs,
            outputs,
            move |x| (&a * DVector::from_column_slice(x)).iter().copied().collect(),
            move |_| matrix.clone(),
            move |_| vec![DMatrix::zeros(inputs, inputs); outputs],
        )
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.value)(x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    pub fn hessians(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        (self.hessians)(x)
    }

    /// `self ∘ inner`, with derivatives assembled by the chain rule.
    pub fn compose(&self, inner: &SmoothMap) -> Result<SmoothMap> {
        if inner.outputs != self.inputs {
            return Err(Error::Dimension(format!(
                "cannot compose {}->{} after {}->{}",
                self.inputs, self.outputs, inner.inputs, inner.outputs
            )));
        }
        let (f, g) = (self.clone(), inner.clone());
        let (f1, g1) = (self.clone(), inner.clone());
        let (f2, g2) = (self.clone(), inner.clone());
        Ok(SmoothMap::new(
            inner.inputs,
            self.outputs,
            move |x| f.eval(&g.eval(x)),
            move |x| f1.jacobian(&g1.eval(x)) * g1.jacobian(x),
            move |x| {
                let y = g2.eval(x);
                let jg = g2.jacobian(x);
                let hg = g2.hessians(x);
                let jf = f2.jacobian(&y);
                f2.hessians(&y)
                    .iter()
                    .enumerate()
                    .map(|(r, hf)| {
                        let mut h = jg.transpose() * hf * &jg;
                        for (a, hga) in hg.iter().enumerate() {
                            h += hga * jf[(r, a)];
                        }
                        h
                    })
                    .collect()
            },
        ))
    }

    /// Compares supplied derivatives with central finite differences at each
    /// probe point: first derivatives against differences of the value,
    /// second derivatives against differences of the supplied first
    /// derivatives.
    pub fn check_derivatives(&self, probes: &[Vec<f64>], rel_tol: f64) -> Result<()> {
        for p in probes {
            if p.len() != self.inputs {
                return Err(Error::Dimension(format!(
                    "probe of length {} for a map with {} inputs",
                    p.len(),
                    self.inputs
                )));
            }
            let jac = self.jacobian(p);
            let hes = self.hessians(p);
            for i in 0..self.inputs {
                let h = 1e-5 * p[i].abs().max(1.0);
                let mut up = p.clone();
                let mut dn = p.clone();
                up[i] += h;
                dn[i] -= h;
                let (fu, fd) = (self.eval(&up), self.eval(&dn));
                let (ju, jd) = (self.jacobian(&up), self.jacobian(&dn));
                for r in 0..self.outputs {
                    let fd1 = (fu[r] - fd[r]) / (2.0 * h);
                    compare(&format!("d F{r}/dx{i}"), p, jac[(r, i)], fd1, rel_tol)?;
                    for j in 0..self.inputs {
                        let fd2 = (ju[(r, j)] - jd[(r, j)]) / (2.0 * h);
                        compare(
                            &format!("d2 F{r}/dx{j}dx{i}"),
                            p,
                            hes[r][(j, i)],
                            fd2,
                            rel_tol,
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn compare(name: &str, point: &[f64], supplied: f64, fd: f64, rel_tol: f64) -> Result<()> {
    let scale = supplied.abs().max(fd.abs()).max(1.0);
    if !supplied.is_finite() || (supplied - fd).abs() > rel_tol * scale {
        return Err(Error::DerivativeMismatch {
            name: name.to_string(),
            point: point.to_vec(),
            supplied,
            finite_difference: fd,
        });
    }
    Ok(())
}

/// Erroneous quantities: values, error covariance and error bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector {
    values: DVector<f64>,
    gamma: DMatrix<f64>,
    bias: DVector<f64>,
}

impl ErrorVector {
    pub fn new(values: DVector<f64>, gamma: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let m = values.len();
        if gamma.shape() != (m, m) || bias.len() != m {
            return Err(Error::Dimension(format!(
                "values {m}, gamma {:?}, bias {}",
                gamma.shape(),
                bias.len()
            )));
        }
        if values.iter().chain(gamma.iter()).chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("error vector".into()));
        }
        let asym = (&gamma - gamma.transpose()).amax();
        if asym > 1e-12 * gamma.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("gamma is not symmetric".into()));
        }
        check_psd(&gamma)?;
        Ok(ErrorVector { values, gamma, bias })
    }

    pub fn scalar(value: f64, gamma: f64, bias: f64) -> Result<Self> {
        ErrorVector::new(
            DVector::from_element(1, value),
            DMatrix::from_element(1, 1, gamma),
            DVector::from_element(1, bias),
        )
    }

    /// Independent components: diagonal gamma.
    pub fn independent(values: &[f64], variances: &[f64], biases: &[f64]) -> Result<Self> {
        ErrorVector::new(
            DVector::from_column_slice(values),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
            DVector::from_column_slice(biases),
        )
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }
}

fn check_psd(gamma: &DMatrix<f64>) -> Result<()> {
    if gamma.nrows() == 0 {
        return Ok(());
    }
    let trace = gamma.trace();
    let min = SymmetricEigen::new(gamma.clone()).eigenvalues.min();
    if min < -PSD_TOLERANCE * trace.abs() {
        return Err(Error::InvalidArgument(format!(
            "gamma is not positive semidefinite (min eigenvalue {min:e}, trace {trace:e})"
        )));
    }
    Ok(())
}

/// Transports values, error covariance and error bias through `map`.
pub fn propagate(map: &SmoothMap, input: &ErrorVector) -> Result<ErrorVector> {
    if map.inputs() != input.dim() {
        return Err(Error::Dimension(format!(
            "map takes {} inputs, error vector has {}",
            map.inputs(),
            input.dim()
        )));
    }
    let x = input.values.as_slice();
    let values = map.eval(x);
    let jac = map.jacobian(x);
    let hes = map.hessians(x);
    if values.len() != map.outputs()
        || jac.shape() != (map.outputs(), map.inputs())
        || hes.len() != map.outputs()
        || hes.iter().any(|h| h.shape() != (map.inputs(), map.inputs()))
    {
        return Err(Error::Dimension("map derivatives have inconsistent shapes".into()));
    }
    if values.iter().chain(jac.iter()).any(|v| !v.is_finite())
        || hes.iter().any(|h| h.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("map value or derivatives".into()));
    }

    let raw = &jac * &input.gamma * jac.transpose();
    let gamma = (&raw + raw.transpose()) * 0.5;
    let first_order = &jac * &input.bias;
    let bias = DVector::from_iterator(
        map.outputs(),
        hes.iter()
            .enumerate()
            .map(|(r, h)| first_order[r] + 0.5 * h.component_mul(&input.gamma).sum()),
    );
    ErrorVector::new(DVector::from_vec(values), gamma, bias)
}

/// Generator of the one-dimensional Ornstein-Uhlenbeck structure:
/// `A f(x) = f''(x)/2 - x f'(x)/2`.
pub fn ou_generator(f: &SmoothMap, x: f64) -> Result<f64> {
    if f.inputs() != 1 || f.outputs() != 1 {
        return Err(Error::Dimension("ou_generator needs a 1 -> 1 map".into()));
    }
    let d1 = f.jacobian(&[x])[(0, 0)];
    let d2 = f.hessians(&[x])[0][(0, 0)];
    ensure_finite(0.5 * d2 - 0.5 * x * d1, "OU generator")
}

/// One draw of the Ornstein-Uhlenbeck perturbation after time `eps`:
/// `exp(-eps/2) x + sqrt(1 - exp(-eps)) noise`.
pub fn perturb_ou(x: f64, eps: f64, noise: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    // -expm1(-eps) keeps precision for small eps
    Ok((-0.5 * eps).exp() * x + (-(-eps).exp_m1()).sqrt() * noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn square() -> SmoothMap {
        SmoothMap::scalar(|x| x * x, |x| 2.0 * x, |_| 2.0)
    }

    fn cubic_poly(c: [f64; 4]) -> SmoothMap {
        SmoothMap::scalar(
            move |x| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x,
            move |x| c[1] + 2.0 * c[2] * x + 3.0 * c[3] * x * x,
            move |x| 2.0 * c[2] + 6.0 * c[3] * x,
        )
    }

    #[test]
    fn identity_preserves_input() {
        let e = ErrorVector::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
            DVector::from_vec(vec![0.01, -0.02]),
        )
        .unwrap();
        assert_eq!(propagate(&SmoothMap::identity(2), &e).unwrap(), e);
    }

    #[test]
    fn square_of_unit_value() {
        let out = propagate(&square(), &ErrorVector::scalar(1.0, 0.04, 0.0).unwrap()).unwrap();
        assert_eq!(out.values()[0], 1.0);
        assert!((out.gamma()[(0, 0)] - 0.16).abs() < 1e-15);
        assert!((out.bias()[0] - 0.04).abs() < 1e-15);
    }

    /// Perturbation oracle: X = x + eps G, F(X) = X^2 gives
    /// Var = 4 x^2 eps^2 + 2 eps^4 and E F - F(x) = eps^2, i.e. the
    /// recursions up to O(eps^4).
    #[test]
    fn square_matches_perturbation_oracle() {
        let eps: f64 = 0.2;
        let out = propagate(&square(), &ErrorVector::scalar(1.0, eps * eps, 0.0).unwrap()).unwrap();
        let exact_var = 4.0 * eps.powi(2) + 2.0 * eps.powi(4);
        assert!((out.gamma()[(0, 0)] - exact_var).abs() <= 2.0 * eps.powi(4) + 1e-15);
        assert!((out.bias()[0] - eps * eps).abs() < 1e-15);
    }

    #[test]
    fn sum_of_independent_errors() {
        let (s, t, p, q) = (0.3, 0.4, 0.01, -0.05);
        let sum = SmoothMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let e = ErrorVector::independent(&[2.0, 5.0], &[s * s, t * t], &[p, q]).unwrap();
        let out = propagate(&sum, &e).unwrap();
        assert_eq!(out.values()[0], 7.0);
        assert!((out.gamma()[(0, 0)] - (s * s + t * t)).abs() < 1e-15);
        assert!((out.bias()[0] - (p + q)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatches() {
        let e = ErrorVector::scalar(1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            propagate(&SmoothMap::identity(2), &e),
            Err(Error::Dimension(_))
        ));
        let bad = SmoothMap::scalar(|x| x, |_| f64::NAN, |_| 0.0);
        assert!(matches!(propagate(&bad, &e), Err(Error::NonFinite(_))));
        assert!(ErrorVector::scalar(1.0, -1.0, 0.0).is_err());
        assert!(ErrorVector::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .is_err());
    }

    #[test]
    fn derivative_check_catches_wrong_derivative() {
        let probes: Vec<Vec<f64>> = [-1.5, 0.0, 0.7, 3.0].iter().map(|&x| vec![x]).collect();
        square().check_derivatives(&probes, 1e-5).unwrap();
        let wrong = SmoothMap::scalar(|x| x * x, |x| 2.0 * x + 1e-3, |_| 2.0);
        assert!(matches!(
            wrong.check_derivatives(&probes, 1e-5),
            Err(Error::DerivativeMismatch { .. })
        ));
        let wrong2 = SmoothMap::scalar(|x| x * x, |x| 2.0 * x, |_| 2.1);
        assert!(wrong2.check_derivatives(&probes, 1e-5).is_err());
    }

    #[test]
    fn composed_map_passes_derivative_check() {
        let f = SmoothMap::new(
            2,
            1,
            |x| vec![x[0] * x[1] + x[1].powi(3)],
            |x| DMatrix::from_row_slice(1, 2, &[x[1], x[0] + 3.0 * x[1] * x[1]]),
            |x| vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 6.0 * x[1]])],
        );
        let g = SmoothMap::new(
            1,
            2,
            |x| vec![x[0] * x[0], 2.0 * x[0] - x[0].powi(3)],
            |x| DMatrix::from_row_slice(2, 1, &[2.0 * x[0], 2.0 - 3.0 * x[0] * x[0]]),
            |x| {
                vec![
                    DMatrix::from_element(1, 1, 2.0),
                    DMatrix::from_element(1, 1, -6.0 * x[0]),
                ]
            },
        );
        let probes = vec![vec![0.3], vec![-1.2], vec![2.0]];
        f.compose(&g).unwrap().check_derivatives(&probes, 1e-5).unwrap();
    }

    #[test]
    fn ou_generator_examples() {
        let one = SmoothMap::scalar(|_| 1.0, |_| 0.0, |_| 0.0);
        assert_eq!(ou_generator(&one, 3.7).unwrap(), 0.0);
        let id = SmoothMap::scalar(|x| x, |_| 1.0, |_| 0.0);
        assert_eq!(ou_generator(&id, 2.0).unwrap(), -1.0);
        assert_eq!(ou_generator(&square(), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn perturb_ou_examples() {
        assert_eq!(perturb_ou(3.5, 0.0, 17.0).unwrap(), 3.5);
        assert_eq!(perturb_ou(0.0, f64::INFINITY, -0.8).unwrap(), -0.8);
        assert!(perturb_ou(1.0, -1e-3, 0.0).is_err());
        assert!(perturb_ou(1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn perturbation_variance_matches_closed_form() {
        let eps: f64 = 0.01;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = 0.4;
        let diffs: Vec<f64> = (0..1_000_000)
            .map(|_| perturb_ou(x, eps, StandardNormal.sample(&mut rng)).unwrap() - x)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = -(-eps).exp_m1();
        assert!((expected - 0.00995017).abs() < 1e-8);
        // chi-square: sd of the sample variance is var * sqrt(2/n)
        assert!((var - expected).abs() < 3.0 * expected * (2.0 / n).sqrt());
    }

    #[test]
    fn perturbation_preserves_standard_normal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        let eps = 0.3;
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let g: f64 = StandardNormal.sample(&mut rng);
                perturb_ou(x, eps, g).unwrap()
            })
            .collect();
        // raw moments of N(0,1) and the variances of their estimators
        let targets = [(1, 0.0, 1.0), (2, 1.0, 2.0), (3, 0.0, 15.0), (4, 3.0, 96.0)];
        for (k, m, v) in targets {
            let est = ys.iter().map(|y| y.powi(k)).sum::<f64>() / n as f64;
            let se = (v / n as f64).sqrt();
            assert!((est - m).abs() < 3.0 * se, "moment {k}: {est} vs {m}");
        }
    }

    proptest! {
        #[test]
        fn output_gamma_is_psd(
            v in prop::collection::vec(-3.0f64..3.0, 3),
            l in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            // gamma = L L^T with L lower triangular
            let lo = DMatrix::from_row_slice(3, 3, &[l[0], 0.0, 0.0, l[1], l[2], 0.0, l[3], l[4], l[5]]);
            let g = &lo * lo.transpose();
            let e = ErrorVector::new(DVector::from_column_slice(&v), g, DVector::zeros(3)).unwrap();
            let f = SmoothMap::new(
                3,
                2,
                |x| vec![x[0] * x[1], x[2].sin()],
                |x| DMatrix::from_row_slice(2, 3, &[x[1], x[0], 0.0, 0.0, 0.0, x[2].cos()]),
                |x| vec![
                    DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                    DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -x[2].sin()]),
                ],
            );
            let out = propagate(&f, &e).unwrap();
            let gm = out.gamma();
            prop_assert_eq!(gm, &gm.transpose());
            let min = SymmetricEigen::new(gm.clone()).eigenvalues.min();
            prop_assert!(min >= -PSD_TOLERANCE * gm.trace());
        }

        #[test]
        fn chain_rule_composition(
            cf in prop::array::uniform4(-2.0f64..2.0),
            cg in prop::array::uniform4(-2.0f64..2.0),
            x in -2.0f64..2.0,
            var in 0.0f64..0.5,
            bias in -0.1f64..0.1,
        ) {
            let (f, g) = (cubic_poly(cf), cubic_poly(cg));
            let e = ErrorVector::scalar(x, var, bias).unwrap();
            let direct = propagate(&f.compose(&g).unwrap(), &e).unwrap();
            let staged = propagate(&f, &propagate(&g, &e).unwrap()).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0);
            prop_assert!(close(direct.values()[0], staged.values()[0]));
            prop_assert!(close(direct.gamma()[(0, 0)], staged.gamma()[(0, 0)]));
            prop_assert!(close(direct.bias()[0], staged.bias()[0]));
        }

        #[test]
        fn first_order_variance_law(c in prop::array::uniform4(-2.0f64..2.0), x in -2.0f64..2.0, var in 0.0f64..1.0) {
            let f = cubic_poly(c);
            let out = propagate(&f, &ErrorVector::scalar(x, var, 0.0).unwrap()).unwrap();
            let d1 = c[1] + 2.0 * c[2] * x + 3.0 * c[3] * x * x;
            prop_assert_eq!(out.gamma()[(0, 0)], d1 * var * d1);
        }
    }
}
