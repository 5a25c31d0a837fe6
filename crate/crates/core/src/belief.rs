//! Joint Gaussian belief over item values on a rectangular grid.
//!
//! The prior is a Gaussian Markov random field: every item carries an anchor
//! term `1/anchor_variance` on the precision diagonal and every pair of grid
//! neighbours is coupled by a difference term with variance
//! `dependency_variance`. The covariance is the dense inverse of that
//! precision matrix. Observations are scalar Gaussian and are folded in with
//! the rank-one Kalman update.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_laguerre, GaussHermite};
use crate::voi::Candidate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    /// Grid coordinates of the item (x along columns, y along rows).
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementType {
    pub cost: f64,
    pub noise_variance: f64,
}

impl MeasurementType {
    pub fn new(cost: f64, noise_variance: f64) -> Result<Self> {
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(Error::invalid("cost", format!("must be > 0, got {cost}")));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid(
                "noise_variance",
                format!("must be > 0, got {noise_variance}"),
            ));
        }
        Ok(Self {
            cost,
            noise_variance,
        })
    }
}

/// Utility applied to an item's value: identity or `tanh(scale * (z - shift))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFn {
    Identity,
    Tanh { scale: f64, shift: f64 },
}

impl UtilityFn {
    pub fn tanh(scale: f64, shift: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !shift.is_finite() {
            return Err(Error::invalid(
                "utility_scale",
                format!("tanh utility needs a finite scale > 0, got {scale}"),
            ));
        }
        Ok(UtilityFn::Tanh { scale, shift })
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            UtilityFn::Identity => z,
            UtilityFn::Tanh { scale, shift } => fast_tanh(scale * (z - shift)),
        }
    }

    /// `E[u(Z)]` for `Z ~ N(mean, sd^2)`; exact for the identity.
    #[inline]
    pub fn expect(&self, mean: f64, sd: f64, gh: &GaussHermite) -> f64 {
        match *self {
            UtilityFn::Identity => mean,
            UtilityFn::Tanh { scale, shift } => {
                expected_tanh(scale * (mean - shift), scale * sd, gh)
            }
        }
    }
}

/// Spread above which `E[tanh]` switches from Gauss–Hermite to the
/// sign-plus-remainder form below.
const WIDE_TANH: f64 = 0.7;
const LAGUERRE_NODES: usize = 24;

/// Node `t_i` and weight `w_i * 2 / (1 + e^{-t_i})` of the Laguerre rule.
fn tanh_remainder_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let (t, w) = gauss_laguerre(LAGUERRE_NODES);
        t.into_iter()
            .zip(w)
            .map(|(t, w)| (t, w * 2.0 / (1.0 + (-t).exp())))
            .collect()
    })
}

/// `E[tanh(m + tau Z)]` for standard normal `Z`.
///
/// For wide distributions the integrand is a near-step whose complex poles
/// sit close to the real axis in `Z`, and Gauss–Hermite converges slowly.
/// Instead write `tanh x = sgn x - sgn x * 2 e^{-2|x|} / (1 + e^{-2|x|})`:
/// the sign term is `erf(m / (tau sqrt 2))` and the odd remainder, folded
/// onto `x > 0`, is a Laguerre integral in `t = 2x`.
fn expected_tanh(m: f64, tau: f64, gh: &GaussHermite) -> f64 {
    if tau <= WIDE_TANH {
        return gh.expect(m, tau, fast_tanh);
    }
    let scale = 1.0 / (tau * (2.0 * PI).sqrt());
    let inv_var = 0.5 / (tau * tau);
    let remainder: f64 = tanh_remainder_rule()
        .iter()
        .map(|&(t, a)| {
            let x = 0.5 * t;
            a * ((-(x - m) * (x - m) * inv_var).exp() - (-(x + m) * (x + m) * inv_var).exp())
        })
        .sum();
    libm::erf(m / (tau * SQRT_2)) - 0.5 * scale * remainder
}

/// `tanh` through a single `exp_m1`, a few times cheaper than `f64::tanh`
/// and within a few ulps of it.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let t = (2.0 * x).exp_m1();
    t / (t + 2.0)
}

/// A measurement-selection instance. The true item values are hidden from
/// selection policies; only the simulator and the final scoring read them.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub items: Vec<Item>,
    true_values: Vec<f64>,
    pub measurement_types: Vec<MeasurementType>,
    pub utility: UtilityFn,
    pub budget: f64,
    pub grid_shape: (usize, usize),
    pub grid_step: (f64, f64),
    pub dependency_variance: f64,
    pub anchor_variance: f64,
    pub anchor_mean: f64,
    pub quadrature_nodes: usize,
}

/// Everything about a problem except the grid contents.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParams {
    pub measurement_types: Vec<MeasurementType>,
    pub utility: UtilityFn,
    pub budget: f64,
    pub dependency_variance: f64,
    pub anchor_variance: f64,
    pub anchor_mean: f64,
    pub quadrature_nodes: usize,
}

impl Problem {
    /// Builds a problem from row-major true values on a `rows x cols` grid
    /// whose node `(r, c)` sits at `(origin.0 + c*step.0, origin.1 + r*step.1)`.
    pub fn on_grid(
        grid_shape: (usize, usize),
        origin: (f64, f64),
        grid_step: (f64, f64),
        true_values: Vec<f64>,
        params: ProblemParams,
    ) -> Result<Self> {
        let (rows, cols) = grid_shape;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid_shape", "grid must be non-empty"));
        }
        if rows * cols != true_values.len() {
            return Err(Error::invalid(
                "grid_shape",
                format!(
                    "{rows}x{cols} grid does not match {} values",
                    true_values.len()
                ),
            ));
        }
        if !(grid_step.0 > 0.0 && grid_step.1 > 0.0) {
            return Err(Error::invalid("step", "grid step must be > 0"));
        }
        if !(params.budget >= 0.0 && params.budget.is_finite()) {
            return Err(Error::invalid("budget", "must be finite and >= 0"));
        }
        if !(params.dependency_variance > 0.0) {
            return Err(Error::invalid("dependency_variance", "must be > 0"));
        }
        if !(params.anchor_variance > 0.0) {
            return Err(Error::invalid("anchor_variance", "must be > 0"));
        }
        if params.measurement_types.is_empty() {
            return Err(Error::invalid(
                "measurement_types",
                "at least one measurement type is required",
            ));
        }
        if params.quadrature_nodes == 0 {
            return Err(Error::invalid("quadrature_nodes", "must be >= 1"));
        }
        let items = (0..rows * cols)
            .map(|index| {
                let (row, col) = (index / cols, index % cols);
                Item {
                    index,
                    row,
                    col,
                    x: origin.0 + col as f64 * grid_step.0,
                    y: origin.1 + row as f64 * grid_step.1,
                }
            })
            .collect();
        Ok(Self {
            items,
            true_values,
            measurement_types: params.measurement_types,
            utility: params.utility,
            budget: params.budget,
            grid_shape,
            grid_step,
            dependency_variance: params.dependency_variance,
            anchor_variance: params.anchor_variance,
            anchor_mean: params.anchor_mean,
            quadrature_nodes: params.quadrature_nodes,
        })
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    /// Row-major index of grid node `(row, col)`.
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        row * self.grid_shape.1 + col
    }

    /// All (type, item) pairs, type-major.
    pub fn candidates(&self) -> Vec<Candidate> {
        (0..self.measurement_types.len())
            .flat_map(|t| {
                (0..self.items.len()).map(move |i| Candidate {
                    type_index: t,
                    item_index: i,
                })
            })
            .collect()
    }

    pub fn candidate_cost(&self, c: Candidate) -> f64 {
        self.measurement_types[c.type_index].cost
    }

    pub fn prior(&self) -> Result<GaussianBelief> {
        GaussianBelief::grid_prior(
            self.grid_shape,
            self.dependency_variance,
            self.anchor_variance,
            self.anchor_mean,
        )
    }

    pub fn quadrature(&self) -> GaussHermite {
        GaussHermite::new(self.quadrature_nodes).expect("validated at construction")
    }

    /// Hidden ground truth; reserved for the measurement simulator and scoring.
    pub(crate) fn true_value(&self, item: usize) -> f64 {
        self.true_values[item]
    }

    /// Utility of the hidden true value of `item`.
    pub fn true_utility(&self, item: usize) -> f64 {
        self.utility.eval(self.true_values[item])
    }
}

/// Multivariate normal belief over all item values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::invalid("covariance", "shape does not match mean"));
        }
        for i in 0..mean.len() {
            if cov[(i, i)] < 0.0 {
                return Err(Error::invalid("covariance", "negative diagonal entry"));
            }
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 {
                    return Err(Error::invalid("covariance", "matrix is not symmetric"));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Independent items with the given means and variances.
    pub fn independent(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::invalid("variances", "length differs from means"));
        }
        Self::new(
            DVector::from_column_slice(means),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    /// Grid MRF prior with constant mean `anchor_mean`.
    pub fn grid_prior(
        grid_shape: (usize, usize),
        dependency_variance: f64,
        anchor_variance: f64,
        anchor_mean: f64,
    ) -> Result<Self> {
        if !(dependency_variance > 0.0 && dependency_variance.is_finite()) {
            return Err(Error::invalid("dependency_variance", "must be > 0"));
        }
        if !(anchor_variance > 0.0 && anchor_variance.is_finite()) {
            return Err(Error::invalid("anchor_variance", "must be > 0"));
        }
        let (rows, cols) = grid_shape;
        let n = rows * cols;
        if n == 0 {
            return Err(Error::invalid("grid_shape", "grid must be non-empty"));
        }
        let precision = grid_precision(grid_shape, dependency_variance, anchor_variance);
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::Degenerate("grid precision is not positive definite".into()))?;
        let mut cov = chol.inverse();
        symmetrize(&mut cov);
        Ok(Self {
            mean: DVector::from_element(n, anchor_mean),
            cov,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.cov[(i, i)].max(0.0)
    }

    /// Scalar Kalman update after observing `y` on `item` with noise variance
    /// `noise_variance`.
    pub fn update(&self, item: usize, y: f64, noise_variance: f64) -> GaussianBelief {
        let mut next = self.clone();
        next.update_in_place(item, y, noise_variance);
        next
    }

    pub(crate) fn update_in_place(&mut self, item: usize, y: f64, noise_variance: f64) {
        let n = self.len();
        let col: Vec<f64> = self.cov.column(item).iter().copied().collect();
        let s = col[item] + noise_variance;
        if !(s > 0.0) {
            return;
        }
        let innovation = y - self.mean[item];
        for i in 0..n {
            self.mean[i] += col[i] / s * innovation;
        }
        for k in 0..n {
            for i in 0..n {
                // col_i * col_k is symmetric in (i, k), so the result stays symmetric.
                self.cov[(i, k)] -= col[i] * col[k] / s;
            }
        }
        for i in 0..n {
            if self.cov[(i, i)] < 0.0 {
                self.cov[(i, i)] = 0.0;
            }
        }
    }

    /// Predictive distribution of an observation of `item` and the gain that
    /// maps it to the posterior mean: `mean' = mean + gain * (y - predictive_mean)`.
    pub fn preposterior(&self, item: usize, noise_variance: f64) -> Preposterior {
        let sjj = self.cov[(item, item)].max(0.0);
        let predictive_variance = sjj + noise_variance;
        let gain = if sjj > 0.0 {
            self.cov.column(item) / predictive_variance
        } else {
            DVector::zeros(self.len())
        };
        Preposterior {
            predictive_mean: self.mean[item],
            predictive_variance,
            gain,
        }
    }

    pub fn expected_utility(&self, item: usize, utility: &UtilityFn, gh: &GaussHermite) -> f64 {
        utility.expect(self.mean[item], self.variance(item).sqrt(), gh)
    }

    /// Item with the highest expected utility, lowest index on ties.
    pub fn best_item(&self, utility: &UtilityFn, gh: &GaussHermite) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..self.len() {
            let v = self.expected_utility(i, utility, gh);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preposterior {
    pub predictive_mean: f64,
    pub predictive_variance: f64,
    pub gain: DVector<f64>,
}

impl Preposterior {
    pub fn posterior_mean(&self, prior_mean: &DVector<f64>, y: f64) -> DVector<f64> {
        prior_mean + &self.gain * (y - self.predictive_mean)
    }
}

pub(crate) fn grid_neighbors(grid_shape: (usize, usize), index: usize) -> Vec<usize> {
    let (rows, cols) = grid_shape;
    let (r, c) = (index / cols, index % cols);
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(index - cols);
    }
    if c > 0 {
        out.push(index - 1);
    }
    if c + 1 < cols {
        out.push(index + 1);
    }
    if r + 1 < rows {
        out.push(index + cols);
    }
    out
}

/// Precision matrix of the grid MRF prior.
pub fn grid_precision(
    grid_shape: (usize, usize),
    dependency_variance: f64,
    anchor_variance: f64,
) -> DMatrix<f64> {
    let n = grid_shape.0 * grid_shape.1;
    let mut l = DMatrix::zeros(n, n);
    let coupling = 1.0 / dependency_variance;
    for i in 0..n {
        let nb = grid_neighbors(grid_shape, i);
        l[(i, i)] = 1.0 / anchor_variance + nb.len() as f64 * coupling;
        for j in nb {
            l[(i, j)] = -coupling;
        }
    }
    l
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_cell_prior_is_anchor() {
        let b = GaussianBelief::grid_prior((1, 1), 0.5, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(b.mean()[0], 0.0);
        assert_abs_diff_eq!(b.covariance()[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_cell_prior_matches_hand_inverse() {
        // precision [[1 + 2, -2], [-2, 1 + 2]]; inverse = [[3, 2], [2, 3]] / 5
        let b = GaussianBelief::grid_prior((1, 2), 0.5, 1.0, 0.0).unwrap();
        let c = b.covariance();
        assert_abs_diff_eq!(c[(0, 0)], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(1, 1)], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(0, 1)], 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(c[(1, 0)], 0.4, epsilon = 1e-14);
    }

    #[test]
    fn grid_degrees() {
        assert_eq!(grid_neighbors((3, 3), 0).len(), 2);
        assert_eq!(grid_neighbors((3, 3), 4).len(), 4);
        assert_eq!(grid_neighbors((3, 3), 1).len(), 3);
        let l = grid_precision((3, 3), 0.5, 1.0);
        let off = |i: usize| (0..9).filter(|&j| j != i && l[(i, j)] != 0.0).count();
        assert_eq!(off(0), 2);
        assert_eq!(off(4), 4);
    }

    #[test]
    fn prior_rejects_bad_variances() {
        assert!(GaussianBelief::grid_prior((2, 2), 0.0, 1.0, 0.0).is_err());
        assert!(GaussianBelief::grid_prior((2, 2), 0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn correlation_decays_with_distance() {
        let b = GaussianBelief::grid_prior((1, 5), 0.5, 1.0, 0.0).unwrap();
        let c = b.covariance();
        for d in 1..4 {
            assert!(c[(0, d)] > 0.0);
            assert!(c[(0, d)] > c[(0, d + 1)]);
        }
    }

    #[test]
    fn conjugate_normal_update() {
        let b = GaussianBelief::independent(&[0.0], &[1.0]).unwrap();
        let p = b.update(0, 1.0, 1.0);
        assert_abs_diff_eq!(p.mean()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.variance(0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn uninformative_update_is_identity() {
        let b = GaussianBelief::grid_prior((2, 2), 0.5, 1.0, 0.3).unwrap();
        let p = b.update(1, 7.0, 1e12);
        for i in 0..4 {
            assert_abs_diff_eq!(p.mean()[i], b.mean()[i], epsilon = 1e-6);
            for j in 0..4 {
                assert_abs_diff_eq!(
                    p.covariance()[(i, j)],
                    b.covariance()[(i, j)],
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn preposterior_zero_variance_item() {
        let b = GaussianBelief::independent(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let pp = b.preposterior(0, 0.3);
        assert!(pp.gain.iter().all(|&g| g == 0.0));
        assert_abs_diff_eq!(pp.predictive_variance, 0.3);
    }

    #[test]
    fn preposterior_scalar_algebra() {
        let b = GaussianBelief::independent(&[0.7], &[2.0]).unwrap();
        let pp = b.preposterior(0, 0.5);
        assert_abs_diff_eq!(pp.predictive_mean, 0.7);
        assert_abs_diff_eq!(pp.predictive_variance, 2.5);
        assert_abs_diff_eq!(pp.gain[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn preposterior_gain_matches_update() {
        let b = GaussianBelief::grid_prior((1, 2), 0.5, 1.0, 0.0).unwrap();
        let pp = b.preposterior(0, 0.5);
        let post = b.update(0, 1.0, 0.5);
        // with y - mean = 1, the mean shift equals the gain
        for i in 0..2 {
            assert_abs_diff_eq!(post.mean()[i] - b.mean()[i], pp.gain[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_and_odd_utilities() {
        let gh = GaussHermite::default();
        let b = GaussianBelief::independent(&[0.3, 0.0], &[0.7, 2.0]).unwrap();
        assert_eq!(b.expected_utility(0, &UtilityFn::Identity, &gh), 0.3);
        let t = UtilityFn::tanh(2.0, 0.0).unwrap();
        assert_abs_diff_eq!(b.expected_utility(1, &t, &gh), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn best_item_cases() {
        let gh = GaussHermite::default();
        let single = GaussianBelief::independent(&[-3.0], &[1.0]).unwrap();
        assert_eq!(single.best_item(&UtilityFn::Identity, &gh).0, 0);
        let b = GaussianBelief::independent(&[0.0, 1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.best_item(&UtilityFn::Identity, &gh), (1, 1.0));
        let tie = GaussianBelief::independent(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(tie.best_item(&UtilityFn::Identity, &gh).0, 0);
    }

    #[test]
    fn fast_tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01 + 1e-7;
            assert!(
                (fast_tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs().max(1e-300)
            );
        }
        assert_eq!(fast_tanh(50.0), 1.0);
        assert_eq!(fast_tanh(-50.0), -1.0);
    }

    /// Trapezoid rule on a fine grid; the integrand is analytic in a strip,
    /// so this is accurate far beyond the tolerances checked.
    fn trapezoid_tanh(m: f64, tau: f64) -> f64 {
        let h = 1e-3;
        let steps = 24_000;
        let total: f64 = (0..=steps)
            .map(|k| {
                let z = -12.0 + h * k as f64;
                (m + tau * z).tanh() * (-0.5 * z * z).exp()
            })
            .sum();
        total * h / (2.0 * PI).sqrt()
    }

    #[test]
    fn expected_tanh_is_accurate_across_spreads() {
        let gh = GaussHermite::default();
        for &tau in &[0.0, 0.1, 0.4, 0.69, 0.71, 1.0, 1.7, 3.0, 6.0] {
            for &m in &[0.0, 0.25, -0.8, 1.5, -3.0, 7.0] {
                let got = expected_tanh(m, tau, &gh);
                assert!(
                    (got - trapezoid_tanh(m, tau)).abs() < 1e-7,
                    "m={m} tau={tau}"
                );
                assert!((got + expected_tanh(-m, tau, &gh)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tanh_rejects_nonpositive_scale() {
        assert!(UtilityFn::tanh(0.0, 0.0).is_err());
        assert!(UtilityFn::tanh(-1.0, 0.0).is_err());
    }

    #[test]
    fn problem_rejects_mismatched_grid() {
        let params = ProblemParams {
            measurement_types: vec![MeasurementType::new(0.01, 0.5).unwrap()],
            utility: UtilityFn::Identity,
            budget: 1.0,
            dependency_variance: 0.5,
            anchor_variance: 1.0,
            anchor_mean: 0.0,
            quadrature_nodes: 21,
        };
        assert!(
            Problem::on_grid((2, 2), (0.0, 0.0), (1.0, 1.0), vec![0.0; 3], params.clone()).is_err()
        );
        assert!(Problem::on_grid((2, 2), (0.0, 0.0), (0.0, 1.0), vec![0.0; 4], params).is_err());
    }
}
