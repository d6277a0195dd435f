//! Rollable latent codes: the latent layout, cyclic rolls, and the mapping
//! between azimuth angles and bin shifts.
//!
//! A latent code is `K` structural sub-vectors, each spread over `N` equally
//! spaced viewing-direction bins. Rolling shifts every sub-vector cyclically
//! along its bin axis, which the autoencoder is trained to make equivalent to
//! rotating the imaged object in azimuth. Production rolls use index
//! shifting; the explicit cyclic permutation matrix exists as the oracle the
//! index path is tested against.

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::scalar::{real, Scalar};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("latent layout requires K >= 1 and N >= 2, got K={k}, N={n}")]
    BadLayout { k: usize, n: usize },
    #[error("expected {expected} values for K={k} x N={n}, got {got}")]
    ExtentMismatch {
        k: usize,
        n: usize,
        expected: usize,
        got: usize,
    },
}

/// `K` sub-vectors by `N` azimuth bins, stored row-major with each
/// sub-vector contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<F: Scalar> {
    values: Vec<F>,
    k: usize,
    n: usize,
}

impl<F: Scalar> LatentCode<F> {
    pub fn new(k: usize, n: usize, values: Vec<F>) -> Result<Self, LatentError> {
        if k < 1 || n < 2 {
            return Err(LatentError::BadLayout { k, n });
        }
        if values.len() != k * n {
            return Err(LatentError::ExtentMismatch {
                k,
                n,
                expected: k * n,
                got: values.len(),
            });
        }
        Ok(LatentCode { values, k, n })
    }

    pub fn zeros(k: usize, n: usize) -> Result<Self, LatentError> {
        Self::new(k, n, vec![F::zero(); k * n])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    /// Bins of sub-vector `k`, a contiguous slice of length `N`.
    pub fn sub_vector(&self, k: usize) -> &[F] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    /// Order-canonical Euclidean norm: squares are summed in sorted order,
    /// so any permutation of the same values produces a bitwise-identical
    /// result.
    pub fn norm_l2(&self) -> F {
        let mut sq: Vec<F> = self.values.iter().map(|&v| v * v).collect();
        sq.sort_by(|a, b| a.partial_cmp(b).expect("finite latent values"));
        sq.into_iter().sum::<F>().sqrt()
    }

    /// Cyclic roll of every sub-vector by `s` bins:
    /// `out[k, (i + s) mod N] = in[k, i]`. `s` is taken modulo `N`, so any
    /// integer (including negatives) is valid.
    pub fn roll_integer(&self, s: i64) -> Self {
        let s_mod = s.rem_euclid(self.n as i64) as usize;
        let mut out = vec![F::zero(); self.values.len()];
        for k in 0..self.k {
            let src = self.sub_vector(k);
            let dst = &mut out[k * self.n..(k + 1) * self.n];
            for (i, &v) in src.iter().enumerate() {
                dst[(i + s_mod) % self.n] = v;
            }
        }
        LatentCode {
            values: out,
            k: self.k,
            n: self.n,
        }
    }

    /// Fractional roll: linear interpolation between the two adjacent
    /// integer rolls. With `f = s - floor(s)`,
    /// `out = (1 - f) * roll(floor(s)) + f * roll(floor(s) + 1)`.
    pub fn roll_interpolative(&self, s: f64) -> Self {
        let lo = s.floor();
        let f = s - lo;
        let lo_rolled = self.roll_integer(lo as i64);
        if f == 0.0 {
            return lo_rolled;
        }
        let hi_rolled = self.roll_integer(lo as i64 + 1);
        let fw = real::<F>(f);
        let lw = real::<F>(1.0 - f);
        let values = lo_rolled
            .values
            .iter()
            .zip(&hi_rolled.values)
            .map(|(&a, &b)| lw * a + fw * b)
            .collect();
        LatentCode {
            values,
            k: self.k,
            n: self.n,
        }
    }

    /// Flattens to a rank-1 tensor with sub-vector `k` occupying positions
    /// `[k*N, (k+1)*N)`.
    pub fn flatten(&self) -> Tensor<F> {
        Tensor::from_vec(vec![self.values.len()], self.values.clone()).expect("layout is consistent")
    }

    /// Inverse of [`flatten`](Self::flatten); exact round-trip.
    pub fn unflatten(t: &Tensor<F>, k: usize, n: usize) -> Result<Self, LatentError> {
        Self::new(k, n, t.data().to_vec())
    }
}

/// Maps azimuth angles in degrees to roll shifts for `N` equally spaced
/// viewing-direction bins of width `360/N` degrees.
#[derive(Clone, Copy, Debug)]
pub struct AzimuthMapping {
    n: usize,
}

impl AzimuthMapping {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "azimuth mapping requires N >= 2");
        AzimuthMapping { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bin_width_deg(&self) -> f64 {
        360.0 / self.n as f64
    }

    /// Real-valued shift: `(theta mod 360) * N / 360`. Periodic in 360.
    pub fn continuous(&self, theta_deg: f64) -> f64 {
        theta_deg.rem_euclid(360.0) * self.n as f64 / 360.0
    }

    /// Nearest-bin integer shift in `[0, N)`.
    pub fn nearest(&self, theta_deg: f64) -> usize {
        (self.continuous(theta_deg).round() as usize) % self.n
    }
}

/// Explicit `N x N` cyclic permutation matrix raised to the `s`-th power:
/// `R^s[m, j] = 1` iff `j = (m - s) mod N`, so `R^s v` equals
/// `roll_integer` applied to `v`.
pub fn permutation_matrix<F: Scalar>(n: usize, s: i64) -> Tensor<F> {
    assert!(n >= 2, "permutation matrix requires N >= 2");
    let s_mod = s.rem_euclid(n as i64) as usize;
    let mut data = vec![F::zero(); n * n];
    for m in 0..n {
        let j = (m + n - s_mod) % n;
        data[m * n + j] = F::one();
    }
    Tensor::from_vec(vec![n, n], data).expect("square layout")
}

/// Matrix form of a roll, used as the oracle the index-shifting path is
/// verified against.
#[derive(Clone, Debug)]
pub struct RollOperator<F: Scalar> {
    n: usize,
    matrix: Tensor<F>,
}

impl<F: Scalar> RollOperator<F> {
    pub fn new(n: usize, s: i64) -> Self {
        RollOperator {
            n,
            matrix: permutation_matrix(n, s),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &Tensor<F> {
        &self.matrix
    }

    /// Dense matrix-vector product `R^s v`.
    pub fn apply(&self, v: &[F]) -> Vec<F> {
        assert_eq!(v.len(), self.n, "vector length must equal N");
        let m = self.matrix.data();
        (0..self.n)
            .map(|row| {
                let mrow = &m[row * self.n..(row + 1) * self.n];
                mrow.iter().zip(v).map(|(&a, &b)| a * b).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(k: usize, n: usize, v: Vec<f64>) -> LatentCode<f64> {
        LatentCode::new(k, n, v).unwrap()
    }

    #[test]
    fn roll_identity_and_forward_shift() {
        let z = code(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z.roll_integer(0).values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z.roll_integer(1).values(), &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(z.roll_integer(4).values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z.roll_integer(-1).values(), z.roll_integer(3).values());
    }

    #[test]
    fn roll_moves_every_sub_vector() {
        let z = code(2, 3, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        let r = z.roll_integer(1);
        assert_eq!(r.sub_vector(0), &[3.0, 1.0, 2.0]);
        assert_eq!(r.sub_vector(1), &[30.0, 10.0, 20.0]);
    }

    #[test]
    fn interpolative_blends_adjacent_rolls() {
        let z = code(1, 4, vec![1.0, 0.0, 0.0, 0.0]);
        let r = z.roll_interpolative(0.5);
        assert_eq!(r.values(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn interpolative_at_integers_is_integer_roll() {
        let z = code(2, 5, (0..10).map(|i| i as f64 * 0.3 - 1.2).collect());
        for s in [-3i64, 0, 2, 5, 7] {
            assert_eq!(z.roll_interpolative(s as f64), z.roll_integer(s));
        }
    }

    #[test]
    fn azimuth_shift_examples() {
        let m = AzimuthMapping::new(36);
        assert_eq!(m.nearest(0.0), 0);
        assert_eq!(m.nearest(90.0), 9);
        assert_eq!(m.nearest(370.0), 1);
        assert_eq!(m.continuous(90.0), 9.0);
        assert_eq!(m.continuous(-90.0), 27.0);
        // round at the wrap point lands back in bin 0
        assert_eq!(m.nearest(359.9), 0);
    }

    #[test]
    fn permutation_matrix_examples() {
        let r = permutation_matrix::<f64>(2, 1);
        assert_eq!(r.data(), &[0.0, 1.0, 1.0, 0.0]);
        let id = permutation_matrix::<f64>(3, 3);
        assert_eq!(id.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matrix_oracle_matches_index_roll() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(2..=16usize);
            let s = rng.random_range(-40..=40i64);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let by_index = code(1, n, v.clone()).roll_integer(s);
            let by_matrix = RollOperator::<f64>::new(n, s).apply(&v);
            assert_eq!(by_index.values(), &by_matrix[..]);
        }
    }

    #[test]
    fn roll_operator_has_permutation_structure() {
        for n in 2..=8usize {
            for s in 0..n as i64 {
                let r = permutation_matrix::<f64>(n, s);
                let d = r.data();
                for row in 0..n {
                    let ones = d[row * n..(row + 1) * n].iter().filter(|&&v| v == 1.0).count();
                    let zeros = d[row * n..(row + 1) * n].iter().filter(|&&v| v == 0.0).count();
                    assert_eq!((ones, zeros), (1, n - 1));
                }
                for col in 0..n {
                    let ones = (0..n).filter(|&row| d[row * n + col] == 1.0).count();
                    assert_eq!(ones, 1);
                }
            }
        }
    }

    #[test]
    fn flatten_layout() {
        let z = code(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let flat = z.flatten();
        assert_eq!(flat.shape(), &[6]);
        assert_eq!(flat.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(z.sub_vector(0), &[1.0, 2.0, 3.0]);
        assert_eq!(z.sub_vector(1), &[4.0, 5.0, 6.0]);
        let back = LatentCode::unflatten(&flat, 2, 3).unwrap();
        assert_eq!(back, z);
        let err = LatentCode::<f64>::unflatten(&flat, 2, 4).unwrap_err();
        assert!(err.to_string().contains("expected 8 values"));
    }

    #[test]
    fn unflatten_k1_is_identity() {
        let z = code(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(z.flatten().data(), z.values());
    }

    #[test]
    fn layout_bounds_rejected() {
        assert!(LatentCode::<f64>::new(0, 4, vec![]).is_err());
        assert!(LatentCode::<f64>::new(2, 1, vec![0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn group_action_composition(
            vals in prop::collection::vec(-100.0f64..100.0, 12),
            a in -20i64..20,
            b in -20i64..20,
        ) {
            let z = code(3, 4, vals);
            let two_step = z.roll_integer(a).roll_integer(b);
            let direct = z.roll_integer(a + b);
            prop_assert_eq!(two_step.values(), direct.values());
            let full_turn = z.roll_integer(4);
            prop_assert_eq!(full_turn.values(), z.values());
        }

        #[test]
        fn norm_preserved_exactly(
            vals in prop::collection::vec(-100.0f64..100.0, 10),
            s in -20i64..20,
        ) {
            let z = code(2, 5, vals);
            prop_assert_eq!(z.roll_integer(s).norm_l2(), z.norm_l2());
        }

        #[test]
        fn interpolative_norm_bounded(
            vals in prop::collection::vec(-10.0f64..10.0, 8),
            s in -8.0f64..8.0,
        ) {
            let z = code(2, 4, vals);
            let rolled = z.roll_interpolative(s);
            prop_assert!(rolled.norm_l2() <= z.norm_l2() * (1.0 + 1e-12));
        }

        #[test]
        fn flatten_commutes_with_roll(
            vals in prop::collection::vec(-10.0f64..10.0, 12),
            s in -12i64..12,
        ) {
            // rolling then flattening equals a block-wise shift of the flat vector
            let z = code(4, 3, vals);
            let rolled_flat = z.roll_integer(s).flatten();
            let n = z.n();
            let s_mod = s.rem_euclid(n as i64) as usize;
            let flat = z.flatten();
            let mut expected = vec![0.0; flat.numel()];
            for blk in (0..flat.numel()).step_by(n) {
                for i in 0..n {
                    expected[blk + (i + s_mod) % n] = flat.data()[blk + i];
                }
            }
            prop_assert_eq!(rolled_flat.data(), &expected[..]);
        }

        #[test]
        fn azimuth_mapping_periodic(theta in -720.0f64..720.0, n in 2usize..64) {
            let m = AzimuthMapping::new(n);
            let a = m.continuous(theta);
            let b = m.continuous(theta + 360.0);
            prop_assert!((a - b).abs() < 1e-9 * n as f64);
            prop_assert_eq!(m.nearest(theta), m.nearest(theta + 360.0));
        }
    }

    #[test]
    fn kl_invariant_under_roll() {
        use crate::autodiff::Graph;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(1..=4usize);
            let n = rng.random_range(2..=12usize);
            let s = rng.random_range(-24..=24i64);
            let mu: Vec<f64> = (0..k * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..k * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let kl = |m: &[f64], l: &[f64]| {
                let mut g = Graph::new();
                let mv = g.constant(Tensor::from_vec(vec![m.len()], m.to_vec()).unwrap());
                let lvv = g.constant(Tensor::from_vec(vec![l.len()], l.to_vec()).unwrap());
                let out = g.gaussian_kl(mv, lvv).unwrap();
                g.value(out).item()
            };
            let base = kl(&mu, &lv);
            let rolled_mu = code(k, n, mu).roll_integer(s);
            let rolled_lv = code(k, n, lv).roll_integer(s);
            let rolled = kl(rolled_mu.values(), rolled_lv.values());
            assert!(
                (base - rolled).abs() <= 1e-12 * base.abs().max(1.0),
                "KL changed under roll: {} vs {}",
                base,
                rolled
            );
        }
    }
}
