//! One-dimensional CPAB (continuous piecewise-affine based) diffeomorphisms.
//!
//! A velocity field is affine on each cell of a uniform tessellation of
//! `[0, 1]`, continuous across cells and zero at both ends of the domain. Its
//! time-1 flow is a monotone diffeomorphism of `[0, 1]`, evaluated here in
//! closed form by hopping from cell to cell.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::interp::sample_linear;
use crate::{Error, Result, Signal};

/// Below this slope a cell is integrated as constant velocity.
const SLOPE_EPS: f64 = 1e-12;
/// Below this speed a point is treated as a fixed point of the flow.
const SPEED_EPS: f64 = 1e-14;

/// Uniform partition of `[0, 1]` into `n_cells` sub-intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tessellation {
    n_cells: usize,
}

impl Default for Tessellation {
    fn default() -> Self {
        Self { n_cells: 16 }
    }
}

impl Tessellation {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidArgument(format!(
                "tessellation needs at least 2 cells, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of free velocity values (interior vertices).
    pub fn theta_dim(&self) -> usize {
        self.n_cells - 1
    }

    pub fn vertex(&self, k: usize) -> f64 {
        k as f64 / self.n_cells as f64
    }

    pub fn vertices(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|k| self.vertex(k)).collect()
    }

    /// Cell holding `x`; a point sitting on a vertex belongs to the cell it
    /// is about to move into.
    fn cell_of(&self, x: f64, moving_right: bool) -> usize {
        let pos = x * self.n_cells as f64;
        let k = pos.floor();
        let k_idx = (k.max(0.0) as usize).min(self.n_cells - 1);
        if !moving_right && pos == k && k_idx > 0 && pos as usize == k_idx {
            k_idx - 1
        } else {
            k_idx
        }
    }
}

/// Velocities at the interior vertices of a tessellation.
#[derive(Debug, Clone, PartialEq)]
pub struct CpabTheta(pub Vec<f64>);

impl CpabTheta {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

/// Zero-mean Gaussian smoothness prior over [`CpabTheta`].
///
/// The covariance is an RBF kernel over interior-vertex positions:
/// `sigma_var^2 * exp(-(c_i - c_j)^2 / (2 l^2))` with `l = sigma_smooth / n_cells`.
#[derive(Debug, Clone)]
pub struct CpaPrior {
    tessellation: Tessellation,
    sigma_var: f64,
    sigma_smooth: f64,
    covariance: DMatrix<f64>,
    cholesky_factor: DMatrix<f64>,
}

impl Default for CpaPrior {
    fn default() -> Self {
        Self::new(16, 0.5, 1.0).expect("default prior is positive definite")
    }
}

impl CpaPrior {
    pub fn new(n_cells: usize, sigma_var: f64, sigma_smooth: f64) -> Result<Self> {
        let tessellation = Tessellation::new(n_cells)?;
        if !(sigma_var > 0.0 && sigma_smooth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior scales must be positive (sigma_var={sigma_var}, sigma_smooth={sigma_smooth})"
            )));
        }
        let d = tessellation.theta_dim();
        let length_scale = sigma_smooth / n_cells as f64;
        let centers: Vec<f64> = (1..=d).map(|k| tessellation.vertex(k)).collect();
        let covariance = DMatrix::from_fn(d, d, |i, j| {
            let dist = centers[i] - centers[j];
            sigma_var * sigma_var * (-dist * dist / (2.0 * length_scale * length_scale)).exp()
        });
        let cholesky_factor = match covariance.clone().cholesky() {
            Some(c) => c.unpack(),
            None => {
                let jittered = &covariance + DMatrix::identity(d, d) * 1e-9;
                jittered
                    .cholesky()
                    .ok_or(Error::PriorNotPositiveDefinite)?
                    .unpack()
            }
        };
        Ok(Self {
            tessellation,
            sigma_var,
            sigma_smooth,
            covariance,
            cholesky_factor,
        })
    }

    pub fn tessellation(&self) -> Tessellation {
        self.tessellation
    }

    pub fn sigma_var(&self) -> f64 {
        self.sigma_var
    }

    pub fn sigma_smooth(&self) -> f64 {
        self.sigma_smooth
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky_factor
    }

    pub fn dim(&self) -> usize {
        self.tessellation.theta_dim()
    }

    /// Maps i.i.d. standard normals `z` to `L z`.
    pub fn theta_from_normals(&self, z: &[f64]) -> Result<CpabTheta> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!(
                "expected {} normals, got {}",
                self.dim(),
                z.len()
            )));
        }
        let z = nalgebra::DVector::from_column_slice(z);
        Ok(CpabTheta((&self.cholesky_factor * z).iter().copied().collect()))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> CpabTheta {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.theta_from_normals(&z).expect("dimension matches")
    }

    pub fn sample_theta(&self, seed: u64) -> CpabTheta {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_transform_with<R: Rng + ?Sized>(&self, rng: &mut R) -> CpabTransform {
        CpabTransform::new(self.tessellation, self.sample_with(rng)).expect("dimension matches")
    }
}

/// The flow of a CPA velocity field, `v(x) = a_k x + b_k` on cell `k`.
#[derive(Debug, Clone)]
pub struct CpabTransform {
    tessellation: Tessellation,
    theta: CpabTheta,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

/// Result of pushing a keypoint mask through a warp.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointWarp {
    pub mask: Vec<bool>,
    /// `(source index, warped index)` for every surviving keypoint.
    pub correspondences: Vec<(usize, usize)>,
}

impl CpabTransform {
    pub fn new(tessellation: Tessellation, theta: CpabTheta) -> Result<Self> {
        if theta.dim() != tessellation.theta_dim() {
            return Err(Error::Shape(format!(
                "theta has {} values, tessellation needs {}",
                theta.dim(),
                tessellation.theta_dim()
            )));
        }
        let n = tessellation.n_cells();
        let mut vertex_velocity = Vec::with_capacity(n + 1);
        vertex_velocity.push(0.0);
        vertex_velocity.extend_from_slice(theta.values());
        vertex_velocity.push(0.0);
        let width = 1.0 / n as f64;
        let mut slopes = Vec::with_capacity(n);
        let mut intercepts = Vec::with_capacity(n);
        for k in 0..n {
            let a = (vertex_velocity[k + 1] - vertex_velocity[k]) / width;
            slopes.push(a);
            intercepts.push(vertex_velocity[k] - a * tessellation.vertex(k));
        }
        Ok(Self {
            tessellation,
            theta,
            slopes,
            intercepts,
        })
    }

    pub fn identity(tessellation: Tessellation) -> Self {
        Self::new(tessellation, CpabTheta::zeros(tessellation.theta_dim()))
            .expect("dimension matches")
    }

    pub fn tessellation(&self) -> Tessellation {
        self.tessellation
    }

    pub fn theta(&self) -> &CpabTheta {
        &self.theta
    }

    /// `(a_k, b_k)` for every cell.
    pub fn coefficients(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.slopes.iter().copied().zip(self.intercepts.iter().copied())
    }

    pub fn velocity(&self, x: f64) -> f64 {
        let k = self.tessellation.cell_of(x, true);
        self.slopes[k] * x + self.intercepts[k]
    }

    /// `T(x) = phi(x; 1)`.
    pub fn transform_point(&self, x: f64) -> Result<f64> {
        self.integrate(x, 1.0)
    }

    /// `phi(x; time)`. Negative times integrate the negated field.
    pub fn integrate(&self, x: f64, time: f64) -> Result<f64> {
        check_domain(x)?;
        Ok(if time >= 0.0 {
            self.flow(x, time, 1.0)
        } else {
            self.flow(x, -time, -1.0)
        })
    }

    /// `T^{-1}(y)`, the time-1 flow of `-v`.
    pub fn inverse_point(&self, y: f64) -> Result<f64> {
        check_domain(y)?;
        Ok(self.flow(y, 1.0, -1.0))
    }

    fn flow(&self, mut x: f64, time: f64, sign: f64) -> f64 {
        let tess = &self.tessellation;
        let n = tess.n_cells();
        let mut remaining = time;
        let v0 = sign * self.velocity(x);
        if v0.abs() < SPEED_EPS || remaining <= 0.0 {
            return x;
        }
        let mut cell = tess.cell_of(x, v0 > 0.0);
        // Each hop moves one cell in a fixed direction.
        for _ in 0..=n {
            let a = sign * self.slopes[cell];
            let b = sign * self.intercepts[cell];
            let v = a * x + b;
            if v.abs() < SPEED_EPS {
                break;
            }
            let right = v > 0.0;
            let (lo, hi) = (tess.vertex(cell), tess.vertex(cell + 1));
            let boundary = if right { hi } else { lo };
            let v_boundary = a * boundary + b;
            let reaches = if right { v_boundary > 0.0 } else { v_boundary < 0.0 };
            if reaches {
                let t_hit = if a.abs() < SLOPE_EPS {
                    (boundary - x) / v
                } else {
                    (v_boundary / v).ln() / a
                };
                if t_hit < remaining {
                    remaining -= t_hit;
                    x = boundary;
                    if right && cell + 1 < n {
                        cell += 1;
                    } else if !right && cell > 0 {
                        cell -= 1;
                    } else {
                        break;
                    }
                    continue;
                }
            }
            let moved = if a.abs() < SLOPE_EPS {
                x + v * remaining
            } else {
                x + v * (a * remaining).exp_m1() / a
            };
            x = moved.clamp(lo, hi);
            break;
        }
        x.clamp(0.0, 1.0)
    }

    /// `X' = X o T`: resamples `x` at `T(g_t)` for each grid point `g_t`.
    pub fn warp_signal(&self, x: &[f64]) -> Signal {
        let len = x.len();
        if len < 2 {
            return x.to_vec();
        }
        let scale = (len - 1) as f64;
        (0..len)
            .map(|t| {
                let g = t as f64 / scale;
                let y = self.flow(g, 1.0, 1.0);
                sample_linear(x, y * scale)
            })
            .collect()
    }

    /// `Y' = Y o T`: a keypoint at grid position `g_p` moves to
    /// `round(T^{-1}(g_p) (L-1))`. On collisions the lowest source index wins.
    pub fn warp_keypoints(&self, mask: &[bool]) -> KeypointWarp {
        let len = mask.len();
        let mut out = vec![false; len];
        let mut correspondences = Vec::new();
        if len == 0 {
            return KeypointWarp {
                mask: out,
                correspondences,
            };
        }
        let scale = (len.max(2) - 1) as f64;
        for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let g = p as f64 / scale;
            let target = self.flow(g, 1.0, -1.0) * scale;
            let q = (target.round() as usize).min(len - 1);
            if !out[q] {
                out[q] = true;
                correspondences.push((p, q));
            }
        }
        KeypointWarp {
            mask: out,
            correspondences,
        }
    }
}

fn check_domain(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Classical RK4 on the same velocity field, used as an independent oracle.
    fn rk4(t: &CpabTransform, x0: f64, time: f64, step: f64) -> f64 {
        let steps = (time / step).round() as usize;
        let h = time / steps as f64;
        let v = |x: f64| t.velocity(x.clamp(0.0, 1.0));
        let mut x = x0;
        for _ in 0..steps {
            let k1 = v(x);
            let k2 = v(x + 0.5 * h * k1);
            let k3 = v(x + 0.5 * h * k2);
            let k4 = v(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    fn random_transform(seed: u64) -> CpabTransform {
        let prior = CpaPrior::default();
        CpabTransform::new(prior.tessellation(), prior.sample_theta(seed)).unwrap()
    }

    #[test]
    fn prior_single_interior_vertex() {
        let p = CpaPrior::new(2, 0.7, 3.0).unwrap();
        assert_eq!(p.dim(), 1);
        assert_relative_eq!(p.covariance()[(0, 0)], 0.49, epsilon = 1e-15);
    }

    #[test]
    fn prior_default_kernel_values() {
        let p = CpaPrior::default();
        assert_eq!(p.dim(), 15);
        for i in 0..15 {
            assert_relative_eq!(p.covariance()[(i, i)], 0.25, epsilon = 1e-15);
        }
        // neighbouring vertices are 1/16 apart and the length-scale is 1/16
        let expected = 0.25 * (-0.5f64).exp();
        assert_relative_eq!(expected, 0.151_632_664_928_158_5, epsilon = 1e-12);
        for i in 0..14 {
            assert_relative_eq!(p.covariance()[(i, i + 1)], expected, epsilon = 1e-12);
        }
        let l = p.cholesky_factor();
        let rebuilt = l * l.transpose();
        assert!((rebuilt - p.covariance()).amax() < 1e-10);
    }

    #[test]
    fn prior_rejects_bad_arguments() {
        assert!(CpaPrior::new(1, 0.5, 1.0).is_err());
        assert!(CpaPrior::new(16, 0.0, 1.0).is_err());
        assert!(CpaPrior::new(16, 0.5, -1.0).is_err());
    }

    #[test]
    fn zero_normals_give_zero_theta() {
        let p = CpaPrior::default();
        let theta = p.theta_from_normals(&[0.0; 15]).unwrap();
        assert!(theta.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = CpaPrior::default();
        let a = p.sample_theta(7);
        let b = p.sample_theta(7);
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, p.sample_theta(8));
    }

    #[test]
    fn sample_variance_matches_prior_diagonal() {
        let p = CpaPrior::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut sum = [0.0; 15];
        let mut sum_sq = [0.0; 15];
        for _ in 0..n {
            let th = p.sample_with(&mut rng);
            for (i, v) in th.values().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        for i in 0..15 {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            assert!((var - 0.25).abs() < 0.025, "coordinate {i}: variance {var}");
        }
    }

    #[test]
    fn velocity_is_continuous_and_pinned() {
        let t = random_transform(3);
        let tess = t.tessellation();
        let coeffs: Vec<_> = t.coefficients().collect();
        for k in 1..tess.n_cells() {
            let x = tess.vertex(k);
            let left = coeffs[k - 1].0 * x + coeffs[k - 1].1;
            let right = coeffs[k].0 * x + coeffs[k].1;
            assert!((left - right).abs() < 1e-12);
        }
        assert!(t.velocity(0.0).abs() < 1e-15);
        assert!(t.velocity(1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_theta_is_identity() {
        let t = CpabTransform::identity(Tessellation::default());
        for i in 0..4096 {
            let x = i as f64 / 4095.0;
            assert_eq!(t.transform_point(x).unwrap(), x);
            assert_eq!(t.inverse_point(x).unwrap(), x);
        }
    }

    #[test]
    fn boundaries_are_fixed() {
        for seed in 0..20 {
            let t = random_transform(seed);
            assert_eq!(t.transform_point(0.0).unwrap(), 0.0);
            assert_eq!(t.transform_point(1.0).unwrap(), 1.0);
            assert_eq!(t.inverse_point(1.0).unwrap(), 1.0);
            assert_eq!(t.inverse_point(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn domain_errors() {
        let t = random_transform(1);
        assert!(matches!(t.transform_point(-0.1), Err(Error::Domain(_))));
        assert!(matches!(t.inverse_point(1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn closed_form_matches_rk4() {
        let t = random_transform(3);
        let exact = t.transform_point(0.37).unwrap();
        let numeric = rk4(&t, 0.37, 1.0, 1e-5);
        assert!((exact - numeric).abs() < 1e-6, "{exact} vs {numeric}");
        for seed in 10..15 {
            let t = random_transform(seed);
            for &x in &[0.05, 0.25, 0.5, 0.8, 0.999] {
                let exact = t.transform_point(x).unwrap();
                assert!((exact - rk4(&t, x, 1.0, 1e-4)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flow_is_a_semigroup() {
        for seed in 0..10 {
            let t = random_transform(seed);
            for &s in &[0.25, 0.5] {
                for &u in &[0.25, 0.5] {
                    for i in 0..=50 {
                        let x = i as f64 / 50.0;
                        let direct = t.integrate(x, s + u).unwrap();
                        let composed = t.integrate(t.integrate(x, s).unwrap(), u).unwrap();
                        assert!((direct - composed).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_round_trip() {
        for seed in 0..100 {
            let t = random_transform(seed);
            for i in 0..256 {
                let x = i as f64 / 255.0;
                let fwd = t.transform_point(x).unwrap();
                assert!((t.inverse_point(fwd).unwrap() - x).abs() < 1e-5);
                let back = t.inverse_point(x).unwrap();
                assert!((t.transform_point(back).unwrap() - x).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn warp_signal_identity_and_constant() {
        let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        assert_eq!(CpabTransform::identity(Tessellation::default()).warp_signal(&x), x);
        let t = random_transform(4);
        assert!(t.warp_signal(&[2.5; 64]).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn warp_of_ramp_is_the_warp_itself() {
        let len = 300;
        let ramp: Vec<f64> = (0..len).map(|i| i as f64 / (len - 1) as f64).collect();
        let t = random_transform(9);
        let warped = t.warp_signal(&ramp);
        for (i, w) in warped.iter().enumerate() {
            let g = i as f64 / (len - 1) as f64;
            assert!((w - t.transform_point(g).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn warp_keypoints_cases() {
        let mut mask = vec![false; 512];
        mask[0] = true;
        mask[100] = true;
        mask[300] = true;
        let id = CpabTransform::identity(Tessellation::default()).warp_keypoints(&mask);
        assert_eq!(id.mask, mask);
        assert_eq!(id.correspondences, vec![(0, 0), (100, 100), (300, 300)]);

        let t = random_transform(5);
        let w = t.warp_keypoints(&mask);
        assert_eq!(w.correspondences[0], (0, 0));
        for &(p, q) in &w.correspondences {
            let oracle = (t.inverse_point(p as f64 / 511.0).unwrap() * 511.0).round() as usize;
            assert_eq!(q, oracle);
            assert!(w.mask[q]);
        }
        assert_eq!(w.mask.iter().filter(|&&m| m).count(), w.correspondences.len());
    }

    #[test]
    fn keypoint_collisions_keep_lowest_source() {
        let mut mask = vec![false; 8];
        mask[3] = true;
        mask[4] = true;
        // a strong contraction pulls both keypoints onto the same sample
        let prior = CpaPrior::new(2, 1.0, 1.0).unwrap();
        let t = CpabTransform::new(prior.tessellation(), CpabTheta(vec![-4.0])).unwrap();
        let w = t.warp_keypoints(&mask);
        let targets: Vec<usize> = w.correspondences.iter().map(|c| c.1).collect();
        let mut dedup = targets.clone();
        dedup.dedup();
        assert_eq!(targets, dedup);
        assert_eq!(w.correspondences[0].0, 3);
    }

    proptest! {
        #[test]
        fn transform_is_strictly_monotone(seed in 0u64..1000, x1 in 0.0f64..1.0, gap in 1e-6f64..0.5) {
            let t = random_transform(seed);
            let x2 = (x1 + gap).min(1.0);
            prop_assume!(x2 > x1);
            prop_assert!(t.transform_point(x1).unwrap() < t.transform_point(x2).unwrap());
        }
    }
}
