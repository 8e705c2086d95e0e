//! Central finite-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked, drawn at random without replacement.
    pub max_coords: usize,
    pub seed: u64,
    /// Skip coordinates whose value lies within this distance of zero, for
    /// functions with a kink at the origin (e.g. ReLU applied to the inputs).
    pub kink_guard: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords: 200,
            seed: 0,
            kink_guard: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates excluded by the kink guard or because the difference
    /// quotient at `eps` and `eps / 2` disagree (a kink lies in the stencil).
    pub skipped: usize,
    pub worst_index: Option<usize>,
}

/// `f` returns the scalar value and its analytic gradient at a point.
pub fn grad_check<F>(f: F, x: &[f64], max_coords: usize, seed: u64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_with(
        f,
        x,
        GradCheckOptions {
            max_coords,
            seed,
            ..GradCheckOptions::default()
        },
    )
}

pub fn grad_check_with<F>(mut f: F, x: &[f64], opts: GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coords = sample(&mut rng, x.len(), opts.max_coords.min(x.len()));
    let mut point = x.to_vec();
    let mut quotient = |point: &mut Vec<f64>, i: usize, h: f64| {
        let orig = point[i];
        point[i] = orig + h;
        let up = f(point).0;
        point[i] = orig - h;
        let down = f(point).0;
        point[i] = orig;
        (up - down) / (2.0 * h)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst_index: None,
    };
    for i in coords.iter() {
        if opts.kink_guard.is_some_and(|g| x[i].abs() < g) {
            report.skipped += 1;
            continue;
        }
        let numeric = quotient(&mut point, i, opts.eps);
        let half = quotient(&mut point, i, opts.eps / 2.0);
        if (numeric - half).abs() > 1e-4 * numeric.abs().max(half.abs()).max(1e-6) {
            report.skipped += 1;
            continue;
        }
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = Some(i);
        }
    }
    report
}
