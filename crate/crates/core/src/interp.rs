/// Linear interpolation of `x` at fractional index `pos`, clamped to the
/// signal's extent. Positions within 1e-9 of an integer snap to that sample.
pub(crate) fn sample_linear(x: &[f64], pos: f64) -> f64 {
    let last = x.len() - 1;
    if last == 0 {
        return x[0];
    }
    let pos = pos.clamp(0.0, last as f64);
    let nearest = pos.round();
    if (pos - nearest).abs() < 1e-9 {
        return x[nearest as usize];
    }
    let i = (pos.floor() as usize).min(last - 1);
    let frac = pos - i as f64;
    x[i] * (1.0 - frac) + x[i + 1] * frac
}
