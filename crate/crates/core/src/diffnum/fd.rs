/// Default relative finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central finite differences. Coordinate `i` uses step `h·(1 + |θᵢ|)`.
pub fn grad_fd<F>(f: F, at: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            let step = h * (1.0 + at[i].abs());
            x[i] = at[i] + step;
            let up = f(&x);
            x[i] = at[i] - step;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}
