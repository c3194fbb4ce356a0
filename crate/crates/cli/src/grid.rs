//! Sweep-grid and time-quantity parsing.

use crate::error::CliError;

/// Seconds from a number with an optional unit suffix: `s`, `ms`, `us`, `ns`.
pub fn parse_seconds(s: &str) -> Result<f64, CliError> {
    let t = s.trim();
    let (num, scale) = [("ns", 1e-9), ("us", 1e-6), ("µs", 1e-6), ("ms", 1e-3), ("s", 1.0)]
        .iter()
        .find_map(|(suf, k)| t.strip_suffix(suf).map(|n| (n, *k)))
        .unwrap_or((t, 1.0));
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("cannot read '{s}' as a time (examples: 2.5e-6, 2.5us)")))?;
    if !v.is_finite() {
        return Err(CliError::Validation(format!("time '{s}' is not finite")));
    }
    Ok(v * scale)
}

/// `start:stop:step`, stop included when it falls on the step lattice.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Validation(format!("grid '{s}' must look like start:stop:step")));
    }
    let start = parse_seconds(parts[0])?;
    let stop = parse_seconds(parts[1])?;
    let step = parse_seconds(parts[2])?;
    if step <= 0.0 {
        return Err(CliError::Validation(format!("grid step must be positive, got {step}")));
    }
    if stop < start {
        return Err(CliError::Validation(format!("grid stop {stop} is below start {start}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 10_000_000 {
        return Err(CliError::Validation(format!("grid has {n} points; refusing more than 1e7")));
    }
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
