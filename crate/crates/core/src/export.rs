//! Fixed-format numeric output shared by the CSV writers.

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(",")
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0, -0.0, f64::MIN_POSITIVE] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
