use chrono::{DateTime, Utc};

/// `ceil(fraction * count)` with a small tolerance so that products such as
/// `0.1 * 30 = 3.0000000000000004` round to the intended integer.
pub(crate) fn ceil_fraction(fraction: f64, count: usize) -> usize {
    let x = fraction * count as f64;
    (x - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_fraction_absorbs_float_noise() {
        assert_eq!(ceil_fraction(0.1, 30), 3);
        assert_eq!(ceil_fraction(0.1, 20), 2);
        assert_eq!(ceil_fraction(0.1, 5), 1);
        assert_eq!(ceil_fraction(0.34, 3), 2);
        assert_eq!(ceil_fraction(0.1, 0), 0);
    }
}
