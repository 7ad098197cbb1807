//! Numeric formatting for CSV output.

/// `x` with 17 significant digits, `.` as decimal separator.
///
/// Moderate magnitudes use fixed notation; very small or very large ones
/// fall back to scientific notation so the digit count stays at 17.
pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs();
    if (1e-5..1e16).contains(&mag) {
        let exp = mag.log10().floor() as i32;
        // log10 can land one off near powers of ten
        let exp = if 10f64.powi(exp) > mag { exp - 1 } else { exp };
        let prec = (16 - exp).max(0) as usize;
        format!("{x:.prec$}")
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::sig17;

    #[test]
    fn digit_counts() {
        assert_eq!(sig17(0.0), "0");
        assert_eq!(sig17(1.0), "1.0000000000000000");
        assert_eq!(sig17(-0.25), "-0.25000000000000000");
        assert_eq!(sig17(123.5), "123.50000000000000");
        assert_eq!(sig17(0.5f64.powi(30)), "9.3132257461547852e-10");
    }

    #[test]
    fn round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 5.8, 6.001625, -2.0f64.sqrt(), 1e-9, 3.0e20] {
            assert_eq!(sig17(x).parse::<f64>().unwrap(), x);
        }
    }
}
