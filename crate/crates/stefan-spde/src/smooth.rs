//! Quintic smoothstep and its antiderivatives.

/// S(u) = 6u⁵ − 15u⁴ + 10u³ on [0, 1], clamped outside.
pub fn step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

/// S′(u) = 30u²(1 − u)² on [0, 1], zero outside.
pub fn step_prime(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        let w = u * (1.0 - u);
        30.0 * w * w
    }
}

/// ∫₀ᵘ S.
pub fn step_integral(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        0.5 + (u - 1.0)
    } else {
        let u2 = u * u;
        u2 * u2 * (2.5 + u * (-3.0 + u))
    }
}

/// ∫₀ᵘ S².
pub fn step_square_integral(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        STEP_SQUARE_MEAN + (u - 1.0)
    } else {
        square_poly(u)
    }
}

/// ∫₀¹ S² = 181/462.
pub const STEP_SQUARE_MEAN: f64 = 181.0 / 462.0;

fn square_poly(u: f64) -> f64 {
    // 36u¹¹/11 − 18u¹⁰ + 115u⁹/3 − 75u⁸/2 + 100u⁷/7
    let u7 = u.powi(7);
    u7 * (100.0 / 7.0 + u * (-37.5 + u * (115.0 / 3.0 + u * (-18.0 + u * (36.0 / 11.0)))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(step(0.0), 0.0);
        assert_eq!(step(1.0), 1.0);
        assert!((step(0.5) - 0.5).abs() < 1e-15);
        assert!((step_integral(1.0) - 0.5).abs() < 1e-15);
        assert!((square_poly(1.0) - STEP_SQUARE_MEAN).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_differences() {
        let h = 1e-6;
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let d = (step(u + h) - step(u - h)) / (2.0 * h);
            assert!((d - step_prime(u)).abs() < 1e-8);
            let d = (step_integral(u + h) - step_integral(u - h)) / (2.0 * h);
            assert!((d - step(u)).abs() < 1e-8);
            let d = (step_square_integral(u + h) - step_square_integral(u - h)) / (2.0 * h);
            assert!((d - step(u) * step(u)).abs() < 1e-8);
        }
    }
}
