use crate::error::{Error, Result};

/// Radius `sqrt(r0^2 - 2 (d-1) t)` of a sphere moving by mean curvature.
pub fn circle_radius_mcf(r0: f64, t: f64, d: usize) -> Result<f64> {
    if !(r0 > 0.0) || !(t >= 0.0) || d < 2 {
        return Err(Error::InvalidParameter(format!("r0 = {r0}, t = {t}, d = {d}")));
    }
    let rate = 2.0 * (d - 1) as f64;
    let extinction = r0 * r0 / rate;
    if t > extinction {
        return Err(Error::Extinction {
            radius: r0,
            time: t,
            extinction,
        });
    }
    let r2 = r0 * r0 - rate * t;
    // round-off at the extinction boundary
    if r2 <= 4.0 * f64::EPSILON * r0 * r0 {
        return Ok(0.0);
    }
    Ok(r2.sqrt())
}

/// Radius `(r0^4 + 2 t)^(1/4)` of a circle under planar Willmore flow.
pub fn circle_radius_willmore(r0: f64, t: f64, d: usize) -> Result<f64> {
    if d != 2 {
        return Err(Error::InvalidParameter(format!(
            "closed-form Willmore radius is only known for d = 2, got {d}"
        )));
    }
    if !(r0 > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("r0 = {r0}, t = {t}")));
    }
    Ok((r0.powi(4) + 2.0 * t).powf(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcf_radius() {
        assert_eq!(circle_radius_mcf(0.3, 0.0, 2).unwrap(), 0.3);
        let r = circle_radius_mcf(0.25, 2f64.powi(-14), 2).unwrap();
        assert!((r - 0.249_755_7).abs() < 1e-7);
        assert_eq!(circle_radius_mcf(0.1, 0.005, 2).unwrap(), 0.0);
        assert!(matches!(circle_radius_mcf(0.1, 0.006, 2), Err(Error::Extinction { .. })));
        let r3 = circle_radius_mcf(0.25, 2f64.powi(-14), 3).unwrap();
        assert!((r3 * r3 - (0.0625 - 4.0 * 2f64.powi(-14))).abs() < 1e-15);
    }

    #[test]
    fn willmore_radius() {
        assert_eq!(circle_radius_willmore(0.25, 0.0, 2).unwrap(), 0.25);
        let r = circle_radius_willmore(0.25, 2f64.powi(-10), 2).unwrap();
        let oracle = (0.25f64.powi(4) + 2.0 * 2f64.powi(-10)).sqrt().sqrt();
        assert!((r - oracle).abs() < 1e-15);
        assert!((r - 0.276_672).abs() < 1e-5);
        assert!(circle_radius_willmore(0.25, 0.1, 3).is_err());
        let mut prev = 0.0;
        for k in 0..20 {
            let r = circle_radius_willmore(0.1, k as f64 * 1e-3, 2).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }
}
