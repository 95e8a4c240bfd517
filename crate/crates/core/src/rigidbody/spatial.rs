//! Spatial vectors in world coordinates, Plücker origin at the world origin.
//! Layout is (angular; linear) for both motion and force vectors.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

pub type SpatialVec = Vector6<f64>;

#[inline]
pub fn angular(v: &SpatialVec) -> Vector3<f64> {
    v.fixed_rows::<3>(0).into_owned()
}

#[inline]
pub fn linear(v: &SpatialVec) -> Vector3<f64> {
    v.fixed_rows::<3>(3).into_owned()
}

#[inline]
pub fn from_parts(ang: &Vector3<f64>, lin: &Vector3<f64>) -> SpatialVec {
    Vector6::new(ang.x, ang.y, ang.z, lin.x, lin.y, lin.z)
}

/// Motion cross product `v ×ₘ w`.
pub fn cross_motion(v: &SpatialVec, w: &SpatialVec) -> SpatialVec {
    let (va, vl) = (angular(v), linear(v));
    let (wa, wl) = (angular(w), linear(w));
    from_parts(&va.cross(&wa), &(va.cross(&wl) + vl.cross(&wa)))
}

/// Force cross product `v ×* f`.
pub fn cross_force(v: &SpatialVec, f: &SpatialVec) -> SpatialVec {
    let (va, vl) = (angular(v), linear(v));
    let (fa, fl) = (angular(f), linear(f));
    from_parts(&(va.cross(&fa) + vl.cross(&fl)), &va.cross(&fl))
}

/// Spatial inertia about the world origin of a body with mass `m`, centre of
/// mass `c` and rotational inertia `ic` about the COM, all in world axes.
pub fn spatial_inertia(m: f64, c: &Vector3<f64>, ic: &Matrix3<f64>) -> Matrix6<f64> {
    let cx = c.cross_matrix();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(ic - m * cx * cx));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * cx));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-m * cx));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * m));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inertia_momentum_matches_point_mass() {
        // Point mass at c moving with (ω, v_O): p = m (v_O + ω × c).
        let c = Vector3::new(0.3, -0.2, 0.5);
        let i = spatial_inertia(2.0, &c, &Matrix3::zeros());
        let w = Vector3::new(0.1, 0.4, -0.7);
        let v = Vector3::new(1.0, 2.0, 3.0);
        let h = i * from_parts(&w, &v);
        let p = 2.0 * (v + w.cross(&c));
        assert!((linear(&h) - p).norm() < 1e-12);
        assert!((angular(&h) - c.cross(&p)).norm() < 1e-12);
    }

    #[test]
    fn force_cross_is_dual_of_motion_cross() {
        let v = SpatialVec::new(0.1, -0.3, 0.2, 1.0, 0.5, -0.4);
        let w = SpatialVec::new(0.7, 0.2, -0.1, -0.3, 0.9, 0.6);
        let f = SpatialVec::new(-1.0, 0.4, 2.0, 0.3, -0.8, 1.1);
        // (v ×* f) · w = -f · (v ×ₘ w)
        let lhs = cross_force(&v, &f).dot(&w);
        let rhs = -f.dot(&cross_motion(&v, &w));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
