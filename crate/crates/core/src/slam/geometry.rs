//! Forward models and back-projections of single-bounce observations.

use crate::environment::Vec3;

/// Observation predicted for a landmark: total path length and arrival
/// direction at the Rx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predicted {
    pub length: f64,
    pub dir: Vec3,
}

/// Tx -> q -> Rx.
pub fn predict_point(q: &Vec3, tx: &Vec3, rx: &Vec3) -> Predicted {
    let to_q = q - rx;
    let r = to_q.norm();
    Predicted {
        length: (q - tx).norm() + r,
        dir: if r > 0.0 { to_q / r } else { Vec3::z() },
    }
}

/// Tx -> source -> (mirror) -> Rx, where `v` is the mirror image of the
/// source that the Rx sees.
pub fn predict_virtual(source: &Vec3, v: &Vec3, tx: &Vec3, rx: &Vec3) -> Predicted {
    let to_v = v - rx;
    let r = to_v.norm();
    Predicted {
        length: (source - tx).norm() + r,
        dir: if r > 0.0 { to_v / r } else { Vec3::z() },
    }
}

/// Mirror image of the Tx across the plane `n·x = offset`.
pub fn predict_transmitter_image(normal: &Vec3, offset: f64, tx: &Vec3, rx: &Vec3) -> Predicted {
    let img = tx - normal * (2.0 * (normal.dot(tx) - offset));
    let to = img - rx;
    let r = to.norm();
    Predicted {
        length: r,
        dir: if r > 0.0 { to / r } else { Vec3::z() },
    }
}

/// The point on the ray `rx + r·u` whose bistatic length Tx -> q -> Rx is
/// `length`: r = (D² - |o|²) / (2(D - u·o)) with o = Tx - Rx.
pub fn bistatic_backprojection(tx: &Vec3, rx: &Vec3, length: f64, u: &Vec3) -> Option<Vec3> {
    let o = tx - rx;
    let den = 2.0 * (length - u.dot(&o));
    if length <= o.norm() || den <= 0.0 {
        return None;
    }
    let r = (length * length - o.norm_squared()) / den;
    (r > 0.0).then(|| rx + u * r)
}

/// Mirror image of `source` consistent with the observation.
pub fn virtual_backprojection(
    source: &Vec3,
    tx: &Vec3,
    rx: &Vec3,
    length: f64,
    u: &Vec3,
) -> Option<Vec3> {
    let r = length - (source - tx).norm();
    (r > 0.0).then(|| rx + u * r)
}

/// Reflector plane `(n, offset)` that would mirror the Tx onto the observed
/// image `rx + length·u`.
pub fn transmitter_image_plane(tx: &Vec3, rx: &Vec3, length: f64, u: &Vec3) -> Option<(Vec3, f64)> {
    let img = rx + u * length;
    let d = img - tx;
    let n = d.norm();
    if n < 1e-9 {
        return None;
    }
    let normal = d / n;
    Some((normal, normal.dot(&((img + tx) * 0.5))))
}

/// Angle between two unit vectors, robust near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
