use nalgebra::Vector3;

use super::camera::CameraModel;
use crate::costs::{smooth_l1, smooth_l1_grad, SampleLabel};
use crate::environment::{raycast, EsdfGrid};
use crate::primitives::{LatticeConfig, PredictionVector};

/// Line-of-sight samples closer than this to an obstacle block visibility.
pub const VISIBILITY_THRESHOLD: f64 = 0.1;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Decoded target of one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedTarget {
    pub u: f64,
    pub v: f64,
    /// Optical-frame point, present for positive depth.
    pub optical: Option<Vector3<f64>>,
    pub world: Option<Vector3<f64>>,
}

pub fn decode_target(pred: &PredictionVector, cell: (usize, usize), cam: &CameraModel) -> DecodedTarget {
    let ds = cam.intrinsics.ds as f64;
    let u = (sigmoid(pred.y_du) + cell.0 as f64) * ds;
    let v = (sigmoid(pred.y_dv) + cell.1 as f64) * ds;
    if pred.y_d > 0.0 {
        let optical = cam.back_project(u, v, pred.y_d);
        DecodedTarget { u, v, optical: Some(optical), world: Some(cam.from_optical(&optical)) }
    } else {
        DecodedTarget { u, v, optical: None, world: None }
    }
}

/// Whether `target` is in front of the camera, inside the image and not
/// occluded. Returns the containing cell.
pub fn visible_cell(target: &Vector3<f64>, cam: &CameraModel, grid: Option<&EsdfGrid>) -> Option<(usize, usize)> {
    let proj = cam.project(target)?;
    let cell = cam.cell_of(&proj)?;
    if let Some(grid) = grid {
        if !raycast(grid, &cam.position(), target, VISIBILITY_THRESHOLD) {
            return None;
        }
    }
    Some(cell)
}

/// Positive cell for the visible target, a Chebyshev-1 ignored ring around it,
/// negatives elsewhere. Labels are row-major like the anchor library.
pub fn assign_samples(
    target: Option<&Vector3<f64>>,
    cam: &CameraModel,
    lattice: &LatticeConfig,
    grid: Option<&EsdfGrid>,
) -> Vec<SampleLabel> {
    let mut labels = vec![SampleLabel::Negative; lattice.cell_count()];
    let Some((cu, cv)) = target.and_then(|t| visible_cell(t, cam, grid)) else {
        return labels;
    };
    for row in 0..lattice.m_theta {
        for col in 0..lattice.m_phi {
            let cheb = col.abs_diff(cu).max(row.abs_diff(cv));
            labels[lattice.cell_index(col, row)] = match cheb {
                0 => SampleLabel::Positive,
                1 => SampleLabel::Ignored,
                _ => SampleLabel::Negative,
            };
        }
    }
    labels
}

/// Objectness target `ŷ_o` of a label; `None` for ignored cells.
pub fn objectness_target(label: SampleLabel) -> Option<f64> {
    match label {
        SampleLabel::Positive => Some(1.0),
        SampleLabel::Negative => Some(0.0),
        SampleLabel::Ignored => None,
    }
}

/// `BCE(ŷ, σ(y))` in logit form.
pub fn bce_with_logit(y: f64, target: f64) -> f64 {
    softplus(y) - target * y
}

/// `(L_tgt, L_obj)` of one cell. `truth` is the optical-frame target position.
pub fn detection_losses(
    pred: &PredictionVector,
    cell: (usize, usize),
    label: SampleLabel,
    truth: Option<&Vector3<f64>>,
    cam: &CameraModel,
) -> (f64, f64) {
    let l_obj = objectness_target(label).map_or(0.0, |t| bce_with_logit(pred.y_o, t));
    let l_tgt = match (label, truth) {
        (SampleLabel::Positive, Some(truth)) => {
            let p = predicted_optical(pred, cell, cam);
            (0..3).map(|i| smooth_l1(p[i] - truth[i])).sum()
        }
        _ => 0.0,
    };
    (l_tgt, l_obj)
}

/// `C^-1 y_d [u, v, 1]` without the positive-depth restriction, as the regression target uses it.
pub fn predicted_optical(pred: &PredictionVector, cell: (usize, usize), cam: &CameraModel) -> Vector3<f64> {
    let ds = cam.intrinsics.ds as f64;
    let u = (sigmoid(pred.y_du) + cell.0 as f64) * ds;
    let v = (sigmoid(pred.y_dv) + cell.1 as f64) * ds;
    cam.back_project(u, v, pred.y_d)
}

/// Gradients of `L_tgt` and `L_obj` with respect to `(y_o, y_du, y_dv, y_d)`.
pub fn detection_loss_grads(
    pred: &PredictionVector,
    cell: (usize, usize),
    label: SampleLabel,
    truth: Option<&Vector3<f64>>,
    cam: &CameraModel,
) -> ([f64; 4], [f64; 4]) {
    let mut g_obj = [0.0; 4];
    if let Some(t) = objectness_target(label) {
        g_obj[0] = sigmoid(pred.y_o) - t;
    }
    let mut g_tgt = [0.0; 4];
    if let (SampleLabel::Positive, Some(truth)) = (label, truth) {
        let k = &cam.intrinsics;
        let ds = k.ds as f64;
        let p = predicted_optical(pred, cell, cam);
        let e: Vec<f64> = (0..3).map(|i| smooth_l1_grad(p[i] - truth[i])).collect();
        let su = sigmoid(pred.y_du);
        let sv = sigmoid(pred.y_dv);
        let u = (su + cell.0 as f64) * ds;
        let v = (sv + cell.1 as f64) * ds;
        g_tgt[1] = e[0] * pred.y_d * ds * su * (1.0 - su) / k.fx;
        g_tgt[2] = e[1] * pred.y_d * ds * sv * (1.0 - sv) / k.fy;
        g_tgt[3] = e[0] * (u - k.cx) / k.fx + e[1] * (v - k.cy) / k.fy + e[2];
    }
    (g_tgt, g_obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::camera::Intrinsics;

    fn cam() -> CameraModel {
        CameraModel::level(Intrinsics::default(), Vector3::new(0.0, 0.0, 1.0), 0.3)
    }

    #[test]
    fn zero_offsets_decode_to_cell_center() {
        let d = decode_target(&PredictionVector::default(), (3, 2), &cam());
        assert_eq!((d.u, d.v), (3.5 * 32.0, 2.5 * 32.0));
        assert!(d.world.is_none());
    }

    #[test]
    fn principal_point_decodes_on_axis() {
        let c = CameraModel::new(Intrinsics::default(), nalgebra::Isometry3::identity());
        // cell (2, 1) center is (80, 48), the principal point
        let pred = PredictionVector { y_d: 3.0, ..Default::default() };
        let d = decode_target(&pred, (2, 1), &c);
        assert!((d.optical.unwrap() - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn labels_form_chebyshev_ring() {
        let lattice = LatticeConfig::default();
        let c = cam();
        assert!(assign_samples(None, &c, &lattice, None).iter().all(|l| *l == SampleLabel::Negative));
        let target = c.unproject(3.5 * 32.0, 2.5 * 32.0, 5.0);
        let labels = assign_samples(Some(&target), &c, &lattice, None);
        assert_eq!(labels[lattice.cell_index(3, 2)], SampleLabel::Positive);
        assert_eq!(labels.iter().filter(|l| **l == SampleLabel::Positive).count(), 1);
        assert_eq!(labels.iter().filter(|l| **l == SampleLabel::Ignored).count(), 5);
        assert_eq!(labels[lattice.cell_index(0, 0)], SampleLabel::Negative);
    }

    #[test]
    fn bce_values() {
        assert!((bce_with_logit(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0) < 1e-300);
        assert!(bce_with_logit(-800.0, 0.0) < 1e-300);
    }
}
