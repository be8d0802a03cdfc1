//! Trend-aware regression loss weights.
//!
//! Each object in the future frame gets a trend factor from its best IoU with
//! a reference frame: slow objects overlap their reference strongly and get a
//! weight near 1, fast ones get `1 / mIoU`, and objects with no credible
//! match (new arrivals) get the constant `1 / nu`. Weights are then rescaled
//! so the summed regression loss keeps its magnitude.

use serde::{Deserialize, Serialize};

use crate::datamodel::{ClipStream, GtBox, Triplet};
use crate::error::{Error, Result};
use crate::geometry::iou;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_NU: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    /// Matching IoU below which an object is treated as newly appeared.
    pub tau: f64,
    /// Divisor giving new objects the weight `1 / nu`.
    pub nu: f64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            tau: DEFAULT_TAU,
            nu: DEFAULT_NU,
        }
    }
}

impl TrendConfig {
    pub fn new(tau: f64, nu: f64) -> Result<Self> {
        let cfg = TrendConfig { tau, nu };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::config(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        Ok(())
    }

    /// Non-fatal configuration concerns.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.nu < 1.0 {
            out.push(format!(
                "nu = {} is below 1: new objects will outweigh well-matched ones, which is known to hurt accuracy",
                self.nu
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendWeights {
    pub m_iou: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reg_losses: Vec<f64>,
    pub cls_loss: f64,
    pub obj_loss: f64,
}

/// Raw weight for one object.
pub fn trend_weight(m_iou: f64, cfg: &TrendConfig) -> f64 {
    if m_iou >= cfg.tau {
        1.0 / m_iou
    } else {
        1.0 / cfg.nu
    }
}

/// Per-object `(mIoU, omega)`. `mIoU_i` is the best IoU between future box
/// `i` and any same-category reference box; 0 when there is none.
pub fn trend_factors(
    future: &[GtBox],
    reference: &[GtBox],
    cfg: &TrendConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let m_iou: Vec<f64> = future
        .iter()
        .map(|f| {
            reference
                .iter()
                .filter(|r| r.category_id == f.category_id)
                .map(|r| iou(&f.bbox, &r.bbox))
                .fold(0.0, f64::max)
        })
        .collect();
    let omega = m_iou.iter().map(|&m| trend_weight(m, cfg)).collect();
    Ok((m_iou, omega))
}

/// Same as [`trend_factors`] but measured against the true next-door frame
/// at the native frame rate, so triplets built at different velocities
/// share one loss scale.
pub fn advanced_trend_factors(
    future: &[GtBox],
    adjacent: &[GtBox],
    cfg: &TrendConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    trend_factors(future, adjacent, cfg)
}

/// `omega_hat_i = omega_i * sum(L) / sum(omega * L)`.
///
/// When every loss is zero the reweighting has nothing to act on and all
/// weights come back as 1.
pub fn normalize_weights(omega: &[f64], reg_losses: &[f64]) -> Result<Vec<f64>> {
    if omega.len() != reg_losses.len() {
        return Err(Error::validation(format!(
            "{} weights for {} regression losses",
            omega.len(),
            reg_losses.len()
        )));
    }
    if omega.is_empty() {
        return Err(Error::validation("cannot normalize an empty weight vector"));
    }
    if let Some(l) = reg_losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::validation(format!(
            "regression loss {l} is not a finite non-negative value"
        )));
    }
    if let Some(w) = omega.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::validation(format!(
            "weight {w} is not a finite non-negative value"
        )));
    }
    let plain: f64 = reg_losses.iter().sum();
    let weighted: f64 = omega.iter().zip(reg_losses).map(|(w, l)| w * l).sum();
    if weighted == 0.0 {
        return Ok(vec![1.0; omega.len()]);
    }
    let scale = plain / weighted;
    Ok(omega.iter().map(|w| w * scale).collect())
}

/// Computes mIoU, raw and normalized weights in one go.
pub fn trend_weights(
    future: &[GtBox],
    reference: &[GtBox],
    reg_losses: &[f64],
    cfg: &TrendConfig,
) -> Result<TrendWeights> {
    let (m_iou, omega) = trend_factors(future, reference, cfg)?;
    let omega_hat = if omega.is_empty() {
        Vec::new()
    } else {
        normalize_weights(&omega, reg_losses)?
    };
    Ok(TrendWeights {
        m_iou,
        omega,
        omega_hat,
    })
}

/// Weights for the future frame of `triplet`. The reference is the
/// triplet's current frame, or with `advanced` the native-rate frame right
/// before the future one (the future frame itself when `M = 0`). Missing
/// regression losses default to 1 per object.
pub fn triplet_trend_weights(
    clip: &ClipStream,
    triplet: &Triplet,
    reg_losses: Option<&[f64]>,
    cfg: &TrendConfig,
    advanced: bool,
) -> Result<TrendWeights> {
    if triplet.clip_id != clip.clip_id {
        return Err(Error::validation(format!(
            "triplet from clip {} used with clip {}",
            triplet.clip_id, clip.clip_id
        )));
    }
    let m = triplet.velocity as usize;
    let future_index = triplet.cur_index + m;
    let frame = |i: usize| {
        clip.frames
            .get(i)
            .map(|f| f.boxes.as_slice())
            .ok_or_else(|| {
                Error::validation(format!("clip {} has no frame at index {i}", clip.clip_id))
            })
    };
    let future = frame(future_index)?;
    let reference = if advanced {
        frame(future_index.saturating_sub(usize::from(m > 0)))?
    } else {
        frame(triplet.cur_index)?
    };
    let ones;
    let losses = match reg_losses {
        Some(l) => l,
        None => {
            ones = vec![1.0; future.len()];
            &ones
        }
    };
    trend_weights(future, reference, losses, cfg)
}

/// Reweighted regression plus unweighted classification and objectness.
pub fn total_loss(terms: &LossTerms, omega_hat: &[f64]) -> Result<f64> {
    if terms.reg_losses.len() != omega_hat.len() {
        return Err(Error::validation(format!(
            "{} weights for {} regression losses",
            omega_hat.len(),
            terms.reg_losses.len()
        )));
    }
    if !(terms.cls_loss.is_finite() && terms.obj_loss.is_finite()) {
        return Err(Error::validation(
            "classification/objectness loss is not finite",
        ));
    }
    let reg: f64 = omega_hat
        .iter()
        .zip(&terms.reg_losses)
        .map(|(w, l)| w * l)
        .sum();
    Ok(reg + terms.cls_loss + terms.obj_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gt(x: f64, y: f64, w: f64, h: f64) -> GtBox {
        GtBox::new(BBox::new(x, y, w, h), 1)
    }

    #[test]
    fn matched_object() {
        // (0,0,10,10) vs (0,0,10,8): IoU 80/100
        let (m, w) = trend_factors(
            &[gt(0.0, 0.0, 10.0, 10.0)],
            &[gt(0.0, 0.0, 10.0, 8.0)],
            &TrendConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(m[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.25, epsilon = 1e-12);
    }

    #[test]
    fn new_object() {
        let (m, w) = trend_factors(
            &[gt(0.0, 0.0, 10.0, 10.0)],
            &[gt(50.0, 50.0, 10.0, 10.0)],
            &TrendConfig::default(),
        )
        .unwrap();
        assert_eq!(m[0], 0.0);
        assert_abs_diff_eq!(w[0], 0.625, epsilon = 1e-15);

        let (m, w) =
            trend_factors(&[gt(0.0, 0.0, 10.0, 10.0)], &[], &TrendConfig::default()).unwrap();
        assert_eq!((m[0], w[0]), (0.0, 0.625));
    }

    #[test]
    fn stationary_scene_is_neutral() {
        let boxes = vec![gt(0.0, 0.0, 10.0, 10.0), gt(30.0, 5.0, 20.0, 40.0)];
        let (m, w) = trend_factors(&boxes, &boxes, &TrendConfig::default()).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        assert!(w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matching_respects_category() {
        let future = [gt(0.0, 0.0, 10.0, 10.0)];
        let other = [GtBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), 2)];
        let (m, _) = trend_factors(&future, &other, &TrendConfig::default()).unwrap();
        assert_eq!(m[0], 0.0);
    }

    #[test]
    fn advanced_uses_adjacent_reference() {
        let cfg = TrendConfig::default();
        let future = [gt(0.0, 0.0, 10.0, 10.0)];
        // six frames back: IoU 1/19 ≈ 0.053
        let far = [gt(9.0, 0.0, 10.0, 10.0)];
        // one frame back: IoU 0.7 (intersection 70 / union 100)
        let adjacent = [gt(0.0, 0.0, 10.0, 7.0)];
        let (_, w_far) = trend_factors(&future, &far, &cfg).unwrap();
        assert_abs_diff_eq!(w_far[0], 1.0 / 1.6, epsilon = 1e-15);
        let (m, w) = advanced_trend_factors(&future, &adjacent, &cfg).unwrap();
        assert_abs_diff_eq!(m[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.0 / 0.7, epsilon = 1e-12);
    }

    #[test]
    fn triplet_reference_frames() {
        // object moves 4 px/frame, box 20 px wide
        let clip = ClipStream::from_frames(
            0,
            30.0,
            (0..13u64).map(|i| (i, vec![gt(4.0 * i as f64, 0.0, 20.0, 20.0)])),
        )
        .unwrap();
        let t = crate::datamodel::build_triplets(&clip, 6).triplets[0];
        let plain = triplet_trend_weights(&clip, &t, None, &TrendConfig::default(), false).unwrap();
        // 24 px apart: no overlap, treated as new
        assert_eq!(plain.m_iou, vec![0.0]);
        assert_eq!(plain.omega, vec![1.0 / 1.6]);
        let adv = triplet_trend_weights(&clip, &t, None, &TrendConfig::default(), true).unwrap();
        assert_abs_diff_eq!(adv.m_iou[0], 16.0 / 24.0, epsilon = 1e-12);
        assert_eq!(adv.omega_hat, vec![1.0]);

        let still = crate::datamodel::build_triplets(&clip, 0).triplets[3];
        let w = triplet_trend_weights(&clip, &still, None, &TrendConfig::default(), true).unwrap();
        assert_eq!(w.omega, vec![1.0]);
    }

    #[test]
    fn config_errors() {
        let future = [gt(0.0, 0.0, 1.0, 1.0)];
        for (tau, nu) in [
            (0.0, 1.6),
            (1.0, 1.6),
            (0.5, 0.0),
            (0.5, -1.0),
            (f64::NAN, 1.6),
        ] {
            let cfg = TrendConfig { tau, nu };
            assert!(
                matches!(trend_factors(&future, &[], &cfg), Err(Error::Config(_))),
                "{tau} {nu}"
            );
        }
        assert!(TrendConfig::new(0.5, 0.9).unwrap().warnings().len() == 1);
        assert!(TrendConfig::default().warnings().is_empty());
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_weights(&[2.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w[0], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-15);

        let w = normalize_weights(&[3.0, 3.0, 3.0], &[0.1, 5.0, 2.0]).unwrap();
        for v in w {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }

        assert_eq!(normalize_weights(&[7.5], &[0.3]).unwrap(), vec![1.0]);
        assert_eq!(
            normalize_weights(&[2.0, 0.5], &[0.0, 0.0]).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn normalization_errors() {
        assert!(normalize_weights(&[1.0], &[1.0, 2.0]).is_err());
        assert!(normalize_weights(&[], &[]).is_err());
        assert!(normalize_weights(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let terms = LossTerms {
            reg_losses: vec![0.5, 0.5],
            cls_loss: 0.2,
            obj_loss: 0.3,
        };
        assert_abs_diff_eq!(
            total_loss(&terms, &[1.0, 1.0]).unwrap(),
            1.5,
            epsilon = 1e-15
        );

        let empty = LossTerms {
            reg_losses: vec![],
            cls_loss: 0.2,
            obj_loss: 0.3,
        };
        assert_abs_diff_eq!(total_loss(&empty, &[]).unwrap(), 0.5, epsilon = 1e-15);

        assert!(total_loss(&terms, &[1.0]).is_err());
    }

    #[test]
    fn zero_velocity_total_matches_unweighted() {
        let boxes = vec![gt(0.0, 0.0, 10.0, 10.0), gt(40.0, 0.0, 12.0, 9.0)];
        let reg = vec![0.7, 0.2];
        let tw = trend_weights(&boxes, &boxes, &reg, &TrendConfig::default()).unwrap();
        let terms = LossTerms {
            reg_losses: reg,
            cls_loss: 0.4,
            obj_loss: 0.1,
        };
        assert_eq!(
            total_loss(&terms, &tw.omega_hat).unwrap(),
            total_loss(&terms, &[1.0, 1.0]).unwrap()
        );
    }

    proptest! {
        #[test]
        fn sum_is_preserved(pairs in prop::collection::vec((0.01..10.0f64, 0.0..5.0f64), 1..20)) {
            let (omega, loss): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(omega.iter().zip(&loss).map(|(w, l)| w * l).sum::<f64>() > 0.0);
            let hat = normalize_weights(&omega, &loss).unwrap();
            let plain: f64 = loss.iter().sum();
            let reweighted: f64 = hat.iter().zip(&loss).map(|(w, l)| w * l).sum();
            prop_assert!((reweighted - plain).abs() <= 1e-9 * plain);
            let terms = LossTerms { reg_losses: loss.clone(), cls_loss: 0.3, obj_loss: 0.2 };
            let with = total_loss(&terms, &hat).unwrap();
            prop_assert!((with - (plain + 0.5)).abs() <= 1e-9 * (plain + 0.5));
        }

        #[test]
        fn weight_branches(m in 0.0..=1.0f64, tau in 0.05..0.95f64, nu in 0.5..3.0f64) {
            let cfg = TrendConfig::new(tau, nu).unwrap();
            let w = trend_weight(m, &cfg);
            if m >= tau {
                prop_assert!((w * m - 1.0).abs() < 1e-12);
            } else {
                prop_assert!((w * nu - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn faster_means_heavier(a in 0.5..1.0f64, b in 0.5..1.0f64) {
            prop_assume!(a < b);
            let cfg = TrendConfig::default();
            prop_assert!(trend_weight(a, &cfg) > trend_weight(b, &cfg));
        }
    }
}
