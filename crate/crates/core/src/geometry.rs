//! Planar geometry, radio parameters, and the pairwise interference test.
//!
//! Interference is judged with a protocol model: two directed links may be
//! active at the same time only when every cross distance between the two
//! transmitter/receiver pairs exceeds both link lengths scaled by a guard
//! margin `1 + delta`. The margin is derived from the decode SIR threshold
//! and the path loss exponent so that clearing the spacing test also clears
//! the SIR test against a single interferer.

use thiserror::Error;

use crate::NodeId;

/// A point in the plane. Distances are in meters throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    /// Point at distance `r` from the origin, at angle `theta` radians
    /// measured counterclockwise from the positive x axis.
    pub fn polar(r: f64, theta: f64) -> Self {
        Point2D {
            x: r * theta.cos(),
            y: r * theta.sin(),
        }
    }

    pub fn dist(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A directed wireless link from transmitter to receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedLink {
    pub tx: NodeId,
    pub rx: NodeId,
    pub length: f64,
}

impl DirectedLink {
    pub fn new(tx: NodeId, rx: NodeId, length: f64) -> Self {
        DirectedLink { tx, rx, length }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioConfigError {
    #[error("transmit range must be positive, got {0}")]
    NonPositiveTxRange(f64),
    #[error("carrier sense range must be positive, got {0}")]
    NonPositiveCsRange(f64),
    #[error("path loss exponent must be at least 2, got {0}")]
    PathLossTooSmall(f64),
    #[error("SIR decode threshold must exceed 1, got {0}")]
    SirThresholdTooSmall(f64),
    #[error("capture ratio must be at least 1, got {0}")]
    CaptureRatioTooSmall(f64),
    #[error("link capacity must be positive, got {0}")]
    NonPositiveLinkCapacity(f64),
}

/// Radio and channel parameters shared by analysis and simulation.
///
/// `delta` is the interference guard margin: concurrent transmissions must
/// keep all cross distances above `(1 + delta)` times each link length.
/// It is derived from the SIR threshold via [`delta_margin`] so the spacing
/// rule and the single-interferer SIR rule agree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    /// Maximum distance at which a frame can be decoded, in meters.
    pub tx_range: f64,
    /// Maximum distance at which a transmission is sensed as channel
    /// activity, in meters.
    pub cs_range: f64,
    /// Path loss exponent `alpha`; received power falls as `d^-alpha`.
    pub path_loss_exp: f64,
    /// Minimum signal-to-interference power ratio for a successful decode.
    pub sir_threshold: f64,
    /// Guard margin for the pairwise spacing test.
    pub delta: f64,
    /// Power ratio a new frame needs over a locked-on frame for the receiver
    /// to abandon the old frame and capture the new one.
    pub capture_ratio: f64,
    /// Whether receivers may restart onto a sufficiently stronger new frame.
    pub rs_mode: bool,
    /// Transmit power in arbitrary linear units; only ratios matter.
    pub tx_power: f64,
    /// Nominal link data rate used by the analytic capacity results, in
    /// arbitrary units (1.0 = one link's worth of airtime).
    pub link_capacity: f64,
}

impl RadioConfig {
    /// Defaults mirroring a common 802.11b simulation setup: 250 m transmit
    /// range, 550 m carrier sense range, path loss exponent 4, 10 dB decode
    /// threshold, and 10 dB receiver capture ratio with restart enabled.
    pub fn ns2_default() -> Self {
        let path_loss_exp = 4.0;
        let sir_threshold = 10.0;
        RadioConfig {
            tx_range: 250.0,
            cs_range: 550.0,
            path_loss_exp,
            sir_threshold,
            delta: delta_margin(sir_threshold, path_loss_exp).expect("valid defaults"),
            capture_ratio: 10.0,
            rs_mode: true,
            tx_power: 1.0,
            link_capacity: 1.0,
        }
    }

    /// Same defaults with a different carrier sense range.
    pub fn with_cs_range(cs_range: f64) -> Self {
        RadioConfig {
            cs_range,
            ..RadioConfig::ns2_default()
        }
    }

    pub fn validate(&self) -> Result<(), RadioConfigError> {
        if !(self.tx_range > 0.0) {
            return Err(RadioConfigError::NonPositiveTxRange(self.tx_range));
        }
        if !(self.cs_range > 0.0) {
            return Err(RadioConfigError::NonPositiveCsRange(self.cs_range));
        }
        if !(self.path_loss_exp >= 2.0) {
            return Err(RadioConfigError::PathLossTooSmall(self.path_loss_exp));
        }
        if !(self.sir_threshold > 1.0) {
            return Err(RadioConfigError::SirThresholdTooSmall(self.sir_threshold));
        }
        if !(self.capture_ratio >= 1.0) {
            return Err(RadioConfigError::CaptureRatioTooSmall(self.capture_ratio));
        }
        if !(self.link_capacity > 0.0) {
            return Err(RadioConfigError::NonPositiveLinkCapacity(self.link_capacity));
        }
        Ok(())
    }

    /// Spacing multiplier `1 + delta` applied to link lengths.
    pub fn margin(&self) -> f64 {
        1.0 + self.delta
    }

    /// Received power at distance `dist` from a transmitter, normalized so
    /// that power at unit distance equals `tx_power`.
    pub fn received_power(&self, dist: f64) -> Result<f64, GeometryError> {
        if !(dist > 0.0) {
            return Err(GeometryError::NonPositiveDistance(dist));
        }
        Ok(self.tx_power / dist.powf(self.path_loss_exp))
    }

    /// True when a node at distance `dist` senses the transmission.
    /// The boundary counts as sensed.
    pub fn within_cs(&self, dist: f64) -> bool {
        dist <= self.cs_range
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("SIR threshold must exceed 1 to yield a positive margin, got {0}")]
    InvalidSirThreshold(f64),
    #[error("path loss exponent must be positive, got {0}")]
    InvalidPathLossExponent(f64),
}

/// Guard margin `delta` such that an interferer held `(1 + delta) * d` away
/// from a receiver at link distance `d` delivers at most `1/sir` of the
/// signal power: `delta = sir^(1/alpha) - 1`.
pub fn delta_margin(sir_threshold: f64, path_loss_exp: f64) -> Result<f64, GeometryError> {
    if !(sir_threshold > 1.0) {
        return Err(GeometryError::InvalidSirThreshold(sir_threshold));
    }
    if !(path_loss_exp > 0.0) {
        return Err(GeometryError::InvalidPathLossExponent(path_loss_exp));
    }
    Ok(sir_threshold.powf(1.0 / path_loss_exp) - 1.0)
}

/// Pairwise spacing test between links `(t1 -> r1)` and `(t2 -> r2)`.
///
/// Both links may be active together only when each of the four cross
/// distances `t1-t2`, `t1-r2`, `r1-t2`, `r1-r2` strictly exceeds
/// `(1 + delta)` times each link's own length. Returns `None` when
/// compatible, otherwise `Some(index)` of the first violated inequality
/// (0..8, ordering fixed: the four cross distances against link 1's length,
/// then the same four against link 2's length).
pub fn violated_inequality(
    t1: Point2D,
    r1: Point2D,
    t2: Point2D,
    r2: Point2D,
    delta: f64,
) -> Option<usize> {
    let len1 = t1.dist(&r1);
    let len2 = t2.dist(&r2);
    let margin = 1.0 + delta;
    let need1 = margin * len1;
    let need2 = margin * len2;
    let cross = [
        t2.dist(&r1),
        r2.dist(&r1),
        t2.dist(&t1),
        r2.dist(&t1),
        t1.dist(&r2),
        r1.dist(&r2),
        t1.dist(&t2),
        r1.dist(&t2),
    ];
    for (idx, &d) in cross.iter().enumerate() {
        let need = if idx < 4 { need1 } else { need2 };
        if !(d > need) {
            return Some(idx);
        }
    }
    None
}

/// True when the two links pass the pairwise spacing test.
pub fn links_compatible(t1: Point2D, r1: Point2D, t2: Point2D, r2: Point2D, delta: f64) -> bool {
    violated_inequality(t1, r1, t2, r2, delta).is_none()
}

/// [`links_compatible`] over links referring to node positions by id.
pub fn pairwise_compatible(
    a: &DirectedLink,
    b: &DirectedLink,
    positions: &[Point2D],
    delta: f64,
) -> bool {
    links_compatible(
        positions[a.tx],
        positions[a.rx],
        positions[b.tx],
        positions[b.rx],
        delta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn margin_for_10db_threshold_and_fourth_power_loss() {
        let delta = delta_margin(10.0, 4.0).unwrap();
        assert!((delta - 0.778_279_41).abs() < 1e-6);
        // A single interferer at exactly (1 + delta) * d delivers exactly
        // threshold SIR; any strictly larger spacing clears it.
        assert!(((1.0 + delta).powf(4.0) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn margin_for_10db_threshold_and_square_loss() {
        let delta = delta_margin(10.0, 2.0).unwrap();
        assert!((delta - (10.0f64.sqrt() - 1.0)).abs() < 1e-12);
        assert!((delta - 2.162_277_66).abs() < 1e-6);
    }

    #[test]
    fn margin_rejects_degenerate_parameters() {
        assert!(delta_margin(1.0, 4.0).is_err());
        assert!(delta_margin(0.5, 4.0).is_err());
        assert!(delta_margin(10.0, 0.0).is_err());
        assert!(delta_margin(10.0, -1.0).is_err());
    }

    #[test]
    fn received_power_follows_fourth_power_falloff() {
        let cfg = RadioConfig::ns2_default();
        let p1 = cfg.received_power(1.0).unwrap();
        let p2 = cfg.received_power(1.9).unwrap();
        assert!((p1 - 1.0).abs() < 1e-12);
        assert!((p2 - 1.0 / 1.9f64.powi(4)).abs() < 1e-12);
        assert!((p2 - 0.076_733_8).abs() < 1e-6);
        let p3 = cfg.received_power(3.0).unwrap();
        assert!((p3 - 1.0 / 81.0).abs() < 1e-12);
        assert!(cfg.received_power(0.0).is_err());
        assert!(cfg.received_power(-2.0).is_err());
    }

    #[test]
    fn ns2_defaults_validate_and_derive_margin() {
        let cfg = RadioConfig::ns2_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tx_range, 250.0);
        assert_eq!(cfg.cs_range, 550.0);
        assert!((cfg.delta - 0.778_279_41).abs() < 1e-6);
        assert!((cfg.margin() - 1.778_279_41).abs() < 1e-6);
        assert!(cfg.rs_mode);
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut cfg = RadioConfig::ns2_default();
        cfg.tx_range = 0.0;
        assert!(matches!(
            cfg.validate(),
            Err(RadioConfigError::NonPositiveTxRange(_))
        ));
        let mut cfg = RadioConfig::ns2_default();
        cfg.sir_threshold = 1.0;
        assert!(matches!(
            cfg.validate(),
            Err(RadioConfigError::SirThresholdTooSmall(_))
        ));
        let mut cfg = RadioConfig::ns2_default();
        cfg.capture_ratio = 0.5;
        assert!(matches!(
            cfg.validate(),
            Err(RadioConfigError::CaptureRatioTooSmall(_))
        ));
    }

    #[test]
    fn parallel_links_flip_compatibility_at_the_margin_boundary() {
        let delta = delta_margin(10.0, 4.0).unwrap();
        let d = 100.0;
        let need = (1.0 + delta) * d;
        // Two parallel links of length d, separated perpendicular to their
        // direction. Just beyond the required spacing: compatible.
        let sep_ok = need * (1.0 + EPS);
        let t1 = Point2D::new(0.0, 0.0);
        let r1 = Point2D::new(d, 0.0);
        let t2 = Point2D::new(0.0, sep_ok);
        let r2 = Point2D::new(d, sep_ok);
        assert!(links_compatible(t1, r1, t2, r2, delta));
        // Just inside: incompatible.
        let sep_bad = need * (1.0 - EPS);
        let t2 = Point2D::new(0.0, sep_bad);
        let r2 = Point2D::new(d, sep_bad);
        assert!(!links_compatible(t1, r1, t2, r2, delta));
        // Exactly at the boundary the strict inequality fails.
        let t2 = Point2D::new(0.0, need);
        let r2 = Point2D::new(d, need);
        assert!(!links_compatible(t1, r1, t2, r2, delta));
    }

    #[test]
    fn receiver_receiver_proximity_alone_blocks_concurrency() {
        // Transmitters far apart, receivers back to back at distance d:
        // the r1-r2 cross distance fails its inequality even though each
        // receiver is far from the other transmitter.
        let delta = delta_margin(10.0, 4.0).unwrap();
        let d = 200.0;
        let t1 = Point2D::new(-d, 0.0);
        let r1 = Point2D::new(0.0, 0.0);
        let r2 = Point2D::new(d, 0.0);
        let t2 = Point2D::new(2.0 * d, 0.0);
        assert!(!links_compatible(t1, r1, t2, r2, delta));
        let idx = violated_inequality(t1, r1, t2, r2, delta).unwrap();
        // First failing check is r2 against r1 with link 1's length.
        assert_eq!(idx, 1);
    }

    #[test]
    fn far_apart_links_are_compatible() {
        let delta = delta_margin(10.0, 4.0).unwrap();
        let t1 = Point2D::new(0.0, 0.0);
        let r1 = Point2D::new(200.0, 0.0);
        let t2 = Point2D::new(5000.0, 0.0);
        let r2 = Point2D::new(5200.0, 0.0);
        assert!(links_compatible(t1, r1, t2, r2, delta));
        assert_eq!(violated_inequality(t1, r1, t2, r2, delta), None);
    }

    #[test]
    fn pairwise_compatible_reads_positions_by_node_id() {
        let delta = delta_margin(10.0, 4.0).unwrap();
        let positions = vec![
            Point2D::new(0.0, 0.0),
            Point2D::new(200.0, 0.0),
            Point2D::new(5000.0, 0.0),
            Point2D::new(5200.0, 0.0),
        ];
        let a = DirectedLink::new(0, 1, 200.0);
        let b = DirectedLink::new(2, 3, 200.0);
        assert!(pairwise_compatible(&a, &b, &positions, delta));
        let c = DirectedLink::new(1, 0, 200.0);
        assert!(!pairwise_compatible(&a, &c, &positions, delta));
    }

    #[test]
    fn within_cs_includes_the_boundary() {
        let cfg = RadioConfig::ns2_default();
        assert!(cfg.within_cs(550.0));
        assert!(cfg.within_cs(549.999));
        assert!(!cfg.within_cs(550.001));
    }

    proptest! {
        #[test]
        fn compatibility_is_symmetric(
            x1 in -1000.0..1000.0f64, y1 in -1000.0..1000.0f64,
            x2 in -1000.0..1000.0f64, y2 in -1000.0..1000.0f64,
            x3 in -1000.0..1000.0f64, y3 in -1000.0..1000.0f64,
            x4 in -1000.0..1000.0f64, y4 in -1000.0..1000.0f64,
        ) {
            let t1 = Point2D::new(x1, y1);
            let r1 = Point2D::new(x2, y2);
            let t2 = Point2D::new(x3, y3);
            let r2 = Point2D::new(x4, y4);
            let delta = 0.778;
            prop_assert_eq!(
                links_compatible(t1, r1, t2, r2, delta),
                links_compatible(t2, r2, t1, r1, delta)
            );
        }

        #[test]
        fn larger_margin_never_admits_more_pairs(
            x1 in -1000.0..1000.0f64, y1 in -1000.0..1000.0f64,
            x2 in -1000.0..1000.0f64, y2 in -1000.0..1000.0f64,
            x3 in -1000.0..1000.0f64, y3 in -1000.0..1000.0f64,
            x4 in -1000.0..1000.0f64, y4 in -1000.0..1000.0f64,
            small in 0.1..1.0f64,
            extra in 0.0..2.0f64,
        ) {
            let t1 = Point2D::new(x1, y1);
            let r1 = Point2D::new(x2, y2);
            let t2 = Point2D::new(x3, y3);
            let r2 = Point2D::new(x4, y4);
            let large = small + extra;
            if links_compatible(t1, r1, t2, r2, large) {
                prop_assert!(links_compatible(t1, r1, t2, r2, small));
            }
        }

        #[test]
        fn received_power_decreases_with_distance(
            d1 in 1.0..5000.0f64,
            factor in 1.001..10.0f64,
        ) {
            let cfg = RadioConfig::ns2_default();
            let near = cfg.received_power(d1).unwrap();
            let far = cfg.received_power(d1 * factor).unwrap();
            prop_assert!(far < near);
        }
    }
}
