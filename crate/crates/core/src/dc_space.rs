//! Disease-coordinate algebra.
//!
//! Each diagnostic class owns a point on the unit circle; voxels outside the
//! intracranial cavity map to the origin. Augmentation mixes coordinates in
//! polar form, and grading maps are colorized by angle (hue) and radius
//! (saturation).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiagnosticClass {
    CN = 0,
    AD = 1,
    FTD = 2,
}

impl DiagnosticClass {
    pub const ALL: [DiagnosticClass; 3] = [DiagnosticClass::CN, DiagnosticClass::AD, DiagnosticClass::FTD];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DiagnosticClass::CN => "CN",
            DiagnosticClass::AD => "AD",
            DiagnosticClass::FTD => "FTD",
        }
    }
}

impl fmt::Display for DiagnosticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiagnosticClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CN" => Ok(DiagnosticClass::CN),
            "AD" => Ok(DiagnosticClass::AD),
            "FTD" => Ok(DiagnosticClass::FTD),
            other => Err(Error::Data(format!("unknown diagnostic class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DcPoint {
    pub x: f64,
    pub y: f64,
}

impl DcPoint {
    pub const ORIGIN: DcPoint = DcPoint { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Polar angle in (-pi, pi]; the origin has angle 0.
    pub fn angle(self) -> f64 {
        if self.x == 0.0 && self.y == 0.0 {
            0.0
        } else {
            self.y.atan2(self.x)
        }
    }

    pub fn radius_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

pub fn class_to_dc(c: DiagnosticClass) -> DcPoint {
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    match c {
        DiagnosticClass::CN => DcPoint::new(-1.0, 0.0),
        DiagnosticClass::AD => DcPoint::new(-half_sqrt3, 0.5),
        DiagnosticClass::FTD => DcPoint::new(half_sqrt3, 0.5),
    }
}

/// Anchor angle of a class in degrees: CN 180, AD 150, FTD 30.
pub fn class_angle_deg(c: DiagnosticClass) -> f64 {
    match c {
        DiagnosticClass::CN => 180.0,
        DiagnosticClass::AD => 150.0,
        DiagnosticClass::FTD => 30.0,
    }
}

pub fn voxel_target(c: DiagnosticClass, inside_icc: bool) -> DcPoint {
    if inside_icc {
        class_to_dc(c)
    } else {
        DcPoint::ORIGIN
    }
}

/// Mixes two (intensity, coordinate) pairs.
///
/// Intensity and angle are mixed linearly; the magnitude is the mix of the
/// squared radii. Angles are not unwrapped, so two points on either side of
/// the negative x axis mix through the positive half plane.
pub fn dc_mixup(i1: f64, p1: DcPoint, i2: f64, p2: DcPoint, alpha: f64) -> Result<(f64, DcPoint)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("mixup coefficient {alpha} outside [0, 1]")));
    }
    // At the endpoints the formula reduces to p * |p|; evaluate that directly
    // so unit points come back bit-exact instead of through cos/sin.
    let endpoint = |p: DcPoint| DcPoint::new(p.x * p.norm(), p.y * p.norm());
    if alpha == 1.0 {
        return Ok((i1, endpoint(p1)));
    }
    if alpha == 0.0 {
        return Ok((i2, endpoint(p2)));
    }
    let beta = 1.0 - alpha;
    let intensity = alpha * i1 + beta * i2;
    let phi = alpha * p1.angle() + beta * p2.angle();
    let r = alpha * p1.radius_sq() + beta * p2.radius_sq();
    Ok((intensity, DcPoint::new(r * phi.cos(), r * phi.sin())))
}

pub type Rgb = [u8; 3];

pub const CN_COLOR: Rgb = [0, 0, 255];
pub const AD_COLOR: Rgb = [255, 0, 0];
pub const FTD_COLOR: Rgb = [0, 255, 0];
pub const NEUTRAL_GRAY: Rgb = [128, 128, 128];

/// Piecewise-linear map from coordinate angle (degrees) to HSV hue (degrees).
///
/// Anchors: FTD 30 -> 120 (green), AD 150 -> 0 (red), CN 180 -> 240 (blue).
/// Hue decreases monotonically (mod 360) going counter-clockwise.
pub fn angle_to_hue(angle_deg: f64) -> f64 {
    let a = angle_deg.rem_euclid(360.0);
    // unwrap so that [30, 390) is one turn starting at the FTD anchor
    let a = if a < 30.0 { a + 360.0 } else { a };
    let hue = if a <= 150.0 {
        120.0 - (a - 30.0)
    } else if a <= 180.0 {
        360.0 - 4.0 * (a - 150.0)
    } else {
        240.0 - 120.0 * (a - 180.0) / 210.0
    };
    hue.rem_euclid(360.0)
}

fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Grading-map color of a coordinate: the fully saturated hue of its angle,
/// blended toward neutral gray as the radius falls below 1.
pub fn dc_to_color(p: DcPoint) -> Rgb {
    let sat = p.norm().min(1.0);
    let pure = hue_to_rgb(angle_to_hue(p.angle().to_degrees()));
    let gray = f64::from(NEUTRAL_GRAY[0]) / 255.0;
    pure.map(|c| {
        let v = gray * (1.0 - sat) + c * sat;
        (v * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

/// Smallest absolute angular difference in degrees.
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
