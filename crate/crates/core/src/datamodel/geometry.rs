use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corner convention
/// `(x_tl, y_tl, x_br, y_br)`. Serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(c: [f64; 4]) -> Self {
        BoundingBox {
            x_tl: c[0],
            y_tl: c[1],
            x_br: c[2],
            y_br: c[3],
        }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_tl, b.y_tl, b.x_br, b.y_br]
    }
}

impl BoundingBox {
    /// Builds a box and checks its invariants.
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self> {
        let b = BoundingBox {
            x_tl,
            y_tl,
            x_br,
            y_br,
        };
        match b.violation() {
            None => Ok(b),
            Some(rule) => Err(Error::Domain(format!("bounding box {b:?}: {rule}"))),
        }
    }

    /// First broken invariant, if any.
    pub fn violation(&self) -> Option<&'static str> {
        let c = [self.x_tl, self.y_tl, self.x_br, self.y_br];
        if c.iter().any(|v| !v.is_finite()) {
            Some("non-finite coordinate")
        } else if c.iter().any(|&v| v < 0.0) {
            Some("negative coordinate")
        } else if self.x_br <= self.x_tl {
            Some("x_br must exceed x_tl")
        } else if self.y_br <= self.y_tl {
            Some("y_br must exceed y_tl")
        } else {
            None
        }
    }

    pub fn is_valid(&self) -> bool {
        self.violation().is_none()
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_tl + self.x_br),
            0.5 * (self.y_tl + self.y_br),
        )
    }

    /// Tight box enclosing both inputs.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_tl: self.x_tl.min(other.x_tl),
            y_tl: self.y_tl.min(other.y_tl),
            x_br: self.x_br.max(other.x_br),
            y_br: self.y_br.max(other.y_br),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x_tl: self.x_tl + dx,
            y_tl: self.y_tl + dy,
            x_br: self.x_br + dx,
            y_br: self.y_br + dy,
        }
    }

    pub fn scaled(&self, s: f64) -> BoundingBox {
        BoundingBox {
            x_tl: self.x_tl * s,
            y_tl: self.y_tl * s,
            x_br: self.x_br * s,
            y_br: self.y_br * s,
        }
    }
}

/// Intersection over union. Degenerate (zero-area) boxes are a domain error.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    for bx in [a, b] {
        if !(bx.area() > 0.0) {
            return Err(Error::Domain(format!("degenerate box in iou: {bx:?}")));
        }
    }
    let iw = (a.x_br.min(b.x_br) - a.x_tl.max(b.x_tl)).max(0.0);
    let ih = (a.y_br.min(b.y_br) - a.y_tl.max(b.y_tl)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
