/// Axis-aligned box in continuous pixel coordinates (origin top-left,
/// x to the right, y down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Result of fitting a box into `[0,W]x[0,H]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clipped {
    Inside(BoundingBox),
    Clipped(BoundingBox),
    Outside,
}

impl BoundingBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    /// Well-formed: finite with positive extent on both axes.
    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        if self.is_valid() {
            self.width() * self.height()
        } else {
            0.0
        }
    }

    /// Bottom-center point: where the damage touches the ground.
    pub fn bottom_center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), self.y_max)
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Clip to the image frame. A box that keeps no positive area is `Outside`.
    pub fn clip_to(&self, width: f64, height: f64) -> Clipped {
        if self.is_inside(width, height) {
            return Clipped::Inside(*self);
        }
        let clipped = BoundingBox {
            x_min: self.x_min.max(0.0),
            y_min: self.y_min.max(0.0),
            x_max: self.x_max.min(width),
            y_max: self.y_max.min(height),
        };
        if clipped.is_valid() {
            Clipped::Clipped(clipped)
        } else {
            Clipped::Outside
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}
