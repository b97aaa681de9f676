//! Planar geometry helpers: vectors, polylines, oriented rectangles.

/// A 2D point or vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product; positive when `o` is to the left.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    pub fn from_heading(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }

    /// Rotate by `-theta` (world -> frame with heading `theta`).
    pub fn into_frame(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x + s * self.y, -s * self.x + c * self.y)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// An open polyline through at least two distinct waypoints.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<Vec2>,
    /// cumulative arclength at each waypoint
    cum: Vec<f64>,
}

impl Polyline {
    /// Returns `None` when fewer than two points or a zero-length segment.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            let d = w[0].dist(w[1]);
            if d <= 1e-9 {
                return None;
            }
            cum.push(cum.last().unwrap() + d);
        }
        Some(Self { points, cum })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn last(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    /// Point at arclength `s` (clamped; `wrap` loops around instead).
    pub fn point_at(&self, s: f64, wrap: bool) -> Vec2 {
        let len = self.length();
        let s = if wrap { s.rem_euclid(len) } else { s.clamp(0.0, len) };
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        let seg = self.points[i + 1].sub(self.points[i]);
        let t = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]);
        self.points[i].add(seg.scale(t))
    }

    /// Unit tangent of the segment containing arclength `s`.
    pub fn tangent_at(&self, s: f64, wrap: bool) -> Vec2 {
        let len = self.length();
        let s = if wrap { s.rem_euclid(len) } else { s.clamp(0.0, len) };
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        let seg = self.points[i + 1].sub(self.points[i]);
        seg.scale(1.0 / seg.norm())
    }

    /// Distance from `p` to the polyline and the unit tangent of the closest
    /// segment.
    pub fn closest(&self, p: Vec2) -> (f64, Vec2) {
        let (d, tan, _) = self.closest_full(p);
        (d, tan)
    }

    /// Like [`Self::closest`], also returning the arclength of the closest
    /// point.
    pub fn closest_full(&self, p: Vec2) -> (f64, Vec2, f64) {
        let mut best = f64::INFINITY;
        let mut tan = Vec2::new(1.0, 0.0);
        let mut arc = 0.0;
        for (i, w) in self.points.windows(2).enumerate() {
            let seg = w[1].sub(w[0]);
            let len = seg.norm();
            let t = (p.sub(w[0]).dot(seg) / (len * len)).clamp(0.0, 1.0);
            let proj = w[0].add(seg.scale(t));
            let d = p.dist(proj);
            if d < best {
                best = d;
                tan = seg.scale(1.0 / len);
                arc = self.cum[i] + t * len;
            }
        }
        (best, tan, arc)
    }

    /// Distance from `p` to the nearest waypoint (not segment).
    pub fn nearest_waypoint_dist(&self, p: Vec2) -> f64 {
        self.points.iter().map(|w| w.dist(p)).fold(f64::INFINITY, f64::min)
    }
}

/// An oriented rectangle (vehicle footprint).
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Obb {
    pub fn corners(&self) -> [Vec2; 4] {
        let fwd = Vec2::from_heading(self.heading).scale(self.half_len);
        let left = Vec2::from_heading(self.heading + std::f64::consts::FRAC_PI_2)
            .scale(self.half_wid);
        [
            self.center.add(fwd).add(left),
            self.center.add(fwd).sub(left),
            self.center.sub(fwd).sub(left),
            self.center.sub(fwd).add(left),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let local = p.sub(self.center).into_frame(self.heading);
        local.x.abs() <= self.half_len && local.y.abs() <= self.half_wid
    }
}

/// Separating-axis overlap test for two oriented rectangles.
pub fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    let axes = [
        Vec2::from_heading(a.heading),
        Vec2::from_heading(a.heading + std::f64::consts::FRAC_PI_2),
        Vec2::from_heading(b.heading),
        Vec2::from_heading(b.heading + std::f64::consts::FRAC_PI_2),
    ];
    let ca = a.corners();
    let cb = b.corners();
    for axis in axes {
        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in ca {
            let v = c.dot(axis);
            amin = amin.min(v);
            amax = amax.max(v);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in cb {
            let v = c.dot(axis);
            bmin = bmin.min(v);
            bmax = bmax.max(v);
        }
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}
