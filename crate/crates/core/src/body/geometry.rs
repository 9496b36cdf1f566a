//! Rigid transforms, capsules and axis-aligned part boxes.

use serde::{Deserialize, Serialize};

use super::dual::Scalar;

pub type Vec3 = [f64; 3];

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Rotation plus translation; maps part-canonical coordinates to world.
#[derive(Clone, Copy, Debug)]
pub struct Rigid<S: Scalar> {
    pub rot: [[S; 3]; 3],
    pub trans: [S; 3],
}

pub type RigidTransform = Rigid<f64>;

impl<S: Scalar> Rigid<S> {
    pub fn identity() -> Self {
        let o = S::cst(0.0);
        let l = S::cst(1.0);
        Self {
            rot: [[l, o, o], [o, l, o], [o, o, l]],
            trans: [o, o, o],
        }
    }

    pub fn translation(t: [S; 3]) -> Self {
        Self {
            trans: t,
            ..Self::identity()
        }
    }

    /// Rotation from an axis-angle vector (Rodrigues), smooth at zero.
    pub fn from_axis_angle(w: [S; 3]) -> Self {
        let th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        let (a, b) = if th2.val() < 1e-8 {
            // Taylor expansions of sin(t)/t and (1 - cos t)/t^2 in t^2.
            let a = S::cst(1.0) - th2 / S::cst(6.0) + th2 * th2 / S::cst(120.0);
            let b = S::cst(0.5) - th2 / S::cst(24.0) + th2 * th2 / S::cst(720.0);
            (a, b)
        } else {
            let th = th2.sqrt();
            (th.sin() / th, (S::cst(1.0) - th.cos()) / th2)
        };
        let o = S::cst(0.0);
        let k = [[o, -w[2], w[1]], [w[2], o, -w[0]], [-w[1], w[0], o]];
        let mut rot = Self::identity().rot;
        for i in 0..3 {
            for j in 0..3 {
                let mut k2 = o;
                for m in 0..3 {
                    k2 = k2 + k[i][m] * k[m][j];
                }
                rot[i][j] = rot[i][j] + a * k[i][j] + b * k2;
            }
        }
        Self {
            rot,
            trans: [o, o, o],
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let o = S::cst(0.0);
        let mut rot = [[o; 3]; 3];
        let mut trans = self.trans;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = o;
                for m in 0..3 {
                    s = s + self.rot[i][m] * other.rot[m][j];
                }
                rot[i][j] = s;
            }
            for m in 0..3 {
                trans[i] = trans[i] + self.rot[i][m] * other.trans[m];
            }
        }
        Self { rot, trans }
    }

    pub fn apply(&self, p: [S; 3]) -> [S; 3] {
        let mut out = self.trans;
        for (i, o) in out.iter_mut().enumerate() {
            for (m, pm) in p.iter().enumerate() {
                *o = *o + self.rot[i][m] * *pm;
            }
        }
        out
    }

    pub fn to_f64(&self) -> RigidTransform {
        let mut rot = [[0.0; 3]; 3];
        for (i, row) in rot.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.rot[i][j].val();
            }
        }
        Rigid {
            rot,
            trans: [
                self.trans[0].val(),
                self.trans[1].val(),
                self.trans[2].val(),
            ],
        }
    }
}

impl RigidTransform {
    pub fn inverse(&self) -> Self {
        let mut rot = [[0.0; 3]; 3];
        for (i, row) in rot.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.rot[j][i];
            }
        }
        let mut trans = [0.0; 3];
        for (i, t) in trans.iter_mut().enumerate() {
            *t = -(0..3).map(|m| rot[i][m] * self.trans[m]).sum::<f64>();
        }
        Self { rot, trans }
    }

    /// World point into this part's canonical frame: `(G⁻¹ [x, 1])₁:₃`.
    pub fn canonicalize(&self, x: Vec3) -> Vec3 {
        let d = sub3(x, self.trans);
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|m| self.rot[m][i] * d[m]).sum();
        }
        out
    }

    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|m| self.rot[i][m] * v[m]).sum();
        }
        out
    }

    /// Largest entry of `|RᵀR − I|` plus the deviation of det(R) from 1.
    pub fn rigidity_residual(&self) -> f64 {
        let r = &self.rot;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|m| r[m][i] * r[m][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        let det = dot3(r[0], cross3(r[1], r[2]));
        worst.max((det - 1.0).abs())
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            out[i * 4..i * 4 + 3].copy_from_slice(&self.rot[i]);
            out[i * 4 + 3] = self.trans[i];
        }
        out
    }

    pub fn from_3x4(m: &[f64; 12]) -> Self {
        let mut rot = [[0.0; 3]; 3];
        let mut trans = [0.0; 3];
        for i in 0..3 {
            rot[i].copy_from_slice(&m[i * 4..i * 4 + 3]);
            trans[i] = m[i * 4 + 3];
        }
        Self { rot, trans }
    }

    /// Left-multiplies by a global rigid motion: `M · G`.
    pub fn premultiply(&self, m: &RigidTransform) -> Self {
        m.compose(self)
    }
}

/// Segment inflated by a radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn distance_to_axis(&self, p: Vec3) -> f64 {
        let ab = sub3(self.b, self.a);
        let ap = sub3(p, self.a);
        let len2 = dot3(ab, ab);
        let t = if len2 > 0.0 {
            (dot3(ap, ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        norm3(sub3(ap, scale3(ab, t)))
    }

    /// Negative inside.
    pub fn sdf(&self, p: Vec3) -> f64 {
        self.distance_to_axis(p) - self.radius
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            a: g.apply(self.a),
            b: g.apply(self.b),
            radius: self.radius,
        }
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for i in 0..3 {
            lo[i] = self.a[i].min(self.b[i]) - self.radius;
            hi[i] = self.a[i].max(self.b[i]) + self.radius;
        }
        (lo, hi)
    }

    pub fn length(&self) -> f64 {
        norm3(sub3(self.b, self.a))
    }
}

/// Axis-aligned box in a part's canonical frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl PartBox {
    /// Tight bounds inflated on every side by `padding × extent`.
    pub fn padded(lo: Vec3, hi: Vec3, padding: f64) -> Self {
        let mut min = lo;
        let mut max = hi;
        for i in 0..3 {
            let pad = padding * (hi[i] - lo[i]);
            min[i] -= pad;
            max[i] += pad;
        }
        Self { min, max }
    }

    pub fn center(&self) -> Vec3 {
        scale3(add3(self.min, self.max), 0.5)
    }

    pub fn half_extents(&self) -> Vec3 {
        scale3(sub3(self.max, self.min), 0.5)
    }

    pub fn extents(&self) -> Vec3 {
        sub3(self.max, self.min)
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e[0] * e[1] * e[2]
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Exact box SDF: Euclidean distance outside, negative depth inside.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let c = self.center();
        let h = self.half_extents();
        let q = [
            (p[0] - c[0]).abs() - h[0],
            (p[1] - c[1]).abs() - h[1],
            (p[2] - c[2]).abs() - h[2],
        ];
        let outside = norm3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| {
            self.min[i] < self.max[i] && self.min[i].is_finite() && self.max[i].is_finite()
        })
    }
}
