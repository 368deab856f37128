//! Rigid transforms, the SO(3) log map, and exact quarter-turn lattice transforms.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A proper rigid motion `x -> r x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub r: Mat3,
    pub t: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid { r: Mat3::identity(), t: Vec3::zeros() }
    }

    pub fn new(r: Mat3, t: Vec3) -> Self {
        Rigid { r, t }
    }

    /// Rotation by `theta` about the line through `p` with unit direction `u`.
    pub fn about_line(p: &Vec3, u: &Vec3, theta: f64) -> Self {
        let r = axis_angle(u, theta);
        Rigid { r, t: p - r * p }
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid { r: self.r * other.r, t: self.r * other.t + self.t }
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.r.transpose();
        Rigid { r: rt, t: -(rt * self.t) }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r * p + self.t
    }

    /// Homogeneous 4x4 form, row-major.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.r[(i, j)];
            }
            m[i][3] = self.t[i];
        }
        m[3][3] = 1.0;
        m
    }

    /// Max-abs distance to the identity transform.
    pub fn distance_to_identity(&self) -> f64 {
        let dr = (self.r - Mat3::identity()).abs().max();
        dr.max(self.t.abs().max())
    }

    /// Rotation log and translation stacked as a 6-vector.
    pub fn residual6(&self) -> [f64; 6] {
        let w = so3_log(&self.r);
        [w[0], w[1], w[2], self.t[0], self.t[1], self.t[2]]
    }
}

pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

pub fn axis_angle(u: &Vec3, theta: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*u), theta).into_inner()
}

/// Axis-angle vector of a rotation matrix.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    q.scaled_axis()
}

/// Inverse of the left Jacobian of SO(3) at `phi`.
pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let th = phi.norm();
    let k = hat(phi);
    if th < 1e-6 {
        return Mat3::identity() - 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let c = 1.0 / (th * th) - (1.0 + th.cos()) / (2.0 * th * th.sin());
    Mat3::identity() - 0.5 * k + c * k * k
}

/// Orthonormality defect `max|R^T R - I|` and `|det R - 1|`.
pub fn rotation_defect(r: &Mat3) -> f64 {
    let o = (r.transpose() * r - Mat3::identity()).abs().max();
    o.max((r.determinant() - 1.0).abs())
}

pub type IVec3 = [i64; 3];

/// Exact rigid motion whose rotation is a signed permutation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeTf {
    pub r: [[i64; 3]; 3],
    pub t: IVec3,
}

impl LatticeTf {
    pub const IDENTITY: LatticeTf = LatticeTf { r: [[1, 0, 0], [0, 1, 0], [0, 0, 1]], t: [0, 0, 0] };

    /// Rotation by `quarters * 90deg` about the line through `p` along the axis-aligned unit `u`.
    pub fn about_line(p: IVec3, u: IVec3, quarters: i64) -> Self {
        let q = quarters.rem_euclid(4);
        let (c, s) = [(1, 0), (0, 1), (-1, 0), (0, -1)][q as usize];
        let k = [[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]];
        let mut r = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let kk: i64 = (0..3).map(|m| k[i][m] * k[m][j]).sum();
                r[i][j] = if i == j { 1 } else { 0 } + s * k[i][j] + (1 - c) * kk;
            }
        }
        let rp = mat_vec(&r, &p);
        LatticeTf { r, t: [p[0] - rp[0], p[1] - rp[1], p[2] - rp[2]] }
    }

    pub fn compose(&self, o: &LatticeTf) -> LatticeTf {
        let mut r = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|m| self.r[i][m] * o.r[m][j]).sum();
            }
        }
        let rt = mat_vec(&self.r, &o.t);
        LatticeTf { r, t: [rt[0] + self.t[0], rt[1] + self.t[1], rt[2] + self.t[2]] }
    }

    pub fn inverse(&self) -> LatticeTf {
        let mut r = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.r[j][i];
            }
        }
        let rt = mat_vec(&r, &self.t);
        LatticeTf { r, t: [-rt[0], -rt[1], -rt[2]] }
    }

    pub fn apply(&self, p: &IVec3) -> IVec3 {
        let v = mat_vec(&self.r, p);
        [v[0] + self.t[0], v[1] + self.t[1], v[2] + self.t[2]]
    }

    pub fn to_rigid(&self) -> Rigid {
        let r = Mat3::from_fn(|i, j| self.r[i][j] as f64);
        Rigid { r, t: Vec3::new(self.t[0] as f64, self.t[1] as f64, self.t[2] as f64) }
    }
}

pub fn mat_vec(r: &[[i64; 3]; 3], p: &IVec3) -> IVec3 {
    let mut o = [0i64; 3];
    for i in 0..3 {
        o[i] = (0..3).map(|m| r[i][m] * p[m]).sum();
    }
    o
}

/// The 24 proper rotations of the cube lattice.
pub fn lattice_rotations() -> Vec<[[i64; 3]; 3]> {
    let mut out = Vec::with_capacity(24);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for p in perms {
        for signs in 0..8 {
            let mut r = [[0i64; 3]; 3];
            for i in 0..3 {
                r[i][p[i]] = if signs >> i & 1 == 1 { -1 } else { 1 };
            }
            if det3(&r) == 1 {
                out.push(r);
            }
        }
    }
    out
}

fn det3(r: &[[i64; 3]; 3]) -> i64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

pub fn to_vec3(p: &IVec3) -> Vec3 {
    Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_quarter_turn_matches_float() {
        let p = [1, 2, 0];
        let u = [0, -1, 0];
        for q in 0..4 {
            let a = LatticeTf::about_line(p, u, q).to_rigid();
            let b = Rigid::about_line(&to_vec3(&p), &to_vec3(&u), q as f64 * std::f64::consts::FRAC_PI_2);
            assert!((a.r - b.r).abs().max() < 1e-12);
            assert!((a.t - b.t).abs().max() < 1e-12);
        }
    }

    #[test]
    fn twenty_four_rotations() {
        let rs = lattice_rotations();
        assert_eq!(rs.len(), 24);
    }

    #[test]
    fn log_of_half_turn() {
        let r = axis_angle(&Vec3::new(0.0, 0.0, 1.0), std::f64::consts::PI);
        let w = so3_log(&r);
        assert!((w.norm() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn jl_inverse_inverts_jl() {
        let phi = Vec3::new(0.3, -0.7, 1.1);
        let th = phi.norm();
        let k = hat(&phi);
        let jl = Mat3::identity() + (1.0 - th.cos()) / (th * th) * k + (th - th.sin()) / (th * th * th) * k * k;
        let e = (left_jacobian_inv(&phi) * jl - Mat3::identity()).abs().max();
        assert!(e < 1e-12);
    }
}
