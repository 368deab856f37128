//! Loop closure, forward placement, the analytic closure Jacobian, and the damped least-squares solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{left_jacobian_inv, IVec3, LatticeTf, Rigid, Vec3};
use crate::model::Structure;
use crate::shape::ShapeMatrix;

/// Opening angles in radians, one per hinge. `PI` is flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldState {
    pub gamma: Vec<f64>,
}

impl FoldState {
    pub fn flat(n: usize) -> FoldState {
        FoldState { gamma: vec![PI; n] }
    }

    pub fn from_degrees(deg: &[f64]) -> FoldState {
        FoldState { gamma: deg.iter().map(|d| d.to_radians()).collect() }
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| g.to_degrees()).collect()
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Angles in quarter turns if every angle is a multiple of 90 degrees.
    pub fn lattice_quarters(&self) -> Option<Vec<i64>> {
        self.gamma
            .iter()
            .map(|g| {
                let q = g / (PI / 2.0);
                let r = q.round();
                ((q - r).abs() < 1e-7).then(|| (r as i64).rem_euclid(4))
            })
            .collect()
    }

    pub fn from_quarters(q: &[i64]) -> FoldState {
        FoldState { gamma: q.iter().map(|&k| k.rem_euclid(4) as f64 * PI / 2.0).collect() }
    }

    pub fn max_abs_diff(&self, other: &FoldState) -> f64 {
        self.gamma.iter().zip(&other.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Tolerances used across the engine.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Closure residual accepted by the solver (infinity norm).
    pub closure: f64,
    /// Residual accepted for on-manifold analysis.
    pub manifold: f64,
    /// Relative singular-value threshold for null directions.
    pub rel_sv: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { closure: 1e-9, manifold: 1e-6, rel_sv: 1e-8 }
    }
}

/// `T(d, gamma)`: rotation by `PI - gamma` about the local z axis followed by an offset `d` along x.
pub fn hinge_transform(d: f64, gamma: f64) -> Rigid {
    let rot = Rigid::about_line(&Vec3::zeros(), &Vec3::z(), PI - gamma);
    rot.compose(&Rigid::new(crate::geom::Mat3::identity(), Vec3::new(d, 0.0, 0.0)))
}

/// Motion carrying hinge `h`'s `cube_b` relative to `cube_a`, in reference coordinates.
pub fn joint(s: &Structure, h: usize, gamma: f64) -> Rigid {
    let hs = &s.hinges[h];
    Rigid::about_line(&hs.anchor_f(), &hs.axis_f(), PI - gamma)
}

fn step_tf(s: &Structure, h: usize, dir: i8, gamma: f64) -> Rigid {
    let g = joint(s, h, gamma);
    if dir > 0 {
        g
    } else {
        g.inverse()
    }
}

fn check_len(s: &Structure, st: &FoldState) -> Result<()> {
    if st.len() != s.n_hinges() {
        return Err(Error::StateLength { got: st.len(), want: s.n_hinges() });
    }
    Ok(())
}

/// Composed transform of every loop.
pub fn loop_products(s: &Structure, st: &FoldState) -> Vec<Rigid> {
    s.loops
        .iter()
        .map(|lp| lp.steps.iter().fold(Rigid::identity(), |acc, &(h, d)| acc.compose(&step_tf(s, h, d, st.gamma[h]))))
        .collect()
}

/// Per-loop `(log R, t)` of the composed loop transform.
pub fn loop_residual(s: &Structure, st: &FoldState) -> Result<Vec<[f64; 6]>> {
    check_len(s, st)?;
    Ok(loop_products(s, st).iter().map(|p| p.residual6()).collect())
}

pub fn residual_vector(s: &Structure, st: &FoldState) -> DVector<f64> {
    let prods = loop_products(s, st);
    DVector::from_iterator(6 * prods.len(), prods.iter().flat_map(|p| p.residual6()))
}

pub fn residual_norm(s: &Structure, st: &FoldState) -> f64 {
    residual_vector(s, st).amax()
}

/// Analytic Jacobian of the stacked loop residuals with respect to all opening angles.
pub fn jacobian(s: &Structure, st: &FoldState) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(6 * s.loops.len(), s.n_hinges());
    for (li, lp) in s.loops.iter().enumerate() {
        let mut prefix = Rigid::identity();
        let mut cols: Vec<(usize, Vec3, Vec3)> = Vec::with_capacity(lp.steps.len());
        for &(h, dir) in &lp.steps {
            let hs = &s.hinges[h];
            let u = hs.axis_f();
            let p = hs.anchor_f();
            let w = prefix.r * u;
            let v = prefix.r * p.cross(&u) + prefix.t.cross(&w);
            // d/dgamma = -d/dtheta, and walking a hinge backwards reverses its twist
            let sgn = -(dir as f64);
            cols.push((h, sgn * w, sgn * v));
            prefix = prefix.compose(&step_tf(s, h, dir, st.gamma[h]));
        }
        let phi = crate::geom::so3_log(&prefix.r);
        let jinv = left_jacobian_inv(&phi);
        for (h, w, v) in cols {
            let dr = jinv * w;
            let dt = v + w.cross(&prefix.t);
            for k in 0..3 {
                j[(6 * li + k, h)] += dr[k];
                j[(6 * li + 3 + k, h)] += dt[k];
            }
        }
    }
    j
}

/// Poses of every cube, walking the placement tree from the root cube.
pub fn cube_poses(s: &Structure, st: &FoldState) -> Vec<Rigid> {
    let mut poses = vec![Rigid::identity(); s.n_cubes()];
    for step in &s.tree {
        poses[step.cube] = poses[step.parent].compose(&step_tf(s, step.hinge, step.dir, st.gamma[step.hinge]));
    }
    poses
}

/// Body centres and orientations in the fixed frame of the flat shape.
pub fn forward_placement(s: &Structure, st: &FoldState) -> Result<ShapeMatrix> {
    check_len(s, st)?;
    let r = residual_norm(s, st);
    if r > Tolerances::default().manifold {
        return Err(Error::NotOnManifold(r));
    }
    Ok(placement_unchecked(s, st))
}

pub fn placement_unchecked(s: &Structure, st: &FoldState) -> ShapeMatrix {
    let poses = cube_poses(s, st);
    let centers: Vec<Vec3> =
        poses.iter().zip(&s.cubes).map(|(p, c)| p.apply(&crate::geom::to_vec3(&c.home_center))).collect();
    let orientations = poses.iter().map(|p| p.r).collect();
    ShapeMatrix::new(centers, orientations, st.lattice_quarters().is_some())
}

/// Quarter turns of `theta = PI - gamma` for a lattice angle given in quarter turns.
pub fn theta_quarters(gamma_q: i64) -> i64 {
    (2 - gamma_q).rem_euclid(4)
}

pub fn lattice_joint(s: &Structure, h: usize, gamma_q: i64, dir: i8) -> LatticeTf {
    let hs = &s.hinges[h];
    let q = theta_quarters(gamma_q);
    LatticeTf::about_line(hs.anchor, hs.axis, if dir > 0 { q } else { -q })
}

/// Exact closure test at a lattice state.
pub fn lattice_closes(s: &Structure, q: &[i64]) -> bool {
    s.loops.iter().all(|lp| {
        lp.steps.iter().fold(LatticeTf::IDENTITY, |acc, &(h, d)| acc.compose(&lattice_joint(s, h, q[h], d))) == LatticeTf::IDENTITY
    })
}

/// Exact cube poses at a lattice state.
pub fn lattice_poses(s: &Structure, q: &[i64]) -> Vec<LatticeTf> {
    let mut poses = vec![LatticeTf::IDENTITY; s.n_cubes()];
    for step in &s.tree {
        poses[step.cube] = poses[step.parent].compose(&lattice_joint(s, step.hinge, q[step.hinge], step.dir));
    }
    poses
}

pub fn lattice_centers(s: &Structure, q: &[i64]) -> Vec<IVec3> {
    lattice_poses(s, q).iter().zip(&s.cubes).map(|(p, c)| p.apply(&c.home_center)).collect()
}

/// Closure residuals, Jacobian and its singular structure at one state.
#[derive(Clone, Debug)]
pub struct KinematicsReport {
    pub residuals: Vec<[f64; 6]>,
    pub jacobian: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub null_dim: usize,
    /// Columns form an orthonormal basis of the null space.
    pub null_basis: DMatrix<f64>,
}

/// Singular values (descending, padded with zeros up to the column count) and right singular vectors.
fn svd_full(j: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = j.shape();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let a = if m >= n {
        j.clone()
    } else {
        let mut a = DMatrix::zeros(n, n);
        a.rows_mut(0, m).copy_from(j);
        a
    };
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].partial_cmp(&svd.singular_values[x]).unwrap());
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        for r in 0..n {
            v[(r, c)] = vt[(i, r)];
        }
    }
    (sv, v)
}

fn count_null(sv: &[f64], rel: f64) -> usize {
    let max = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&x| x <= rel * max || max == 0.0).count()
}

pub fn dof_analysis(s: &Structure, st: &FoldState) -> Result<KinematicsReport> {
    dof_analysis_with(s, st, &Tolerances::default())
}

pub fn dof_analysis_with(s: &Structure, st: &FoldState, tol: &Tolerances) -> Result<KinematicsReport> {
    check_len(s, st)?;
    let residuals = loop_residual(s, st)?;
    let r = residuals.iter().flat_map(|x| x.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
    if r > tol.manifold {
        return Err(Error::NotOnManifold(r));
    }
    let jac = jacobian(s, st);
    let (sv, v) = svd_full(&jac);
    let null_dim = count_null(&sv, tol.rel_sv);
    let n = s.n_hinges();
    let null_basis = v.columns(n - null_dim, null_dim).into_owned();
    let singular_values = sv.into_iter().take(jac.nrows().min(n)).collect();
    Ok(KinematicsReport { residuals, jacobian: jac, singular_values, null_dim, null_basis })
}

/// Null-space dimension of the Jacobian restricted to the given hinge columns.
pub fn restricted_null_dim(s: &Structure, st: &FoldState, cols: &[usize], rel: f64) -> usize {
    let j = jacobian(s, st);
    let sub = j.select_columns(cols.iter());
    let (sv, _) = svd_full(&sub);
    count_null(&sv, rel)
}

/// Orthonormal null basis (one column per null direction) of the Jacobian restricted to `cols`.
pub fn restricted_null_basis(s: &Structure, st: &FoldState, cols: &[usize], rel: f64) -> DMatrix<f64> {
    let j = jacobian(s, st);
    let sub = j.select_columns(cols.iter());
    let (sv, v) = svd_full(&sub);
    let k = count_null(&sv, rel);
    v.columns(cols.len() - k, k).into_owned()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bifurcation {
    pub is_bifurcation: bool,
    pub extra_dof: i64,
}

pub fn detect_bifurcation(s: &Structure, st: &FoldState, baseline_dof: usize) -> Result<Bifurcation> {
    let rep = dof_analysis(s, st)?;
    let extra = rep.null_dim as i64 - baseline_dof as i64;
    Ok(Bifurcation { is_bifurcation: extra > 0, extra_dof: extra })
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub lambda0: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-9, max_iter: 200, lambda0: 1e-3 }
    }
}

/// Solve closure for the `free` hinges, holding every other angle of `seed` fixed.
pub fn solve_free(s: &Structure, seed: &FoldState, free: &[usize], opts: &SolveOptions) -> Result<FoldState> {
    check_len(s, seed)?;
    let mut st = seed.clone();
    let mut r = residual_vector(s, &st);
    if r.amax() < opts.tol {
        return Ok(st);
    }
    if free.is_empty() {
        return Err(Error::DrivenOverconstrained(r.amax()));
    }
    let mut lambda = opts.lambda0;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let jf = jacobian(s, &st).select_columns(free.iter());
        let g = jf.transpose() * &r;
        let mut a = jf.transpose() * &jf;
        for i in 0..free.len() {
            a[(i, i)] += lambda;
        }
        let delta = match a.cholesky() {
            Some(c) => c.solve(&(-&g)),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let mut trial = st.clone();
        for (k, &h) in free.iter().enumerate() {
            trial.gamma[h] += delta[k];
        }
        let rt = residual_vector(s, &trial);
        if rt.norm() < r.norm() {
            st = trial;
            r = rt;
            lambda = (lambda / 10.0).max(1e-15);
            if r.amax() < opts.tol {
                return Ok(st);
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let jf = jacobian(s, &st).select_columns(free.iter());
    let grad = (jf.transpose() * &r).norm();
    if grad < 1e-6 * r.norm().max(1e-300) || r.amax() > 1e-2 && grad < 1e-8 {
        Err(Error::DrivenOverconstrained(r.amax()))
    } else {
        Err(Error::NoConvergence(r.amax()))
    }
}

/// Match `driven` exactly and solve every other hinge from `seed`.
pub fn solve_closure(s: &Structure, driven: &[(usize, f64)], seed: &FoldState) -> Result<FoldState> {
    check_len(s, seed)?;
    let mut st = seed.clone();
    let mut is_driven = vec![false; s.n_hinges()];
    for &(h, g) in driven {
        if h >= s.n_hinges() {
            return Err(Error::BadIndex(h));
        }
        st.gamma[h] = g;
        is_driven[h] = true;
    }
    let free: Vec<usize> = (0..s.n_hinges()).filter(|&h| !is_driven[h]).collect();
    solve_free(s, &st, &free, &SolveOptions::default())
}

/// Distance between the two level-2 hinge axes that bound level-1 link `link`.
pub fn level2_link_length(s: &Structure, st: &FoldState, link: usize) -> Result<f64> {
    if s.levels() < 2 || link >= s.groups[0].len() {
        return Err(Error::BadIndex(link));
    }
    let r = residual_norm(s, st);
    if r > Tolerances::default().manifold {
        return Err(Error::NotOnManifold(r));
    }
    let members = &s.groups[0][link].cubes;
    let bounding: Vec<(usize, usize)> = s
        .hinges
        .iter()
        .filter(|h| h.level == 2)
        .filter_map(|h| {
            if members.contains(&h.cube_a) {
                Some((h.id, h.cube_a))
            } else if members.contains(&h.cube_b) {
                Some((h.id, h.cube_b))
            } else {
                None
            }
        })
        .collect();
    if bounding.len() != 2 {
        return Err(Error::BadIndex(link));
    }
    let poses = cube_poses(s, st);
    let line = |(h, c): (usize, usize)| {
        let hs = &s.hinges[h];
        (poses[c].apply(&hs.anchor_f()), poses[c].r * hs.axis_f())
    };
    let (p1, u1) = line(bounding[0]);
    let (p2, u2) = line(bounding[1]);
    Ok(line_distance(&p1, &u1, &p2, &u2))
}

fn line_distance(p1: &Vec3, u1: &Vec3, p2: &Vec3, u2: &Vec3) -> f64 {
    let w = p2 - p1;
    let c = u1.cross(u2);
    if c.norm() < 1e-9 {
        (w - u1 * w.dot(u1) / u1.norm_squared()).norm()
    } else {
        (w.dot(&c) / c.norm()).abs()
    }
}
