//! Shape matrices, canonical keys, collision checks and internal-void detection.

use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::geom::{lattice_rotations, mat_vec, IVec3, Mat3, Vec3};

/// Ordered cube body centres (columns of M) with per-cube orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeMatrix {
    pub centers: Vec<Vec3>,
    pub orientations: Vec<Mat3>,
    pub lattice: bool,
}

impl ShapeMatrix {
    pub fn new(centers: Vec<Vec3>, orientations: Vec<Mat3>, lattice: bool) -> Self {
        ShapeMatrix { centers, orientations, lattice }
    }

    /// Axis-aligned cubes at integer centres.
    pub fn from_lattice(centers: &[IVec3]) -> Self {
        ShapeMatrix {
            centers: centers.iter().map(crate::geom::to_vec3).collect(),
            orientations: vec![Mat3::identity(); centers.len()],
            lattice: true,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Centres snapped to integers when every centre lies within 1e-6 of one.
    pub fn int_centers(&self) -> Option<Vec<IVec3>> {
        self.centers
            .iter()
            .map(|c| {
                let r = c.map(|v| v.round());
                ((c - r).amax() < 1e-6).then(|| [r[0] as i64, r[1] as i64, r[2] as i64])
            })
            .collect()
    }
}

/// Translation-normalised centres (minimum corner moved to the origin), optionally minimised
/// over the 24 lattice rotations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct CanonicalKey(pub Vec<IVec3>);

impl CanonicalKey {
    pub fn to_hex(&self) -> String {
        use std::fmt::Write;
        let mut s = String::with_capacity(self.0.len() * 6);
        for c in &self.0 {
            for v in c {
                write!(s, "{:x}", v.rem_euclid(256)).unwrap();
                s.push('.');
            }
        }
        s
    }
}

fn normalise(c: &[IVec3]) -> Vec<IVec3> {
    let mut lo = [i64::MAX; 3];
    for p in c {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
        }
    }
    c.iter().map(|p| [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]]).collect()
}

pub fn canonicalize_centers(c: &[IVec3], rotations: bool) -> CanonicalKey {
    if !rotations {
        return CanonicalKey(normalise(c));
    }
    lattice_rotations()
        .iter()
        .map(|r| normalise(&c.iter().map(|p| mat_vec(r, p)).collect::<Vec<_>>()))
        .min()
        .map(CanonicalKey)
        .unwrap()
}

pub fn canonicalize(m: &ShapeMatrix, rotations: bool) -> Result<CanonicalKey> {
    if !m.lattice {
        return Err(Error::NotLattice);
    }
    let c = m.int_centers().ok_or(Error::NotLattice)?;
    Ok(canonicalize_centers(&c, rotations))
}

/// Pairs of cubes (1-based) with coincident centres.
pub fn lattice_collisions(c: &[IVec3]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (i, p) in c.iter().enumerate() {
        if let Some(&j) = seen.get(p) {
            out.push((j + 1, i + 1));
        } else {
            seen.insert(*p, i);
        }
    }
    out
}

pub fn lattice_collision_free(c: &[IVec3]) -> bool {
    let mut seen = HashSet::with_capacity(c.len());
    c.iter().all(|p| seen.insert(*p))
}

pub const COLLISION_EPS: f64 = 1e-6;

/// Separating-axis test for two cubes of half-size `h`.
pub fn cubes_overlap(ca: &Vec3, ra: &Mat3, cb: &Vec3, rb: &Mat3, h: f64) -> bool {
    let d = cb - ca;
    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(ra.column(i).into_owned());
        axes.push(rb.column(i).into_owned());
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = ra.column(i).cross(&rb.column(j));
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    for ax in axes {
        let pa: f64 = (0..3).map(|i| (ra.column(i).dot(&ax)).abs()).sum::<f64>() * h;
        let pb: f64 = (0..3).map(|i| (rb.column(i).dot(&ax)).abs()).sum::<f64>() * h;
        if d.dot(&ax).abs() >= pa + pb {
            return false;
        }
    }
    true
}

/// Interpenetrating cube pairs (1-based) of a general shape, cubes shrunk by `COLLISION_EPS`.
pub fn continuous_collisions(m: &ShapeMatrix) -> Vec<(usize, usize)> {
    let h = 1.0 - COLLISION_EPS;
    let mut out = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if (m.centers[i] - m.centers[j]).norm_squared() >= 12.0 {
                continue;
            }
            if cubes_overlap(&m.centers[i], &m.orientations[i], &m.centers[j], &m.orientations[j], h) {
                out.push((i + 1, j + 1));
            }
        }
    }
    out
}

/// Violations of a shape: coincident centres for lattice shapes, SAT overlaps otherwise.
pub fn check_collision(m: &ShapeMatrix) -> Vec<(usize, usize)> {
    match (m.lattice, m.int_centers()) {
        (true, Some(c)) => lattice_collisions(&c),
        _ => continuous_collisions(m),
    }
}

/// Number of internal structural loops: empty cells enclosed within some axis-aligned slice
/// (4-connected flood fill from the slice border), grouped into 6-connected components.
pub fn detect_isl_centers(c: &[IVec3]) -> usize {
    if c.is_empty() {
        return 0;
    }
    // cells indexed by floor(center / 2) so odd and even layouts both work
    let cell = |p: &IVec3| [p[0].div_euclid(2), p[1].div_euclid(2), p[2].div_euclid(2)];
    let occ: HashSet<IVec3> = c.iter().map(cell).collect();
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for p in &occ {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i] - 1);
            hi[i] = hi[i].max(p[i] + 1);
        }
    }
    let mut enclosed: HashSet<IVec3> = HashSet::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for k in lo[axis]..=hi[axis] {
            let at = |a: i64, b: i64| {
                let mut p = [0i64; 3];
                p[axis] = k;
                p[u] = a;
                p[v] = b;
                p
            };
            let mut outside: HashSet<(i64, i64)> = HashSet::new();
            let mut queue = VecDeque::from([(lo[u], lo[v])]);
            outside.insert((lo[u], lo[v]));
            while let Some((a, b)) = queue.pop_front() {
                for (da, db) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (x, y) = (a + da, b + db);
                    if x < lo[u] || x > hi[u] || y < lo[v] || y > hi[v] {
                        continue;
                    }
                    if !occ.contains(&at(x, y)) && outside.insert((x, y)) {
                        queue.push_back((x, y));
                    }
                }
            }
            for a in lo[u]..=hi[u] {
                for b in lo[v]..=hi[v] {
                    let p = at(a, b);
                    if !occ.contains(&p) && !outside.contains(&(a, b)) {
                        enclosed.insert(p);
                    }
                }
            }
        }
    }
    let mut count = 0;
    let mut done: HashSet<IVec3> = HashSet::new();
    let mut cells: Vec<IVec3> = enclosed.iter().copied().collect();
    cells.sort_unstable();
    for p in cells {
        if !done.insert(p) {
            continue;
        }
        count += 1;
        let mut queue = VecDeque::from([p]);
        while let Some(a) = queue.pop_front() {
            for i in 0..3 {
                for d in [-1, 1] {
                    let mut q = a;
                    q[i] += d;
                    if enclosed.contains(&q) && done.insert(q) {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    count
}

pub fn detect_isl(m: &ShapeMatrix) -> Result<usize> {
    let c = m.int_centers().filter(|_| m.lattice).ok_or(Error::NotLattice)?;
    Ok(detect_isl_centers(&c))
}

/// Wavefront OBJ text with one box of edge 2 per cube.
pub fn mesh_obj(m: &ShapeMatrix) -> String {
    use std::fmt::Write;
    let mut s = String::from("# metamorph shape mesh\n");
    let corners: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new(if i & 1 == 0 { -1.0 } else { 1.0 }, if i & 2 == 0 { -1.0 } else { 1.0 }, if i & 4 == 0 { -1.0 } else { 1.0 }))
        .collect();
    let faces = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    for (k, (c, r)) in m.centers.iter().zip(&m.orientations).enumerate() {
        writeln!(s, "o cube{}", k + 1).unwrap();
        for v in &corners {
            let p = c + r * v;
            writeln!(s, "v {} {} {}", p[0], p[1], p[2]).unwrap();
        }
        let base = 8 * k + 1;
        for f in faces {
            writeln!(s, "f {} {} {}", base + f[0], base + f[1], base + f[2]).unwrap();
            writeln!(s, "f {} {} {}", base + f[0], base + f[2], base + f[3]).unwrap();
        }
    }
    s
}

/// Parse the vertices and triangles of an OBJ text.
pub fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it.take(3).map(|x| x.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::Parse(e.to_string()))?;
                if v.len() != 3 {
                    return Err(Error::Parse(format!("bad vertex line: {line}")));
                }
                verts.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|x| x.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(e.to_string()))?;
                if idx.len() < 3 || idx.iter().any(|&i| i == 0) {
                    return Err(Error::Parse(format!("bad face line: {line}")));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                }
            }
            _ => {}
        }
    }
    Ok((verts, tris))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_invariant_key() {
        let a = vec![[1, 1, 1], [3, 1, 1], [3, 3, 1]];
        let b: Vec<IVec3> = a.iter().map(|p| [p[0] + 4, p[1], p[2] + 2]).collect();
        assert_eq!(canonicalize_centers(&a, false), canonicalize_centers(&b, false));
    }

    #[test]
    fn rotation_quotient_is_optional() {
        let a = vec![[1, 1, 1], [3, 1, 1], [3, 3, 1]];
        let b: Vec<IVec3> = a.iter().map(|p| [-p[1], p[0], p[2]]).collect();
        assert_ne!(canonicalize_centers(&a, false), canonicalize_centers(&b, false));
        assert_eq!(canonicalize_centers(&a, true), canonicalize_centers(&b, true));
    }

    #[test]
    fn coincident_centres_collide() {
        assert_eq!(lattice_collisions(&[[1, 1, 1], [3, 1, 1], [1, 1, 1]]), vec![(1, 3)]);
    }

    #[test]
    fn face_contact_allowed() {
        let i = Mat3::identity();
        let m = ShapeMatrix::new(vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(3.0, 1.0, 1.0)], vec![i, i], false);
        assert!(continuous_collisions(&m).is_empty());
        let m = ShapeMatrix::new(vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.5, 1.0, 1.0)], vec![i, i], false);
        assert_eq!(continuous_collisions(&m), vec![(1, 2)]);
    }

    #[test]
    fn rotated_cube_overlap() {
        let r = crate::geom::axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_4);
        let i = Mat3::identity();
        // a 45 degree cube reaches sqrt(2) along x
        assert!(cubes_overlap(&Vec3::zeros(), &i, &Vec3::new(2.3, 0.0, 0.0), &r, 1.0));
        assert!(!cubes_overlap(&Vec3::zeros(), &i, &Vec3::new(2.5, 0.0, 0.0), &r, 1.0));
    }

    #[test]
    fn ring_encloses_void() {
        let mut c = Vec::new();
        for x in [-1, 1, 3] {
            for y in [-1, 1, 3] {
                if (x, y) != (1, 1) {
                    c.push([x, y, 1]);
                }
            }
        }
        assert_eq!(detect_isl_centers(&c), 1);
        let mut filled = c.clone();
        filled.push([1, 1, 1]);
        assert_eq!(detect_isl_centers(&filled), 0);
    }

    #[test]
    fn isl_translation_invariant() {
        let mut c = Vec::new();
        for x in 0..3i64 {
            for y in 0..3i64 {
                for z in 0..3i64 {
                    if (x, y, z) != (1, 1, 1) {
                        c.push([2 * x + 1, 2 * y + 1, 2 * z + 1]);
                    }
                }
            }
        }
        let moved: Vec<IVec3> = c.iter().map(|p| [p[0] + 6, p[1] - 4, p[2] + 2]).collect();
        assert_eq!(detect_isl_centers(&c), 1);
        assert_eq!(detect_isl_centers(&moved), 1);
    }

    #[test]
    fn obj_round_trip() {
        let m = ShapeMatrix::from_lattice(&[[1, 1, 1], [3, 1, 1]]);
        let (v, t) = parse_obj(&mesh_obj(&m)).unwrap();
        assert_eq!((v.len(), t.len()), (16, 24));
    }
}
