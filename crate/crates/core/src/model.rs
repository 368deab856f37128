//! Hierarchical designs: motifs, hinge placements, link flips, and validated structures.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{lattice_rotations, mat_vec, to_vec3, IVec3, Vec3};

pub const DESIGN_SCHEMA: &str = "metamorph-design/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Surface {
    T,
    B,
}

impl Surface {
    pub fn toggled(self) -> Surface {
        match self {
            Surface::T => Surface::B,
            Surface::B => Surface::T,
        }
    }
}

/// One hinge of a design file. Cube ids are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HingeDecl {
    pub cubes: [usize; 2],
    pub level: u8,
    pub edge_code: u8,
    pub surface: Surface,
}

/// A hierarchical design. `motifs[0]` is the level-1 loop size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(default = "design_schema")]
    pub schema: String,
    pub motifs: Vec<u8>,
    pub hinges: Vec<HingeDecl>,
    #[serde(default)]
    pub flips: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<IVec3>>,
}

fn design_schema() -> String {
    DESIGN_SCHEMA.to_string()
}

/// Cube indices grouped per hierarchy level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    /// Indices into the groups one level down, or cube indices at level 1, in loop order.
    pub members: Vec<usize>,
    pub cubes: Vec<usize>,
}

/// Generated flat layout for a motif list.
#[derive(Clone, Debug)]
pub struct Layout {
    pub centers: Vec<IVec3>,
    /// `groups[l]` holds the level-(l+1) blocks.
    pub groups: Vec<Vec<Group>>,
}

pub fn hinges_per_block(k: u8) -> usize {
    match k {
        1 => 0,
        2 => 1,
        k => k as usize,
    }
}

fn check_motifs(motifs: &[u8]) -> Result<()> {
    if motifs.is_empty() {
        return Err(Error::InvalidMotif("empty motif list".into()));
    }
    if motifs == [1] {
        return Ok(());
    }
    for &k in motifs {
        if ![2, 4, 6, 8].contains(&k) {
            return Err(Error::InvalidMotif(format!("loop size {k} not in {{2,4,6,8}}")));
        }
    }
    Ok(())
}

fn ring_positions(k: u8) -> Vec<(i64, i64)> {
    match k {
        1 => vec![(0, 0)],
        2 => vec![(0, 0), (0, 1)],
        k => {
            let cols = k as i64 / 2;
            let mut v = vec![(0, 0)];
            for c in 0..cols {
                v.push((c, 1));
            }
            for c in (1..cols).rev() {
                v.push((c, 0));
            }
            v
        }
    }
}

fn grid_dims(k: u8) -> (i64, i64) {
    match k {
        1 => (1, 1),
        2 => (1, 2),
        k => (k as i64 / 2, 2),
    }
}

/// Flat block layout: every level arranges its sub-blocks in two rows, visited in loop order;
/// cubes are numbered column by column in serpentine order.
pub fn generate_layout(motifs: &[u8]) -> Result<Layout> {
    check_motifs(motifs)?;
    let mut w = 1i64;
    let mut h = 1i64;
    let mut scale = Vec::new();
    for &k in motifs {
        scale.push((w, h));
        let (c, r) = grid_dims(k);
        w *= c;
        h *= r;
    }
    // index tuples, level 1 fastest
    let sizes: Vec<usize> = motifs.iter().map(|&k| k as usize).collect();
    let total: usize = sizes.iter().product();
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let (mut x, mut y) = (0i64, 0i64);
        for (l, &k) in motifs.iter().enumerate() {
            let i = rem % sizes[l];
            rem /= sizes[l];
            let (c, r) = ring_positions(k)[i];
            x += c * scale[l].0;
            y += r * scale[l].1;
        }
        cells.push((x, y));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| {
        let (x, y) = cells[i];
        (x, if x % 2 == 0 { y } else { -y })
    });
    let mut cube_of = vec![0usize; total];
    for (num, &i) in order.iter().enumerate() {
        cube_of[i] = num;
    }
    let mut centers = vec![[0i64; 3]; total];
    for i in 0..total {
        let (x, y) = cells[i];
        centers[cube_of[i]] = [2 * x - (w - 1), 2 * y - (h - 1), 1];
    }
    let mut groups: Vec<Vec<Group>> = Vec::new();
    let mut stride = 1usize;
    for (l, &k) in motifs.iter().enumerate() {
        let k = k as usize;
        let count = total / (stride * k);
        let mut level = Vec::with_capacity(count);
        for g in 0..count {
            let members: Vec<usize> = (0..k).map(|i| g * k + i).collect();
            let base = g * stride * k;
            let mut cubes: Vec<usize> = (0..stride * k).map(|j| cube_of[base + j]).collect();
            if l > 0 {
                cubes.sort_unstable();
            }
            level.push(Group { members: if l == 0 { cubes.clone() } else { members }, cubes });
        }
        groups.push(level);
        stride *= k;
    }
    Ok(Layout { centers, groups })
}

fn adjacent(a: &IVec3, b: &IVec3) -> bool {
    let d: Vec<i64> = (0..3).map(|i| (a[i] - b[i]).abs()).collect();
    let mut s = d.clone();
    s.sort_unstable();
    s == [0, 0, 2]
}

/// Default cube pairs of every hinge, level by level, in loop order.
pub fn default_hinge_pairs(layout: &Layout, motifs: &[u8]) -> Vec<(u8, usize, usize)> {
    let mut out = Vec::new();
    for (l, level) in layout.groups.iter().enumerate() {
        let k = motifs[l];
        for g in level {
            let count = hinges_per_block(k);
            for j in 0..count {
                let (ma, mb) = (g.members[j], g.members[(j + 1) % g.members.len()]);
                if l == 0 {
                    out.push((1, ma, mb));
                    continue;
                }
                let ca = &layout.groups[l - 1][ma].cubes;
                let cb = &layout.groups[l - 1][mb].cubes;
                let centre = block_centre(&layout.centers, &g.cubes);
                let mut best: Option<((i64, usize, usize), usize, usize)> = None;
                for &a in ca {
                    for &b in cb {
                        if !adjacent(&layout.centers[a], &layout.centers[b]) {
                            continue;
                        }
                        let mid: Vec<i64> = (0..3).map(|i| layout.centers[a][i] + layout.centers[b][i]).collect();
                        let d2: i64 = (0..2).map(|i| (mid[i] - centre[i]).pow(2)).sum();
                        let key = (d2, a.min(b), a.max(b));
                        if best.map_or(true, |(bk, _, _)| key < bk) {
                            best = Some((key, a, b));
                        }
                    }
                }
                let (_, a, b) = best.expect("sub-blocks in loop order are adjacent");
                out.push((l as u8 + 1, a, b));
            }
        }
    }
    out
}

/// Twice the bounding-box centre of `cubes`.
fn block_centre(centers: &[IVec3], cubes: &[usize]) -> [i64; 3] {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for &c in cubes {
        for i in 0..3 {
            lo[i] = lo[i].min(centers[c][i]);
            hi[i] = hi[i].max(centers[c][i]);
        }
    }
    [lo[0] + hi[0], lo[1] + hi[1], lo[2] + hi[2]]
}

pub fn surface_of(code: u8, fallback: Surface) -> Surface {
    match code {
        0 => Surface::B,
        1 => Surface::T,
        _ => fallback,
    }
}

impl DesignSpec {
    /// Design on the default layout with one edge code for every hinge.
    pub fn uniform(motifs: &[u8], code: u8) -> Result<DesignSpec> {
        let layout = generate_layout(motifs)?;
        let pairs = default_hinge_pairs(&layout, motifs);
        let codes = vec![code; pairs.len()];
        DesignSpec::from_pairs(motifs, &pairs, &codes)
    }

    /// Design from explicit 0-based cube pairs `(level, a, b)` and per-hinge codes.
    pub fn from_pairs(motifs: &[u8], pairs: &[(u8, usize, usize)], codes: &[u8]) -> Result<DesignSpec> {
        check_motifs(motifs)?;
        if pairs.len() != codes.len() {
            return Err(Error::InvalidMotif("one code per hinge required".into()));
        }
        let hinges = pairs
            .iter()
            .zip(codes)
            .map(|(&(level, a, b), &code)| HingeDecl {
                cubes: [a + 1, b + 1],
                level,
                edge_code: code,
                surface: surface_of(code, Surface::T),
            })
            .collect();
        let links = if motifs == [1] { 0 } else { link_count(motifs) };
        Ok(DesignSpec { schema: design_schema(), motifs: motifs.to_vec(), hinges, flips: vec![false; links], centers: None })
    }

    pub fn placements(&self) -> Vec<u8> {
        self.hinges.iter().map(|h| h.edge_code).collect()
    }

    pub fn cube_count(&self) -> usize {
        self.motifs.iter().map(|&k| k as usize).product()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn from_json(s: &str) -> Result<DesignSpec> {
        let mut d: DesignSpec = serde_json::from_str(s)?;
        if d.schema != DESIGN_SCHEMA {
            return Err(Error::Parse(format!("unsupported schema {}", d.schema)));
        }
        for h in &mut d.hinges {
            h.surface = surface_of(h.edge_code, h.surface);
        }
        Ok(d)
    }
}

pub fn link_count(motifs: &[u8]) -> usize {
    motifs[1..].iter().map(|&k| k as usize).product()
}

/// Upside-down flip of level-1 link `link`.
pub fn flip_link(design: &DesignSpec, link: usize) -> Result<DesignSpec> {
    if link >= design.flips.len() {
        return Err(Error::BadIndex(link));
    }
    let layout = generate_layout(&design.motifs)?;
    let members: HashSet<usize> = layout.groups[0][link].cubes.iter().copied().collect();
    let mut out = design.clone();
    out.flips[link] = !out.flips[link];
    for h in &mut out.hinges {
        if h.level == 1 && members.contains(&(h.cubes[0] - 1)) && members.contains(&(h.cubes[1] - 1)) {
            h.surface = h.surface.toggled();
            h.edge_code = match h.edge_code {
                0 => 1,
                1 => 0,
                c => c,
            };
        }
    }
    Ok(out)
}

/// Which parts of a base design `enumerate_designs` varies.
#[derive(Clone, Copy, Debug, Default)]
pub struct Vary {
    pub placements: bool,
    pub flips: bool,
}

/// All variants of `base`, in mixed-radix order (hinge codes first, then flips).
pub fn enumerate_designs(base: &DesignSpec, vary: Vary, dedupe: bool) -> impl Iterator<Item = DesignSpec> {
    let h = if vary.placements { base.hinges.len() } else { 0 };
    let f = if vary.flips { base.flips.len() } else { 0 };
    let total: u128 = 4u128.pow(h as u32) * 2u128.pow(f as u32);
    let base = base.clone();
    let mut seen: HashSet<Vec<(usize, usize, IVec3)>> = HashSet::new();
    (0..total).filter_map(move |idx| {
        let mut rem = idx;
        let mut d = base.clone();
        for i in 0..h {
            let code = (rem % 4) as u8;
            rem /= 4;
            d.hinges[i].edge_code = code;
            d.hinges[i].surface = surface_of(code, base.hinges[i].surface);
        }
        for i in 0..f {
            let bit = rem % 2 == 1;
            rem /= 2;
            if bit != d.flips[i] {
                d = flip_link(&d, i).ok()?;
            }
        }
        if dedupe {
            let key = design_canonical_code(&d).ok()?;
            if !seen.insert(key) {
                return None;
            }
        }
        Some(d)
    })
}

/// Hinge geometry as (cube a, cube b, doubled edge point), cubes 0-based with a < b.
pub fn hinge_geometry(design: &DesignSpec) -> Result<Vec<(usize, usize, IVec3)>> {
    let centers = design_centers(design)?;
    let mut out = Vec::new();
    for (i, h) in design.hinges.iter().enumerate() {
        let (a, b) = (h.cubes[0] - 1, h.cubes[1] - 1);
        if a >= centers.len() || b >= centers.len() {
            return Err(Error::DanglingHinge { hinge: i, cube: h.cubes[0].max(h.cubes[1]) });
        }
        let (p, _) = edge_line(&centers[a], &centers[b], h.edge_code).ok_or(Error::NonAdjacent { hinge: i, a: a + 1, b: b + 1 })?;
        out.push((a.min(b), a.max(b), p));
    }
    Ok(out)
}

/// Minimum over the lattice rotations preserving the flat layout of the sorted hinge geometry.
pub fn design_canonical_code(design: &DesignSpec) -> Result<Vec<(usize, usize, IVec3)>> {
    let centers = design_centers(design)?;
    let geo = hinge_geometry(design)?;
    let shift = |p: &IVec3| [p[0], p[1], p[2] - 1];
    let index: std::collections::HashMap<IVec3, usize> = centers.iter().enumerate().map(|(i, c)| (shift(c), i)).collect();
    let mut best: Option<Vec<(usize, usize, IVec3)>> = None;
    'rot: for r in lattice_rotations() {
        let mut perm = vec![0usize; centers.len()];
        for (i, c) in centers.iter().enumerate() {
            match index.get(&mat_vec(&r, &shift(c))) {
                Some(&j) => perm[i] = j,
                None => continue 'rot,
            }
        }
        let mut code: Vec<(usize, usize, IVec3)> = geo
            .iter()
            .map(|&(a, b, p)| {
                let q = mat_vec(&r, &shift(&p));
                let (x, y) = (perm[a], perm[b]);
                (x.min(y), x.max(y), [q[0], q[1], q[2] + 1])
            })
            .collect();
        code.sort_unstable();
        if best.as_ref().map_or(true, |b| code < *b) {
            best = Some(code);
        }
    }
    Ok(best.expect("identity rotation preserves the layout"))
}

pub fn design_centers(design: &DesignSpec) -> Result<Vec<IVec3>> {
    match &design.centers {
        Some(c) => Ok(c.clone()),
        None => Ok(generate_layout(&design.motifs)?.centers),
    }
}

/// Face frame of the interface between cubes at `ca` and `cb`: edge point `p` and axis `u`.
/// Codes 0..=3 select the edge at `f - up`, `f + up`, `f - t`, `f + t` where `f` is the face
/// centre, `up = +z` and `t = +y` (x-normal faces) or `t = +x` (y-normal faces).
pub fn edge_line(ca: &IVec3, cb: &IVec3, code: u8) -> Option<(IVec3, IVec3)> {
    if !adjacent(ca, cb) || code > 3 {
        return None;
    }
    let n: IVec3 = [(cb[0] - ca[0]) / 2, (cb[1] - ca[1]) / 2, (cb[2] - ca[2]) / 2];
    let f: IVec3 = [(ca[0] + cb[0]) / 2, (ca[1] + cb[1]) / 2, (ca[2] + cb[2]) / 2];
    let k = (0..3).find(|&i| n[i] != 0).unwrap();
    let t: IVec3 = if k == 0 { [0, 1, 0] } else { [1, 0, 0] };
    let up: IVec3 = if k == 2 { [0, 1, 0] } else { [0, 0, 1] };
    let s = match code {
        0 => up.map(|v| -v),
        1 => up,
        2 => t.map(|v| -v),
        _ => t,
    };
    let p = [f[0] + s[0], f[1] + s[1], f[2] + s[2]];
    let u = [n[1] * s[2] - n[2] * s[1], n[2] * s[0] - n[0] * s[2], n[0] * s[1] - n[1] * s[0]];
    Some((p, u))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubeElement {
    pub id: usize,
    pub home_center: IVec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HingeSpec {
    pub id: usize,
    /// 0-based cube indices; the hinge carries `cube_b` relative to `cube_a`.
    pub cube_a: usize,
    pub cube_b: usize,
    pub level: u8,
    pub edge_code: u8,
    pub surface: Surface,
    pub anchor: IVec3,
    pub axis: IVec3,
    pub link_length: f64,
}

impl HingeSpec {
    pub fn anchor_f(&self) -> Vec3 {
        to_vec3(&self.anchor)
    }
    pub fn axis_f(&self) -> Vec3 {
        to_vec3(&self.axis)
    }
}

/// A closed chain of hinges; `dir = +1` walks a hinge from `cube_a` to `cube_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Loop {
    pub level: u8,
    pub start: usize,
    pub steps: Vec<(usize, i8)>,
}

/// Placement tree edge: `cube` is reached from `parent` through `hinge` walked in `dir`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeStep {
    pub cube: usize,
    pub parent: usize,
    pub hinge: usize,
    pub dir: i8,
}

#[derive(Clone, Debug)]
pub struct Structure {
    pub design: DesignSpec,
    pub cubes: Vec<CubeElement>,
    pub hinges: Vec<HingeSpec>,
    pub groups: Vec<Vec<Group>>,
    /// Per cube: (level-1 link id, position in that link's loop order).
    pub level_index: Vec<(usize, usize)>,
    pub loops: Vec<Loop>,
    /// Breadth-first placement order from `root`.
    pub tree: Vec<TreeStep>,
    pub root: usize,
}

impl Structure {
    pub fn n_cubes(&self) -> usize {
        self.cubes.len()
    }
    pub fn n_hinges(&self) -> usize {
        self.hinges.len()
    }
    pub fn levels(&self) -> usize {
        self.design.motifs.len()
    }
    /// Hinges joining cubes of level-1 link `link`.
    pub fn link_hinges(&self, link: usize) -> Vec<usize> {
        self.hinges
            .iter()
            .filter(|h| h.level == 1 && self.level_index[h.cube_a].0 == link)
            .map(|h| h.id)
            .collect()
    }
    pub fn home_centers(&self) -> Vec<IVec3> {
        self.cubes.iter().map(|c| c.home_center).collect()
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }
}

/// Validate a design and instantiate its structure.
pub fn build_structure(design: &DesignSpec) -> Result<Structure> {
    check_motifs(&design.motifs)?;
    let layout = generate_layout(&design.motifs)?;
    let centers = design_centers(design)?;
    let n = design.cube_count();
    if centers.len() != n {
        return Err(Error::InvalidMotif(format!("{} centers for {} cubes", centers.len(), n)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if centers[i] == centers[j] {
                return Err(Error::SelfColliding(i + 1, j + 1));
            }
        }
    }
    let mut hinges = Vec::with_capacity(design.hinges.len());
    for (i, h) in design.hinges.iter().enumerate() {
        for &c in &h.cubes {
            if c == 0 || c > n {
                return Err(Error::DanglingHinge { hinge: i, cube: c });
            }
        }
        if h.edge_code > 3 {
            return Err(Error::BadEdgeCode(h.edge_code));
        }
        let (a, b) = (h.cubes[0] - 1, h.cubes[1] - 1);
        let (anchor, axis) =
            edge_line(&centers[a], &centers[b], h.edge_code).ok_or(Error::NonAdjacent { hinge: i, a: a + 1, b: b + 1 })?;
        if h.level == 0 || h.level as usize > design.motifs.len() {
            return Err(Error::InvalidMotif(format!("hinge {i} has level {}", h.level)));
        }
        hinges.push(HingeSpec {
            id: i,
            cube_a: a,
            cube_b: b,
            level: h.level,
            edge_code: h.edge_code,
            surface: surface_of(h.edge_code, h.surface),
            anchor,
            axis,
            link_length: 0.0,
        });
    }
    // block membership of every cube at every level
    let levels = design.motifs.len();
    let mut block_of = vec![vec![0usize; n]; levels];
    for (l, level) in layout.groups.iter().enumerate() {
        for (g, grp) in level.iter().enumerate() {
            for &c in &grp.cubes {
                block_of[l][c] = g;
            }
        }
    }
    let mut level_index = vec![(0, 0); n];
    for (g, grp) in layout.groups[0].iter().enumerate() {
        for (pos, &c) in grp.members.iter().enumerate() {
            level_index[c] = (g, pos);
        }
    }
    // every hinge must join distinct sub-blocks inside one block of its level
    for h in &hinges {
        let l = h.level as usize - 1;
        let same_block = block_of[l][h.cube_a] == block_of[l][h.cube_b];
        let distinct_sub = l == 0 || block_of[l - 1][h.cube_a] != block_of[l - 1][h.cube_b];
        if !same_block || !distinct_sub {
            return Err(Error::OpenLoop(format!("hinge {} crosses the level-{} hierarchy", h.id, h.level)));
        }
    }
    // each block's hinges must form its declared motif over the sub-blocks
    for (l, level) in layout.groups.iter().enumerate() {
        let k = design.motifs[l];
        for (g, grp) in level.iter().enumerate() {
            let sub = |c: usize| if l == 0 { c } else { block_of[l - 1][c] };
            let edges: Vec<(usize, usize)> = hinges
                .iter()
                .filter(|h| h.level as usize == l + 1 && block_of[l][h.cube_a] == g)
                .map(|h| (sub(h.cube_a), sub(h.cube_b)))
                .collect();
            check_motif_shape(k, &grp.members, &edges)
                .map_err(|m| Error::OpenLoop(format!("level-{} block {}: {}", l + 1, g, m)))?;
        }
    }
    // cycle basis: union-find in hinge order (level-1 hinges first), fundamental cycles
    let mut order: Vec<usize> = (0..hinges.len()).collect();
    order.sort_by_key(|&i| (hinges[i].level, i));
    let mut dsu = Dsu((0..n).collect());
    let mut tree_hinges = Vec::new();
    let mut closing = Vec::new();
    for &i in &order {
        let (ra, rb) = (dsu.find(hinges[i].cube_a), dsu.find(hinges[i].cube_b));
        if ra == rb {
            closing.push(i);
        } else {
            dsu.0[ra] = rb;
            tree_hinges.push(i);
        }
    }
    let root = pick_root(&centers);
    let mut adj: Vec<Vec<(usize, usize, i8)>> = vec![Vec::new(); n];
    for &i in &tree_hinges {
        let h = &hinges[i];
        adj[h.cube_a].push((i, h.cube_b, 1));
        adj[h.cube_b].push((i, h.cube_a, -1));
    }
    let mut parent: Vec<Option<TreeStep>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    let mut tree = Vec::new();
    let mut queue = VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        for &(hi, y, dir) in &adj[x] {
            if depth[y] == usize::MAX {
                depth[y] = depth[x] + 1;
                let step = TreeStep { cube: y, parent: x, hinge: hi, dir };
                parent[y] = Some(step);
                tree.push(step);
                queue.push_back(y);
            }
        }
    }
    if tree.len() + 1 != n {
        return Err(Error::OpenLoop("hinge graph is disconnected".into()));
    }
    let mut loops = Vec::new();
    for &i in &closing {
        let h = &hinges[i];
        // walk a -> b through the hinge, then b -> a through the tree
        let mut steps = vec![(i, 1i8)];
        let (mut x, mut y) = (h.cube_b, h.cube_a);
        let mut up = Vec::new();
        let mut down = Vec::new();
        while x != y {
            if depth[x] >= depth[y] {
                let s = parent[x].unwrap();
                up.push((s.hinge, -s.dir));
                x = s.parent;
            } else {
                let s = parent[y].unwrap();
                down.push((s.hinge, s.dir));
                y = s.parent;
            }
        }
        steps.extend(up);
        steps.extend(down.into_iter().rev());
        loops.push(Loop { level: h.level, start: h.cube_a, steps });
    }
    loops.sort_by_key(|l| (l.level, l.steps[0].0));
    let mut structure = Structure {
        design: design.clone(),
        cubes: centers.iter().enumerate().map(|(i, &c)| CubeElement { id: i + 1, home_center: c }).collect(),
        hinges,
        groups: layout.groups,
        level_index,
        loops,
        tree,
        root,
    };
    fill_link_lengths(&mut structure);
    Ok(structure)
}

fn check_motif_shape(k: u8, members: &[usize], edges: &[(usize, usize)]) -> std::result::Result<(), String> {
    let want = hinges_per_block(k);
    if edges.len() != want {
        return Err(format!("{} hinges, motif needs {}", edges.len(), want));
    }
    if k <= 2 {
        if k == 2 && edges[0].0 == edges[0].1 {
            return Err("chain hinge joins a block to itself".into());
        }
        return Ok(());
    }
    let set: BTreeSet<usize> = members.iter().copied().collect();
    let mut deg = std::collections::BTreeMap::new();
    for &(a, b) in edges {
        if !set.contains(&a) || !set.contains(&b) || a == b {
            return Err("hinge leaves the block".into());
        }
        *deg.entry(a).or_insert(0) += 1;
        *deg.entry(b).or_insert(0) += 1;
    }
    if deg.len() != members.len() || deg.values().any(|&d| d != 2) {
        return Err("hinges do not form a single loop".into());
    }
    // connectivity of a 2-regular graph on all members means one cycle
    let mut seen = BTreeSet::from([members[0]]);
    let mut frontier = vec![members[0]];
    while let Some(x) = frontier.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == x && seen.insert(q) {
                    frontier.push(q);
                }
            }
        }
    }
    if seen.len() != members.len() {
        return Err("hinges split into several loops".into());
    }
    Ok(())
}

/// Cube nearest the layout centre, lowest index on ties.
fn pick_root(centers: &[IVec3]) -> usize {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for c in centers {
        for i in 0..3 {
            lo[i] = lo[i].min(c[i]);
            hi[i] = hi[i].max(c[i]);
        }
    }
    (0..centers.len())
        .min_by_key(|&i| (0..2).map(|k| (2 * centers[i][k] - lo[k] - hi[k]).pow(2)).sum::<i64>())
        .unwrap()
}

fn line_distance(p1: &Vec3, u1: &Vec3, p2: &Vec3, u2: &Vec3) -> f64 {
    let w = p2 - p1;
    let c = u1.cross(u2);
    if c.norm() < 1e-12 {
        (w - u1 * w.dot(u1) / u1.norm_squared()).norm()
    } else {
        (w.dot(&c) / c.norm()).abs()
    }
}

fn fill_link_lengths(s: &mut Structure) {
    let mut lengths = vec![0.0; s.hinges.len()];
    for lp in &s.loops {
        // the loop of a hinge's own level lists its neighbours in order
        let own: Vec<usize> = lp.steps.iter().map(|&(h, _)| h).filter(|&h| s.hinges[h].level == lp.level).collect();
        for (i, &h) in own.iter().enumerate() {
            let next = own[(i + 1) % own.len()];
            let (a, b) = (&s.hinges[h], &s.hinges[next]);
            lengths[h] = line_distance(&a.anchor_f(), &a.axis_f(), &b.anchor_f(), &b.axis_f());
        }
    }
    for (h, d) in s.hinges.iter_mut().zip(lengths) {
        h.link_length = d;
    }
}
