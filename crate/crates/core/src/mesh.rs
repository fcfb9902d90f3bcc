//! Curvilinear quadrilateral meshes: reference maps, metric terms and a
//! forest of quadtrees with 2:1 balanced non-conforming faces.
//!
//! Element sides are numbered `0 = xi-`, `1 = xi+`, `2 = eta-`, `3 = eta+`.
//! Points along a side are ordered by the tangential reference coordinate.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::basis::{apply_2d, mortar_operators, MortarOperators1D, NodalBasis1D};

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("non-positive Jacobian {value:e} at node {node} of element {element}")]
    NonPositiveJacobian { element: usize, node: usize, value: f64 },
    #[error("unknown mesh builder '{0}'")]
    UnknownBuilder(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[inline(always)]
pub fn side_dir(side: usize) -> usize {
    side / 2
}

#[inline(always)]
pub fn side_sign(side: usize) -> f64 {
    if side % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Volume node index of point `k` on `side`.
#[inline(always)]
pub fn face_node(nn: usize, side: usize, k: usize) -> usize {
    match side {
        0 => nn * k,
        1 => nn - 1 + nn * k,
        2 => k,
        _ => k + nn * (nn - 1),
    }
}

/// Index of the matching point on the other side of a face.
#[inline(always)]
pub fn flip_index(n: usize, k: usize, flipped: bool) -> usize {
    if flipped {
        n - k
    } else {
        k
    }
}

/// Metric data of one element at its solution points.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub coords: Vec<Point>,
    /// Covariant vectors `a_1 = dx/dxi`, `a_2 = dx/deta`.
    pub covariant: [Vec<Point>; 2],
    /// Contravariant metric terms `Ja^1`, `Ja^2`.
    pub ja: [Vec<Point>; 2],
    pub jac: Vec<f64>,
    pub inv_jac: Vec<f64>,
}

impl ElementGeometry {
    /// Outward scaled normal `+-Ja^i` at face point `k`, its norm and the
    /// unit normal.
    #[inline(always)]
    pub fn face_normal(&self, nn: usize, side: usize, k: usize) -> (Point, f64, Point) {
        let node = face_node(nn, side, k);
        let ja = self.ja[side_dir(side)][node];
        let s = side_sign(side);
        let n = [s * ja[0], s * ja[1]];
        let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
        (n, norm, [n[0] / norm, n[1] / norm])
    }

    pub fn volume(&self, basis: &NodalBasis1D) -> f64 {
        let nn = basis.n_nodes();
        let mut v = 0.0;
        for j in 0..nn {
            for i in 0..nn {
                v += self.jac[i + nn * j] * basis.weights[i] * basis.weights[j];
            }
        }
        v
    }
}

/// Metric terms from nodal coordinates.
pub fn compute_geometry(coords: &[Point], basis: &NodalBasis1D) -> Result<ElementGeometry, MeshError> {
    let nn = basis.n_nodes();
    let d = &basis.diff;
    let mut a1 = vec![[0.0; 2]; nn * nn];
    let mut a2 = vec![[0.0; 2]; nn * nn];
    for j in 0..nn {
        for i in 0..nn {
            let p = i + nn * j;
            for q in 0..nn {
                let c1 = coords[q + nn * j];
                let c2 = coords[i + nn * q];
                for k in 0..2 {
                    a1[p][k] += d[(i, q)] * c1[k];
                    a2[p][k] += d[(j, q)] * c2[k];
                }
            }
        }
    }
    let mut ja1 = vec![[0.0; 2]; nn * nn];
    let mut ja2 = vec![[0.0; 2]; nn * nn];
    let mut jac = vec![0.0; nn * nn];
    let mut inv_jac = vec![0.0; nn * nn];
    for p in 0..nn * nn {
        ja1[p] = [a2[p][1], -a2[p][0]];
        ja2[p] = [-a1[p][1], a1[p][0]];
        jac[p] = a1[p][0] * a2[p][1] - a2[p][0] * a1[p][1];
        if jac[p] <= 0.0 || !jac[p].is_finite() {
            return Err(MeshError::NonPositiveJacobian { element: usize::MAX, node: p, value: jac[p] });
        }
        inv_jac[p] = 1.0 / jac[p];
    }
    Ok(ElementGeometry {
        coords: coords.to_vec(),
        covariant: [a1, a2],
        ja: [ja1, ja2],
        jac,
        inv_jac,
    })
}

/// `max_p |sum_i D_i (Ja^i)_p|`.
pub fn metric_identity_residual(geom: &ElementGeometry, basis: &NodalBasis1D) -> f64 {
    let nn = basis.n_nodes();
    let d = &basis.diff;
    let mut worst: f64 = 0.0;
    for j in 0..nn {
        for i in 0..nn {
            let mut r = [0.0; 2];
            for q in 0..nn {
                let a = geom.ja[0][q + nn * j];
                let b = geom.ja[1][i + nn * q];
                for k in 0..2 {
                    r[k] += d[(i, q)] * a[k] + d[(j, q)] * b[k];
                }
            }
            worst = worst.max(r[0].abs()).max(r[1].abs());
        }
    }
    worst
}

/// Analytic maps from the unit square used by the structured builders.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Cartesian { x: [f64; 2], y: [f64; 2] },
    /// Global sine warping of `[0, 3]^2`.
    WarpedSquare { amplitude: f64 },
    /// `r = R1 exp(xi log(R2/R1))`, `theta = 2 pi eta`.
    Annulus { r_inner: f64, r_outer: f64 },
    /// Periodic sine distortion of an `lx x ly` box.
    DistortedBox { lx: f64, ly: f64, ax: f64, ay: f64 },
}

impl Transform {
    pub fn warped_square() -> Self {
        Transform::WarpedSquare { amplitude: 3.0 / 8.0 }
    }

    pub fn annulus() -> Self {
        Transform::Annulus { r_inner: 1.0, r_outer: 4.0 }
    }

    pub fn distorted_box() -> Self {
        Transform::DistortedBox { lx: 0.1, ly: 0.1, ax: 0.1, ay: 0.1 }
    }

    /// Map `(s, t) in [0, 1]^2` to physical space.
    pub fn map(&self, s: f64, t: f64) -> Point {
        match *self {
            Transform::Cartesian { x, y } => [x[0] + s * (x[1] - x[0]), y[0] + t * (y[1] - y[0])],
            Transform::WarpedSquare { amplitude } => {
                let xi = 3.0 * s;
                let eta = 3.0 * t;
                let y = eta
                    + amplitude
                        * (1.5 * PI * (2.0 * xi - 3.0) / 3.0).cos()
                        * (0.5 * PI * (2.0 * eta - 3.0) / 3.0).cos();
                let x = xi
                    + amplitude
                        * (0.5 * PI * (2.0 * xi - 3.0) / 3.0).cos()
                        * (2.0 * PI * (2.0 * y - 3.0) / 3.0).cos();
                [x, y]
            }
            Transform::Annulus { r_inner, r_outer } => {
                let r = r_inner * (s * (r_outer / r_inner).ln()).exp();
                let th = 2.0 * PI * t;
                [r * th.cos(), r * th.sin()]
            }
            Transform::DistortedBox { lx, ly, ax, ay } => [
                s * lx - ax * ly * (2.0 * PI * t).sin(),
                t * ly + ay * lx * (2.0 * PI * s).sin(),
            ],
        }
    }

    /// Periodicity implied by the map itself.
    pub fn natural_periodicity(&self) -> [bool; 2] {
        match self {
            Transform::Cartesian { .. } | Transform::WarpedSquare { .. } => [false, false],
            Transform::Annulus { .. } => [false, true],
            Transform::DistortedBox { .. } => [true, true],
        }
    }

    fn side_tags(&self) -> [&'static str; 4] {
        match self {
            Transform::Annulus { .. } => ["inner", "outer", "bottom", "top"],
            _ => ["left", "right", "bottom", "top"],
        }
    }
}

/// Connection of a tree side to the rest of the forest.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeLink {
    Tree { tree: usize, side: usize, flipped: bool, periodic: bool },
    Boundary(usize),
}

/// Quadtree node address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeKey {
    pub tree: u32,
    pub level: u8,
    pub ix: u32,
    pub iy: u32,
}

impl NodeKey {
    pub fn root(tree: usize) -> Self {
        Self { tree: tree as u32, level: 0, ix: 0, iy: 0 }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self { tree: self.tree, level: self.level - 1, ix: self.ix / 2, iy: self.iy / 2 })
    }

    /// Child `s = sx + 2 sy`.
    pub fn child(&self, s: usize) -> Self {
        Self {
            tree: self.tree,
            level: self.level + 1,
            ix: 2 * self.ix + (s & 1) as u32,
            iy: 2 * self.iy + (s >> 1) as u32,
        }
    }

    pub fn child_index(&self) -> usize {
        (self.ix & 1) as usize + 2 * (self.iy & 1) as usize
    }

    fn morton(&self) -> u64 {
        const DEPTH: u32 = 30;
        let x = (self.ix as u64) << (DEPTH - self.level as u32);
        let y = (self.iy as u64) << (DEPTH - self.level as u32);
        let mut m = 0u64;
        for b in 0..DEPTH {
            m |= ((x >> b) & 1) << (2 * b);
            m |= ((y >> b) & 1) << (2 * b + 1);
        }
        m
    }
}

/// Children touching `side`, in order of the tangential coordinate.
fn children_on_side(side: usize) -> [usize; 2] {
    match side {
        0 => [0, 2],
        1 => [1, 3],
        2 => [0, 1],
        _ => [2, 3],
    }
}

/// What lies across one side of a leaf.
#[derive(Debug, Clone, PartialEq)]
pub enum Adjacent {
    Boundary(usize),
    Same { key: NodeKey, side: usize, flipped: bool },
    Coarser { key: NodeKey, side: usize, flipped: bool },
    /// Leaf descendants along the neighbor's side, in the neighbor's
    /// tangential order.
    Finer { keys: Vec<NodeKey>, side: usize, flipped: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Face {
    Conforming { a: (usize, usize), b: (usize, usize), flipped: bool },
    /// `fine[s]` covers half `s` of the coarse side in the coarse side's
    /// tangential order; `flipped` applies to both fine sides.
    Mortar { coarse: (usize, usize), fine: [(usize, usize); 2], flipped: bool },
    Boundary { elem: usize, side: usize, tag: usize },
}

/// How a leaf of the adapted mesh relates to the previous leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Kept(usize),
    Refined { parent: usize, child: usize },
    Coarsened { children: [usize; 4] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptFlag {
    Keep,
    Refine,
    Coarsen,
}

/// Forest of quadtrees with per-leaf geometry and face classification.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub basis: NodalBasis1D,
    pub mortar: MortarOperators1D,
    pub tag_names: Vec<String>,
    pub tree_links: Vec<[TreeLink; 4]>,
    maps: HashMap<NodeKey, Arc<Vec<Point>>>,
    pub leaves: Vec<NodeKey>,
    index: HashMap<NodeKey, usize>,
    pub geometry: Vec<ElementGeometry>,
    pub faces: Vec<Face>,
    pub generation: u64,
}

impl Mesh {
    /// Build from root element maps sampled at the GLL tensor nodes.
    pub fn from_trees(
        basis: &NodalBasis1D,
        roots: Vec<Vec<Point>>,
        tree_links: Vec<[TreeLink; 4]>,
        tag_names: Vec<String>,
    ) -> Result<Self, MeshError> {
        let nn = basis.n_nodes();
        if roots.len() != tree_links.len() {
            return Err(MeshError::Invalid("tree count mismatch".into()));
        }
        for (t, r) in roots.iter().enumerate() {
            if r.len() != nn * nn {
                return Err(MeshError::Invalid(format!("tree {t} has {} nodes, expected {}", r.len(), nn * nn)));
            }
        }
        for (t, links) in tree_links.iter().enumerate() {
            for (s, link) in links.iter().enumerate() {
                match link {
                    TreeLink::Tree { tree, side, flipped, .. } => {
                        let back = tree_links
                            .get(*tree)
                            .and_then(|l| l.get(*side))
                            .ok_or_else(|| MeshError::Invalid(format!("tree {t} side {s} links to missing tree")))?;
                        match back {
                            TreeLink::Tree { tree: t2, side: s2, flipped: f2, .. }
                                if *t2 == t && *s2 == s && f2 == flipped => {}
                            _ => {
                                return Err(MeshError::Invalid(format!(
                                    "tree {t} side {s} link is not reciprocated"
                                )))
                            }
                        }
                    }
                    TreeLink::Boundary(tag) => {
                        if *tag >= tag_names.len() {
                            return Err(MeshError::Invalid(format!("unknown boundary tag id {tag}")));
                        }
                    }
                }
            }
        }
        let mut maps = HashMap::new();
        let mut leaves = Vec::with_capacity(roots.len());
        for (t, r) in roots.into_iter().enumerate() {
            let key = NodeKey::root(t);
            maps.insert(key, Arc::new(r));
            leaves.push(key);
        }
        let mut mesh = Mesh {
            basis: basis.clone(),
            mortar: mortar_operators(basis),
            tag_names,
            tree_links,
            maps,
            leaves,
            index: HashMap::new(),
            geometry: Vec::new(),
            faces: Vec::new(),
            generation: 0,
        };
        mesh.rebuild()?;
        Ok(mesh)
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.leaves.len()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn level(&self, e: usize) -> usize {
        self.leaves[e].level as usize
    }

    pub fn element_of(&self, key: &NodeKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn tag_id(&self, name: &str) -> Option<usize> {
        self.tag_names.iter().position(|t| t == name)
    }

    /// Reference map nodes of any quadtree node, interpolating from the
    /// nearest cached ancestor.
    pub fn map_of(&mut self, key: NodeKey) -> Arc<Vec<Point>> {
        if let Some(m) = self.maps.get(&key) {
            return m.clone();
        }
        let parent = key.parent().expect("root maps are always cached");
        let pm = self.map_of(parent);
        let s = key.child_index();
        let child = apply_2d(&self.mortar.interp[s & 1], &self.mortar.interp[s >> 1], &pm);
        let arc = Arc::new(child);
        self.maps.insert(key, arc.clone());
        arc
    }

    fn rebuild(&mut self) -> Result<(), MeshError> {
        self.leaves.sort_by_key(|k| (k.tree, k.morton()));
        self.index = self.leaves.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let keys = self.leaves.clone();
        let mut geometry = Vec::with_capacity(keys.len());
        for (e, key) in keys.iter().enumerate() {
            let m = self.map_of(*key);
            let g = compute_geometry(&m, &self.basis).map_err(|err| match err {
                MeshError::NonPositiveJacobian { node, value, .. } => {
                    MeshError::NonPositiveJacobian { element: e, node, value }
                }
                other => other,
            })?;
            geometry.push(g);
        }
        self.geometry = geometry;
        self.faces = self.classify_faces()?;
        self.generation += 1;
        Ok(())
    }

    /// Same-level node across `side`, or the boundary tag.
    fn across(&self, key: &NodeKey, side: usize) -> Result<(NodeKey, usize, bool), usize> {
        let n = 1u32 << key.level;
        let (ix, iy) = (key.ix, key.iy);
        let inside = match side {
            0 => (ix > 0).then(|| (ix - 1, iy)),
            1 => (ix + 1 < n).then(|| (ix + 1, iy)),
            2 => (iy > 0).then(|| (ix, iy - 1)),
            _ => (iy + 1 < n).then(|| (ix, iy + 1)),
        };
        if let Some((x, y)) = inside {
            return Ok((NodeKey { ix: x, iy: y, ..*key }, side ^ 1, false));
        }
        match &self.tree_links[key.tree as usize][side] {
            TreeLink::Boundary(tag) => Err(*tag),
            TreeLink::Tree { tree, side: s2, flipped, .. } => {
                let k = if side < 2 { iy } else { ix };
                let k2 = if *flipped { n - 1 - k } else { k };
                let (x, y) = match s2 {
                    0 => (0, k2),
                    1 => (n - 1, k2),
                    2 => (k2, 0),
                    _ => (k2, n - 1),
                };
                Ok((NodeKey { tree: *tree as u32, level: key.level, ix: x, iy: y }, *s2, *flipped))
            }
        }
    }

    fn adjacent_in(&self, leaves: &impl Fn(&NodeKey) -> bool, key: &NodeKey, side: usize) -> Adjacent {
        let (nk, s2, flipped) = match self.across(key, side) {
            Err(tag) => return Adjacent::Boundary(tag),
            Ok(v) => v,
        };
        if leaves(&nk) {
            return Adjacent::Same { key: nk, side: s2, flipped };
        }
        let mut anc = nk.parent();
        while let Some(a) = anc {
            if leaves(&a) {
                return Adjacent::Coarser { key: a, side: s2, flipped };
            }
            anc = a.parent();
        }
        let mut keys = Vec::new();
        fn descend(leaves: &impl Fn(&NodeKey) -> bool, k: NodeKey, side: usize, out: &mut Vec<NodeKey>, depth: usize) {
            if leaves(&k) {
                out.push(k);
            } else if depth < 40 {
                for c in children_on_side(side) {
                    descend(leaves, k.child(c), side, out, depth + 1);
                }
            }
        }
        for c in children_on_side(s2) {
            descend(leaves, nk.child(c), s2, &mut keys, 0);
        }
        Adjacent::Finer { keys, side: s2, flipped }
    }

    /// Neighbor information of leaf element `e` across `side`.
    pub fn adjacent(&self, e: usize, side: usize) -> Adjacent {
        let idx = &self.index;
        self.adjacent_in(&|k: &NodeKey| idx.contains_key(k), &self.leaves[e], side)
    }

    fn classify_faces(&self) -> Result<Vec<Face>, MeshError> {
        let mut faces = Vec::new();
        for (e, key) in self.leaves.iter().enumerate() {
            for side in 0..4 {
                match self.adjacent(e, side) {
                    Adjacent::Boundary(tag) => faces.push(Face::Boundary { elem: e, side, tag }),
                    Adjacent::Same { key: nk, side: s2, flipped } => {
                        let f = self.index[&nk];
                        if (e, side) < (f, s2) {
                            faces.push(Face::Conforming { a: (e, side), b: (f, s2), flipped });
                        }
                    }
                    Adjacent::Coarser { key: ck, .. } => {
                        if ck.level + 1 != key.level {
                            return Err(MeshError::Invalid("unbalanced mesh".into()));
                        }
                    }
                    Adjacent::Finer { keys, side: s2, flipped } => {
                        if keys.len() != 2 || keys.iter().any(|k| k.level != key.level + 1) {
                            return Err(MeshError::Invalid("unbalanced mesh".into()));
                        }
                        let mut fine = [(self.index[&keys[0]], s2), (self.index[&keys[1]], s2)];
                        if flipped {
                            fine.swap(0, 1);
                        }
                        faces.push(Face::Mortar { coarse: (e, side), fine, flipped });
                    }
                }
            }
        }
        Ok(faces)
    }

    /// Face neighbors of every element (without duplicates).
    pub fn element_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_elements()];
        let mut add = |a: usize, b: usize| {
            if a != b && !nb[a].contains(&b) {
                nb[a].push(b);
            }
            if a != b && !nb[b].contains(&a) {
                nb[b].push(a);
            }
        };
        for f in &self.faces {
            match f {
                Face::Conforming { a, b, .. } => add(a.0, b.0),
                Face::Mortar { coarse, fine, .. } => {
                    add(coarse.0, fine[0].0);
                    add(coarse.0, fine[1].0);
                }
                Face::Boundary { .. } => {}
            }
        }
        nb
    }

    /// Refine, balance and coarsen according to per-element flags. Returns
    /// the origin of every new leaf.
    pub fn adapt(&mut self, flags: &[AdaptFlag]) -> Result<Vec<Origin>, MeshError> {
        assert_eq!(flags.len(), self.n_elements());
        let old_index = self.index.clone();
        let mut set: BTreeSet<NodeKey> = BTreeSet::new();
        for (e, key) in self.leaves.iter().enumerate() {
            if flags[e] == AdaptFlag::Refine {
                for s in 0..4 {
                    set.insert(key.child(s));
                }
            } else {
                set.insert(*key);
            }
        }
        self.balance(&mut set);

        let mut groups: BTreeSet<NodeKey> = BTreeSet::new();
        for (e, key) in self.leaves.iter().enumerate() {
            if flags[e] == AdaptFlag::Coarsen {
                if let Some(p) = key.parent() {
                    groups.insert(p);
                }
            }
        }
        for p in groups {
            let kids: Vec<NodeKey> = (0..4).map(|s| p.child(s)).collect();
            let all_flagged = kids.iter().all(|k| {
                set.contains(k) && old_index.get(k).map(|&e| flags[e] == AdaptFlag::Coarsen).unwrap_or(false)
            });
            if !all_flagged {
                continue;
            }
            for k in &kids {
                set.remove(k);
            }
            set.insert(p);
            let ok = (0..4).all(|side| match self.adjacent_in(&|k: &NodeKey| set.contains(k), &p, side) {
                Adjacent::Finer { keys, .. } => keys.iter().all(|k| k.level <= p.level + 1),
                _ => true,
            });
            if !ok {
                set.remove(&p);
                for k in kids {
                    set.insert(k);
                }
            }
        }

        self.leaves = set.into_iter().collect();
        self.rebuild()?;
        self.leaves
            .iter()
            .map(|key| {
                if let Some(&o) = old_index.get(key) {
                    return Ok(Origin::Kept(o));
                }
                if let Some(&o) = key.parent().and_then(|p| old_index.get(&p)) {
                    return Ok(Origin::Refined { parent: o, child: key.child_index() });
                }
                let kids: Option<Vec<usize>> = (0..4).map(|s| old_index.get(&key.child(s)).copied()).collect();
                match kids {
                    Some(k) => Ok(Origin::Coarsened { children: [k[0], k[1], k[2], k[3]] }),
                    None => Err(MeshError::Invalid("adaptation changed a leaf by more than one level".into())),
                }
            })
            .collect()
    }

    /// Refine leaves until neighboring leaves differ by at most one level.
    pub fn balance(&self, set: &mut BTreeSet<NodeKey>) {
        loop {
            let mut to_refine = Vec::new();
            for key in set.iter() {
                for side in 0..4 {
                    if let Adjacent::Finer { keys, .. } = self.adjacent_in(&|k: &NodeKey| set.contains(k), key, side) {
                        if keys.iter().any(|k| k.level > key.level + 1) {
                            to_refine.push(*key);
                            break;
                        }
                    }
                }
            }
            if to_refine.is_empty() {
                break;
            }
            for key in to_refine {
                set.remove(&key);
                for s in 0..4 {
                    set.insert(key.child(s));
                }
            }
        }
    }

    /// Largest coordinate mismatch between the two sides of conforming,
    /// non-periodic faces (and between fine faces and the coarse face
    /// polynomial on mortars).
    pub fn watertightness(&self) -> f64 {
        let nn = self.basis.n_nodes();
        let n = nn - 1;
        let mut worst: f64 = 0.0;
        for f in &self.faces {
            match f {
                Face::Conforming { a, b, flipped } => {
                    if self.face_is_periodic(a.0, a.1) {
                        continue;
                    }
                    for k in 0..nn {
                        let pa = self.geometry[a.0].coords[face_node(nn, a.1, k)];
                        let pb = self.geometry[b.0].coords[face_node(nn, b.1, flip_index(n, k, *flipped))];
                        worst = worst.max((pa[0] - pb[0]).abs()).max((pa[1] - pb[1]).abs());
                    }
                }
                Face::Mortar { coarse, fine, flipped } => {
                    if self.face_is_periodic(coarse.0, coarse.1) {
                        continue;
                    }
                    let cpts: Vec<Point> =
                        (0..nn).map(|k| self.geometry[coarse.0].coords[face_node(nn, coarse.1, k)]).collect();
                    for (s, fs) in fine.iter().enumerate() {
                        let pro = self.mortar.interp[s].matvec_nodal(&cpts);
                        for (k, pc) in pro.iter().enumerate() {
                            let pf = self.geometry[fs.0].coords[face_node(nn, fs.1, flip_index(n, k, *flipped))];
                            worst = worst.max((pc[0] - pf[0]).abs()).max((pc[1] - pf[1]).abs());
                        }
                    }
                }
                Face::Boundary { .. } => {}
            }
        }
        worst
    }

    /// Whether the side of element `e` lies on a periodic tree link.
    pub fn face_is_periodic(&self, e: usize, side: usize) -> bool {
        let key = &self.leaves[e];
        let n = 1u32 << key.level;
        let on_tree_side = match side {
            0 => key.ix == 0,
            1 => key.ix + 1 == n,
            2 => key.iy == 0,
            _ => key.iy + 1 == n,
        };
        on_tree_side && matches!(self.tree_links[key.tree as usize][side], TreeLink::Tree { periodic: true, .. })
    }

    /// Largest mismatch of the scaled normal `Ja^i . n` across conforming
    /// faces (well-constructedness).
    pub fn normal_continuity(&self) -> f64 {
        let nn = self.basis.n_nodes();
        let n = nn - 1;
        let mut worst: f64 = 0.0;
        for f in &self.faces {
            if let Face::Conforming { a, b, flipped } = f {
                for k in 0..nn {
                    let (na, _, _) = self.geometry[a.0].face_normal(nn, a.1, k);
                    let (nb, _, _) = self.geometry[b.0].face_normal(nn, b.1, flip_index(n, k, *flipped));
                    worst = worst.max((na[0] + nb[0]).abs()).max((na[1] + nb[1]).abs());
                }
            }
        }
        worst
    }

    pub fn max_metric_residual(&self) -> f64 {
        self.geometry.iter().map(|g| metric_identity_residual(g, &self.basis)).fold(0.0, f64::max)
    }

    /// Serialize the current leaves as a mesh text file (each leaf becomes a
    /// tree). Only conforming meshes can be written.
    pub fn to_text(&self) -> Result<String, MeshError> {
        let nn = self.basis.n_nodes();
        let mut out = String::new();
        let _ = writeln!(out, "lwfr-mesh 1");
        let _ = writeln!(out, "degree {}", self.degree());
        let _ = writeln!(out, "tags {}", self.tag_names.len());
        for t in &self.tag_names {
            let _ = writeln!(out, "{t}");
        }
        let _ = writeln!(out, "elements {}", self.n_elements());
        for g in &self.geometry {
            for p in 0..nn * nn {
                let _ = writeln!(out, "{:.17e} {:.17e}", g.coords[p][0], g.coords[p][1]);
            }
        }
        let _ = writeln!(out, "connectivity");
        for e in 0..self.n_elements() {
            for side in 0..4 {
                match self.adjacent(e, side) {
                    Adjacent::Boundary(tag) => {
                        let _ = writeln!(out, "{e} {side} boundary {}", self.tag_names[tag]);
                    }
                    Adjacent::Same { key, side: s2, flipped } => {
                        let _ = writeln!(
                            out,
                            "{e} {side} element {} {s2} {} {}",
                            self.index[&key],
                            flipped as u8,
                            self.face_is_periodic(e, side) as u8
                        );
                    }
                    _ => return Err(MeshError::Invalid("cannot export a non-conforming mesh".into())),
                }
            }
        }
        Ok(out)
    }

    /// Parse the mesh text format. The file degree may differ from the
    /// basis degree; nodes are then re-interpolated.
    pub fn from_text(text: &str, basis: &NodalBasis1D) -> Result<Self, MeshError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut pos = 0usize;
        let perr = |line: usize, msg: &str| MeshError::Parse { line, msg: msg.to_string() };
        let next = |pos: &mut usize, what: &str| -> Result<(usize, &str), MeshError> {
            let r = lines.get(*pos).copied().ok_or(MeshError::Parse { line: 0, msg: format!("missing {what}") })?;
            *pos += 1;
            Ok(r)
        };
        let (ln, header) = next(&mut pos, "header")?;
        if header != "lwfr-mesh 1" {
            return Err(perr(ln, "expected 'lwfr-mesh 1'"));
        }
        let field = |pos: &mut usize, name: &str| -> Result<(usize, usize), MeshError> {
            let (ln, l) = next(pos, name)?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(perr(ln, &format!("expected '{name}'")));
            }
            let v = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| perr(ln, "expected integer"))?;
            Ok((ln, v))
        };
        let (_, degree) = field(&mut pos, "degree")?;
        let (_, ntags) = field(&mut pos, "tags")?;
        let mut tag_names = Vec::new();
        for _ in 0..ntags {
            tag_names.push(next(&mut pos, "tag")?.1.to_string());
        }
        let (_, nel) = field(&mut pos, "elements")?;
        let mnn = degree + 1;
        let src = crate::basis::gll_basis(degree).map_err(|e| perr(0, &e.to_string()))?;
        let nn = basis.n_nodes();
        let mut roots = Vec::with_capacity(nel);
        for _ in 0..nel {
            let mut pts = Vec::with_capacity(mnn * mnn);
            for _ in 0..mnn * mnn {
                let (ln, l) = next(&mut pos, "coordinates")?;
                let v: Vec<f64> = l.split_whitespace().filter_map(|x| x.parse().ok()).collect();
                if v.len() != 2 {
                    return Err(perr(ln, "expected two coordinates"));
                }
                pts.push([v[0], v[1]]);
            }
            if degree == basis.degree {
                roots.push(pts);
            } else {
                let mut out = Vec::with_capacity(nn * nn);
                for j in 0..nn {
                    let lj = src.lagrange_eval(basis.nodes[j]);
                    for i in 0..nn {
                        let li = src.lagrange_eval(basis.nodes[i]);
                        let mut x = [0.0; 2];
                        for b in 0..mnn {
                            for a in 0..mnn {
                                let w = li[a] * lj[b];
                                x[0] += w * pts[a + mnn * b][0];
                                x[1] += w * pts[a + mnn * b][1];
                            }
                        }
                        out.push(x);
                    }
                }
                roots.push(out);
            }
        }
        let (ln, l) = next(&mut pos, "connectivity")?;
        if l != "connectivity" {
            return Err(perr(ln, "expected 'connectivity'"));
        }
        let mut links: Vec<[Option<TreeLink>; 4]> = vec![[None, None, None, None]; nel];
        for &(ln, l) in &lines[pos..] {
            let tok: Vec<&str> = l.split_whitespace().collect();
            let num = |i: usize| -> Result<usize, MeshError> {
                tok.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| perr(ln, "expected integer"))
            };
            let (e, side) = (num(0)?, num(1)?);
            if e >= nel || side > 3 {
                return Err(perr(ln, "element or side out of range"));
            }
            let link = match tok.get(2) {
                Some(&"boundary") => {
                    let name = tok.get(3).ok_or_else(|| perr(ln, "missing tag"))?;
                    let id = tag_names.iter().position(|t| t == name).ok_or_else(|| perr(ln, "unknown tag"))?;
                    TreeLink::Boundary(id)
                }
                Some(&"element") => TreeLink::Tree {
                    tree: num(3)?,
                    side: num(4)?,
                    flipped: num(5)? != 0,
                    periodic: tok.get(6).map(|v| *v == "1").unwrap_or(false),
                },
                _ => return Err(perr(ln, "expected 'boundary' or 'element'")),
            };
            links[e][side] = Some(link);
        }
        let tree_links = links
            .into_iter()
            .enumerate()
            .map(|(e, l)| {
                let get = |s: usize| l[s].clone().ok_or_else(|| MeshError::Invalid(format!("element {e} side {s} unconnected")));
                Ok([get(0)?, get(1)?, get(2)?, get(3)?])
            })
            .collect::<Result<Vec<_>, MeshError>>()?;
        Mesh::from_trees(basis, roots, tree_links, tag_names)
    }
}

trait MatvecNodal {
    fn matvec_nodal(&self, x: &[Point]) -> Vec<Point>;
}

impl MatvecNodal for crate::basis::Matrix {
    fn matvec_nodal(&self, x: &[Point]) -> Vec<Point> {
        (0..self.rows)
            .map(|r| {
                let mut v = [0.0; 2];
                for c in 0..self.cols {
                    v[0] += self[(r, c)] * x[c][0];
                    v[1] += self[(r, c)] * x[c][1];
                }
                v
            })
            .collect()
    }
}

/// Parameters of a structured builder mesh.
#[derive(Debug, Clone)]
pub struct StructuredSpec {
    pub transform: Transform,
    pub cells: [usize; 2],
    pub periodic: [bool; 2],
}

impl StructuredSpec {
    pub fn new(transform: Transform, cx: usize, cy: usize) -> Self {
        let periodic = transform.natural_periodicity();
        Self { transform, cells: [cx, cy], periodic }
    }
}

/// Structured `cells_x x cells_y` mesh of an analytic map; `active` removes
/// cells (their faces become the "obstacle" boundary).
pub fn build_structured_masked(
    spec: &StructuredSpec,
    basis: &NodalBasis1D,
    active: &dyn Fn(usize, usize) -> bool,
) -> Result<Mesh, MeshError> {
    let [cx, cy] = spec.cells;
    if cx == 0 || cy == 0 {
        return Err(MeshError::Invalid("cell counts must be positive".into()));
    }
    let nn = basis.n_nodes();
    let mut tag_names: Vec<String> = spec.transform.side_tags().iter().map(|s| s.to_string()).collect();
    tag_names.push("obstacle".into());
    let mut tree_of = vec![usize::MAX; cx * cy];
    let mut cells = Vec::new();
    for j in 0..cy {
        for i in 0..cx {
            if active(i, j) {
                tree_of[i + cx * j] = cells.len();
                cells.push((i, j));
            }
        }
    }
    if cells.is_empty() {
        return Err(MeshError::Invalid("no active cells".into()));
    }
    let mut roots = Vec::with_capacity(cells.len());
    let mut links = Vec::with_capacity(cells.len());
    for &(i, j) in &cells {
        let mut pts = Vec::with_capacity(nn * nn);
        for q in 0..nn {
            for p in 0..nn {
                let s = (i as f64 + 0.5 * (basis.nodes[p] + 1.0)) / cx as f64;
                let t = (j as f64 + 0.5 * (basis.nodes[q] + 1.0)) / cy as f64;
                pts.push(spec.transform.map(s, t));
            }
        }
        roots.push(pts);
        let mut l: [TreeLink; 4] = std::array::from_fn(|_| TreeLink::Boundary(0));
        for side in 0..4 {
            let (di, dj): (i64, i64) = [(-1, 0), (1, 0), (0, -1), (0, 1)][side];
            let dir = side_dir(side);
            let (mut ni, mut nj) = (i as i64 + di, j as i64 + dj);
            let mut periodic = false;
            let outside = ni < 0 || nj < 0 || ni >= cx as i64 || nj >= cy as i64;
            if outside && spec.periodic[dir] {
                ni = ni.rem_euclid(cx as i64);
                nj = nj.rem_euclid(cy as i64);
                periodic = true;
            }
            l[side] = if ni < 0 || nj < 0 || ni >= cx as i64 || nj >= cy as i64 {
                TreeLink::Boundary(side)
            } else {
                let t = tree_of[ni as usize + cx * nj as usize];
                if t == usize::MAX {
                    TreeLink::Boundary(4)
                } else {
                    TreeLink::Tree { tree: t, side: side ^ 1, flipped: false, periodic }
                }
            };
        }
        links.push(l);
    }
    Mesh::from_trees(basis, roots, links, tag_names)
}

pub fn build_structured(spec: &StructuredSpec, basis: &NodalBasis1D) -> Result<Mesh, MeshError> {
    build_structured_masked(spec, basis, &|_, _| true)
}

/// Builder lookup by name: `cartesian`, `warped_square`, `annulus`,
/// `distorted_box`.
pub fn transform_by_name(name: &str, bounds: Option<[f64; 4]>) -> Result<Transform, MeshError> {
    Ok(match name {
        "cartesian" => {
            let b = bounds.unwrap_or([0.0, 1.0, 0.0, 1.0]);
            Transform::Cartesian { x: [b[0], b[1]], y: [b[2], b[3]] }
        }
        "warped_square" => Transform::warped_square(),
        "annulus" => Transform::annulus(),
        "distorted_box" => Transform::distorted_box(),
        other => return Err(MeshError::UnknownBuilder(other.to_string())),
    })
}
