//! Quadtree meshes on a rectangle with 2:1 balance.
//!
//! A mesh is an immutable set of leaf cells of one quadtree rooted at the
//! domain rectangle. Cells are ordered along the Morton curve. Faces are
//! enumerated so that every hanging subface is owned by the finer cell.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LEVEL: u8 = 28;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// Axis-parallel rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Domain {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "degenerate domain [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Domain { x0, x1, y0, y1 })
    }

    pub fn unit_square() -> Self {
        Domain {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Sides of a rectangle, also used for the four domain boundary pieces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
            Side::Bottom => 2,
            Side::Top => 3,
        }
    }

    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    /// 0 for faces with an x-normal, 1 for faces with a y-normal.
    pub fn normal_axis(self) -> usize {
        match self {
            Side::Left | Side::Right => 0,
            Side::Bottom | Side::Top => 1,
        }
    }

    /// Reference coordinate of this side along its normal axis.
    pub fn fixed_value(self) -> f64 {
        match self {
            Side::Left | Side::Bottom => 0.0,
            Side::Right | Side::Top => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Boundary labels per domain side, in `Side::ALL` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryLabels(pub [BoundaryKind; 4]);

impl BoundaryLabels {
    pub fn all_dirichlet() -> Self {
        BoundaryLabels([BoundaryKind::Dirichlet; 4])
    }

    pub fn get(&self, s: Side) -> BoundaryKind {
        self.0[s.index()]
    }
}

/// Position of a cell in the quadtree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl CellKey {
    pub fn new(level: u8, i: u32, j: u32) -> Self {
        CellKey { level, i, j }
    }

    pub fn parent(&self) -> Option<CellKey> {
        if self.level == 0 {
            None
        } else {
            Some(CellKey::new(self.level - 1, self.i / 2, self.j / 2))
        }
    }

    /// Children in Morton order.
    pub fn children(&self) -> [CellKey; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            CellKey::new(l, i, j),
            CellKey::new(l, i + 1, j),
            CellKey::new(l, i, j + 1),
            CellKey::new(l, i + 1, j + 1),
        ]
    }

    pub fn ancestor(&self, level: u8) -> CellKey {
        debug_assert!(level <= self.level);
        let d = self.level - level;
        CellKey::new(level, self.i >> d, self.j >> d)
    }

    /// True when `other` equals this cell or lies inside it.
    pub fn contains(&self, other: &CellKey) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }

    /// Same-level neighbour across a side, if inside the root.
    pub fn neighbor(&self, side: Side) -> Option<CellKey> {
        let n = 1u32 << self.level;
        match side {
            Side::Left if self.i > 0 => Some(CellKey::new(self.level, self.i - 1, self.j)),
            Side::Right if self.i + 1 < n => Some(CellKey::new(self.level, self.i + 1, self.j)),
            Side::Bottom if self.j > 0 => Some(CellKey::new(self.level, self.i, self.j - 1)),
            Side::Top if self.j + 1 < n => Some(CellKey::new(self.level, self.i, self.j + 1)),
            _ => None,
        }
    }

    /// The two children touching a side, ordered along the side.
    pub fn children_on(&self, side: Side) -> [CellKey; 2] {
        let c = self.children();
        match side {
            Side::Left => [c[0], c[2]],
            Side::Right => [c[1], c[3]],
            Side::Bottom => [c[0], c[1]],
            Side::Top => [c[2], c[3]],
        }
    }

    pub fn morton(&self) -> u64 {
        let shift = MAX_LEVEL - self.level;
        let (x, y) = ((self.i as u64) << shift, (self.j as u64) << shift);
        let mut m = 0u64;
        for b in 0..(MAX_LEVEL as u64) {
            m |= ((x >> b) & 1) << (2 * b);
            m |= ((y >> b) & 1) << (2 * b + 1);
        }
        m
    }
}

/// Physical extent of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Rect {
    pub fn map(&self, r: [f64; 2]) -> [f64; 2] {
        [self.x0 + self.hx * r[0], self.y0 + self.hy * r[1]]
    }

    pub fn to_ref(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.x0) / self.hx, (p[1] - self.y0) / self.hy]
    }

    pub fn area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn diameter(&self) -> f64 {
        self.hx.hypot(self.hy)
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x0 + 0.5 * self.hx, self.y0 + 0.5 * self.hy]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x0, self.y0],
            [self.x0 + self.hx, self.y0],
            [self.x0, self.y0 + self.hy],
            [self.x0 + self.hx, self.y0 + self.hy],
        ]
    }
}

/// Affine map from the face parameter `s in [0, 1]` to a cell's reference square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeMap {
    pub side: Side,
    pub offset: f64,
    pub scale: f64,
}

impl EdgeMap {
    pub fn ref_point(&self, s: f64) -> [f64; 2] {
        let t = self.offset + self.scale * s;
        let f = self.side.fixed_value();
        if self.side.normal_axis() == 0 {
            [f, t]
        } else {
            [t, f]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceBoundary {
    pub side: Side,
    pub kind: BoundaryKind,
}

/// A face of the mesh. Interior faces connect `minus` and `plus`; the normal
/// points from `minus` to `plus` (outward for boundary faces).
#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub minus: usize,
    pub plus: Option<usize>,
    pub normal: [f64; 2],
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub length: f64,
    pub minus_map: EdgeMap,
    pub plus_map: Option<EdgeMap>,
    pub boundary: Option<FaceBoundary>,
}

impl Face {
    pub fn point(&self, s: f64) -> [f64; 2] {
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }

    pub fn is_interior(&self) -> bool {
        self.plus.is_some()
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self.boundary, Some(b) if b.kind == BoundaryKind::Dirichlet)
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.minus).chain(self.plus)
    }
}

/// Refinement request for one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Flag {
    #[default]
    Keep,
    Refine,
    Coarsen,
}

/// Relation of a target cell to the cells of a source mesh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellRelation {
    Same(usize),
    /// The target cell lies inside this source cell.
    Inside(usize),
    /// The target cell is the union of these source cells.
    Union(Vec<usize>),
}

/// Cell correspondence between two meshes of one quadtree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferMap {
    pub relations: Vec<CellRelation>,
}

impl TransferMap {
    pub fn between(source: &Mesh, target: &Mesh) -> Result<Self> {
        source.check_compatible(target)?;
        let relations = target
            .cells
            .iter()
            .map(|k| {
                if let Some(&s) = source.index.get(k) {
                    return CellRelation::Same(s);
                }
                if let Some(s) = source.find_ancestor_leaf(k) {
                    return CellRelation::Inside(s);
                }
                let mut inner = Vec::new();
                source.collect_leaves_inside(k, &mut inner);
                inner.sort_unstable();
                CellRelation::Union(inner)
            })
            .collect();
        Ok(TransferMap { relations })
    }
}

/// Immutable quadtree mesh.
#[derive(Debug)]
pub struct Mesh {
    id: u64,
    domain: Domain,
    labels: BoundaryLabels,
    cells: Vec<CellKey>,
    index: HashMap<CellKey, usize>,
    faces: Vec<Face>,
    cell_faces: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn create_uniform(domain: Domain, levels: u8, labels: BoundaryLabels) -> Result<Self> {
        if levels > MAX_LEVEL {
            return Err(Error::InvalidMesh(format!(
                "at most {MAX_LEVEL} refinements supported, got {levels}"
            )));
        }
        let n = 1u32 << levels;
        let keys: Vec<CellKey> = (0..n)
            .flat_map(|j| (0..n).map(move |i| CellKey::new(levels, i, j)))
            .collect();
        Self::from_leaves(domain, labels, keys)
    }

    /// Builds a mesh from a leaf set, which must tile the root and be balanced.
    pub fn from_leaves(
        domain: Domain,
        labels: BoundaryLabels,
        leaves: impl IntoIterator<Item = CellKey>,
    ) -> Result<Self> {
        let mut cells: Vec<CellKey> = leaves.into_iter().collect();
        cells.sort_by_key(|k| (k.morton(), k.level));
        cells.dedup();
        let index: HashMap<CellKey, usize> =
            cells.iter().enumerate().map(|(a, k)| (*k, a)).collect();
        let mut mesh = Mesh {
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
            domain,
            labels,
            cells,
            index,
            faces: Vec::new(),
            cell_faces: Vec::new(),
        };
        mesh.check_tiling()?;
        mesh.build_faces()?;
        Ok(mesh)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn labels(&self) -> &BoundaryLabels {
        &self.labels
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[CellKey] {
        &self.cells
    }

    pub fn key(&self, c: usize) -> CellKey {
        self.cells[c]
    }

    pub fn cell_index(&self, k: &CellKey) -> Option<usize> {
        self.index.get(k).copied()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Faces touching a cell.
    pub fn faces_of(&self, c: usize) -> &[usize] {
        &self.cell_faces[c]
    }

    pub fn max_level(&self) -> u8 {
        self.cells.iter().map(|k| k.level).max().unwrap_or(0)
    }

    pub fn min_level(&self) -> u8 {
        self.cells.iter().map(|k| k.level).min().unwrap_or(0)
    }

    pub fn key_rect(&self, k: &CellKey) -> Rect {
        let n = (1u64 << k.level) as f64;
        let hx = self.domain.width() / n;
        let hy = self.domain.height() / n;
        Rect {
            x0: self.domain.x0 + k.i as f64 * hx,
            y0: self.domain.y0 + k.j as f64 * hy,
            hx,
            hy,
        }
    }

    pub fn rect(&self, c: usize) -> Rect {
        self.key_rect(&self.cells[c])
    }

    /// Cell diameter.
    pub fn h(&self, c: usize) -> f64 {
        self.rect(c).diameter()
    }

    pub fn check_compatible(&self, other: &Mesh) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::IncompatibleMeshes(format!(
                "domains differ: {:?} vs {:?}",
                self.domain, other.domain
            )));
        }
        Ok(())
    }

    fn find_ancestor_leaf(&self, k: &CellKey) -> Option<usize> {
        let mut cur = k.parent();
        while let Some(p) = cur {
            if let Some(&c) = self.index.get(&p) {
                return Some(c);
            }
            cur = p.parent();
        }
        None
    }

    /// Leaf equal to or containing `k`.
    pub fn leaf_covering(&self, k: &CellKey) -> Option<usize> {
        self.index
            .get(k)
            .copied()
            .or_else(|| self.find_ancestor_leaf(k))
    }

    fn collect_leaves_inside(&self, k: &CellKey, out: &mut Vec<usize>) {
        if let Some(&c) = self.index.get(k) {
            out.push(c);
            return;
        }
        if k.level >= self.max_level() {
            return;
        }
        for ch in k.children() {
            self.collect_leaves_inside(&ch, out);
        }
    }

    /// Cell containing `p`; points on shared edges go to the upper/right cell.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        let d = &self.domain;
        let tol = 1e-12 * (d.width() + d.height());
        if p[0] < d.x0 - tol || p[0] > d.x1 + tol || p[1] < d.y0 - tol || p[1] > d.y1 + tol {
            return None;
        }
        let u = ((p[0] - d.x0) / d.width()).clamp(0.0, 1.0);
        let v = ((p[1] - d.y0) / d.height()).clamp(0.0, 1.0);
        for level in 0..=self.max_level() {
            let n = 1u64 << level;
            let i = ((u * n as f64).floor() as u64).min(n - 1) as u32;
            let j = ((v * n as f64).floor() as u64).min(n - 1) as u32;
            if let Some(&c) = self.index.get(&CellKey::new(level, i, j)) {
                return Some(c);
            }
        }
        None
    }

    /// Cell containing `p` approached from the interior of `host`, a rectangle
    /// that is covered by a single cell of this mesh or covers some of them.
    pub fn locate_from(&self, p: [f64; 2], host: &Rect) -> Option<usize> {
        let c = host.center();
        let q = [
            p[0] + 1e-7 * (c[0] - p[0]),
            p[1] + 1e-7 * (c[1] - p[1]),
        ];
        self.locate(q)
    }

    fn check_tiling(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::InvalidMesh("mesh has no cells".into()));
        }
        let mut area = 0.0;
        for k in &self.cells {
            if k.level > MAX_LEVEL || k.i >= (1u32 << k.level) || k.j >= (1u32 << k.level) {
                return Err(Error::InvalidMesh(format!("cell {k:?} outside the root")));
            }
            if self.find_ancestor_leaf(k).is_some() {
                return Err(Error::InvalidMesh(format!("cell {k:?} overlaps an ancestor")));
            }
            area += 0.25f64.powi(k.level as i32);
        }
        if (area - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMesh(format!(
                "cells cover {area} of the root, expected 1"
            )));
        }
        Ok(())
    }

    fn build_faces(&mut self) -> Result<()> {
        let mut faces = Vec::new();
        for (c, k) in self.cells.iter().enumerate() {
            let rect = self.key_rect(k);
            for side in Side::ALL {
                let (start, end) = side_segment(&rect, side);
                let full = EdgeMap {
                    side,
                    offset: 0.0,
                    scale: 1.0,
                };
                let normal = side.normal();
                let Some(nk) = k.neighbor(side) else {
                    faces.push(Face {
                        minus: c,
                        plus: None,
                        normal,
                        start,
                        end,
                        length: seg_len(start, end),
                        minus_map: full,
                        plus_map: None,
                        boundary: Some(FaceBoundary {
                            side,
                            kind: self.labels.get(side),
                        }),
                    });
                    continue;
                };
                let opposite = opposite(side);
                if let Some(&n) = self.index.get(&nk) {
                    if matches!(side, Side::Right | Side::Top) {
                        faces.push(Face {
                            minus: c,
                            plus: Some(n),
                            normal,
                            start,
                            end,
                            length: seg_len(start, end),
                            minus_map: full,
                            plus_map: Some(EdgeMap {
                                side: opposite,
                                offset: 0.0,
                                scale: 1.0,
                            }),
                            boundary: None,
                        });
                    }
                    continue;
                }
                if let Some(n) = self.find_ancestor_leaf(&nk) {
                    let coarse = self.cells[n];
                    let d = k.level - coarse.level;
                    if d > 1 {
                        return Err(Error::InvalidMesh(format!(
                            "cells {k:?} and {coarse:?} violate 2:1 balance"
                        )));
                    }
                    let along = if side.normal_axis() == 0 { k.j } else { k.i };
                    let base = if side.normal_axis() == 0 {
                        coarse.j
                    } else {
                        coarse.i
                    } << d;
                    let scale = 0.5f64.powi(d as i32);
                    faces.push(Face {
                        minus: c,
                        plus: Some(n),
                        normal,
                        start,
                        end,
                        length: seg_len(start, end),
                        minus_map: full,
                        plus_map: Some(EdgeMap {
                            side: opposite,
                            offset: (along - base) as f64 * scale,
                            scale,
                        }),
                        boundary: None,
                    });
                    continue;
                }
                // finer neighbours own the subfaces; check balance from here
                for ch in nk.children_on(opposite) {
                    if !self.index.contains_key(&ch) {
                        return Err(Error::InvalidMesh(format!(
                            "neighbours of {k:?} violate 2:1 balance"
                        )));
                    }
                }
            }
        }
        let mut cell_faces = vec![Vec::new(); self.cells.len()];
        for (f, face) in faces.iter().enumerate() {
            for c in face.cells() {
                cell_faces[c].push(f);
            }
        }
        self.faces = faces;
        self.cell_faces = cell_faces;
        Ok(())
    }

    /// Refines flagged cells, restores balance, then merges sibling groups
    /// whose four members are all flagged for coarsening when that keeps the
    /// mesh balanced. Infeasible coarsening requests are dropped.
    pub fn execute_adaptation(&self, flags: &[Flag]) -> Result<(Mesh, TransferMap)> {
        self.check_flags(flags)?;
        let mut leaves = self.refined_leaf_set(flags)?;
        let coarsen: BTreeSet<CellKey> = self
            .cells
            .iter()
            .zip(flags)
            .filter(|(_, f)| **f == Flag::Coarsen)
            .map(|(k, _)| *k)
            .collect();
        let mut parents = BTreeSet::new();
        for k in &coarsen {
            let Some(p) = k.parent() else { continue };
            if p.children().iter().all(|ch| coarsen.contains(ch) && leaves.contains(ch)) {
                parents.insert(p);
            }
        }
        let accepted: Vec<CellKey> = parents
            .into_iter()
            .filter(|p| coarsening_keeps_balance(&leaves, p))
            .collect();
        for p in &accepted {
            for ch in p.children() {
                leaves.remove(&ch);
            }
            leaves.insert(*p);
        }
        let mesh = Mesh::from_leaves(self.domain, self.labels, leaves)?;
        let map = TransferMap::between(self, &mesh)?;
        Ok((mesh, map))
    }

    pub fn refine_all(&self) -> Result<Mesh> {
        let flags = vec![Flag::Refine; self.n_cells()];
        Ok(self.execute_adaptation(&flags)?.0)
    }

    /// Applies only the refinements of `flags` (plus balance closure).
    pub fn advance_auxiliary(&self, flags: &[Flag]) -> Result<Mesh> {
        self.check_flags(flags)?;
        let leaves = self.refined_leaf_set(flags)?;
        Mesh::from_leaves(self.domain, self.labels, leaves)
    }

    /// Coarsest common refinement of two meshes of the same quadtree.
    pub fn common_refinement(&self, other: &Mesh) -> Result<Mesh> {
        self.check_compatible(other)?;
        let mut leaves = BTreeSet::new();
        for k in &self.cells {
            if other.leaf_covering(k).is_some() {
                leaves.insert(*k);
            }
        }
        for k in &other.cells {
            if self.leaf_covering(k).is_some() {
                leaves.insert(*k);
            }
        }
        Mesh::from_leaves(self.domain, self.labels, leaves)
    }

    /// True if every cell of `coarse` is a union of cells of this mesh.
    pub fn refines(&self, coarse: &Mesh) -> bool {
        self.domain == coarse.domain
            && self
                .cells
                .iter()
                .all(|k| coarse.leaf_covering(k).is_some())
    }

    fn check_flags(&self, flags: &[Flag]) -> Result<()> {
        if flags.len() != self.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} flags for {} cells",
                flags.len(),
                self.n_cells()
            )));
        }
        Ok(())
    }

    fn refined_leaf_set(&self, flags: &[Flag]) -> Result<BTreeSet<CellKey>> {
        let mut leaves: BTreeSet<CellKey> = BTreeSet::new();
        for (k, f) in self.cells.iter().zip(flags) {
            if *f == Flag::Refine {
                if k.level >= MAX_LEVEL {
                    return Err(Error::InvalidMesh(format!("cannot refine {k:?} further")));
                }
                leaves.extend(k.children());
            } else {
                leaves.insert(*k);
            }
        }
        balance(&mut leaves);
        Ok(leaves)
    }

    /// Structural checks: tiling, 2:1 balance, face pairing, face sizes.
    pub fn validate(&self) -> Result<()> {
        self.check_tiling()?;
        let mut measure = vec![0.0; self.n_cells()];
        for f in &self.faces {
            if let Some(p) = f.plus {
                let (a, b) = (self.cells[f.minus].level, self.cells[p].level);
                if a.abs_diff(b) > 1 {
                    return Err(Error::InvalidMesh(format!("face between levels {a} and {b}")));
                }
                if f.boundary.is_some() {
                    return Err(Error::InvalidMesh("interior face with a boundary label".into()));
                }
                measure[p] += f.length;
            } else if f.boundary.is_none() {
                return Err(Error::InvalidMesh("boundary face without label".into()));
            }
            measure[f.minus] += f.length;
            for c in f.cells() {
                if f.length > 2.0 * self.h(c) {
                    return Err(Error::InvalidMesh("face longer than 2 h_K".into()));
                }
            }
        }
        for c in 0..self.n_cells() {
            let r = self.rect(c);
            let perimeter = 2.0 * (r.hx + r.hy);
            if (measure[c] - perimeter).abs() > 1e-12 * perimeter {
                return Err(Error::InvalidMesh(format!(
                    "faces of cell {c} cover {} of perimeter {perimeter}",
                    measure[c]
                )));
            }
        }
        Ok(())
    }
}

fn opposite(s: Side) -> Side {
    match s {
        Side::Left => Side::Right,
        Side::Right => Side::Left,
        Side::Bottom => Side::Top,
        Side::Top => Side::Bottom,
    }
}

fn side_segment(r: &Rect, s: Side) -> ([f64; 2], [f64; 2]) {
    let (x0, y0, x1, y1) = (r.x0, r.y0, r.x0 + r.hx, r.y0 + r.hy);
    match s {
        Side::Left => ([x0, y0], [x0, y1]),
        Side::Right => ([x1, y0], [x1, y1]),
        Side::Bottom => ([x0, y0], [x1, y0]),
        Side::Top => ([x0, y1], [x1, y1]),
    }
}

fn seg_len(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

fn covering(leaves: &BTreeSet<CellKey>, k: &CellKey) -> Option<CellKey> {
    let mut cur = Some(*k);
    while let Some(c) = cur {
        if leaves.contains(&c) {
            return Some(c);
        }
        cur = c.parent();
    }
    None
}

/// Refines coarse cells until neighbouring leaves differ by at most one level.
fn balance(leaves: &mut BTreeSet<CellKey>) {
    loop {
        let mut to_refine = BTreeSet::new();
        for k in leaves.iter() {
            for side in Side::ALL {
                let Some(nk) = k.neighbor(side) else { continue };
                if let Some(c) = covering(leaves, &nk) {
                    if c.level + 1 < k.level {
                        to_refine.insert(c);
                    }
                }
            }
        }
        if to_refine.is_empty() {
            return;
        }
        for c in to_refine {
            leaves.remove(&c);
            leaves.extend(c.children());
        }
    }
}

fn coarsening_keeps_balance(leaves: &BTreeSet<CellKey>, p: &CellKey) -> bool {
    for side in Side::ALL {
        let Some(np) = p.neighbor(side) else { continue };
        if covering(leaves, &np).is_some() {
            continue;
        }
        // the neighbour is subdivided; its children touching p must be leaves
        for ch in np.children_on(opposite(side)) {
            if !leaves.contains(&ch) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(levels: u8) -> Mesh {
        Mesh::create_uniform(Domain::unit_square(), levels, BoundaryLabels::all_dirichlet())
            .unwrap()
    }

    #[test]
    fn uniform_counts() {
        let m = unit(2);
        assert_eq!(m.n_cells(), 16);
        // 2 * 4 * 3 interior + 16 boundary
        assert_eq!(m.faces().len(), 24 + 16);
        m.validate().unwrap();
    }

    #[test]
    fn refining_one_corner_forces_balance() {
        let m = unit(1);
        let mut flags = vec![Flag::Keep; 4];
        flags[0] = Flag::Refine;
        let (m2, _) = m.execute_adaptation(&flags).unwrap();
        let mut flags2 = vec![Flag::Keep; m2.n_cells()];
        // refine the child touching the centre of the domain
        let c = m2.cell_index(&CellKey::new(2, 1, 1)).unwrap();
        flags2[c] = Flag::Refine;
        let (m3, _) = m2.execute_adaptation(&flags2).unwrap();
        m3.validate().unwrap();
        assert!(m3.cell_index(&CellKey::new(1, 1, 0)).is_none());
        assert!(m3.cell_index(&CellKey::new(1, 0, 1)).is_none());
        assert!(m3.cell_index(&CellKey::new(1, 1, 1)).is_some());
    }

    #[test]
    fn coarsening_needs_all_siblings() {
        let m = unit(2);
        let mut flags = vec![Flag::Keep; m.n_cells()];
        for k in CellKey::new(1, 0, 0).children() {
            flags[m.cell_index(&k).unwrap()] = Flag::Coarsen;
        }
        flags[m.cell_index(&CellKey::new(2, 3, 3)).unwrap()] = Flag::Coarsen;
        let (m2, map) = m.execute_adaptation(&flags).unwrap();
        assert_eq!(m2.n_cells(), 13);
        let p = m2.cell_index(&CellKey::new(1, 0, 0)).unwrap();
        assert!(matches!(&map.relations[p], CellRelation::Union(v) if v.len() == 4));
    }

    #[test]
    fn hanging_face_maps() {
        let m = unit(1);
        let mut flags = vec![Flag::Keep; 4];
        flags[0] = Flag::Refine;
        let (m2, _) = m.execute_adaptation(&flags).unwrap();
        let fine = m2.cell_index(&CellKey::new(2, 1, 1)).unwrap();
        let coarse = m2.cell_index(&CellKey::new(1, 1, 0)).unwrap();
        let f = m2
            .faces()
            .iter()
            .find(|f| f.minus == fine && f.plus == Some(coarse))
            .unwrap();
        let p = f.point(0.5);
        let rm = m2.rect(fine).map(f.minus_map.ref_point(0.5));
        let rp = m2.rect(coarse).map(f.plus_map.unwrap().ref_point(0.5));
        for a in 0..2 {
            assert!((p[a] - rm[a]).abs() < 1e-15);
            assert!((p[a] - rp[a]).abs() < 1e-15);
        }
    }
}
