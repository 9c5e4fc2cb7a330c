//! Discrete 2-D domains on a uniform lattice.
//!
//! A [`GridDomain`] stores the interior lattice nodes of a shape together
//! with one link per (interior node, stencil direction). A link points either
//! at another interior node or at a boundary point. For analytic shapes the
//! boundary point sits where the segment from the node along the direction
//! first leaves the shape, so link lengths shrink near the boundary and the
//! geometry stays exact. Mask domains use plain lattice positions.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operator::Stencil;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error("no lattice node lies strictly inside the domain")]
    EmptyInterior,
    #[error("interior splits into {components} edge-connected components")]
    DisconnectedInterior { components: usize },
    #[error("mask file: {0}")]
    MaskFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 0/1 bitmap. Row 0 of `rows` is the top row (largest y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub origin: [f64; 2],
    pub rows: Vec<Vec<bool>>,
}

impl Mask {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    /// Value at lattice column `i`, row `j` counted from the bottom.
    pub fn get(&self, i: i64, j: i64) -> bool {
        if i < 0 || j < 0 || i as usize >= self.width() || j as usize >= self.height() {
            return false;
        }
        self.rows[self.height() - 1 - j as usize][i as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
    Rectangle { corner: [f64; 2], widths: [f64; 2] },
    Mask(Mask),
}

fn default_width() -> u32 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub shape: Shape,
    pub spacing: f64,
    #[serde(default = "default_width")]
    pub stencil_width: u32,
}

impl DomainSpec {
    pub fn disk(radius: f64, spacing: f64) -> Self {
        Self {
            shape: Shape::Disk { center: [0.0, 0.0], radius },
            spacing,
            stencil_width: 3,
        }
    }

    pub fn annulus(inner: f64, outer: f64, spacing: f64) -> Self {
        Self {
            shape: Shape::Annulus { center: [0.0, 0.0], inner, outer },
            spacing,
            stencil_width: 3,
        }
    }

    pub fn rectangle(corner: [f64; 2], widths: [f64; 2], spacing: f64) -> Self {
        Self {
            shape: Shape::Rectangle { corner, widths },
            spacing,
            stencil_width: 3,
        }
    }

    pub fn with_stencil_width(mut self, w: u32) -> Self {
        self.stencil_width = w;
        self
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidSpec(m.to_string()));
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive");
        }
        if self.stencil_width == 0 {
            return bad("stencil width must be at least 1");
        }
        match &self.shape {
            Shape::Disk { radius, .. } if !(*radius > 0.0) => bad("disk radius must be positive"),
            Shape::Annulus { inner, outer, .. } if !(*inner >= 0.0 && inner < outer) => {
                bad("annulus needs 0 <= inner < outer")
            }
            Shape::Rectangle { widths, .. } if !(widths[0] > 0.0 && widths[1] > 0.0) => {
                bad("rectangle widths must be positive")
            }
            Shape::Mask(m) if m.rows.iter().any(|r| r.len() != m.width()) => {
                bad("mask rows have unequal lengths")
            }
            _ => Ok(()),
        }
    }
}

/// Where a link from an interior node ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Interior(u32),
    Boundary(u32),
    /// The lattice ends before the neighbor; only possible for masks that
    /// touch the edge of their bitmap.
    Missing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub target: Target,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub position: [f64; 2],
    /// Lattice index when the point coincides with a lattice node.
    pub lattice: Option<[i64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub outball_radius: f64,
    pub outball_center: [f64; 2],
    pub inball_radius: f64,
    pub inball_center: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridDomain {
    spec: DomainSpec,
    spacing: f64,
    origin: [f64; 2],
    dims: [usize; 2],
    base: [i64; 2],
    interior: Vec<[i64; 2]>,
    boundary: Vec<BoundaryPoint>,
    stencil: Stencil,
    links: Vec<Link>,
    metrics: Metrics,
    #[serde(skip)]
    lookup: Vec<i32>,
    #[serde(skip)]
    distance: OnceLock<Vec<f64>>,
}

impl PartialEq for GridDomain {
    fn eq(&self, other: &Self) -> bool {
        self.spacing == other.spacing
            && self.origin == other.origin
            && self.interior == other.interior
            && self.boundary == other.boundary
            && self.links == other.links
    }
}

/// Build the discrete domain described by `spec`.
pub fn build_domain(spec: &DomainSpec) -> Result<Arc<GridDomain>, GeometryError> {
    spec.validate()?;
    let h = spec.spacing;
    let stencil = Stencil::new(spec.stencil_width);
    let reach = stencil.reach() as i64;
    let (origin, lo, hi) = lattice_extent(&spec.shape, h);
    let base = [lo[0] - reach, lo[1] - reach];
    let dims = [
        (hi[0] - lo[0] + 1 + 2 * reach) as usize,
        (hi[1] - lo[1] + 1 + 2 * reach) as usize,
    ];
    let pos = |idx: [i64; 2]| [origin[0] + idx[0] as f64 * h, origin[1] + idx[1] as f64 * h];
    let geom = ShapeGeom::new(&spec.shape, h);

    let mut interior = Vec::new();
    for j in lo[1]..=hi[1] {
        for i in lo[0]..=hi[0] {
            let inside = match &spec.shape {
                Shape::Mask(m) => m.get(i, j),
                _ => geom.contains(pos([i, j])),
            };
            if inside {
                interior.push([i, j]);
            }
        }
    }
    if interior.is_empty() {
        return Err(GeometryError::EmptyInterior);
    }
    let lookup = make_lookup(&interior, base, dims);
    let index = |idx: [i64; 2]| -> Option<u32> {
        let k = flat(idx, base, dims)?;
        (lookup[k] >= 0).then(|| lookup[k] as u32)
    };

    let dirs = stencil.directions().to_vec();
    let mut boundary: Vec<BoundaryPoint> = Vec::new();
    let mut lattice_boundary: HashMap<[i64; 2], u32> = HashMap::new();
    let mut links = Vec::with_capacity(interior.len() * dirs.len());
    for &node in &interior {
        let p = pos(node);
        for d in &dirs {
            let q = [node[0] + d[0] as i64, node[1] + d[1] as i64];
            let full = h * ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt();
            let exit = match &spec.shape {
                Shape::Mask(_) => None,
                _ => geom.exit(p, [d[0] as f64 * h, d[1] as f64 * h]),
            };
            let link = match (exit, index(q)) {
                (Some(t), _) if t < 1.0 => {
                    let at = [p[0] + t * d[0] as f64 * h, p[1] + t * d[1] as f64 * h];
                    boundary.push(BoundaryPoint { position: at, lattice: None });
                    Link {
                        target: Target::Boundary(boundary.len() as u32 - 1),
                        length: t * full,
                    }
                }
                (_, Some(k)) => Link { target: Target::Interior(k), length: full },
                (_, None) if flat(q, base, dims).is_none() => {
                    Link { target: Target::Missing, length: full }
                }
                (_, None) => {
                    let b = *lattice_boundary.entry(q).or_insert_with(|| {
                        boundary.push(BoundaryPoint { position: pos(q), lattice: Some(q) });
                        boundary.len() as u32 - 1
                    });
                    Link { target: Target::Boundary(b), length: full }
                }
            };
            links.push(link);
        }
    }

    let mut dom = GridDomain {
        spec: spec.clone(),
        spacing: h,
        origin,
        dims,
        base,
        interior,
        boundary,
        stencil,
        links,
        metrics: Metrics {
            outball_radius: 0.0,
            outball_center: [0.0; 2],
            inball_radius: 0.0,
            inball_center: [0.0; 2],
        },
        lookup,
        distance: OnceLock::new(),
    };
    let components = dom.component_count();
    if components > 1 {
        return Err(GeometryError::DisconnectedInterior { components });
    }
    dom.metrics = dom.compute_metrics();
    Ok(Arc::new(dom))
}

/// Load a mask domain from the plain-text bitmap format: a header line
/// `h=<spacing>`, an optional `origin=<x>,<y>` line, then rows of 0/1 with
/// the top row first.
pub fn load_mask(path: &Path) -> Result<DomainSpec, GeometryError> {
    parse_mask(&std::fs::read_to_string(path)?)
}

pub fn parse_mask(text: &str) -> Result<DomainSpec, GeometryError> {
    let mut spacing = None;
    let mut origin = [0.0, 0.0];
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(v) = line.strip_prefix("h=") {
            let h: f64 = v
                .trim()
                .parse()
                .map_err(|_| GeometryError::MaskFormat(format!("bad spacing '{v}'")))?;
            spacing = Some(h);
        } else if let Some(v) = line.strip_prefix("origin=") {
            let parts: Vec<f64> = v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| GeometryError::MaskFormat(format!("bad origin '{v}'")))?;
            if parts.len() != 2 {
                return Err(GeometryError::MaskFormat("origin needs two values".into()));
            }
            origin = [parts[0], parts[1]];
        } else {
            let row = line
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(GeometryError::MaskFormat(format!("unexpected '{other}'"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
    }
    let spacing = spacing.ok_or_else(|| GeometryError::MaskFormat("missing h= header".into()))?;
    let spec = DomainSpec {
        shape: Shape::Mask(Mask { origin, rows }),
        spacing,
        stencil_width: 3,
    };
    spec.validate()?;
    Ok(spec)
}

/// Render a mask back to the text format read by [`parse_mask`].
pub fn format_mask(mask: &Mask, spacing: f64) -> String {
    let mut out = format!("h={spacing}\norigin={},{}\n", mask.origin[0], mask.origin[1]);
    for row in &mask.rows {
        out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

impl GridDomain {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Number of values a field on this domain carries: interior nodes
    /// first, then boundary points.
    pub fn n_nodes(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    pub fn interior_index(&self, k: usize) -> [i64; 2] {
        self.interior[k]
    }

    pub fn boundary_points(&self) -> &[BoundaryPoint] {
        &self.boundary
    }

    /// Lattice position of a lattice index.
    pub fn lattice_position(&self, idx: [i64; 2]) -> [f64; 2] {
        [
            self.origin[0] + idx[0] as f64 * self.spacing,
            self.origin[1] + idx[1] as f64 * self.spacing,
        ]
    }

    /// Position of node `k` in field order (interior, then boundary).
    pub fn position(&self, k: usize) -> [f64; 2] {
        match k.checked_sub(self.interior.len()) {
            None => self.lattice_position(self.interior[k]),
            Some(b) => self.boundary[b].position,
        }
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.n_nodes()).map(|k| self.position(k)).collect()
    }

    /// Interior node at a lattice index, if any.
    pub fn find_interior(&self, idx: [i64; 2]) -> Option<usize> {
        let k = flat(idx, self.base, self.dims)?;
        (self.lookup[k] >= 0).then(|| self.lookup[k] as usize)
    }

    /// Links of interior node `k`, one per direction of [`Self::stencil`].
    pub fn links(&self, k: usize) -> &[Link] {
        let n = self.stencil.len();
        &self.links[k * n..(k + 1) * n]
    }

    /// Field index of a link target, `None` when missing.
    pub fn field_index(&self, t: Target) -> Option<usize> {
        match t {
            Target::Interior(i) => Some(i as usize),
            Target::Boundary(b) => Some(self.interior.len() + b as usize),
            Target::Missing => None,
        }
    }

    /// Distance from each interior node to the nearest boundary point.
    /// Distance from each interior node to the boundary, cached.
    pub fn boundary_distance(&self) -> &[f64] {
        self.distance.get_or_init(|| self.compute_boundary_distance())
    }

    fn compute_boundary_distance(&self) -> Vec<f64> {
        let exact = match &self.spec.shape {
            Shape::Disk { center, radius } => Some(Box::new(move |p: [f64; 2]| {
                radius - dist(p, *center)
            }) as Box<dyn Fn([f64; 2]) -> f64>),
            Shape::Annulus { center, inner, outer } => Some(Box::new(move |p: [f64; 2]| {
                let r = dist(p, *center);
                (outer - r).min(r - inner)
            }) as Box<dyn Fn([f64; 2]) -> f64>),
            Shape::Rectangle { corner, widths } => Some(Box::new(move |p: [f64; 2]| {
                let dx = (p[0] - corner[0]).min(corner[0] + widths[0] - p[0]);
                let dy = (p[1] - corner[1]).min(corner[1] + widths[1] - p[1]);
                dx.min(dy)
            }) as Box<dyn Fn([f64; 2]) -> f64>),
            Shape::Mask(_) => None,
        };
        (0..self.interior.len())
            .map(|k| {
                let p = self.position(k);
                match &exact {
                    Some(f) => f(p),
                    None => self
                        .boundary
                        .iter()
                        .map(|b| dist(p, b.position))
                        .fold(f64::INFINITY, f64::min),
                }
            })
            .collect()
    }

    /// Restrict to the interior nodes flagged in `keep`, taking the largest
    /// edge-connected component. Links into dropped interior nodes become
    /// boundary points at the lattice position; the parent's boundary
    /// points are kept. The result shares the parent's lattice and spacing.
    ///
    /// Returns the restricted domain and, for each of its nodes in field
    /// order, the index of the same node in the parent field.
    pub fn restrict(&self, keep: &[bool]) -> Result<(Arc<GridDomain>, Vec<usize>), GeometryError> {
        assert_eq!(keep.len(), self.interior.len());
        let comp = largest_component(&self.interior, keep, self.base, self.dims, &self.lookup);
        if comp.is_empty() {
            return Err(GeometryError::EmptyInterior);
        }
        let interior: Vec<[i64; 2]> = comp.iter().map(|&k| self.interior[k]).collect();
        let lookup = make_lookup(&interior, self.base, self.dims);
        let mut parent_of: Vec<usize> = comp.clone();
        let mut boundary = Vec::new();
        let mut bmap: HashMap<usize, u32> = HashMap::new();
        let mut links = Vec::with_capacity(interior.len() * self.stencil.len());
        for &k in &comp {
            for l in self.links(k) {
                let parent_field = self.field_index(l.target);
                let target = match l.target {
                    Target::Missing => Target::Missing,
                    Target::Interior(i) if lookup_get(&lookup, self.interior[i as usize], self.base, self.dims).is_some() => {
                        Target::Interior(
                            lookup_get(&lookup, self.interior[i as usize], self.base, self.dims).unwrap(),
                        )
                    }
                    _ => {
                        let pf = parent_field.unwrap();
                        let b = *bmap.entry(pf).or_insert_with(|| {
                            boundary.push(BoundaryPoint {
                                position: self.position(pf),
                                lattice: match l.target {
                                    Target::Interior(i) => Some(self.interior[i as usize]),
                                    Target::Boundary(b) => self.boundary[b as usize].lattice,
                                    Target::Missing => None,
                                },
                            });
                            boundary.len() as u32 - 1
                        });
                        Target::Boundary(b)
                    }
                };
                links.push(Link { target, length: l.length });
            }
        }
        let mut bparents: Vec<(u32, usize)> = bmap.into_iter().map(|(p, b)| (b, p)).collect();
        bparents.sort_unstable();
        parent_of.extend(bparents.into_iter().map(|(_, p)| p));

        let mask = self.lattice_mask(&interior);
        let mut dom = GridDomain {
            spec: DomainSpec {
                shape: Shape::Mask(mask),
                spacing: self.spacing,
                stencil_width: self.spec.stencil_width,
            },
            spacing: self.spacing,
            origin: self.origin,
            dims: self.dims,
            base: self.base,
            interior,
            boundary,
            stencil: self.stencil.clone(),
            links,
            metrics: self.metrics,
            lookup,
            distance: OnceLock::new(),
        };
        dom.metrics = dom.compute_metrics();
        Ok((Arc::new(dom), parent_of))
    }

    /// Bitmap of the given interior set over this domain's lattice.
    fn lattice_mask(&self, interior: &[[i64; 2]]) -> Mask {
        let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
        for p in interior {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let w = (hi[0] - lo[0] + 1) as usize;
        let ht = (hi[1] - lo[1] + 1) as usize;
        let mut rows = vec![vec![false; w]; ht];
        for p in interior {
            rows[ht - 1 - (p[1] - lo[1]) as usize][(p[0] - lo[0]) as usize] = true;
        }
        Mask { origin: self.lattice_position(lo), rows }
    }

    fn component_count(&self) -> usize {
        let all = vec![true; self.interior.len()];
        let mut seen = vec![false; self.interior.len()];
        let mut count = 0;
        for s in 0..self.interior.len() {
            if !seen[s] {
                count += 1;
                flood(s, &self.interior, &all, self.base, self.dims, &self.lookup, &mut seen);
            }
        }
        count
    }

    fn compute_metrics(&self) -> Metrics {
        let mut pts: Vec<[f64; 2]> = self.positions();
        let (outball_center, outball_radius) = enclosing_circle(&mut pts);
        let inside: Vec<bool> = vec![true; self.interior.len()];
        let (inball_radius, inball_center) = self.inball_of(&inside);
        Metrics { outball_radius, outball_center, inball_radius, inball_center }
    }

    /// In-ball radius and center of a subset of the interior: the distance
    /// to the nearest excluded interior node or to the domain boundary,
    /// whichever is closer.
    pub fn inball_of(&self, member: &[bool]) -> (f64, [f64; 2]) {
        let [nx, ny] = self.dims;
        let mut grid = vec![true; nx * ny];
        for (k, p) in self.interior.iter().enumerate() {
            if !member[k] {
                grid[flat(*p, self.base, self.dims).unwrap()] = false;
            }
        }
        let d2 = squared_edt(&grid, nx, ny);
        let edge = self.boundary_distance();
        let mut best = (0.0_f64, [0.0; 2]);
        for (k, p) in self.interior.iter().enumerate() {
            if member[k] {
                let r = (d2[flat(*p, self.base, self.dims).unwrap()].sqrt() * self.spacing).min(edge[k]);
                if r > best.0 {
                    best = (r, self.lattice_position(*p));
                }
            }
        }
        best
    }
}

/// Weight a(x) > 0 sampled on every node of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    values: Vec<f64>,
    sup: f64,
    inf: f64,
}

impl WeightField {
    pub fn new(values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GeometryError::InvalidSpec("weights must be finite and positive".into()));
        }
        let sup = values.iter().copied().fold(f64::MIN, f64::max);
        let inf = values.iter().copied().fold(f64::MAX, f64::min);
        Ok(Self { values, sup, inf })
    }

    pub fn constant(domain: &GridDomain, value: f64) -> Result<Self, GeometryError> {
        Self::new(vec![value; domain.n_nodes()])
    }

    pub fn from_fn(domain: &GridDomain, f: impl Fn([f64; 2]) -> f64) -> Result<Self, GeometryError> {
        Self::new(domain.positions().into_iter().map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// μ = sup a.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// ν = inf a.
    pub fn inf(&self) -> f64 {
        self.inf
    }

    /// Pick the entries at the given indices (used with [`GridDomain::restrict`]).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.values[i]).collect()).expect("subset of valid weights")
    }
}

/// In-ball radius of the superlevel set {a > αμ}, zero when it is empty.
pub fn superlevel_inball(domain: &GridDomain, a: &WeightField, alpha: f64) -> f64 {
    let level = alpha * a.sup();
    let member: Vec<bool> = (0..domain.n_interior()).map(|k| a.values()[k] > level).collect();
    domain.inball_of(&member).0
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn flat(idx: [i64; 2], base: [i64; 2], dims: [usize; 2]) -> Option<usize> {
    let i = idx[0] - base[0];
    let j = idx[1] - base[1];
    if i < 0 || j < 0 || i as usize >= dims[0] || j as usize >= dims[1] {
        None
    } else {
        Some(j as usize * dims[0] + i as usize)
    }
}

fn make_lookup(interior: &[[i64; 2]], base: [i64; 2], dims: [usize; 2]) -> Vec<i32> {
    let mut lookup = vec![-1; dims[0] * dims[1]];
    for (k, p) in interior.iter().enumerate() {
        lookup[flat(*p, base, dims).expect("interior inside lattice")] = k as i32;
    }
    lookup
}

fn lookup_get(lookup: &[i32], idx: [i64; 2], base: [i64; 2], dims: [usize; 2]) -> Option<u32> {
    let k = flat(idx, base, dims)?;
    (lookup[k] >= 0).then(|| lookup[k] as u32)
}

fn flood(
    start: usize,
    interior: &[[i64; 2]],
    member: &[bool],
    base: [i64; 2],
    dims: [usize; 2],
    lookup: &[i32],
    seen: &mut [bool],
) -> Vec<usize> {
    let mut comp = vec![start];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(k) = queue.pop_front() {
        let p = interior[k];
        for d in [[1, 0], [-1, 0], [0, 1], [0, -1]] {
            if let Some(n) = lookup_get(lookup, [p[0] + d[0], p[1] + d[1]], base, dims) {
                let n = n as usize;
                if member[n] && !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                    queue.push_back(n);
                }
            }
        }
    }
    comp
}

/// Largest edge-connected component of the flagged nodes, sorted.
fn largest_component(
    interior: &[[i64; 2]],
    member: &[bool],
    base: [i64; 2],
    dims: [usize; 2],
    lookup: &[i32],
) -> Vec<usize> {
    let mut seen = vec![false; interior.len()];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..interior.len() {
        if member[s] && !seen[s] {
            let comp = flood(s, interior, member, base, dims, lookup, &mut seen);
            if comp.len() > best.len() {
                best = comp;
            }
        }
    }
    best.sort_unstable();
    best
}

/// Lattice origin and the index range covering the shape.
fn lattice_extent(shape: &Shape, h: f64) -> ([f64; 2], [i64; 2], [i64; 2]) {
    let span = |lo: f64, hi: f64, o: f64| {
        (((lo - o) / h).floor() as i64 - 1, ((hi - o) / h).ceil() as i64 + 1)
    };
    match shape {
        Shape::Disk { center, radius: r } | Shape::Annulus { center, outer: r, .. } => {
            let (a, b) = span(center[0] - r, center[0] + r, center[0]);
            let (c, d) = span(center[1] - r, center[1] + r, center[1]);
            (*center, [a, c], [b, d])
        }
        Shape::Rectangle { corner, widths } => {
            let (a, b) = span(corner[0], corner[0] + widths[0], corner[0]);
            let (c, d) = span(corner[1], corner[1] + widths[1], corner[1]);
            (*corner, [a, c], [b, d])
        }
        Shape::Mask(m) => (
            m.origin,
            [0, 0],
            [m.width() as i64 - 1, m.height() as i64 - 1],
        ),
    }
}

/// Nodes closer than this fraction of h to an analytic boundary are treated
/// as lying on it. This keeps every link at least 0.05h long, which bounds the
/// stiffness of the node equations.
pub const BOUNDARY_MARGIN: f64 = 0.05;

/// Analytic shape queries with a small inward margin.
struct ShapeGeom {
    shape: Shape,
    eps: f64,
}

impl ShapeGeom {
    fn new(shape: &Shape, h: f64) -> Self {
        Self { shape: shape.clone(), eps: BOUNDARY_MARGIN * h }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let e = self.eps;
        match &self.shape {
            Shape::Disk { center, radius } => dist(p, *center) < radius - e,
            Shape::Annulus { center, inner, outer } => {
                let r = dist(p, *center);
                r > inner + e && r < outer - e
            }
            Shape::Rectangle { corner, widths } => {
                p[0] > corner[0] + e
                    && p[0] < corner[0] + widths[0] - e
                    && p[1] > corner[1] + e
                    && p[1] < corner[1] + widths[1] - e
            }
            Shape::Mask(_) => unreachable!("masks have no analytic geometry"),
        }
    }

    /// First parameter t in (0, 1) where p + t·d leaves the shape, if any.
    fn exit(&self, p: [f64; 2], d: [f64; 2]) -> Option<f64> {
        let t = match &self.shape {
            Shape::Disk { center, radius } => circle_exit(p, d, *center, *radius),
            Shape::Annulus { center, inner, outer } => {
                let out = circle_exit(p, d, *center, *outer);
                let hole = if *inner > 0.0 { circle_entry(p, d, *center, *inner) } else { None };
                match (out, hole) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
            Shape::Rectangle { corner, widths } => {
                let mut t = f64::INFINITY;
                for a in 0..2 {
                    if d[a] > 0.0 {
                        t = t.min((corner[a] + widths[a] - p[a]) / d[a]);
                    } else if d[a] < 0.0 {
                        t = t.min((corner[a] - p[a]) / d[a]);
                    }
                }
                Some(t)
            }
            Shape::Mask(_) => None,
        }?;
        (t < 1.0).then_some(t.max(0.0))
    }
}

/// Positive root of |p + t d − c| = r for p inside the circle.
fn circle_exit(p: [f64; 2], d: [f64; 2], c: [f64; 2], r: f64) -> Option<f64> {
    let (qx, qy) = (p[0] - c[0], p[1] - c[1]);
    let a = d[0] * d[0] + d[1] * d[1];
    let b = qx * d[0] + qy * d[1];
    let cc = qx * qx + qy * qy - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Stable form of (−b + s)/a.
    let t = if b <= 0.0 { (-b + s) / a } else { -cc / (b + s) };
    Some(t)
}

/// Smallest positive t where p + t d enters the closed disk |x − c| ≤ r,
/// for p outside it.
fn circle_entry(p: [f64; 2], d: [f64; 2], c: [f64; 2], r: f64) -> Option<f64> {
    let (qx, qy) = (p[0] - c[0], p[1] - c[1]);
    let a = d[0] * d[0] + d[1] * d[1];
    let b = qx * d[0] + qy * d[1];
    let cc = qx * qx + qy * qy - r * r;
    let disc = b * b - a * cc;
    if disc < 0.0 || b >= 0.0 {
        return None;
    }
    let t = cc / (-b + disc.sqrt());
    (t > 0.0).then_some(t)
}

/// Exact squared Euclidean distance transform (Felzenszwalb–Huttenlocher),
/// in lattice units, to the nearest `false` cell. Cells past the grid edge
/// count as `false`.
pub fn squared_edt(grid: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let far = ((nx + ny + 2) * (nx + ny + 2)) as f64;
    let mut d = vec![0.0; nx * ny];
    let mut f = vec![0.0; nx.max(ny) + 2];
    let mut out = vec![0.0; nx.max(ny) + 2];
    // Rows are padded by one false cell on each side.
    for j in 0..ny {
        let n = nx + 2;
        f[0] = 0.0;
        f[n - 1] = 0.0;
        for i in 0..nx {
            f[i + 1] = if grid[j * nx + i] { far } else { 0.0 };
        }
        lower_envelope(&f[..n], &mut out[..n]);
        for i in 0..nx {
            d[j * nx + i] = out[i + 1];
        }
    }
    let mut col = vec![0.0; ny + 2];
    let mut colout = vec![0.0; ny + 2];
    for i in 0..nx {
        let n = ny + 2;
        col[0] = 0.0;
        col[n - 1] = 0.0;
        for j in 0..ny {
            col[j + 1] = d[j * nx + i];
        }
        lower_envelope(&col[..n], &mut colout[..n]);
        for j in 0..ny {
            d[j * nx + i] = colout[j + 1];
        }
    }
    d
}

/// One-dimensional distance transform of sampled function `f`:
/// out[q] = min_p (q − p)² + f[p].
fn lower_envelope(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *o = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Minimal enclosing circle: convex hull first, then Welzl's incremental
/// algorithm on the hull vertices.
pub fn enclosing_circle(points: &mut [[f64; 2]]) -> ([f64; 2], f64) {
    let hull = convex_hull(points);
    let mut c = hull[0];
    let mut r = 0.0;
    let inside = |c: [f64; 2], r: f64, p: [f64; 2]| dist(c, p) <= r * (1.0 + 1e-12) + 1e-15;
    for i in 0..hull.len() {
        if inside(c, r, hull[i]) {
            continue;
        }
        c = hull[i];
        r = 0.0;
        for j in 0..i {
            if inside(c, r, hull[j]) {
                continue;
            }
            c = mid(hull[i], hull[j]);
            r = dist(c, hull[i]);
            for k in 0..j {
                if inside(c, r, hull[k]) {
                    continue;
                }
                match circumcircle(hull[i], hull[j], hull[k]) {
                    Some((cc, rr)) => {
                        c = cc;
                        r = rr;
                    }
                    None => {
                        // Collinear: widest pair spans the circle.
                        let pairs = [(hull[i], hull[j]), (hull[i], hull[k]), (hull[j], hull[k])];
                        let (a, b) = pairs
                            .into_iter()
                            .max_by(|x, y| dist(x.0, x.1).total_cmp(&dist(y.0, y.1)))
                            .unwrap();
                        c = mid(a, b);
                        r = dist(a, b) / 2.0;
                    }
                }
            }
        }
    }
    (c, r)
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<([f64; 2], f64)> {
    let (bx, by) = (b[0] - a[0], b[1] - a[1]);
    let (cx, cy) = (c[0] - a[0], c[1] - a[1]);
    let d = 2.0 * (bx * cy - by * cx);
    if d.abs() < 1e-300 {
        return None;
    }
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let center = [a[0] + ux, a[1] + uy];
    Some((center, (ux * ux + uy * uy).sqrt()))
}

/// Andrew's monotone chain. Returns hull vertices without repetition.
fn convex_hull(points: &mut [[f64; 2]]) -> Vec<[f64; 2]> {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if points.len() < 3 {
        return points.to_vec();
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * points.len());
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in points.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn brute_edt(grid: &[bool], nx: usize, ny: usize) -> Vec<f64> {
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny as i64 {
            for i in 0..nx as i64 {
                if !grid[j as usize * nx + i as usize] {
                    continue;
                }
                let mut best = f64::INFINITY;
                for q in -1..=ny as i64 {
                    for p in -1..=nx as i64 {
                        let free = p < 0 || q < 0 || p >= nx as i64 || q >= ny as i64
                            || !grid[q as usize * nx + p as usize];
                        if free {
                            best = best.min(((p - i).pow(2) + (q - j).pow(2)) as f64);
                        }
                    }
                }
                out[j as usize * nx + i as usize] = best;
            }
        }
        out
    }

    #[test]
    fn edt_matches_brute_force() {
        let (nx, ny) = (13, 9);
        let grid: Vec<bool> = (0..nx * ny).map(|k| (k * 7919 % 11) != 0).collect();
        assert_eq!(squared_edt(&grid, nx, ny), brute_edt(&grid, nx, ny));
    }

    #[test]
    fn disk_node_count_close_to_area() {
        let h = 1.0 / 32.0;
        let d = build_domain(&DomainSpec::disk(1.0, h)).unwrap();
        // Lattice count of |x| < 1 - margin on the h-grid.
        let n = 32i64;
        let r = n as f64 - BOUNDARY_MARGIN;
        let count = (-n..=n)
            .flat_map(|i| (-n..=n).map(move |j| (i, j)))
            .filter(|(i, j)| ((i * i + j * j) as f64) < r * r)
            .count();
        assert_eq!(d.n_interior(), count);
        let area = std::f64::consts::PI / (h * h);
        assert!((count as f64 - area).abs() / area < 0.05);
    }

    #[test]
    fn tiny_rectangle_has_one_node() {
        let h = 0.1;
        let d = build_domain(&DomainSpec::rectangle([0.0, 0.0], [2.0 * h, 2.0 * h], h)).unwrap();
        assert_eq!(d.n_interior(), 1);
        assert_relative_eq!(d.position(0)[0], h);
    }

    #[test]
    fn disk_metrics() {
        let d = build_domain(&DomainSpec::disk(1.0, 1.0 / 32.0)).unwrap();
        let m = d.metrics();
        assert!((m.outball_radius - 1.0).abs() < 1e-9);
        assert!((m.inball_radius - 1.0).abs() <= 1.0 / 32.0);
    }

    #[test]
    fn annulus_inball_is_half_width() {
        let h = 1.0 / 16.0;
        let d = build_domain(&DomainSpec::annulus(1.0, 3.0, h)).unwrap();
        assert!((d.metrics().inball_radius - 1.0).abs() <= h);
        assert!((d.metrics().outball_radius - 3.0).abs() <= h);
    }

    #[test]
    fn boundary_points_lie_on_circle() {
        let d = build_domain(&DomainSpec::disk(1.0, 0.1)).unwrap();
        for b in d.boundary_points() {
            assert!((dist(b.position, [0.0, 0.0]) - 1.0).abs() < 1e-12);
        }
        for k in 0..d.n_interior() {
            for l in d.links(k) {
                assert!(l.length > 0.0 && l.length <= 3.0f64.sqrt() * 0.1 * 1.3);
                assert_ne!(l.target, Target::Missing);
            }
        }
    }

    #[test]
    fn empty_and_disconnected() {
        assert!(matches!(
            build_domain(&DomainSpec::disk(0.01, 1.0)),
            Err(GeometryError::EmptyInterior)
        ));
        let spec = parse_mask("h=0.1\n101\n").unwrap();
        assert!(matches!(
            build_domain(&spec),
            Err(GeometryError::DisconnectedInterior { components: 2 })
        ));
    }

    #[test]
    fn mask_roundtrip_and_boundary() {
        let spec = parse_mask("h=0.5\norigin=1,2\n0110\n1111\n").unwrap();
        let d = build_domain(&spec).unwrap();
        assert_eq!(d.n_interior(), 6);
        // Bottom-left lattice node sits at the origin.
        assert_eq!(d.position(0), [1.0, 2.0]);
        for b in d.boundary_points() {
            assert!(b.lattice.is_some());
        }
        let Shape::Mask(m) = &spec.shape else { unreachable!() };
        assert_eq!(parse_mask(&format_mask(m, 0.5)).unwrap(), spec);
    }

    #[test]
    fn punctured_disk_keeps_center_as_boundary() {
        let d = build_domain(&DomainSpec::annulus(0.0, 1.0, 0.125)).unwrap();
        assert!(d.find_interior([0, 0]).is_none());
        assert!(d.boundary_points().iter().any(|b| dist(b.position, [0.0, 0.0]) < 1e-12));
    }

    #[test]
    fn superlevel_radii() {
        let h = 1.0 / 32.0;
        let d = build_domain(&DomainSpec::disk(1.0, h)).unwrap();
        let a = WeightField::constant(&d, 1.0).unwrap();
        assert!((superlevel_inball(&d, &a, 0.5) - 1.0).abs() <= h);
        assert_eq!(superlevel_inball(&d, &a, 1.0), 0.0);
        let rim = WeightField::from_fn(&d, |p| 1.0 + dist(p, [0.0, 0.0])).unwrap();
        let mut last = f64::INFINITY;
        for alpha in [0.3, 0.6, 0.8, 0.9, 0.95, 0.99] {
            let r = superlevel_inball(&d, &rim, alpha);
            assert!(r <= last);
            last = r;
        }
        assert!(last < 3.0 * h);
    }

    #[test]
    fn restriction_keeps_parent_boundary() {
        let d = build_domain(&DomainSpec::disk(1.0, 0.125)).unwrap();
        let keep = vec![true; d.n_interior()];
        let (sub, parent) = d.restrict(&keep).unwrap();
        assert_eq!(sub.n_interior(), d.n_interior());
        assert_eq!(sub.n_boundary(), d.n_boundary());
        assert_eq!(parent.len(), sub.n_nodes());
        for (k, &p) in parent.iter().enumerate() {
            assert_eq!(sub.position(k), d.position(p));
        }
    }

    #[test]
    fn welzl_on_square() {
        let mut pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]];
        let (c, r) = enclosing_circle(&mut pts);
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r, 0.5f64.sqrt(), epsilon = 1e-12);
    }
}
