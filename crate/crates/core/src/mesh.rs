//! Conforming triangulations of rectangles.
//!
//! A [`Mesh`] owns the vertex coordinates and counter-clockwise triangles plus
//! all derived connectivity: facets with a fixed owner ("left") element and
//! the owner's outward unit normal, node patches, element patches and the
//! local mesh sizes used by the penalty and stabilization terms.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Endpoints, ordered counter-clockwise with respect to `left`.
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: Option<usize>,
    pub length: f64,
    /// Unit normal pointing out of `left`.
    pub normal: [f64; 2],
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }

    pub fn midpoint(&self, mesh: &Mesh) -> Point {
        let a = mesh.vertices[self.vertices[0]];
        let b = mesh.vertices[self.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    facets: Vec<Facet>,
    /// Local edge k of a triangle joins its vertices k and (k+1)%3.
    element_facets: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    node_patches: Vec<Vec<usize>>,
    element_patches: Vec<Vec<usize>>,
    areas: Vec<f64>,
    h_elem: Vec<f64>,
    h_node: Vec<f64>,
    h: f64,
    h_min: f64,
}

fn dist(a: Point, b: Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Build a mesh from raw vertices and triangles, deriving all connectivity.
    ///
    /// Clockwise triangles are reoriented. Non-manifold edges, degenerate
    /// triangles and out-of-range indices are rejected.
    pub fn from_parts(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        if triangles.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {t} repeats a vertex")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !area.is_finite() || area == 0.0 {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut facets: Vec<Facet> = Vec::with_capacity(3 * triangles.len() / 2 + nv);
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut element_facets = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                match lookup.get(&key) {
                    Some(&f) => {
                        let facet = &mut facets[f];
                        if facet.right.is_some() {
                            return Err(Error::invalid(format!(
                                "edge ({a}, {b}) is shared by more than two triangles"
                            )));
                        }
                        if facet.vertices != [b, a] {
                            return Err(Error::invalid(format!(
                                "triangles {} and {t} are inconsistently oriented",
                                facet.left
                            )));
                        }
                        facet.right = Some(t);
                        element_facets[t][k] = f;
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let length = dist(pa, pb);
                        let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
                        lookup.insert(key, facets.len());
                        element_facets[t][k] = facets.len();
                        facets.push(Facet {
                            vertices: [a, b],
                            left: t,
                            right: None,
                            length,
                            normal,
                        });
                    }
                }
            }
        }

        let mut boundary = vec![false; nv];
        for f in facets.iter().filter(|f| f.is_boundary()) {
            boundary[f.vertices[0]] = true;
            boundary[f.vertices[1]] = true;
        }

        let mut node_patches = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                node_patches[v].push(t);
            }
        }
        if let Some(v) = node_patches.iter().position(|p| p.is_empty()) {
            return Err(Error::invalid(format!("vertex {v} belongs to no triangle")));
        }

        let element_patches = triangles
            .iter()
            .map(|tri| {
                let mut patch: Vec<usize> = tri.iter().flat_map(|&v| node_patches[v].iter().copied()).collect();
                patch.sort_unstable();
                patch.dedup();
                patch
            })
            .collect();

        let areas: Vec<f64> = triangles
            .iter()
            .map(|tri| signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]))
            .collect();
        let h_elem: Vec<f64> = triangles
            .iter()
            .map(|tri| {
                (0..3)
                    .map(|k| dist(vertices[tri[k]], vertices[tri[(k + 1) % 3]]))
                    .fold(0.0, f64::max)
            })
            .collect();
        let h_node = node_patches
            .iter()
            .map(|p| p.iter().map(|&t| h_elem[t]).fold(0.0, f64::max))
            .collect();
        let h = h_elem.iter().copied().fold(0.0, f64::max);
        let h_min = h_elem.iter().copied().fold(f64::INFINITY, f64::min);

        Ok(Mesh {
            vertices,
            triangles,
            facets,
            element_facets,
            boundary,
            node_patches,
            element_patches,
            areas,
            h_elem,
            h_node,
            h,
            h_min,
        })
    }

    /// `nx` x `ny` rectangles, each cut by its lower-left to upper-right diagonal.
    ///
    /// Vertices are numbered lexicographically by `(y, x)`.
    pub fn structured(nx: usize, ny: usize, rect: [f64; 4]) -> Result<Mesh> {
        let [x0, y0, x1, y1] = rect;
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!("subdivision counts must be positive, got {nx}x{ny}")));
        }
        if !(x1 > x0 && y1 > y0) || !rect.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!("degenerate rectangle {rect:?}")));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            let y = if j == ny { y1 } else { y0 + (y1 - y0) * (j as f64 / ny as f64) };
            for i in 0..=nx {
                let x = if i == nx { x1 } else { x0 + (x1 - x0) * (i as f64 / nx as f64) };
                vertices.push([x, y]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v00 = j * (nx + 1) + i;
                let v10 = v00 + 1;
                let v01 = v00 + nx + 1;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Mesh::from_parts(vertices, triangles)
    }

    /// Red refinement: every triangle is split into four through its edge
    /// midpoints. Coarse vertices keep their indices; midpoint vertices follow
    /// in facet order.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let mut vertices = self.vertices.clone();
        vertices.reserve(self.facets.len());
        let first_mid = vertices.len();
        vertices.extend(self.facets.iter().map(|f| f.midpoint(self)));
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let ef = self.element_facets[t];
            let m0 = first_mid + ef[0];
            let m1 = first_mid + ef[1];
            let m2 = first_mid + ef[2];
            triangles.push([tri[0], m0, m2]);
            triangles.push([m0, tri[1], m1]);
            triangles.push([m2, m1, tri[2]]);
            triangles.push([m0, m1, m2]);
        }
        Mesh::from_parts(vertices, triangles)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn element_facets(&self, t: usize) -> [usize; 3] {
        self.element_facets[t]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Elements containing vertex `v` (the node patch), in increasing order.
    pub fn node_patch(&self, v: usize) -> Result<&[usize]> {
        self.node_patches
            .get(v)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("vertex index {v} out of range ({})", self.n_vertices())))
    }

    pub fn node_patches(&self) -> &[Vec<usize>] {
        &self.node_patches
    }

    /// Elements sharing at least one vertex with `t`, `t` included.
    pub fn element_patch(&self, t: usize) -> &[usize] {
        &self.element_patches[t]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Diameter of element `t`.
    pub fn h_elem(&self, t: usize) -> f64 {
        self.h_elem[t]
    }

    /// Largest diameter over the node patch of `v`.
    pub fn h_node(&self, v: usize) -> f64 {
        self.h_node[v]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Map barycentric coordinates on element `t` to a physical point.
    pub fn map_point(&self, t: usize, lambda: [f64; 3]) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [
            lambda[0] * a[0] + lambda[1] * b[0] + lambda[2] * c[0],
            lambda[0] * a[1] + lambda[1] * b[1] + lambda[2] * c[1],
        ]
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let two_area = 2.0 * self.areas[t];
        let l0 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / two_area;
        let l1 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / two_area;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Constant gradients of the three barycentric coordinates on element `t`.
    pub fn barycentric_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let s = 1.0 / (2.0 * self.areas[t]);
        [
            [(b[1] - c[1]) * s, (c[0] - b[0]) * s],
            [(c[1] - a[1]) * s, (a[0] - c[0]) * s],
            [(a[1] - b[1]) * s, (b[0] - a[0]) * s],
        ]
    }

    /// Local position of vertex `v` inside element `t`.
    pub fn local_index(&self, t: usize, v: usize) -> Option<usize> {
        self.triangles[t].iter().position(|&w| w == v)
    }

    /// Write the plain-text mesh format: a `V E T` header, `V` lines of
    /// `x y boundary_flag`, then `T` lines of zero-based vertex triples.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.n_vertices(), self.n_facets(), self.n_elements())?;
        for (p, &b) in self.vertices.iter().zip(&self.boundary) {
            writeln!(w, "{:.16e} {:.16e} {}", p[0], p[1], u8::from(b))?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Mesh> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            Ok(s) => Some(Ok((i + 1, s))),
            Err(e) => Some(Err(Error::Parse { line: i + 1, msg: e.to_string() })),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            lines.next().unwrap_or_else(|| Err(Error::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") }))
        };
        fn fields<T: std::str::FromStr>(line: usize, s: &str, n: usize) -> Result<Vec<T>> {
            let out: Vec<T> = s
                .split_whitespace()
                .map(|tok| tok.parse::<T>().map_err(|_| Error::Parse { line, msg: format!("bad token `{tok}`") }))
                .collect::<Result<_>>()?;
            if out.len() != n {
                return Err(Error::Parse { line, msg: format!("expected {n} fields, found {}", out.len()) });
            }
            Ok(out)
        }

        let (line, header) = next("header")?;
        let counts: Vec<usize> = fields(line, &header, 3)?;
        let (nv, ne, nt) = (counts[0], counts[1], counts[2]);
        let mut vertices = Vec::with_capacity(nv);
        let mut flags = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, s) = next("vertex line")?;
            let tok: Vec<&str> = s.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(Error::Parse { line, msg: "vertex line needs `x y flag`".into() });
            }
            let x: f64 = fields(line, tok[0], 1)?[0];
            let y: f64 = fields(line, tok[1], 1)?[0];
            let flag: u8 = fields(line, tok[2], 1)?[0];
            vertices.push([x, y]);
            flags.push(flag != 0);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, s) = next("triangle line")?;
            let t: Vec<usize> = fields(line, &s, 3)?;
            triangles.push([t[0], t[1], t[2]]);
        }
        let mesh = Mesh::from_parts(vertices, triangles)?;
        if mesh.n_facets() != ne {
            return Err(Error::Parse { line: 1, msg: format!("header declares {ne} facets, mesh has {}", mesh.n_facets()) });
        }
        if mesh.boundary != flags {
            return Err(Error::Parse { line: 1, msg: "boundary flags disagree with mesh topology".into() });
        }
        Ok(mesh)
    }
}
