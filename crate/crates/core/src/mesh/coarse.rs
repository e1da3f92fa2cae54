//! Coarse triangulation: loading, validation and orientation normalization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::MeshError;
use crate::reference::{signed_area, Vec2};

/// Boundary condition tag of a coarse boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryMarker {
    pub v: [usize; 2],
    pub kind: BoundaryKind,
}

/// A coarse edge with the subdomains and local sides touching it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEdge {
    pub v: [usize; 2],
    /// `(triangle, side)` pairs; side `m` is opposite local vertex `m`.
    pub sides: Vec<(usize, usize)>,
    pub marker: Option<BoundaryKind>,
}

/// Unstructured coarse triangulation whose triangles are the subdomains.
///
/// Triangles are stored counterclockwise.
#[derive(Debug, Clone)]
pub struct CoarseMesh {
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub markers: Vec<BoundaryMarker>,
    pub edges: Vec<CoarseEdge>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl CoarseMesh {
    /// Validate raw data and build the coarse edge table.
    pub fn new(
        vertices: Vec<Vec2>,
        mut triangles: Vec<[usize; 3]>,
        markers: Vec<BoundaryMarker>,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut diam2: f64 = 0.0;
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange {
                        index: v,
                        context: format!("triangle {t}"),
                    });
                }
            }
            let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let d2 = (p[1] - p[0])
                .norm_squared()
                .max((p[2] - p[1]).norm_squared())
                .max((p[0] - p[2]).norm_squared());
            diam2 = diam2.max(d2);
            let area = signed_area(p);
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] || !(area.abs() > 1e-14 * d2) {
                return Err(MeshError::DegenerateTriangle {
                    index: t,
                    vertices: *tri,
                });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }
        for m in &markers {
            for &v in &m.v {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange {
                        index: v,
                        context: "boundary marker".into(),
                    });
                }
            }
        }

        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<CoarseEdge> = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            for side in 0..3 {
                let a = tri[(side + 1) % 3];
                let b = tri[(side + 2) % 3];
                let id = *index.entry(key(a, b)).or_insert_with(|| {
                    edges.push(CoarseEdge {
                        v: [a.min(b), a.max(b)],
                        sides: Vec::new(),
                        marker: None,
                    });
                    edges.len() - 1
                });
                edges[id].sides.push((t, side));
                if edges[id].sides.len() > 2 {
                    return Err(MeshError::NonconformingEdge(a.min(b), a.max(b)));
                }
            }
        }
        for m in &markers {
            let k = key(m.v[0], m.v[1]);
            match index.get(&k) {
                Some(&id) if edges[id].sides.len() == 1 && edges[id].marker.is_none() => {
                    edges[id].marker = Some(m.kind);
                }
                _ => return Err(MeshError::MisplacedMarker(k.0, k.1)),
            }
        }
        for e in &edges {
            if e.sides.len() == 1 && e.marker.is_none() {
                return Err(MeshError::UnmarkedBoundaryEdge(e.v[0], e.v[1]));
            }
        }
        Ok(CoarseMesh {
            vertices,
            triangles,
            markers,
            edges,
        })
    }

    pub fn num_subdomains(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle(&self, k: usize) -> [Vec2; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn diameter(&self) -> f64 {
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.num_subdomains())
            .map(|k| signed_area(self.triangle(k)))
            .sum()
    }

    /// Parse the line-oriented text format.
    ///
    /// ```text
    /// vertices <n>
    /// x y            (n lines)
    /// triangles <s>
    /// v1 v2 v3       (s lines, 0-based)
    /// boundary <b>
    /// v1 v2 D|N      (b lines)
    /// ```
    /// Blank lines and `#` comments are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, MeshError> {
        let mut lines = Vec::new();
        for (no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MeshError::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?;
            let body = line.split('#').next().unwrap_or("").trim().to_string();
            if !body.is_empty() {
                lines.push((no + 1, body));
            }
        }
        let mut it = lines.into_iter();

        let n = section(&mut it, "vertices")?;
        let mut vertices = Vec::with_capacity(n);
        for _ in 0..n {
            let (no, toks) = record(&mut it, "vertex")?;
            let [x, y] = numbers::<f64, 2>(no, &toks)?;
            vertices.push(Vec2::new(x, y));
        }
        let s = section(&mut it, "triangles")?;
        let mut triangles = Vec::with_capacity(s);
        for _ in 0..s {
            let (no, toks) = record(&mut it, "triangle")?;
            triangles.push(numbers::<usize, 3>(no, &toks)?);
        }
        let b = section(&mut it, "boundary")?;
        let mut markers = Vec::with_capacity(b);
        for _ in 0..b {
            let (no, toks) = record(&mut it, "boundary edge")?;
            if toks.len() != 3 {
                return Err(MeshError::Parse {
                    line: no,
                    msg: "expected `v1 v2 D|N`".into(),
                });
            }
            let v = numbers::<usize, 2>(no, &toks[..2])?;
            let kind = match toks[2].as_str() {
                "D" => BoundaryKind::Dirichlet,
                "N" => BoundaryKind::Neumann,
                other => {
                    return Err(MeshError::Parse {
                        line: no,
                        msg: format!("unknown boundary tag `{other}`"),
                    })
                }
            };
            markers.push(BoundaryMarker { v, kind });
        }
        if let Some((no, _)) = it.next() {
            return Err(MeshError::Parse {
                line: no,
                msg: "trailing content after boundary section".into(),
            });
        }
        Self::new(vertices, triangles, markers)
    }

    /// Serialize back to the text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {}", v.x, v.y).unwrap();
        }
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "boundary {}", self.markers.len()).unwrap();
        for m in &self.markers {
            let tag = match m.kind {
                BoundaryKind::Dirichlet => "D",
                BoundaryKind::Neumann => "N",
            };
            writeln!(s, "{} {} {}", m.v[0], m.v[1], tag).unwrap();
        }
        s
    }
}

type Lines = std::vec::IntoIter<(usize, String)>;

fn section(it: &mut Lines, name: &str) -> Result<usize, MeshError> {
    let (no, l) = it.next().ok_or(MeshError::Parse {
        line: 0,
        msg: format!("missing `{name}` section"),
    })?;
    let mut toks = l.split_whitespace();
    let bad = || MeshError::Parse {
        line: no,
        msg: format!("expected `{name} <count>`"),
    };
    if toks.next() != Some(name) {
        return Err(bad());
    }
    let count = toks.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
    if toks.next().is_some() {
        return Err(bad());
    }
    Ok(count)
}

fn record(it: &mut Lines, what: &str) -> Result<(usize, Vec<String>), MeshError> {
    let (no, l) = it.next().ok_or(MeshError::Parse {
        line: 0,
        msg: format!("unexpected end of file while reading {what}"),
    })?;
    Ok((no, l.split_whitespace().map(str::to_string).collect()))
}

fn numbers<T: std::str::FromStr + Copy + Default, const N: usize>(
    line: usize,
    toks: &[String],
) -> Result<[T; N], MeshError> {
    if toks.len() != N {
        return Err(MeshError::Parse {
            line,
            msg: format!("expected {N} fields, found {}", toks.len()),
        });
    }
    let mut out = [T::default(); N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = t.parse().map_err(|_| MeshError::Parse {
            line,
            msg: format!("cannot parse `{t}`"),
        })?;
    }
    Ok(out)
}
