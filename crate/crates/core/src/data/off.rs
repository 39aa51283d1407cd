use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Triangle mesh with cached triangle areas.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Data(format!(
                    "triangle {t} references vertex {bad}, mesh has {}",
                    vertices.len()
                )));
            }
        }
        let areas = triangles.iter().map(|t| triangle_area(&vertices, t)).collect();
        Ok(Self {
            vertices,
            triangles,
            areas,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Canonical OFF text: `OFF`, counts, one vertex per line in shortest
    /// round-trip notation, triangles as `3 a b c`.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        writeln!(s, "OFF").unwrap();
        writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn triangle_area(vertices: &[[f64; 3]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
    let n = cross(sub(b, a), sub(c, a));
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let body = line.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            if !tokens.is_empty() {
                return Ok((i + 1, tokens));
            }
        }
        Err(Error::Parse {
            line: self.last + 1,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} '{tok}'"),
    })
}

/// Parses ASCII OFF. The `OFF` header is optional and may be glued to the
/// counts (`OFF492 1024 0`); faces with more than three vertices are
/// fan-triangulated; `#` starts a comment.
pub fn parse_off(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        msg: "file is not valid UTF-8 text".into(),
    })?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (mut line, mut tokens) = lines.next_tokens("OFF header")?;
    if let Some(rest) = tokens[0].strip_prefix("OFF") {
        if rest.is_empty() {
            tokens.remove(0);
        } else {
            tokens[0] = rest;
        }
        if tokens.is_empty() {
            (line, tokens) = lines.next_tokens("vertex/face counts")?;
        }
    }
    if tokens.len() < 2 {
        return Err(Error::Parse {
            line,
            msg: format!("expected 'vertices faces [edges]' counts, got {tokens:?}"),
        });
    }
    let nv: usize = parse_num(tokens[0], line, "vertex count")?;
    let nf: usize = parse_num(tokens[1], line, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, tokens) = lines.next_tokens("vertex")?;
        if tokens.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: format!("vertex needs 3 coordinates, got {}", tokens.len()),
            });
        }
        let mut v = [0.0f64; 3];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_num(tokens[k], line, "coordinate")?;
        }
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite coordinate".into(),
            });
        }
        vertices.push(v);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, tokens) = lines.next_tokens("face")?;
        let k: usize = parse_num(tokens[0], line, "face size")?;
        if k < 3 || tokens.len() < k + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("face declares {k} vertices, needs >= 3 and that many indices"),
            });
        }
        let mut idx = Vec::with_capacity(k);
        for tok in &tokens[1..=k] {
            let i: usize = parse_num(tok, line, "vertex index")?;
            if i >= nv {
                return Err(Error::Parse {
                    line,
                    msg: format!("vertex index {i} out of range ({nv} vertices)"),
                });
            }
            idx.push(i);
        }
        for j in 1..k - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}
