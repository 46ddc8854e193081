//! ASCII PLY export of affordance maps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Colors by label index (wrapping). Index 0 is used for the first label of
/// the query, so single-label maps are uniformly this color.
pub const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [255, 187, 120],
    [152, 223, 138],
];

pub fn label_color(index: usize) -> [u8; 3] {
    PALETTE[index % PALETTE.len()]
}

/// Points colored by their assigned label. Label names go into a comment.
pub fn format_ply(points: &[Point3], assignment: &[usize], labels: &[String]) -> Result<String> {
    if points.len() != assignment.len() {
        return Err(Error::Shape(format!(
            "{} points but {} assignments",
            points.len(),
            assignment.len()
        )));
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    for (i, l) in labels.iter().enumerate() {
        let [r, g, b] = label_color(i);
        writeln!(out, "comment label {i} {l} rgb {r} {g} {b}").unwrap();
    }
    writeln!(out, "element vertex {}", points.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}").unwrap();
    }
    for channel in ["red", "green", "blue"] {
        writeln!(out, "property uchar {channel}").unwrap();
    }
    out.push_str("end_header\n");
    for (p, &a) in points.iter().zip(assignment) {
        let [r, g, b] = label_color(a);
        writeln!(out, "{} {} {} {r} {g} {b}", p[0] as f32, p[1] as f32, p[2] as f32).unwrap();
    }
    Ok(out)
}

pub fn write_ply(path: impl AsRef<Path>, points: &[Point3], assignment: &[usize], labels: &[String]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_ply(points, assignment, labels)?).map_err(|e| Error::io(path, e))
}

/// Vertices of an ASCII PLY file with `x y z` float and `red green blue`
/// uchar properties.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyVertices {
    pub points: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
}

/// Strict reader for the subset of PLY written by [`format_ply`].
pub fn parse_ply(text: &str) -> Result<PlyVertices> {
    let err = |line: usize, msg: &str| Error::Format(format!("PLY line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(err(1, "missing `ply` magic"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    let mut format_seen = false;
    loop {
        let Some((no, line)) = lines.next() else {
            return Err(err(0, "missing end_header"));
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", "1.0"] => format_seen = true,
            ["format", ..] => return Err(err(no, "only ascii 1.0 is supported")),
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| err(no, "bad vertex count"))?);
            }
            ["element", ..] => return Err(err(no, "unexpected element")),
            ["property", ty, name] => properties.push((ty.to_string(), name.to_string())),
            ["end_header"] => break,
            _ => return Err(err(no, "unrecognized header line")),
        }
    }
    let expected = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    let matches = properties.len() == expected.len()
        && properties
            .iter()
            .zip(expected)
            .all(|((t, n), (et, en))| t == et && n == en);
    if !format_seen || !matches {
        return Err(err(
            0,
            "header must declare ascii 1.0 with x y z float and red green blue uchar",
        ));
    }
    let Some(count) = count else {
        return Err(err(0, "missing vertex element"));
    };
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() != 6 {
            return Err(err(no, "expected 6 values"));
        }
        let mut p = [0f32; 3];
        for (k, w) in words[..3].iter().enumerate() {
            p[k] = w.parse().map_err(|_| err(no, "bad coordinate"))?;
        }
        let mut c = [0u8; 3];
        for (k, w) in words[3..].iter().enumerate() {
            c[k] = w.parse().map_err(|_| err(no, "bad color"))?;
        }
        points.push(p);
        colors.push(c);
    }
    if points.len() != count {
        return Err(err(
            0,
            &format!("header declares {count} vertices, found {}", points.len()),
        ));
    }
    Ok(PlyVertices { points, colors })
}
