//! Binary little-endian PLY in the common splatting vertex layout.
//!
//! Degree-4 files store every property as `double` and round-trip
//! bit-exactly. Degree-3 files use `float` and drop the ℓ = 4 coefficients,
//! which is what third-party splat viewers expect.

use std::path::Path;

use nalgebra::Vector3;

use super::{normalize_quaternion, Gaussian, GaussianScene, SH_COEFFS, SH_LEN};
use crate::error::{contract_err, Error, Result};
use crate::numerics::ByteReader;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    Float,
    Double,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::Float => 4,
            Scalar::Double => 8,
        }
    }
}

fn property_names(degree: usize) -> Vec<String> {
    let rest = (degree + 1) * (degree + 1) - 1;
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Property values of one Gaussian in [`property_names`] order.
fn vertex_values(g: &Gaussian, degree: usize) -> Vec<f64> {
    let k = (degree + 1) * (degree + 1);
    let mut v = vec![g.position.x, g.position.y, g.position.z];
    v.extend((0..3).map(|c| g.sh[c * SH_COEFFS]));
    for c in 0..3 {
        v.extend_from_slice(&g.sh[c * SH_COEFFS + 1..c * SH_COEFFS + k]);
    }
    v.push(g.opacity_logit);
    v.extend(g.log_scale.iter());
    v.extend_from_slice(&g.rotation);
    v
}

pub fn write_ply_bytes(scene: &GaussianScene, compat_degree: usize) -> Result<Vec<u8>> {
    let scalar = match compat_degree {
        4 => Scalar::Double,
        3 => Scalar::Float,
        d => return Err(contract_err!("PLY export supports SH degree 3 or 4, got {d}")),
    };
    let type_name = match scalar {
        Scalar::Float => "float",
        Scalar::Double => "double",
    };
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("comment sh_degree={compat_degree}\n");
    if !scene.scene_id.is_empty() && !scene.scene_id.contains('\n') {
        header += &format!("comment scene_id={}\n", scene.scene_id);
    }
    header += &format!("element vertex {}\n", scene.len());
    for name in property_names(compat_degree) {
        header += &format!("property {type_name} {name}\n");
    }
    header += "end_header\n";
    let mut out = header.into_bytes();
    for g in &scene.gaussians {
        for v in vertex_values(g, compat_degree) {
            match scalar {
                Scalar::Double => out.extend_from_slice(&v.to_le_bytes()),
                Scalar::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn write_ply(scene: &GaussianScene, path: &Path, compat_degree: usize) -> Result<()> {
    let bytes = write_ply_bytes(scene, compat_degree)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<GaussianScene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ply_bytes(&bytes)
}

struct Header {
    vertex_count: usize,
    properties: Vec<(String, Scalar)>,
    scene_id: String,
    body_offset: usize,
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(parse_error(offset, "header is not terminated by end_header"));
        };
        let line = std::str::from_utf8(&bytes[offset..offset + len])
            .map_err(|_| parse_error(offset, "header line is not UTF-8"))?
            .trim_end_matches('\r');
        lines.push((offset, line));
        offset += len + 1;
        if line == "end_header" {
            break;
        }
    }
    let mut it = lines.into_iter();
    match it.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_error(0, "missing ply magic")),
    }
    let mut header = Header {
        vertex_count: 0,
        properties: Vec::new(),
        scene_id: String::new(),
        body_offset: offset,
    };
    let mut seen_vertex = false;
    for (o, line) in it {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", ..] => return Err(parse_error(o, format!("unsupported format line {line:?}"))),
            ["comment", rest @ ..] => {
                let text = rest.join(" ");
                if let Some(id) = text.strip_prefix("scene_id=") {
                    header.scene_id = id.to_string();
                }
            }
            ["element", "vertex", n] if !seen_vertex => {
                header.vertex_count = n
                    .parse()
                    .map_err(|_| parse_error(o, format!("bad vertex count {n:?}")))?;
                seen_vertex = true;
            }
            ["element", ..] => return Err(parse_error(o, format!("unsupported element {line:?}"))),
            ["property", ty, name] if seen_vertex => {
                let scalar = match *ty {
                    "float" | "float32" => Scalar::Float,
                    "double" | "float64" => Scalar::Double,
                    _ => return Err(parse_error(o, format!("unsupported property type {ty:?}"))),
                };
                header.properties.push((name.to_string(), scalar));
            }
            ["end_header"] => {}
            _ => return Err(parse_error(o, format!("malformed header line {line:?}"))),
        }
    }
    if !seen_vertex {
        return Err(parse_error(offset, "no vertex element"));
    }
    Ok(header)
}

pub fn read_ply_bytes(bytes: &[u8]) -> Result<GaussianScene> {
    let header = parse_header(bytes)?;
    let index_of = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let require = |name: &str| {
        index_of(name).ok_or_else(|| parse_error(0, format!("missing property {name:?}")))
    };
    let rest_count = header
        .properties
        .iter()
        .filter(|(n, _)| n.starts_with("f_rest_"))
        .count();
    let per_channel = rest_count / 3 + 1;
    if rest_count % 3 != 0 || per_channel > SH_COEFFS || ![1, 4, 9, 16, 25].contains(&per_channel) {
        return Err(parse_error(0, format!("{rest_count} f_rest properties do not form an SH degree <= 4")));
    }
    let position = [require("x")?, require("y")?, require("z")?];
    let dc = [require("f_dc_0")?, require("f_dc_1")?, require("f_dc_2")?];
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| require(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let opacity = require("opacity")?;
    let scale = [require("scale_0")?, require("scale_1")?, require("scale_2")?];
    let rot = [require("rot_0")?, require("rot_1")?, require("rot_2")?, require("rot_3")?];
    let any_float = header.properties.iter().any(|(_, s)| *s == Scalar::Float);

    let stride: usize = header.properties.iter().map(|(_, s)| s.size()).sum();
    let body_len = bytes.len() - header.body_offset;
    let expected = header
        .vertex_count
        .checked_mul(stride)
        .ok_or_else(|| parse_error(header.body_offset, "vertex count overflows"))?;
    if body_len != expected {
        return Err(parse_error(
            header.body_offset + body_len.min(expected),
            format!(
                "header declares {} vertices ({expected} bytes) but the body has {body_len} bytes",
                header.vertex_count
            ),
        ));
    }
    let mut reader = ByteReader {
        bytes,
        pos: header.body_offset,
    };
    let mut values = vec![0.0; header.properties.len()];
    let mut gaussians = Vec::with_capacity(header.vertex_count);
    for _ in 0..header.vertex_count {
        for (slot, (_, scalar)) in values.iter_mut().zip(&header.properties) {
            *slot = match scalar {
                Scalar::Double => reader.f64()?,
                Scalar::Float => reader.f32()? as f64,
            };
        }
        let mut sh = [0.0; SH_LEN];
        for c in 0..3 {
            sh[c * SH_COEFFS] = values[dc[c]];
            for k in 1..per_channel {
                sh[c * SH_COEFFS + k] = values[rest[c * (per_channel - 1) + k - 1]];
            }
        }
        let mut rotation = rot.map(|i| values[i]);
        if any_float {
            rotation = normalize_quaternion(rotation);
        }
        gaussians.push(Gaussian {
            position: Vector3::new(values[position[0]], values[position[1]], values[position[2]]),
            opacity_logit: values[opacity],
            rotation,
            log_scale: Vector3::new(values[scale[0]], values[scale[1]], values[scale[2]]),
            sh,
        });
    }
    Ok(GaussianScene::new(header.scene_id, gaussians))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sh::sh_degree_of;

    fn sample() -> GaussianScene {
        let mut sh = [0.0; SH_LEN];
        for (i, v) in sh.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin() / 3.0;
        }
        let g = Gaussian {
            position: Vector3::new(0.1, -2.5, 1e-7),
            opacity_logit: 1.3,
            rotation: normalize_quaternion([0.9, 0.1, -0.3, 0.2]),
            log_scale: Vector3::new(-3.0, -2.0, -2.5),
            sh,
        };
        GaussianScene::new("demo", vec![g])
    }

    #[test]
    fn empty_scene() {
        let bytes = write_ply_bytes(&GaussianScene::new("e", vec![]), 4).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0"));
        assert!(text.contains("comment sh_degree=4"));
        assert!(read_ply_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn degree_four_round_trip_is_bit_exact() {
        let scene = sample();
        let back = read_ply_bytes(&write_ply_bytes(&scene, 4).unwrap()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn degree_three_truncates_band_four() {
        let scene = sample();
        let back = read_ply_bytes(&write_ply_bytes(&scene, 3).unwrap()).unwrap();
        let (a, b) = (&scene.gaussians[0], &back.gaussians[0]);
        for c in 0..3 {
            for k in 0..SH_COEFFS {
                let (x, y) = (a.sh[c * SH_COEFFS + k], b.sh[c * SH_COEFFS + k]);
                if sh_degree_of(k) == 4 {
                    assert_eq!(y, 0.0);
                } else {
                    assert_eq!(y, x as f32 as f64);
                }
            }
        }
        assert!(b.validate(0).is_ok());
    }

    #[test]
    fn unsupported_degree() {
        assert!(write_ply_bytes(&sample(), 2).is_err());
    }

    #[test]
    fn truncated_body_reports_offset() {
        let bytes = write_ply_bytes(&sample(), 4).unwrap();
        let header_len = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        match read_ply_bytes(&bytes[..bytes.len() - 8]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 8),
            other => panic!("{other:?}"),
        }
        assert!(header_len < bytes.len());
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(read_ply_bytes(b"plx\nend_header\n"), Err(Error::Parse { offset: 0, .. })));
        let bad = b"ply\nformat binary_little_endian 1.0\nelement vertex x\nend_header\n";
        match read_ply_bytes(bad) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 36),
            other => panic!("{other:?}"),
        }
        assert!(read_ply_bytes(b"ply\nno end").is_err());
    }
}
