//! Binary little-endian PLY in the common splatting layout.
//!
//! Opacity is stored as a logit and scales as natural logs. `f_rest_*` is
//! channel-major: property `f_rest_{c·(K−1) + k−1}` holds coefficient `k ≥ 1`
//! of channel `c`, where `K = (L+1)²`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{sh_coeff_count, GaussianPrimitive, SplatCloud, MAX_SH_DEGREE};
use crate::error::{Error, Result};
use crate::math::{logit, sigmoid, Vec3};

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unknown property type '{other}'"))),
        })
    }

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

fn property_names(degree: usize) -> Vec<String> {
    let rest = 3 * (sh_coeff_count(degree) - 1);
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn write_ply<W: Write>(cloud: &SplatCloud, w: &mut W) -> Result<()> {
    let io = |e| Error::io("<ply stream>", e);
    let degree = cloud.sh_degree();
    let names = property_names(degree);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let k = sh_coeff_count(degree);
    let mut row = Vec::with_capacity(names.len());
    for p in cloud.primitives() {
        row.clear();
        row.extend(p.mean.iter().copied());
        row.extend((0..3).map(|c| p.sh[c]));
        for c in 0..3 {
            row.extend((1..k).map(|j| p.sh[3 * j + c]));
        }
        row.push(logit(p.opacity));
        row.extend(p.scale.iter().map(|s| s.ln()));
        row.extend(p.quat_wxyz());
        for &v in &row {
            w.write_f32::<LittleEndian>(v as f32).map_err(io)?;
        }
    }
    Ok(())
}

pub fn save_ply(cloud: &SplatCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply(cloud, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<SplatCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| crate::io::not_found_or_io(path, e))?;
    read_ply(&mut BufReader::new(file))
}

struct Header {
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<String> {
        line.clear();
        let n = r
            .read_line(line)
            .map_err(|e| Error::Format(format!("reading header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next(&mut line)? != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next(&mut line)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!("unsupported format '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, n] => {
                if count.is_some() {
                    return Err(Error::Format(format!("unexpected element '{name}' after vertex")));
                }
                in_vertex = *name == "vertex";
                if !in_vertex {
                    return Err(Error::Format(format!("element '{name}' before vertex")));
                }
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad vertex count '{n}'")))?,
                );
            }
            ["property", "list", ..] => {
                return Err(Error::Format("list properties are not supported".into()));
            }
            ["property", ty, name] if in_vertex => props.push((name.to_string(), Scalar::parse(ty)?)),
            [] => {}
            _ => return Err(Error::Format(format!("unexpected header line '{l}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::Format("missing 'element vertex'".into()))?;
    Ok(Header { count, props })
}

pub fn read_ply<R: BufRead>(r: &mut R) -> Result<SplatCloud> {
    let header = read_header(r)?;
    let position: HashMap<&str, usize> = header
        .props
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.as_str(), i))
        .collect();
    let n_rest = header.props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    let degree = (0..=MAX_SH_DEGREE)
        .find(|&l| 3 * (sh_coeff_count(l) - 1) == n_rest)
        .ok_or_else(|| Error::Format(format!("{n_rest} f_rest properties match no SH degree ≤ 3")))?;
    let slots: Vec<usize> = property_names(degree)
        .iter()
        .map(|name| {
            position
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::Format(format!("missing property '{name}'")))
        })
        .collect::<Result<_>>()?;

    let k = sh_coeff_count(degree);
    let mut values = vec![0.0; header.props.len()];
    let mut prims = Vec::with_capacity(header.count);
    for index in 0..header.count {
        for (v, (_, ty)) in values.iter_mut().zip(&header.props) {
            *v = ty
                .read(r)
                .map_err(|e| Error::Format(format!("vertex {index}: {e}")))?;
        }
        let get = |slot: usize| values[slots[slot]];
        if let Some(bad) = slots.iter().position(|&s| !values[s].is_finite()) {
            return Err(Error::NonFiniteData {
                index,
                field: property_names(degree)[bad].clone(),
            });
        }
        let mut sh = vec![0.0; 3 * k];
        for c in 0..3 {
            sh[c] = get(3 + c);
            for j in 1..k {
                sh[3 * j + c] = get(6 + c * (k - 1) + j - 1);
            }
        }
        let base = 6 + 3 * (k - 1);
        let quat = GaussianPrimitive::quat_from_wxyz([get(base + 4), get(base + 5), get(base + 6), get(base + 7)])
            .map_err(|_| Error::InvalidPrimitive { index, reason: "zero quaternion".into() })?;
        prims.push(GaussianPrimitive {
            mean: Vec3::new(get(0), get(1), get(2)),
            rotation: quat,
            scale: Vec3::new(get(base + 1).exp(), get(base + 2).exp(), get(base + 3).exp()),
            opacity: sigmoid(get(base)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
            sh,
        });
    }
    SplatCloud::new(prims, degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, degree: usize, seed: u64) -> SplatCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3 * sh_coeff_count(degree);
        let prims = (0..n)
            .map(|_| GaussianPrimitive {
                mean: Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                rotation: crate::math::random_unit_quaternion(&mut rng),
                scale: Vec3::new(rng.gen_range(0.001..0.5), rng.gen_range(0.001..0.5), rng.gen_range(0.001..0.5)),
                opacity: rng.gen_range(0.01..0.99),
                sh: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        SplatCloud::new(prims, degree).unwrap()
    }

    fn round_trip(c: &SplatCloud) -> SplatCloud {
        let mut buf = Vec::new();
        write_ply(c, &mut buf).unwrap();
        read_ply(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_cloud_round_trips() {
        let c = SplatCloud::empty(3).unwrap();
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("element vertex 0"));
        let back = read_ply(&mut buf.as_slice()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.sh_degree(), 3);
    }

    #[test]
    fn opacity_half_is_logit_zero() {
        let p = GaussianPrimitive::with_color(Vec3::zeros(), Vec3::repeat(1.0), 0.5, [0.5; 3], 0);
        let mut buf = Vec::new();
        write_ply(&SplatCloud::new(vec![p], 0).unwrap(), &mut buf).unwrap();
        let body = &buf[buf.len() - 14 * 4..];
        let opacity = f32::from_le_bytes(body[6 * 4..7 * 4].try_into().unwrap());
        assert_eq!(opacity, 0.0);
        let log_scale = f32::from_le_bytes(body[7 * 4..8 * 4].try_into().unwrap());
        assert_eq!(log_scale, 0.0);
    }

    #[test]
    fn random_cloud_round_trip_within_tolerance() {
        for degree in 0..=3 {
            let c = random_cloud(1000, degree, degree as u64);
            let back = round_trip(&c);
            assert_eq!(back.len(), c.len());
            let mut worst: f64 = 0.0;
            for (a, b) in c.primitives().iter().zip(back.primitives()) {
                worst = worst.max((a.mean - b.mean).amax());
                worst = worst.max((a.scale - b.scale).amax());
                worst = worst.max((a.opacity - b.opacity).abs());
                let (qa, qb) = (a.quat_wxyz(), b.quat_wxyz());
                worst = worst.max(qa.iter().zip(&qb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
                worst = worst.max(a.sh.iter().zip(&b.sh).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
            }
            assert!(worst < 1e-6, "degree {degree}: {worst}");
        }
    }

    #[test]
    fn missing_property_is_named() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nend_header\n";
        match read_ply(&mut text.as_bytes()) {
            Err(Error::Format(m)) => assert!(m.contains("'z'"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_value_names_primitive() {
        let c = random_cloud(3, 0, 1);
        let mut buf = Vec::new();
        write_ply(&c, &mut buf).unwrap();
        let len = buf.len();
        // x of the last vertex
        buf[len - 14 * 4..len - 13 * 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_ply(&mut buf.as_slice()),
            Err(Error::NonFiniteData { index: 2, .. })
        ));
    }

    #[test]
    fn tolerates_extra_and_double_properties() {
        let mut text = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for n in ["x", "y", "z", "nx"] {
            text.push_str(&format!("property double {n}\n"));
        }
        for n in ["f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
            text.push_str(&format!("property float {n}\n"));
        }
        text.push_str("end_header\n");
        let mut buf = text.into_bytes();
        for v in [1.5f64, -2.0, 3.25, 9.0] {
            buf.extend(v.to_le_bytes());
        }
        for v in [0.1f32, 0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0] {
            buf.extend(v.to_le_bytes());
        }
        let c = read_ply(&mut buf.as_slice()).unwrap();
        let p = &c.primitives()[0];
        assert_eq!(p.mean, Vec3::new(1.5, -2.0, 3.25));
        assert_eq!(p.quat_wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }
}
