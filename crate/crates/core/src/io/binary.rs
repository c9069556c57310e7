//! KITTI-style `.bin` point files and packed `.label` files.

use std::path::Path;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

const POINT_BYTES: usize = 16;

/// Encodes positions and intensities as little-endian `f32 × 4` per point.
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for (p, &t) in cloud.positions.iter().zip(&cloud.intensity) {
        for v in [p.x, p.y, p.z, t] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes a `.bin` buffer. Labels are zero-filled.
pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let rem = bytes.len() % POINT_BYTES;
    if rem != 0 {
        return Err(Error::Malformed {
            what: "point file",
            offset: (bytes.len() - rem) as u64,
            message: format!("trailing bytes: {rem} bytes after the last complete point"),
        });
    }
    let n = bytes.len() / POINT_BYTES;
    let mut cloud = PointCloud::with_capacity(n);
    for (i, chunk) in bytes.chunks_exact(POINT_BYTES).enumerate() {
        let mut v = [0f64; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            let off = k * 4;
            let f = f32::from_le_bytes(chunk[off..off + 4].try_into().expect("4-byte slice"));
            if !f.is_finite() {
                return Err(Error::Malformed {
                    what: "point file",
                    offset: (i * POINT_BYTES + off) as u64,
                    message: format!("non-finite value {f} in point {i}"),
                });
            }
            *slot = f as f64;
        }
        if !(0.0..=1.0).contains(&v[3]) {
            return Err(Error::Malformed {
                what: "point file",
                offset: (i * POINT_BYTES + 12) as u64,
                message: format!("intensity {} outside [0,1] in point {i}", v[3]),
            });
        }
        cloud.push(Vec3::new(v[0], v[1], v[2]), v[3], 0, 0);
    }
    Ok(cloud)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes)
}

/// Packs `semantic` into the low 16 bits and `instance` into the high 16 bits.
#[inline]
pub fn pack_label(semantic: ClassId, instance: u16) -> u32 {
    (semantic as u32) | ((instance as u32) << 16)
}

#[inline]
pub fn unpack_label(v: u32) -> (ClassId, u16) {
    ((v & 0xffff) as ClassId, (v >> 16) as u16)
}

pub fn encode_labels(semantic: &[ClassId], instance: &[u16]) -> Result<Vec<u8>> {
    if semantic.len() != instance.len() {
        return Err(Error::LengthMismatch(format!(
            "{} semantic labels vs {} instance labels",
            semantic.len(),
            instance.len()
        )));
    }
    let mut out = Vec::with_capacity(semantic.len() * 4);
    for (&s, &k) in semantic.iter().zip(instance) {
        out.extend_from_slice(&pack_label(s, k).to_le_bytes());
    }
    Ok(out)
}

/// Decodes `n` packed labels.
pub fn decode_labels(bytes: &[u8], n: usize) -> Result<(Vec<ClassId>, Vec<u16>)> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Malformed {
            what: "label file",
            offset: (bytes.len() - bytes.len() % 4) as u64,
            message: "trailing bytes".into(),
        });
    }
    if bytes.len() / 4 != n {
        return Err(Error::LengthMismatch(format!("label file holds {} labels, cloud has {n} points", bytes.len() / 4)));
    }
    let mut sem = Vec::with_capacity(n);
    let mut inst = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(4) {
        let (s, k) = unpack_label(u32::from_le_bytes(chunk.try_into().expect("4-byte slice")));
        sem.push(s);
        inst.push(k);
    }
    Ok((sem, inst))
}

pub fn write_labels(semantic: &[ClassId], instance: &[u16], path: &Path) -> Result<()> {
    std::fs::write(path, encode_labels(semantic, instance)?).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path, n: usize) -> Result<(Vec<ClassId>, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, n)
}

/// Reads a `.bin` file and its sibling `.label` file.
pub fn read_labeled(bin: &Path, label: &Path) -> Result<PointCloud> {
    let mut cloud = read_cloud(bin)?;
    let (s, k) = read_labels(label, cloud.len())?;
    cloud.semantic = s;
    cloud.instance = k;
    Ok(cloud)
}

pub fn write_labeled(cloud: &PointCloud, bin: &Path, label: &Path) -> Result<()> {
    write_cloud(cloud, bin)?;
    write_labels(&cloud.semantic, &cloud.instance, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_packing() {
        assert_eq!(unpack_label(0x0005_0002), (2, 5));
        assert_eq!(pack_label(2, 5), 0x0005_0002);
    }

    #[test]
    fn empty_and_malformed() {
        assert_eq!(decode_cloud(&[]).unwrap().len(), 0);
        let err = decode_cloud(&[0u8; 17]).unwrap_err().to_string();
        assert!(err.contains("trailing bytes"), "{err}");
        assert!(err.contains("offset 16"), "{err}");
        let mut nan = vec![0u8; 16];
        nan[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_cloud(&nan).unwrap_err().to_string();
        assert!(err.contains("offset 4") && err.contains("non-finite"), "{err}");
        assert!(matches!(decode_labels(&[0u8; 8], 3), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PointCloud::default();
        c.push(Vec3::new(1.5, -2.25, 0.125), 0.5, 3, 7);
        c.push(Vec3::new(0.0, 10.0, -1.0), 1.0, 1, 0);
        let (b, l) = (dir.path().join("a.bin"), dir.path().join("a.label"));
        write_labeled(&c, &b, &l).unwrap();
        assert_eq!(read_labeled(&b, &l).unwrap(), c);
        assert!(read_labels(&l, 3).is_err());
    }

    fn f32_in(lo: f32, hi: f32) -> impl Strategy<Value = f64> {
        (lo..hi).prop_map(|v| v as f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn cloud_and_labels_round_trip(
            pts in prop::collection::vec((f32_in(-100.0, 100.0), f32_in(-100.0, 100.0), f32_in(-5.0, 20.0), f32_in(0.0, 1.0), any::<u16>(), any::<u16>()), 0..40)
        ) {
            let mut c = PointCloud::default();
            for (x, y, z, t, s, k) in pts {
                c.push(Vec3::new(x, y, z), t, s, k);
            }
            let bytes = encode_cloud(&c);
            let mut back = decode_cloud(&bytes).unwrap();
            prop_assert_eq!(encode_cloud(&back), bytes);
            let lbytes = encode_labels(&c.semantic, &c.instance).unwrap();
            let (s, k) = decode_labels(&lbytes, c.len()).unwrap();
            back.semantic = s;
            back.instance = k;
            prop_assert_eq!(back, c);
        }
    }
}
