//! `.vfb` text format for field banks.
//!
//! ```text
//! format = advfield-vfb
//! version = 1
//! class = car
//! ...header keys...
//! [field]
//! group = 0
//! variant = 0
//! roots = <3·m hexfloats>
//! vectors = <4·m hexfloats>
//! ```
//!
//! Every float is a hexfloat, so loading reproduces the bank bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::hexfloat;
use super::kv::KeyValues;
use crate::error::{Error, Result};
use crate::field::{AnchorMode, FieldBank, VectorField};
use crate::geometry::{BoxDims, Vec3};

pub const BANK_FORMAT: &str = "advfield-vfb";
pub const BANK_VERSION: &str = "1";

fn push_floats(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&hexfloat::format(v));
    }
}

pub fn encode_bank(bank: &FieldBank) -> String {
    let mut s = String::with_capacity(bank.total_vectors() * 7 * 22 + 1024);
    let _ = writeln!(s, "# adversarial vector-field bank");
    let _ = writeln!(s, "format = {BANK_FORMAT}");
    let _ = writeln!(s, "version = {BANK_VERSION}");
    let _ = writeln!(s, "class = {}", bank.class_name);
    let _ = writeln!(s, "class_id = {}", bank.class);
    let _ = writeln!(s, "groups = {}", bank.groups);
    let _ = writeln!(s, "variants = {}", bank.variants);
    let _ = writeln!(s, "anchor = {}", bank.anchor.as_str());
    s.push_str("dims = ");
    push_floats(&mut s, [bank.reference.width, bank.reference.height, bank.reference.length].into_iter());
    s.push('\n');
    let _ = writeln!(s, "step = {}", hexfloat::format(bank.step));
    let _ = writeln!(s, "epsilon = {}", hexfloat::format(bank.epsilon));
    let _ = writeln!(s, "psi = {}", hexfloat::format(bank.psi));
    let _ = writeln!(s, "roots_per_field = {}", bank.roots_per_field());
    for f in &bank.fields {
        s.push_str("[field]\n");
        let _ = writeln!(s, "group = {}", f.group);
        let _ = writeln!(s, "variant = {}", f.variant);
        s.push_str("roots = ");
        push_floats(&mut s, f.roots.iter().flat_map(|r| r.to_array()));
        s.push_str("\nvectors = ");
        push_floats(&mut s, f.vectors.iter().flatten().copied());
        s.push('\n');
    }
    s
}

fn parse_floats(text: &str, key: &str) -> Result<Vec<f64>> {
    text.split_ascii_whitespace()
        .map(|t| hexfloat::parse(t).map_err(|e| Error::Format(format!("key `{key}`: {e}"))))
        .collect()
}

fn hex_key(kv: &KeyValues, key: &str) -> Result<f64> {
    hexfloat::parse(kv.require(key)?).map_err(|e| Error::Format(format!("key `{key}`: {e}")))
}

pub fn decode_bank(text: &str) -> Result<FieldBank> {
    let mut sections = text.split("\n[field]\n");
    let header = KeyValues::parse(sections.next().unwrap_or_default())?;
    let format = header.require("format")?;
    if format != BANK_FORMAT {
        return Err(Error::Format(format!("not a field bank (format `{format}`)")));
    }
    let version = header.require("version")?;
    if version != BANK_VERSION {
        return Err(Error::Version { found: version.to_string(), expected: BANK_VERSION.to_string() });
    }
    let class_name = header.require("class")?.to_string();
    let class: u16 = header.parse_key("class_id")?;
    let groups: usize = header.parse_key("groups")?;
    let variants: usize = header.parse_key("variants")?;
    let anchor = AnchorMode::parse(header.require("anchor")?)?;
    let dims = parse_floats(header.require("dims")?, "dims")?;
    if dims.len() != 3 {
        return Err(Error::LengthMismatch(format!("`dims` needs 3 values, got {}", dims.len())));
    }
    let reference = BoxDims::new(dims[0], dims[1], dims[2]);
    let step = hex_key(&header, "step")?;
    let epsilon = hex_key(&header, "epsilon")?;
    let psi = hex_key(&header, "psi")?;
    let per_field: usize = header.parse_key("roots_per_field")?;

    let mut bank = FieldBank::new(class, &class_name, groups, variants, anchor, reference, step, epsilon, psi)?;
    if bank.roots_per_field() != per_field {
        return Err(Error::LengthMismatch(format!(
            "header says {per_field} roots per field, lattice gives {}",
            bank.roots_per_field()
        )));
    }
    let mut fields: Vec<VectorField> = Vec::with_capacity(groups * variants);
    for (si, sec) in sections.enumerate() {
        let kv = KeyValues::parse(sec)?;
        let group: usize = kv.parse_key("group")?;
        let variant: usize = kv.parse_key("variant")?;
        let roots = parse_floats(kv.require("roots")?, "roots")?;
        let vectors = parse_floats(kv.require("vectors")?, "vectors")?;
        if roots.len() != 3 * per_field || vectors.len() != 4 * per_field {
            return Err(Error::LengthMismatch(format!(
                "field section {si}: {} root values and {} vector values for {per_field} roots",
                roots.len(),
                vectors.len()
            )));
        }
        let mut f = bank.fields[0].clone();
        f.group = group;
        f.variant = variant;
        f.roots = roots.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        f.vectors = vectors.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        fields.push(f);
    }
    bank.fields = fields;
    bank.validate()?;
    Ok(bank)
}

pub fn save_bank(bank: &FieldBank, path: &Path) -> Result<()> {
    std::fs::write(path, encode_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<FieldBank> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_bank(&text)
}

/// Number of stored vectors in an encoded bank, counted from the text itself.
pub fn count_vectors_on_disk(text: &str) -> usize {
    text.lines()
        .filter_map(|l| l.strip_prefix("vectors = "))
        .map(|v| v.split_ascii_whitespace().count() / 4)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_bank(seed: u64) -> FieldBank {
        let mut b =
            FieldBank::new(1, "car", 3, 2, AnchorMode::Oriented, BoxDims::new(1.8, 1.6, 4.6), 0.4, 0.3, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut b.fields {
            for v in &mut f.vectors {
                for c in v.iter_mut() {
                    *c = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        b
    }

    #[test]
    fn round_trip_random_banks() {
        for seed in 0..20 {
            let b = small_bank(seed);
            let back = decode_bank(&encode_bank(&b)).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn corrupt_header_names_key() {
        let text = encode_bank(&small_bank(1)).replace("groups = 3\n", "");
        let err = decode_bank(&text).unwrap_err();
        assert!(matches!(&err, Error::MissingKey(k) if k == "groups"), "{err}");
        let text = encode_bank(&small_bank(1)).replace("version = 1", "version = 7");
        assert!(matches!(decode_bank(&text), Err(Error::Version { .. })));
    }

    #[test]
    fn dimension_inconsistency_rejected() {
        let text = encode_bank(&small_bank(2));
        let cut = text.rfind(" 0x").unwrap();
        let truncated = format!("{}\n", &text[..cut]);
        assert!(matches!(decode_bank(&truncated), Err(Error::LengthMismatch(_))));
        let fewer = text.replace("variants = 2", "variants = 3");
        assert!(decode_bank(&fewer).is_err());
    }

    #[test]
    fn default_configuration_vector_count() {
        let b = FieldBank::new(1, "car", 12, 6, AnchorMode::Oriented, BoxDims::new(1.8, 1.6, 4.6), 0.2, 0.3, 0.3).unwrap();
        assert_eq!(count_vectors_on_disk(&encode_bank(&b)), 119_232);
    }
}
