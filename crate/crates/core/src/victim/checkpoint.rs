//! Victim checkpoints: a `key = value` header, then one hexfloat parameter per line.

use std::path::Path;

use super::det::DetHead;
use super::mlp::{param_count, Mlp};
use super::seg::SegNet;
use super::Victim;
use crate::cloud::ClassTable;
use crate::error::{Error, Result};
use crate::io::{hexfloat, KeyValues};

pub const VICTIM_FORMAT: &str = "advfield-victim";
pub const VICTIM_VERSION: &str = "1";
const SECTION: &str = "[params]";

pub fn encode_victim(v: &Victim, classes: &ClassTable) -> String {
    let mut kv = KeyValues::new();
    kv.set("format", VICTIM_FORMAT);
    kv.set("version", VICTIM_VERSION);
    kv.set("task", v.task());
    kv.set("classes", classes.names().join(","));
    let mlp = match v {
        Victim::Seg(s) => {
            kv.set("radius", hexfloat::format(s.radius));
            &s.mlp
        }
        Victim::Det(d) => {
            kv.set("class", classes.name(d.class).unwrap_or("unknown"));
            &d.mlp
        }
    };
    kv.set("layers", mlp.sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    kv.set("params", mlp.params.len());
    let mut out = kv.to_text();
    out.push_str(SECTION);
    out.push('\n');
    for p in &mlp.params {
        out.push_str(&hexfloat::format(*p));
        out.push('\n');
    }
    out
}

pub fn decode_victim(text: &str) -> Result<(Victim, ClassTable)> {
    let (head, body) = text
        .split_once(&format!("{SECTION}\n"))
        .ok_or_else(|| Error::Format(format!("checkpoint has no `{SECTION}` section")))?;
    let kv = KeyValues::parse(head)?;
    if kv.require("format")? != VICTIM_FORMAT {
        return Err(Error::Format(format!("not a victim checkpoint (format `{}`)", kv.require("format")?)));
    }
    let version = kv.require("version")?;
    if version != VICTIM_VERSION {
        return Err(Error::Version { found: version.into(), expected: VICTIM_VERSION.into() });
    }
    let names: Vec<&str> = kv.require("classes")?.split(',').collect();
    let classes = ClassTable::new(&names)?;
    let sizes: Vec<usize> = kv
        .require("layers")?
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Format(format!("bad layer size `{t}`"))))
        .collect::<Result<_>>()?;
    let expected: usize = kv.parse_key("params")?;
    if param_count(&sizes) != expected {
        return Err(Error::LengthMismatch(format!("layers {sizes:?} need {} params, header says {expected}", param_count(&sizes))));
    }
    let params: Vec<f64> = body.lines().filter(|l| !l.trim().is_empty()).map(|l| hexfloat::parse(l.trim())).collect::<Result<_>>()?;
    if params.len() != expected {
        return Err(Error::LengthMismatch(format!("{} params on disk, header says {expected}", params.len())));
    }
    let mlp = Mlp { sizes, params };
    let victim = match kv.require("task")? {
        "seg" => {
            if mlp.output_dim() != classes.len() {
                return Err(Error::LengthMismatch(format!("{} outputs for {} classes", mlp.output_dim(), classes.len())));
            }
            Victim::Seg(SegNet { classes: classes.clone(), radius: hexfloat::parse(kv.require("radius")?)?, mlp })
        }
        "det" => Victim::Det(DetHead { class: classes.id(kv.require("class")?)?, mlp }),
        other => return Err(Error::Format(format!("unknown task `{other}`"))),
    };
    Ok((victim, classes))
}

pub fn save_victim(v: &Victim, classes: &ClassTable, path: &Path) -> Result<()> {
    std::fs::write(path, encode_victim(v, classes)).map_err(|e| Error::io(path, e))
}

pub fn load_victim(path: &Path) -> Result<(Victim, ClassTable)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_victim(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let classes = ClassTable::desk();
        for v in [Victim::Seg(SegNet::new(classes.clone(), 1).unwrap()), Victim::Det(DetHead::new(1, 2).unwrap())] {
            let text = encode_victim(&v, &classes);
            let (back, c) = decode_victim(&text).unwrap();
            assert_eq!(back, v);
            assert_eq!(c, classes);
        }
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let classes = ClassTable::desk();
        let text = encode_victim(&Victim::Seg(SegNet::new(classes.clone(), 1).unwrap()), &classes);
        assert!(matches!(decode_victim(&text.replace("version = 1", "version = 9")), Err(Error::Version { .. })));
        let cut: String = text.lines().take(text.lines().count() - 3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(decode_victim(&cut), Err(Error::LengthMismatch(_))));
        assert!(decode_victim("format = x\n").is_err());
    }
}
