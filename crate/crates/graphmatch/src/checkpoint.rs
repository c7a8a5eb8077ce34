//! Text checkpoints. Values use the shortest decimal form that parses back to
//! the same `f64`, so save → load is exact.
//!
//! ```text
//! graphmatch-checkpoint 1
//! feature_dim 16
//! embed_dim 8
//! latent_widths 32 16
//! hidden dec 4
//! param enc.v_instance.W0 32 16
//! 0.125 -0.03 ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use graphmatch_core::gnb::{GnbConfig, GnbParams};
use graphmatch_core::numeric::{ParamStore, Tensor};

use crate::error::{self, Error, Result};

const MAGIC: &str = "graphmatch-checkpoint 1";

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn checkpoint_to_string(params: &GnbParams) -> String {
    let c = &params.config;
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "feature_dim {}", c.feature_dim).unwrap();
    writeln!(out, "embed_dim {}", c.embed_dim).unwrap();
    writeln!(out, "latent_widths {}", join(&c.latent_widths)).unwrap();
    for (family, widths) in &c.hidden {
        writeln!(out, "hidden {family} {}", join(widths)).unwrap();
    }
    for (_, p) in params.store.iter() {
        writeln!(out, "param {} {}", p.name(), join(p.value.shape())).unwrap();
        writeln!(out, "{}", join(p.value.data())).unwrap();
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &GnbParams) -> Result<()> {
    error::write(path.as_ref(), checkpoint_to_string(params))
}

fn numbers<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    fields
        .iter()
        .map(|f| f.parse::<T>().map_err(|e| Error::parse(path, line, format!("`{f}`: {e}"))))
        .collect()
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<GnbParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(Error::parse(path, 1, format!("expected `{MAGIC}`"))),
    }
    let mut feature_dim = None;
    let mut embed_dim = None;
    let mut latent_widths = None;
    let mut hidden = BTreeMap::new();
    let mut store = ParamStore::new();
    while let Some((n, line)) = lines.next() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((key, rest)) = fields.split_first() else { continue };
        match *key {
            "feature_dim" | "embed_dim" => {
                let v: Vec<usize> = numbers(path, n, rest)?;
                if v.len() != 1 {
                    return Err(Error::parse(path, n, format!("`{key}` takes one value")));
                }
                if *key == "feature_dim" {
                    feature_dim = Some(v[0]);
                } else {
                    embed_dim = Some(v[0]);
                }
            }
            "latent_widths" => latent_widths = Some(numbers(path, n, rest)?),
            "hidden" => {
                let (family, widths) = rest
                    .split_first()
                    .ok_or_else(|| Error::parse(path, n, "`hidden` needs a family name"))?;
                hidden.insert(family.to_string(), numbers(path, n, widths)?);
            }
            "param" => {
                let (name, dims) = rest
                    .split_first()
                    .ok_or_else(|| Error::parse(path, n, "`param` needs a name"))?;
                let shape: Vec<usize> = numbers(path, n, dims)?;
                let (vn, values) = lines
                    .next()
                    .ok_or_else(|| Error::parse(path, n + 1, format!("missing values of `{name}`")))?;
                let fields: Vec<&str> = values.split_whitespace().collect();
                let data: Vec<f64> = numbers(path, vn, &fields)?;
                let tensor = Tensor::new(shape, data).map_err(|e| Error::parse(path, vn, e.to_string()))?;
                if !tensor.is_finite() {
                    return Err(Error::parse(path, vn, format!("`{name}` has a non-finite value")));
                }
                store.add(*name, tensor).map_err(|e| Error::parse(path, n, e.to_string()))?;
            }
            other => return Err(Error::parse(path, n, format!("unknown entry `{other}`"))),
        }
    }
    let missing = |what: &str| Error::Data(format!("{}: checkpoint lacks `{what}`", path.display()));
    let config = GnbConfig {
        feature_dim: feature_dim.ok_or_else(|| missing("feature_dim"))?,
        embed_dim: embed_dim.ok_or_else(|| missing("embed_dim"))?,
        latent_widths: latent_widths.ok_or_else(|| missing("latent_widths"))?,
        hidden,
    };
    GnbParams::from_store(config, store).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GnbParams> {
    let path = path.as_ref();
    parse_checkpoint(path, &error::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphmatch_core::rng;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = GnbConfig::new(3, 2, vec![4, 3]).unwrap();
        cfg.hidden.insert("dec".into(), vec![5, 2]);
        cfg.hidden.insert("phi_e_m".into(), vec![]);
        let p = GnbParams::init(cfg, &mut rng::stream(9, rng::STREAM_INIT)).unwrap();
        let text = checkpoint_to_string(&p);
        let q = parse_checkpoint(Path::new("m.ckpt"), &text).unwrap();
        assert_eq!(q.config, p.config);
        for ((_, a), (_, b)) in p.store.iter().zip(q.store.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value, b.value);
        }
        assert_eq!(checkpoint_to_string(&q), text);
    }

    #[test]
    fn truncated_file_rejected() {
        let p = GnbParams::init(GnbConfig::new(2, 2, vec![2]).unwrap(), &mut rng::stream(1, "init")).unwrap();
        let text = checkpoint_to_string(&p);
        let cut: String = text.lines().take(text.lines().count() - 2).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(Path::new("m.ckpt"), &cut).is_err());
        assert!(parse_checkpoint(Path::new("m.ckpt"), "nonsense").is_err());
    }
}
