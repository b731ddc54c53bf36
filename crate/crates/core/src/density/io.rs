//! Text persistence for [`ArModel`]. Numbers are written in shortest
//! round-trip scientific notation, so reading back is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{ArConfig, ArModel, PnnConfig, PositivityTransform};
use crate::data::Support;
use crate::error::{Result, VsdeError};
use crate::kv;
use crate::scalar::Scalar;

pub const MODEL_FORMAT_TAG: &str = "vsde-model v1";

pub(crate) fn join_usize(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| VsdeError::Format(format!("`{x}` is not a non-negative integer")))
        })
        .collect()
}

pub fn model_to_string<T: Scalar>(model: &ArModel<T>) -> String {
    let cfg = model.config();
    let mut out = String::new();
    writeln!(out, "{MODEL_FORMAT_TAG}").unwrap();
    writeln!(out, "dim = {}", cfg.dim).unwrap();
    writeln!(out, "pnn_hidden = {}", join_usize(&cfg.pnn.hidden)).unwrap();
    writeln!(out, "support = {:e} {:e}", cfg.pnn.support.low, cfg.pnn.support.high).unwrap();
    writeln!(out, "transform = {}", cfg.pnn.transform.name()).unwrap();
    writeln!(out, "conditioner_hidden = {}", join_usize(&cfg.conditioner_hidden)).unwrap();
    writeln!(out, "dropout = {:e}", cfg.dropout).unwrap();
    writeln!(out, "n_params = {}", model.params().len()).unwrap();
    writeln!(out, "[params]").unwrap();
    for v in model.params() {
        writeln!(out, "{v:e}").unwrap();
    }
    out
}

pub fn model_from_str<T: Scalar>(text: &str) -> Result<ArModel<T>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(tag) if tag.trim() == MODEL_FORMAT_TAG => {}
        other => {
            return Err(VsdeError::Format(format!(
                "expected format tag `{MODEL_FORMAT_TAG}`, found {other:?}"
            )))
        }
    }
    let mut header = String::new();
    for line in lines.by_ref() {
        if line.trim() == "[params]" {
            break;
        }
        header.push_str(line);
        header.push('\n');
    }
    let fields: std::collections::HashMap<String, String> = kv::parse_kv_lines(&header)?.into_iter().collect();
    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| VsdeError::Format(format!("model file lacks `{k}`")))
    };
    let parse_t = |s: &str| {
        s.parse::<T>()
            .map_err(|_| VsdeError::Format(format!("`{s}` is not a number")))
    };
    let dim: usize = get("dim")?.parse().map_err(|_| VsdeError::Format("bad `dim`".into()))?;
    let mut support = get("support")?.split_whitespace();
    let (Some(low), Some(high)) = (support.next(), support.next()) else {
        return Err(VsdeError::Format("`support` needs two numbers".into()));
    };
    let config = ArConfig {
        dim,
        pnn: PnnConfig {
            hidden: parse_usize_list(get("pnn_hidden")?)?,
            support: Support::new(parse_t(low)?, parse_t(high)?)?,
            transform: PositivityTransform::parse(get("transform")?)?,
        },
        conditioner_hidden: parse_usize_list(get("conditioner_hidden")?)?,
        dropout: get("dropout")?
            .parse()
            .map_err(|_| VsdeError::Format("bad `dropout`".into()))?,
    };
    let n: usize = get("n_params")?
        .parse()
        .map_err(|_| VsdeError::Format("bad `n_params`".into()))?;
    let params = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_t(l.trim()))
        .collect::<Result<Vec<T>>>()?;
    if params.len() != n {
        return Err(VsdeError::Format(format!(
            "expected {n} parameters, found {}",
            params.len()
        )));
    }
    ArModel::from_params(config, params)
}

pub fn write_model<T: Scalar>(model: &ArModel<T>, path: &Path) -> Result<()> {
    kv::write_atomic(path, model_to_string(model).as_bytes())
}

pub fn read_model<T: Scalar>(path: &Path) -> Result<ArModel<T>> {
    model_from_str(&kv::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn tiny(seed: u64) -> ArModel<f64> {
        let cfg = ArConfig {
            dim: 3,
            pnn: PnnConfig {
                hidden: vec![3, 2],
                ..PnnConfig::default()
            },
            conditioner_hidden: vec![4],
            dropout: 0.25,
        };
        ArModel::new(cfg, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn rejects_wrong_tag_and_truncation() {
        let text = model_to_string(&tiny(1));
        assert!(model_from_str::<f64>(&text.replacen("v1", "v0", 1)).is_err());
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(model_from_str::<f64>(&cut).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let m = tiny(2);
        write_model(&m, &path).unwrap();
        assert_eq!(read_model::<f64>(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), scale in -300i32..300) {
            let mut m = tiny(seed);
            let factor = 10f64.powi(scale / 10);
            m.params_mut().iter_mut().for_each(|v| *v *= factor);
            let back: ArModel<f64> = model_from_str(&model_to_string(&m)).unwrap();
            let bits = |x: &ArModel<f64>| x.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
            prop_assert_eq!(back.config(), m.config());
        }
    }
}
