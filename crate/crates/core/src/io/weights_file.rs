//! Weights files: a `key=value` text header describing the config, then one
//! `param <name>` line and an `LDAT` block per parameter.

use std::path::Path;

use super::tensor_file::{decode_array, encode_array};
use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::geometry::{PaddingMode, ProjectionMode};
use crate::tensor::{DType, Rng};
use crate::upsamplers::{
    init_weights, InitScheme, LdaAquWeights, QueryUpsample, UpsampleConfig, ValueProjection,
};

pub const WEIGHTS_MAGIC: &str = "LDAW 1";

fn projection_name(m: ProjectionMode) -> &'static str {
    match m {
        ProjectionMode::PaperExact => "paper",
        ProjectionMode::AlignCorners => "align-corners",
    }
}

fn padding_name(p: PaddingMode) -> &'static str {
    match p {
        PaddingMode::Zeros => "zeros",
        PaddingMode::Border => "border",
    }
}

fn value_name(v: ValueProjection) -> &'static str {
    match v {
        ValueProjection::Identity => "identity",
        ValueProjection::Learned => "learned",
    }
}

fn query_name(q: QueryUpsample) -> &'static str {
    match q {
        QueryUpsample::Bilinear => "bilinear",
        QueryUpsample::Nearest => "nearest",
    }
}

fn header_lines(config: &UpsampleConfig, channels: usize) -> Vec<(&'static str, String)> {
    vec![
        ("channels", channels.to_string()),
        ("alpha", config.alpha.to_string()),
        ("k_u", config.k_u.to_string()),
        ("k_e", config.k_e.to_string()),
        ("theta", config.theta.to_string()),
        ("groups", config.groups.to_string()),
        ("reduction", config.reduction.to_string()),
        ("heads", config.heads.to_string()),
        (
            "value_projection",
            value_name(config.value_projection).into(),
        ),
        ("projection", projection_name(config.projection_mode).into()),
        ("padding", padding_name(config.padding).into()),
        ("query_upsample", query_name(config.query_upsample).into()),
        ("qk_bias", config.qk_bias.to_string()),
        ("offset_bias", config.offset_bias.to_string()),
    ]
}

fn param_dims(w: &LdaAquWeights, name: &str, len: usize) -> Vec<usize> {
    match name {
        "w_q" => vec![w.w_q.rows, w.w_q.cols],
        "w_k" => vec![w.w_k.rows, w.w_k.cols],
        "w_v" => w.w_v.as_ref().map_or(vec![len], |m| vec![m.rows, m.cols]),
        "dw_kernel" => vec![w.dw_kernel.channels, w.dw_kernel.k, w.dw_kernel.k],
        "offset_conv" => vec![
            w.offset_conv.out_channels,
            w.offset_conv.in_channels,
            w.offset_conv.k,
            w.offset_conv.k,
        ],
        _ => vec![len],
    }
}

pub fn encode_weights(weights: &LdaAquWeights, config: &UpsampleConfig) -> Result<Vec<u8>> {
    weights.validate(config)?;
    let mut out = format!("{WEIGHTS_MAGIC}\n");
    for (k, v) in header_lines(config, weights.channels) {
        out.push_str(&format!("{k}={v}\n"));
    }
    out.push_str("end\n");
    let mut out = out.into_bytes();
    for (name, data) in weights.params() {
        out.extend_from_slice(format!("param {name}\n").as_bytes());
        out.extend(encode_array(
            &param_dims(weights, name, data.len()),
            DType::F64,
            data,
        )?);
    }
    Ok(out)
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
    *pos = end + 1;
    std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::parse(start, "header is not UTF-8"))
}

fn parse_config(fields: &[(String, String, usize)]) -> Result<(UpsampleConfig, usize)> {
    let get = |key: &str| -> Result<(&str, usize)> {
        fields
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, at)| (v.as_str(), *at))
            .ok_or_else(|| Error::parse(0, format!("missing header key {key}")))
    };
    fn num<T: std::str::FromStr>(v: (&str, usize), key: &str) -> Result<T> {
        v.0.parse()
            .map_err(|_| Error::parse(v.1, format!("bad value for {key}: {}", v.0)))
    }
    fn pick<T: Copy>(v: (&str, usize), key: &str, options: &[(&str, T)]) -> Result<T> {
        options
            .iter()
            .find(|(n, _)| *n == v.0)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::parse(v.1, format!("bad value for {key}: {}", v.0)))
    }
    let config = UpsampleConfig {
        alpha: num(get("alpha")?, "alpha")?,
        k_u: num(get("k_u")?, "k_u")?,
        k_e: num(get("k_e")?, "k_e")?,
        theta: num(get("theta")?, "theta")?,
        groups: num(get("groups")?, "groups")?,
        reduction: num(get("reduction")?, "reduction")?,
        heads: num(get("heads")?, "heads")?,
        value_projection: pick(
            get("value_projection")?,
            "value_projection",
            &[
                ("identity", ValueProjection::Identity),
                ("learned", ValueProjection::Learned),
            ],
        )?,
        projection_mode: pick(
            get("projection")?,
            "projection",
            &[
                ("paper", ProjectionMode::PaperExact),
                ("align-corners", ProjectionMode::AlignCorners),
            ],
        )?,
        padding: pick(
            get("padding")?,
            "padding",
            &[
                ("zeros", PaddingMode::Zeros),
                ("border", PaddingMode::Border),
            ],
        )?,
        query_upsample: pick(
            get("query_upsample")?,
            "query_upsample",
            &[
                ("bilinear", QueryUpsample::Bilinear),
                ("nearest", QueryUpsample::Nearest),
            ],
        )?,
        qk_bias: num(get("qk_bias")?, "qk_bias")?,
        offset_bias: num(get("offset_bias")?, "offset_bias")?,
        ..UpsampleConfig::default()
    };
    let channels = num(get("channels")?, "channels")?;
    Ok((config, channels))
}

/// Decodes a weights file, returning the config stored in its header.
pub fn decode_weights(bytes: &[u8]) -> Result<(UpsampleConfig, LdaAquWeights)> {
    let mut pos = 0;
    if read_line(bytes, &mut pos)? != WEIGHTS_MAGIC {
        return Err(Error::UnsupportedFormat("missing LDAW 1 header".into()));
    }
    let mut fields = Vec::new();
    loop {
        let at = pos;
        let line = read_line(bytes, &mut pos)?;
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(at, format!("expected key=value, got {line:?}")))?;
        fields.push((k.to_string(), v.to_string(), at));
    }
    let (config, channels) = parse_config(&fields)?;
    let mut weights = init_weights(
        &config,
        channels,
        &mut Rng::seed(0),
        InitScheme::XavierUniform,
    )?;
    let expected: Vec<(&'static str, usize)> = weights
        .params()
        .iter()
        .map(|(n, p)| (*n, p.len()))
        .collect();
    let mut loaded = Vec::with_capacity(expected.len());
    for (name, len) in &expected {
        let at = pos;
        let line = read_line(bytes, &mut pos)?;
        if line != format!("param {name}") {
            return Err(Error::parse(
                at,
                format!("expected param {name}, got {line:?}"),
            ));
        }
        let at = pos;
        let a = decode_array(bytes, &mut pos)?;
        if a.data.len() != *len {
            return Err(Error::parse(
                at,
                format!("{name} has {} values, expected {len}", a.data.len()),
            ));
        }
        loaded.push(a.data);
    }
    if pos != bytes.len() {
        return Err(Error::parse(pos, "trailing bytes after last parameter"));
    }
    for ((_, dst), src) in weights.params_mut().into_iter().zip(loaded) {
        dst.copy_from_slice(&src);
    }
    Ok((config, weights))
}

fn same_config(a: &UpsampleConfig, b: &UpsampleConfig) -> bool {
    UpsampleConfig {
        aggregation: b.aggregation,
        ..*a
    } == *b
}

pub fn save_weights(
    path: impl AsRef<Path>,
    weights: &LdaAquWeights,
    config: &UpsampleConfig,
) -> Result<()> {
    write_bytes(path.as_ref(), &encode_weights(weights, config)?)
}

/// Reads a weights file and its stored config.
pub fn read_weights_file(path: impl AsRef<Path>) -> Result<(UpsampleConfig, LdaAquWeights)> {
    decode_weights(&read_bytes(path.as_ref())?)
}

/// Loads weights, failing unless the stored config equals `config`.
pub fn load_weights(path: impl AsRef<Path>, config: &UpsampleConfig) -> Result<LdaAquWeights> {
    let (stored, weights) = read_weights_file(path)?;
    if !same_config(&stored, config) {
        return Err(Error::config(format!(
            "weights were saved for {stored:?}, loading config is {config:?}"
        )));
    }
    Ok(weights)
}
