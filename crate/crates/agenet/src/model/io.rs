//! Weight-file serialization and the flat key=value config codec.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "AGENETWT" (8 bytes)
//! version u16
//! config length u32, then that many bytes of UTF-8 key=value text
//! parameter record count u32
//! per record:
//!   name length u16, name bytes
//!   ndim u8, then ndim x u32 dims
//!   elem_count x f32 payload
//! ```
//!
//! Payloads are always stored as f32; loading into an f64 network widens
//! them, saving an f64 network narrows (f32 round-trips are bit-exact).

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::{Scalar, Shape, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"AGENETWT";
pub const WEIGHTS_VERSION: u16 = 1;

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|_| {
                Error::config(format!("{key}: '{part}' is not a non-negative integer"))
            })
        })
        .collect()
}

impl ModelConfig {
    /// Flat key=value form, one key per line, lists comma-joined.
    pub fn to_kv(&self) -> String {
        let (c, h, w) = self.input_shape;
        let pools: Vec<usize> = self.pool_layers.iter().copied().collect();
        let drops: Vec<usize> = self.dropout_layers.iter().copied().collect();
        format!(
            "input_shape={c},{h},{w}\n\
             conv_layers={}\n\
             conv_filters={}\n\
             conv_kernel_size={}\n\
             conv_strides={}\n\
             pool_layers={}\n\
             dropout_layers={}\n\
             dropout_rate={}\n\
             dense_units={}\n",
            self.conv_layers(),
            join(&self.conv_filters),
            self.conv_kernel_size,
            join(&self.conv_strides),
            join(&pools),
            join(&drops),
            self.dropout_rate,
            join(&self.dense_units),
        )
    }

    /// Parses [`ModelConfig::to_kv`] output. Every key must appear exactly
    /// once; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<ModelConfig> {
        let mut input_shape = None;
        let mut conv_layers = None;
        let mut conv_filters = None;
        let mut conv_kernel_size = None;
        let mut conv_strides = None;
        let mut pool_layers = None;
        let mut dropout_layers = None;
        let mut dropout_rate = None;
        let mut dense_units = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let dup = |k: &str| Error::config(format!("duplicate key '{k}'"));
            match key {
                "input_shape" => {
                    let dims = parse_list(key, value)?;
                    if dims.len() != 3 {
                        return Err(Error::config(format!(
                            "input_shape needs 3 comma-separated dims, got '{value}'"
                        )));
                    }
                    if input_shape.replace((dims[0], dims[1], dims[2])).is_some() {
                        return Err(dup(key));
                    }
                }
                "conv_layers" => {
                    let n: usize = value
                        .parse()
                        .map_err(|_| Error::config(format!("conv_layers: '{value}' is not an integer")))?;
                    if conv_layers.replace(n).is_some() {
                        return Err(dup(key));
                    }
                }
                "conv_filters" => {
                    if conv_filters.replace(parse_list(key, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "conv_kernel_size" => {
                    let k: usize = value.parse().map_err(|_| {
                        Error::config(format!("conv_kernel_size: '{value}' is not an integer"))
                    })?;
                    if conv_kernel_size.replace(k).is_some() {
                        return Err(dup(key));
                    }
                }
                "conv_strides" => {
                    if conv_strides.replace(parse_list(key, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "pool_layers" => {
                    if pool_layers.replace(parse_list(key, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "dropout_layers" => {
                    if dropout_layers.replace(parse_list(key, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "dropout_rate" => {
                    let r: f64 = value.parse().map_err(|_| {
                        Error::config(format!("dropout_rate: '{value}' is not a number"))
                    })?;
                    if dropout_rate.replace(r).is_some() {
                        return Err(dup(key));
                    }
                }
                "dense_units" => {
                    if dense_units.replace(parse_list(key, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                other => {
                    return Err(Error::config(format!("unknown model config key '{other}'")));
                }
            }
        }

        let missing = |k: &str| Error::config(format!("missing model config key '{k}'"));
        let cfg = ModelConfig {
            input_shape: input_shape.ok_or_else(|| missing("input_shape"))?,
            conv_filters: conv_filters.ok_or_else(|| missing("conv_filters"))?,
            conv_kernel_size: conv_kernel_size.ok_or_else(|| missing("conv_kernel_size"))?,
            conv_strides: conv_strides.ok_or_else(|| missing("conv_strides"))?,
            pool_layers: BTreeSet::from_iter(pool_layers.ok_or_else(|| missing("pool_layers"))?),
            dropout_layers: BTreeSet::from_iter(
                dropout_layers.ok_or_else(|| missing("dropout_layers"))?,
            ),
            dropout_rate: dropout_rate.ok_or_else(|| missing("dropout_rate"))?,
            dense_units: dense_units.ok_or_else(|| missing("dense_units"))?,
        };
        let declared = conv_layers.ok_or_else(|| missing("conv_layers"))?;
        if declared != cfg.conv_layers() {
            return Err(Error::config(format!(
                "conv_layers says {declared} but conv_filters lists {} layers",
                cfg.conv_layers()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl<T: Scalar> Network<T> {
    /// All-zero parameters in the config's shapes; the skeleton that
    /// deserialization fills in.
    pub(crate) fn zeroed(config: ModelConfig) -> Result<Network<T>> {
        config.validate()?;
        let (mut c, _, _) = config.input_shape;
        let k = config.conv_kernel_size;
        let mut blocks = Vec::with_capacity(config.conv_layers());
        for (i, (&filters, &stride)) in
            config.conv_filters.iter().zip(&config.conv_strides).enumerate()
        {
            let conv = crate::nn::ConvLayer::new(
                Tensor::zeros(Shape::new(vec![filters, c, k, k])?),
                Tensor::zeros(Shape::new(vec![filters])?),
                stride,
                (k - 1) / 2,
            )?;
            let block = i + 1;
            blocks.push(crate::model::ConvBlock {
                conv,
                pool: config.pool_layers.contains(&block).then(crate::nn::MaxPool::two_by_two),
                dropout: if config.dropout_layers.contains(&block) {
                    Some(crate::nn::Dropout::new(config.dropout_rate)?)
                } else {
                    None
                },
            });
            c = filters;
        }
        let mut width = config.flatten_width()?;
        let mut dense = Vec::with_capacity(config.dense_units.len());
        for &units in &config.dense_units {
            dense.push(crate::nn::DenseLayer::new(
                Tensor::zeros(Shape::new(vec![width, units])?),
                Tensor::zeros(Shape::new(vec![units])?),
            )?);
            width = units;
        }
        Ok(Network { config, blocks, dense })
    }
}

/// Serializes a network (architecture plus parameters) to bytes.
pub fn encode<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let config = net.config.to_kv();
    let params = net.params();
    let names = net.param_names();

    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (param, name) in params.iter().zip(&names) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(param.rank() as u8);
        for &d in param.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in param.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated weights file: ran out of bytes reading {what}"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Rebuilds a network from [`encode`] output. `origin` names the source in
/// error messages.
pub fn decode<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0, path: origin };
    let magic = r.take(WEIGHTS_MAGIC.len(), "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::format(origin, "not a weights file (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported weights version {version} (this build reads {WEIGHTS_VERSION})"),
        ));
    }
    let config_len = r.u32("config length")? as usize;
    let config_text = std::str::from_utf8(r.take(config_len, "config block")?)
        .map_err(|_| Error::format(origin, "config block is not UTF-8"))?;
    let config = ModelConfig::from_kv(config_text)?;

    let mut net = Network::<T>::zeroed(config)?;
    let names = net.param_names();
    let count = r.u32("parameter count")? as usize;
    if count != names.len() {
        return Err(Error::format(
            origin,
            format!(
                "weights file holds {count} parameter records, architecture needs {}",
                names.len()
            ),
        ));
    }
    for (param, expected_name) in net.params_mut().into_iter().zip(&names) {
        let name_len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| Error::format(origin, "parameter name is not UTF-8"))?;
        if name != expected_name {
            return Err(Error::format(
                origin,
                format!("expected parameter '{expected_name}', found '{name}'"),
            ));
        }
        let ndim = r.take(1, "parameter rank")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("parameter dimension")? as usize);
        }
        if dims != param.dims() {
            return Err(Error::format(
                origin,
                format!(
                    "parameter '{name}' is {:?} in the file but the architecture wants {:?}",
                    dims,
                    param.dims()
                ),
            ));
        }
        let payload = r.take(4 * param.elem_count(), "parameter payload")?;
        for (dst, chunk) in param.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            *dst = T::from_f64(v as f64);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after the last parameter", bytes.len() - r.pos),
        ));
    }
    Ok(net)
}

pub fn save<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
