//! `MMCK1` checkpoint files.
//!
//! ```text
//! MMCK1
//! scene <c_a> <c_b> <classes>
//! config <n>
//! <n bytes of canonical config text>
//! params <count>
//! <name> <d0,d1,..>
//! <f32 LE values>
//! ...
//! ```

use std::path::Path;

use mmfed_core::fedsim::ModelParams;
use mmfed_core::numkit::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "MMCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub channels_a: usize,
    pub channels_b: usize,
    pub classes: usize,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, channels_a: usize, channels_b: usize, classes: usize, model: &ModelParams<Tensor<f32>>) -> Self {
        Self {
            config: config.clone(),
            channels_a,
            channels_b,
            classes,
            params: model.names().into_iter().zip(model.to_vec()).collect(),
        }
    }

    /// Rebuilds the model, checking names and shapes against the stored
    /// configuration.
    pub fn model(&self) -> CliResult<ModelParams<Tensor<f32>>> {
        let cfg = self.config.model_config(self.channels_a, self.channels_b, self.classes)?;
        Ok(ModelParams::from_named(&cfg, self.params.clone())?)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let text = self.config.to_text();
        let mut out = format!(
            "{MAGIC}\nscene {} {} {}\nconfig {}\n{text}params {}\n",
            self.channels_a,
            self.channels_b,
            self.classes,
            text.len(),
            self.params.len()
        )
        .into_bytes();
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{name} {}\n", dims.join(",")).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.line()?;
        if magic != MAGIC {
            return Err(r.err(format!("bad magic `{magic}`, expected {MAGIC}")));
        }
        let scene = r.line()?;
        let dims: Vec<usize> = match scene.strip_prefix("scene ") {
            Some(s) => s.split(' ').map(|v| r.num(v)).collect::<CliResult<_>>()?,
            None => return Err(r.err(format!("expected scene line, got `{scene}`"))),
        };
        let [channels_a, channels_b, classes] = dims[..] else {
            return Err(r.err("scene line needs three numbers"));
        };
        let n = r.tagged("config")?;
        let text = std::str::from_utf8(r.take(n)?).map_err(|e| r.err(format!("config text: {e}")))?;
        let config = RunConfig::parse(text)?;
        let count = r.tagged("params")?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let line = r.line()?;
            let (name, dims) = line
                .split_once(' ')
                .ok_or_else(|| r.err(format!("bad parameter header `{line}`")))?;
            let shape: Vec<usize> = dims.split(',').map(|v| r.num(v)).collect::<CliResult<_>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.push((name.to_string(), Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            channels_a,
            channels_b,
            classes,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl std::fmt::Display) -> CliError {
        CliError::Runtime(format!("checkpoint byte {}: {detail}", self.pos))
    }

    fn line(&mut self) -> CliResult<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("unterminated header line"))?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|e| self.err(e))?;
        self.pos += end + 1;
        Ok(s)
    }

    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("expected {n} more bytes, found {}", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn num(&self, v: &str) -> CliResult<usize> {
        v.parse().map_err(|_| self.err(format!("`{v}` is not a count")))
    }

    fn tagged(&mut self, tag: &str) -> CliResult<usize> {
        let line = self.line()?;
        match line.strip_prefix(tag).and_then(|s| s.strip_prefix(' ')) {
            Some(v) => self.num(v),
            None => Err(self.err(format!("expected `{tag} <n>`, got `{line}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut cfg = RunConfig::default();
        cfg.set("model.widths", "8,8").unwrap();
        cfg.set("model.heads", "2").unwrap();
        let m = cfg.model_config(2, 1, 3).unwrap();
        let params = ModelParams::<Tensor<f32>>::init(&m, 5).unwrap();
        Checkpoint::new(&cfg, 2, 1, 3, &params)
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model().unwrap().to_vec(), c.params.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().encode();
        let e = Checkpoint::decode(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(e.contains("checkpoint byte") && e.contains("more bytes"), "{e}");
        let e = Checkpoint::decode(b"NOPE\n").unwrap_err().to_string();
        assert!(e.contains("bad magic"), "{e}");
    }
}
