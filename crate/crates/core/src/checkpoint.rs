//! Text checkpoints: a version line, a few header fields, then every
//! tensor as a `tensor <name> <rank> <dims..>` line followed by one line of
//! shortest round-trip decimal values.
//!
//! ```text
//! VISLAB-CHECKPOINT v1
//! model updn
//! config 3f2a9c0d81b4e6a7
//! tensors 2
//! tensor embed 2 3 2
//! 0.1 -0.25 1e-3 0 2 3
//! tensor bias 1 2
//! 0 0
//! end
//! ```

use crate::error::{LabError, Result};
use crate::io::write_atomic;
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &str = "VISLAB-CHECKPOINT v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub config_hash: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(model: &str, config_hash: &str, params: &ParamSet) -> Self {
        Checkpoint {
            model: model.into(),
            config_hash: config_hash.into(),
            tensors: params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MAGIC}\nmodel {}\nconfig {}\ntensors {}\n",
            self.model,
            self.config_hash,
            self.tensors.len()
        );
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("tensor {name} {} {}\n", t.rank(), dims.join(" ")));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Checkpoint> {
        let err = |tensor: &str, message: String| LabError::Checkpoint {
            tensor: tensor.into(),
            message,
        };
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != MAGIC {
            return Err(err("*", format!("unsupported header `{magic}`")));
        }
        let mut field = |name: &str| -> Result<String> {
            let l = lines.next().ok_or_else(|| err("*", format!("missing `{name}` line")))?;
            l.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| err("*", format!("expected `{name}`, found `{l}`")))
        };
        let model = field("model")?;
        let config_hash = field("config")?;
        let count: usize = field("tensors")?
            .parse()
            .map_err(|_| err("*", "bad tensor count".into()))?;
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let head = lines
                .next()
                .ok_or_else(|| err("*", format!("truncated before tensor {i}")))?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() < 3 || parts[0] != "tensor" {
                return Err(err("*", format!("bad tensor header `{head}`")));
            }
            let name = parts[1];
            let rank: usize = parts[2].parse().map_err(|_| err(name, "bad rank".into()))?;
            if parts.len() != 3 + rank {
                return Err(err(name, "rank does not match dimension count".into()));
            }
            let shape = parts[3..]
                .iter()
                .map(|d| d.parse::<usize>().map_err(|_| err(name, format!("bad dimension `{d}`"))))
                .collect::<Result<Vec<_>>>()?;
            let body = lines.next().ok_or_else(|| err(name, "missing values".into()))?;
            let data = body
                .split(' ')
                .filter(|v| !v.is_empty())
                .map(|v| v.parse::<f64>().map_err(|_| err(name, format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(err(name, format!("expected {expected} values, found {}", data.len())));
            }
            let t = Tensor::new(shape, data).map_err(|e| err(name, e.to_string()))?;
            tensors.push((name.to_string(), t));
        }
        if lines.next() != Some("end") {
            return Err(err("*", "missing end marker".into()));
        }
        Ok(Checkpoint {
            model,
            config_hash,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Checkpoint::parse(&text)
    }

    /// Moves the tensors into `params` after checking the model kind and
    /// every name and shape; `params` is untouched on error.
    pub fn restore(self, model: &str, params: &mut ParamSet) -> Result<()> {
        if self.model != model {
            return Err(LabError::Checkpoint {
                tensor: "*".into(),
                message: format!("checkpoint holds a `{}` model, expected `{model}`", self.model),
            });
        }
        params.assign(self.tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::matrix(2, 3, vec![0.1, -0.2, 1.0 / 3.0, 1e-300, 0.0, -7.5e12]).unwrap());
        p.add("b", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0]));
        p
    }

    #[test]
    fn roundtrip_is_value_exact_and_byte_stable() {
        let text = Checkpoint::from_params("updn", "abc", &params()).to_text();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back.tensors, Checkpoint::from_params("updn", "abc", &params()).tensors);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn truncation_is_a_clean_error() {
        let text = Checkpoint::from_params("updn", "abc", &params()).to_text();
        for cut in [10, text.len() / 2, text.len() - 5] {
            assert!(matches!(Checkpoint::parse(&text[..cut]), Err(LabError::Checkpoint { .. })));
        }
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let mut other = ParamSet::new();
        other.add("w", Tensor::zeros(&[2, 4]));
        other.add("b", Tensor::zeros(&[2]));
        let ck = Checkpoint::from_params("updn", "abc", &params());
        let before = other.clone();
        match ck.restore("updn", &mut other) {
            Err(LabError::Checkpoint { tensor, .. }) => assert_eq!(tensor, "w"),
            r => panic!("{r:?}"),
        }
        assert_eq!(other.tensors(), before.tensors());
    }
}
