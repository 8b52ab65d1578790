//! Binary parameter files.
//!
//! Layout: `u32` little-endian length of a JSON header, the header itself,
//! then every tensor as little-endian `f64` in declaration order
//! (`w0, b0, w1, b1, ...`; weights row-major `[in, out]`).

use super::adam::{AdamConfig, AdamState};
use super::mlp::{Layer, MlpParams};
use super::tape::Activation;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct MlpHeader {
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    config: AdamConfig,
    shapes: Vec<Vec<usize>>,
}

fn encode(header: &impl Serialize, tensors: &[&Tensor]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let floats: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(4 + json.len() + 8 * floats);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!("need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn header<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let start = self.pos;
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| Error::format(start, format!("bad header: {e}")))
    }

    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(8 * n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.pos, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_mlp(params: &MlpParams) -> Vec<u8> {
    let header = MlpHeader {
        layers: params
            .layers()
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
            })
            .collect(),
    };
    let tensors: Vec<&Tensor> = params.tensors().collect();
    encode(&header, &tensors)
}

pub fn decode_mlp(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { bytes, pos: 0 };
    let header: MlpHeader = r.header()?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for l in header.layers {
        layers.push(Layer {
            weight: r.tensor(vec![l.in_dim, l.out_dim])?,
            bias: r.tensor(vec![1, l.out_dim])?,
            activation: l.activation,
        });
    }
    r.finish()?;
    MlpParams::from_layers(layers)
}

pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let header = AdamHeader {
        step: state.step,
        config: state.config,
        shapes: state.m.iter().map(|t| t.shape().to_vec()).collect(),
    };
    let tensors: Vec<&Tensor> = state.m.iter().chain(&state.v).collect();
    encode(&header, &tensors)
}

pub fn decode_adam(bytes: &[u8]) -> Result<AdamState> {
    let mut r = Reader { bytes, pos: 0 };
    let header: AdamHeader = r.header()?;
    let m = header
        .shapes
        .iter()
        .map(|s| r.tensor(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    let v = header
        .shapes
        .iter()
        .map(|s| r.tensor(s.clone()))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(AdamState {
        m,
        v,
        step: header.step,
        config: header.config,
    })
}

pub fn save_mlp(params: &MlpParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mlp(params)).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mlp(&bytes)
}

pub fn save_adam(state: &AdamState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_adam(state)).map_err(|e| Error::io(path, e))
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_adam(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::MlpSpec;
    use rand::SeedableRng;

    #[test]
    fn mlp_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::init(&MlpSpec::new(4, vec![8, 8], 2), &mut rng);
        let bytes = encode_mlp(&net);
        assert_eq!(
            bytes.len() - 4 - u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize,
            8 * net.num_params()
        );
        assert_eq!(decode_mlp(&bytes).unwrap(), net);
    }

    #[test]
    fn adam_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let net = MlpParams::init(&MlpSpec::new(2, vec![3], 1), &mut rng);
        let mut st = AdamState::new(&net, AdamConfig::default());
        st.step = 17;
        st.m[0].data_mut()[1] = 0.125;
        st.v[2].data_mut()[0] = 3.5e-9;
        assert_eq!(decode_adam(&encode_adam(&st)).unwrap(), st);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::init(&MlpSpec::new(2, vec![3], 1), &mut rng);
        let bytes = encode_mlp(&net);
        let cut = &bytes[..bytes.len() - 3];
        match decode_mlp(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset > 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
