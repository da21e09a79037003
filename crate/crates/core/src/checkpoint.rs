//! Policy checkpoint file: one ASCII header line, then little-endian f64
//! weights (policy net, value net, log-std), each net row-major layer by layer.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::{layer_sizes, observation_scale, BoundsPreset, PolicyNet, ACTION_DIM};

pub const MAGIC: &str = "rlmpc-policy";
pub const VERSION: u32 = 1;

fn sizes_str(s: &[usize]) -> String {
    s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn header(net: &PolicyNet, n: usize) -> String {
    format!(
        "{MAGIC} v{VERSION} policy={} value={} activation=tanh bounds={} robot_agnostic=true n={n}\n",
        sizes_str(&net.policy.sizes()),
        sizes_str(&net.value.sizes()),
        net.bounds_preset,
    )
}

pub fn write_to<W: Write>(net: &PolicyNet, w: &mut W) -> std::io::Result<()> {
    let mut data = net.policy.flatten();
    data.extend(net.value.flatten());
    data.extend(net.log_std.iter());
    w.write_all(header(net, data.len()).as_bytes())?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub fn to_bytes(net: &PolicyNet) -> Vec<u8> {
    let mut out = Vec::new();
    write_to(net, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<PolicyNet> {
    let bad = |m: String| Error::Checkpoint(m);
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header".into()))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut parts = head.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad("not a policy checkpoint".into()));
    }
    let version = parts.next().unwrap_or("");
    if version != format!("v{VERSION}") {
        return Err(bad(format!("unsupported version '{version}'")));
    }
    let mut fields = std::collections::BTreeMap::new();
    for p in parts {
        let (k, v) = p.split_once('=').ok_or_else(|| bad(format!("bad header field '{p}'")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing header field '{k}'")));
    if get("activation")? != "tanh" {
        return Err(bad(format!("unsupported activation '{}'", get("activation")?)));
    }
    if get("robot_agnostic")? != "true" {
        return Err(bad("policy is not robot-agnostic".into()));
    }
    let bounds: BoundsPreset = get("bounds")?.parse().map_err(|_| bad("unknown bounds preset".into()))?;
    let (ps, vs) = (sizes_str(&layer_sizes(ACTION_DIM)), sizes_str(&layer_sizes(1)));
    if get("policy")? != ps || get("value")? != vs {
        return Err(bad(format!("layer sizes {}/{} do not match {ps}/{vs}", get("policy")?, get("value")?)));
    }
    let n: usize = get("n")?.parse().map_err(|_| bad("bad weight count".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() != n * 8 {
        return Err(bad(format!("expected {} weight bytes, found {}", n * 8, body.len())));
    }
    let data: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut policy = Mlp::zeros(&layer_sizes(ACTION_DIM));
    let mut value = Mlp::zeros(&layer_sizes(1));
    let expected = policy.n_params() + value.n_params() + ACTION_DIM;
    if n != expected {
        return Err(bad(format!("expected {expected} weights, header says {n}")));
    }
    let k = policy.load_flat(&data);
    let k2 = value.load_flat(&data[k..]);
    let log_std = DVector::from_column_slice(&data[k + k2..]);
    let net = PolicyNet { policy, value, log_std, obs_scale: observation_scale(), bounds_preset: bounds };
    if !net.is_finite() {
        return Err(Error::NonFinite("checkpoint weights"));
    }
    Ok(net)
}

pub fn save(net: &PolicyNet, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(net, &mut f).map_err(|e| Error::io(path, e))
}


pub fn load(path: &Path) -> Result<PolicyNet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = PolicyNet::new(BoundsPreset::Uncertainty, 3);
        let back = from_bytes(&to_bytes(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn header_is_readable() {
        let bytes = to_bytes(&PolicyNet::zeros(BoundsPreset::HighSpeed));
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let head = std::str::from_utf8(&bytes[..nl]).unwrap();
        assert!(head.starts_with("rlmpc-policy v1 policy=340,256,32,256,18 value=340,256,32,256,1 activation=tanh"));
        assert!(head.contains("bounds=high_speed robot_agnostic=true"));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = to_bytes(&PolicyNet::zeros(BoundsPreset::Uncertainty));
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut v2 = bytes.clone();
        v2[14] = b'9';
        assert!(from_bytes(&v2).is_err());
        assert!(from_bytes(b"hello\n").is_err());
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let text = String::from_utf8_lossy(&bytes[..nl]).replace("tanh", "relu");
        let mut relu = text.into_bytes();
        relu.extend_from_slice(&bytes[nl..]);
        assert!(from_bytes(&relu).is_err());
    }
}
