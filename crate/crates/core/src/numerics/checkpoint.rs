use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, NumericsError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk network snapshot.
///
/// `schedule` and `metadata` are opaque to this module; owners of a network
/// (diffusion model, reward model) put their own constants there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub schedule: serde_json::Value,
    pub seed: u64,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_network(kind: &str, net: &Mlp, seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.to_string(),
            widths: net.widths().to_vec(),
            activation: net.activation(),
            schedule: serde_json::Value::Null,
            seed,
            metadata: serde_json::Value::Null,
            params: net.params().values().to_vec(),
        }
    }

    pub fn network(&self) -> Result<Mlp, NumericsError> {
        Mlp::from_parameters(&self.widths, self.activation, self.params.clone())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    /// Parse and validate: version, architecture, parameter count, finiteness.
    pub fn from_json(text: &str) -> Result<Self, NumericsError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported format_version {}",
                ckpt.format_version
            )));
        }
        if ckpt.widths.len() < 2 || ckpt.widths.contains(&0) || ckpt.widths.iter().any(|&w| w > 1 << 16) {
            return Err(NumericsError::InvalidArchitecture(format!("{:?}", ckpt.widths)));
        }
        let expected = ckpt
            .widths
            .windows(2)
            .try_fold(0usize, |acc, w| acc.checked_add(w[0].checked_mul(w[1])?.checked_add(w[1])?))
            .ok_or_else(|| NumericsError::InvalidArchitecture(format!("{:?}", ckpt.widths)))?;
        if expected != ckpt.params.len() {
            return Err(NumericsError::DimensionMismatch {
                what: "checkpoint parameters",
                expected,
                got: ckpt.params.len(),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn round_trip_preserves_bits() {
        let net = Mlp::init(&[3, 4, 2], Activation::Tanh, &mut Rng::new(4)).unwrap();
        let ckpt = Checkpoint::from_network("test", &net, 4);
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.network().unwrap(), net);
    }

    #[test]
    fn rejects_bad_headers() {
        let net = Mlp::zeros(&[2, 2], Activation::Relu).unwrap();
        let mut ckpt = Checkpoint::from_network("test", &net, 0);
        ckpt.format_version = 99;
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
        ckpt.format_version = CHECKPOINT_FORMAT_VERSION;
        ckpt.params.pop();
        assert!(Checkpoint::from_json(&ckpt.to_json()).is_err());
        assert!(Checkpoint::from_json("{not json").is_err());
    }
}
