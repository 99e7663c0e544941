use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Activation, RnnParams};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::provenance::Provenance;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// On-disk form of [`RnnParams`]. Weights are stored flat, row-major, as
/// JSON numbers in shortest round-trip form, so loading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnCheckpoint {
    pub version: u32,
    pub dims: Dims,
    pub activation: Activation,
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub b_h: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_o: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl From<&RnnParams> for RnnCheckpoint {
    fn from(p: &RnnParams) -> Self {
        RnnCheckpoint {
            version: CHECKPOINT_VERSION,
            dims: Dims {
                input: p.input_size(),
                hidden: p.hidden_size(),
                output: p.output_size(),
            },
            activation: p.activation,
            w_in: p.w_in.data().to_vec(),
            w_rec: p.w_rec.data().to_vec(),
            b_h: p.b_h.clone(),
            w_out: p.w_out.data().to_vec(),
            b_o: p.b_o.clone(),
            provenance: None,
        }
    }
}

impl RnnCheckpoint {
    pub fn into_params(self) -> Result<RnnParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let Dims {
            input,
            hidden,
            output,
        } = self.dims;
        let p = RnnParams {
            w_in: Matrix::from_vec(hidden, input, self.w_in)?,
            w_rec: Matrix::from_vec(hidden, hidden, self.w_rec)?,
            b_h: self.b_h,
            w_out: Matrix::from_vec(output, hidden, self.w_out)?,
            b_o: self.b_o,
            activation: self.activation,
        };
        p.validate()?;
        Ok(p)
    }
}

pub fn to_json(params: &RnnParams) -> Result<String> {
    Ok(serde_json::to_string_pretty(&RnnCheckpoint::from(params))?)
}

pub fn from_json(text: &str) -> Result<RnnParams> {
    serde_json::from_str::<RnnCheckpoint>(text)?.into_params()
}

pub fn save(params: &RnnParams, path: &Path) -> Result<()> {
    save_with_provenance(params, None, path)
}

pub fn save_with_provenance(params: &RnnParams, provenance: Option<&Provenance>, path: &Path) -> Result<()> {
    let ck = RnnCheckpoint {
        provenance: provenance.cloned(),
        ..RnnCheckpoint::from(params)
    };
    fs::write(path, serde_json::to_string_pretty(&ck)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RnnParams> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), scale in 1e-300f64..1e300) {
            let mut rng = Rng::new(seed);
            let mut p = RnnParams::init(3, 4, 2, Activation::Sigmoid, &mut rng);
            p.w_rec.scale(scale);
            let back = from_json(&to_json(&p).unwrap()).unwrap();
            let a: Vec<u64> = p.to_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.to_flat().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.activation, p.activation);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_missing_files() {
        let p = RnnParams::zeros(2, 2, 2, Activation::Tanh);
        let mut ck = RnnCheckpoint::from(&p);
        ck.w_rec.pop();
        assert!(ck.into_params().is_err());
        let missing = Path::new("/nonexistent/level_0.json");
        assert!(matches!(load(missing), Err(Error::MissingArtifact(_))));
    }
}
