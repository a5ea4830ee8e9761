use super::mlp::{Activation, Layer, Mlp, MlpSpec, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LORELMLP";
pub const VERSION: u32 = 1;

impl Mlp {
    /// Little-endian binary encoding: magic, version, spec, then weights and
    /// biases layer by layer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.spec.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.n_layers() as u32).to_le_bytes());
        for s in &self.spec.layer_sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for a in &self.spec.activations {
            out.push(a.tag());
        }
        out.extend_from_slice(&self.spec.dropout.to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::InvalidSpec(format!("{n_layers} layers in checkpoint")));
        }
        let layer_sizes = (0..=n_layers).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let activations = r
            .take(n_layers)?
            .iter()
            .map(|t| Activation::from_tag(*t).ok_or_else(|| Error::InvalidSpec(format!("activation tag {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let dropout = r.f64()?;
        let spec = MlpSpec { layer_sizes, activations, dropout };
        spec.validate()?;
        let mut layers = Vec::with_capacity(n_layers);
        for w in spec.layer_sizes.windows(2) {
            let mut layer = Layer::zeros(w[0], w[1]);
            for v in layer.values_mut() {
                *v = r.f64()?;
            }
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(Error::InvalidSpec(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Mlp::from_params(spec, Params { layers })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(Error::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Mlp {
        Mlp::new(MlpSpec::relu_net(5, &[7, 3], 2, Activation::Sigmoid, 0.2), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let bytes = n.to_bytes();
        let back = Mlp::from_bytes(&bytes).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.to_bytes(), bytes);
        let x = [0.1, -0.4, 0.9, 0.0, 2.0];
        assert_eq!(back.predict_one(&x).unwrap(), n.predict_one(&x).unwrap());
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut bytes = net().to_bytes();
        bytes[8] = 7;
        assert!(matches!(Mlp::from_bytes(&bytes), Err(Error::Version { found: 7, expected: VERSION })));
        let mut bytes = net().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Mlp::from_bytes(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncation_is_typed() {
        let bytes = net().to_bytes();
        for cut in [4, 10, 20, bytes.len() - 1] {
            assert!(matches!(Mlp::from_bytes(&bytes[..cut]), Err(Error::Truncated)), "cut {cut}");
        }
    }
}
