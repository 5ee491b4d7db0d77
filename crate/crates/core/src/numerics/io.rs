//! Little-endian tensor files: `"IFT1"`, u32 rank, rank × u32 dims, f32 payload.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"IFT1";

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut words = bytes
        .get(4..)
        .ok_or("truncated header")?
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]]);
    if &bytes[..4] != TENSOR_MAGIC {
        return Err("bad magic, expected IFT1".into());
    }
    if (bytes.len() - 4) % 4 != 0 {
        return Err("payload is not a whole number of 32-bit words".into());
    }
    let rank = u32::from_le_bytes(words.next().ok_or("missing rank")?) as usize;
    let shape = (0..rank)
        .map(|_| words.next().map(|w| u32::from_le_bytes(w) as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or("truncated dims")?;
    let data: Vec<f32> = words.map(f32::from_le_bytes).collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"IFT1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(decode_tensor(b"IFT").is_err());
        assert!(decode_tensor(b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").is_err());
        let mut b = encode_tensor(&Tensor::new(vec![3], vec![1.0f32, 2.0, 3.0]).unwrap());
        b.truncate(b.len() - 4);
        assert!(decode_tensor(&b).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut rng = crate::numerics::rng::seed_rng(seed);
            let data: Vec<f32> = (0..n).map(|_| rng.normal(0.0, 10.0) as f32).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
