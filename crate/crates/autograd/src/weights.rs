//! `MIFNW1` weights container.
//!
//! Layout (little-endian): the 6-byte magic `MIFNW1`, then records of
//! `u16` name length, UTF-8 name, `u8` ndim, `u32` dims, `f32` values,
//! until end of file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::real::Real;

pub const MAGIC: &[u8; 6] = b"MIFNW1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for a in arrays {
        let name = a.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("name too long: {}", a.name)))?;
        if a.dims.iter().product::<usize>() != a.values.len() {
            return Err(Error::Format(format!("`{}`: dims {:?} do not match data", a.name, a.dims)));
        }
        buf.write_all(&name_len.to_le_bytes())?;
        buf.write_all(name)?;
        buf.push(a.dims.len() as u8);
        for d in &a.dims {
            let d = u32::try_from(*d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            buf.write_all(&d.to_le_bytes())?;
        }
        for v in &a.values {
            buf.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(buf)
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic, expected MIFNW1".into()));
    }
    let mut r = &bytes[MAGIC.len()..];
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = u16::from_le_bytes(read_exact(&mut r, 2, "name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read_exact(&mut r, len, "name")?)
            .map_err(|_| Error::Format("name is not UTF-8".into()))?;
        let ndim = read_exact(&mut r, 1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(read_exact(&mut r, 4, "dims")?.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let raw = read_exact(&mut r, n * 4, &name)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedArray { name, dims, values });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, arrays: &[NamedArray]) -> Result<()> {
    fs::write(path, encode(arrays)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedArray>> {
    decode(&fs::read(path)?)
}

/// Snapshot of every persistent tensor of a module.
pub fn state_of<T: Real, M: Module<T> + ?Sized>(module: &M) -> Vec<NamedArray> {
    module
        .named_tensors()
        .into_iter()
        .map(|(name, t)| NamedArray {
            name,
            dims: t.shape().to_vec(),
            values: t.to_f32(),
        })
        .collect()
}

/// Copies arrays into the module's tensors by name. Every module tensor must
/// be present with a matching shape; extra arrays are ignored.
pub fn load_into<T: Real, M: Module<T> + ?Sized>(module: &M, arrays: &[NamedArray]) -> Result<()> {
    for (name, t) in module.named_tensors() {
        let a = arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if a.dims != t.shape() {
            return Err(Error::Shape {
                op: "load_into",
                lhs: t.shape().to_vec(),
                rhs: a.dims.clone(),
            });
        }
        let vals: Vec<T> = a.values.iter().map(|v| T::of(*v as f64)).collect();
        t.set_data(&vals);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BatchNorm2d;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            values in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..40),
            name in "[a-z._0-9]{1,20}",
        ) {
            let arrays = vec![NamedArray { name, dims: vec![values.len()], values }];
            let back = decode(&encode(&arrays).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[0].values), bits(&arrays[0].values));
            prop_assert_eq!(&back[0].name, &arrays[0].name);
        }
    }

    #[test]
    fn truncated_and_bad_magic_are_format_errors() {
        let arrays = vec![NamedArray {
            name: "w".into(),
            dims: vec![2, 2],
            values: vec![1.0, 2.0, 3.0, 4.0],
        }];
        let bytes = encode(&arrays).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        assert!(matches!(decode(b"NOTMIF"), Err(Error::Format(_))));
    }

    #[test]
    fn module_state_round_trip() {
        let bn = BatchNorm2d::<f32>::new(3);
        bn.gamma.set_data(&[0.5, 1.5, 2.5]);
        bn.stats.var.set_data(&[9.0, 8.0, 7.0]);
        let state = state_of(&bn);
        let other = BatchNorm2d::<f32>::new(3);
        load_into(&other, &state).unwrap();
        assert_eq!(other.gamma.to_vec(), vec![0.5, 1.5, 2.5]);
        assert_eq!(other.stats.var.to_vec(), vec![9.0, 8.0, 7.0]);

        let wrong = BatchNorm2d::<f32>::new(2);
        assert!(load_into(&wrong, &state).is_err());
    }
}
