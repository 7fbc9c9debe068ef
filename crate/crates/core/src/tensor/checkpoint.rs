//! Binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SSANCKPT"
//! u32     format version
//! u32     parameter count P
//! P x { u32 name_len, name (utf-8), u8 trainable, u32 rank, rank x u64 dim, numel x f64 }
//! u8      1 if optimizer state follows, else 0
//! [ f64 lr, f64 beta1, f64 beta2, f64 eps, u64 step,
//!   P x { numel x f64 first moment, numel x f64 second moment } ]
//! ```

use std::io::{Read, Write};

use super::{Adam, AdamConfig, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSANCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write<W: Write>(mut w: W, store: &ParamStore, optimizer: Option<&Adam>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.trainable as u8])?;
        w.write_all(&(p.tensor.shape().len() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, p.tensor.data())?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            let c = opt.config;
            write_f64s(&mut w, &[c.lr, c.beta1, c.beta2, c.eps])?;
            w.write_all(&opt.step.to_le_bytes())?;
            for (m, v) in opt.first.iter().zip(&opt.second) {
                write_f64s(&mut w, m)?;
                write_f64s(&mut w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<(ParamStore, Option<Adam>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("non-utf8 name".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel = shape.iter().product();
        let data = read_f64s(&mut r, numel)?;
        let id = store.register(name, Tensor::new(shape, data)?)?;
        store.set_trainable(id, flag[0] == 1);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = if flag[0] == 1 {
        let c = read_f64s(&mut r, 4)?;
        let config = AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
        };
        let mut opt = Adam::new(config, &store);
        opt.step = read_u64(&mut r)?;
        for i in 0..store.len() {
            let n = opt.first[i].len();
            opt.first[i] = read_f64s(&mut r, n)?;
            opt.second[i] = read_f64s(&mut r, n)?;
        }
        Some(opt)
    } else {
        None
    };
    Ok((store, optimizer))
}

pub fn save(path: &std::path::Path, store: &ParamStore, optimizer: Option<&Adam>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(f, store, optimizer)
}

pub fn load(path: &std::path::Path) -> Result<(ParamStore, Option<Adam>)> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut store = ParamStore::new();
        let a = store
            .register("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 1e-300]).unwrap())
            .unwrap();
        let b = store.register("b", Tensor::full(&[3], 0.5)).unwrap();
        store.set_trainable(b, false);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        store.accumulate_grad(a, &[0.1, 0.2, 0.3, 0.4]);
        opt.step(&mut store).unwrap();

        let mut buf = Vec::new();
        write(&mut buf, &store, Some(&opt)).unwrap();
        let (back, back_opt) = read(buf.as_slice()).unwrap();
        let back_opt = back_opt.unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get(a).tensor, store.get(a).tensor);
        assert!(!back.get(b).trainable);
        assert_eq!(back_opt.step, 1);
        assert_eq!(back_opt.first, opt.first);
        assert_eq!(back_opt.second, opt.second);
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(read(&b"NOTACKPTxxxx"[..]), Err(Error::Checkpoint(_))));
    }
}
