//! Network checkpoint I/O ("PATN" format).
//!
//! Layout, all little-endian (see docs/formats.md for the full byte map):
//!   "PATN", version u32 (= 1), net count u32, then per net:
//!     in_channels u32, field_h u32, field_w u32,
//!     leaky_slope f32, residual_channel i32 (-1 = none), layer count u32,
//!     per layer: in_ch u32, out_ch u32, kernel u32 (= 3), flags u32
//!       (bit 0 = spectral state present), weight f32s (out*in*9, row-major),
//!       bias f32s (out), and when flagged: u f32s (in*H*W), v f32s (out*H*W).
//!
//! Weights are trained in f64 and stored as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array3, ArrayD, IxDyn};

use crate::error::{PatError, Result};

use super::net::{ConvLayer, NetParams, SpectralState};

pub const MAGIC: &[u8; 4] = b"PATN";
pub const VERSION: u32 = 1;

pub fn save_nets(path: &Path, nets: &[&NetParams]) -> Result<()> {
    let file = File::create(path).map_err(|e| PatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| PatError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(nets.len() as u32).to_le_bytes()).map_err(io_err)?;
    for net in nets {
        let (h, wd) = net.field_shape;
        w.write_all(&(net.in_channels as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(h as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(wd as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(net.leaky_slope as f32).to_le_bytes()).map_err(io_err)?;
        let rc: i32 = net.residual_channel.map_or(-1, |c| c as i32);
        w.write_all(&rc.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(net.layers.len() as u32).to_le_bytes()).map_err(io_err)?;
        for layer in &net.layers {
            let (out_ch, in_ch) = (layer.out_channels(), layer.in_channels());
            w.write_all(&(in_ch as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(&(out_ch as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(&3u32.to_le_bytes()).map_err(io_err)?;
            let flags: u32 = if layer.spectral.is_some() { 1 } else { 0 };
            w.write_all(&flags.to_le_bytes()).map_err(io_err)?;
            for &v in layer.weight.iter() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
            }
            for &v in layer.bias.iter() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
            }
            if let Some(s) = &layer.spectral {
                for &v in s.u.iter() {
                    w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
                }
                for &v in s.v.iter() {
                    w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_nets(path: &Path) -> Result<Vec<NetParams>> {
    let file = File::open(path).map_err(|e| PatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| PatError::io(path, e);
    let bad = |reason: String| PatError::TensorFile {
        path: path.to_path_buf(),
        reason,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut b4).map_err(io_err)?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let net_count = read_u32(&mut r)? as usize;
    if net_count > 64 {
        return Err(bad(format!("unreasonable net count {net_count}")));
    }
    let mut nets = Vec::with_capacity(net_count);
    for _ in 0..net_count {
        let in_channels = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let wd = read_u32(&mut r)? as usize;
        let mut f4 = [0u8; 4];
        r.read_exact(&mut f4).map_err(io_err)?;
        let leaky_slope = f32::from_le_bytes(f4) as f64;
        r.read_exact(&mut f4).map_err(io_err)?;
        let rc = i32::from_le_bytes(f4);
        let layer_count = read_u32(&mut r)? as usize;
        if layer_count == 0 || layer_count > 64 {
            return Err(bad(format!("unreasonable layer count {layer_count}")));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let in_ch = read_u32(&mut r)? as usize;
            let out_ch = read_u32(&mut r)? as usize;
            let kernel = read_u32(&mut r)? as usize;
            if kernel != 3 {
                return Err(bad(format!("unsupported kernel {kernel}")));
            }
            let flags = read_u32(&mut r)?;
            let read_f32s = |r: &mut BufReader<File>, n: usize| -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(n);
                let mut buf = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut buf).map_err(io_err)?;
                    out.push(f32::from_le_bytes(buf) as f64);
                }
                Ok(out)
            };
            let weight = ArrayD::from_shape_vec(
                IxDyn(&[out_ch, in_ch, 3, 3]),
                read_f32s(&mut r, out_ch * in_ch * 9)?,
            )
            .map_err(|e| bad(e.to_string()))?;
            let bias = Array1::from_vec(read_f32s(&mut r, out_ch)?);
            let spectral = if flags & 1 != 0 {
                let u = Array3::from_shape_vec((in_ch, h, wd), read_f32s(&mut r, in_ch * h * wd)?)
                    .map_err(|e| bad(e.to_string()))?;
                let v = Array3::from_shape_vec((out_ch, h, wd), read_f32s(&mut r, out_ch * h * wd)?)
                    .map_err(|e| bad(e.to_string()))?;
                Some(SpectralState { u, v })
            } else {
                None
            };
            layers.push(ConvLayer {
                weight,
                bias,
                spectral,
            });
        }
        nets.push(NetParams {
            layers,
            leaky_slope,
            residual_channel: if rc < 0 { None } else { Some(rc as usize) },
            in_channels,
            field_shape: (h, wd),
        });
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::net::NetConfig;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip_preserves_structure() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let cfg = NetConfig {
            hidden_channels: 5,
            ..NetConfig::small(2, (7, 6))
        };
        let a = NetParams::init(&cfg, &mut rng).unwrap();
        let b = NetParams::init(&NetConfig::small(1, (7, 6)), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.patn");
        save_nets(&p, &[&a, &b]).unwrap();
        let loaded = load_nets(&p).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].in_channels, 2);
        assert_eq!(loaded[0].layers.len(), 3);
        assert_eq!(loaded[1].in_channels, 1);
        // f32 storage: saving the loaded nets again is bit-stable.
        let p2 = dir.path().join("c2.patn");
        save_nets(&p2, &[&loaded[0], &loaded[1]]).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}
