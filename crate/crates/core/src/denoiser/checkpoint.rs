//! Denoiser checkpoints in the `TSDQ` container (payload kind 4).
//!
//! After the 7-byte header: the architecture (`u32` n_scales, channels,
//! kernel_size, depth; `u8` activation tag + `f64` slope; `u8` skip flag;
//! `u32` sn_power_iters, resolution), then per layer `u32` in/out/kernel/side,
//! kernel, bias, SN sigma, SN u, SN v as little-endian `f64`. An optional
//! resume block follows: `u8` flag, `u64` epoch, `u64` optimizer step, Adam
//! first and second moments, `u8` flag + averaged parameters.

use std::path::Path;

use super::DenoiserParams;
use crate::error::{Result, TomoError};
use crate::io::{write_bytes, Decoder, Encoder, PayloadKind};

/// Optimizer progress needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    /// Number of completed epochs.
    pub epoch: u64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub averaged: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub resume: Option<ResumeState>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut e = Encoder::with_header(PayloadKind::Checkpoint);
    ck.params.encode_into(&mut e);
    match &ck.resume {
        None => e.u8(0),
        Some(r) => {
            e.u8(1);
            e.u64(r.epoch);
            e.u64(r.step);
            e.f64s(&r.m);
            e.f64s(&r.v);
            match &r.averaged {
                None => e.u8(0),
                Some(a) => {
                    e.u8(1);
                    e.f64s(a);
                }
            }
        }
    }
    e.buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let (mut d, kind) = Decoder::open(bytes, path)?;
    if kind != PayloadKind::Checkpoint {
        return Err(d.format("expected a checkpoint payload"));
    }
    let params = DenoiserParams::decode_from(&mut d)?;
    let n = params.n_params();
    let resume = match d.u8()? {
        0 => None,
        1 => {
            let epoch = d.u64()?;
            let step = d.u64()?;
            let m = d.f64s(n)?;
            let v = d.f64s(n)?;
            let averaged = match d.u8()? {
                0 => None,
                1 => Some(d.f64s(n)?),
                t => return Err(d.format(format!("bad averaging flag {t}"))),
            };
            Some(ResumeState {
                epoch,
                step,
                m,
                v,
                averaged,
            })
        }
        t => return Err(d.format(format!("bad resume flag {t}"))),
    };
    d.finish()?;
    Ok(Checkpoint { params, resume })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| TomoError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
