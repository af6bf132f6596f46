//! Checkpoint files: a `key value` text manifest terminated by a line
//! `end`, followed by little-endian f64 arrays (parameters in layer order,
//! then the Adam first and second moments when present). Floats in the
//! manifest are written with 17 significant digits, so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleParams};

use super::network::{Activation, Architecture, Parameterization, ScoreNetwork};
use super::train::{Adam, AdamParams};

const MAGIC: &str = "dptraverse-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ScoreNetwork,
    pub optimizer: Option<Adam>,
    pub seed: u64,
    pub step: usize,
    pub schedule: ScheduleParams,
}

impl Checkpoint {
    pub fn new(
        net: &ScoreNetwork,
        optimizer: Option<&Adam>,
        seed: u64,
        step: usize,
        schedule: &NoiseSchedule,
    ) -> Self {
        Self {
            net: net.clone(),
            optimizer: optimizer.cloned(),
            seed,
            step,
            schedule: ScheduleParams {
                steps: schedule.steps(),
                beta_min: schedule.beta(1),
                beta_max: schedule.beta(schedule.steps()),
            },
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let arch = ck.net.architecture();
    let mut m = String::new();
    let mut line = |k: &str, v: String| {
        m.push_str(k);
        m.push(' ');
        m.push_str(&v);
        m.push('\n');
    };
    line(MAGIC, VERSION.to_string());
    line("data_dim", arch.data_dim.to_string());
    line("x_widths", join(&arch.x_widths));
    line("embed_dim", arch.embed_dim.to_string());
    line("t_widths", join(&arch.t_widths));
    line("fusion_widths", join(&arch.fusion_widths));
    line("activation", arch.activation.as_str().into());
    line("parameterization", arch.parameterization.as_str().into());
    line("schedule_steps", ck.schedule.steps.to_string());
    line("schedule_beta_min", fmt_f64(ck.schedule.beta_min));
    line("schedule_beta_max", fmt_f64(ck.schedule.beta_max));
    line("seed", ck.seed.to_string());
    line("step", ck.step.to_string());
    line("param_count", ck.net.param_count().to_string());
    line("optimizer", "adam".into());
    match &ck.optimizer {
        Some(opt) => {
            line("optimizer_state", "1".into());
            line("adam_beta1", fmt_f64(opt.params.beta1));
            line("adam_beta2", fmt_f64(opt.params.beta2));
            line("adam_eps", fmt_f64(opt.params.eps));
            line("adam_t", opt.t.to_string());
        }
        None => line("optimizer_state", "0".into()),
    }
    m.push_str("end\n");
    let mut out = m.into_bytes();
    let mut put = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(ck.net.params());
    if let Some(opt) = &ck.optimizer {
        put(&opt.m);
        put(&opt.v);
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut fields = BTreeMap::new();
    let mut pos = 0usize;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| bad("manifest is not terminated by 'end'"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("manifest is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing manifest key '{k}'")));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| bad(format!("bad integer for '{k}'")))
    };
    let float = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| bad(format!("bad float for '{k}'")))
    };
    let list = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("bad width list for '{k}'"))))
            .collect()
    };
    let version: u32 = get(MAGIC)?.parse().map_err(|_| bad("bad version"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let arch = Architecture {
        data_dim: num("data_dim")?,
        x_widths: list("x_widths")?,
        embed_dim: num("embed_dim")?,
        t_widths: list("t_widths")?,
        fusion_widths: list("fusion_widths")?,
        activation: Activation::parse(get("activation")?).ok_or_else(|| bad("unknown activation"))?,
        parameterization: Parameterization::parse(get("parameterization")?)
            .ok_or_else(|| bad("unknown parameterization"))?,
    };
    let schedule = ScheduleParams {
        steps: num("schedule_steps")?,
        beta_min: float("schedule_beta_min")?,
        beta_max: float("schedule_beta_max")?,
    };
    let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad seed"))?;
    let step = num("step")?;
    let mut net = ScoreNetwork::zeros(arch, schedule.steps)?;
    let n = net.param_count();
    if num("param_count")? != n {
        return Err(bad("param_count does not match the architecture"));
    }
    if get("optimizer")? != "adam" {
        return Err(bad("unknown optimizer"));
    }
    let has_state = match get("optimizer_state")?.as_str() {
        "1" => true,
        "0" => false,
        _ => return Err(bad("optimizer_state must be 0 or 1")),
    };
    let payload = &bytes[pos..];
    let arrays = if has_state { 3 } else { 1 };
    if payload.len() != arrays * n * 8 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            arrays * n * 8
        )));
    }
    let read = |i: usize| -> Vec<f64> {
        payload[i * n * 8..(i + 1) * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    net.params_mut().copy_from_slice(&read(0));
    let optimizer = if has_state {
        Some(Adam {
            params: AdamParams {
                beta1: float("adam_beta1")?,
                beta2: float("adam_beta2")?,
                eps: float("adam_eps")?,
            },
            m: read(1),
            v: read(2),
            t: get("adam_t")?.parse().map_err(|_| bad("bad adam_t"))?,
        })
    } else {
        None
    };
    Ok(Checkpoint {
        net,
        optimizer,
        seed,
        step,
        schedule,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(ck))?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
