//! Simulated paths and their on-disk formats.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::IntegratorConfig;
use crate::error::{Error, Result};
use crate::rng::StreamId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub seed: Option<StreamId>,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(system: &str, seed: Option<StreamId>, cfg: &IntegratorConfig) -> Self {
        Self {
            system: system.to_string(),
            seed,
            config_hash: cfg.hash(),
        }
    }
}

/// One applied jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpAnnotation {
    /// Index into [`Trajectory::times`].
    pub time_index: usize,
    /// Which noise path the jump came from.
    pub path: usize,
    /// Index into that path's jump list.
    pub noise_index: usize,
    pub component: usize,
    pub size: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// States at the noise grid refined by the jump times. The state stored at a
/// jump time is the post-jump value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    jumps: Vec<JumpAnnotation>,
    jump_flags: Vec<bool>,
    provenance: Provenance,
}

impl Trajectory {
    pub(crate) fn new(dim: usize, provenance: Provenance) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            jumps: Vec::new(),
            jump_flags: Vec::new(),
            provenance,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.jump_flags.push(false);
    }

    pub(crate) fn overwrite_last(&mut self, x: &[f64]) {
        let n = self.states.len();
        self.states[n - self.dim..].copy_from_slice(x);
    }

    pub(crate) fn flag_last(&mut self) {
        if let Some(f) = self.jump_flags.last_mut() {
            *f = true;
        }
    }

    pub(crate) fn annotate(&mut self, a: JumpAnnotation) {
        self.flag_last();
        self.jumps.push(a);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn jumps(&self) -> &[JumpAnnotation] {
        &self.jumps
    }

    pub fn jump_flags(&self) -> &[bool] {
        &self.jump_flags
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Rows `t, q₁…qₙ, p₁…pₙ, jump_flag` with shortest round-trip floats.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let n = self.dim / 2;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.push("jump_flag".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, &t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.state(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", self.jump_flags[i] as u8)?;
        }
        Ok(())
    }

    /// Little-endian binary layout:
    ///
    /// ```text
    /// magic  b"SHTRAJ01"
    /// u32    dim
    /// u64    number of times N
    /// u64    number of jumps J
    /// str    system name        (u32 length + UTF-8 bytes)
    /// str    config hash
    /// u8     seed present; then u64 master, u64 path, u8 lane if 1
    /// f64×N  times
    /// f64×N·dim states, row by row
    /// u8×N   jump flags
    /// J × { u64 time_index, u64 path, u64 noise_index, u64 component,
    ///       f64 size, f64×dim pre, f64×dim post }
    /// ```
    pub fn write_binary(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        w.write_all(&(self.jumps.len() as u64).to_le_bytes())?;
        write_str(&mut w, &self.provenance.system)?;
        write_str(&mut w, &self.provenance.config_hash)?;
        match self.provenance.seed {
            None => w.write_all(&[0])?,
            Some(s) => {
                w.write_all(&[1])?;
                w.write_all(&s.master.to_le_bytes())?;
                w.write_all(&s.path.to_le_bytes())?;
                w.write_all(&[s.lane])?;
            }
        }
        for v in self.times.iter().chain(&self.states) {
            w.write_all(&v.to_le_bytes())?;
        }
        let flags: Vec<u8> = self.jump_flags.iter().map(|&f| f as u8).collect();
        w.write_all(&flags)?;
        for a in &self.jumps {
            for u in [a.time_index, a.path, a.noise_index, a.component] {
                w.write_all(&(u as u64).to_le_bytes())?;
            }
            w.write_all(&a.size.to_le_bytes())?;
            for v in a.pre.iter().chain(&a.post) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a trajectory file".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let nj = read_u64(&mut r)? as usize;
        let system = read_str(&mut r)?;
        let config_hash = read_str(&mut r)?;
        let seed = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let master = read_u64(&mut r)?;
                let path = read_u64(&mut r)?;
                let lane = read_u8(&mut r)?;
                Some(StreamId { master, path, lane })
            }
            b => return Err(Error::Format(format!("bad seed flag {b}"))),
        };
        let times = read_f64s(&mut r, n)?;
        let states = read_f64s(&mut r, n * dim)?;
        let mut flags = vec![0u8; n];
        r.read_exact(&mut flags)?;
        let mut jumps = Vec::with_capacity(nj);
        for _ in 0..nj {
            let time_index = read_u64(&mut r)? as usize;
            let path = read_u64(&mut r)? as usize;
            let noise_index = read_u64(&mut r)? as usize;
            let component = read_u64(&mut r)? as usize;
            let size = f64::from_le_bytes(read_array(&mut r)?);
            let pre = read_f64s(&mut r, dim)?;
            let post = read_f64s(&mut r, dim)?;
            if time_index >= n {
                return Err(Error::Format("jump annotation points past the end".into()));
            }
            jumps.push(JumpAnnotation {
                time_index,
                path,
                noise_index,
                component,
                size,
                pre,
                post,
            });
        }
        Ok(Self {
            dim,
            times,
            states,
            jumps,
            jump_flags: flags.into_iter().map(|f| f != 0).collect(),
            provenance: Provenance {
                system,
                seed,
                config_hash,
            },
        })
    }
}

const MAGIC: &[u8; 8] = b"SHTRAJ01";

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
        .collect()
}
