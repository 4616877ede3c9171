//! Binary dump of a trace collection. See `docs/format.md`.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  "AMTR"       4 bytes
//! version u16         = 1
//! kind    u8          0 two-state, 1 r-state, 2 markov
//! pad     u8          = 0
//! r       u16
//! n       u32
//! m       u64
//! l       u64
//! [markov only] edge count u32, then (from u8, to u8) pairs
//! W: n rows of l bytes, then X: n rows of m bytes
//! ```

use std::io::{Read, Write};

use crate::error::{ensure, Error, Result};
use crate::population::ModelSpec;
use crate::tracegen::{Trace, TraceCollection};

pub const MAGIC: &[u8; 4] = b"AMTR";
pub const VERSION: u16 = 1;

/// Traces read back from a dump (parameters are not stored).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDump {
    pub spec: ModelSpec,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub training: Vec<Trace>,
    pub actual: Vec<Trace>,
}

fn kind_code(spec: &ModelSpec) -> u8 {
    match spec {
        ModelSpec::TwoState => 0,
        ModelSpec::RState { .. } => 1,
        ModelSpec::Markov(_) => 2,
    }
}

pub fn write_dump<W: Write>(out: &mut W, c: &TraceCollection) -> std::io::Result<()> {
    let r = c.spec.num_states();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[kind_code(&c.spec), 0])?;
    out.write_all(&(r as u16).to_le_bytes())?;
    out.write_all(&(c.n as u32).to_le_bytes())?;
    out.write_all(&(c.m as u64).to_le_bytes())?;
    out.write_all(&(c.l as u64).to_le_bytes())?;
    if let ModelSpec::Markov(st) = &c.spec {
        out.write_all(&(st.edges().len() as u32).to_le_bytes())?;
        for &(i, j) in st.edges() {
            out.write_all(&[i as u8, j as u8])?;
        }
    }
    for t in c.training.iter().chain(&c.actual) {
        out.write_all(t.samples())?;
    }
    Ok(())
}

fn read_exact<R: Read>(inp: &mut R, buf: &mut [u8]) -> Result<()> {
    inp.read_exact(buf)
        .map_err(|e| Error::Argument(format!("truncated trace dump: {e}")))
}

fn read_u<R: Read, const N: usize>(inp: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(inp, &mut b)?;
    Ok(b)
}

pub fn read_dump<R: Read>(inp: &mut R) -> Result<TraceDump> {
    let magic: [u8; 4] = read_u(inp)?;
    ensure!(&magic == MAGIC, Argument, "not a trace dump (bad magic)");
    let version = u16::from_le_bytes(read_u(inp)?);
    ensure!(version == VERSION, Argument, "unsupported dump version {version}");
    let [kind, _] = read_u::<_, 2>(inp)?;
    let r = u16::from_le_bytes(read_u(inp)?) as usize;
    let n = u32::from_le_bytes(read_u(inp)?) as usize;
    let m = u64::from_le_bytes(read_u(inp)?) as usize;
    let l = u64::from_le_bytes(read_u(inp)?) as usize;
    let spec = match kind {
        0 => ModelSpec::TwoState,
        1 => ModelSpec::r_state(r)?,
        2 => {
            let count = u32::from_le_bytes(read_u(inp)?) as usize;
            let mut edges = Vec::with_capacity(count);
            for _ in 0..count {
                let [i, j] = read_u::<_, 2>(inp)?;
                edges.push((i as usize, j as usize));
            }
            ModelSpec::markov(r, edges)?
        }
        k => return Err(Error::Argument(format!("unknown model kind {k}"))),
    };
    let mut rows = |len: usize| -> Result<Vec<Trace>> {
        (0..n)
            .map(|_| {
                let mut buf = vec![0u8; len];
                read_exact(inp, &mut buf)?;
                Trace::new(buf, r)
            })
            .collect()
    };
    let training = rows(l)?;
    let actual = rows(m)?;
    Ok(TraceDump {
        spec,
        n,
        m,
        l,
        training,
        actual,
    })
}
