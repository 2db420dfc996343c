//! Columnar storage for posterior samples, with binary persistence.
//!
//! Layout: six scalar hyperparameters, then the whitened intercepts, then the
//! per-line rates. Draws are stored per chain, per parameter, so extracting a
//! trace is O(1).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCALAR_PARAMS: [&str; 6] = ["alpha", "sigma_sq", "w", "m", "beta_l", "beta_v"];

const MAGIC: &[u8; 4] = b"LRSS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainAcceptStats {
    pub chain: usize,
    pub z: Option<f64>,
    pub alpha: Option<f64>,
    pub variance_pair: Option<f64>,
    pub variance_pair_centered: Option<f64>,
    pub mean_block: Option<f64>,
}

/// Retained draws of every parameter across chains.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub param_names: Vec<String>,
    pub n_lines: usize,
    /// [chain][param][draw]
    chains: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub accept_stats: Vec<ChainAcceptStats>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn new(
        param_names: Vec<String>,
        n_lines: usize,
        chains: Vec<Vec<Vec<f64>>>,
        seed: u64,
        accept_stats: Vec<ChainAcceptStats>,
        warnings: Vec<String>,
    ) -> Self {
        Self {
            param_names,
            n_lines,
            chains,
            seed,
            accept_stats,
            warnings,
        }
    }

    /// Parameter names for a model over the given line labels.
    pub fn names_for(labels: &[String]) -> Vec<String> {
        let mut names: Vec<String> = SCALAR_PARAMS.iter().map(|s| s.to_string()).collect();
        names.extend(labels.iter().map(|l| format!("z[{l}]")));
        names.extend(labels.iter().map(|l| format!("lambda[{l}]")));
        names
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_retained(&self) -> usize {
        self.chains
            .first()
            .and_then(|c| c.first())
            .map_or(0, |t| t.len())
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains() * self.n_retained()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|p| p == name)
    }

    pub fn scalar_index(name: &str) -> Option<usize> {
        SCALAR_PARAMS.iter().position(|p| *p == name)
    }

    pub fn z_index(&self, line: usize) -> usize {
        SCALAR_PARAMS.len() + line
    }

    pub fn lambda_index(&self, line: usize) -> usize {
        SCALAR_PARAMS.len() + self.n_lines + line
    }

    pub fn trace(&self, chain: usize, param: usize) -> &[f64] {
        &self.chains[chain][param]
    }

    /// All chains' traces for one parameter.
    pub fn chain_traces(&self, param: usize) -> Vec<&[f64]> {
        self.chains.iter().map(|c| c[param].as_slice()).collect()
    }

    /// Draws pooled across chains, in chain order.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_draws());
        for c in &self.chains {
            out.extend_from_slice(&c[param]);
        }
        out
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.n_chains() as u32).to_le_bytes())?;
        w.write_all(&(self.n_retained() as u32).to_le_bytes())?;
        w.write_all(&(self.n_params() as u32).to_le_bytes())?;
        w.write_all(&(self.n_lines as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for name in &self.param_names {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        for chain in &self.chains {
            for trace in chain {
                for v in trace {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Schema("not a samples file".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        if u16::from_le_bytes(b2) != VERSION {
            return Err(Error::Schema("unsupported samples file version".into()));
        }
        let mut b4 = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4))
        };
        let n_chains = read_u32(r)? as usize;
        let n_retained = read_u32(r)? as usize;
        let n_params = read_u32(r)? as usize;
        let n_lines = read_u32(r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut param_names = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let mut lb = [0u8; 2];
            r.read_exact(&mut lb)?;
            let len = u16::from_le_bytes(lb) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            param_names
                .push(String::from_utf8(buf).map_err(|_| Error::Schema("bad name".into()))?);
        }
        let mut chains = Vec::with_capacity(n_chains);
        for _ in 0..n_chains {
            let mut chain = Vec::with_capacity(n_params);
            for _ in 0..n_params {
                let mut trace = vec![0.0f64; n_retained];
                for v in trace.iter_mut() {
                    r.read_exact(&mut b8)?;
                    *v = f64::from_le_bytes(b8);
                }
                chain.push(trace);
            }
            chains.push(chain);
        }
        Ok(Self {
            param_names,
            n_lines,
            chains,
            seed,
            accept_stats: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut f)
    }

    pub fn export_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.param_names.iter().cloned());
        wtr.write_record(&header)?;
        for (c, chain) in self.chains.iter().enumerate() {
            for d in 0..self.n_retained() {
                let mut rec = vec![c.to_string(), d.to_string()];
                rec.extend(chain.iter().map(|trace| trace[d].to_string()));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sidecar metadata written next to a samples file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesSidecar {
    pub schema_version: u32,
    pub build: String,
    pub seed: u64,
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub accept_stats: Vec<ChainAcceptStats>,
    pub warnings: Vec<String>,
    pub model: crate::bayes::ModelProvenance,
    /// Wall-clock timestamp; lives only here so primary outputs stay
    /// byte-identical across reruns.
    pub created_unix_secs: u64,
}
