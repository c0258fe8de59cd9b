//! Mixed linear measurements `y_i = ⟨A_i, M_{k(i)}*⟩ + ζ_i`.
//!
//! Every sample's randomness comes from its own ChaCha8 stream, selected by
//! the sample index under the master seed. The design entries are drawn first
//! (column-major), then the noise draw. A streamed dataset keeps only `y` and
//! regenerates `A_i` on demand; a stored one keeps the designs in memory.
//! Both produce the same bits.

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::synth::GroundTruth;

/// Entries (`N·n1·n2`) above which [`StorageMode::auto`] picks streaming.
pub const DEFAULT_STORAGE_BUDGET: usize = 400_000_000;

const LABEL_STREAM: u64 = u64::MAX;
const DUMP_MAGIC: &[u8; 4] = b"MXS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Stored,
    Streamed,
}

impl StorageMode {
    pub fn auto(n1: usize, n2: usize, n: usize, budget: usize) -> Self {
        match n.checked_mul(n1).and_then(|x| x.checked_mul(n2)) {
            Some(entries) if entries <= budget => StorageMode::Stored,
            _ => StorageMode::Streamed,
        }
    }
}

#[derive(Debug, Clone)]
enum Designs {
    Stored(Vec<f64>),
    Streamed { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    n1: usize,
    n2: usize,
    y: Vec<f64>,
    labels: Option<Vec<usize>>,
    sigma: f64,
    seed: Option<u64>,
    designs: Designs,
}

fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Fills `out` with sample `i`'s design and returns its standard-normal noise draw.
fn draw_sample(seed: u64, i: usize, out: &mut [f64]) -> f64 {
    let mut rng = sample_rng(seed, i);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    rng.sample(StandardNormal)
}

/// Exact label counts by largest remainder: each count is `⌊p_k N⌋` or
/// `⌈p_k N⌉`; leftover units go to the largest fractional parts, ties to the
/// lower index.
pub fn label_counts(proportions: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Draws `n` samples from the mixture.
pub fn sample_dataset(
    gt: &GroundTruth,
    n: usize,
    sigma: f64,
    seed: u64,
    mode: StorageMode,
) -> Result<Dataset> {
    if n < gt.k() {
        return Err(Error::invalid(format!("need N >= K, got N={n}, K={}", gt.k())));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "noise level must be finite and >= 0, got {sigma}"
        )));
    }
    let counts = label_counts(&gt.proportions(), n);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    let mut rng = sample_rng(seed, 0);
    rng.set_stream(LABEL_STREAM);
    labels.shuffle(&mut rng);

    let (n1, n2) = (gt.n1(), gt.n2());
    let entries = n1 * n2;
    let mats = gt.matrices();
    let response = |i: usize, a: &[f64], zeta: f64| dot(a, mats[labels[i]].as_slice()) + sigma * zeta;

    let (y, designs) = match mode {
        StorageMode::Stored => {
            let mut buf = vec![0.0; n * entries];
            let y: Vec<f64> = buf
                .par_chunks_mut(entries)
                .enumerate()
                .map(|(i, a)| {
                    let zeta = draw_sample(seed, i, a);
                    response(i, a, zeta)
                })
                .collect();
            (y, Designs::Stored(buf))
        }
        StorageMode::Streamed => {
            let y: Vec<f64> = (0..n)
                .into_par_iter()
                .map_init(
                    || vec![0.0; entries],
                    |a, i| {
                        let zeta = draw_sample(seed, i, a);
                        response(i, a, zeta)
                    },
                )
                .collect();
            (y, Designs::Streamed { seed })
        }
    };
    Ok(Dataset {
        n1,
        n2,
        y,
        labels: Some(labels),
        sigma,
        seed: Some(seed),
        designs,
    })
}

impl Dataset {
    /// Dataset with explicit designs and responses (stored mode).
    pub fn from_parts(designs: &[Mat], y: Vec<f64>, labels: Option<Vec<usize>>, sigma: f64) -> Result<Self> {
        let first = designs
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one sample"))?;
        let (n1, n2) = first.shape();
        if designs.len() != y.len() || labels.as_ref().is_some_and(|l| l.len() != y.len()) {
            return Err(Error::invalid("designs, responses and labels differ in length"));
        }
        let mut buf = Vec::with_capacity(designs.len() * n1 * n2);
        for a in designs {
            if a.shape() != (n1, n2) {
                return Err(Error::invalid("designs differ in shape"));
            }
            buf.extend_from_slice(a.as_slice());
        }
        if buf.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(Dataset {
            n1,
            n2,
            y,
            labels,
            sigma,
            seed: None,
            designs: Designs::Stored(buf),
        })
    }

    /// Noiseless responses of explicit designs against a ground truth.
    pub fn with_designs(gt: &GroundTruth, designs: &[Mat], labels: Vec<usize>) -> Result<Self> {
        if labels.iter().any(|&k| k >= gt.k()) {
            return Err(Error::invalid("label out of range"));
        }
        if designs.iter().any(|a| a.shape() != (gt.n1(), gt.n2())) {
            return Err(Error::invalid("design shape does not match the ground truth"));
        }
        let y = designs
            .iter()
            .zip(&labels)
            .map(|(a, &k)| crate::linalg::inner(a, &gt.matrices()[k]))
            .collect();
        Dataset::from_parts(designs, y, Some(labels), 0.0)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn storage_mode(&self) -> StorageMode {
        match self.designs {
            Designs::Stored(_) => StorageMode::Stored,
            Designs::Streamed { .. } => StorageMode::Streamed,
        }
    }

    /// Component index of each sample. For evaluation only: none of the
    /// estimation stages read it.
    pub fn hidden_labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Design `A_i`, column-major.
    pub fn design(&self, i: usize) -> Cow<'_, [f64]> {
        let e = self.n1 * self.n2;
        match &self.designs {
            Designs::Stored(buf) => Cow::Borrowed(&buf[i * e..(i + 1) * e]),
            Designs::Streamed { seed } => {
                let mut a = vec![0.0; e];
                draw_sample(*seed, i, &mut a);
                Cow::Owned(a)
            }
        }
    }

    pub fn design_matrix(&self, i: usize) -> Mat {
        Mat::from_column_slice(self.n1, self.n2, &self.design(i))
    }

    /// Calls `f(i, A_i, y_i)` for each sample in `range`, in index order.
    pub fn visit(&self, range: Range<usize>, mut f: impl FnMut(usize, &[f64], f64)) {
        let e = self.n1 * self.n2;
        match &self.designs {
            Designs::Stored(buf) => {
                for i in range {
                    f(i, &buf[i * e..(i + 1) * e], self.y[i]);
                }
            }
            Designs::Streamed { seed } => {
                let mut a = vec![0.0; e];
                for i in range {
                    draw_sample(*seed, i, &mut a);
                    f(i, &a, self.y[i]);
                }
            }
        }
    }

    /// Same samples, opposite storage mode. Only generated datasets can stream.
    pub fn to_storage(&self, mode: StorageMode) -> Result<Dataset> {
        let mut out = self.clone();
        match (mode, &self.designs, self.seed) {
            (StorageMode::Stored, Designs::Streamed { .. }, _) => {
                let e = self.n1 * self.n2;
                let mut buf = vec![0.0; self.len() * e];
                buf.par_chunks_mut(e).enumerate().for_each(|(i, a)| {
                    a.copy_from_slice(&self.design(i));
                });
                out.designs = Designs::Stored(buf);
            }
            (StorageMode::Streamed, Designs::Stored(_), Some(seed)) => {
                out.designs = Designs::Streamed { seed };
            }
            (StorageMode::Streamed, Designs::Stored(_), None) => {
                return Err(Error::invalid("explicit designs cannot be streamed"));
            }
            _ => {}
        }
        Ok(out)
    }

    /// Writes the binary cache format: magic `MXS1`, then little-endian
    /// `n1, n2, N` (u64), `sigma` (f64), `seed` (u64), followed per sample by
    /// `y`, the label (−1 when unknown) and the `n1·n2` design entries in
    /// column-major order, all as f64.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DUMP_MAGIC)?;
        for v in [self.n1 as u64, self.n2 as u64, self.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.sigma.to_le_bytes())?;
        w.write_all(&self.seed.unwrap_or(0).to_le_bytes())?;
        let mut err = None;
        self.visit(0..self.len(), |i, a, y| {
            if err.is_some() {
                return;
            }
            let label = self.labels.as_ref().map_or(-1.0, |l| l[i] as f64);
            let res = (|| -> std::io::Result<()> {
                w.write_all(&y.to_le_bytes())?;
                w.write_all(&label.to_le_bytes())?;
                for v in a {
                    w.write_all(&v.to_le_bytes())?;
                }
                Ok(())
            })();
            if let Err(e) = res {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Dataset::dump`] into stored mode.
    pub fn load(path: &Path) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::invalid("not a dataset dump (bad magic)"));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n1 = u64::from_le_bytes(next(&mut r)?) as usize;
        let n2 = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let sigma = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let e = n1 * n2;
        let mut y = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n * e);
        for _ in 0..n {
            y.push(f64::from_le_bytes(next(&mut r)?));
            labels.push(f64::from_le_bytes(next(&mut r)?));
            for _ in 0..e {
                buf.push(f64::from_le_bytes(next(&mut r)?));
            }
        }
        let labels = if labels.iter().all(|l| *l >= 0.0) {
            Some(labels.into_iter().map(|l| l as usize).collect())
        } else {
            None
        };
        Ok(Dataset {
            n1,
            n2,
            y,
            labels,
            sigma,
            seed: Some(seed),
            designs: Designs::Stored(buf),
        })
    }
}
