//! Binary hyperdimensional computing on top of the simulated CAM.
//!
//! Hypervectors are packed bit vectors. Binding is XOR, bundling is a
//! per-bit majority vote, and permutation is a cyclic rotation. An
//! [`AssociativeMemory`] answers nearest-neighbour queries either exactly
//! (popcount) or by tiling its codebook over CAM arrays and reading the
//! quantized match count of every tile.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, BitMatrix, CimArray, CurrentReadParams};
use crate::rng;
use crate::sensing::{quantize, AdcConfig};
use crate::stats::normal_cdf;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hypervector {
    dim: usize,
    words: Vec<u64>,
}

fn words_for(dim: usize) -> usize {
    dim.div_ceil(64)
}

impl Hypervector {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "hypervector dimension must be >= 1");
        Self {
            dim,
            words: vec![0; words_for(dim)],
        }
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut v = Self::zeros(dim);
        for w in &mut v.words {
            *w = rng.random();
        }
        v.mask_tail();
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    fn mask_tail(&mut self) {
        let rem = self.dim % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn complement(&self) -> Self {
        let mut v = Self {
            dim: self.dim,
            words: self.words.iter().map(|w| !w).collect(),
        };
        v.mask_tail();
        v
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

/// Elementwise XOR.
pub fn bind(a: &Hypervector, b: &Hypervector) -> Result<Hypervector> {
    a.check_dim(b)?;
    Ok(Hypervector {
        dim: a.dim,
        words: a.words.iter().zip(&b.words).map(|(x, y)| x ^ y).collect(),
    })
}

/// Per-bit majority over an odd number of vectors.
pub fn bundle(vs: &[Hypervector]) -> Result<Hypervector> {
    let first = vs.first().ok_or(Error::EvenBundle(0))?;
    if vs.len() % 2 == 0 {
        return Err(Error::EvenBundle(vs.len()));
    }
    for v in vs {
        first.check_dim(v)?;
    }
    let threshold = vs.len() / 2;
    let mut out = Hypervector::zeros(first.dim);
    for i in 0..first.dim {
        if vs.iter().filter(|v| v.get(i)).count() > threshold {
            out.flip(i);
        }
    }
    Ok(out)
}

/// Cyclic rotation: bit `i` moves to `(i + shift) mod D`.
pub fn permute(a: &Hypervector, shift: usize) -> Hypervector {
    let d = a.dim;
    let s = shift % d;
    let mut out = Hypervector::zeros(d);
    for i in 0..d {
        if a.get(i) {
            out.flip((i + s) % d);
        }
    }
    out
}

pub fn hamming(a: &Hypervector, b: &Hypervector) -> Result<usize> {
    a.check_dim(b)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum())
}

/// Probability mass over Hamming distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPmf {
    pub support: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl SimilarityPmf {
    pub fn point(distance: usize) -> Self {
        Self {
            support: vec![distance],
            probabilities: vec![1.0],
        }
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probabilities)
            .map(|(&d, &p)| d as f64 * p)
            .sum()
    }

    /// Most likely distance; the lower one on ties.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probabilities.len() {
            if self.probabilities[i] > self.probabilities[best] {
                best = i;
            }
        }
        self.support[best]
    }

    pub fn prob(&self, distance: usize) -> f64 {
        self.support
            .iter()
            .position(|&d| d == distance)
            .map_or(0.0, |i| self.probabilities[i])
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// Per-tile readout noise, in units of Hamming-distance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadoutNoise {
    pub sigma_counts_per_tile: f64,
}

/// Discretized Gaussian over total distance `0..=max_distance`, centred on
/// the sum of the per-tile estimates. A zero-sigma model gives a point mass.
pub fn pmf_from_readout(tile_distances: &[f64], noise: &ReadoutNoise, max_distance: usize) -> SimilarityPmf {
    let mean: f64 = tile_distances.iter().sum();
    let sigma = noise.sigma_counts_per_tile * (tile_distances.len() as f64).sqrt();
    let clamp = |x: f64| x.round().clamp(0.0, max_distance as f64) as usize;
    if !(sigma > 0.0) {
        return SimilarityPmf::point(clamp(mean));
    }
    let lo = clamp(mean - 9.0 * sigma);
    let hi = clamp(mean + 9.0 * sigma);
    let mut support = Vec::with_capacity(hi - lo + 1);
    let mut probabilities = Vec::with_capacity(hi - lo + 1);
    for d in lo..=hi {
        // The end bins absorb the tails beyond the valid range.
        let upper = if d == max_distance { 1.0 } else { normal_cdf((d as f64 + 0.5 - mean) / sigma) };
        let lower = if d == 0 { 0.0 } else { normal_cdf((d as f64 - 0.5 - mean) / sigma) };
        support.push(d);
        probabilities.push((upper - lower).max(0.0));
    }
    let total: f64 = probabilities.iter().sum();
    if total > 0.0 {
        probabilities.iter_mut().for_each(|p| *p /= total);
        SimilarityPmf {
            support,
            probabilities,
        }
    } else {
        SimilarityPmf::point(clamp(mean))
    }
}

/// How a stored hypervector is split over CAM rows.
///
/// Each tile has `data_rows` data rows followed by `guard_rows` rows that
/// store '0' and are always searched with '1'. Guard rows never match, so a
/// tile's match count fits the ADC's code range even when every data bit
/// matches. The last tile is padded with rows storing '0' that are searched
/// with '0'; their constant match count is subtracted after readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub dim: usize,
    pub n_rows: usize,
    pub data_rows: usize,
    pub guard_rows: usize,
    pub tiles: usize,
}

impl TileLayout {
    pub fn new(dim: usize, n_rows: usize, adc_levels: u64) -> Result<Self> {
        let guard_rows = (n_rows as u64 + 1).saturating_sub(adc_levels) as usize;
        if guard_rows >= n_rows {
            return Err(Error::invalid(format!(
                "a {n_rows}-row tile leaves no data rows with a {adc_levels}-level ADC"
            )));
        }
        let data_rows = n_rows - guard_rows;
        Ok(Self {
            dim,
            n_rows,
            data_rows,
            guard_rows,
            tiles: dim.div_ceil(data_rows),
        })
    }

    pub fn data_bits(&self, tile: usize) -> usize {
        self.dim.saturating_sub(tile * self.data_rows).min(self.data_rows)
    }

    pub fn pad_rows(&self, tile: usize) -> usize {
        self.data_rows - self.data_bits(tile)
    }

    /// Physical row contents for `v` in `tile`; `search` selects the query
    /// encoding for guard rows.
    pub fn rows(&self, v: &Hypervector, tile: usize, search: bool) -> Vec<bool> {
        let base = tile * self.data_rows;
        (0..self.n_rows)
            .map(|r| {
                if r < self.data_rows {
                    let i = base + r;
                    i < self.dim && v.get(i)
                } else {
                    search
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "domain")]
pub enum ReadoutDomain {
    Charge,
    Current(CurrentReadParams),
}

#[derive(Debug, Clone)]
pub struct CimBacking {
    tiles: Vec<CimArray>,
    layout: TileLayout,
    adc: AdcConfig,
    domain: ReadoutDomain,
    noise: ReadoutNoise,
}

impl CimBacking {
    pub fn layout(&self) -> &TileLayout {
        &self.layout
    }

    pub fn tiles(&self) -> &[CimArray] {
        &self.tiles
    }

    pub fn set_noise(&mut self, noise: ReadoutNoise) {
        self.noise = noise;
    }

    /// Estimated Hamming distance per (tile, entry).
    fn tile_distances(&mut self, probe: &Hypervector) -> Result<Vec<Vec<f64>>> {
        let layout = self.layout;
        let mut out = Vec::with_capacity(layout.tiles);
        for (t, tile) in self.tiles.iter_mut().enumerate() {
            let q = layout.rows(probe, t, true);
            let cfg = *tile.config();
            let unit = cfg.unit_step();
            let counts_per_code = self.adc.lsb() / unit;
            let matches: Vec<f64> = match self.domain {
                ReadoutDomain::Charge => {
                    tile.reset();
                    let r = tile.cam_search(&q)?;
                    tile.reset();
                    r.v_bl
                        .iter()
                        .map(|&v| (quantize(v, &self.adc) as f64 * counts_per_code).round())
                        .collect()
                }
                ReadoutDomain::Current(read) => {
                    let i_unit = read.unit_current(&cfg.device);
                    let zeros = q.iter().filter(|b| !**b).count() as f64;
                    let inv: Vec<bool> = q.iter().map(|b| !b).collect();
                    let ones_match = tile.current_domain_mac(&q, &read)?;
                    let zeros_mismatch = tile.current_domain_mac(&inv, &read)?;
                    ones_match
                        .iter()
                        .zip(&zeros_mismatch)
                        .map(|(a, b)| {
                            let est = a / i_unit + zeros - b / i_unit;
                            let v = cfg.delta_offset + est * unit;
                            (quantize(v, &self.adc) as f64 * counts_per_code).round()
                        })
                        .collect()
                }
            };
            let pad = layout.pad_rows(t) as f64;
            let bits = layout.data_bits(t) as f64;
            out.push(matches.into_iter().map(|m| bits - (m - pad)).collect());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Backing {
    Exact,
    Cim(Box<CimBacking>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub index: usize,
    pub label: String,
    pub distance: f64,
    /// Estimated distance to every entry, in codebook order.
    pub distances: Vec<f64>,
    pub pmf: SimilarityPmf,
}

#[derive(Debug, Clone)]
pub struct AssociativeMemory {
    labels: Vec<String>,
    vectors: Vec<Hypervector>,
    backing: Backing,
}

impl AssociativeMemory {
    /// Exact-backed memory. Labels must be unique and dimensions equal.
    pub fn new(entries: Vec<(String, Hypervector)>) -> Result<Self> {
        let mut labels = Vec::with_capacity(entries.len());
        let mut vectors: Vec<Hypervector> = Vec::with_capacity(entries.len());
        for (label, v) in entries {
            if let Some(first) = vectors.first() {
                first.check_dim(&v)?;
            }
            if labels.contains(&label) {
                return Err(Error::DuplicateLabel(label));
            }
            labels.push(label);
            vectors.push(v);
        }
        Ok(Self {
            labels,
            vectors,
            backing: Backing::Exact,
        })
    }

    /// Entries labelled by their index.
    pub fn from_vectors(vectors: Vec<Hypervector>) -> Result<Self> {
        Self::new(
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i.to_string(), v))
                .collect(),
        )
    }

    /// Stores every entry in its own CAM column, tiled along the rows of
    /// `config` (its column count is replaced by the codebook size).
    pub fn with_cim(
        mut self,
        config: ArrayConfig,
        adc: AdcConfig,
        domain: ReadoutDomain,
        seed: u64,
    ) -> Result<Self> {
        adc.validate()?;
        let dim = self.dim().ok_or(Error::EmptyCodebook)?;
        let layout = TileLayout::new(dim, config.n_rows, adc.levels())?;
        let cfg = config.with_shape(config.n_rows, self.vectors.len());
        let tiles = (0..layout.tiles)
            .map(|t| {
                let columns: Vec<Vec<bool>> =
                    self.vectors.iter().map(|v| layout.rows(v, t, false)).collect();
                CimArray::build(cfg, &BitMatrix::from_columns(&columns)?, rng::derive_seed(seed, &[t as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        self.backing = Backing::Cim(Box::new(CimBacking {
            tiles,
            layout,
            adc,
            domain,
            noise: ReadoutNoise::default(),
        }));
        Ok(self)
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Hypervector::dim)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vectors(&self) -> &[Hypervector] {
        &self.vectors
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn backing_mut(&mut self) -> &mut Backing {
        &mut self.backing
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Hypervector)> {
        self.labels.iter().map(String::as_str).zip(&self.vectors)
    }

    /// Nearest entry to `probe`; ties go to the lowest index.
    pub fn query(&mut self, probe: &Hypervector) -> Result<QueryResult> {
        let dim = self.dim().ok_or(Error::EmptyCodebook)?;
        if probe.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: probe.dim(),
            });
        }
        let (distances, per_tile, noise) = match &mut self.backing {
            Backing::Exact => {
                let d = self
                    .vectors
                    .iter()
                    .map(|v| hamming(v, probe).map(|h| h as f64))
                    .collect::<Result<Vec<_>>>()?;
                (d, None, ReadoutNoise::default())
            }
            Backing::Cim(cim) => {
                let per_tile = cim.tile_distances(probe)?;
                let d = (0..self.vectors.len())
                    .map(|e| per_tile.iter().map(|t| t[e]).sum())
                    .collect();
                (d, Some(per_tile), cim.noise)
            }
        };
        let index = argmin(&distances);
        let pmf = match per_tile {
            None => SimilarityPmf::point(distances[index] as usize),
            Some(t) => {
                let tiles: Vec<f64> = t.iter().map(|row| row[index]).collect();
                pmf_from_readout(&tiles, &noise, dim)
            }
        };
        Ok(QueryResult {
            index,
            label: self.labels[index].clone(),
            distance: distances[index],
            distances,
            pmf,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "bits"])?;
        for (label, v) in self.entries() {
            let bits: String = v.bits().iter().map(|&b| if b { '1' } else { '0' }).collect();
            wr.write_record([label, bits.as_str()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let label = rec.get(0).unwrap_or_default().to_string();
            let bits = crate::array::parse_bits(rec.get(1).unwrap_or_default())?;
            if bits.is_empty() {
                return Err(Error::Parse(format!("entry `{label}` has no bits")));
            }
            entries.push((label, Hypervector::from_bits(&bits)));
        }
        Self::new(entries)
    }

    /// Binary matrix: little-endian `u64` dim and count, then each vector
    /// row-major, packed MSB-first and padded to a whole byte.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.dim().unwrap_or(0);
        w.write_all(&(dim as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.vectors {
            let mut bytes = vec![0u8; dim.div_ceil(8)];
            for i in 0..dim {
                if v.get(i) {
                    bytes[i / 8] |= 0x80 >> (i % 8);
                }
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    /// Reads [`write_binary`](Self::write_binary) output; labels are indices.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        if dim == 0 && count > 0 {
            return Err(Error::Parse("zero dimension with a non-empty codebook".into()));
        }
        let mut vectors = Vec::with_capacity(count);
        let mut bytes = vec![0u8; dim.div_ceil(8)];
        for _ in 0..count {
            r.read_exact(&mut bytes)?;
            let bits: Vec<bool> = (0..dim).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
            vectors.push(Hypervector::from_bits(&bits));
        }
        Self::from_vectors(vectors)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Synthetic associative-retrieval workload.
///
/// The codebook is a chain of "level" vectors: entry `j` is entry `j-1`
/// with `round(step_fraction·D)` random bits flipped, so neighbouring
/// entries are close and the decision margin grows linearly with `D`.
/// Each query is a random entry with every bit flipped independently with
/// probability `flip_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalTaskSpec {
    pub codebook_size: usize,
    pub step_fraction: f64,
    pub flip_rate: f64,
    pub queries: usize,
}

impl Default for RetrievalTaskSpec {
    fn default() -> Self {
        Self {
            codebook_size: 16,
            step_fraction: 1.0 / 64.0,
            flip_rate: 0.1,
            queries: 200,
        }
    }
}

impl RetrievalTaskSpec {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.codebook_size < 1 {
            out.push("codebook_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.step_fraction) {
            out.push(format!("step_fraction must be in [0, 1], got {}", self.step_fraction));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            out.push(format!("flip_rate must be in [0, 1], got {}", self.flip_rate));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub codebook: Vec<Hypervector>,
    /// `(probe, index of the entry it was derived from)`.
    pub queries: Vec<(Hypervector, usize)>,
}

impl RetrievalTask {
    pub fn generate<R: Rng + ?Sized>(dim: usize, spec: &RetrievalTaskSpec, rng: &mut R) -> Self {
        let step = ((spec.step_fraction * dim as f64).round() as usize).min(dim);
        let mut codebook: Vec<Hypervector> = Vec::with_capacity(spec.codebook_size);
        codebook.push(Hypervector::random(dim, rng));
        for j in 1..spec.codebook_size {
            let mut next = codebook[j - 1].clone();
            for i in index::sample(rng, dim, step) {
                next.flip(i);
            }
            codebook.push(next);
        }
        let queries = (0..spec.queries)
            .map(|_| {
                let target = rng.random_range(0..codebook.len());
                let mut probe = codebook[target].clone();
                for i in 0..dim {
                    if rng.random_bool(spec.flip_rate) {
                        probe.flip(i);
                    }
                }
                (probe, target)
            })
            .collect();
        Self { codebook, queries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn hv(dim: usize, seed: u64) -> Hypervector {
        Hypervector::random(dim, &mut rng::stream(seed, &[]))
    }

    #[test]
    fn bind_identities() {
        let a = hv(512, 1);
        let b = hv(512, 2);
        assert_eq!(bind(&a, &a).unwrap().weight(), 0);
        assert_eq!(bind(&bind(&a, &b).unwrap(), &b).unwrap(), a);
        assert_eq!(bind(&a, &b).unwrap(), bind(&b, &a).unwrap());
        assert!(bind(&a, &hv(100, 3)).is_err());
    }

    #[test]
    fn bundle_identities() {
        let a = hv(300, 1);
        let b = hv(300, 2);
        assert_eq!(bundle(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(bundle(&[a.clone(), a.clone(), b.clone()]).unwrap(), a);
        assert!(matches!(bundle(&[a.clone(), b.clone()]), Err(Error::EvenBundle(2))));
        assert!(matches!(bundle(&[]), Err(Error::EvenBundle(0))));
        assert!(bundle(&[a, b, hv(10, 3)]).is_err());
    }

    #[test]
    fn permute_identities() {
        let a = hv(130, 4);
        assert_eq!(permute(&a, 0), a);
        assert_eq!(permute(&a, 130), a);
        assert_eq!(permute(&a, 7).weight(), a.weight());
        assert_eq!(permute(&permute(&a, 5), 125), a);
        let one = Hypervector::from_bits(&[true, false, false]);
        assert_eq!(permute(&one, 1).bits(), vec![false, true, false]);
    }

    #[test]
    fn hamming_identities() {
        let a = hv(777, 5);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 777);
        assert!(hamming(&a, &hv(776, 5)).is_err());
    }

    #[test]
    fn exact_query_returns_nearest() {
        let vs: Vec<_> = (0..8).map(|s| hv(256, s)).collect();
        let mut mem = AssociativeMemory::from_vectors(vs.clone()).unwrap();
        let r = mem.query(&vs[3]).unwrap();
        assert_eq!(r.index, 3);
        assert_eq!(r.label, "3");
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.pmf, SimilarityPmf::point(0));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let a = Hypervector::from_bits(&[true, false, false, false]);
        let b = Hypervector::from_bits(&[false, true, false, false]);
        let mut mem = AssociativeMemory::from_vectors(vec![b, a]).unwrap();
        let r = mem.query(&Hypervector::zeros(4)).unwrap();
        assert_eq!(r.index, 0);
    }

    #[test]
    fn empty_and_duplicate_codebooks() {
        let mut mem = AssociativeMemory::new(vec![]).unwrap();
        assert!(matches!(mem.query(&hv(8, 0)), Err(Error::EmptyCodebook)));
        let dup = AssociativeMemory::new(vec![("x".into(), hv(8, 0)), ("x".into(), hv(8, 1))]);
        assert!(matches!(dup, Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn tile_layout_with_guard_row() {
        let l = TileLayout::new(512, 64, 64).unwrap();
        assert_eq!((l.data_rows, l.guard_rows, l.tiles), (63, 1, 9));
        assert_eq!(l.data_bits(8), 512 - 8 * 63);
        assert_eq!(l.pad_rows(8), 63 - 8);
        let l = TileLayout::new(512, 64, 128).unwrap();
        assert_eq!((l.data_rows, l.guard_rows, l.tiles), (64, 0, 8));
        assert!(TileLayout::new(10, 1, 1).is_err());
    }

    #[test]
    fn stored_probe_reads_distance_zero_through_cam() {
        let vs: Vec<_> = (0..16).map(|s| hv(512, 100 + s)).collect();
        let cfg = ArrayConfig::default();
        let adc = AdcConfig::aligned(&cfg, 6);
        let mut mem = AssociativeMemory::from_vectors(vs.clone())
            .unwrap()
            .with_cim(cfg, adc, ReadoutDomain::Charge, 9)
            .unwrap();
        for (i, v) in vs.iter().enumerate() {
            let r = mem.query(v).unwrap();
            assert_eq!(r.index, i);
            assert_eq!(r.distance, 0.0);
        }
        let r = mem.query(&vs[2].complement()).unwrap();
        assert_eq!(r.distances[2], 512.0);
    }

    #[test]
    fn cim_zero_variance_matches_exact_backing() {
        let vs: Vec<_> = (0..16).map(|s| hv(512, 200 + s)).collect();
        let mut exact = AssociativeMemory::from_vectors(vs.clone()).unwrap();
        let cfg = ArrayConfig::default();
        for domain in [ReadoutDomain::Charge, ReadoutDomain::Current(CurrentReadParams::default())] {
            let mut cim = AssociativeMemory::from_vectors(vs.clone())
                .unwrap()
                .with_cim(cfg, AdcConfig::aligned(&cfg, 6), domain, 1)
                .unwrap();
            for s in 0..50 {
                let p = hv(512, 5000 + s);
                let a = exact.query(&p).unwrap();
                let b = cim.query(&p).unwrap();
                assert_eq!(a.distances, b.distances);
                assert_eq!(a.index, b.index);
            }
        }
    }

    #[test]
    fn charge_cam_is_immune_when_levels_clear_the_tails() {
        let vs: Vec<_> = (0..8).map(|s| hv(200, 300 + s)).collect();
        let cfg = ArrayConfig::default().clear_of_tails(0.17, 8.0).with_sigmas(0.17, 0.0);
        let mut exact = AssociativeMemory::from_vectors(vs.clone()).unwrap();
        let mut cim = AssociativeMemory::from_vectors(vs)
            .unwrap()
            .with_cim(cfg, AdcConfig::aligned(&cfg, 6), ReadoutDomain::Charge, 2)
            .unwrap();
        for s in 0..30 {
            let p = hv(200, 900 + s);
            assert_eq!(exact.query(&p).unwrap().distances, cim.query(&p).unwrap().distances);
        }
    }

    #[test]
    fn pmf_zero_noise_is_point_mass() {
        let p = pmf_from_readout(&[3.0, 4.0], &ReadoutNoise::default(), 128);
        assert_eq!(p, SimilarityPmf::point(7));
    }

    #[test]
    fn pmf_mode_is_rounded_estimate_and_sums_to_one() {
        let noise = ReadoutNoise { sigma_counts_per_tile: 1.3 };
        for mean in [0.2, 10.4, 10.6, 63.0, 127.9] {
            let p = pmf_from_readout(&[mean / 2.0, mean / 2.0], &noise, 128);
            assert!((p.total() - 1.0).abs() < 1e-9);
            assert_eq!(p.mode(), (mean as f64).round().min(128.0) as usize, "mean {mean}");
        }
    }

    #[test]
    fn pmf_mean_tracks_true_distance() {
        // Monte-Carlo calibration: noisy tile estimates around a known distance.
        use rand_distr::{Distribution, Normal};
        let noise = ReadoutNoise { sigma_counts_per_tile: 1.5 };
        let tiles = 8;
        let truth_per_tile = 20.0;
        let normal = Normal::new(0.0, noise.sigma_counts_per_tile).unwrap();
        let mut r = rng::stream(17, &[]);
        let mut acc = 0.0;
        let trials = 10_000;
        for _ in 0..trials {
            let est: Vec<f64> = (0..tiles).map(|_| truth_per_tile + normal.sample(&mut r)).collect();
            acc += pmf_from_readout(&est, &noise, 512).mean();
        }
        let mean = acc / trials as f64;
        assert!((mean - truth_per_tile * tiles as f64).abs() < 1.0, "{mean}");
    }

    #[test]
    fn codebook_csv_and_binary_round_trip() {
        let mem = AssociativeMemory::new(vec![("cat".into(), hv(70, 1)), ("dog".into(), hv(70, 2))]).unwrap();
        let mut buf = Vec::new();
        mem.write_csv(&mut buf).unwrap();
        let back = AssociativeMemory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.labels(), mem.labels());
        assert_eq!(back.vectors(), mem.vectors());

        let mut bin = Vec::new();
        mem.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 2 * 9);
        let back = AssociativeMemory::read_binary(bin.as_slice()).unwrap();
        assert_eq!(back.vectors(), mem.vectors());
        assert_eq!(back.labels(), &["0".to_string(), "1".to_string()]);
    }

    #[test]
    fn retrieval_task_shape() {
        let spec = RetrievalTaskSpec::default();
        let task = RetrievalTask::generate(512, &spec, &mut rng::stream(1, &[]));
        assert_eq!(task.codebook.len(), 16);
        assert_eq!(task.queries.len(), spec.queries);
        assert_eq!(hamming(&task.codebook[0], &task.codebook[1]).unwrap(), 8);
    }

    proptest! {
        #[test]
        fn bind_distributes_over_permute(seed in any::<u64>(), dim in 1usize..300, shift in 0usize..1000) {
            let a = hv(dim, seed);
            let b = hv(dim, seed ^ 0xabc);
            prop_assert_eq!(
                permute(&bind(&a, &b).unwrap(), shift),
                bind(&permute(&a, shift), &permute(&b, shift)).unwrap()
            );
        }

        #[test]
        fn exact_decision_is_invariant_under_monotone_transform(seed in any::<u64>()) {
            let vs: Vec<_> = (0..6).map(|s| hv(96, seed.wrapping_add(s))).collect();
            let probe = hv(96, seed ^ 0x55);
            let mut mem = AssociativeMemory::from_vectors(vs).unwrap();
            let r = mem.query(&probe).unwrap();
            let transformed: Vec<f64> = r.distances.iter().map(|d| (d * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(argmin(&transformed), r.index);
        }
    }
}
