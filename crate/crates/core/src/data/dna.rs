//! DNA 8-mers: one-hot encoding, GC content and the reverse-complement
//! canonical universe.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, FeatureKind};
use crate::augment::BoxBounds;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const KMER_LEN: usize = 8;
pub const ALPHABET: [u8; 4] = *b"ACGT";
pub const ENCODED_LEN: usize = 4 * KMER_LEN;

pub type Kmer = [u8; KMER_LEN];

pub fn base_index(b: u8) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == b)
}

pub fn parse_kmer(seq: &str) -> Result<Kmer> {
    let bytes = seq.as_bytes();
    if bytes.len() != KMER_LEN || bytes.iter().any(|&b| base_index(b).is_none()) {
        return Err(Error::Sequence(seq.to_string()));
    }
    let mut k = [0u8; KMER_LEN];
    k.copy_from_slice(bytes);
    Ok(k)
}

pub(crate) fn encode_bytes(k: &Kmer) -> Vec<f64> {
    let mut out = vec![0.0; ENCODED_LEN];
    for (pos, &b) in k.iter().enumerate() {
        // parse_kmer guarantees membership
        out[4 * pos + base_index(b).expect("validated base")] = 1.0;
    }
    out
}

/// Position-major one-hot blocks in A, C, G, T order.
pub fn encode_dna(seq: &str) -> Result<Vec<f64>> {
    Ok(encode_bytes(&parse_kmer(seq)?))
}

pub fn decode_dna(encoded: &[f64]) -> Result<String> {
    if encoded.len() != ENCODED_LEN {
        return Err(Error::contract(format!("one-hot 8-mer needs {ENCODED_LEN} entries")));
    }
    encoded
        .chunks(4)
        .map(|block| {
            let hot: Vec<usize> = (0..4).filter(|&i| block[i] == 1.0).collect();
            match (hot.as_slice(), block.iter().filter(|&&v| v != 0.0).count()) {
                ([i], 1) => Ok(ALPHABET[*i] as char),
                _ => Err(Error::contract("block is not a one-hot base")),
            }
        })
        .collect()
}

pub fn gc_content(seq: &str) -> Result<f64> {
    let k = parse_kmer(seq)?;
    Ok(k.iter().filter(|&&b| b == b'G' || b == b'C').count() as f64 / KMER_LEN as f64)
}

fn complement(b: u8) -> u8 {
    match b {
        b'A' => b'T',
        b'T' => b'A',
        b'C' => b'G',
        b'G' => b'C',
        other => other,
    }
}

pub fn reverse_complement(k: &Kmer) -> Kmer {
    let mut out = [0u8; KMER_LEN];
    for (i, &b) in k.iter().rev().enumerate() {
        out[i] = complement(b);
    }
    out
}

pub fn is_canonical(k: &Kmer) -> bool {
    *k <= reverse_complement(k)
}

pub fn canonicalize(k: &Kmer) -> Kmer {
    let rc = reverse_complement(k);
    if *k <= rc {
        *k
    } else {
        rc
    }
}

/// All 8-mers that are lexicographically no larger than their reverse
/// complement, in lexicographic order.
#[derive(Debug, Clone)]
pub struct CanonicalKmers {
    seqs: Vec<Kmer>,
}

impl CanonicalKmers {
    pub fn enumerate() -> Self {
        let mut seqs = Vec::with_capacity(32_896);
        for code in 0u32..(1 << (2 * KMER_LEN)) {
            let mut k = [0u8; KMER_LEN];
            for (pos, slot) in k.iter_mut().enumerate() {
                *slot = ALPHABET[((code >> (2 * (KMER_LEN - 1 - pos))) & 3) as usize];
            }
            if is_canonical(&k) {
                seqs.push(k);
            }
        }
        CanonicalKmers { seqs }
    }

    /// Process-wide enumeration, built on first use.
    pub fn shared() -> &'static CanonicalKmers {
        static UNIVERSE: std::sync::OnceLock<CanonicalKmers> = std::sync::OnceLock::new();
        UNIVERSE.get_or_init(CanonicalKmers::enumerate)
    }

    pub fn sequences(&self) -> &[Kmer] {
        &self.seqs
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

pub fn kmer_string(k: &Kmer) -> String {
    String::from_utf8_lossy(k).into_owned()
}

fn dna_dataset(name: &str, seqs: Vec<String>, targets: Vec<f64>) -> Result<Dataset> {
    let features = seqs.iter().map(|s| encode_dna(s)).collect::<Result<Vec<_>>>()?;
    let mut d = Dataset::with_domain(name, features, targets, BoxBounds::unit(ENCODED_LEN))?;
    d.kind = FeatureKind::DnaOneHot;
    d.tags = Some(seqs);
    Ok(d)
}

/// Reads a table of 8-mers and affinities, e.g. a microarray export.
pub fn load_dna_table(path: &Path, sequence_column: &str, target_column: &str, delimiter: u8) -> Result<Dataset> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(format!("column {name:?} not found")))
    };
    let (si, ti) = (find(sequence_column)?, find(target_column)?);
    let mut seqs = Vec::new();
    let mut targets = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let seq = rec.get(si).unwrap_or("").to_ascii_uppercase();
        parse_kmer(&seq).map_err(|_| parse_err(format!("row {}: invalid 8-mer {seq:?}", row + 1)))?;
        let y: f64 = rec
            .get(ti)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(format!("row {}: non-numeric target", row + 1)))?;
        seqs.push(seq);
        targets.push(y);
    }
    if seqs.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dna_dataset(&name, seqs, targets)
}

/// Synthetic binding-affinity landscape over the canonical universe.
///
/// Two random 6-mer motifs are scored against every window on both strands;
/// the affinity is a weighted sum of the best squared match fractions, plus
/// Gaussian noise, min-max scaled to `[0, 1]`.
pub fn binding_surrogate(seed: u64, noise_std: f64) -> Result<Dataset> {
    const MOTIF_LEN: usize = 6;
    let mut rng = stream(seed, Purpose::DataGeneration, 0);
    let motifs: Vec<(Vec<u8>, f64)> = (0..2)
        .map(|i| {
            let m = (0..MOTIF_LEN).map(|_| ALPHABET[rng.random_range(0..4)]).collect();
            (m, if i == 0 { 1.0 } else { 0.6 })
        })
        .collect();
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
    let universe = CanonicalKmers::enumerate();
    let mut seqs = Vec::with_capacity(universe.len());
    let mut raw = Vec::with_capacity(universe.len());
    for k in universe.sequences() {
        let rc = reverse_complement(k);
        let mut score = 0.0;
        for (motif, w) in &motifs {
            let best = [k, &rc]
                .iter()
                .flat_map(|s| s.windows(MOTIF_LEN))
                .map(|win| win.iter().zip(motif).filter(|(a, b)| a == b).count())
                .max()
                .unwrap_or(0) as f64
                / MOTIF_LEN as f64;
            score += w * best * best;
        }
        seqs.push(kmer_string(k));
        raw.push(score + if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 });
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let targets = raw.iter().map(|y| (y - lo) / (hi - lo)).collect();
    dna_dataset(&format!("binding-surrogate-{seed}"), seqs, targets)
}
