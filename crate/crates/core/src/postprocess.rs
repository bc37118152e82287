//! Finite-size demonstration of the classical post-processing: sampling runs
//! from the exact distributions, plug-in rate estimation with an abort rule,
//! hash-based reconciliation and Toeplitz privacy amplification.
//!
//! Reconciliation is a classical stand-in: Alice discloses a short Toeplitz
//! hash of each block of her raw key and Bob picks the most likely string
//! consistent with it. Keys are bit vectors stored one bit per `u8`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channels::{NoiseScenario, ScenarioDescriptor};
use crate::error::{Error, Result};
use crate::protocol::{
    keygen_distribution, test_b1_distribution, test_b2_distribution, test_both_distribution,
    LabeledDistribution, RunType, KEYGEN_VARS, TEST_B1_VARS, TEST_B2_VARS,
};
use crate::rates::{rate_terms, RateTerms};

/// Longest reconciliation block that is decoded by exhaustive search.
pub const MAX_BLOCK_LEN: usize = 20;
/// Likelihood floor for symbol pairs never seen in the estimate.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

const STREAM_RECONCILE_B1: u64 = 1 << 40;
const STREAM_RECONCILE_B2: u64 = (1 << 40) + 1;
const STREAM_AMPLIFY_B1: u64 = (1 << 40) + 2;
const STREAM_AMPLIFY_B2: u64 = (1 << 40) + 3;

/// Draws a 64-bit value from an independent stream of the generator keyed by
/// `seed`. Streams below `2^40` are reserved for per-run sampling.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

/// Toeplitz matrix over GF(2) with `out_len` rows and `in_len` columns.
///
/// Entry `(r, c)` is bit `out_len - 1 - r + c` of a random string of
/// `in_len + out_len - 1` bits drawn from the seeded generator, so each row
/// is a contiguous window of that string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToeplitzHash {
    in_len: usize,
    out_len: usize,
    seed: u64,
    diagonal: Vec<u64>,
}

impl ToeplitzHash {
    pub fn new(in_len: usize, out_len: usize, seed: u64) -> Result<Self> {
        if out_len > in_len {
            return Err(Error::OutputTooLong {
                requested: out_len,
                available: in_len,
            });
        }
        let bits = if out_len == 0 {
            0
        } else {
            in_len + out_len - 1
        };
        // one spare word so windows can always read word q + 1
        let words = bits.div_ceil(64) + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut diagonal: Vec<u64> = (0..words).map(|_| rng.gen()).collect();
        if bits % 64 != 0 {
            diagonal[bits / 64] &= (1u64 << (bits % 64)) - 1;
        }
        for w in diagonal.iter_mut().skip(bits.div_ceil(64)) {
            *w = 0;
        }
        Ok(Self {
            in_len,
            out_len,
            seed,
            diagonal,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, r: usize, c: usize) -> u8 {
        assert!(r < self.out_len && c < self.in_len);
        let t = self.out_len - 1 - r + c;
        ((self.diagonal[t / 64] >> (t % 64)) & 1) as u8
    }

    /// 64 consecutive diagonal bits starting at bit `start`.
    fn window_word(&self, start: usize) -> u64 {
        let (q, sh) = (start / 64, start % 64);
        if sh == 0 {
            self.diagonal[q]
        } else {
            (self.diagonal[q] >> sh) | (self.diagonal[q + 1] << (64 - sh))
        }
    }

    /// Column `c` as a bit mask over rows; requires `out_len <= 64`.
    pub fn column_mask(&self, c: usize) -> u64 {
        assert!(self.out_len <= 64);
        (0..self.out_len).fold(0u64, |acc, r| acc | (u64::from(self.entry(r, c)) << r))
    }

    pub fn apply(&self, bits: &[u8]) -> Result<Vec<u8>> {
        if bits.len() != self.in_len {
            return Err(Error::LengthMismatch {
                expected: self.in_len,
                got: bits.len(),
            });
        }
        let packed = pack_bits(bits);
        let tail = self.in_len % 64;
        Ok((0..self.out_len)
            .into_par_iter()
            .map(|r| {
                let start = self.out_len - 1 - r;
                let mut acc = 0u64;
                for (w, &word) in packed.iter().enumerate() {
                    let mut row = self.window_word(start + 64 * w);
                    if w == packed.len() - 1 && tail != 0 {
                        row &= (1u64 << tail) - 1;
                    }
                    acc ^= row & word;
                }
                (acc.count_ones() & 1) as u8
            })
            .collect())
    }
}

fn pack_bits(bits: &[u8]) -> Vec<u64> {
    bits.chunks(64)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (p, &b)| acc | (u64::from(b & 1) << p))
        })
        .collect()
}

/// Hashes `key` down to `target_len` bits with a seeded Toeplitz matrix.
pub fn privacy_amplify(key: &[u8], target_len: usize, seed: u64) -> Result<Vec<u8>> {
    ToeplitzHash::new(key.len(), target_len, seed)?.apply(key)
}

/// One protocol run as seen after all announcements. Alice's outcomes that
/// her measurement did not produce are `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunRecord {
    pub index: u64,
    pub bob1: RunType,
    pub bob2: RunType,
    pub i: Option<u8>,
    pub j: Option<u8>,
    pub k: Option<u8>,
    pub x: u8,
    pub y: u8,
    pub z: u8,
    pub s: u8,
}

impl RunRecord {
    /// `index bob1 bob2 i j k x y z s`, with `-` for missing outcomes.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<u8>| v.map_or_else(|| "-".to_string(), |b| b.to_string());
        format!(
            "{} {} {} {} {} {} {} {} {} {}",
            self.index,
            self.bob1,
            self.bob2,
            opt(self.i),
            opt(self.j),
            opt(self.k),
            self.x,
            self.y,
            self.z,
            self.s
        )
    }

    pub fn parse(line_no: usize, line: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Record {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(bad(&format!("expected 10 fields, found {}", fields.len())));
        }
        let index = fields[0]
            .parse()
            .map_err(|_| bad("run index is not an integer"))?;
        let run_type = |f: &str| {
            let mut chars = f.chars();
            match (chars.next().and_then(RunType::from_symbol), chars.next()) {
                (Some(t), None) => Ok(t),
                _ => Err(bad("run type must be K or T")),
            }
        };
        let bit = |f: &str| match f {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad("outcome must be 0 or 1")),
        };
        let opt = |f: &str| if f == "-" { Ok(None) } else { bit(f).map(Some) };
        Ok(Self {
            index,
            bob1: run_type(fields[1])?,
            bob2: run_type(fields[2])?,
            i: opt(fields[3])?,
            j: opt(fields[4])?,
            k: opt(fields[5])?,
            x: bit(fields[6])?,
            y: bit(fields[7])?,
            z: bit(fields[8])?,
            s: bit(fields[9])?,
        })
    }

    fn value(&self, name: &str) -> Option<u8> {
        match name {
            "i" => self.i,
            "j" => self.j,
            "k" => self.k,
            "x" => Some(self.x),
            "y" => Some(self.y),
            "z" => Some(self.z),
            "s" => Some(self.s),
            _ => None,
        }
    }
}

/// Parses the line format written by [`KeySession::export`]; blank lines and
/// `#` comments are skipped.
pub fn parse_records(text: &str) -> Result<Vec<RunRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| RunRecord::parse(n + 1, l))
        .collect()
}

/// Number of runs per run-type pair (Bob1 type first).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub key_key: usize,
    pub test_key: usize,
    pub key_test: usize,
    pub test_test: usize,
}

/// Sampled runs of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct KeySession {
    descriptor: ScenarioDescriptor,
    seed: u64,
    p_test: f64,
    records: Vec<RunRecord>,
}

impl KeySession {
    pub fn from_records(
        descriptor: ScenarioDescriptor,
        seed: u64,
        p_test: f64,
        records: Vec<RunRecord>,
    ) -> Self {
        Self {
            descriptor,
            seed,
            p_test,
            records,
        }
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p_test(&self) -> f64 {
        self.p_test
    }

    pub fn descriptor(&self) -> &ScenarioDescriptor {
        &self.descriptor
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn counts(&self) -> RunCounts {
        let mut c = RunCounts::default();
        for r in &self.records {
            match (r.bob1, r.bob2) {
                (RunType::Key, RunType::Key) => c.key_key += 1,
                (RunType::Test, RunType::Key) => c.test_key += 1,
                (RunType::Key, RunType::Test) => c.key_test += 1,
                (RunType::Test, RunType::Test) => c.test_test += 1,
            }
        }
        c
    }

    /// One line per run, preceded by a comment header.
    pub fn export(&self) -> String {
        let mut out = format!(
            "# scenario={} n={} p_test={} seed={}\n# index bob1 bob2 i j k x y z s\n",
            self.descriptor,
            self.n(),
            self.p_test,
            self.seed
        );
        for r in &self.records {
            let _ = writeln!(out, "{}", r.to_line());
        }
        out
    }

    /// Outcome counts of runs with the given type pair over `vars`, as a
    /// normalized distribution.
    fn empirical(
        &self,
        bob1: RunType,
        bob2: RunType,
        vars: &[&str],
    ) -> Result<Option<LabeledDistribution>> {
        let mut counts = vec![0.0; 1 << vars.len()];
        let mut any = false;
        for r in self
            .records
            .iter()
            .filter(|r| r.bob1 == bob1 && r.bob2 == bob2)
        {
            let mut idx = 0usize;
            for v in vars {
                let b = r.value(v).ok_or_else(|| Error::Record {
                    line: r.index as usize,
                    reason: format!("missing outcome `{v}`"),
                })?;
                idx = idx << 1 | usize::from(b);
            }
            counts[idx] += 1.0;
            any = true;
        }
        if !any {
            return Ok(None);
        }
        LabeledDistribution::from_weights(vars, counts).map(Some)
    }
}

struct Sampler {
    vars: Vec<String>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(d: &LabeledDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = d
            .probabilities()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            vars: d.vars().to_vec(),
            cumulative,
        }
    }

    fn draw(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let idx = self.cumulative.partition_point(|&c| c <= u * total);
        // skip zero-probability cells at the upper end
        let idx = idx.min(self.cumulative.len() - 1);
        let mut j = idx;
        while j > 0 && self.cumulative[j] == self.cumulative[j - 1] {
            j -= 1;
        }
        j
    }
}

/// Samples `n` independent runs. Each Bob tests with probability `p_test`;
/// the outcome is drawn from the exact distribution for the realized pair.
/// Run `t` uses stream `t` of the generator keyed by `seed`.
pub fn sample_runs(
    scenario: &NoiseScenario,
    n: usize,
    p_test: f64,
    seed: u64,
) -> Result<KeySession> {
    if n == 0 {
        return Err(Error::Invalid("run count must be at least 1".into()));
    }
    if !(p_test > 0.0 && p_test < 1.0) {
        return Err(Error::ParameterOutOfRange {
            name: "p_test",
            value: p_test,
            min: 0.0,
            max: 1.0,
        });
    }
    let samplers = [
        Sampler::new(&keygen_distribution(scenario)?),
        Sampler::new(&test_b1_distribution(scenario)?),
        Sampler::new(&test_b2_distribution(scenario)?),
        Sampler::new(&test_both_distribution(scenario)?),
    ];
    let records = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            let pick = |rng: &mut ChaCha8Rng| {
                if rng.gen::<f64>() < p_test {
                    RunType::Test
                } else {
                    RunType::Key
                }
            };
            let bob1 = pick(&mut rng);
            let bob2 = pick(&mut rng);
            let sampler = &samplers[match (bob1, bob2) {
                (RunType::Key, RunType::Key) => 0,
                (RunType::Test, RunType::Key) => 1,
                (RunType::Key, RunType::Test) => 2,
                (RunType::Test, RunType::Test) => 3,
            }];
            let cell = sampler.draw(rng.gen::<f64>());
            let nv = sampler.vars.len();
            let mut record = RunRecord {
                index,
                bob1,
                bob2,
                i: None,
                j: None,
                k: None,
                x: 0,
                y: 0,
                z: 0,
                s: 0,
            };
            for (p, name) in sampler.vars.iter().enumerate() {
                let b = ((cell >> (nv - 1 - p)) & 1) as u8;
                match name.as_str() {
                    "i" => record.i = Some(b),
                    "j" => record.j = Some(b),
                    "k" => record.k = Some(b),
                    "x" => record.x = b,
                    "y" => record.y = b,
                    "z" => record.z = b,
                    _ => record.s = b,
                }
            }
            record
        })
        .collect();
    Ok(KeySession::from_records(
        scenario.descriptor().clone(),
        seed,
        p_test,
        records,
    ))
}

/// Plug-in rate estimates and the abort decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimates {
    pub terms: RateTerms,
    pub r1: f64,
    pub r2: f64,
    pub abort: bool,
    pub counts: RunCounts,
}

/// Evaluates the rate formulas on empirical distributions: Bob1 test terms
/// from runs where only Bob1 tested, Bob2 test terms from runs where only
/// Bob2 tested, key terms from runs where neither tested. Aborts iff either
/// estimate is negative.
pub fn estimate_and_decide(session: &KeySession) -> Result<Estimates> {
    let keygen = session
        .empirical(RunType::Key, RunType::Key, &KEYGEN_VARS)?
        .ok_or(Error::MissingRuns("key generation"))?;
    let test_b1 = session
        .empirical(RunType::Test, RunType::Key, &TEST_B1_VARS)?
        .ok_or(Error::MissingRuns("Bob1 test"))?;
    let test_b2 = session
        .empirical(RunType::Key, RunType::Test, &TEST_B2_VARS)?
        .ok_or(Error::MissingRuns("Bob2 test"))?;
    let terms = rate_terms(&keygen, &test_b1, &test_b2)?;
    let (r1, r2) = (terms.r1(), terms.r2());
    Ok(Estimates {
        terms,
        r1,
        r2,
        abort: r1 < 0.0 || r2 < 0.0,
        counts: session.counts(),
    })
}

/// Raw key strings from runs where neither Bob tested.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawKeys {
    /// Alice's `(i, j)` per run.
    pub alice1: Vec<u8>,
    /// Bob1's `(x, y)` per run.
    pub bob1: Vec<u8>,
    /// Alice's `k` per run.
    pub alice2: Vec<u8>,
    /// Bob2's `z` per run.
    pub bob2: Vec<u8>,
}

pub fn raw_keys(session: &KeySession) -> Result<RawKeys> {
    let mut keys = RawKeys {
        alice1: vec![],
        bob1: vec![],
        alice2: vec![],
        bob2: vec![],
    };
    for r in session
        .records()
        .iter()
        .filter(|r| r.bob1 == RunType::Key && r.bob2 == RunType::Key)
    {
        let (i, j, k) = match (r.i, r.j, r.k) {
            (Some(i), Some(j), Some(k)) => (i, j, k),
            _ => {
                return Err(Error::Record {
                    line: r.index as usize,
                    reason: "key run without Alice's outcomes".into(),
                })
            }
        };
        keys.alice1.extend([i, j]);
        keys.bob1.extend([r.x, r.y]);
        keys.alice2.push(k);
        keys.bob2.push(r.z);
    }
    Ok(keys)
}

/// Empirical `P(alice symbol | bob symbol)` used as the decoding model.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolChannel {
    symbol_bits: usize,
    /// `log P(a | b)` at index `b * 2^bits + a`, floored.
    log_likelihood: Vec<f64>,
    entropy_per_symbol: f64,
}

fn symbol_at(bits: &[u8], start: usize, width: usize) -> usize {
    bits[start..start + width]
        .iter()
        .fold(0usize, |acc, &b| acc << 1 | usize::from(b))
}

impl SymbolChannel {
    pub fn estimate(alice: &[u8], bob: &[u8], symbol_bits: usize) -> Result<Self> {
        if alice.len() != bob.len() {
            return Err(Error::LengthMismatch {
                expected: alice.len(),
                got: bob.len(),
            });
        }
        if symbol_bits == 0 || symbol_bits > 4 || !alice.len().is_multiple_of(symbol_bits) {
            return Err(Error::Invalid(format!(
                "symbol width {symbol_bits} does not divide key length {}",
                alice.len()
            )));
        }
        let q = 1usize << symbol_bits;
        let mut counts = vec![0.0f64; q * q];
        for start in (0..alice.len()).step_by(symbol_bits) {
            let a = symbol_at(alice, start, symbol_bits);
            let b = symbol_at(bob, start, symbol_bits);
            counts[b * q + a] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let mut log_likelihood = vec![LIKELIHOOD_FLOOR.ln(); q * q];
        let mut entropy = 0.0;
        for b in 0..q {
            let row: f64 = counts[b * q..(b + 1) * q].iter().sum();
            if row == 0.0 {
                continue;
            }
            for a in 0..q {
                let p = counts[b * q + a] / row;
                log_likelihood[b * q + a] = p.max(LIKELIHOOD_FLOOR).ln();
                if p > 0.0 {
                    entropy -= (row / total) * p * p.log2();
                }
            }
        }
        Ok(Self {
            symbol_bits,
            log_likelihood,
            entropy_per_symbol: entropy,
        })
    }

    pub fn symbol_bits(&self) -> usize {
        self.symbol_bits
    }

    /// Empirical `H(A | B)` per symbol, in bits.
    pub fn entropy_per_symbol(&self) -> f64 {
        self.entropy_per_symbol
    }

    fn log_likelihood(&self, alice: &[u8], bob: &[u8]) -> f64 {
        let q = 1usize << self.symbol_bits;
        (0..alice.len())
            .step_by(self.symbol_bits)
            .map(|st| {
                let a = symbol_at(alice, st, self.symbol_bits);
                let b = symbol_at(bob, st, self.symbol_bits);
                self.log_likelihood[b * q + a]
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReconcileConfig {
    /// Extra hash bits per block beyond the estimated conditional entropy.
    pub margin_bits: usize,
    /// Block length in bits; at most [`MAX_BLOCK_LEN`].
    pub block_len: usize,
}

impl Default for ReconcileConfig {
    fn default() -> Self {
        Self {
            margin_bits: 8,
            block_len: 12,
        }
    }
}

/// Outcome of reconciling one Alice-Bob pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairReconciliation {
    /// Bob's estimate of Alice's raw key.
    pub decoded: Vec<u8>,
    /// Total hash bits disclosed.
    pub leak_bits: usize,
    pub blocks: usize,
    pub failed_blocks: usize,
}

impl PairReconciliation {
    pub fn block_failure_rate(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.failed_blocks as f64 / self.blocks as f64
        }
    }
}

/// Blockwise reconciliation of Bob's string towards Alice's.
///
/// Per block of `L` bits Alice discloses `m = min(L, ceil(symbols * H) +
/// margin)` hash bits, `H` being the empirical conditional entropy per
/// symbol. When `m = L` the block is disclosed as is. Otherwise Bob searches
/// all `2^L` error patterns for the most likely one whose hash matches.
pub fn reconcile_pair(
    alice: &[u8],
    bob: &[u8],
    channel: &SymbolChannel,
    config: &ReconcileConfig,
    seed: u64,
) -> Result<PairReconciliation> {
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch {
            expected: alice.len(),
            got: bob.len(),
        });
    }
    let sb = channel.symbol_bits();
    let block = config.block_len;
    if block == 0 || block > MAX_BLOCK_LEN || !block.is_multiple_of(sb) {
        return Err(Error::Invalid(format!(
            "block length {block} must be a positive multiple of {sb} up to {MAX_BLOCK_LEN}"
        )));
    }
    if !alice.len().is_multiple_of(sb) {
        return Err(Error::Invalid(format!(
            "key length {} is not a multiple of {sb}",
            alice.len()
        )));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let block_seeds: Vec<u64> = (0..alice.len().div_ceil(block))
        .map(|_| seeds.gen())
        .collect();

    let results: Vec<(Vec<u8>, usize, bool)> = alice
        .par_chunks(block)
        .zip(bob.par_chunks(block))
        .zip(block_seeds.par_iter())
        .map(|((a, b), &bseed)| decode_block(a, b, channel, config.margin_bits, bseed))
        .collect();

    let mut out = PairReconciliation {
        decoded: Vec::with_capacity(alice.len()),
        leak_bits: 0,
        blocks: results.len(),
        failed_blocks: 0,
    };
    for (decoded, leak, ok) in results {
        out.decoded.extend(decoded);
        out.leak_bits += leak;
        out.failed_blocks += usize::from(!ok);
    }
    Ok(out)
}

fn decode_block(
    alice: &[u8],
    bob: &[u8],
    channel: &SymbolChannel,
    margin: usize,
    seed: u64,
) -> (Vec<u8>, usize, bool) {
    let len = alice.len();
    let symbols = len / channel.symbol_bits();
    let budget = (symbols as f64 * channel.entropy_per_symbol() - 1e-9)
        .ceil()
        .max(0.0) as usize
        + margin;
    if budget >= len {
        return (alice.to_vec(), len, true);
    }
    let hash = ToeplitzHash::new(len, budget, seed).expect("budget below block length");
    let columns: Vec<u64> = (0..len).map(|c| hash.column_mask(c)).collect();
    let syndrome = |bits: &[u8]| {
        bits.iter()
            .zip(&columns)
            .filter(|(b, _)| **b == 1)
            .fold(0u64, |acc, (_, c)| acc ^ c)
    };
    let target = syndrome(alice) ^ syndrome(bob);

    let mut candidate = bob.to_vec();
    let mut best: Option<(f64, Vec<u8>)> = None;
    let mut current = 0u64;
    for g in 0u64..1 << len {
        if g > 0 {
            let flip = g.trailing_zeros() as usize;
            candidate[flip] ^= 1;
            current ^= columns[flip];
        }
        if current == target {
            let ll = channel.log_likelihood(&candidate, bob);
            if best.as_ref().is_none_or(|(b, _)| ll > *b) {
                best = Some((ll, candidate.clone()));
            }
        }
    }
    let decoded = best.map(|(_, c)| c).unwrap_or_else(|| bob.to_vec());
    let ok = decoded == alice;
    (decoded, budget, ok)
}

/// Reconciled strings of both pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reconciliation {
    pub alice1: Vec<u8>,
    pub bob1: Vec<u8>,
    pub leak1: usize,
    pub alice2: Vec<u8>,
    pub bob2: Vec<u8>,
    pub leak2: usize,
}

/// Reconciles both pairs of a non-aborted session. Any failed block is an
/// error.
pub fn reconcile(
    session: &KeySession,
    config: &ReconcileConfig,
    seed: u64,
) -> Result<Reconciliation> {
    if estimate_and_decide(session)?.abort {
        return Err(Error::Aborted);
    }
    let (keys, p1, p2) = reconcile_both(session, config, seed)?;
    for (pair, r) in [("Bob1", &p1), ("Bob2", &p2)] {
        if r.failed_blocks > 0 {
            return Err(Error::DecodeFailure {
                pair,
                failed: r.failed_blocks,
                total: r.blocks,
            });
        }
    }
    Ok(Reconciliation {
        alice1: keys.alice1,
        bob1: p1.decoded,
        leak1: p1.leak_bits,
        alice2: keys.alice2,
        bob2: p2.decoded,
        leak2: p2.leak_bits,
    })
}

fn reconcile_both(
    session: &KeySession,
    config: &ReconcileConfig,
    seed: u64,
) -> Result<(RawKeys, PairReconciliation, PairReconciliation)> {
    let keys = raw_keys(session)?;
    let ch1 = SymbolChannel::estimate(&keys.alice1, &keys.bob1, 2)?;
    let ch2 = SymbolChannel::estimate(&keys.alice2, &keys.bob2, 1)?;
    let p1 = reconcile_pair(
        &keys.alice1,
        &keys.bob1,
        &ch1,
        config,
        derive_seed(seed, STREAM_RECONCILE_B1),
    )?;
    let p2 = reconcile_pair(
        &keys.alice2,
        &keys.bob2,
        &ch2,
        config,
        derive_seed(seed, STREAM_RECONCILE_B2),
    )?;
    Ok((keys, p1, p2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionConfig {
    pub n: usize,
    pub p_test: f64,
    pub seed: u64,
    pub reconcile: ReconcileConfig,
}

/// Final keys after privacy amplification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalKeys {
    pub alice1: Vec<u8>,
    pub bob1: Vec<u8>,
    pub alice2: Vec<u8>,
    pub bob2: Vec<u8>,
}

/// Everything a finite-key session produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionReport {
    pub descriptor: ScenarioDescriptor,
    pub n: usize,
    pub estimates: Estimates,
    pub raw_len1: usize,
    pub raw_len2: usize,
    pub leak1: usize,
    pub leak2: usize,
    pub failed_blocks1: usize,
    pub failed_blocks2: usize,
    pub blocks1: usize,
    pub blocks2: usize,
    /// `None` when the session aborted or reconciliation failed.
    pub keys: Option<FinalKeys>,
    /// `ceil(sqrt(n))`: shared key needed to agree on the test subset.
    /// Reported only; not subtracted from the key length.
    pub sampling_key_bits: usize,
}

impl SessionReport {
    pub fn reconciled(&self) -> bool {
        !self.estimates.abort && self.failed_blocks1 == 0 && self.failed_blocks2 == 0
    }
}

/// Final key length for one pair:
/// `floor(n_key * (rate + own key-error term) - leak)`, clamped to the raw length.
pub fn target_length(
    key_runs: usize,
    rate: f64,
    key_term: f64,
    leak: usize,
    raw_len: usize,
) -> usize {
    let t = (key_runs as f64 * (rate + key_term) - leak as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(raw_len)
    }
}

/// Sampling, estimation, reconciliation and privacy amplification.
pub fn run_session(scenario: &NoiseScenario, config: &SessionConfig) -> Result<SessionReport> {
    let session = sample_runs(scenario, config.n, config.p_test, config.seed)?;
    let estimates = estimate_and_decide(&session)?;
    let mut report = SessionReport {
        descriptor: scenario.descriptor().clone(),
        n: config.n,
        estimates,
        raw_len1: 2 * estimates.counts.key_key,
        raw_len2: estimates.counts.key_key,
        leak1: 0,
        leak2: 0,
        failed_blocks1: 0,
        failed_blocks2: 0,
        blocks1: 0,
        blocks2: 0,
        keys: None,
        sampling_key_bits: (config.n as f64).sqrt().ceil() as usize,
    };
    if estimates.abort {
        return Ok(report);
    }
    let (keys, p1, p2) = reconcile_both(&session, &config.reconcile, config.seed)?;
    report.leak1 = p1.leak_bits;
    report.leak2 = p2.leak_bits;
    report.blocks1 = p1.blocks;
    report.blocks2 = p2.blocks;
    report.failed_blocks1 = p1.failed_blocks;
    report.failed_blocks2 = p2.failed_blocks;
    if !report.reconciled() {
        return Ok(report);
    }
    let n_key = estimates.counts.key_key;
    let len1 = target_length(
        n_key,
        estimates.r1,
        estimates.terms.h_key_b1,
        p1.leak_bits,
        keys.alice1.len(),
    );
    let len2 = target_length(
        n_key,
        estimates.r2,
        estimates.terms.h_key_b2,
        p2.leak_bits,
        keys.alice2.len(),
    );
    let seed1 = derive_seed(config.seed, STREAM_AMPLIFY_B1);
    let seed2 = derive_seed(config.seed, STREAM_AMPLIFY_B2);
    report.keys = Some(FinalKeys {
        alice1: privacy_amplify(&keys.alice1, len1, seed1)?,
        bob1: privacy_amplify(&p1.decoded, len1, seed1)?,
        alice2: privacy_amplify(&keys.alice2, len2, seed2)?,
        bob2: privacy_amplify(&p2.decoded, len2, seed2)?,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::make_scenario;

    fn naive_product(h: &ToeplitzHash, bits: &[u8]) -> Vec<u8> {
        (0..h.out_len())
            .map(|r| (0..h.in_len()).fold(0u8, |acc, c| acc ^ (h.entry(r, c) & bits[c])))
            .collect()
    }

    fn random_bits(n: usize, seed: u64) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0..2u8)).collect()
    }

    #[test]
    fn toeplitz_matches_naive_product() {
        for (n, m) in [(1, 1), (10, 3), (64, 64), (130, 70), (200, 1), (257, 129)] {
            let h = ToeplitzHash::new(n, m, n as u64 * 31 + m as u64).unwrap();
            for r in 1..m {
                for c in 1..n {
                    assert_eq!(h.entry(r, c), h.entry(r - 1, c - 1));
                }
            }
            let bits = random_bits(n, 5);
            assert_eq!(h.apply(&bits).unwrap(), naive_product(&h, &bits));
        }
    }

    #[test]
    fn toeplitz_edge_cases() {
        let h = ToeplitzHash::new(16, 0, 1).unwrap();
        assert!(h.apply(&[0; 16]).unwrap().is_empty());
        assert!(matches!(
            ToeplitzHash::new(4, 5, 0),
            Err(Error::OutputTooLong { .. })
        ));
        let h = ToeplitzHash::new(8, 4, 0).unwrap();
        assert!(matches!(
            h.apply(&[0; 7]),
            Err(Error::LengthMismatch {
                expected: 8,
                got: 7
            })
        ));
        let a = random_bits(8, 1);
        let b = random_bits(8, 2);
        let ab: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
        let (ha, hb, hab) = (
            h.apply(&a).unwrap(),
            h.apply(&b).unwrap(),
            h.apply(&ab).unwrap(),
        );
        assert_eq!(
            hab,
            ha.iter().zip(&hb).map(|(p, q)| p ^ q).collect::<Vec<_>>()
        );
    }

    #[test]
    fn privacy_amplify_examples() {
        let key = random_bits(100, 3);
        assert!(privacy_amplify(&key, 0, 9).unwrap().is_empty());
        assert_eq!(
            privacy_amplify(&key, 40, 9).unwrap(),
            privacy_amplify(&key, 40, 9).unwrap()
        );
        assert!(privacy_amplify(&key, 101, 9).is_err());
    }

    #[test]
    fn record_lines_round_trip() {
        let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
            lambda: 0.2,
            delta: 0.1,
        })
        .unwrap();
        let session = sample_runs(&sc, 300, 0.4, 11).unwrap();
        let parsed = parse_records(&session.export()).unwrap();
        assert_eq!(parsed, session.records());
        assert!(matches!(
            RunRecord::parse(3, "1 K X 0 0 0 0 0 0 0"),
            Err(Error::Record { line: 3, .. })
        ));
        assert!(RunRecord::parse(1, "1 K K 0 0").is_err());
    }

    #[test]
    fn identity_key_runs_agree() {
        let session = sample_runs(&NoiseScenario::identity(), 2000, 0.1, 4).unwrap();
        for r in session.records() {
            if (r.bob1, r.bob2) == (RunType::Key, RunType::Key) {
                assert_eq!((r.i, r.j, r.k), (Some(r.x), Some(r.y), Some(r.z)));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_validated() {
        let sc = NoiseScenario::identity();
        assert_eq!(
            sample_runs(&sc, 500, 0.3, 9).unwrap(),
            sample_runs(&sc, 500, 0.3, 9).unwrap()
        );
        assert_ne!(
            sample_runs(&sc, 500, 0.3, 9).unwrap(),
            sample_runs(&sc, 500, 0.3, 10).unwrap()
        );
        assert!(sample_runs(&sc, 0, 0.3, 9).is_err());
        assert!(matches!(
            sample_runs(&sc, 10, 1.0, 9),
            Err(Error::ParameterOutOfRange { name: "p_test", .. })
        ));
        assert!(sample_runs(&sc, 10, 0.0, 9).is_err());
    }

    #[test]
    fn missing_test_runs_is_an_error() {
        let session = sample_runs(&NoiseScenario::identity(), 200, 0.2, 1).unwrap();
        let only_key: Vec<RunRecord> = session
            .records()
            .iter()
            .filter(|r| r.bob1 == RunType::Key)
            .cloned()
            .collect();
        let trimmed = KeySession::from_records(ScenarioDescriptor::Identity, 1, 0.2, only_key);
        assert!(matches!(
            estimate_and_decide(&trimmed),
            Err(Error::MissingRuns("Bob1 test"))
        ));
    }

    #[test]
    fn noiseless_block_needs_no_hash() {
        let a = random_bits(48, 8);
        let ch = SymbolChannel::estimate(&a, &a, 1).unwrap();
        assert_eq!(ch.entropy_per_symbol(), 0.0);
        let cfg = ReconcileConfig {
            margin_bits: 0,
            block_len: 12,
        };
        let r = reconcile_pair(&a, &a, &ch, &cfg, 3).unwrap();
        assert_eq!(r.leak_bits, 0);
        assert_eq!(r.decoded, a);
    }

    #[test]
    fn ml_decoding_corrects_sparse_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let a: Vec<u8> = (0..4000).map(|_| rng.gen_range(0..2u8)).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&x| x ^ u8::from(rng.gen::<f64>() < 0.02))
            .collect();
        let ch = SymbolChannel::estimate(&a, &b, 1).unwrap();
        let cfg = ReconcileConfig {
            margin_bits: 8,
            block_len: 20,
        };
        let r = reconcile_pair(&a, &b, &ch, &cfg, 5).unwrap();
        assert!(r.leak_bits < a.len());
        assert!(r.block_failure_rate() <= 0.02, "{}", r.block_failure_rate());
    }

    #[test]
    fn reconcile_rejects_bad_blocks() {
        let a = random_bits(24, 8);
        let ch = SymbolChannel::estimate(&a, &a, 2).unwrap();
        for block_len in [0, 7, 22] {
            let cfg = ReconcileConfig {
                margin_bits: 4,
                block_len,
            };
            assert!(reconcile_pair(&a, &a, &ch, &cfg, 0).is_err());
        }
    }

    #[test]
    fn identity_session_produces_equal_keys() {
        let cfg = SessionConfig {
            n: 1000,
            p_test: 0.1,
            seed: 7,
            reconcile: ReconcileConfig::default(),
        };
        let report = run_session(&NoiseScenario::identity(), &cfg).unwrap();
        assert!(!report.estimates.abort);
        let keys = report.keys.unwrap();
        assert!(!keys.alice1.is_empty() && !keys.alice2.is_empty());
        assert_eq!(keys.alice1, keys.bob1);
        assert_eq!(keys.alice2, keys.bob2);
    }

    #[test]
    fn noisy_session_aborts() {
        let sc = make_scenario(&ScenarioDescriptor::DepolIndep {
            lambda: 0.9,
            delta: 0.9,
        })
        .unwrap();
        let cfg = SessionConfig {
            n: 1000,
            p_test: 0.2,
            seed: 1,
            reconcile: ReconcileConfig::default(),
        };
        let report = run_session(&sc, &cfg).unwrap();
        assert!(report.estimates.abort);
        assert!(report.keys.is_none());
        let session = sample_runs(&sc, 1000, 0.2, 1).unwrap();
        assert!(matches!(
            reconcile(&session, &ReconcileConfig::default(), 1),
            Err(Error::Aborted)
        ));
    }

    #[test]
    fn target_length_clamps() {
        assert_eq!(target_length(100, -1.0, 0.5, 0, 200), 0);
        assert_eq!(target_length(100, 2.0, 0.0, 50, 200), 150);
        assert_eq!(target_length(100, 2.0, 1.0, 0, 200), 200);
    }
}
