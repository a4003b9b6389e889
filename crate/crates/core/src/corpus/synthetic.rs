//! Desk-scale stand-in for multi-domain review corpora.
//!
//! Every domain draws documents from a shared sentiment lexicon and its own
//! private lexicon. The private lexicon of domain `i` is the window of radius
//! `window_radius` of a common "aspect" pool centred on `shift[i]`. Pool tokens
//! carry alternating base polarities; each domain flips the
//! `polarity_flip_fraction` of its window lying nearest its own shift, so
//! domains with close shifts also agree on domain-specific polarities while
//! distant ones disagree. Inside a document each sentiment word comes from the
//! private lexicon with probability `shift[i]` and from the shared lexicon
//! otherwise. Two domains with equal shifts are identically distributed, and a
//! larger `|shift[i] - shift[j]|` separates the bag-of-words marginals further,
//! which orders proxy A-distances by shift gap.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::{Content, DomainDataset, Example};
use crate::error::{ensure, Error, Result};

/// Fraction of vocabulary types in the shared sentiment lexicon.
const SHARED_FRACTION: f64 = 0.1;
/// Fraction of vocabulary types in the aspect pool private lexicons are cut from.
const POOL_FRACTION: f64 = 0.3;
/// Probability that a document position holds a sentiment word.
const SENTIMENT_RATE: f64 = 0.3;
/// Probability that a sentiment word agrees with the document label.
const LABEL_AGREEMENT: f64 = 0.8;
const MIN_LEN: usize = 20;
const MAX_LEN: usize = 60;
const MIN_VOCAB: usize = 100;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSuiteSpec {
    pub num_domains: usize,
    /// Per-domain shift in `[0, 1]`: private-lexicon mixture weight and window centre.
    pub shift: Vec<f64>,
    pub examples_per_domain: usize,
    /// Number of distinct word types the generator may emit.
    pub vocab_size: usize,
    pub polarity_flip_fraction: f64,
    /// Half-width of each domain's private window on the unit interval; 1
    /// gives every domain the whole aspect pool.
    pub window_radius: f64,
    pub seed: u64,
}

impl SyntheticSuiteSpec {
    pub fn new(shift: Vec<f64>, examples_per_domain: usize, seed: u64) -> Self {
        SyntheticSuiteSpec {
            num_domains: shift.len(),
            shift,
            examples_per_domain,
            vocab_size: 1000,
            polarity_flip_fraction: 0.4,
            window_radius: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_domains >= 2, "num_domains must be at least 2");
        ensure!(
            self.shift.len() == self.num_domains,
            "expected {} shift values, got {}",
            self.num_domains,
            self.shift.len()
        );
        ensure!(
            self.shift.iter().all(|s| (0.0..=1.0).contains(s)),
            "shift values must lie in [0, 1]"
        );
        ensure!(self.examples_per_domain >= 1, "examples_per_domain must be positive");
        ensure!(
            self.vocab_size >= MIN_VOCAB,
            "vocab_size must be at least {MIN_VOCAB}"
        );
        ensure!(
            (0.0..=0.5).contains(&self.polarity_flip_fraction),
            "polarity_flip_fraction must lie in [0, 0.5]"
        );
        ensure!(
            self.window_radius > 0.0 && self.window_radius <= 1.0,
            "window_radius must lie in (0, 1]"
        );
        Ok(())
    }

    pub fn domain_name(i: usize) -> String {
        format!("d{i}")
    }

    /// Parses a flat `key=value` file; `shift` is comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut spec = SyntheticSuiteSpec::new(Vec::new(), 0, 0);
        let mut num_domains = None;
        for (k, v) in &kv {
            let bad = |ty: &str| Error::Config(format!("key '{k}': expected {ty}, got '{v}'"));
            match k.as_str() {
                "num_domains" => num_domains = Some(v.parse().map_err(|_| bad("integer"))?),
                "shift" => {
                    spec.shift = v
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("comma-separated reals"))?
                }
                "examples_per_domain" => {
                    spec.examples_per_domain = v.parse().map_err(|_| bad("integer"))?
                }
                "vocab_size" => spec.vocab_size = v.parse().map_err(|_| bad("integer"))?,
                "polarity_flip_fraction" => {
                    spec.polarity_flip_fraction = v.parse().map_err(|_| bad("real"))?
                }
                "window_radius" => spec.window_radius = v.parse().map_err(|_| bad("real"))?,
                "seed" => spec.seed = v.parse().map_err(|_| bad("integer"))?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        spec.num_domains = num_domains.unwrap_or(spec.shift.len());
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_kv_string(&self) -> String {
        let shifts: Vec<String> = self.shift.iter().map(|s| s.to_string()).collect();
        format!(
            "num_domains={}\nshift={}\nexamples_per_domain={}\nvocab_size={}\npolarity_flip_fraction={}\nwindow_radius={}\nseed={}\n",
            self.num_domains,
            shifts.join(","),
            self.examples_per_domain,
            self.vocab_size,
            self.polarity_flip_fraction,
            self.window_radius,
            self.seed
        )
    }
}

struct Lexicon {
    shared_pos: Vec<String>,
    shared_neg: Vec<String>,
    pool: Vec<String>,
    neutral: Vec<String>,
}

impl Lexicon {
    fn new(vocab_size: usize) -> Self {
        let n_shared = ((vocab_size as f64 * SHARED_FRACTION) as usize).max(4) & !1;
        let n_pool = ((vocab_size as f64 * POOL_FRACTION) as usize).max(10);
        let n_neutral = vocab_size - n_shared - n_pool;
        Lexicon {
            shared_pos: (0..n_shared / 2).map(|k| format!("s{}", 2 * k)).collect(),
            shared_neg: (0..n_shared / 2).map(|k| format!("s{}", 2 * k + 1)).collect(),
            pool: (0..n_pool).map(|k| format!("p{k}")).collect(),
            neutral: (0..n_neutral).map(|k| format!("w{k}")).collect(),
        }
    }

    /// Pool token `k` sits at `(k + 0.5) / len` with base polarity `k % 2 == 0`.
    fn position(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.pool.len() as f64
    }

    fn window(&self, centre: f64, radius: f64) -> Vec<usize> {
        (0..self.pool.len())
            .filter(|&k| (self.position(k) - centre).abs() <= radius)
            .collect()
    }
}

fn domain_seed(seed: u64, domain: usize) -> u64 {
    seed ^ (domain as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `spec.num_domains` labeled raw-text datasets named `d0, d1, ...`.
pub fn generate_synthetic_suite(spec: &SyntheticSuiteSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let lex = Lexicon::new(spec.vocab_size);
    (0..spec.num_domains)
        .map(|i| generate_domain(spec, &lex, i))
        .collect()
}

fn generate_domain(spec: &SyntheticSuiteSpec, lex: &Lexicon, domain: usize) -> Result<DomainDataset> {
    let mut rng = crate::seeded(domain_seed(spec.seed, domain));
    let shift = spec.shift[domain];

    let window = lex.window(shift, spec.window_radius);
    // Flip the window tokens nearest to the domain's own shift, so domains
    // with close shifts share most of their domain-specific polarities.
    let mut by_proximity = window.clone();
    by_proximity.sort_by(|&a, &b| {
        let (da, db) = ((lex.position(a) - shift).abs(), (lex.position(b) - shift).abs());
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let n_flip = (window.len() as f64 * spec.polarity_flip_fraction).round() as usize;
    let flipped: HashSet<usize> = by_proximity[..n_flip].iter().copied().collect();
    let (mut private_pos, mut private_neg) = (Vec::new(), Vec::new());
    for &k in &window {
        let positive = (k % 2 == 0) != flipped.contains(&k);
        if positive {
            private_pos.push(lex.pool[k].as_str());
        } else {
            private_neg.push(lex.pool[k].as_str());
        }
    }
    private_pos.sort_unstable();
    private_neg.sort_unstable();

    let mut examples = Vec::with_capacity(spec.examples_per_domain);
    for _ in 0..spec.examples_per_domain {
        let label: u8 = rng.random_range(0..=1);
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..len {
            if !rng.random_bool(SENTIMENT_RATE) {
                words.push(lex.neutral.choose(&mut rng).expect("neutral lexicon").as_str());
                continue;
            }
            let positive = (label == 1) == rng.random_bool(LABEL_AGREEMENT);
            let private = rng.random_bool(shift);
            let word = match (private, positive) {
                (true, true) if !private_pos.is_empty() => *private_pos.choose(&mut rng).unwrap(),
                (true, false) if !private_neg.is_empty() => *private_neg.choose(&mut rng).unwrap(),
                (_, true) => lex.shared_pos.choose(&mut rng).unwrap().as_str(),
                (_, false) => lex.shared_neg.choose(&mut rng).unwrap().as_str(),
            };
            words.push(word);
        }
        examples.push(Example {
            content: Content::Text(words.join(" ")),
            label: Some(label),
            domain_id: domain,
        });
    }
    DomainDataset::new(SyntheticSuiteSpec::domain_name(domain), examples, true)
}
