#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slrscreen::corpus::{assemble_corpus, LabeledCorpus, StudyRecord};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

const SYLLABLES_INC: [&str; 6] = ["ka", "ro", "ti", "mu", "sa", "vo"];
const SYLLABLES_EXC: [&str; 6] = ["da", "lo", "ni", "pu", "ga", "zo"];
const SYLLABLES_NOISE: [&str; 6] = ["ba", "fo", "hi", "ju", "wa", "yo"];
const GLUE: [&str; 8] = ["the", "of", "and", "in", "for", "with", "on", "to"];

fn vocabulary(prefix: &str, syllables: &[&str], size: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    'outer: for a in syllables {
        for b in syllables {
            words.push(format!("{prefix}{a}{b}"));
            if words.len() == size {
                break 'outer;
            }
        }
    }
    words
}

/// Shape of a synthetic screening corpus.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub n_included: usize,
    pub n_excluded: usize,
    pub core_size: usize,
    pub noise_size: usize,
    /// Share of content tokens drawn from the shared noise vocabulary.
    pub noise_share: f64,
    pub tokens_per_doc: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_included: 24, n_excluded: 36, core_size: 30, noise_size: 30, noise_share: 0.2, tokens_per_doc: 40 }
    }
}

/// Records whose content words come from class-disjoint core vocabularies
/// plus a shared noise vocabulary, padded with English function words.
pub fn synthetic_records(spec: SyntheticSpec, seed: u64) -> (Vec<StudyRecord>, Vec<StudyRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inc_core = vocabulary("vel", &SYLLABLES_INC, spec.core_size);
    let exc_core = vocabulary("zon", &SYLLABLES_EXC, spec.core_size);
    let noise = vocabulary("mix", &SYLLABLES_NOISE, spec.noise_size);
    let mut make = |id: String, core: &[String], year: i32| {
        let mut words = Vec::new();
        for i in 0..spec.tokens_per_doc {
            let pool = if rng.gen_bool(spec.noise_share) { &noise } else { core };
            words.push(pool.choose(&mut rng).unwrap().clone());
            if i % 3 == 2 {
                words.push(GLUE.choose(&mut rng).unwrap().to_string());
            }
        }
        let title = format!("On the {} of {}", words[0], words[1]);
        StudyRecord {
            id,
            title,
            abstract_text: words.join(" "),
            keywords: String::new(),
            year,
            authors: vec!["Doe, Jane".into()],
            label: None,
        }
    };
    let included = (0..spec.n_included).map(|i| make(format!("inc{i:03}"), &inc_core, 2015 + (i % 8) as i32)).collect();
    let excluded = (0..spec.n_excluded).map(|i| make(format!("exc{i:03}"), &exc_core, 2015 + (i % 8) as i32)).collect();
    (included, excluded)
}

/// Even-indexed records of each class train, odd-indexed ones test.
pub fn split_half(records: &[StudyRecord]) -> (Vec<StudyRecord>, Vec<StudyRecord>) {
    let train = records.iter().step_by(2).cloned().collect();
    let test = records.iter().skip(1).step_by(2).cloned().collect();
    (train, test)
}

pub struct SyntheticSplit {
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
    pub raw: [Vec<StudyRecord>; 4],
}

/// Default 60-study corpus split evenly into training and test halves.
pub fn synthetic_split(seed: u64) -> SyntheticSplit {
    let (inc, exc) = synthetic_records(SyntheticSpec::default(), seed);
    let (tr_inc, te_inc) = split_half(&inc);
    let (tr_exc, te_exc) = split_half(&exc);
    SyntheticSplit {
        train: assemble_corpus(&tr_inc, &tr_exc).unwrap(),
        test: assemble_corpus(&te_inc, &te_exc).unwrap(),
        raw: [tr_inc, tr_exc, te_inc, te_exc],
    }
}

/// Textbook feature-scoring formulas over a dense matrix, used as oracles.
pub mod oracle {
    pub fn column(x: &[Vec<f64>], c: usize) -> Vec<f64> {
        x.iter().map(|r| r[c]).collect()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn is_constant(v: &[f64]) -> bool {
        v.iter().all(|&a| a == v[0])
    }

    /// Pearson chi-squared over the 2 x 1 table of per-class feature mass.
    pub fn chi2(v: &[f64], y: &[u8]) -> Option<f64> {
        let total: f64 = v.iter().sum();
        if total == 0.0 {
            return None;
        }
        let n = y.len() as f64;
        let mut stat = 0.0;
        for class in [0u8, 1] {
            let observed: f64 = v.iter().zip(y).filter(|(_, &l)| l == class).map(|(a, _)| a).sum();
            let n_c = y.iter().filter(|&&l| l == class).count() as f64;
            let expected = total * n_c / n;
            stat += (observed - expected).powi(2) / expected;
        }
        Some(stat)
    }

    /// One-way ANOVA F with two groups.
    pub fn anova_f(v: &[f64], y: &[u8]) -> Option<f64> {
        if y.len() < 3 || is_constant(v) {
            return None;
        }
        let grand = mean(v);
        let mut ssb = 0.0;
        let mut ssw = 0.0;
        for class in [0u8, 1] {
            let g: Vec<f64> = v.iter().zip(y).filter(|(_, &l)| l == class).map(|(a, _)| *a).collect();
            let m = mean(&g);
            ssb += g.len() as f64 * (m - grand).powi(2);
            ssw += g.iter().map(|a| (a - m).powi(2)).sum::<f64>();
        }
        let df_w = y.len() as f64 - 2.0;
        if ssw == 0.0 {
            return Some(f64::INFINITY);
        }
        Some(ssb / (ssw / df_w))
    }

    /// Product-moment correlation between the feature and the 0/1 label.
    pub fn pearson(v: &[f64], y: &[u8]) -> Option<f64> {
        if is_constant(v) {
            return None;
        }
        let yf: Vec<f64> = y.iter().map(|&l| l as f64).collect();
        let (mx, my) = (mean(v), mean(&yf));
        let sxy: f64 = v.iter().zip(&yf).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = v.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = yf.iter().map(|b| (b - my).powi(2)).sum();
        Some(sxy / (sxx * syy).sqrt())
    }

    pub fn close(a: f64, b: f64, tol: f64) -> bool {
        if a.is_infinite() || b.is_infinite() {
            return a == b;
        }
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }
}

/// Random dense nonnegative matrix with at least one row per class.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u8>) {
    let n = rng.gen_range(2..=6);
    let m = rng.gen_range(1..=6);
    let mut y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    y[0] = 1;
    y[1] = 0;
    y.shuffle(rng);
    let x = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| match rng.gen_range(0..4) {
                    0 => 0.0,
                    1 => rng.gen_range(0..3) as f64 * 0.5,
                    _ => rng.gen::<f64>(),
                })
                .collect()
        })
        .collect();
    (x, y)
}
