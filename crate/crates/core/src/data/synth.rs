use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Triplet;
use crate::error::{Error, Result};

/// Per-token corruption rates applied to pe to obtain mt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub sub_rate: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: Noise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n: 2000,
            vocab_size: 50,
            min_len: 3,
            max_len: 8,
            noise: Noise {
                sub_rate: 0.15,
                del_rate: 0.0,
                ins_rate: 0.0,
            },
        }
    }
}

/// A generated record and the generator's own record of which mt tokens
/// are untouched copies of pe tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub triplet: Triplet,
    pub kept: Vec<u8>,
}

fn check(cfg: &SynthConfig) -> Result<()> {
    let Noise {
        sub_rate,
        del_rate,
        ins_rate,
    } = cfg.noise;
    let rates = [sub_rate, del_rate, ins_rate];
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::config("noise rates must lie in [0, 1]"));
    }
    if rates.iter().sum::<f64>() >= 1.0 {
        return Err(Error::config("noise rates must sum to less than 1"));
    }
    if cfg.vocab_size < 2 {
        return Err(Error::config("synthetic vocabulary needs at least 2 words"));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::config(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    Ok(())
}

/// Generates records: pe is uniform over `t0..t{V-1}`, src maps each pe word
/// through a fixed permutation onto `s0..s{V-1}`, and mt corrupts pe with one
/// categorical draw per word (substitute, delete, keep and insert after, keep).
pub fn synth_records(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = cfg.vocab_size;
    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng);
    let Noise {
        sub_rate,
        del_rate,
        ins_rate,
    } = cfg.noise;
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let pe: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
        let mut mt = Vec::with_capacity(len + 2);
        let mut kept = Vec::with_capacity(len + 2);
        for &w in &pe {
            let u: f64 = rng.random();
            if u < sub_rate {
                let other = (w + rng.random_range(1..v)) % v;
                mt.push(other);
                kept.push(0);
            } else if u < sub_rate + del_rate {
            } else if u < sub_rate + del_rate + ins_rate {
                mt.push(w);
                kept.push(1);
                mt.push(rng.random_range(0..v));
                kept.push(0);
            } else {
                mt.push(w);
                kept.push(1);
            }
        }
        if mt.is_empty() {
            mt.push(pe[0]);
            kept.push(1);
        }
        let word = |p: &str, i: usize| format!("{p}{i}");
        out.push(SynthRecord {
            triplet: Triplet {
                src: pe.iter().map(|&w| word("s", perm[w])).collect(),
                mt: mt.iter().map(|&w| word("t", w)).collect(),
                pe: pe.iter().map(|&w| word("t", w)).collect(),
                labels: None,
            },
            kept,
        });
    }
    Ok(out)
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<Triplet>> {
    Ok(synth_records(cfg)?.into_iter().map(|r| r.triplet).collect())
}
