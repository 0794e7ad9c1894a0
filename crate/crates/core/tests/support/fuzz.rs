//! Reflection fuzz drivers: random bytes and mutated fixture modules. Any
//! panic, including an out-of-bounds index, propagates to the caller.

#![allow(dead_code)]

use girp::fixtures;
use girp::interp::dry_run;
use girp::spirv::{reflect, SpirvModule};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Parses, reflects and dry-runs every entry point. True if reflection
/// accepted the input.
fn exercise(bytes: &[u8]) -> bool {
    let Ok(m) = SpirvModule::from_bytes(bytes) else {
        return false;
    };
    let Ok(info) = reflect(&m) else {
        return false;
    };
    for ep in &info.entry_points {
        let _ = dry_run(&m, &ep.name);
    }
    true
}

/// `cases` random byte strings; every other one carries a valid header so
/// the instruction walk runs. Returns how many reflected successfully.
pub fn random_bytes(cases: usize, seed: u64) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut accepted = 0;
    for i in 0..cases {
        let len = rng.gen_range(0..256usize);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if i % 2 == 0 && bytes.len() >= 20 {
            bytes[0..4].copy_from_slice(&0x0723_0203u32.to_le_bytes());
            bytes[4..8].copy_from_slice(&0x0001_0000u32.to_le_bytes());
            bytes[16..20].fill(0);
        }
        accepted += exercise(&bytes) as usize;
    }
    accepted
}

/// `cases` fixture modules with one to three random mutations each.
pub fn mutated_fixtures(cases: usize, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let corpus: Vec<Vec<u8>> = fixtures::corpus().iter().map(|f| f.module.to_bytes()).collect();
    for _ in 0..cases {
        let mut bytes = corpus[rng.gen_range(0..corpus.len())].clone();
        for _ in 0..rng.gen_range(1..4) {
            if bytes.len() < 24 {
                break;
            }
            match rng.gen_range(0..4) {
                0 => {
                    let i = rng.gen_range(0..bytes.len());
                    bytes[i] = rng.gen();
                }
                1 => {
                    // Word count or opcode of some instruction word.
                    let w = rng.gen_range(5..bytes.len() / 4);
                    let v: u32 = rng.gen_range(0..0x20_0000);
                    bytes[w * 4..w * 4 + 4].copy_from_slice(&v.to_le_bytes());
                }
                2 => {
                    let keep = rng.gen_range(0..bytes.len());
                    bytes.truncate(keep);
                }
                _ => {
                    let w = rng.gen_range(0..bytes.len() / 4);
                    bytes[w * 4..w * 4 + 4].copy_from_slice(&u32::MAX.to_le_bytes());
                }
            }
        }
        exercise(&bytes);
    }
}
