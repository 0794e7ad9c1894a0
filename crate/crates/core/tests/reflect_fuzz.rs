//! Reflection over hostile input: random bytes and mutated real modules.

#[path = "support/fuzz.rs"]
mod fuzz;

const FUZZ_CASES: usize = 100_000;

#[test]
fn random_bytes_never_crash() {
    let accepted = fuzz::random_bytes(FUZZ_CASES / 2, 7);
    assert!(accepted < FUZZ_CASES / 2);
}

#[test]
fn mutated_fixtures_never_crash() {
    fuzz::mutated_fixtures(FUZZ_CASES / 2, 7);
}
