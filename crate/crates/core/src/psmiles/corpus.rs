use crate::rng::SplitMix64;

const BACKBONE: &[&str] = &["C", "C", "C", "C", "N", "O", "S", "[Si]", "c1ccc(cc1)", "C(=O)", "[NH]"];
const SUBSTITUENTS: &[&str] = &[
    "F",
    "Cl",
    "Br",
    "C",
    "CC",
    "O",
    "=O",
    "OC",
    "C#N",
    "C(F)(F)F",
    "c1ccccc1",
    "c1ccncc1",
    "C1CCCCC1",
    "C(=O)OC",
    "N(C)C",
    "[NH2]",
    "S(=O)(=O)C",
    "C%10CCCC%10",
    "c1ccc(Cl)cc1",
    "OCC(F)(F)F",
];

/// Draws one valid homopolymer repeat unit.
pub fn random_psmiles(rng: &mut SplitMix64) -> String {
    let n = 1 + rng.below(6) as usize;
    let star_after = rng.below(n as u64) as usize;
    let star_in_branch = rng.below(2) == 0;

    let mut s = String::from("[*]");
    let mut prev_plain_carbon = false;
    for i in 0..n {
        let atom = BACKBONE[rng.below(BACKBONE.len() as u64) as usize];
        if atom == "C" && prev_plain_carbon && rng.below(8) == 0 {
            s.push('=');
        }
        s.push_str(atom);
        prev_plain_carbon = atom == "C";
        if i == star_after && star_in_branch {
            s.push_str("([*])");
        }
        for _ in 0..rng.below(3) {
            if rng.below(2) == 0 {
                let sub = SUBSTITUENTS[rng.below(SUBSTITUENTS.len() as u64) as usize];
                s.push('(');
                s.push_str(sub);
                s.push(')');
            }
        }
    }
    if !star_in_branch {
        s.push_str("[*]");
    }
    s
}

/// `n` repeat units from a seeded stream (duplicates possible).
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| random_psmiles(&mut rng)).collect()
}
