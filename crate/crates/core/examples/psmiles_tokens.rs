//! Validation, capping, chemical tokenization and subword-score merging for
//! polymer SMILES.

use anyhow::Result;
use polyllmem::psmiles::{build_merge_map, cap, join, merge_scores, tokenize, validate};

fn main() -> Result<()> {
    for s in ["[*]CC([*])C", "[*]CC([*])c1ccncc1", "[*]CC(Cl)[*]", "CC(C", "[*]CXC[*]"] {
        let problems = validate(s);
        if !problems.is_empty() {
            let text: Vec<String> = problems.iter().map(ToString::to_string).collect();
            println!("{s:<22} invalid: {}", text.join("; "));
            continue;
        }
        let tokens = tokenize(s)?;
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(join(&tokens), s);
        println!("{s:<22} cap {:<16} tokens {texts:?}", cap(s)?);
    }

    // A subword tokenizer might split "[*]" and "Cl" across pieces; merging
    // folds piece scores back onto chemical tokens without changing the total.
    let s = "[*]CC(Cl)[*]";
    let raw = ["[", "*]C", "C(", "C", "l)", "[*", "]"];
    let target: Vec<String> = tokenize(s)?.into_iter().map(|t| t.text).collect();
    let map = build_merge_map(&raw, &target)?;
    let scores = [0.5, 1.0, -0.25, 0.75, 0.5, 0.125, 0.125];
    let merged = merge_scores(&scores, &map)?;
    println!("\nraw pieces {raw:?}");
    for (tok, score) in map.refined_tokens().iter().zip(&merged) {
        println!("  {tok:<4} {score:+.4}");
    }
    println!("total raw {} merged {}", scores.iter().sum::<f64>(), merged.iter().sum::<f64>());
    Ok(())
}
