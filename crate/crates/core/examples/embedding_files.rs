//! Writes pooled (PLYE) and token-level (PLYT) embedding files, reads them
//! back, and shows the error code reported for each kind of corruption.

use anyhow::Result;
use polyllmem::embed_store::{
    decode_any, encode_matrix, read_matrix, read_tokens, synth_embeddings, synth_token_embeddings, write_matrix,
    write_tokens, EmbeddingMeta, Modality,
};
use polyllmem::psmiles::generate_corpus;

type Corruption = Box<dyn Fn(&mut Vec<u8>)>;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let psmiles = generate_corpus(5, 1);
    let ids: Vec<String> = (0..psmiles.len()).map(|i| format!("P{i}")).collect();

    let pooled_meta = EmbeddingMeta::new(Modality::Structure3d, 8, "example");
    let pooled = synth_embeddings(&ids, &psmiles, &pooled_meta, 7, None)?;
    let pooled_path = dir.path().join("uni.plye");
    write_matrix(&pooled, &pooled_path)?;
    let back = read_matrix(&pooled_path)?;
    assert_eq!(back, pooled);
    println!(
        "PLYE: {} records of dim {}, {} bytes",
        back.records.len(),
        back.dim(),
        std::fs::metadata(&pooled_path)?.len()
    );

    let token_meta = EmbeddingMeta::new(Modality::TextLlm, 4, "example");
    let tokens = synth_token_embeddings(&ids, &psmiles, &token_meta, 7, None)?;
    let token_path = dir.path().join("llm.plyt");
    write_tokens(&tokens, &token_path)?;
    let back = read_tokens(&token_path)?;
    let first = &back.records[0];
    println!("PLYT: {} has {} tokens {:?}", first.id, first.tokens.len(), first.tokens);

    let bytes = encode_matrix(&pooled)?;
    let corruptions: [(&str, Corruption); 4] = [
        ("wrong magic", Box::new(|b| b[0] = b'Q')),
        ("future version", Box::new(|b| b[4] = 2)),
        ("cut short", Box::new(|b| b.truncate(b.len() - 3))),
        ("extra byte", Box::new(|b| b.push(0))),
    ];
    for (what, corrupt) in corruptions {
        let mut b = bytes.clone();
        corrupt(&mut b);
        match decode_any(&b) {
            Ok(_) => println!("{what:<15} unexpectedly decoded"),
            Err(e) => println!("{what:<15} {:<16} {e}", e.code()),
        }
    }
    Ok(())
}
