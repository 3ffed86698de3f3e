//! Property CSV ingestion, the seeded train/test split with folds, and the
//! target transforms used in training.

use anyhow::Result;
use polyllmem::pipeline::{make_split, property_subset, read_csv, transform_target, PropertyCatalog, Standardizer};

const CSV: &str = "\
id,psmiles,Tg,E
p01,[*]CC[*],-25,1.1
p02,[*]CC([*])C,-10,1.4
p03,[*]CC([*])c1ccccc1,100,3.2
p04,[*]CC(Cl)[*],81,
p05,[*]C(F)(F)C(F)(F)[*],117,0.5
p06,[*]CC([*])(C)C(=O)OC,105,3.0
p07,[*]OCC[*],-67,0.0
p08,[*]CC([*])C#N,97,
p09,[*]c1ccc(cc1)C(=O)OCCOC(=O)[*],,2.9
p10,[*]CCCCCC[*],-60,0.9
p11,[*]CC([*])O,85,2.2
p12,bad,12,1.0
p13,[*]CC([*])OC(C)=O,30,1.7
";

fn main() -> Result<()> {
    let catalog = PropertyCatalog::standard();
    let outcome = read_csv(CSV.as_bytes(), &catalog)?;
    println!("{} records", outcome.records.len());
    for w in &outcome.warnings {
        println!("  skipped {w}");
    }

    let tg = property_subset(&outcome.records, "Tg");
    let ids: Vec<String> = tg.iter().map(|s| s.id.clone()).collect();
    let plan = make_split(&ids, 42)?;
    println!("Tg: {} train, test {:?}", plan.train_ids.len(), plan.test_ids);
    for (k, fold) in plan.folds.iter().enumerate() {
        println!("  fold {k}: {fold:?}");
    }

    // Young's modulus is trained on log10; p07 has E = 0 and was dropped at ingest.
    let e = property_subset(&outcome.records, "E");
    let logged = e.iter().map(|s| transform_target(s.value, "E", &catalog)).collect::<Result<Vec<_>, _>>()?;
    let scaler = Standardizer::fit(&logged)?;
    println!("E: {} values, log10 mean {:.3} std {:.3}", e.len(), scaler.mean, scaler.std);
    for (s, z) in e.iter().zip(scaler.apply_all(&logged)).take(3) {
        println!("  {} E = {} GPa -> z = {z:+.3}", s.id, s.value);
    }
    Ok(())
}
