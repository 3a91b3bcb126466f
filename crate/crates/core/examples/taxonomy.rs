//! Inspects the bundled anatomical taxonomy.

use phantomforge::taxonomy::{Sex, Taxonomy};

fn main() {
    let tax = Taxonomy::bundled();
    println!("{} structures", tax.len());
    for (group, n) in tax.group_counts() {
        println!("  {group:?}: {n}");
    }

    let pairs = tax.symmetric_pairs();
    println!("{} left/right pairs, e.g.", pairs.len());
    for (l, r) in pairs.iter().take(4) {
        println!("  {} <-> {}", tax.name(*l).unwrap(), tax.name(*r).unwrap());
    }

    if let Some(trio) = tax.skull_trio() {
        let names: Vec<_> = trio.iter().map(|id| tax.name(*id).unwrap()).collect();
        println!("skull trio: {}", names.join(", "));
    }

    let male = tax.expected_structures(Sex::Male);
    let female = tax.expected_structures(Sex::Female);
    let only = |a: &std::collections::BTreeSet<u16>, b: &std::collections::BTreeSet<u16>| {
        a.difference(b).map(|id| tax.name(*id).unwrap()).collect::<Vec<_>>().join(", ")
    };
    println!("expected: {} male, {} female", male.len(), female.len());
    println!("  male only: {}", only(&male, &female));
    println!("  female only: {}", only(&female, &male));
}
