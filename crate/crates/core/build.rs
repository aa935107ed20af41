use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::Deserialize;

#[derive(Deserialize)]
struct Tables {
    format: String,
    version: u32,
    coefficient_order: Vec<String>,
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    deg_a: u8,
    deg_b: u8,
    degree: u8,
    factors: String,
    terms: Vec<(u8, i64, Vec<u8>)>,
}

fn main() {
    let src = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap()).join("data/resultants.json");
    println!("cargo:rerun-if-changed={}", src.display());
    let text = fs::read_to_string(&src).expect("read resultant tables");
    let tables: Tables = serde_json::from_str(&text).expect("parse resultant tables");
    assert_eq!(tables.format, "sylvester-resultant-tables");
    assert_eq!(tables.version, 1);
    assert_eq!(tables.coefficient_order.len(), 20);

    let mut out = String::new();
    writeln!(out, "// Generated by build.rs from data/resultants.json. Do not edit.").unwrap();
    for case in &tables.cases {
        writeln!(
            out,
            "static TERMS_{}_{}: [Term; {}] = [",
            case.deg_a,
            case.deg_b,
            case.terms.len()
        )
        .unwrap();
        for (power, coeff, factors) in &case.terms {
            assert!(factors.len() <= 6);
            let mut idx = [NONE; 6];
            idx[..factors.len()].copy_from_slice(factors);
            writeln!(
                out,
                "    Term {{ power: {power}, coeff: {coeff}.0, len: {}, factors: {:?} }},",
                factors.len(),
                idx
            )
            .unwrap();
        }
        writeln!(out, "];").unwrap();
    }
    writeln!(out, "static CASES: [CaseTable; {}] = [", tables.cases.len()).unwrap();
    for case in &tables.cases {
        writeln!(
            out,
            "    CaseTable {{ deg_a: {}, deg_b: {}, degree: {}, factors: {:?}, terms: &TERMS_{}_{} }},",
            case.deg_a, case.deg_b, case.degree, case.factors, case.deg_a, case.deg_b
        )
        .unwrap();
    }
    writeln!(out, "];").unwrap();

    let dest = PathBuf::from(env::var("OUT_DIR").unwrap()).join("resultant_tables.rs");
    fs::write(dest, out).expect("write generated tables");
}

const NONE: u8 = 255;
