//! Brute-force check of the classifier against a hand-written evaluator of
//! the documented rule table, over an exhaustive parameter grid.

use bids_toolbox::classifier::DecisionTable;
use bids_toolbox::{Modality, SequenceParams, Suffix};

/// Straight-line transcription of the table: nested branches, no shared code
/// with the engine. Returns the rule id and the classification, if any.
fn oracle(p: &SequenceParams, gradients: bool) -> (&'static str, Option<(Modality, Suffix)>) {
    if gradients {
        return ("diffusion-files", Some((Modality::Dwi, Suffix::Dwi)));
    }
    let codes: &[String] = p.ss.as_deref().unwrap_or(&[]);
    let has = |c: &str| codes.iter().any(|x| x == c);
    if has("RM") {
        return ("R2", None);
    }
    if p.ir || p.ti_ms.is_some() {
        if let (Some(ti), Some(te)) = (p.ti_ms, p.te_ms) {
            if (1800.0..=3200.0).contains(&ti) && te >= 80.0 {
                return ("R3a", Some((Modality::Anat, Suffix::Flair)));
            }
        }
        if let Some(ti) = p.ti_ms {
            if (400.0..=1400.0).contains(&ti) {
                return ("R3b", Some((Modality::Anat, Suffix::T1w)));
            }
        }
        return ("R3c", None);
    }
    if has("EP") {
        if let (Some(tr), Some(te)) = (p.tr_ms, p.te_ms) {
            if (300.0..=5000.0).contains(&tr) && (20.0..=60.0).contains(&te) {
                return ("R4", Some((Modality::Func, Suffix::Bold)));
            }
        }
    }
    if let (Some(te), Some(tr)) = (p.te_ms, p.tr_ms) {
        if te >= 80.0 && tr >= 2000.0 {
            return ("R5", Some((Modality::Anat, Suffix::T2w)));
        }
    }
    if let (Some(te), Some(tr), Some(fa)) = (p.te_ms, p.tr_ms, p.fa_deg) {
        if te <= 30.0 && tr <= 800.0 && fa >= 50.0 {
            return ("R6", Some((Modality::Anat, Suffix::T1w)));
        }
    }
    ("R7", None)
}

fn grid() -> Vec<SequenceParams> {
    let fa = [
        None,
        Some(5.0),
        Some(15.0),
        Some(30.0),
        Some(50.0),
        Some(70.0),
        Some(90.0),
    ];
    let te = [None, Some(3.0), Some(25.0), Some(45.0), Some(90.0), Some(120.0)];
    let tr = [
        None,
        Some(200.0),
        Some(600.0),
        Some(2000.0),
        Some(5000.0),
        Some(9000.0),
    ];
    let ti = [None, Some(500.0), Some(900.0), Some(1400.0), Some(2500.0)];
    let ss = [None, Some("SE"), Some("GR"), Some("EP"), Some("IR"), Some("RM")];
    let mut out = Vec::new();
    for &fa_deg in &fa {
        for &te_ms in &te {
            for &tr_ms in &tr {
                for &ti_ms in &ti {
                    for ir in [true, false] {
                        for code in ss {
                            out.push(SequenceParams {
                                fa_deg,
                                ir,
                                ss: code.map(|c| vec![c.to_string()]),
                                te_ms,
                                ti_ms,
                                tr_ms,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn engine_matches_oracle_on_exhaustive_grid() {
    let table = DecisionTable::builtin();
    let grid = grid();
    assert_eq!(grid.len(), 7 * 6 * 6 * 5 * 2 * 6);
    let mut mismatches = Vec::new();
    for p in &grid {
        for gradients in [false, true] {
            let (want_id, want) = oracle(p, gradients);
            let got_rule = table.first_match(p, gradients);
            let got = table
                .classify("series", p, gradients, &[])
                .ok()
                .map(|c| (c.modality(), c.suffix()));
            if got_rule.rule_id != want_id || got != want {
                mismatches.push((p.clone(), gradients, got_rule.rule_id.clone(), want_id));
            }
        }
    }
    assert!(
        mismatches.is_empty(),
        "{} mismatches, first: {:?}",
        mismatches.len(),
        mismatches.first()
    );
}

#[test]
fn every_rule_is_reachable_on_the_grid() {
    let table = DecisionTable::builtin();
    let mut fired: Vec<String> = grid()
        .iter()
        .flat_map(|p| [false, true].map(|g| table.first_match(p, g).rule_id.clone()))
        .collect();
    fired.sort();
    fired.dedup();
    let mut all: Vec<String> = table.rules().iter().map(|r| r.rule_id.clone()).collect();
    all.sort();
    assert_eq!(fired, all);
}
