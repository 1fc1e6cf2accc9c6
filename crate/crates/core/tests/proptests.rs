//! Property tests for serialization round trips and algebraic
//! invariants that hold on arbitrary inputs.

use cqed_homodyne::io::{fmt_f64, parse_config, record_from_json, record_to_json, Series};
use cqed_homodyne::jumps::PhotocountRecord;
use cqed_homodyne::linalg::{cr, eigvalsh, lowrank_trace_distance, trace_distance, CMat, CVec};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL,
        prop::num::f64::SUBNORMAL,
        Just(0.0),
        Just(-0.0),
    ]
}

proptest! {
    #[test]
    fn float_formatting_roundtrips(x in finite_f64()) {
        let text = fmt_f64(x);
        let back: f64 = text.parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn csv_roundtrip(rows in prop::collection::vec(
        prop::collection::vec(finite_f64(), 3), 0..20)) {
        let mut s = Series::new(vec!["a".into(), "b".into(), "c".into()]);
        for r in rows {
            s.push(r);
        }
        let text = s.to_csv();
        let back = Series::from_csv(&text).unwrap();
        prop_assert_eq!(&s, &back);
        prop_assert_eq!(text, back.to_csv());
    }

    #[test]
    fn record_roundtrip(raw in prop::collection::vec((1u8..=2, 0.0f64..1.0), 0..12)) {
        // sort and dedup times to satisfy the strict-increase invariant
        let mut entries = raw;
        entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        entries.dedup_by(|a, b| a.1 == b.1);
        let entries: Vec<(u8, f64)> = entries
            .into_iter()
            .filter(|(_, t)| *t > 0.0 && *t < 1.0)
            .collect();
        let labels: Vec<u8> = entries.iter().map(|e| e.0).collect();
        let times: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let rec = PhotocountRecord::with_times(labels, 1.0, times).unwrap();
        let text = record_to_json(&rec).unwrap();
        let back = record_from_json(&text, 1.0).unwrap();
        prop_assert_eq!(rec, back);
    }

    #[test]
    fn config_never_panics(text in "\\PC*") {
        let _ = parse_config(&text);
    }

    #[test]
    fn csv_parser_never_panics(text in "\\PC*") {
        let _ = Series::from_csv(&text);
    }

    #[test]
    fn record_parser_never_panics(text in "\\PC*") {
        let _ = record_from_json(&text, 1.0);
    }

    #[test]
    fn lowrank_distance_matches_dense(seeds in prop::collection::vec(0u64..1000, 2..5)) {
        let n = 10;
        let mk = |seed: u64| -> CVec {
            let mut v = CVec::zeros(n);
            for i in 0..n {
                let a = ((seed * 31 + i as u64 * 17 + 3) % 101) as f64 / 101.0 - 0.5;
                let b = ((seed * 13 + i as u64 * 7 + 11) % 97) as f64 / 97.0 - 0.5;
                v[i] = C64::new(a, b);
            }
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.mapv(|z| z / cr(norm))
        };
        let w = 1.0 / seeds.len() as f64;
        let roots: Vec<(f64, CVec)> = seeds.iter().map(|s| (w, mk(*s))).collect();
        let other = vec![(0.7, mk(12345)), (0.3, mk(54321))];
        let dense = |r: &[(f64, CVec)]| {
            let mut m = CMat::zeros((n, n));
            for (wt, v) in r {
                for i in 0..n {
                    for j in 0..n {
                        m[[i, j]] += cr(*wt) * v[i] * v[j].conj();
                    }
                }
            }
            m
        };
        let want = trace_distance(&dense(&roots), &dense(&other));
        let got = lowrank_trace_distance(&roots, &other);
        prop_assert!((want - got).abs() < 1e-9, "{} vs {}", want, got);
    }

    #[test]
    fn jacobi_eigenvalues_bounded_by_norm(seed in 0u64..500) {
        let n = 8;
        let mut h = CMat::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let a = ((seed * 7 + (i * n + j) as u64 * 13) % 51) as f64 / 51.0 - 0.5;
                let b = ((seed * 3 + (i * n + j) as u64 * 29) % 37) as f64 / 37.0 - 0.5;
                h[[i, j]] = C64::new(a, b);
            }
        }
        let h = (&h + &h.t().mapv(|x| x.conj())).mapv(|x| x * cr(0.5));
        let ev = eigvalsh(&h);
        let tr: f64 = h.diag().iter().map(|x| x.re).sum();
        prop_assert!((ev.iter().sum::<f64>() - tr).abs() < 1e-9);
        let bound = cqed_homodyne::linalg::one_norm(&h) + 1e-12;
        prop_assert!(ev.iter().all(|x| x.abs() <= bound));
    }
}
