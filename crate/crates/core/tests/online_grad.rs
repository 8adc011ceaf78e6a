mod common;

use common::{rflo_closed_form_gap, rtrl_and_bptt, rtrl_rel_error};
use rtrrl_core::cells::CellKind;
use rtrrl_core::online_grad::oracle::max_rel_error;
use rtrrl_core::online_grad::Engine;

#[test]
fn diagonal_rtrl_matches_bptt() {
    for kind in [CellKind::Lru, CellKind::Lrcssm] {
        for (n, len) in [(1, 10), (2, 37), (4, 100)] {
            let err = rtrl_rel_error(kind, n, len, 3 + n as u64);
            assert!(err < 1e-8, "{kind:?} n={n} len={len}: {err}");
        }
    }
}

#[test]
fn dense_ctrnn_rtrl_matches_bptt() {
    let (a, b) = rtrl_and_bptt(CellKind::Ctrnn, 3, 40, 9, Engine::Rtrl);
    assert!(max_rel_error(&a, &b, 1e-12) < 1e-8);
}

#[test]
fn rflo_differs_from_exact_gradient() {
    // RFLO drops cross-unit terms, so it is an approximation.
    let (a, b) = rtrl_and_bptt(CellKind::Ctrnn, 3, 40, 9, Engine::Rflo);
    assert!(max_rel_error(&a, &b, 1e-12) > 1e-3);
}

#[test]
fn rflo_recursion_equals_unrolled_sum() {
    for (n, steps) in [(1, 1), (2, 10), (4, 100)] {
        let gap = rflo_closed_form_gap(n, steps, 11);
        assert!(gap < 1e-12, "n={n} steps={steps}: {gap}");
    }
}
