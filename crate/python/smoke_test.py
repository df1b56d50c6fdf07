#!/usr/bin/env python3
"""Smoke test for the flexbid Python extension module.

Builds nothing itself: run `cargo build -p flexbid-py` (or --release) first,
then `python3 python/smoke_test.py`. The script locates the cdylib under
target/, stages it as an importable module, and drives a miniature end-to-end
planning run.
"""

import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module() -> Path:
    candidates = [
        REPO / "target" / profile / "libflexbid.so"
        for profile in ("release", "debug")
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit(
            "libflexbid.so not found; run `cargo build -p flexbid-py` first "
            f"(searched {[str(p) for p in candidates]})"
        )
    stage = Path(tempfile.mkdtemp(prefix="flexbid_py_"))
    shutil.copy2(lib, stage / "flexbid.so")
    return stage


def check(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return ok


def main() -> int:
    sys.path.insert(0, str(stage_module()))
    import flexbid

    ok = True

    spec = flexbid.FleetSpec(n_vehicles=150, rng_seed=3)
    sessions = flexbid.sample_fleet(spec)
    ok &= check("fleet sampling", len(sessions) == 150, f"{len(sessions)} sessions")

    vb = flexbid.build_envelopes(sessions)
    ok &= check(
        "envelope invariants",
        vb.e_min_mwh[0] == 0.0
        and abs(vb.e_min_mwh[-1] - vb.e_max_mwh[-1]) < 1e-9
        and vb.total_energy_mwh > 0,
        f"total need {vb.total_energy_mwh:.3f} MWh",
    )

    feasible = vb.check_trajectory(
        [(vb.e_max_mwh[t + 1] - vb.e_max_mwh[t]) / 0.25 for t in range(vb.horizon_qh)]
    )
    ok &= check("earliest-start trajectory feasible", feasible is None, str(feasible))

    params = flexbid.default_market_params()
    prices = flexbid.synthetic_prices("duck_curve")
    scenarios = flexbid.sample_scenarios(params, prices, n=25, seed=11)
    up, down, none = scenarios.state_frequencies()
    ok &= check(
        "scenario sampling",
        len(scenarios) == 25 and down > up,
        f"state frequencies up={up:.2f} down={down:.2f} none={none:.2f}",
    )

    ind = flexbid.solve_independent(
        vb, scenarios, prices, beta=0.4, alpha=0.95, fee=1.0, max_nodes=2
    )
    coopt = flexbid.solve_cooptimized(
        vb, scenarios, prices, beta=0.4, alpha=0.95, fee=1.0, max_nodes=2,
        warm_start=ind,
    )
    ok &= check(
        "co-optimised dominates independent",
        coopt.objective_value >= ind.objective_value - 1e-6,
        f"{coopt.objective_value:.2f} vs {ind.objective_value:.2f} EUR",
    )
    ok &= check(
        "independent buys the full need day-ahead",
        abs(ind.da_volume_mwh - vb.total_energy_mwh) < 1e-6,
        f"{ind.da_volume_mwh:.3f} MWh",
    )

    kpi_ind = flexbid.evaluate(ind, scenarios, prices)
    kpi_coopt = flexbid.evaluate(coopt, scenarios, prices)
    need = vb.total_energy_mwh
    for kpi, label in ((kpi_ind, "independent"), (kpi_coopt, "cooptimized")):
        sourced = (
            kpi.da_volume_mwh
            - kpi.mfrr_up_volume_mwh
            + kpi.mfrr_dn_volume_mwh
            - kpi.imbalance_up_volume_mwh
            + kpi.imbalance_dn_volume_mwh
        )
        ok &= check(
            f"energy volume identity ({label})",
            abs(sourced - need) < 1e-6,
            f"{sourced:.6f} vs {need:.6f} MWh",
        )

    report = flexbid.compare(kpi_ind, kpi_coopt)
    ok &= check(
        "comparison report",
        report["expected_total_delta_eur"] >= -1e-6,
        f"expected delta {report['expected_total_delta_eur']:+.2f} EUR",
    )

    print("smoke test", "PASSED" if ok else "FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
