"""Desk-scale trend experiments and their pass/fail gates.

``python -m mgm.acceptance`` runs every cell (results are cached, see
:mod:`mgm.experiments`) and prints one line per gate.
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, replace

from .experiments import CellConfig, default_cache_dir, pooled_std, run_cell

# one core cannot train 512-wide networks for 20k iterations per cell in useful time
DESK = CellConfig(scenario="bias100", n_samples=16_000, hidden=(64, 64, 64), iters=20_000, batch=256,
                  mixer_iters=10_000, eval_runs=8, alpha=0.5, seed=0)


def cell(**kw) -> CellConfig:
    return replace(DESK, **kw)


CELLS = {
    "bias100_b1_baseline": cell(beta=1.0, mode="baseline"),
    "bias100_b1_combined": cell(beta=1.0, mode="combined"),
    "bias100_b0_baseline": cell(beta=0.0, mode="baseline"),
    "bias100_b0_combined": cell(beta=0.0, mode="combined"),
    "bias100_b05_combined": cell(beta=0.5, mode="combined"),
    "bias100_b1_alternate": cell(beta=1.0, mode="alternate"),
    "low32_b1_baseline": cell(scenario="low32", beta=1.0, mode="baseline", batch=32),
    "low32_b1_combined": cell(scenario="low32", beta=1.0, mode="combined", batch=32),
}


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def results(cache_dir=None, names=None) -> dict[str, dict]:
    cache_dir = cache_dir or default_cache_dir()
    names = names or list(CELLS)
    return {n: run_cell(CELLS[n], cache_dir=cache_dir) for n in names}


def _m(r: dict) -> float:
    return r["w1"]["mean"]


def gate_bias100_gain(r) -> Gate:
    b, c = _m(r["bias100_b1_baseline"]), _m(r["bias100_b1_combined"])
    return Gate("bias100 beta=1 combined <= 0.90 x baseline", c <= 0.90 * b, f"combined {c:.4f}, baseline {b:.4f}, ratio {c / b:.3f}")


def gate_no_coupling(r) -> Gate:
    b, c = r["bias100_b0_baseline"], r["bias100_b0_combined"]
    s = pooled_std(b["w1"], c["w1"])
    diff = abs(_m(c) - _m(b))
    return Gate("bias100 beta=0 |combined - baseline| <= 2 pooled std", diff <= 2 * s,
                f"|diff| {diff:.4f}, 2 pooled std {2 * s:.4f}")


def gate_monotone(r) -> Gate:
    seq = [r[k] for k in ("bias100_b0_combined", "bias100_b05_combined", "bias100_b1_combined")]
    ok = all(_m(b) <= _m(a) + pooled_std(a["w1"], b["w1"]) for a, b in zip(seq, seq[1:]))
    return Gate("combined W1 non-increasing over beta 0, 0.5, 1 (+1 pooled std slack)", ok,
                ", ".join(f"{_m(x):.4f}" for x in seq))


def gate_low32(r) -> Gate:
    b, c = _m(r["low32_b1_baseline"]), _m(r["low32_b1_combined"])
    return Gate("low32 beta=1 combined <= 0.95 x baseline", c <= 0.95 * b, f"combined {c:.4f}, baseline {b:.4f}, ratio {c / b:.3f}")


def gate_alternate(r) -> Gate:
    b, a, c = _m(r["bias100_b1_baseline"]), _m(r["bias100_b1_alternate"]), _m(r["bias100_b1_combined"])
    return Gate("bias100 beta=1 alternate < baseline", a < b,
                f"alternate {a:.4f}, baseline {b:.4f}, combined {c:.4f} (combined vs alternate not gated)")


GATES = (gate_bias100_gain, gate_no_coupling, gate_monotone, gate_low32, gate_alternate)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="run the desk-scale trend experiments")
    ap.add_argument("--cache", default=None)
    ap.add_argument("--only", nargs="*", default=None, help="cell names to run")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    names = args.only or list(CELLS)
    r = {}
    for n in names:
        r[n] = run_cell(CELLS[n], cache_dir=args.cache or default_cache_dir())
        logging.info("%s: W1 %.4f (%.4f) in %.0fs", n, r[n]["w1"]["mean"], r[n]["w1"]["std"], r[n]["seconds"])
    if set(r) >= set(CELLS):
        for g in GATES:
            print(g(r).line())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
