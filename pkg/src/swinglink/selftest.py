"""Embedded acceptance checks runnable from the command line."""

from __future__ import annotations

from typing import Callable

from . import codec, energy
from .rx import DetectorState, FlitTarget, SamplePair, detector_step, flit_patterns

# Golden SerDes energy per bit (Mbps -> pJ/bit) with the default profile.
ENERGY_GOLDEN = {0.1: 336.3746, 1.0: 38.4746, 10.0: 8.6846, 100.0: 5.7056, 787.0: 5.4166}
CONTINUOUS_GOLDEN = 5.3375
GOLDEN_RTOL = 5e-4


def check_codec() -> str | None:
    symbols = [codec.ByteSymbol(v, False) for v in range(256)]
    symbols += [codec.ByteSymbol(v, True) for v in sorted(codec.CONTROL_CODES)]
    cases = 0
    for sym in symbols:
        for rd in (codec.RD_NEG, codec.RD_POS):
            cg, rd_out = codec.encode(sym, rd)
            back, rd_back = codec.decode(cg, rd)
            if back != sym or rd_back != rd_out:
                return f"round trip failed for {sym.name} at rd={rd:+d}"
            cases += 1
    if cases != 2 * (256 + len(codec.CONTROL_CODES)):
        return f"unexpected case count {cases}"
    return None


def _detect(bits: list[int]) -> tuple[bool, bool]:
    d = DetectorState()
    for i in range(0, len(bits) - 1, 2):
        d, hit = detector_step(d, SamplePair(bits[i], bits[i + 1]), FlitTarget.START)
        if hit:
            return True, d.shift
    return False, False


def check_detector() -> str | None:
    lead = [0, 1] * 8
    for pattern, _ in flit_patterns(FlitTarget.START):
        for shift in (False, True):
            bits = lead + ([1] if shift else []) + list(pattern) + [0, 1] * 4
            hit, got_shift = _detect(bits)
            if not hit or got_shift != shift:
                return f"start flit missed (shift={int(shift)})"
    return None


def check_energy() -> str | None:
    p = energy.PowerProfile()
    for bw, want in ENERGY_GOLDEN.items():
        got = energy.energy_per_bit(bw * 1e6, p) * 1e12
        if abs(got - want) > GOLDEN_RTOL * want:
            return f"energy at {bw} Mbps: {got:.4f} pJ/bit, expected {want}"
    got = energy.continuous_efficiency(p) * 1e12
    if abs(got - CONTINUOUS_GOLDEN) > 1e-9:
        return f"continuous efficiency {got:.6f} pJ/bit, expected {CONTINUOUS_GOLDEN}"
    return None


CHECKS = {
    "codec exhaustive round trip": check_codec,
    "start flit detection, both alignments and disparities": check_detector,
    "energy golden points": check_energy,
}


def run_selftest(report: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        problem = fn()
        report(f"{'PASS' if problem is None else 'FAIL'}  {name}" + ("" if problem is None else f": {problem}"))
        ok &= problem is None
    return ok
