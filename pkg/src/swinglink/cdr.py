"""
Bang-bang clock/data recovery loop.

Seven Alexander detectors vote over one 4-cycle window (8 data and 8 edge
samples); the net vote is accumulated, divided by N with the remainder kept,
and the quotient steps a 32-position phase interpolator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Sequence

from .channel import DEFAULT_CLOCK_PERIOD_FS, ChannelConfig, NoiseSource, RxSampler, Waveform

PI_STEPS = 32
WINDOW_CYCLES = 4
DIVIDERS = (1, 2, 4, 8, 16, 32, 64, 128)

LOCK_TOLERANCE_CODES = 2
LOCK_HOLD_WINDOWS = 16


class PdVote(IntEnum):
    LATE = -1
    NONE = 0
    EARLY = 1


def alexander_pd(d1: int, e: int, d2: int) -> PdVote:
    """Early when the edge sample still equals the first data sample."""
    if d1 == d2:
        return PdVote.NONE
    return PdVote.EARLY if e == d1 else PdVote.LATE


def pd_bank(data: Sequence[int], edges: Sequence[int]) -> int:
    """Net early-minus-late count of the seven detectors in one window.

    ``edges[k]`` lies between ``data[k]`` and ``data[k+1]``; the last edge
    sample has no following data bit inside the window and is unused.
    """
    if len(data) != 8 or len(edges) != 8:
        raise ValueError("pd_bank takes 8 data and 8 edge samples")
    net = 0
    for k in range(7):
        net += alexander_pd(data[k], edges[k], data[k + 1])
    return net


@dataclass(frozen=True)
class PhaseState:
    """PI setting. ``turns`` counts whole rotations so the sampling instant
    stays continuous when the code wraps between 31 and 0."""

    pi_code: int = 0
    clock_period: int = 2_500_000
    turns: int = 0

    def __post_init__(self):
        if not 0 <= self.pi_code < PI_STEPS:
            raise ValueError(f"pi_code out of range: {self.pi_code}")

    @property
    def unwrapped(self) -> int:
        return self.turns * PI_STEPS + self.pi_code

    @property
    def step_fs(self) -> int:
        return self.clock_period // PI_STEPS

    @property
    def data_offset_fs(self) -> int:
        return self.pi_code * self.clock_period // PI_STEPS

    @property
    def edge_code(self) -> int:
        # quadrature clock: a quarter period, i.e. half a UI at DDR
        return (self.pi_code + PI_STEPS // 4) % PI_STEPS

    @property
    def edge_offset_fs(self) -> int:
        return self.data_offset_fs + self.clock_period // 4


def pi_rotate(p: PhaseState, delta_code: int) -> PhaseState:
    turns, code = divmod(p.unwrapped + delta_code, PI_STEPS)
    return replace(p, pi_code=code, turns=turns)


@dataclass(frozen=True)
class LoopFilterState:
    accumulator: int = 0
    divider_n: int = 4
    cycle_count: int = 0
    residue: int = 0

    def __post_init__(self):
        if self.divider_n not in DIVIDERS:
            raise ValueError(f"divider_n must be one of {DIVIDERS}, got {self.divider_n}")


def _trunc_div(a: int, n: int) -> int:
    q = abs(a) // n
    return q if a >= 0 else -q


def filter_step(lf: LoopFilterState, net: int) -> tuple[LoopFilterState, int]:
    """Accumulate one window's vote and emit the PI step.

    A positive (early-dominant) net retards the sampling phase, i.e. moves
    pi_code up.
    """
    total = lf.accumulator + net + lf.residue
    delta = _trunc_div(total, lf.divider_n)
    return replace(lf, accumulator=0, residue=total - delta * lf.divider_n, cycle_count=0), delta


@dataclass(frozen=True)
class WindowRecord:
    window: int
    net: int
    accumulator: int
    pi_code: int


class CdrLoop:
    """Sample -> detector bank -> filter -> PI, stepped one RX cycle at a time.

    Votes are gathered over a 4-cycle window; the filter runs in the divided
    clock domain at the window boundary and its output moves the PI before
    the next window's first sample, so each update lags its oldest sample by
    one window.
    """

    def __init__(
        self,
        phase: PhaseState | None = None,
        lf: LoopFilterState | None = None,
        on_window: Callable[[WindowRecord], None] | None = None,
    ):
        self.phase = phase or PhaseState()
        self.lf = lf or LoopFilterState()
        self.on_window = on_window
        self.window = 0
        self.frozen = False
        self._data: list[int] = []
        self._edges: list[int] = []

    @property
    def pi_code(self) -> int:
        return self.phase.pi_code

    @property
    def cycle_count(self) -> int:
        """Cycles gathered in the current window (0-3)."""
        return len(self._data) // 2

    def push(self, even: int, odd: int, edge_even: int, edge_odd: int) -> bool:
        """Feed one cycle of samples; returns True when a window closed."""
        self._data += (even, odd)
        self._edges += (edge_even, edge_odd)
        if len(self._data) < 2 * WINDOW_CYCLES:
            return False
        net = pd_bank(self._data, self._edges)
        self._data, self._edges = [], []
        acc = self.lf.accumulator + net
        if not self.frozen:
            self.lf, delta = filter_step(self.lf, net)
            self.phase = pi_rotate(self.phase, delta)
        if self.on_window is not None:
            self.on_window(WindowRecord(self.window, net, acc, self.phase.pi_code))
        self.window += 1
        return True

    def clock(self, sampler: RxSampler, c: int) -> bool:
        s = sampler.cycle(c, self.phase.unwrapped)
        return self.push(s.even, s.odd, s.edge_even, s.edge_odd)


@dataclass
class LockResult:
    phase: PhaseState
    locked: bool
    settle_cycles: int
    windows: list[WindowRecord] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)


def cdr_lock(
    sampler: RxSampler,
    phase: PhaseState,
    lf: LoopFilterState,
    budget_cycles: int,
    start_cycle: int = 0,
    tolerance: float = LOCK_TOLERANCE_CODES,
    hold_windows: int = LOCK_HOLD_WINDOWS,
    record: bool = False,
) -> LockResult:
    """Run the loop on a training stream until locked or out of budget.

    Lock means the ground-truth phase error (from the sampler) stays within
    ``tolerance`` codes for ``hold_windows`` consecutive windows.
    ``settle_cycles`` is the cycle count at which that run completed, or
    ``budget_cycles`` when it never did.
    """
    windows: list[WindowRecord] = []
    loop = CdrLoop(phase, lf, windows.append if record else None)
    errors: list[float] = []
    run = 0
    for k in range(budget_cycles):
        c = start_cycle + k
        if loop.clock(sampler, c):
            err = sampler.phase_error_codes(c + 1, loop.phase.unwrapped)
            if record:
                errors.append(err)
            run = run + 1 if abs(err) <= tolerance else 0
            if run >= hold_windows:
                return LockResult(loop.phase, True, k + 1, windows, errors)
    return LockResult(loop.phase, False, budget_cycles, windows, errors)


def training_sampler(
    cfg: ChannelConfig,
    n_cycles: int,
    clock_period: int = DEFAULT_CLOCK_PERIOD_FS,
    noise: NoiseSource | None = None,
) -> RxSampler:
    """Sampler over an endless-looking 0101... training line, long enough for
    ``n_cycles`` RX cycles including the PI excursion a clock offset needs."""
    ui = clock_period // 2
    lead = 2 * clock_period
    slack = 2 * (abs(cfg.freq_offset_ppm) * 1e-6 * n_cycles + 1) * clock_period
    span = lead + n_cycles * clock_period + int(slack) + 4 * clock_period
    n_bits = 2 * (span // clock_period + 1)
    w = Waveform.from_bits([0, 1] * (n_bits // 2), 0, ui)
    return RxSampler(w, cfg, clock_period, origin=lead, noise=noise)


def lock_sweep(
    cfg: ChannelConfig,
    divider_n: int = 4,
    budget_cycles: int = 1024,
    phases=range(PI_STEPS),
    record: bool = False,
    clock_period: int = DEFAULT_CLOCK_PERIOD_FS,
) -> list[LockResult]:
    """:func:`cdr_lock` from every initial PI code on a training stream."""
    out = []
    for p0 in phases:
        sampler = training_sampler(cfg, budget_cycles, clock_period)
        out.append(cdr_lock(sampler, PhaseState(p0, clock_period), LoopFilterState(divider_n=divider_n),
                            budget_cycles, record=record))
    return out
