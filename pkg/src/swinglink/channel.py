"""
Differential wire plus comparator model.

All times are integer femtoseconds. Timing impairments (static phase offset,
Gaussian jitter, frequency offset, metastability) are applied at the sampler.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

FS_PER_S = 10**15
UI_FIXED_ONE = 1 << 16  # phase/jitter fixed point: 1/2**16 UI

DEFAULT_CLOCK_PERIOD_FS = 2_500_000  # 400 MHz


class SampleRangeError(ValueError):
    pass


@dataclass
class Waveform:
    """Piecewise-constant line level.

    ``times[i]`` is the start of segment ``i``; ``levels`` alternate between
    -1 and +1. ``t0``/``ui`` describe the bit grid the waveform was launched
    on and are only used for instrumentation (phase error).
    """

    times: list[int]
    levels: list[int]
    end: int
    ui: int
    t0: int
    swing_mv: float = 200.0

    def __post_init__(self):
        if len(self.times) != len(self.levels):
            raise ValueError("times and levels differ in length")

    @classmethod
    def from_bits(cls, bits: Sequence[int], t0: int, ui: int, swing_mv: float = 200.0) -> "Waveform":
        w = cls([], [], t0, ui, t0, swing_mv)
        w.append_bits(bits)
        return w

    def append_bits(self, bits: Sequence[int]) -> None:
        t = self.end
        times, levels = self.times, self.levels
        for b in bits:
            level = 1 if b else -1
            if not levels or levels[-1] != level:
                times.append(t)
                levels.append(level)
            t += self.ui
        self.end = t

    def hold(self, duration: int) -> None:
        """Keep driving the last level for ``duration`` more fs."""
        self.end += duration

    @property
    def start(self) -> int:
        return self.times[0] if self.times else self.t0

    @property
    def transitions(self) -> list[int]:
        return self.times[1:]

    def level_at(self, t: int) -> int:
        if not self.times or t < self.times[0] or t >= self.end:
            raise SampleRangeError(f"t={t} fs outside waveform [{self.start}, {self.end})")
        return self.levels[bisect_right(self.times, t) - 1]

    def distance_to_transition(self, t: int) -> int | None:
        times = self.times
        i = bisect_right(times, t)
        best = None
        if i - 1 >= 1:
            best = t - times[i - 1]
        if i < len(times):
            d = times[i] - t
            best = d if best is None else min(best, d)
        return best

    def bits(self) -> list[int]:
        """Recover the launched bit sequence (one bit per UI)."""
        out = []
        for i, start in enumerate(self.times):
            stop = self.times[i + 1] if i + 1 < len(self.times) else self.end
            n = (stop - start) // self.ui
            out.extend([1 if self.levels[i] > 0 else 0] * n)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time_fs", "level"])
            for t, level in zip(self.times, self.levels):
                wr.writerow([t, level])
            if self.times:
                wr.writerow([self.end, self.levels[-1]])


@dataclass(frozen=True)
class ChannelConfig:
    phase_offset: int = 0  # 1/2**16 UI, positive delays the sampling instant
    jitter_sigma: int = 0  # 1/2**16 UI, per sample
    freq_offset_ppm: float = 0.0  # RX clock period scaled by (1 + ppm*1e-6)
    metastability_window: int = 10_000  # fs
    seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.metastability_window < 0:
            raise ValueError("metastability_window must be >= 0")

    @classmethod
    def from_ui(cls, phase_offset_ui: float = 0.0, jitter_sigma_ui: float = 0.0, **kw) -> "ChannelConfig":
        return cls(
            phase_offset=round(phase_offset_ui * UI_FIXED_ONE),
            jitter_sigma=round(jitter_sigma_ui * UI_FIXED_ONE),
            **kw,
        )

    @property
    def freq_offset_ppb(self) -> int:
        return round(self.freq_offset_ppm * 1000)


def ui_fixed_to_fs(value: int, ui: int) -> int:
    """Exact conversion of a 1/2**16-UI quantity to fs, rounded half up."""
    return (2 * value * ui + UI_FIXED_ONE) // (2 * UI_FIXED_ONE)


class NoiseSource:
    """Counter-addressed random draws: the value for sample ``i`` depends only
    on ``(seed, i)``, never on how many draws were made before."""

    BLOCK = 4096

    def __init__(self, seed: int):
        self.seed = seed
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _block(self, stream: int, block: int) -> np.ndarray:
        key = (stream, block)
        arr = self._cache.get(key)
        if arr is None:
            if len(self._cache) > 64:
                self._cache.clear()
            rng = np.random.default_rng([self.seed & (2**64 - 1), stream, block])
            arr = rng.standard_normal(self.BLOCK) if stream == 0 else rng.integers(0, 2, self.BLOCK)
            self._cache[key] = arr
        return arr

    def gaussian(self, index: int) -> float:
        return float(self._block(0, index // self.BLOCK)[index % self.BLOCK])

    def coin(self, index: int) -> int:
        return int(self._block(1, index // self.BLOCK)[index % self.BLOCK])


@dataclass
class SampleStats:
    samples: int = 0
    metastable: int = 0


def sample(
    w: Waveform,
    t: int,
    cfg: ChannelConfig,
    noise: NoiseSource,
    index: int = 0,
    stats: SampleStats | None = None,
) -> int:
    """Comparator decision for nominal instant ``t``; ``index`` keys the draws."""
    t_eff = t + ui_fixed_to_fs(cfg.phase_offset, w.ui)
    if cfg.jitter_sigma:
        sigma_fs = cfg.jitter_sigma * w.ui / UI_FIXED_ONE
        t_eff += round(noise.gaussian(index) * sigma_fs)
    level = w.level_at(t_eff)
    if stats is not None:
        stats.samples += 1
    if cfg.metastability_window:
        d = w.distance_to_transition(t_eff)
        if d is not None and d < cfg.metastability_window:
            if stats is not None:
                stats.metastable += 1
            return noise.coin(index)
    return 1 if level > 0 else 0


@dataclass(frozen=True)
class CycleSamples:
    even: int
    odd: int
    edge_even: int  # between even and odd data samples
    edge_odd: int  # between odd and the next cycle's even sample


class RxSampler:
    """Four comparator samples per RX clock cycle at the PI-selected phase.

    RX cycle ``c`` begins at ``origin + c*P*(1 + ppm)`` plus the PI offset
    ``pi_code*P/32``; data are taken at 0 and P/2, edges at P/4 and 3P/4.
    """

    def __init__(
        self,
        waveform: Waveform,
        cfg: ChannelConfig,
        clock_period: int = DEFAULT_CLOCK_PERIOD_FS,
        origin: int | None = None,
        noise: NoiseSource | None = None,
    ):
        self.w = waveform
        self.cfg = cfg
        self.period = clock_period
        self.origin = waveform.t0 if origin is None else origin
        self.noise = noise if noise is not None else NoiseSource(cfg.seed)
        self.stats = SampleStats()
        self._ppb = cfg.freq_offset_ppb
        self._offset_fs = ui_fixed_to_fs(cfg.phase_offset, waveform.ui)

    def cycle_start(self, c: int, pi_code: int) -> int:
        base = c * self.period
        drift = (base * self._ppb) // 10**9
        return self.origin + base + drift + (pi_code * self.period) // 32

    def instants(self, c: int, pi_code: int) -> tuple[int, int, int, int]:
        t = self.cycle_start(c, pi_code)
        q = self.period // 4
        return t, t + 2 * q, t + q, t + 3 * q

    def covers(self, c: int, pi_code: int, margin: int = 0) -> bool:
        """Whether every sample of cycle ``c`` lands inside the waveform."""
        t = self.cycle_start(c, pi_code) + self._offset_fs
        return t - margin >= self.w.start and t + 3 * self.period // 4 + margin < self.w.end

    def cycle(self, c: int, pi_code: int) -> CycleSamples:
        td_e, td_o, te_e, te_o = self.instants(c, pi_code)
        i = 4 * c
        w, cfg, noise, st = self.w, self.cfg, self.noise, self.stats
        return CycleSamples(
            even=sample(w, td_e, cfg, noise, i, st),
            odd=sample(w, td_o, cfg, noise, i + 1, st),
            edge_even=sample(w, te_e, cfg, noise, i + 2, st),
            edge_odd=sample(w, te_o, cfg, noise, i + 3, st),
        )

    def phase_error_codes(self, c: int, pi_code: int) -> float:
        """Offset of the even data sample from the nearest UI centre, in PI
        codes (1 code = P/32). Ground truth for tests; the loop never sees it."""
        t = self.cycle_start(c, pi_code) + self._offset_fs
        ui = self.w.ui
        err = (t - self.w.t0) % ui - ui // 2
        return err * 32 / self.period

    def ui_index(self, c: int, pi_code: int) -> int:
        """Line UI the even data sample of cycle ``c`` lands in, minus the
        nominal ``2c``. A change in this value is a cycle slip."""
        t = self.cycle_start(c, pi_code) + self._offset_fs
        return (t - self.w.t0) // self.w.ui - 2 * c


def rx_sample_stream(
    w: Waveform,
    phase: Callable[[], int],
    cfg: ChannelConfig,
    noise: NoiseSource | None = None,
    clock_period: int = DEFAULT_CLOCK_PERIOD_FS,
    origin: int | None = None,
    margin: int = 0,
) -> Iterator[CycleSamples]:
    """Yield one :class:`CycleSamples` per RX cycle while the waveform lasts.

    ``phase`` is polled before every cycle so a CDR can steer the sampler.
    """
    s = RxSampler(w, cfg, clock_period, origin, noise)
    c = 0
    while True:
        pi = phase()
        if s.cycle_start(c, pi) + s._offset_fs - margin >= w.end:
            return
        if s.covers(c, pi, margin):
            yield s.cycle(c, pi)
        c += 1
