"""
Two-chip link simulation.

One TX chip and one RX chip, joined by the differential pair and three GPIO
lines. The loop advances one TX clock cycle at a time; the RX clock domain
(sampler, CDR, datapath) catches up to the current time after every TX cycle,
so both domains interleave in timestamp order.

Per duty cycle the software on both sides runs the warm-up handshake::

    TX: warmup_req=1          RX: warm-up, timer (fixed_wait_cycles)
                              RX: clock_ready=1, program uDMA, comm_ready=1
    TX: comm_en=1 -> Start flit, data words ..., Stop flit
                              RX: stop detected -> release both lines
"""

from __future__ import annotations

import csv
import io
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import energy
from .cdr import DIVIDERS, PI_STEPS, CdrLoop, LoopFilterState, PhaseState, LOCK_HOLD_WINDOWS, LOCK_TOLERANCE_CODES
from .channel import ChannelConfig, NoiseSource, RxSampler, Waveform
from .rx import DecodedWord, RxDatapath, RxMode, SamplePair
from .trace import Trace, TraceRecord
from .tx import CYCLES_PER_WORD, WORD_BITS, TxConfig, TxController, TxMode, WordKind

log = logging.getLogger(__name__)

MODES = ("Idle", "WarmUp", "DataComm")


@dataclass(frozen=True)
class ChipConfig:
    comm_en: bool = False
    warm_en: bool = False
    rx_buffer_bytes: int = 16384
    rx_buffer_addr: int = 0x1C00_0000
    fifo_depth: int = 8  # words
    fixed_wait_cycles: int = 1024  # TX clock cycles

    def __post_init__(self):
        if self.rx_buffer_bytes <= 0 or self.rx_buffer_bytes % 4:
            raise ValueError("rx_buffer_bytes must be a positive multiple of 4")
        if self.fifo_depth < 2:
            raise ValueError("fifo_depth must be >= 2")
        if self.fixed_wait_cycles < 0:
            raise ValueError("fixed_wait_cycles must be >= 0")


@dataclass(frozen=True)
class LinkParams:
    clock_period: int = 2_500_000
    divider_n: int = 4
    initial_pi_code: int = 0
    gpio_delay_fs: int = 0
    dma_setup_cycles: int = 0
    lock_mode: str = "fixed"  # "fixed" wait or "criterion"
    lock_budget_cycles: int = 8192  # criterion mode only
    target_bw_bps: Optional[float] = None  # None: next cycle starts as soon as possible
    watchdog_slots: int = 16
    trace_cdr: bool = False
    hold_fs: int = 5_000_000  # line held after the last word of a burst

    def __post_init__(self):
        if self.lock_mode not in ("fixed", "criterion"):
            raise ValueError(f"lock_mode must be 'fixed' or 'criterion', got {self.lock_mode!r}")
        if self.divider_n not in DIVIDERS:
            raise ValueError(f"divider_n must be one of {DIVIDERS}, got {self.divider_n}")
        if self.clock_period <= 0 or self.clock_period % 32:
            raise ValueError("clock_period must be a positive multiple of 32 fs")
        if self.watchdog_slots < 1:
            raise ValueError("watchdog_slots must be >= 1")
        if not 0 <= self.initial_pi_code < PI_STEPS:
            raise ValueError("initial_pi_code out of range")
        if self.gpio_delay_fs < 0:
            raise ValueError("gpio_delay_fs must be >= 0")


GPIO_LINES = ("warmup_req", "clock_ready", "comm_ready")


class GpioBus:
    """The three handshake lines, with full edge history so each chip can
    observe them through a propagation delay."""

    def __init__(self, trace: Trace | None = None):
        self.history: dict[str, list[tuple[int, int]]] = {n: [(0, 0)] for n in GPIO_LINES}
        self.trace = trace

    def drive(self, line: str, level: int, t: int) -> None:
        if self.history[line][-1][1] == level:
            return
        self.history[line].append((t, level))
        if self.trace is not None:
            self.trace(t, "GPIO", line, str(level))

    def level(self, line: str) -> int:
        return self.history[line][-1][1]

    def seen(self, line: str, t: int, delay: int = 0) -> int:
        ts = t - delay
        level = 0
        for when, lv in self.history[line]:
            if when > ts:
                break
            level = lv
        return level

    @property
    def warmup_req(self) -> int:
        return self.level("warmup_req")

    @property
    def clock_ready(self) -> int:
        return self.level("clock_ready")

    @property
    def comm_ready(self) -> int:
        return self.level("comm_ready")


@dataclass
class SimReport:
    payload_out: bytes
    bit_errors: int
    corrupt_words: int
    durations_fs: dict
    cycles_completed: int
    total_time_fs: int
    delivered_bits: int
    effective_bandwidth: float
    energy_j: float
    payload_bytes: int = 0
    padding_bytes: int = 0
    line_bits: int = 0
    missing_words: int = 0
    extra_words: int = 0
    frame_timeouts: int = 0
    start_flits: int = 0
    stop_flits: int = 0
    lock_failure: bool = False
    protocol_violations: list = field(default_factory=list)
    fifo_pops: int = 0
    data_words_sent: int = 0
    bytes_landed: int = 0

    @property
    def exit_status(self) -> int:
        if self.lock_failure or self.protocol_violations:
            return 2
        if self.bit_errors or self.corrupt_words or self.missing_words:
            return 1
        return 0

    CSV_FIELDS = (
        "payload_bytes", "delivered_bytes", "bit_errors", "corrupt_words", "missing_words",
        "extra_words", "frame_timeouts", "idle_fs", "warmup_fs", "datacomm_fs",
        "total_time_fs", "cycles_completed", "effective_bandwidth_bps", "energy_j",
        "lock_failure", "protocol_violations", "exit_status",
    )

    def csv_row(self) -> list:
        return [
            self.payload_bytes, len(self.payload_out), self.bit_errors, self.corrupt_words,
            self.missing_words, self.extra_words, self.frame_timeouts,
            self.durations_fs["Idle"], self.durations_fs["WarmUp"], self.durations_fs["DataComm"],
            self.total_time_fs, self.cycles_completed, f"{self.effective_bandwidth:.6f}",
            f"{self.energy_j:.9e}", int(self.lock_failure), len(self.protocol_violations),
            self.exit_status,
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.CSV_FIELDS)
        wr.writerow(self.csv_row())
        return buf.getvalue()


def check_protocol(records) -> list[str]:
    """Ordering rules per duty cycle: warmup_req, then clock_ready, then
    comm_ready, then the Start flit."""
    problems = []
    req = ready = comm = False
    for r in records:
        if r.domain == "GPIO":
            up = r.payload == "1"
            if r.event == "warmup_req" and up:
                req = True
            elif r.event == "clock_ready":
                if up and not req:
                    problems.append(f"{r.time_fs}: clock_ready before warmup_req")
                ready = up
            elif r.event == "comm_ready":
                if up and not ready:
                    problems.append(f"{r.time_fs}: comm_ready before clock_ready")
                comm = up
                if not up:
                    req = False
        elif r.domain == "TX" and r.event == WordKind.START.value:
            if not comm:
                problems.append(f"{r.time_fs}: Start flit before comm_ready")
    return problems


class _Burst:
    def __init__(self, t0: int, ui: int, cfg: ChannelConfig, period: int, noise: NoiseSource):
        self.wave = Waveform([], [], t0, ui, t0)
        self.sampler = RxSampler(self.wave, cfg, period, origin=0, noise=noise)
        self.closed = False


@dataclass
class _Frame:
    words: list
    start_t: Optional[int] = None
    stop_end: Optional[int] = None
    warm_start: int = 0
    received: list = field(default_factory=list)
    done: bool = False
    timed_out: bool = False


class LinkSimulation:
    def __init__(
        self,
        tx_cfg: ChipConfig | None = None,
        rx_cfg: ChipConfig | None = None,
        channel_cfg: ChannelConfig | None = None,
        seed: int | None = None,
        params: LinkParams | None = None,
        profile: energy.PowerProfile | None = None,
        trace: Trace | None = None,
    ):
        self.tx_cfg = tx_cfg or ChipConfig()
        self.rx_cfg = rx_cfg or ChipConfig()
        cfg = channel_cfg or ChannelConfig()
        if seed is not None:
            cfg = ChannelConfig(cfg.phase_offset, cfg.jitter_sigma, cfg.freq_offset_ppm,
                                cfg.metastability_window, seed)
        self.channel_cfg = cfg
        self.params = params or LinkParams()
        self.profile = profile or energy.PowerProfile()
        self.trace = trace if trace is not None else Trace()
        self.noise = NoiseSource(cfg.seed)
        self.period = self.params.clock_period
        self.gpio = GpioBus(self.trace)

        self.tx = TxController(TxConfig(clock_period=self.period), on_word=self._on_tx_word)
        self.fifo: deque = deque()
        self.rx = RxDatapath(on_event=self._on_rx_event, on_word=self._on_rx_word)
        self.cdr = CdrLoop(
            PhaseState(self.params.initial_pi_code, self.period),
            LoopFilterState(divider_n=self.params.divider_n),
            on_window=self._on_cdr_window if self.params.trace_cdr else None,
        )

        self.bursts: list[_Burst] = []
        self._rx_burst = 0
        self.rx_cycle = 0
        self._rx_time = 0
        self._lock_run = 0
        self.locked = False

        self.frames: list[_Frame] = []
        self.lock_failure = False
        self.fifo_pops = 0
        self.data_words_sent = 0
        self.rx_buffer = bytearray()
        self.rx_overflow = 0

    # -- callbacks -------------------------------------------------------
    def _now_tx(self) -> int:
        return self.tx.cycle * self.period

    def _on_tx_word(self, t: int, word) -> None:
        self.trace(t, "TX", word.kind.value, word.hex)
        if not self.bursts or self.bursts[-1].closed:
            self.bursts.append(_Burst(t, self.period // 2, self.channel_cfg, self.period, self.noise))
        self.bursts[-1].wave.append_bits(word.serial_bits())
        frame = self.frames[-1] if self.frames else None
        if word.kind is WordKind.START and frame is not None:
            frame.start_t = t
        elif word.kind is WordKind.STOP and frame is not None:
            frame.stop_end = t + CYCLES_PER_WORD * self.period
        elif word.kind is WordKind.DATA:
            self.data_words_sent += 1

    def _on_rx_event(self, kind: str, payload: str) -> None:
        self.trace(self._rx_time, "RX", kind, payload)
        if kind == "detect_stop" and self.frames:
            self.frames[-1].done = True

    def _on_rx_word(self, dw: DecodedWord) -> None:
        if not self.frames:
            return
        self.frames[-1].received.append(dw)
        if not dw.corrupt:
            if len(self.rx_buffer) + 4 <= self._rx_capacity:
                self.rx_buffer += dw.data
            else:
                self.rx_overflow += 1

    def _on_cdr_window(self, rec) -> None:
        self.trace(self._rx_time, "CDR", "window", f"{rec.window},{rec.net},{rec.accumulator},{rec.pi_code}")

    # -- RX clock domain -------------------------------------------------
    def _rx_catch_up(self, t_now: int) -> None:
        """Run RX cycles whose clock edge is at or before ``t_now``."""
        rx, cdr = self.rx, self.cdr
        while True:
            c = self.rx_cycle
            if not self.bursts or self._rx_burst >= len(self.bursts):
                # nothing on the line: let the RX clock free-run up to now
                burst = None
            else:
                burst = self.bursts[self._rx_burst]
            sampler = burst.sampler if burst else None
            pi = cdr.phase.unwrapped
            t_c = sampler.cycle_start(c, pi) if sampler else self._cycle_time(c, pi)
            if t_c > t_now:
                return
            self._rx_time = t_c
            if burst is not None:
                if not sampler.covers(c, pi, self._margin):
                    before_start = t_c + self._offset - self._margin < burst.wave.start
                    past_end = not before_start
                    if past_end and burst.closed:
                        self._rx_burst += 1
                        continue
                    if past_end:
                        return  # wait for the TX to extend the waveform
                    self.rx_cycle += 1
                    continue
                if rx.mode is not RxMode.IDLE:
                    s = sampler.cycle(c, pi)
                    if cdr.push(s.even, s.odd, s.edge_even, s.edge_odd):
                        self._track_lock(sampler, c)
                    rx.push(SamplePair(s.even, s.odd))
            self.rx_cycle += 1

    def _cycle_time(self, c: int, pi: int) -> int:
        base = c * self.period
        return base + (base * self.channel_cfg.freq_offset_ppb) // 10**9 + pi * self.period // PI_STEPS

    def _track_lock(self, sampler: RxSampler, c: int) -> None:
        err = sampler.phase_error_codes(c + 1, self.cdr.phase.unwrapped)
        self._lock_run = self._lock_run + 1 if abs(err) <= LOCK_TOLERANCE_CODES else 0
        if self._lock_run >= LOCK_HOLD_WINDOWS and not self.locked:
            self.locked = True
            self.trace(self._rx_time, "CDR", "lock", f"pi={self.cdr.pi_code}")

    # -- main loop -------------------------------------------------------
    def run(self, payload: bytes) -> SimReport:
        p = self.params
        P = self.period
        pad = (-len(payload)) % 4
        data = bytes(payload) + bytes(pad)
        words = [data[i:i + 4] for i in range(0, len(data), 4)]
        per_frame = self.rx_cfg.rx_buffer_bytes // 4
        chunks = [words[i:i + per_frame] for i in range(0, len(words), per_frame)]
        self._rx_capacity = len(data)
        self._offset = (self.channel_cfg.phase_offset * (P // 2)) >> 16
        sigma_fs = self.channel_cfg.jitter_sigma * (P // 2) / 65536
        self._margin = int(8 * sigma_fs) + self.channel_cfg.metastability_window + 1
        delay = p.gpio_delay_fs
        t_cycle = None if p.target_bw_bps is None else round(
            self.rx_cfg.rx_buffer_bytes * 8 / p.target_bw_bps * 1e15)

        tx_phase, rx_phase = "idle", "idle"
        next_start = 0
        source: deque = deque()
        chunk_i = 0
        rx_timer = rx_dma = 0
        tx_done_seen_at = None
        cycles_completed = 0
        frame_timeouts = 0
        cycle_starts: list[int] = []
        max_cycles = self._cycle_budget(chunks)

        while True:
            t = self._now_tx()
            if self.tx.cycle > max_cycles:
                raise RuntimeError("simulation did not terminate")

            # TX software
            if tx_phase == "idle":
                if chunk_i < len(chunks):
                    released = not self.gpio.seen("comm_ready", t, delay) and not self.gpio.seen("clock_ready", t, delay)
                    if t >= next_start and released:
                        frame = _Frame(chunks[chunk_i], warm_start=t)
                        self.frames.append(frame)
                        cycle_starts.append(t)
                        self.tx.config = TxConfig(comm_en=False, warm_en=True, clock_period=P)
                        self.gpio.drive("warmup_req", 1, t)
                        tx_phase = "await_comm"
                elif rx_phase == "idle":
                    break
            elif tx_phase == "await_comm":
                if self.gpio.seen("comm_ready", t, delay):
                    source.extend(chunks[chunk_i])
                    chunk_i += 1
                    self.tx.config = TxConfig(comm_en=True, warm_en=True, clock_period=P)
                    tx_phase = "sending"
            elif tx_phase == "sending":
                if self.tx.state.mode is TxMode.SEND_STOP:
                    self.tx.config = TxConfig(comm_en=False, warm_en=False, clock_period=P)
                    tx_phase = "closing"
            elif tx_phase == "closing":
                if self.tx.state.mode is TxMode.IDLE:
                    self.gpio.drive("warmup_req", 0, t)
                    if self.bursts and not self.bursts[-1].closed:
                        self.bursts[-1].wave.hold(p.hold_fs)
                        self.bursts[-1].closed = True
                    if t_cycle is not None:
                        next_start = cycle_starts[-1] + t_cycle
                    tx_phase = "idle"

            # uDMA -> TX FIFO
            while source and len(self.fifo) < self.tx_cfg.fifo_depth:
                self.fifo.append(source.popleft())

            # RX software
            if rx_phase == "idle":
                if self.gpio.seen("warmup_req", t, delay) and self.frames and not self.frames[-1].done:
                    self.rx.set_enables(True, False)
                    self.trace(t, "RX", "enter_warmup", "")
                    self._lock_run, self.locked = 0, False
                    rx_timer = t
                    tx_done_seen_at = None
                    rx_phase = "warming"
            elif rx_phase == "warming":
                ready = False
                if p.lock_mode == "fixed":
                    if t >= rx_timer + self.rx_cfg.fixed_wait_cycles * P:
                        if not self.locked:
                            self.lock_failure = True
                            self.trace(t, "CDR", "lock_failure", f"pi={self.cdr.pi_code}")
                            break
                        ready = True
                else:
                    if self.locked:
                        ready = True
                    elif t >= rx_timer + p.lock_budget_cycles * P:
                        self.lock_failure = True
                        self.trace(t, "CDR", "lock_failure", f"pi={self.cdr.pi_code}")
                        break
                if ready:
                    self.gpio.drive("clock_ready", 1, t)
                    rx_dma = t + p.dma_setup_cycles * P
                    rx_phase = "dma"
            elif rx_phase == "dma":
                if t >= rx_dma:
                    self.trace(t, "RX", "dma_config",
                               f"addr=0x{self.rx_cfg.rx_buffer_addr:08X},size={4 * len(self.frames[-1].words)}")
                    self.rx.set_enables(True, True)
                    self.gpio.drive("comm_ready", 1, t)
                    rx_phase = "receiving"
            elif rx_phase == "receiving":
                frame = self.frames[-1]
                if tx_done_seen_at is None and not self.gpio.seen("warmup_req", t, delay):
                    tx_done_seen_at = t
                timeout = (tx_done_seen_at is not None
                           and t >= tx_done_seen_at + p.watchdog_slots * CYCLES_PER_WORD * P)
                if frame.done or timeout:
                    if not frame.done:
                        frame.timed_out = True
                        frame_timeouts += 1
                        self.trace(t, "RX", "frame_timeout", "")
                        frame.done = True
                    self.rx.set_enables(False, False)
                    self.gpio.drive("clock_ready", 0, t)
                    self.gpio.drive("comm_ready", 0, t)
                    cycles_completed += 1
                    rx_phase = "idle"

            # TX controller (acts on word-slot boundaries)
            head = self.fifo[0] if self.fifo else None
            _, pop = self.tx.clock(head)
            if pop:
                self.fifo.popleft()
                self.fifo_pops += 1

            self._rx_catch_up(t)

        end = self._now_tx()
        if t_cycle is not None and not self.lock_failure:
            end = max(end, len(cycle_starts) * t_cycle)
        return self._report(payload, pad, end, cycles_completed, frame_timeouts)

    def _cycle_budget(self, chunks) -> int:
        p = self.params
        per_cycle = (self.rx_cfg.fixed_wait_cycles + p.lock_budget_cycles + p.dma_setup_cycles
                     + (p.watchdog_slots + 64) * CYCLES_PER_WORD
                     + 2 * p.gpio_delay_fs // self.period)
        total = sum(per_cycle + (len(c) + 4) * CYCLES_PER_WORD for c in chunks)
        if p.target_bw_bps is not None:
            total += len(chunks) * int(self.rx_cfg.rx_buffer_bytes * 8 / p.target_bw_bps * 1e15 / self.period)
        return total + 1000

    def _report(self, payload: bytes, pad: int, end: int, cycles_completed: int, frame_timeouts: int) -> SimReport:
        durations = {"Idle": 0, "WarmUp": 0, "DataComm": 0}
        bit_errors = missing = extra = corrupt = 0
        line_bits = 0
        for fr in self.frames:
            warm_end = fr.start_t if fr.start_t is not None else end
            durations["WarmUp"] += warm_end - fr.warm_start
            if fr.start_t is not None:
                stop = fr.stop_end if fr.stop_end is not None else end
                durations["DataComm"] += stop - fr.start_t
                line_bits += (stop - fr.start_t) // (self.period // 2)
            sent = fr.words if fr.start_t is not None else []
            got = fr.received
            for s, r in zip(sent, got):
                bit_errors += sum(bin(a ^ b).count("1") for a, b in zip(s, r.data))
                corrupt += r.corrupt
            if len(got) < len(sent):
                missing += len(sent) - len(got)
                bit_errors += 32 * (len(sent) - len(got))
            extra += max(0, len(got) - len(sent))
        durations["Idle"] = end - durations["WarmUp"] - durations["DataComm"]

        delivered = bytes(self.rx_buffer)
        if pad and len(delivered) == len(payload) + pad:
            delivered = delivered[: len(payload)]
        delivered_bits = 8 * len(delivered)
        records = self.trace.records
        report = SimReport(
            payload_out=delivered,
            bit_errors=bit_errors,
            corrupt_words=corrupt,
            durations_fs=durations,
            cycles_completed=cycles_completed,
            total_time_fs=end,
            delivered_bits=delivered_bits,
            effective_bandwidth=delivered_bits / (end * 1e-15) if end else 0.0,
            energy_j=energy.energy_from_durations(durations, self.profile),
            payload_bytes=len(payload),
            padding_bytes=pad,
            line_bits=line_bits,
            missing_words=missing,
            extra_words=extra,
            frame_timeouts=frame_timeouts,
            start_flits=sum(1 for r in records if r.domain == "TX" and r.event == WordKind.START.value),
            stop_flits=sum(1 for r in records if r.domain == "TX" and r.event == WordKind.STOP.value),
            lock_failure=self.lock_failure,
            protocol_violations=check_protocol(self.trace.ordered()) if self.trace.enabled else [],
            fifo_pops=self.fifo_pops,
            data_words_sent=self.data_words_sent,
            bytes_landed=len(self.rx_buffer),
        )
        return report


def run_handshake(tx_chip: ChipConfig | None = None, rx_chip: ChipConfig | None = None,
                  gpio_delay_fs: int = 0, channel_cfg: ChannelConfig | None = None) -> Trace:
    """Warm-up handshake for a single one-word frame; returns the trace.

    With ``tx_chip.warm_en`` False the TX software never starts a cycle and
    the trace stays empty.
    """
    tx_chip = tx_chip or ChipConfig(warm_en=True)
    trace = Trace()
    if not tx_chip.warm_en:
        return trace
    sim = LinkSimulation(tx_chip, rx_chip, channel_cfg, params=LinkParams(gpio_delay_fs=gpio_delay_fs), trace=trace)
    sim.run(bytes(4))
    return trace


def run_transfer(payload: bytes, tx_cfg: ChipConfig | None = None, rx_cfg: ChipConfig | None = None,
                 channel_cfg: ChannelConfig | None = None, seed: int | None = None,
                 params: LinkParams | None = None, profile: energy.PowerProfile | None = None,
                 trace: Trace | None = None) -> SimReport:
    sim = LinkSimulation(tx_cfg, rx_cfg, channel_cfg, seed, params, profile, trace)
    return sim.run(payload)


def line_accounted_payload_bytes(line_bits: int = 16384 * 8) -> int:
    """Payload whose framed burst (data words plus two flits) spans as close
    to ``line_bits`` of line time as whole words allow."""
    words = round(line_bits / WORD_BITS) - 2
    return 4 * words


@dataclass
class BerResult:
    bits: int
    errors: int
    ber: float
    ci_low: float
    ci_high: float
    report: SimReport


def wilson_interval(errors: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(errors, n, alpha=alpha, method="wilson")
    return float(lo), float(hi)


def measure_ber(bits: int, channel_cfg: ChannelConfig | None = None, seed: int = 0,
                params: LinkParams | None = None, rx_cfg: ChipConfig | None = None) -> BerResult:
    """Stream ``bits`` of random payload and count post-decode bit errors."""
    if bits < 10_000:
        raise ValueError("measure_ber needs at least 1e4 bits")
    rng = np.random.default_rng(seed)
    # whole words, so every counted bit is a payload bit
    payload = rng.integers(0, 256, 4 * -(-bits // 32), dtype=np.uint8).tobytes()
    cfg = channel_cfg or ChannelConfig()
    report = run_transfer(payload, rx_cfg=rx_cfg, channel_cfg=cfg, seed=seed, params=params,
                          trace=Trace(enabled=False))
    n = 8 * len(payload)
    lo, hi = wilson_interval(report.bit_errors, n)
    return BerResult(n, report.bit_errors, report.bit_errors / n, lo, hi, report)
