"""
Receive datapath: flit detection with bit-shift handling, realignment,
2:40 deserialization, 10b/8b decoding and the RX controller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

from . import codec
from .codec import DecodeError
from .tx import WORD_BITS, Word40, WordKind


class FlitTarget(enum.Enum):
    START = "Start"
    STOP = "Stop"


_TARGET_SYMBOL = {FlitTarget.START: codec.K27_7, FlitTarget.STOP: codec.K29_7}


@lru_cache(maxsize=None)
def flit_patterns(target: FlitTarget, lanes: int = 4) -> tuple[tuple[tuple[int, ...], int], ...]:
    """Encoded bit patterns of a flit, one per starting disparity.

    Each entry is ``(bits, rd)`` where ``rd`` is the disparity in force after
    the flit (K27.7 and K29.7 are balanced, so it equals the starting one).
    """
    out = []
    for rd in (codec.RD_NEG, codec.RD_POS):
        groups = []
        r = rd
        for _ in range(lanes):
            cg, r = codec.encode(_TARGET_SYMBOL[target], r)
            groups.append(cg)
        out.append((tuple(codec.groups_to_bits(groups)), r))
    return tuple(out)


@dataclass(frozen=True)
class SamplePair:
    even: int
    odd: int


@dataclass(frozen=True)
class _Hypothesis:
    variant: int
    shift: bool
    matched: int  # pattern bits confirmed so far


@dataclass(frozen=True)
class DetectorState:
    """Sequence detector state.

    Candidate alignments are tracked in parallel so a partial match that
    fails never swallows the first pair of a real flit. ``state`` names the
    most advanced candidate (``Start``, ``Check1``, ...); ``shift`` and
    ``pending`` describe the detection once it fires.
    """

    candidates: tuple[_Hypothesis, ...] = ()
    shift: bool = False
    pending: Optional[int] = None
    rd: Optional[int] = None

    @property
    def state(self) -> str:
        if not self.candidates:
            return "Start"
        best = max(self.candidates, key=lambda h: h.matched)
        pairs = (best.matched + (1 if best.shift else 0)) // 2
        return f"Check{pairs}"


def detector_step(
    d: DetectorState,
    pair: SamplePair,
    target: FlitTarget,
    lanes: int = 4,
    patterns: Sequence[tuple[Sequence[int], int]] | None = None,
) -> tuple[DetectorState, bool]:
    """Consume one even/odd pair; returns ``(state, detected)``.

    An aligned candidate matches two pattern bits per step. A shifted one
    starts when only the odd bit matches the first pattern bit; it needs one
    extra step and finishes on an even bit, leaving the odd bit of that last
    pair as ``pending`` (the first bit after the flit). ``patterns`` replaces
    the encoded flit with explicit ``(bits, rd)`` pairs.
    """
    if patterns is None:
        patterns = flit_patterns(target, lanes)
    e, o = pair.even, pair.odd
    nxt: list[_Hypothesis] = []
    for h in d.candidates:
        bits = patterns[h.variant][0]
        m = h.matched
        if m == len(bits) - 1:
            if bits[m] == e:
                return DetectorState((), True, o, patterns[h.variant][1]), True
            continue
        if bits[m] == e and bits[m + 1] == o:
            h = replace(h, matched=m + 2)
            if h.matched == len(bits):
                return DetectorState((), h.shift, None, patterns[h.variant][1]), True
            nxt.append(h)
    for v, (bits, _) in enumerate(patterns):
        if bits[0] == e and bits[1] == o:
            nxt.append(_Hypothesis(v, False, 2))
        if bits[0] == o:
            nxt.append(_Hypothesis(v, True, 1))
    return DetectorState(tuple(dict.fromkeys(nxt))), False


def realign(pairs: Sequence[SamplePair], shift: bool, carry: Optional[int] = None) -> list[SamplePair]:
    """Re-pair a stream that arrived one bit late.

    With ``shift`` the output pairs are ``(odd_prev, even_cur)``; ``carry`` is
    the odd bit preceding ``pairs[0]`` (the detector's ``pending`` bit). When
    omitted, the first input pair only supplies its odd bit.
    """
    if not shift:
        return list(pairs)
    out = []
    prev = carry
    for p in pairs:
        if prev is not None:
            out.append(SamplePair(prev, p.even))
        prev = p.odd
    return out


class RxMode(enum.Enum):
    IDLE = "Idle"
    WARMUP = "WarmUp"
    HUNTING = "Hunting"
    DATACOMM = "DataComm"


@dataclass(frozen=True)
class RxState:
    mode: RxMode = RxMode.IDLE
    word_fill: int = 0
    rd: int = codec.RD_NEG
    bits: int = 0  # partial word, first bit in the MSB once full


def deserialize_step(rx: RxState, pair: SamplePair) -> tuple[RxState, Optional[Word40]]:
    """Shift in two bits; a word comes out on every 20th call."""
    if rx.mode is not RxMode.DATACOMM:
        raise ValueError("deserializer is only clocked in DataComm")
    bits = (rx.bits << 2) | (pair.even << 1) | pair.odd
    fill = rx.word_fill + 2
    if fill == WORD_BITS:
        return RxState(rx.mode, 0, rx.rd, 0), Word40(bits, WordKind.DATA)
    return RxState(rx.mode, fill, rx.rd, bits), None


@dataclass(frozen=True)
class RxEvents:
    start_detected: bool = False
    stop_detected: bool = False
    warm_en: bool = False
    detector_en: bool = False


def rx_controller_step(rx: RxState, ev: RxEvents) -> RxState:
    mode = rx.mode
    if not (ev.warm_en or ev.detector_en):
        return replace(rx, mode=RxMode.IDLE, word_fill=0, bits=0)
    if mode is RxMode.IDLE:
        return replace(rx, mode=RxMode.WARMUP) if ev.warm_en else rx
    if mode is RxMode.WARMUP:
        return replace(rx, mode=RxMode.HUNTING) if ev.detector_en else rx
    if mode is RxMode.HUNTING:
        if ev.start_detected:
            return replace(rx, mode=RxMode.DATACOMM, word_fill=0, bits=0)
        return rx if ev.detector_en else replace(rx, mode=RxMode.WARMUP)
    if ev.stop_detected:
        # the stop flit always closes the datapath; warm_en picks where we land
        nxt = RxMode.HUNTING if ev.warm_en else RxMode.IDLE
        return replace(rx, mode=nxt, word_fill=0, bits=0)
    return rx


@dataclass(frozen=True)
class DecodedWord:
    data: bytes
    controls: tuple[bool, bool, bool, bool]
    corrupt: bool
    errors: tuple[DecodeError, ...] = ()

    @property
    def hex(self) -> str:
        return self.data.hex().upper()


def decode_word(w: Word40, rd: int) -> tuple[DecodedWord, int]:
    """Decode four lanes with disparity threaded lane 0 -> 3.

    An illegal lane marks the word corrupt and contributes 0x00; disparity
    then follows the received group's own imbalance so one bad group does
    not cascade into its neighbours.
    """
    data = bytearray()
    controls = []
    errors = []
    for cg in codec.split_word(w.bits):
        try:
            sym, rd = codec.decode(cg, rd)
        except DecodeError as exc:
            errors.append(exc)
            data.append(0)
            controls.append(False)
            disp = codec.disparity(cg)
            if disp:
                rd = 1 if disp > 0 else -1
            continue
        data.append(sym.value)
        controls.append(sym.is_control)
    corrupt = bool(errors) or any(controls)
    return DecodedWord(bytes(data), tuple(controls), corrupt, tuple(errors)), rd


def is_flit(w: Word40, target: FlitTarget) -> bool:
    bits = tuple(w.serial_bits())
    return any(bits == p for p, _ in flit_patterns(target))


@dataclass
class RxOutput:
    slot: int
    word: DecodedWord


class RxDatapath:
    """Pair-by-pair receive pipeline behind the comparators.

    ``on_event(kind, payload_hex)`` is called with kinds ``detect_start``,
    ``detect_stop``, ``word`` and ``corrupt``. Decoded words leave through
    ``on_word`` one word slot after the deserializer produced them.
    """

    def __init__(
        self,
        on_event: Callable[[str, str], None] | None = None,
        on_word: Callable[[DecodedWord], None] | None = None,
        lanes: int = 4,
    ):
        self.state = RxState()
        self.detector = DetectorState()
        self.warm_en = False
        self.detector_en = False
        self.on_event = on_event
        self.on_word = on_word
        self.lanes = lanes
        self.shift = False
        self._carry: Optional[int] = None
        self._latched: Optional[DecodedWord] = None
        self.slot = 0
        self.decoder_inputs = 0
        self.decoder_inputs_outside_datacomm = 0
        self.frames = 0
        self.corrupt_words = 0

    @property
    def mode(self) -> RxMode:
        return self.state.mode

    def _emit(self, kind: str, payload: str = "") -> None:
        if self.on_event is not None:
            self.on_event(kind, payload)

    def set_enables(self, warm_en: bool, detector_en: bool) -> None:
        self.warm_en, self.detector_en = warm_en, detector_en
        self._control()

    def _control(self, start=False, stop=False) -> None:
        before = self.state.mode
        self.state = rx_controller_step(
            self.state, RxEvents(start, stop, self.warm_en, self.detector_en)
        )
        if self.state.mode is not RxMode.HUNTING and before is RxMode.HUNTING:
            self.detector = DetectorState()
        if before is RxMode.DATACOMM and self.state.mode is not RxMode.DATACOMM:
            self._flush()

    def _flush(self) -> None:
        if self._latched is not None:
            self._deliver(self._latched)
            self._latched = None

    def _deliver(self, dw: DecodedWord) -> None:
        if dw.corrupt:
            self.corrupt_words += 1
            self._emit("corrupt", dw.hex)
        else:
            self._emit("word", dw.hex)
        if self.on_word is not None:
            self.on_word(dw)

    def push(self, pair: SamplePair) -> None:
        mode = self.state.mode
        if mode is RxMode.HUNTING:
            self.detector, hit = detector_step(self.detector, pair, FlitTarget.START, self.lanes)
            if hit:
                self.shift = self.detector.shift
                self._carry = self.detector.pending
                rd = self.detector.rd
                self.detector = DetectorState()
                self.frames += 1
                self._emit("detect_start", "shift=1" if self.shift else "shift=0")
                self._control(start=True)
                self.state = replace(self.state, rd=rd)
        elif mode is RxMode.DATACOMM:
            if self.shift:
                aligned = SamplePair(self._carry, pair.even)
                self._carry = pair.odd
            else:
                aligned = pair
            self.state, word = deserialize_step(self.state, aligned)
            if word is not None:
                self._word(word)

    def _word(self, word: Word40) -> None:
        self.slot += 1
        if is_flit(word, FlitTarget.STOP):
            self._emit("detect_stop", word.hex)
            self._control(stop=True)
            return
        self.decoder_inputs += 1
        if self.state.mode is not RxMode.DATACOMM:
            self.decoder_inputs_outside_datacomm += 1
        decoded, rd = decode_word(word, self.state.rd)
        self.state = replace(self.state, rd=rd)
        # one word-slot of decoder latency
        previous, self._latched = self._latched, decoded
        if previous is not None:
            self._deliver(previous)
