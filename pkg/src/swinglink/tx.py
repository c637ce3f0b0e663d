"""
Transmit datapath: flits, training words, the TX controller FSM and the
40:1 DDR serializer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

from . import codec
from .channel import DEFAULT_CLOCK_PERIOD_FS, Waveform
from .codec import ByteSymbol

WORD_BITS = 40
CYCLES_PER_WORD = 20  # DDR: two bits per TX clock


class WordKind(enum.Enum):
    TRAINING = "Training"
    START = "StartFlit"
    DATA = "DataBody"
    STOP = "StopFlit"


@dataclass(frozen=True)
class Word40:
    bits: int
    kind: WordKind

    def __post_init__(self):
        if not 0 <= self.bits < 1 << WORD_BITS:
            raise ValueError("Word40 holds 40 bits")

    @property
    def hex(self) -> str:
        return f"{self.bits:010X}"

    def serial_bits(self) -> list[int]:
        return [(self.bits >> (WORD_BITS - 1 - i)) & 1 for i in range(WORD_BITS)]

    @classmethod
    def from_serial_bits(cls, bits: Sequence[int], kind: WordKind = WordKind.DATA) -> "Word40":
        v = 0
        for b in bits:
            v = (v << 1) | (b & 1)
        return cls(v, kind)


def _flit(symbol: ByteSymbol, kind: WordKind, rd: int) -> tuple[Word40, int]:
    bits, rd = codec.encode_word([symbol] * 4, rd)
    return Word40(bits, kind), rd


def build_start_flit(rd: int) -> tuple[Word40, int]:
    return _flit(codec.K27_7, WordKind.START, rd)


def build_stop_flit(rd: int) -> tuple[Word40, int]:
    return _flit(codec.K29_7, WordKind.STOP, rd)


def build_training_word(rd: int) -> tuple[Word40, int]:
    """Four D10.2 groups: a pure 0101... line pattern."""
    return _flit(codec.D10_2, WordKind.TRAINING, rd)


def build_data_word(payload: bytes, rd: int) -> tuple[Word40, int]:
    if len(payload) != 4:
        raise ValueError(f"a data word carries 4 bytes, got {len(payload)}")
    bits, rd = codec.encode_word([ByteSymbol(b) for b in payload], rd)
    return Word40(bits, WordKind.DATA), rd


class TxMode(enum.Enum):
    IDLE = "Idle"
    WARMUP = "WarmUp"
    SEND_START = "SendStart"
    DATACOMM = "DataComm"
    SEND_STOP = "SendStop"


@dataclass(frozen=True)
class TxConfig:
    comm_en: bool = False
    warm_en: bool = False
    clock_period: int = DEFAULT_CLOCK_PERIOD_FS

    def __post_init__(self):
        if self.clock_period <= 0:
            raise ValueError("clock_period must be positive")

    @property
    def ui(self) -> int:
        return self.clock_period // 2


@dataclass(frozen=True)
class TxState:
    mode: TxMode = TxMode.IDLE
    cycle_in_word: int = 0
    rd: int = codec.RD_NEG


def tx_step(
    state: TxState, config: TxConfig, fifo_head: Optional[bytes]
) -> tuple[TxState, Optional[Word40], bool]:
    """Advance the TX controller by one word slot.

    ``fifo_head`` is the 4-byte word at the head of the TX FIFO, or None when
    ``Valid`` is low. Returns ``(state, word_or_None, fifo_pop)``; the mode of
    the returned state names the word being emitted in this slot.
    """
    mode, rd = state.mode, state.rd
    valid = fifo_head is not None

    def emit(new_mode, built, pop=False):
        word, new_rd = built
        return TxState(new_mode, 0, new_rd), word, pop

    if mode is TxMode.IDLE:
        if config.warm_en:
            return emit(TxMode.WARMUP, build_training_word(rd))
        return TxState(TxMode.IDLE, 0, rd), None, False

    if mode is TxMode.WARMUP:
        if config.comm_en and valid:
            return emit(TxMode.SEND_START, build_start_flit(rd))
        if config.warm_en or config.comm_en:
            return emit(TxMode.WARMUP, build_training_word(rd))
        return TxState(TxMode.IDLE, 0, rd), None, False

    if mode in (TxMode.SEND_START, TxMode.DATACOMM):
        if valid:
            return emit(TxMode.DATACOMM, build_data_word(fifo_head, rd), pop=True)
        return emit(TxMode.SEND_STOP, build_stop_flit(rd))

    # SendStop: frame closed
    if config.warm_en:
        return emit(TxMode.WARMUP, build_training_word(rd))
    return TxState(TxMode.IDLE, 0, rd), None, False


class TxController:
    """Clocks :func:`tx_step` once every 20 TX cycles and records emissions.

    ``on_word(time_fs, word)`` is called for every emitted word.
    """

    def __init__(self, config: TxConfig, on_word: Callable[[int, Word40], None] | None = None):
        self.config = config
        self.state = TxState()
        self.on_word = on_word
        self.cycle = 0
        self.emitted: list[tuple[int, Word40]] = []

    def clock(self, fifo_head: Optional[bytes]) -> tuple[Optional[Word40], bool]:
        """One TX clock; the controller only acts at word-slot boundaries."""
        word, pop = None, False
        if self.cycle % CYCLES_PER_WORD == 0:
            self.state, word, pop = tx_step(self.state, self.config, fifo_head)
            if word is not None:
                t = self.cycle * self.config.clock_period
                self.emitted.append((t, word))
                if self.on_word is not None:
                    self.on_word(t, word)
        st = self.state
        self.state = TxState(st.mode, (self.cycle + 1) % CYCLES_PER_WORD, st.rd)
        self.cycle += 1
        return word, pop


def serialize(words: Sequence[Word40], t0: int, clock_period: int = DEFAULT_CLOCK_PERIOD_FS) -> Waveform:
    """DDR serialization: stream bit ``2k`` launches on rising edge ``k`` and
    bit ``2k+1`` on the following falling edge, so one UI is half a period."""
    if not words:
        raise ValueError("serialize needs at least one word")
    bits: list[int] = []
    for w in words:
        bits.extend(w.serial_bits())
    return Waveform.from_bits(bits, t0, clock_period // 2)


def words_to_bits(words: Iterable[Word40]) -> list[int]:
    out: list[int] = []
    for w in words:
        out.extend(w.serial_bits())
    return out
