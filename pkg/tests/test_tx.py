from __future__ import annotations

import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinglink import codec
from swinglink.codec import RD_NEG, RD_POS
from swinglink.tx import (
    CYCLES_PER_WORD,
    TxConfig,
    TxController,
    TxMode,
    TxState,
    Word40,
    WordKind,
    build_data_word,
    build_start_flit,
    build_stop_flit,
    build_training_word,
    serialize,
    tx_step,
)

P = 2_500_000


@pytest.mark.parametrize(
    "builder, rd, group, kind",
    [
        (build_start_flit, RD_NEG, "1101101000", WordKind.START),
        (build_start_flit, RD_POS, "0010010111", WordKind.START),
        (build_stop_flit, RD_NEG, "1011101000", WordKind.STOP),
        (build_stop_flit, RD_POS, "0100010111", WordKind.STOP),
        (build_training_word, RD_NEG, "0101010101", WordKind.TRAINING),
        (build_training_word, RD_POS, "0101010101", WordKind.TRAINING),
    ],
)
def test_flits_and_training(builder, rd, group, kind):
    word, rd_out = builder(rd)
    assert f"{word.bits:040b}" == group * 4
    assert word.kind is kind
    assert rd_out == rd


def test_word40_serial_round_trip():
    w = Word40(0x8000000001, WordKind.DATA)
    bits = w.serial_bits()
    assert bits[0] == 1 and bits[-1] == 1 and sum(bits) == 2
    assert Word40.from_serial_bits(bits) == w
    with pytest.raises(ValueError):
        Word40(1 << 40, WordKind.DATA)


def test_fsm_transitions():
    cfg = TxConfig(warm_en=True)
    s, w, pop = tx_step(TxState(), cfg, None)
    assert s.mode is TxMode.WARMUP and w.kind is WordKind.TRAINING and not pop

    cfg = TxConfig(warm_en=True, comm_en=True)
    s, w, pop = tx_step(s, cfg, b"\x01\x02\x03\x04")
    assert s.mode is TxMode.SEND_START and w.kind is WordKind.START and not pop

    s, w, pop = tx_step(s, cfg, b"\x01\x02\x03\x04")
    assert s.mode is TxMode.DATACOMM and w.kind is WordKind.DATA and pop

    s, w, pop = tx_step(s, cfg, None)
    assert s.mode is TxMode.SEND_STOP and w.kind is WordKind.STOP and not pop

    s, w, _ = tx_step(s, TxConfig(), None)
    assert s.mode is TxMode.IDLE and w is None


def test_fsm_idle_without_warm_en_is_silent():
    s, w, pop = tx_step(TxState(), TxConfig(comm_en=True), b"abcd")
    assert s.mode is TxMode.IDLE and w is None and not pop


def test_fsm_returns_to_warmup_if_warm_en_still_set():
    s = TxState(TxMode.SEND_STOP)
    s, w, _ = tx_step(s, TxConfig(warm_en=True), None)
    assert s.mode is TxMode.WARMUP and w.kind is WordKind.TRAINING


ALLOWED = {
    TxMode.IDLE: {TxMode.IDLE, TxMode.WARMUP},
    TxMode.WARMUP: {TxMode.WARMUP, TxMode.SEND_START, TxMode.IDLE},
    TxMode.SEND_START: {TxMode.DATACOMM, TxMode.SEND_STOP},
    TxMode.DATACOMM: {TxMode.DATACOMM, TxMode.SEND_STOP},
    TxMode.SEND_STOP: {TxMode.IDLE, TxMode.WARMUP},
}
# (Training)* (Start Data* Stop)* interleaved; a finite run may end mid-frame
GRAMMAR = re.compile(r"(T|SD*P)*(SD*)?")
LETTER = {WordKind.TRAINING: "T", WordKind.START: "S", WordKind.DATA: "D", WordKind.STOP: "P"}


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=80))
def test_fsm_random_inputs_obey_grammar(steps):
    s = TxState()
    letters = []
    for warm, comm, valid in steps:
        prev = s.mode
        s, w, pop = tx_step(s, TxConfig(comm_en=comm, warm_en=warm), b"\x00\x11\x22\x33" if valid else None)
        assert s.mode in ALLOWED[prev]
        assert pop == (w is not None and w.kind is WordKind.DATA)
        if w is not None:
            letters.append(LETTER[w.kind])
    assert GRAMMAR.fullmatch("".join(letters))


def test_controller_emits_one_word_per_20_cycles():
    ctl = TxController(TxConfig(warm_en=True))
    for _ in range(20 * 10):
        ctl.clock(None)
    times = [t for t, _ in ctl.emitted]
    assert len(times) == 10
    assert np.all(np.diff(times) == CYCLES_PER_WORD * P)
    assert ctl.state.cycle_in_word == 0


def test_serialize_one_word_spans_50ns():
    w, _ = build_training_word(RD_NEG)
    wave = serialize([w], t0=0)
    assert wave.end - wave.start == 50_000_000
    assert len(wave.transitions) == 39  # training toggles at every internal UI boundary
    assert np.all(np.diff(wave.transitions) == 1_250_000)


def test_serialize_run_of_five_is_one_segment():
    # K28.7 followed by D-codes contains runs of 5
    syms = [codec.K(28, 7), codec.D(0, 0)] * 3
    groups, _ = codec.encode_stream(syms, RD_NEG)
    bits = codec.groups_to_bits(groups)
    wave = serialize([Word40.from_serial_bits(bits[i:i + 40]) for i in range(0, 40 * (len(bits) // 40), 40)], 0)
    seg = np.diff(list(wave.transitions) + [wave.end])
    assert seg.max() <= 5 * 1_250_000
    assert 5 * 1_250_000 in set(seg.tolist())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(min_size=4, max_size=4), min_size=1, max_size=12))
def test_serialize_is_length_preserving(payloads):
    words, rd = [], RD_NEG
    for p in payloads:
        w, rd = build_data_word(p, rd)
        words.append(w)
    wave = serialize(words, t0=1000)
    assert wave.end - 1000 == 40 * len(words) * 1_250_000
    assert all(a < b for a, b in zip(wave.transitions, wave.transitions[1:]))
    assert wave.bits() == [b for w in words for b in w.serial_bits()]
