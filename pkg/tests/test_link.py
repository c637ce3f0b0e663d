from __future__ import annotations

import numpy as np
import pytest

from swinglink import energy
from swinglink.channel import ChannelConfig
from swinglink.link import (
    ChipConfig,
    LinkParams,
    check_protocol,
    line_accounted_payload_bytes,
    measure_ber,
    run_handshake,
    run_transfer,
    wilson_interval,
)
from swinglink.trace import Trace, TraceRecord, parse_line

P = 2_500_000
WORD_FS = 20 * P
DEADBEEF = bytes([0xDE, 0xAD, 0xBE, 0xEF])


def _first(trace, domain, event, payload=None):
    for r in trace.ordered():
        if r.domain == domain and r.event == event and (payload is None or r.payload == payload):
            return r
    raise AssertionError(f"no {domain} {event}")


def _assert_conservation(rep):
    assert rep.fifo_pops == rep.data_words_sent
    assert 4 * rep.data_words_sent == rep.bytes_landed + 4 * rep.corrupt_words


def test_handshake_order_and_timing():
    trace = run_handshake()
    order = [
        _first(trace, "GPIO", "warmup_req", "1"),
        _first(trace, "RX", "enter_warmup"),
        _first(trace, "GPIO", "clock_ready", "1"),
        _first(trace, "RX", "dma_config"),
        _first(trace, "GPIO", "comm_ready", "1"),
        _first(trace, "TX", "StartFlit"),
    ]
    times = [r.time_fs for r in order]
    assert times == sorted(times)
    assert order[2].time_fs - order[0].time_fs == 2_560_000_000
    assert check_protocol(trace.ordered()) == []


def test_training_continues_until_comm_ready():
    trace = run_handshake()
    comm = _first(trace, "GPIO", "comm_ready", "1").time_fs
    start = _first(trace, "TX", "StartFlit").time_fs
    tx = [r for r in trace.ordered() if r.domain == "TX" and r.time_fs < start]
    assert tx and all(r.event == "Training" for r in tx)
    assert tx[-1].time_fs == start - WORD_FS
    assert start - comm < WORD_FS


def test_no_warm_en_means_no_activity():
    assert len(run_handshake(ChipConfig(warm_en=False))) == 0


def test_gpio_delay_shifts_the_handshake():
    d = 30_000_000
    trace = run_handshake(gpio_delay_fs=d)
    req = _first(trace, "GPIO", "warmup_req", "1").time_fs
    rx = _first(trace, "RX", "enter_warmup").time_fs
    assert d <= rx - req < d + P
    assert check_protocol(trace.ordered()) == []


def test_protocol_checker_flags_violations():
    bad = [TraceRecord(0, "GPIO", "warmup_req", "1"), TraceRecord(1, "GPIO", "comm_ready", "1"),
           TraceRecord(2, "TX", "StartFlit", "")]
    problems = check_protocol(bad)
    assert any("comm_ready before clock_ready" in p for p in problems)
    assert check_protocol([TraceRecord(0, "TX", "StartFlit", "")])


@pytest.mark.parametrize("offset_ui", [0.0, 0.25, 0.37, 0.5, 0.9])
def test_four_byte_round_trip(offset_ui):
    rep = run_transfer(DEADBEEF, channel_cfg=ChannelConfig.from_ui(offset_ui))
    assert rep.payload_out == DEADBEEF
    assert (rep.bit_errors, rep.corrupt_words, rep.exit_status) == (0, 0, 0)
    assert rep.cycles_completed == 1
    assert rep.durations_fs["WarmUp"] == 2_600_000_000
    assert rep.durations_fs["DataComm"] == 3 * WORD_FS
    _assert_conservation(rep)


def test_padding_is_recorded_and_stripped():
    rep = run_transfer(b"\x01\x02\x03\x04\x05\x06")
    assert rep.padding_bytes == 2
    assert rep.payload_out == b"\x01\x02\x03\x04\x05\x06"
    assert rep.bytes_landed == 8


def test_comma_like_payload_survives():
    # 0xAC repeated encodes to a bit stream containing a shifted K27.7 group
    payload = bytes([0xAC]) * 64 + bytes([0x4B]) * 64
    rep = run_transfer(payload, channel_cfg=ChannelConfig.from_ui(0.3))
    assert rep.payload_out == payload and rep.exit_status == 0


def test_16kb_is_one_cycle_of_2049_words():
    payload = np.random.default_rng(1).integers(0, 256, 16384, dtype=np.uint8).tobytes()
    rep = run_transfer(payload, channel_cfg=ChannelConfig.from_ui(0.2))
    assert rep.payload_out == payload
    assert rep.cycles_completed == 1
    assert (rep.start_flits, rep.stop_flits) == (1, 1)
    assert rep.durations_fs["DataComm"] == (4096 + 2) * WORD_FS == 204_900_000_000
    assert sum(rep.durations_fs.values()) == rep.total_time_fs
    assert rep.effective_bandwidth == pytest.approx(rep.delivered_bits / (rep.total_time_fs * 1e-15))
    assert rep.energy_j == pytest.approx(energy.energy_from_sim(rep))
    _assert_conservation(rep)


def test_32kb_needs_two_duty_cycles():
    payload = np.random.default_rng(2).integers(0, 256, 32768, dtype=np.uint8).tobytes()
    trace = Trace()
    rep = run_transfer(payload, trace=trace)
    assert rep.payload_out == payload
    assert rep.cycles_completed == 2
    assert len(trace.select("TX", "StartFlit")) == 2
    assert len(trace.select("TX", "StopFlit")) == 2
    assert len(trace.select("GPIO", "warmup_req")) == 4
    assert check_protocol(trace.ordered()) == []


@pytest.mark.parametrize("size, buf", [(100, 64), (4096, 1024), (20, 4)])
def test_duty_cycle_count(size, buf):
    payload = bytes(range(256)) * (size // 256) + bytes(range(size % 256))
    cfg = ChipConfig(rx_buffer_bytes=buf)
    rep = run_transfer(payload, tx_cfg=cfg, rx_cfg=cfg)
    assert rep.cycles_completed == -(-size // buf)
    assert rep.payload_out == payload


def test_trace_is_deterministic():
    cfg = ChannelConfig.from_ui(0.37, 0.05)
    payload = bytes(range(256)) * 4
    a, b = Trace(), Trace()
    ra = run_transfer(payload, channel_cfg=cfg, seed=5, trace=a)
    rb = run_transfer(payload, channel_cfg=cfg, seed=5, trace=b)
    assert a.dumps() == b.dumps()
    assert ra.to_csv() == rb.to_csv()
    assert [parse_line(line) for line in a.dumps().splitlines()] == a.ordered()


def test_trace_lines_are_time_ordered():
    trace = Trace()
    run_transfer(bytes(64), channel_cfg=ChannelConfig.from_ui(0.4), trace=trace)
    times = [int(line.split("\t")[0]) for line in trace.dumps().splitlines()]
    assert times == sorted(times)
    assert {line.split("\t")[1] for line in trace.dumps().splitlines()} <= {"TX", "RX", "GPIO", "CDR"}


def test_lock_failure_aborts_with_exit_2():
    # N=128 cannot slew from a transition-centred start within the timer
    rep = run_transfer(DEADBEEF, params=LinkParams(P, divider_n=128, initial_pi_code=0))
    assert rep.lock_failure
    assert rep.exit_status == 2


def test_lock_criterion_mode_shortens_warmup():
    rep = run_transfer(DEADBEEF, params=LinkParams(P, lock_mode="criterion"))
    assert rep.exit_status == 0
    assert rep.durations_fs["WarmUp"] < 2_600_000_000


def test_target_bandwidth_adds_idle():
    rep = run_transfer(bytes(4096), tx_cfg=ChipConfig(rx_buffer_bytes=4096), rx_cfg=ChipConfig(rx_buffer_bytes=4096),
                       params=LinkParams(P, target_bw_bps=100e6))
    assert rep.exit_status == 0
    assert rep.total_time_fs == round(4096 * 8 / 100e6 * 1e15)
    assert rep.durations_fs["Idle"] > 0


def test_line_accounted_payload():
    n = line_accounted_payload_bytes()
    assert n == 13100
    assert (n // 4 + 2) * 40 == pytest.approx(131072, abs=20)


def test_chip_config_validation():
    with pytest.raises(ValueError):
        ChipConfig(rx_buffer_bytes=10)
    with pytest.raises(ValueError):
        ChipConfig(fifo_depth=1)
    with pytest.raises(ValueError):
        LinkParams(P, divider_n=3)


def test_report_csv_row():
    rep = run_transfer(DEADBEEF)
    header, row = rep.to_csv().strip().split("\n")
    assert header.split(",")[:3] == ["payload_bytes", "delivered_bytes", "bit_errors"]
    assert row.split(",")[:3] == ["4", "4", "0"]
    assert row.split(",")[-1] == "0"


def test_ber_ideal_channel_is_zero():
    r = measure_ber(20_000, ChannelConfig(), seed=1)
    assert r.errors == 0 and r.ber == 0.0
    assert r.ci_low == 0.0 and 0 < r.ci_high < 1e-3
    with pytest.raises(ValueError):
        measure_ber(1000)


def test_ber_heavy_jitter_is_high_and_repeatable():
    cfg = ChannelConfig.from_ui(0.0, 0.2, seed=3)
    a = measure_ber(40_000, cfg, seed=3)
    b = measure_ber(40_000, cfg, seed=3)
    assert a.ber > 1e-3
    assert a.errors <= a.bits
    assert a.errors == b.errors
    assert a.report.payload_out == b.report.payload_out


def test_wilson_interval_contains_estimate():
    lo, hi = wilson_interval(10, 1000)
    assert lo < 0.01 < hi
