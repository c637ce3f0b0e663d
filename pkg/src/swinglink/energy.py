"""
Duty-cycled energy model and peripheral comparison.

One duty cycle is warm-up (CDR settling), a burst that drains one RX buffer
at the line rate, then idle until the cycle period ends:

    T_cycle = buffer_bits / bw
    E/bit   = (P_act*T_act + P_warm*T_warm + P_idle*T_idle) / buffer_bits
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

FS = 1e-15


class InfeasibleBandwidth(ValueError):
    pass


@dataclass(frozen=True)
class PowerProfile:
    """Per-block power at 1.2 V / 400 MHz, watts.

    The state totals are rounded to ``reported_digits`` significant digits,
    the precision at which the three link totals (4.27 mW, 4.05 mW, 33.1 uW)
    are reported and then used for the duty-cycle curve. ``None`` keeps the raw
    sums.
    """

    rx_analog_w: float = 2.85e-3
    tx_analog_w: float = 0.59e-3
    rx_digital_datacomm_w: float = 0.591e-3
    rx_digital_warm_w: float = 0.367e-3
    rx_digital_idle_w: float = 0.433e-6
    tx_digital_active_w: float = 0.239e-3
    tx_digital_idle_w: float = 32.7e-6
    reported_digits: int | None = 3
    analog_switch: bool = True  # analog blocks powered off in idle

    @property
    def analog_w(self) -> float:
        return self.rx_analog_w + self.tx_analog_w

    @property
    def p_act_raw(self) -> float:
        return self.analog_w + self.rx_digital_datacomm_w + self.tx_digital_active_w

    @property
    def p_warm_raw(self) -> float:
        return self.analog_w + self.rx_digital_warm_w + self.tx_digital_active_w

    @property
    def p_idle_raw(self) -> float:
        digital = self.rx_digital_idle_w + self.tx_digital_idle_w
        return digital if self.analog_switch else digital + self.analog_w

    def _round(self, x: float) -> float:
        if self.reported_digits is None:
            return x
        return float(f"{x:.{self.reported_digits}g}")

    @property
    def p_act(self) -> float:
        return self._round(self.p_act_raw)

    @property
    def p_warm(self) -> float:
        return self._round(self.p_warm_raw)

    @property
    def p_idle(self) -> float:
        return self._round(self.p_idle_raw)

    def power(self, mode: str) -> float:
        return {"DataComm": self.p_act, "WarmUp": self.p_warm, "Idle": self.p_idle}[mode]


@dataclass(frozen=True)
class DutyCycleParams:
    """``accounting='line'`` counts buffer bits at the line rate (8b/10b
    overhead ignored, as in the reference curve); ``'goodput'`` treats them
    as payload bits, so a burst lasts 10/8 longer."""

    buffer_bits: int = 16384 * 8
    line_rate_bps: float = 0.8e9
    t_warm_s: float = 2.56e-6
    accounting: str = "line"

    def __post_init__(self):
        if self.t_warm_s < 0:
            raise ValueError("t_warm_s must be >= 0")
        if self.accounting not in ("line", "goodput"):
            raise ValueError(f"accounting must be 'line' or 'goodput', got {self.accounting!r}")
        if self.buffer_bits <= 0 or self.line_rate_bps <= 0:
            raise ValueError("buffer_bits and line_rate_bps must be positive")

    @property
    def t_act_s(self) -> float:
        t = self.buffer_bits / self.line_rate_bps
        return t * 10 / 8 if self.accounting == "goodput" else t


class DutyCycleTiming(NamedTuple):
    t_cycle: float
    t_act: float
    t_warm: float
    t_idle: float


def bw_max(p: PowerProfile | None = None, d: DutyCycleParams | None = None) -> float:
    """Zero-idle bandwidth, bits/s."""
    d = d or DutyCycleParams()
    return d.buffer_bits / (d.t_act_s + d.t_warm_s)


def duty_cycle_timing(bw_bps: float, d: DutyCycleParams | None = None) -> DutyCycleTiming:
    d = d or DutyCycleParams()
    if not bw_bps > 0:
        raise ValueError(f"bandwidth must be positive, got {bw_bps}")
    limit = bw_max(None, d)
    t_cycle = d.buffer_bits / bw_bps
    t_idle = t_cycle - d.t_act_s - d.t_warm_s
    if abs(t_idle) <= 1e-12 * t_cycle:
        t_idle = 0.0  # float residue at bw == bw_max
    if t_idle < 0:
        raise InfeasibleBandwidth(f"{bw_bps / 1e6:.4f} Mbps exceeds bw_max {limit / 1e6:.4f} Mbps")
    return DutyCycleTiming(t_cycle, d.t_act_s, d.t_warm_s, t_idle)


def energy_per_bit(bw_bps: float, p: PowerProfile | None = None, d: DutyCycleParams | None = None) -> float:
    """Joules per bit when duty-cycled to deliver ``bw_bps``."""
    p = p or PowerProfile()
    d = d or DutyCycleParams()
    t = duty_cycle_timing(bw_bps, d)
    energy = p.p_act * t.t_act + p.p_warm * t.t_warm + p.p_idle * t.t_idle
    return energy / d.buffer_bits


def fixed_energy_per_bit(p: PowerProfile | None = None, d: DutyCycleParams | None = None) -> float:
    """The bandwidth-independent part of :func:`energy_per_bit`; the rest is
    ``p_idle / bw``."""
    p = p or PowerProfile()
    d = d or DutyCycleParams()
    ta, tw = d.t_act_s, d.t_warm_s
    return (p.p_act * ta + p.p_warm * tw - p.p_idle * (ta + tw)) / d.buffer_bits


def continuous_efficiency(p: PowerProfile | None = None, line_rate: float = 0.8e9) -> float:
    if not line_rate > 0:
        raise ValueError("line_rate must be positive")
    p = p or PowerProfile()
    return p.p_act / line_rate


def energy_from_durations(durations_fs: Mapping[str, int], p: PowerProfile | None = None) -> float:
    p = p or PowerProfile()
    return sum(p.power(mode) * t * FS for mode, t in durations_fs.items())


def energy_from_sim(report, p: PowerProfile | None = None) -> float:
    """Integrate per-mode power over a simulation's mode durations."""
    return energy_from_durations(report.durations_fs, p)


def fit_warm_time(points: Sequence[tuple[float, float]], p: PowerProfile | None = None,
                  d: DutyCycleParams | None = None) -> tuple[float, float, float]:
    """Least-squares fit of ``E(bw) = C1 + P_idle/bw`` to (Mbps, pJ/bit) points.

    Returns ``(t_warm_s, c1_j_per_bit, p_idle_w)``; ``t_warm_s`` solves the
    fixed part for the warm-up time given the profile's active/warm power.
    """
    p = p or PowerProfile()
    d = d or DutyCycleParams()
    bw = np.array([b * 1e6 for b, _ in points])
    e = np.array([v * 1e-12 for _, v in points])
    a = np.column_stack([np.ones_like(bw), 1.0 / bw])
    (c1, p_idle), *_ = np.linalg.lstsq(a, e, rcond=None)
    ta = d.t_act_s
    t_warm = (c1 * d.buffer_bits - p.p_act * ta + p_idle * ta) / (p.p_warm - p_idle)
    return float(t_warm), float(c1), float(p_idle)


# ---------------------------------------------------------------------------
# Peripheral curves (Mbps, pJ/bit), tabulated reference data.

@dataclass(frozen=True)
class PeripheralCurve:
    name: str
    points: tuple[tuple[float, float], ...]
    pad_count: int

    def __post_init__(self):
        bws = [b for b, _ in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bws, bws[1:])):
            raise ValueError(f"{self.name}: bandwidths must be strictly increasing")

    @property
    def domain(self) -> tuple[float, float]:
        return self.points[0][0], self.points[-1][0]

    def at(self, bw_mbps: float) -> float | None:
        """pJ/bit by linear interpolation in log-bandwidth; None outside."""
        lo, hi = self.domain
        if not lo <= bw_mbps <= hi:
            return None
        xs = np.log10([b for b, _ in self.points])
        ys = [v for _, v in self.points]
        return float(np.interp(math.log10(bw_mbps), xs, ys))


def _dedup(points):
    out = []
    for pt in points:
        if out and pt[0] == out[-1][0]:
            if pt[1] != out[-1][1]:
                raise ValueError(f"conflicting duplicate point at {pt[0]}")
            continue
        out.append(pt)
    return tuple(out)


SPI_SINGLE = PeripheralCurve("spi_single", _dedup([
    (0.001000, 100),
    (0.050999, 67.9918465334806),
    (0.100998, 66.6300880126883),
    (0.150997, 65.8413979202736),
    (0.250995, 64.8581375818225),
    (0.350993, 64.2173591104389),
    (0.450991, 63.7424786216738),
    (0.600988, 63.2028684470398),
    (0.750985, 62.7872812858126),
    (0.900982, 62.4496587459783),
    (1.100978, 62.0800776162041),
    (1.300974, 61.7740263318322),
    (1.550969, 61.4533743678496),
    (1.800963, 61.1820558181741),
    (2.100958, 60.9035868652491),
    (2.400952, 60.6633742227293),
    (2.750945, 60.4194445639113),
    (3.150937, 60.1770726612017),
    (3.600928, 59.9396903091337),
    (4.100918, 59.709383096814),
    (4.650907, 59.4873013948615),
    (5.300894, 59.2573393350504),
    (6.00088, 59.0401217601795),
    (6.800864, 58.8217621292076),
    (7.700846, 58.6057076116804),
    (8.750825, 58.384331523279),
    (9.900802, 58.1712835504449),
    (11.250775, 57.9515425059938),
    (12.750745, 57.737193341301),
    (45.100098, 55.6174446052216),
    (50, 55.4478584932744),
]), 4)

QUAD_SDR = PeripheralCurve("quad_sdr", (
    (0.1, 75.193929), (0.3, 39.83659566), (0.7, 29.73450043), (3, 23.92579566),
    (7, 22.91558614), (10, 22.688289), (20, 22.423109), (30, 22.33471566),
    (40, 22.290519), (50, 22.264001), (100, 22.210965), (150, 22.19328633),
    (200, 22.184447),
), 6)

QUAD_DDR = PeripheralCurve("quad_ddr", (
    (0.1, 69.65444675), (0.3, 34.29711341), (0.7, 24.19501818), (3, 18.38631341),
    (7, 17.37610389), (10, 17.14880675), (20, 16.88362675), (30, 16.79523341),
    (40, 16.75103675), (50, 16.72451875), (100, 16.67148275), (150, 16.65380408),
    (200, 16.64496475), (250, 16.63966115), (300, 16.63612541), (350, 16.63359989),
    (400, 16.63170575),
), 6)

OCTAL_SDR = PeripheralCurve("octal_sdr", (
    (0.1, 96.17244675), (0.3, 43.13644675), (0.7, 27.98330389), (3, 19.27024675),
    (7, 17.75493246), (10, 17.41398675), (20, 17.01621675), (30, 16.88362675),
    (40, 16.81733175), (50, 16.77755475), (100, 16.69800075), (150, 16.67148275),
    (200, 16.65822375), (250, 16.65026835), (300, 16.64496475), (350, 16.64117646),
    (400, 16.63833525),
), 11)

OCTAL_DDR = PeripheralCurve("octal_ddr", (
    (0.1, 93.40270562), (0.3, 40.36670562), (0.7, 25.21356277), (3, 16.50050562),
    (7, 14.98519134), (10, 14.64424562), (20, 14.24647562), (30, 14.11388562),
    (40, 14.04759062), (50, 14.00781362), (100, 13.92825962), (150, 13.90174162),
    (200, 13.88848262), (250, 13.88052722), (300, 13.87522362), (350, 13.87143534),
    (400, 13.86859412), (450, 13.86638429), (500, 13.86461642), (550, 13.86316999),
    (600, 13.86196462), (650, 13.8609447), (700, 13.86007048), (750, 13.85931282),
    (800, 13.85864987),
), 11)

HYPERBUS = PeripheralCurve("hyperbus", ((0.1, 113.85), (1600, 113.85)), 12)

# reference SerDes curve, kept as golden data for the model
SERDES_REFERENCE = PeripheralCurve("serdes", _dedup([
    (0.1, 336.3745801), (0.3, 115.7079134), (0.7, 52.66029436), (1, 38.47458008),
    (3, 16.40791341), (5, 11.99458008), (7, 10.10315151), (10, 8.684580078),
    (20, 7.029580078), (30, 6.477913411), (40, 6.202080078), (50, 6.036580078),
    (50, 6.036580078), (100, 5.705580078), (150, 5.595246745), (200, 5.540080078),
    (250, 5.506980078), (300, 5.484913411), (350, 5.469151507), (400, 5.457330078),
    (450, 5.448135634), (500, 5.440780078), (550, 5.434761896), (600, 5.429746745),
    (650, 5.425503155), (700, 5.421865792), (750, 5.418713411), (787, 5.416638528),
]), 4)

SERDES_PADS = 4
PERIPHERALS = (SPI_SINGLE, QUAD_SDR, QUAD_DDR, OCTAL_SDR, OCTAL_DDR, HYPERBUS)
CSV_COLUMNS = ("bandwidth_mbps", "serdes") + tuple(c.name for c in PERIPHERALS)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    pj_per_bit: float | None
    ratio_vs_serdes: float | None  # peripheral energy / SerDes energy
    pads: int


def compare(bw_bps: float, curves: Iterable[PeripheralCurve] = PERIPHERALS,
            p: PowerProfile | None = None, d: DutyCycleParams | None = None,
            serdes_bw_bps: float | None = None) -> list[ComparisonRow]:
    """Peripherals at ``bw_bps`` against the SerDes at ``serdes_bw_bps``
    (defaults to the same bandwidth)."""
    serdes_bw = bw_bps if serdes_bw_bps is None else serdes_bw_bps
    serdes_pj = energy_per_bit(serdes_bw, p, d) * 1e12
    rows = [ComparisonRow("serdes", serdes_pj, 1.0, SERDES_PADS)]
    for c in curves:
        v = c.at(bw_bps / 1e6)
        rows.append(ComparisonRow(c.name, v, None if v is None else v / serdes_pj, c.pad_count))
    return rows


def log_sweep(lo_mbps: float, hi_mbps: float, points_per_decade: int = 10) -> list[float]:
    n = max(2, int(round(math.log10(hi_mbps / lo_mbps) * points_per_decade)) + 1)
    return [float(x) for x in np.geomspace(lo_mbps, hi_mbps, n)]


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def energy_curve_rows(bandwidths_mbps: Iterable[float], p: PowerProfile | None = None,
                      d: DutyCycleParams | None = None) -> list[list[str]]:
    rows = []
    for bw in bandwidths_mbps:
        try:
            serdes = _fmt(energy_per_bit(bw * 1e6, p, d) * 1e12)
        except InfeasibleBandwidth:
            serdes = "infeasible"
        row = [_fmt(bw), serdes]
        for c in PERIPHERALS:
            v = c.at(bw)
            row.append("" if v is None else _fmt(v))
        rows.append(row)
    return rows


def energy_curve_csv(bandwidths_mbps: Iterable[float], p: PowerProfile | None = None,
                     d: DutyCycleParams | None = None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    wr.writerows(energy_curve_rows(bandwidths_mbps, p, d))
    return buf.getvalue()
