"""
Scenario files: flat ``key = value`` text, ``#`` starts a comment.

Example::

    payload_random_seed = 1
    payload_length = 16384
    phase_offset_ui = 0.37
    jitter_sigma_ui = 0.02
    freq_offset_ppm = 0
    metastability_window_fs = 10000
    divider_n = 4
    rx_buffer_bytes = 16384
    fixed_wait_cycles = 1024
    fifo_depth = 8
    seed = 7

The payload comes from ``payload_hex_file`` (path relative to the scenario
file) or from ``payload_random_seed`` plus ``payload_length``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .channel import ChannelConfig
from .link import ChipConfig, LinkParams


class ConfigError(ValueError):
    """Malformed or incomplete scenario; the message names the offending key."""


CHANNEL_KEYS = ("phase_offset_ui", "jitter_sigma_ui", "freq_offset_ppm", "metastability_window_fs")
LINK_KEYS = ("divider_n", "rx_buffer_bytes", "fixed_wait_cycles", "fifo_depth")
PAYLOAD_KEYS = ("payload_hex_file", "payload_random_seed", "payload_length")

_OPTIONAL = {
    "seed": int,
    "initial_pi_code": int,
    "gpio_delay_fs": int,
    "dma_setup_cycles": int,
    "lock_mode": str,
    "lock_budget_cycles": int,
    "target_bw_mbps": float,
    "ber_bits": int,
    "sweep_jitter_ui": str,
}
_TYPES = {
    "phase_offset_ui": float,
    "jitter_sigma_ui": float,
    "freq_offset_ppm": float,
    "metastability_window_fs": int,
    "divider_n": int,
    "rx_buffer_bytes": int,
    "fixed_wait_cycles": int,
    "fifo_depth": int,
    "payload_hex_file": str,
    "payload_random_seed": int,
    "payload_length": int,
    **_OPTIONAL,
}


@dataclass
class Scenario:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    def channel(self, seed: Optional[int] = None) -> ChannelConfig:
        v = self.values
        return ChannelConfig.from_ui(
            v["phase_offset_ui"],
            v["jitter_sigma_ui"],
            freq_offset_ppm=v["freq_offset_ppm"],
            metastability_window=v["metastability_window_fs"],
            seed=self.seed if seed is None else seed,
        )

    def chip(self) -> ChipConfig:
        v = self.values
        return ChipConfig(
            rx_buffer_bytes=v["rx_buffer_bytes"],
            fifo_depth=v["fifo_depth"],
            fixed_wait_cycles=v["fixed_wait_cycles"],
        )

    def link_params(self, **overrides) -> LinkParams:
        v = self.values
        kw = dict(divider_n=v["divider_n"])
        for key in ("initial_pi_code", "gpio_delay_fs", "dma_setup_cycles", "lock_mode", "lock_budget_cycles"):
            if key in v:
                kw[key] = v[key]
        if "target_bw_mbps" in v:
            kw["target_bw_bps"] = v["target_bw_mbps"] * 1e6
        kw.update(overrides)
        return LinkParams(**kw)

    def payload(self) -> bytes:
        v = self.values
        if "payload_hex_file" in v:
            path = Path(v["payload_hex_file"])
            if not path.is_absolute():
                path = self.base_dir / path
            try:
                text = path.read_text()
            except OSError as exc:
                raise ConfigError(f"payload_hex_file: cannot read {path}: {exc.strerror}") from None
            try:
                return bytes.fromhex("".join(text.split()))
            except ValueError:
                raise ConfigError(f"payload_hex_file: {path} is not valid hex") from None
        rng = np.random.default_rng(v["payload_random_seed"])
        return rng.integers(0, 256, v["payload_length"], dtype=np.uint8).tobytes()

    def jitter_sweep(self) -> list[float]:
        raw = self.values.get("sweep_jitter_ui")
        if raw is None:
            return [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
        try:
            return [float(x) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sweep_jitter_ui: expected comma-separated numbers, got {raw!r}") from None


def parse_scenario(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _TYPES[key](value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {_TYPES[key].__name__}") from None
    return values


def require(values: dict, keys, payload: bool = False) -> None:
    for key in keys:
        if key not in values:
            raise ConfigError(f"missing config key: {key}")
    if payload and "payload_hex_file" not in values:
        for key in ("payload_random_seed", "payload_length"):
            if key not in values:
                raise ConfigError(f"missing config key: {key} (or payload_hex_file)")


def load_scenario(path, keys=CHANNEL_KEYS + LINK_KEYS, payload: bool = True) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values = parse_scenario(text)
    require(values, keys, payload)
    sc = Scenario(values, path.parent)
    try:
        if all(k in values for k in CHANNEL_KEYS):
            sc.channel()
        if all(k in values for k in LINK_KEYS[1:]):
            sc.chip()
        if "divider_n" in values:
            sc.link_params()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return sc
