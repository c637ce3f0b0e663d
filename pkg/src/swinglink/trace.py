"""Trace records: ``time_fs<TAB>domain<TAB>event<TAB>payload`` per line."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator

DOMAINS = ("TX", "RX", "GPIO", "CDR")

_LINE = re.compile(r"^(\d+)\t(TX|RX|GPIO|CDR)\t([A-Za-z_]+)\t([^\t\n]*)$")


@dataclass(frozen=True)
class TraceRecord:
    time_fs: int
    domain: str
    event: str
    payload: str = ""

    def format(self) -> str:
        return f"{self.time_fs}\t{self.domain}\t{self.event}\t{self.payload}"


class Trace:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[TraceRecord] = []

    def __call__(self, time_fs: int, domain: str, event: str, payload: str = "") -> None:
        if self.enabled:
            self.records.append(TraceRecord(time_fs, domain, event, payload))

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def select(self, domain: str | None = None, event: str | None = None) -> list[TraceRecord]:
        return [
            r
            for r in self.records
            if (domain is None or r.domain == domain) and (event is None or r.event == event)
        ]

    def ordered(self) -> list[TraceRecord]:
        """Records sorted by time; ties keep recording order."""
        return sorted(self.records, key=lambda r: r.time_fs)

    def dumps(self) -> str:
        return "".join(r.format() + "\n" for r in self.ordered())

    def write(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.dumps())


def parse_line(line: str) -> TraceRecord:
    m = _LINE.match(line.rstrip("\n"))
    if m is None:
        raise ValueError(f"malformed trace line: {line!r}")
    return TraceRecord(int(m.group(1)), m.group(2), m.group(3), m.group(4))


def parse(lines: Iterable[str]) -> list[TraceRecord]:
    return [parse_line(line) for line in lines if line.strip()]
