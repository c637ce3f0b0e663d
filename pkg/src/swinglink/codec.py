"""
IBM 8b/10b line code.

Code groups are held as 10-bit integers whose MSB is bit ``a`` (the first bit
on the wire), so ``format(cg, "010b")`` reads ``abcdeifghj`` left to right.
Running disparity is the integer -1 or +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


RD_NEG = -1
RD_POS = +1

# 5b/6b sub-block, abcdei, (RD-, RD+) columns; balanced entries repeat.
_TABLE_5B6B = [
    (0b100111, 0b011000),
    (0b011101, 0b100010),
    (0b101101, 0b010010),
    (0b110001, 0b110001),
    (0b110101, 0b001010),
    (0b101001, 0b101001),
    (0b011001, 0b011001),
    (0b111000, 0b000111),
    (0b111001, 0b000110),
    (0b100101, 0b100101),
    (0b010101, 0b010101),
    (0b110100, 0b110100),
    (0b001101, 0b001101),
    (0b101100, 0b101100),
    (0b011100, 0b011100),
    (0b010111, 0b101000),
    (0b011011, 0b100100),
    (0b100011, 0b100011),
    (0b010011, 0b010011),
    (0b110010, 0b110010),
    (0b001011, 0b001011),
    (0b101010, 0b101010),
    (0b011010, 0b011010),
    (0b111010, 0b000101),
    (0b110011, 0b001100),
    (0b100110, 0b100110),
    (0b010110, 0b010110),
    (0b110110, 0b001001),
    (0b001110, 0b001110),
    (0b101110, 0b010001),
    (0b011110, 0b100001),
    (0b101011, 0b010100),
]
_K28_6B = (0b001111, 0b110000)

# 3b/4b sub-block, fghj, (RD-, RD+).
_TABLE_3B4B_D = [
    (0b1011, 0b0100),
    (0b1001, 0b1001),
    (0b0101, 0b0101),
    (0b1100, 0b0011),
    (0b1101, 0b0010),
    (0b1010, 0b1010),
    (0b0110, 0b0110),
    (0b1110, 0b0001),  # primary D.x.7
]
_D_X_A7 = (0b0111, 0b1000)
_TABLE_3B4B_K = [
    (0b1011, 0b0100),
    (0b0110, 0b1001),
    (0b1010, 0b0101),
    (0b1100, 0b0011),
    (0b1101, 0b0010),
    (0b0101, 0b1010),
    (0b1001, 0b0110),
    (0b0111, 0b1000),
]

CONTROL_CODES = frozenset(
    [(y << 5) | 28 for y in range(8)] + [0xF7, 0xFB, 0xFD, 0xFE]
)


class CodecError(ValueError):
    """Invalid symbol handed to the encoder."""


class DecodeError(ValueError):
    """A received code group that is not legal under the current disparity."""

    def __init__(self, bits: int, rd: int, reason: str):
        super().__init__(f"code group {bits:010b} at RD{'+' if rd > 0 else '-'}: {reason}")
        self.bits = bits
        self.rd = rd
        self.reason = reason


@dataclass(frozen=True)
class ByteSymbol:
    value: int
    is_control: bool = False

    def __post_init__(self):
        if not 0 <= self.value <= 0xFF:
            raise CodecError(f"byte value out of range: {self.value}")
        if self.is_control and self.value not in CONTROL_CODES:
            raise CodecError(f"not a valid control code: 0x{self.value:02X}")

    @property
    def name(self) -> str:
        return f"{'K' if self.is_control else 'D'}{self.value & 0x1F}.{self.value >> 5}"

    def __str__(self):
        return self.name


def D(x: int, y: int) -> ByteSymbol:
    return ByteSymbol((y << 5) | x, False)


def K(x: int, y: int) -> ByteSymbol:
    return ByteSymbol((y << 5) | x, True)


K27_7 = K(27, 7)
K28_5 = K(28, 5)
K29_7 = K(29, 7)
D10_2 = D(10, 2)


def disparity(bits: int, nbits: int = 10) -> int:
    """Ones minus zeros over ``nbits``."""
    ones = bin(bits & ((1 << nbits) - 1)).count("1")
    return 2 * ones - nbits


def _col(rd: int) -> int:
    return 0 if rd < 0 else 1


def _encode_raw(value: int, is_control: bool, rd: int) -> tuple[int, int]:
    x = value & 0x1F
    y = value >> 5

    if is_control and x == 28:
        six = _K28_6B[_col(rd)]
    else:
        six = _TABLE_5B6B[x][_col(rd)]
    d6 = disparity(six, 6)
    if d6:
        rd = -rd

    if is_control:
        four = _TABLE_3B4B_K[y][_col(rd)]
    elif y == 7 and ((rd < 0 and x in (17, 18, 20)) or (rd > 0 and x in (11, 13, 14))):
        four = _D_X_A7[_col(rd)]
    else:
        four = _TABLE_3B4B_D[y][_col(rd)]
    if disparity(four, 4):
        rd = -rd

    return (six << 4) | four, rd


def encode(symbol: ByteSymbol, rd: int) -> tuple[int, int]:
    """Encode one symbol; returns ``(code_group, new_rd)``."""
    if rd not in (RD_NEG, RD_POS):
        raise CodecError(f"running disparity must be -1 or +1, got {rd}")
    return _ENCODE[(symbol.value, symbol.is_control, rd)]


def _build_tables():
    enc = {}
    dec = {}
    for is_control in (False, True):
        values = sorted(CONTROL_CODES) if is_control else range(256)
        for value in values:
            for rd in (RD_NEG, RD_POS):
                cg, rd_out = _encode_raw(value, is_control, rd)
                enc[(value, is_control, rd)] = (cg, rd_out)
                key = (cg, rd)
                # the tables are a bijection per disparity; a clash means a typo above
                assert key not in dec, (value, is_control, rd)
                dec[key] = (ByteSymbol(value, is_control), rd_out)
    return enc, dec


_ENCODE, _DECODE = _build_tables()
_KNOWN_GROUPS = frozenset(cg for cg, _ in _DECODE)


def decode(cg: int, rd: int) -> tuple[ByteSymbol, int]:
    """Decode one code group; raises :class:`DecodeError` on a line error."""
    try:
        return _DECODE[(cg, rd)]
    except KeyError:
        pass
    if cg in _KNOWN_GROUPS:
        raise DecodeError(cg, rd, "disparity violation")
    raise DecodeError(cg, rd, "not in code table")


def encode_word(symbols: Sequence[ByteSymbol], rd: int) -> tuple[int, int]:
    """Encode four symbols into a 40-bit word, lane 0 in the top 10 bits.

    Disparity is threaded through the lanes in transmission order.
    """
    if len(symbols) != 4:
        raise CodecError(f"a word carries 4 symbols, got {len(symbols)}")
    word = 0
    for sym in symbols:
        cg, rd = encode(sym, rd)
        word = (word << 10) | cg
    return word, rd


def split_word(word: int) -> list[int]:
    """The four 10-bit lanes of a 40-bit word, lane 0 first."""
    return [(word >> (10 * (3 - lane))) & 0x3FF for lane in range(4)]


def encode_stream(symbols: Sequence[ByteSymbol], rd: int = RD_NEG) -> tuple[list[int], int]:
    groups = []
    for sym in symbols:
        cg, rd = encode(sym, rd)
        groups.append(cg)
    return groups, rd


def groups_to_bits(groups: Sequence[int]) -> list[int]:
    """Serial bit order: each group MSB (bit ``a``) first."""
    return [(cg >> (9 - i)) & 1 for cg in groups for i in range(10)]
