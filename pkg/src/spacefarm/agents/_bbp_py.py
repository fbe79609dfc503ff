"""Hex digits of pi at arbitrary positions, pure-Python kernel.

Digit extraction from the series
pi = sum_k 16^-k (4/(8k+1) - 2/(8k+4) - 1/(8k+5) - 1/(8k+6)):
to read digits after position d, each partial sum S(j, d) = sum_k 16^(d-k)/(8k+j)
is evaluated mod 1 in 128-bit fixed point. The head terms (k <= d) reduce
16^(d-k) mod (8k+j) by modular exponentiation before the division, so every
intermediate stays bounded; the tail terms shrink by 16x each and stop
mattering after ~32 of them. Each evaluation yields 16 safe hex digits:
the accumulated truncation error is below (d + 33) / 2^128, far under the
2^-64 slack left after the top 16 nibbles.
"""

from __future__ import annotations

BACKEND = "pure"

_MASK = (1 << 128) - 1
_HEX = "0123456789ABCDEF"
_DIGITS_PER_EVAL = 16


def _series(j: int, d: int) -> int:
    """Fractional part of sum_k 16^(d-k)/(8k+j), as a 128-bit fixed-point value."""
    acc = 0
    for k in range(d + 1):
        m = 8 * k + j
        acc = (acc + ((pow(16, d - k, m) << 128) // m)) & _MASK
    t = 1
    while True:
        m = 8 * (d + t) + j
        term = (_MASK // m) >> (4 * t)
        if term == 0:
            break
        acc = (acc + term) & _MASK
        t += 1
    return acc


def hex_digits(start: int, count: int) -> str:
    """Hex digits of pi's fractional part at positions start..start+count-1.

    Position 1 is the first digit after the point: hex_digits(1, 3) == "243".
    """
    if start < 1 or count < 1:
        raise ValueError("start and count must be positive")
    out = []
    pos = start
    remaining = count
    while remaining > 0:
        d = pos - 1
        x = (
            4 * _series(1, d) - 2 * _series(4, d) - _series(5, d) - _series(6, d)
        ) & _MASK
        n = min(remaining, _DIGITS_PER_EVAL)
        for _ in range(n):
            out.append(_HEX[x >> 124])
            x = (x << 4) & _MASK
        pos += n
        remaining -= n
    return "".join(out)
