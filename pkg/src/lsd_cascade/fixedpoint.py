"""18-decimal fixed-point helpers.

Token amounts are carried as integer wei (``10**18`` per token) and travel
through files as plain decimal strings. Conversion is exact in both
directions; anything finer than one wei is rejected rather than rounded.
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation, localcontext

WAD = 10**18
DECIMALS = 18


def to_wei(value: str | int | Decimal) -> int:
    """Parse a token amount into integer wei.

    Floats are refused on purpose: a binary float cannot carry a decimal
    amount exactly.
    """
    if isinstance(value, bool) or isinstance(value, float):
        raise TypeError(f"amounts must be decimal strings, ints or Decimals, got {type(value).__name__}")
    if isinstance(value, int):
        return value * WAD
    try:
        dec = Decimal(value)
    except InvalidOperation as exc:
        raise ValueError(f"not a decimal amount: {value!r}") from exc
    if not dec.is_finite():
        raise ValueError(f"amount must be finite: {value!r}")
    with localcontext() as ctx:
        ctx.prec = 80
        scaled = dec.scaleb(DECIMALS)
    if scaled != scaled.to_integral_value():
        raise ValueError(f"amount has more than {DECIMALS} decimals: {value!r}")
    return int(scaled)


def format_wei(wei: int) -> str:
    """Render wei as a decimal string with exactly 18 fractional digits."""
    sign = "-" if wei < 0 else ""
    whole, frac = divmod(abs(wei), WAD)
    return f"{sign}{whole}.{frac:018d}"


def wei_to_decimal(wei: int) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(wei).scaleb(-DECIMALS)


def wei_to_float(wei: int) -> float:
    # True division of ints is correctly rounded, unlike wei * 1e-18.
    return wei / WAD


def float_to_wei(x: float) -> int:
    """Floor a non-negative float token amount to wei (report/seed use only)."""
    if x < 0:
        raise ValueError("negative amount")
    with localcontext() as ctx:
        ctx.prec = 80
        return int(Decimal(x).scaleb(DECIMALS))
