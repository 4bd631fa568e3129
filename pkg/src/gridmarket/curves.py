"""Affine supply/demand curves.

A curve is the quadruple (p_max, p_min, q_max, q_min): supply price rises
from p_min at q_min to p_max at q_max, demand price falls from p_max at
q_min to p_min at q_max. Quantities below q_min are admissible for dispatch
(down to zero trade) and are valued at the q_min endpoint price.
"""

from dataclasses import dataclass

SUPPLY = "supply"
DEMAND = "demand"


class CurveError(Exception):
    pass


class QuantityOutOfRange(CurveError):
    pass


class NoIntersection(CurveError):
    pass


@dataclass(frozen=True)
class Curve:
    side: str        # SUPPLY or DEMAND
    p_max: float     # cents/kWh
    p_min: float
    q_max: float     # kW
    q_min: float

    def __post_init__(self):
        if self.side not in (SUPPLY, DEMAND):
            raise CurveError(f"side must be {SUPPLY!r} or {DEMAND!r}")
        if not self.p_max >= self.p_min:
            raise CurveError(f"p_max {self.p_max} < p_min {self.p_min}")
        if not self.q_max > self.q_min:
            raise CurveError(f"q_max {self.q_max} <= q_min {self.q_min}")
        if self.q_min < 0:
            raise CurveError("q_min must be >= 0")

    @property
    def slope(self):
        s = (self.p_max - self.p_min) / (self.q_max - self.q_min)
        return s if self.side == SUPPLY else -s

    def endpoint_price(self):
        """Price at q_min: p_min for supply, p_max for demand."""
        return self.p_min if self.side == SUPPLY else self.p_max


def price_at(curve, q):
    """Curve price at quantity q, q_min <= q <= q_max."""
    if q < curve.q_min - 1e-12 or q > curve.q_max + 1e-12:
        raise QuantityOutOfRange(
            f"q={q} outside [{curve.q_min}, {curve.q_max}]")
    q = min(max(q, curve.q_min), curve.q_max)
    return curve.endpoint_price() + curve.slope * (q - curve.q_min)


def price_at_extended(curve, q):
    """price_at extended to [0, q_max]: the gap [0, q_min) takes the
    q_min endpoint price."""
    if q < curve.q_min:
        if q < -1e-12:
            raise QuantityOutOfRange(f"q={q} < 0")
        return curve.endpoint_price()
    return price_at(curve, q)


def integral(curve, q):
    """Closed-form integral of the extended curve from 0 to q."""
    if q < -1e-12 or q > curve.q_max + 1e-12:
        raise QuantityOutOfRange(f"q={q} outside [0, {curve.q_max}]")
    q = min(max(q, 0.0), curve.q_max)
    p0 = curve.endpoint_price()
    if q <= curve.q_min:
        return p0 * q
    dq = q - curve.q_min
    return p0 * curve.q_min + p0 * dq + 0.5 * curve.slope * dq * dq


def surplus(curve, q, p):
    """Surplus at dispatch (q, p): value minus payment for demand, revenue
    minus cost for supply."""
    if curve.side == DEMAND:
        return integral(curve, q) - p * q
    return p * q - integral(curve, q)


def quantity_at_price(curve, p):
    """Quantity the curve trades at price p over the admissible set
    {0} u [q_min, q_max].

    Outside the curve's price range the unfavourable side trades nothing:
    a supplier offers 0 below p_min, a consumer asks 0 above p_max. Flat
    curves (p_max == p_min) are step functions at the flat level.
    """
    if curve.side == SUPPLY:
        if p < curve.p_min:
            return 0.0
        if curve.p_max == curve.p_min or p >= curve.p_max:
            return curve.q_max
    else:
        if p > curve.p_max:
            return 0.0
        if curve.p_max == curve.p_min or p <= curve.p_min:
            return curve.q_max
    q = curve.q_min + (p - curve.endpoint_price()) / curve.slope
    return min(max(q, curve.q_min), curve.q_max)


def aggregate_intersection(supplies, demands, tol=1e-10, iters=200):
    """Price/quantity where horizontally-summed supply meets summed demand.

    Bisection on price over the union of curve price ranges; the excess-supply
    function is non-decreasing in price. Raises NoIntersection when the
    aggregates never cross within range.
    """
    if not supplies or not demands:
        raise NoIntersection("need at least one supply and one demand curve")

    def excess(p):
        qs = sum(quantity_at_price(c, p) for c in supplies)
        qd = sum(quantity_at_price(c, p) for c in demands)
        return qs - qd

    lo = min(c.p_min for c in supplies + demands)
    hi = max(c.p_max for c in supplies + demands)
    e_lo, e_hi = excess(lo), excess(hi)
    if e_lo > tol or e_hi < -tol:
        raise NoIntersection(
            f"aggregate curves do not cross in price range [{lo}, {hi}]")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    p_star = 0.5 * (lo + hi)
    # Evaluate supply on the high side and demand on the low side of the
    # bracket so step discontinuities (flat curves) land on the traded branch.
    q_star = min(sum(quantity_at_price(c, hi) for c in supplies),
                 sum(quantity_at_price(c, lo) for c in demands))
    if q_star <= tol:
        raise NoIntersection("aggregate curves only meet at zero trade")
    return p_star, q_star
