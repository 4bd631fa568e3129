"""Surplus-maximizing market clearing with radial line limits.

Two stages. Stage 1 discretizes every curve into equal-width quantity
blocks priced at the block-midpoint curve value and solves a welfare LP:
maximize (demand value taken - supply cost incurred) subject to
supply = demand balance, per-block capacities and PTDF line limits.
Block prices are monotone along each curve, so blocks fill in curve order.
Stage 2 settles per-agent prices: everyone starts on their own curve, then a
single multiplier scales the demand side so total payments equal total
revenue; any consumer pushed above their curve is capped and the residual is
reallocated proportionally to the remaining headroom of the others.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import curves as cv
from .network import line_flows, ptdf
from .optim import LpProblem, OPTIMAL, solve_lp


class ClearingError(Exception):
    pass


class InfeasibleMarket(ClearingError):
    pass


class SettlementInfeasible(ClearingError):
    def __init__(self, message, violating_agents=()):
        super().__init__(message)
        self.violating_agents = list(violating_agents)


@dataclass
class MarketInput:
    bids: list        # (agent_id, bus, demand Curve)
    offers: list      # (agent_id, bus, supply Curve)
    network: object

    def __post_init__(self):
        agents = [a for a, _, _ in self.bids] + [a for a, _, _ in self.offers]
        if len(set(agents)) != len(agents):
            raise ClearingError("each agent may appear once")
        buses = set(self.network.buses)
        for a, bus, _ in self.bids + self.offers:
            if bus not in buses:
                raise ClearingError(f"agent {a}: unknown bus {bus}")
        for _, _, c in self.bids:
            if c.side != cv.DEMAND:
                raise ClearingError("bids must carry demand curves")
        for _, _, c in self.offers:
            if c.side != cv.SUPPLY:
                raise ClearingError("offers must carry supply curves")


@dataclass
class Dispatch:
    quantities: dict          # agent -> kW
    prices: dict              # agent -> cents/kWh (trading agents only)
    sides: dict               # agent -> "supply" | "demand"
    buses: dict               # agent -> bus
    line_flows: dict          # line_id -> kW
    total_surplus: float
    traded: bool = True       # False: no nonzero trade satisfies the limits
    binding_lines: list = field(default_factory=list)

    def to_records(self):
        """JSON-lines records: one per agent plus a summary."""
        recs = []
        for a in sorted(self.quantities, key=str):
            recs.append({
                "agent": a, "bus": self.buses[a], "side": self.sides[a],
                "q_kw": round(self.quantities[a], 9),
                "price_c_per_kwh": round(self.prices.get(a, 0.0), 9),
            })
        recs.append({
            "summary": True,
            "total_surplus": round(self.total_surplus, 9),
            "traded": self.traded,
            "binding_lines": sorted(self.binding_lines, key=str),
        })
        return recs

    def to_jsonl(self):
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records())


def parse_bids(text):
    """Parse bid/offer records: `bid <agent> <bus> <S|D> <p_max> <p_min>
    <q_max> <q_min>`; `#` starts a comment. Returns (bids, offers)."""
    from .network import CaseFileError, _bus_id

    bids, offers = [], []
    for ln, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tok = stripped.split()
        if tok[0] != "bid" or len(tok) != 8 or tok[3] not in ("S", "D"):
            raise CaseFileError(
                f"line {ln}: expected `bid <agent> <bus> <S|D> "
                "<p_max> <p_min> <q_max> <q_min>`")
        try:
            p_max, p_min, q_max, q_min = map(float, tok[4:8])
        except ValueError:
            raise CaseFileError(f"line {ln}: bad numeric field") from None
        side = cv.SUPPLY if tok[3] == "S" else cv.DEMAND
        rec = (tok[1], _bus_id(tok[2]),
               cv.Curve(side, p_max=p_max, p_min=p_min,
                        q_max=q_max, q_min=q_min))
        (offers if side == cv.SUPPLY else bids).append(rec)
    return bids, offers


def _blocks(curve, segments):
    """(width, price) blocks covering [0, q_max] of the extended curve.

    One block for the endpoint-priced gap [0, q_min], then `segments` equal
    blocks over [q_min, q_max] priced at segment midpoints (exact for affine
    curves).
    """
    widths, prices = [], []
    if curve.q_min > 0:
        widths.append(curve.q_min)
        prices.append(curve.endpoint_price())
    w = (curve.q_max - curve.q_min) / segments
    for k in range(segments):
        mid = curve.q_min + (k + 0.5) * w
        widths.append(w)
        prices.append(cv.price_at(curve, mid))
    return np.array(widths), np.array(prices)


def clear(market_input, segments=100):
    """Stage-1 welfare LP + stage-2 price settlement. Returns a Dispatch."""
    net = market_input.network
    bids, offers = market_input.bids, market_input.offers
    H = ptdf(net)
    col = {b: i for i, b in enumerate(H.bus_order)}
    limits = net.line_limits()

    # Assemble block variables: demand blocks first, then supply blocks.
    cols_c, cols_w, owner, owner_bus, owner_sign = [], [], [], [], []
    spans = {}   # agent -> (start, stop) in the variable vector
    for agent, bus, curve in bids:
        w, p = _blocks(curve, segments)
        spans[agent] = (len(cols_w), len(cols_w) + len(w))
        cols_w.extend(w)
        cols_c.extend(-p)            # taken demand value reduces cost
        owner.extend([agent] * len(w))
        owner_bus.extend([bus] * len(w))
        owner_sign.extend([1.0] * len(w))
    for agent, bus, curve in offers:
        w, p = _blocks(curve, segments)
        spans[agent] = (len(cols_w), len(cols_w) + len(w))
        cols_w.extend(w)
        cols_c.extend(p)
        owner.extend([agent] * len(w))
        owner_bus.extend([bus] * len(w))
        owner_sign.extend([-1.0] * len(w))

    n = len(cols_w)
    c = np.array(cols_c)
    sign = np.array(owner_sign)     # +1 consumption, -1 generation
    bounds = [(0.0, wk) for wk in cols_w]

    # Balance: total demand = total supply.
    A_eq = sign.reshape(1, -1)
    b_eq = np.array([0.0])

    # Line limits via the path-indicator matrix (finite limits only).
    inj_cols = np.zeros((len(H.bus_order), n))
    for j in range(n):
        if owner_bus[j] in col:
            inj_cols[col[owner_bus[j]], j] = sign[j]
    rows, rhs = [], []
    for r, lid in enumerate(H.line_order):
        if not np.isfinite(limits[lid]):
            continue
        hrow = H.entries[r] @ inj_cols
        rows.append(hrow)
        rhs.append(limits[lid])
        rows.append(-hrow)
        rhs.append(limits[lid])
    A_ub = np.array(rows) if rows else None
    b_ub = np.array(rhs) if rows else None

    sol = solve_lp(LpProblem(c=c, A_eq=A_eq, b_eq=b_eq,
                             A_ub=A_ub, b_ub=b_ub, bounds=bounds))
    if sol.status != OPTIMAL:
        raise InfeasibleMarket(f"stage-1 LP returned {sol.status}")

    quantities = {}
    for agent, (lo, hi) in spans.items():
        q = float(np.sum(sol.x[lo:hi]))
        quantities[agent] = 0.0 if q < 1e-9 else q

    sides = {a: cv.DEMAND for a, _, _ in bids}
    sides.update({a: cv.SUPPLY for a, _, _ in offers})
    agent_bus = {a: b for a, b, _ in bids + offers}

    injections = {}
    for a, q in quantities.items():
        s = 1.0 if sides[a] == cv.DEMAND else -1.0
        injections[agent_bus[a]] = injections.get(agent_bus[a], 0.0) + s * q
    flows = line_flows(net, injections)
    binding = [lid for lid, f in flows.items()
               if np.isfinite(limits[lid]) and abs(f) >= limits[lid] - 1e-7]

    total_surplus = (
        sum(cv.integral(c_, quantities[a]) for a, _, c_ in bids)
        - sum(cv.integral(c_, quantities[a]) for a, _, c_ in offers))

    traded = any(q > 1e-9 for q in quantities.values())
    prices = settle_prices(quantities, market_input) if traded else {}
    return Dispatch(quantities=quantities, prices=prices, sides=sides,
                    buses=agent_bus, line_flows=flows,
                    total_surplus=total_surplus, traded=traded,
                    binding_lines=binding)


def budget_scale(supply_revenue, demand_payment):
    """Multiplier applied to all demand-side prices to balance the budget."""
    if demand_payment <= 0:
        return 1.0
    return supply_revenue / demand_payment


def balance_demand_prices(provisional, caps, quantities, target, tol=1e-9):
    """Scale provisional demand prices so payments hit `target`, never
    exceeding per-agent caps (the own-curve prices).

    Agents pushed over their cap are pinned there and the shortfall is
    redistributed proportionally to the remaining headroom of the others.
    Returns the price vector; raises SettlementInfeasible when the caps
    cannot absorb the target.
    """
    agents = list(provisional)
    prices = dict(provisional)
    payment = sum(prices[a] * quantities[a] for a in agents)
    if payment <= tol:
        if target > tol:
            raise SettlementInfeasible("no demand payment to scale", agents)
        return prices
    lam = budget_scale(target, payment)
    prices = {a: lam * prices[a] for a in agents}
    for _ in range(len(agents) + 1):
        over = [a for a in agents if prices[a] > caps[a] + tol]
        if not over:
            return prices
        residual = sum((prices[a] - caps[a]) * quantities[a] for a in over)
        for a in over:
            prices[a] = caps[a]
        headroom = {a: (caps[a] - prices[a]) * quantities[a] for a in agents}
        free = sum(headroom.values())
        if free < residual - tol:
            raise SettlementInfeasible(
                "caps cannot absorb the balanced payment",
                [a for a in agents if headroom[a] <= tol])
        if free > 0:
            for a in agents:
                if quantities[a] > 0:
                    prices[a] += residual * (headroom[a] / free) / quantities[a]
    raise SettlementInfeasible("price redistribution did not converge", agents)


def settle_prices(quantities, market_input, tol=1e-9):
    """Per-agent settlement prices for fixed stage-1 quantities.

    Suppliers are paid their own curve price. Consumers start at their own
    curve price and a single budget-balancing multiplier scales the demand
    side so that total payment equals total revenue, with cap handling as in
    balance_demand_prices. Each consumer's cap is its average value
    integral(q)/q, so its surplus can never go negative.
    """
    supply_prices, revenue = {}, 0.0
    for agent, _, curve in market_input.offers:
        q = quantities.get(agent, 0.0)
        if q <= tol:
            continue
        p = cv.price_at_extended(curve, q)
        supply_prices[agent] = p
        revenue += p * q

    provisional, caps, qd = {}, {}, {}
    for agent, _, curve in market_input.bids:
        q = quantities.get(agent, 0.0)
        if q <= tol:
            continue
        p = cv.price_at_extended(curve, q)
        provisional[agent] = p
        caps[agent] = cv.integral(curve, q) / q
        qd[agent] = q

    demand_prices = balance_demand_prices(provisional, caps, qd, revenue, tol)
    return {**supply_prices, **demand_prices}
