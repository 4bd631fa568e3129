"""Peer-to-peer market: random matching and bilateral price negotiation.

The market maker pairs producers and consumers uniformly at random, without
regard to location or quantity. A matched pair runs T negotiation steps; a
step succeeds when the producer's ask does not exceed the consumer's bid
(inclusive). On success the trade executes at the producer's ask, both sides
pay a fixed service fee; on failure both take a fixed penalty. Energy a
consumer fails to secure is drawn from the substation at the retail price.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class P2pConfig:
    c_service: float = 0.5      # cents/kWh, charged on success only
    c_lose: float = 1.0         # penalty on failed negotiation
    ub: float = 10.0            # utility fallback price in the reward rule
    T: int = 1                  # negotiation steps per round
    trade_quantity: float = 3.0  # kW, homogeneous trades
    retail_price: float = 12.0  # cents/kWh for deficiency from the grid

    def __post_init__(self):
        if not self.ub > self.c_service >= 0:
            raise ValueError("need ub > c_service >= 0")
        if self.c_lose < 0 or self.T < 1 or self.trade_quantity <= 0:
            raise ValueError("bad P2P config")


@dataclass
class MatchRound:
    pairs: list        # (producer_id, consumer_id)
    unmatched: list
    T: int


@dataclass
class NegotiationOutcome:
    success: bool
    b_p: float
    b_c: float
    trade_price: float = None   # defined iff success
    r_p: float = 0.0
    r_c: float = 0.0


def match(producers, consumers, rng, T=1):
    """Uniform random pairing of min(|P|, |C|) pairs, without replacement.

    `rng` is a seed or numpy Generator; identical seeds give identical
    pairings.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    producers, consumers = list(producers), list(consumers)
    k = min(len(producers), len(consumers))
    p_idx = rng.permutation(len(producers))[:k]
    c_idx = rng.permutation(len(consumers))[:k]
    pairs = [(producers[i], consumers[j]) for i, j in zip(p_idx, c_idx)]
    matched = {a for pair in pairs for a in pair}
    unmatched = [a for a in producers + consumers if a not in matched]
    return MatchRound(pairs=pairs, unmatched=unmatched, T=T)


def negotiate(producer_bid, consumer_bid, config):
    """One negotiation step. Success iff b_p <= b_c; trade at the producer's
    ask; the consumer's bid is only an acceptance threshold."""
    if producer_bid <= consumer_bid:
        return NegotiationOutcome(
            success=True, b_p=producer_bid, b_c=consumer_bid,
            trade_price=producer_bid,
            r_p=producer_bid - config.c_service,
            r_c=config.ub - producer_bid - config.c_service,
        )
    return NegotiationOutcome(
        success=False, b_p=producer_bid, b_c=consumer_bid,
        r_p=-config.c_lose, r_c=-config.c_lose,
    )


def settle_deficiency(delivered, demanded, retail_price):
    """Charge for energy not obtained peer-to-peer, drawn from the feeder."""
    if delivered > demanded + 1e-12:
        raise ValueError("delivered exceeds demanded")
    return (demanded - delivered) * retail_price


@dataclass
class NegotiationLog:
    """JSON-lines log of per-step negotiation outcomes with a moving-average
    export for success/reward trajectories."""

    records: list = field(default_factory=list)

    def add(self, round_no, step, producer, consumer, outcome):
        self.records.append({
            "round": round_no, "step": step,
            "producer": producer, "consumer": consumer,
            "b_p": outcome.b_p, "b_c": outcome.b_c,
            "success": outcome.success,
            "r_p": outcome.r_p, "r_c": outcome.r_c,
        })

    def to_jsonl(self):
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records)

    def moving_average(self, key, window=200):
        x = np.array([float(r[key]) for r in self.records])
        if x.size == 0:
            return x
        kern = np.ones(min(window, x.size)) / min(window, x.size)
        return np.convolve(x, kern, mode="valid")
