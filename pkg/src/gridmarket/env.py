"""Episode driver: two-timescale loop tying grid, market and agents.

The environment is the hub: every attached object holds a reference to it
and reaches the others through it. One episode runs an outer loop of grid
steps; inside each, the market is reset and iterated for a number of market
steps (agents submit market actions, the market dispatches), then the market
clears, agents submit grid actions and the grid state advances. Market
mechanism state is reset every grid step; agent memory (e.g. bandit
statistics) persists across the episode.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import curves as cv
from . import p2p as p2p_mod
from .agents import CONSUMER, PRODUCER, CurveBidder, UcbNegotiator
from .clearing import MarketInput, SettlementInfeasible, clear
from .dlmp import solve_dlmp
from .p2p import negotiate, settle_deficiency

PHASES = ("post_market_step", "post_clear", "post_grid_step")


class EnvError(Exception):
    pass


@dataclass
class EpisodeLog:
    records: list = field(default_factory=list)
    sink_path: str = None

    def add(self, record):
        self.records.append(record)
        if self.sink_path:
            # incremental persistence: a crashed run keeps its prefix
            with open(self.sink_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def to_jsonl(self):
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records)

    def by_phase(self, phase):
        return [r for r in self.records if r["phase"] == phase]


class MarketBase:
    """Market mechanism interface: reset once per episode, reset_round once
    per grid step, step once per market step, finalize at clearing."""

    env = None

    def reset(self):
        pass

    def reset_round(self, t_grid):
        pass

    def step(self, t_market):
        raise NotImplementedError

    def finalize(self):
        """Called when the market clears; returns the clearing result."""
        return None

    def extra_grid_actions(self):
        """Grid actions contributed by the market itself (not by agents)."""
        return {}

    def default_market_steps(self):
        return 1


class ClearingMarket(MarketBase):
    """Use Case 1 mechanism: affine-curve surplus clearing each market step;
    the last step's dispatch binds."""

    def __init__(self, network, segments=100):
        self.network = network
        self.segments = segments
        self.dispatch = None

    def reset(self):
        self.dispatch = None

    def reset_round(self, t_grid):
        self.dispatch = None

    def step(self, t_market):
        bids, offers = [], []
        for a in self.env.agents:
            curve = a.market_action
            if not isinstance(curve, cv.Curve):
                continue
            if curve.side == cv.DEMAND:
                bids.append((a.id, a.bus, curve))
            else:
                offers.append((a.id, a.bus, curve))
        if not bids or not offers:
            self.dispatch = None
            return None
        self.dispatch = clear(
            MarketInput(bids=bids, offers=offers, network=self.network),
            segments=self.segments)
        return self.dispatch

    def finalize(self):
        if self.dispatch is None:
            return None
        for a in self.env.agents:
            if a.id not in self.dispatch.quantities:
                continue
            q = self.dispatch.quantities[a.id]
            p = self.dispatch.prices.get(a.id, 0.0)
            curve = getattr(a, "curve", None)
            if curve is None:
                continue
            # truthful private valuation: the submitted curve's integral
            if curve.side == cv.DEMAND:
                r = cv.integral(curve, q) - p * q
            else:
                r = p * q - cv.integral(curve, q)
            a.observe_reward(r)
        return self.dispatch


@dataclass
class P2pRoundResult:
    outcomes: dict           # (producer, consumer) -> NegotiationOutcome
    grid_kw: dict            # agent -> signed kW for the grid step
    deficiency: dict         # consumer -> retail charge
    unmatched: list


class P2pMarket(MarketBase):
    """Use Case 2 mechanism: random matching then T bandit negotiation steps;
    the final step's outcome binds physically."""

    def __init__(self, config):
        self.config = config
        self.round = None
        self.outcomes = {}
        self.log = p2p_mod.NegotiationLog()
        self.result = None
        self._round_no = -1

    def reset(self):
        self.round = None
        self.outcomes = {}
        self.log = p2p_mod.NegotiationLog()
        self.result = None
        self._round_no = -1

    def _split_roles(self, t_grid):
        producers, consumers = [], []
        for a in self.env.agents:
            if not isinstance(a, UcbNegotiator):
                continue
            role = a.current_role(t_grid)
            (producers if role == PRODUCER else consumers).append(a.id)
        return producers, consumers

    def reset_round(self, t_grid):
        self._round_no += 1
        producers, consumers = self._split_roles(t_grid)
        self.round = p2p_mod.match(producers, consumers, self.env.rng,
                                   T=self.config.T)
        self.outcomes = {}
        self.result = None

    def step(self, t_market):
        agents = self.env.agent_map
        for producer, consumer in self.round.pairs:
            out = negotiate(agents[producer].market_action,
                            agents[consumer].market_action, self.config)
            self.outcomes[(producer, consumer)] = out
            agents[producer].observe_reward(out.r_p)
            agents[consumer].observe_reward(out.r_c)
            self.log.add(self._round_no, t_market, producer, consumer, out)
        return self.outcomes

    def finalize(self):
        q = self.config.trade_quantity
        agents = self.env.agent_map
        grid_kw, deficiency = {}, {}
        for (producer, consumer), out in self.outcomes.items():
            delivered = q if out.success else 0.0
            grid_kw[producer] = -delivered
            grid_kw[consumer] = q    # deficiency is drawn from the feeder
            charge = settle_deficiency(delivered, q, self.config.retail_price)
            if charge:
                deficiency[consumer] = charge
        for aid in self.round.unmatched:
            if agents[aid].current_role(self._round_no) == CONSUMER:
                grid_kw[aid] = q
                deficiency[aid] = settle_deficiency(
                    0.0, q, self.config.retail_price)
        self.result = P2pRoundResult(outcomes=dict(self.outcomes),
                                     grid_kw=grid_kw, deficiency=deficiency,
                                     unmatched=list(self.round.unmatched))
        return self.result

    def default_market_steps(self):
        return self.config.T


class DlmpMarket(MarketBase):
    """Use Case 3 mechanism: single-shot SCOPF solve; DLMP-based rewards."""

    def __init__(self, scopf_input):
        self.scopf_input = scopf_input
        self.result = None

    def reset(self):
        self.result = None

    def reset_round(self, t_grid):
        self.result = None

    def step(self, t_market):
        self.result = solve_dlmp(self.scopf_input)
        return self.result

    def finalize(self):
        return self.result

    def extra_grid_actions(self):
        if self.result is None:
            return {}
        actions = {}
        root = self.scopf_input.network.root
        for bus, (p_g, p_d) in self.result.dispatch.items():
            if bus == root:
                continue
            net_kw = p_d - p_g
            if net_kw != 0.0:
                actions[f"dso@{bus}"] = (bus, net_kw)
        return actions


class Environment:
    """Hub object: every grid/market/agent reaches the others through it."""

    def __init__(self, grid, market, agents, seed=0):
        self.grid = grid
        self.market = market
        self.agents = list(agents)
        self.agent_map = {a.id: a for a in self.agents}
        if len(self.agent_map) != len(self.agents):
            raise EnvError("duplicate agent ids")
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.phase = "idle"
        self.clock = (-1, -1)       # (grid_step, market_step)
        self.callbacks = {p: [] for p in PHASES}
        self.log = EpisodeLog()
        market.env = self
        for a in self.agents:
            a.env = self

    def register_callback(self, phase, sink):
        if phase not in PHASES:
            raise EnvError(f"unknown phase {phase!r}; one of {PHASES}")
        self.callbacks[phase].append(sink)

    def _fire(self, phase):
        for sink in self.callbacks[phase]:
            sink(self)

    def reset(self, log_path=None):
        self.rng = np.random.default_rng(self.seed)
        self.grid.reset()
        self.market.reset()
        for a in self.agents:
            a.reset()
        self.phase = "idle"
        self.clock = (-1, -1)
        self.log = EpisodeLog(sink_path=log_path)
        if log_path:
            open(log_path, "w", encoding="utf-8").close()
        return self

    def state_fingerprint(self):
        g = self.grid.state
        return json.dumps({
            "t": g.t,
            "injections": {str(k): round(v, 12) for k, v in g.injections.items()},
            "feasible": g.feasible,
            "clock": list(self.clock),
        }, sort_keys=True)

    def run_episode(self, grid_steps, market_steps_per_grid=None):
        """Algorithm: outer grid loop, nested market loop, clear, grid step."""
        steps = (market_steps_per_grid if market_steps_per_grid is not None
                 else self.market.default_market_steps())
        if grid_steps < 0 or steps < 1:
            raise EnvError("need grid_steps >= 0 and market steps >= 1")
        for t_grid in range(grid_steps):
            self.phase = "market"
            self.market.reset_round(t_grid)
            for t_market in range(steps):
                self.clock = (t_grid, t_market)
                for a in self.agents:
                    a.set_market_actions()
                result = self.market.step(t_market)
                self.log.add(self._market_record(t_grid, t_market, result))
                self._fire("post_market_step")
            cleared = self.market.finalize()
            self.log.add(self._clear_record(t_grid, cleared))
            self._fire("post_clear")

            self.phase = "grid"
            actions = dict(self.market.extra_grid_actions())
            for a in self.agents:
                a.grid_action = None
                a.set_grid_actions(cleared)
                if a.grid_action is not None:
                    actions[a.id] = a.grid_action
            state = self.grid.step(actions)
            self.log.add({
                "phase": "grid_step", "t_grid": t_grid,
                "feasible": state.feasible,
                "flows": {str(k): round(v, 9) for k, v in sorted(
                    state.flows.items(), key=lambda kv: str(kv[0]))},
            })
            self._fire("post_grid_step")
            self.phase = "idle"
        return self.log

    def _market_record(self, t_grid, t_market, result):
        rec = {"phase": "market_step", "t_grid": t_grid, "t_market": t_market}
        if isinstance(result, dict):     # P2P outcomes
            rec["negotiations"] = [
                {"producer": p, "consumer": c, "b_p": o.b_p, "b_c": o.b_c,
                 "success": o.success, "r_p": round(o.r_p, 9),
                 "r_c": round(o.r_c, 9)}
                for (p, c), o in sorted(result.items(), key=lambda kv: str(kv[0]))]
        elif result is not None and hasattr(result, "to_records"):
            rec["dispatch"] = result.to_records()
        elif result is not None and hasattr(result, "dlmp"):
            rec["dlmp"] = {str(b): round(v, 9) for b, v in result.dlmp.items()}
        return rec

    def _clear_record(self, t_grid, cleared):
        rec = {"phase": "clear", "t_grid": t_grid}
        if cleared is None:
            rec["cleared"] = False
        elif hasattr(cleared, "to_records"):
            rec["cleared"] = True
            rec["dispatch"] = cleared.to_records()
        elif hasattr(cleared, "dlmp"):
            rec["cleared"] = True
            rec["dlmp"] = {str(b): round(v, 9) for b, v in cleared.dlmp.items()}
            rec["objective"] = round(cleared.objective, 9)
        elif hasattr(cleared, "deficiency"):
            rec["cleared"] = True
            rec["deficiency"] = {str(k): round(v, 9) for k, v in sorted(
                cleared.deficiency.items(), key=lambda kv: str(kv[0]))}
            rec["successes"] = sum(
                1 for o in cleared.outcomes.values() if o.success)
        return rec

    def summary_rows(self):
        """Per-grid-step summary rows for the episode CSV."""
        rows = []
        for rec in self.log.by_phase("grid_step"):
            rows.append({
                "t_grid": rec["t_grid"],
                "feasible": rec["feasible"],
                "max_abs_flow": max((abs(v) for v in rec["flows"].values()),
                                    default=0.0),
            })
        return rows
