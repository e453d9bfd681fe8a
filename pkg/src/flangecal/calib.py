"""
Online iterative flange calibration with a pool of four sample pairs.

Each new pair is tried in every pool slot; the best substitution is kept only
if it strictly lowers the cost of the verification error. A ``verifier`` is
any callable mapping a candidate camera-to-base transform to an
:class:`~flangecal.icp.IcpErrorMetric` (see ``SimulationVerifier`` and
``CloudVerifier``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

from .errors import CannotCompensate, DegenerateConfiguration, StreamExhausted
from .icp import CostKind, IcpErrorMetric, TranslationNorm, cost
from .rigid_fit import FitResult, SamplePair, fit_rigid
from .se3 import PoseError, RigidTransform, compose

POOL_SIZE = 4

Verifier = Callable[[RigidTransform], IcpErrorMetric]


@dataclass(frozen=True)
class CalibConfig:
    e_required: float = 0.05
    k_max: int = 100
    cost_kind: CostKind = TranslationNorm
    # provenance only: the loop is deterministic given the pair order
    rng_seed: int = 0
    mode: str = "best"
    with_scale: bool = False

    def __post_init__(self):
        if not self.e_required > 0:
            raise ValueError("e_required must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.mode not in ("best", "sequential"):
            raise ValueError("mode must be 'best' or 'sequential'")


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    accepted: bool
    cost: float
    pose_error: Optional[PoseError]
    slot: Optional[int] = None
    trial_costs: tuple = ()


@dataclass(frozen=True)
class CalibState:
    pool: tuple
    H_optimal: Optional[RigidTransform]
    e_optimal: IcpErrorMetric
    history: tuple = ()

    @property
    def cost(self) -> float:
        return self.history[-1].cost if self.history else math.inf


@dataclass(frozen=True)
class CalibOutcome:
    H_optimal: Optional[RigidTransform]
    H_compensated: Optional[RigidTransform]
    e_optimal: IcpErrorMetric
    iterations_used: int
    history: tuple
    pool: tuple = field(default=())

    @property
    def cost_history(self) -> list[float]:
        return [h.cost for h in self.history]


def evaluate_pool(pool: Sequence[SamplePair], verifier: Verifier, cfg: CalibConfig):
    """Fit the pool and score it; a degenerate fit scores +inf."""
    try:
        fit: FitResult = fit_rigid(pool, with_scale=cfg.with_scale)
    except DegenerateConfiguration as exc:
        return None, IcpErrorMetric.failure(str(exc)), math.inf
    metric = verifier(fit.transform)
    return fit.transform, metric, cost(metric, cfg.cost_kind)


def init(pairs4: Sequence[SamplePair], verifier: Verifier, cfg: CalibConfig = CalibConfig()) -> CalibState:
    """Fit and score the initial pool.

    Raises
    ------
    DegenerateConfiguration
        The four initial pairs are coplanar or fewer than four.
    """
    pool = tuple(pairs4)
    if len(pool) != POOL_SIZE:
        raise DegenerateConfiguration(f"initial pool needs {POOL_SIZE} pairs, got {len(pool)}")
    fit = fit_rigid(pool, with_scale=cfg.with_scale)
    metric = verifier(fit.transform)
    c = cost(metric, cfg.cost_kind)
    entry = HistoryEntry(0, True, c, metric.pose_error)
    return CalibState(pool, fit.transform, metric, (entry,))


def step(state: CalibState, new_pair: SamplePair, verifier: Verifier, cfg: CalibConfig = CalibConfig()) -> CalibState:
    it = len(state.history)
    current = state.cost
    if cfg.mode == "sequential":
        return _step_sequential(state, new_pair, verifier, cfg, it)

    trials = []
    for i in range(POOL_SIZE):
        pool = state.pool[:i] + (new_pair,) + state.pool[i + 1:]
        trials.append((pool,) + evaluate_pool(pool, verifier, cfg))
    costs = tuple(t[3] for t in trials)
    # lowest slot index wins ties; incumbent wins ties with the current cost
    slot = min(range(POOL_SIZE), key=lambda i: costs[i])
    if costs[slot] < current:
        pool, H, metric, c = trials[slot]
        entry = HistoryEntry(it, True, c, metric.pose_error, slot, costs)
        return CalibState(pool, H, metric, state.history + (entry,))
    entry = HistoryEntry(it, False, current, state.e_optimal.pose_error, None, costs)
    return replace(state, history=state.history + (entry,))


def _step_sequential(state, new_pair, verifier, cfg, it):
    # literal in-place replacement with undo, slot by slot
    pool, H, metric, c = state.pool, state.H_optimal, state.e_optimal, state.cost
    costs = []
    accepted_slot = None
    for i in range(POOL_SIZE):
        trial = pool[:i] + (new_pair,) + pool[i + 1:]
        tH, tm, tc = evaluate_pool(trial, verifier, cfg)
        costs.append(tc)
        if tc < c:
            pool, H, metric, c = trial, tH, tm, tc
            accepted_slot = i
    entry = HistoryEntry(it, accepted_slot is not None, c, metric.pose_error, accepted_slot, tuple(costs))
    return CalibState(pool, H, metric, state.history + (entry,))


def compensate(H_optimal: RigidTransform, e_optimal: IcpErrorMetric) -> RigidTransform:
    """Right-multiply the estimate by its measured error transform."""
    if e_optimal.failed or e_optimal.delta is None:
        raise CannotCompensate("error metric is not finite")
    return compose(H_optimal, e_optimal.delta)


def run(pair_stream: Iterable[SamplePair], verifier: Verifier, cfg: CalibConfig = CalibConfig()) -> CalibOutcome:
    """Initialize from the first four pairs and consume pairs until the cost
    reaches ``cfg.e_required`` or ``cfg.k_max`` new pairs were used.

    Raises
    ------
    StreamExhausted
        Fewer than four pairs in the stream.
    """
    it = iter(pair_stream)
    first = []
    for p in it:
        first.append(p)
        if len(first) == POOL_SIZE:
            break
    if len(first) < POOL_SIZE:
        raise StreamExhausted(f"need {POOL_SIZE} pairs to initialize, stream had {len(first)}")
    state = init(first, verifier, cfg)
    consumed = 0
    while state.cost > cfg.e_required and consumed < cfg.k_max:
        try:
            pair = next(it)
        except StopIteration:
            break
        state = step(state, pair, verifier, cfg)
        consumed += 1
    return finish(state, consumed)


def finish(state: CalibState, consumed: int) -> CalibOutcome:
    if state.e_optimal.failed:
        H_comp = state.H_optimal
    else:
        H_comp = compensate(state.H_optimal, state.e_optimal)
    return CalibOutcome(state.H_optimal, H_comp, state.e_optimal, consumed, state.history, state.pool)


def fit_all(pairs: Sequence[SamplePair], verifier: Verifier, with_scale: bool = False):
    """Baseline: single SVD fit over every pair, scored by the same verifier."""
    fit = fit_rigid(pairs, with_scale=with_scale)
    return fit, verifier(fit.transform)
