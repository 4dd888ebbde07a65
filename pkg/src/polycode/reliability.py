"""MTTDL estimation: an exact absorbing Markov chain per scheme plus an
event-driven Monte Carlo simulator whose loss condition is the exact
decodability oracle.

Chain state spaces
------------------
Replication and polygon codes lose data at the first failure beyond their
tolerance, so the chain over the failed-node count is exact.  RAID+m and the
heptagon-local code survive many larger patterns; for those the chain tracks
the failure profile that recoverability actually depends on:

* RAID+m: (pairs with one node down, pairs fully down); fatal iff two blocks
  are fully erased (one XOR equation cannot restore both).
* heptagon-local: (failures in each heptagon, global node down); the
  exhaustive recoverability scan confirms this signature determines
  decodability for every one of the 2^15 patterns.

With parallel repair these lumpings are exact.  With serial (one-at-a-time,
oldest-first) repair the profile chains approximate the repair-target choice
as uniform over failed nodes; the count chains remain exact.  Published
absolute MTTDL figures for these schemes depend on rate constants that are
not public, so this module is for orderings and cross-checks, not for
reproducing tabulated values; both caveats are carried in
``MarkovChain.assumptions``.

Monte Carlo trials are independent and derive their RNG from
``(seed, trial index)``, so partitioning trials across workers changes
nothing about the merged estimate.
"""

from __future__ import annotations

import math
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .codes import (
    HeptagonLocal,
    Polygon,
    RaidMirror,
    Replication,
    Scheme,
    fatal_pattern_count,
    is_recoverable,
    is_recoverable_mask,
    tolerance,
)

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class FailureModel:
    fail_rate: float  # per-node failures per hour
    repair_rate: float  # per-failed-node repairs per hour
    repair_mode: str = "parallel"  # "parallel" | "serial"

    def __post_init__(self):
        if self.fail_rate <= 0 or self.repair_rate <= 0:
            raise ValueError("rates must be positive")
        if self.repair_mode not in ("parallel", "serial"):
            raise ValueError(f"unknown repair mode: {self.repair_mode}")

    @classmethod
    def from_mttf_mttr(
        cls, mttf_hours: float, mttr_hours: float, repair_mode: str = "parallel"
    ) -> "FailureModel":
        return cls(1.0 / mttf_hours, 1.0 / mttr_hours, repair_mode)


# MTTF 4 years, MTTR 1 day, parallel repair: a defensible default for
# ordering experiments.
DEFAULT_MODEL = FailureModel.from_mttf_mttr(4 * HOURS_PER_YEAR, 24.0)

# fast rates so Monte Carlo absorbs quickly; used to cross-check the chain
STRESS_MODEL = FailureModel.from_mttf_mttr(100.0, 10.0)


def fatal_fraction(scheme: Scheme, failures: int) -> float:
    """Fraction of *failures*-node patterns that lose data, exhaustively."""
    fatal, total = fatal_pattern_count(scheme, failures)
    return fatal / total


# ---------------------------------------------------------------------------
# Absorbing chain

LOSS = None  # transition target marking the absorbing data-loss state


@dataclass(frozen=True)
class MarkovChain:
    """Absorbing chain over a scheme's survivable failure profiles.

    ``states[0]`` is the all-up state; ``transitions[i]`` lists
    ``(target state index or LOSS, rate)`` with rates in 1/hours.
    """

    scheme_name: str
    node_count: int
    tolerance: int
    fail_rate: float
    repair_rate: float
    repair_mode: str
    states: tuple[tuple, ...]
    transitions: tuple[tuple[tuple[int | None, Fraction], ...], ...]
    assumptions: tuple[str, ...]

    def expected_hours_to_loss(self) -> float:
        """Expected absorption time from the all-up state, solved exactly."""
        m = len(self.states)
        # (R_i) T_i - sum_j r_ij T_j = 1 over non-absorbing states
        a = [[Fraction(0)] * m for _ in range(m)]
        rhs = [Fraction(1)] * m
        for i, outs in enumerate(self.transitions):
            total = sum(r for _, r in outs)
            a[i][i] = total
            for target, rate in outs:
                if target is not LOSS:
                    a[i][target] -= rate
        sol = _solve_fractions(a, rhs)
        return float(sol[0])


def _solve_fractions(a: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    n = len(a)
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise ArithmeticError("singular chain generator")
        a[col], a[pivot] = a[pivot], a[col]
        rhs[col], rhs[pivot] = rhs[pivot], rhs[col]
        inv = 1 / a[col][col]
        a[col] = [v * inv for v in a[col]]
        rhs[col] = rhs[col] * inv
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [v - f * p for v, p in zip(a[r], a[col])]
                rhs[r] = rhs[r] - f * rhs[col]
    return rhs


def _repair_shares(mode: str, counts: list[Fraction], mu: Fraction):
    """Repair rate leaving through each failed-node class.

    Parallel repair: each failed node restores at mu independently.  Serial
    repair: one restore at a time at mu, target approximated as uniform over
    failed nodes (exact when all failed nodes are interchangeable).
    """
    total_failed = sum(counts)
    if total_failed == 0:
        return [Fraction(0)] * len(counts)
    if mode == "parallel":
        return [c * mu for c in counts]
    return [c * mu / total_failed for c in counts]


def build_markov_chain(scheme: Scheme, model: FailureModel) -> MarkovChain:
    lam = Fraction(model.fail_rate)
    mu = Fraction(model.repair_rate)
    t = tolerance(scheme)
    assumptions = [
        "published absolute MTTDL tables for these schemes use uncited rate "
        "constants; this chain supports orderings and cross-checks only",
    ]

    if isinstance(scheme, (Replication, Polygon)):
        # every pattern of a given size behaves alike: count chain is exact
        n = scheme.code_length
        for f in range(1, min(t + 2, n + 1)):
            fatal, total = fatal_pattern_count(scheme, f)
            expect = 0 if f <= t else total
            if fatal != expect:
                raise AssertionError("count lumping violated")
        states = [(i,) for i in range(t + 1)]
        transitions = []
        for i in range(t + 1):
            outs = [((i + 1,), (n - i) * lam)] if i < t else [(LOSS, (n - i) * lam)]
            if i:
                share = _repair_shares(model.repair_mode, [Fraction(i)], mu)[0]
                outs.append(((i - 1,), share))
            transitions.append(outs)
    elif isinstance(scheme, RaidMirror):
        # state (a, b): mirror pairs with one node down / fully down.
        # Recoverable iff b <= 1: a single fully-erased block falls out of
        # the XOR parity, two cannot.
        pairs = scheme.data_blocks + 1
        states = [(a, b) for b in (0, 1) for a in range(pairs - b + 1)]
        transitions = []
        for a, b in states:
            outs = []
            intact = pairs - a - b
            if intact:
                outs.append(((a + 1, b), 2 * intact * lam))
            if a:
                target = (a - 1, b + 1) if b == 0 else LOSS
                outs.append((target, a * lam))
            shares = _repair_shares(
                model.repair_mode, [Fraction(a), Fraction(2 * b)], mu
            )
            if a:
                outs.append(((a - 1, b), shares[0]))
            if b:
                outs.append(((a + 1, b - 1), shares[1]))
            transitions.append(outs)
        if model.repair_mode == "serial":
            assumptions.append(
                "serial repair target approximated as uniform over failed nodes"
            )
    elif isinstance(scheme, HeptagonLocal):
        # state (a, b, g): failures per heptagon plus the global node; the
        # exhaustive 2^15 recoverability scan shows this determines fate
        fatal_sig = {}
        for a in range(8):
            for b in range(8):
                for g in (0, 1):
                    pattern = list(range(a)) + [7 + i for i in range(b)] + ([14] if g else [])
                    fatal_sig[(a, b, g)] = not is_recoverable(scheme, pattern)
        states = [s for s, fatal in sorted(fatal_sig.items()) if not fatal]
        index = {s: i for i, s in enumerate(states)}
        transitions = []
        for a, b, g in states:
            outs = []

            def fail_to(sig, rate, outs=outs):
                outs.append((LOSS if fatal_sig[sig] else sig, rate))

            if a < 7:
                fail_to((a + 1, b, g), (7 - a) * lam)
            if b < 7:
                fail_to((a, b + 1, g), (7 - b) * lam)
            if not g:
                fail_to((a, b, 1), lam)
            shares = _repair_shares(
                model.repair_mode, [Fraction(a), Fraction(b), Fraction(g)], mu
            )
            if a:
                outs.append(((a - 1, b, g), shares[0]))
            if b:
                outs.append(((a, b - 1, g), shares[1]))
            if g:
                outs.append(((a, b, 0), shares[2]))
            transitions.append(outs)
        if model.repair_mode == "serial":
            assumptions.append(
                "serial repair target approximated as uniform over failed nodes"
            )
    else:  # pragma: no cover
        raise TypeError(f"unknown scheme type: {scheme!r}")

    index = {s: i for i, s in enumerate(states)}
    resolved = tuple(
        tuple((LOSS if tgt is LOSS else index[tgt], rate) for tgt, rate in outs)
        for outs in transitions
    )
    return MarkovChain(
        scheme_name=scheme.name,
        node_count=scheme.code_length,
        tolerance=t,
        fail_rate=model.fail_rate,
        repair_rate=model.repair_rate,
        repair_mode=model.repair_mode,
        states=tuple(states),
        transitions=resolved,
        assumptions=tuple(assumptions),
    )


def mttdl_analytic(scheme: Scheme, model: FailureModel) -> float:
    """Expected hours to data loss from the absorbing chain."""
    return build_markov_chain(scheme, model).expected_hours_to_loss()


def system_mttdl(group_mttdl: float, groups: int) -> float:
    """Independent-groups approximation: first loss among *groups* groups."""
    if groups < 1:
        raise ValueError("need at least one group")
    return group_mttdl / groups


# ---------------------------------------------------------------------------
# Monte Carlo


def _trial_rng(seed: int, index: int) -> random.Random:
    return random.Random((seed * 0x1F123BB5) ^ index)


def _simulate_trial(scheme: Scheme, model: FailureModel, rng: random.Random) -> float:
    n = scheme.code_length
    lam = model.fail_rate
    mu = model.repair_rate
    parallel = model.repair_mode == "parallel"
    up = list(range(n))
    failed: list[int] = []
    mask = 0
    t = 0.0
    expovariate = rng.expovariate
    rand = rng.random
    randrange = rng.randrange
    while True:
        k = len(failed)
        frate = (n - k) * lam
        rrate = k * mu if parallel else (mu if k else 0.0)
        total = frate + rrate
        t += expovariate(total)
        if rand() * total < frate:
            i = randrange(n - k)
            node = up[i]
            up[i] = up[-1]
            up.pop()
            failed.append(node)
            mask |= 1 << node
            if not is_recoverable_mask(scheme, mask):
                return t
        else:
            i = randrange(k) if parallel else 0  # serial repairs oldest first
            node = failed.pop(i)
            mask &= ~(1 << node)
            up.append(node)


def _run_trials(scheme: Scheme, model: FailureModel, seed: int, start: int, count: int):
    return [
        _simulate_trial(scheme, model, _trial_rng(seed, start + i))
        for i in range(count)
    ]


@dataclass(frozen=True)
class MonteCarloResult:
    mean_hours: float
    ci_low: float
    ci_high: float
    trials: int
    seed: int

    def overlaps(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def mttdl_montecarlo(
    scheme: Scheme,
    model: FailureModel,
    trials: int,
    seed: int,
    workers: int = 1,
) -> MonteCarloResult:
    """Event-driven estimate of MTTDL with a normal-approximation 95% CI.

    Identical results for any *workers* value: trial i always uses the RNG
    derived from (seed, i).
    """
    if trials < 100:
        raise ValueError("need at least 100 trials for a meaningful CI")
    if workers <= 1:
        times = _run_trials(scheme, model, seed, 0, trials)
    else:
        chunk = -(-trials // workers)
        ranges = [
            (start, min(chunk, trials - start)) for start in range(0, trials, chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_trials, scheme, model, seed, start, count)
                for start, count in ranges
            ]
            times = []
            for fut in futures:  # submission order == trial order
                times.extend(fut.result())
    mean = statistics.fmean(times)
    half = 1.96 * statistics.stdev(times, mean) / math.sqrt(len(times))
    return MonteCarloResult(mean, mean - half, mean + half, trials, seed)


# ---------------------------------------------------------------------------
# Reporting

RELIABILITY_COLUMNS = [
    "scheme",
    "lambda",
    "mu",
    "mode",
    "analytic_hours",
    "mc_mean_hours",
    "mc_ci_low",
    "mc_ci_high",
    "trials",
    "seed",
]


def reliability_rows(
    schemes: list[Scheme],
    model: FailureModel,
    trials: int,
    seed: int,
    workers: int = 1,
) -> list[dict]:
    rows = []
    for scheme in schemes:
        analytic = mttdl_analytic(scheme, model)
        mc = mttdl_montecarlo(scheme, model, trials, seed, workers)
        rows.append(
            {
                "scheme": scheme.name,
                "lambda": model.fail_rate,
                "mu": model.repair_rate,
                "mode": model.repair_mode,
                "analytic_hours": analytic,
                "mc_mean_hours": mc.mean_hours,
                "mc_ci_low": mc.ci_low,
                "mc_ci_high": mc.ci_high,
                "trials": trials,
                "seed": seed,
            }
        )
    return rows
