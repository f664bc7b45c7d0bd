"""Offline dictionary partitioning from iteration leaks, and its cost model.

A leak ``(A, B, k)`` says the victim's password converts at iteration ``k``
under identities ``A, B``. Every candidate that converts elsewhere is
eliminated. :class:`AttackModel` predicts how many independent leaks are
needed to clear a dictionary of a given size.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp
from sklearn.base import BaseEstimator, TransformerMixin

from .derive import Identity, Profile, count_iterations, get_profile, parse_password
from .ec import CurveParams
from .validation import check_fitted, check_probability, check_wordlist

EXACT = "exact"
AT_LEAST = "at_least"

# Upper tails with at most this many terms are summed directly.
_DIRECT_TAIL_TERMS = 200_000


def p_success(curve: CurveParams) -> float:
    """Chance that a uniform x in [0, p) is an x-coordinate: q / 2p."""
    if curve.h != 1:
        raise ValueError("only cofactor-1 curves are supported")
    return curve.q / (2 * curve.p)


def log_binom_upper_tail(n_trials: int, d: int, log_p: float, log_1mp: float) -> float:
    """``log Pr[Z >= d]`` for ``Z ~ Binomial(n_trials, p)``.

    Both ``log p`` and ``log(1 - p)`` are passed so that probabilities
    within machine epsilon of 0 or 1 keep their precision.
    """
    if d <= 0:
        return 0.0
    if d > n_trials:
        return -math.inf
    if log_p == -math.inf:
        return -math.inf
    if log_1mp == -math.inf:
        return 0.0
    if d == n_trials:
        return n_trials * log_p
    if n_trials - d + 1 <= _DIRECT_TAIL_TERMS:
        i = np.arange(d, n_trials + 1, dtype=np.float64)
        log_terms = (gammaln(n_trials + 1.0) - gammaln(i + 1.0) - gammaln(n_trials - i + 1.0)
                     + i * log_p + (n_trials - i) * log_1mp)
        return float(min(logsumexp(log_terms), 0.0))
    return float(stats.binom.logsf(d - 1, n_trials, math.exp(log_p)))


def _as_count(name: str, value) -> int:
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"{name} must be integral, got {value}")
        value = int(value)
    if value < 0:
        raise ValueError(f"{name} must be non-negative")
    return int(value)


@dataclass(frozen=True)
class AttackModel:
    """Closed-form pruning model.

    ``leak="iteration"`` models an attacker who learns the success
    iteration; ``leak="first-outcome"`` one who only learns whether the
    first attempt succeeded. ``geometric=True`` uses the normalized
    distribution ``(1 - p_s)^(k-1) p_s`` instead of ``p_s^k``; the two
    coincide at ``p_s = 1/2``.
    """

    p_s: float = 0.5
    k_max: int = 20
    leak: str = "iteration"
    geometric: bool = False

    def __post_init__(self):
        check_probability("p_s", self.p_s, open_interval=True)
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.leak not in ("iteration", "first-outcome"):
            raise ValueError(f"unknown leak model {self.leak!r}")

    @classmethod
    def dragonblood(cls, p_s: float = 0.5) -> "AttackModel":
        return cls(p_s=p_s, leak="first-outcome")

    @classmethod
    def for_curve(cls, curve: CurveParams, **kw) -> "AttackModel":
        return cls(p_s=p_success(curve), **kw)

    def pr_iteration(self, k: int) -> float:
        if k < 1:
            return 0.0
        if self.geometric:
            return (1 - self.p_s) ** (k - 1) * self.p_s
        return self.p_s ** k

    def pr_pass_one(self) -> float:
        """Probability that a random wrong password survives one leak."""
        if self.leak == "first-outcome":
            return self.p_s ** 2 + (1 - self.p_s) ** 2
        return 1.0 - self.pr_pruned_by_one_trace()

    def pr_pruned_by_one_trace(self) -> float:
        if self.leak == "first-outcome":
            return 1.0 - self.pr_pass_one()
        return math.fsum(self.pr_iteration(i) * (1 - self.pr_iteration(i))
                         for i in range(1, self.k_max + 1))

    def pr_pruned_within(self, n: int) -> float:
        """Probability that a wrong password is gone after ``n`` leaks."""
        if n < 0:
            raise ValueError("n must be non-negative")
        return -math.expm1(n * math.log1p(-self.pr_pruned_by_one_trace()))

    def pr_pruned_within_series(self, n: int) -> float:
        """Same quantity summed term by term (prune at trace i+1 after passing i)."""
        p1 = self.pr_pruned_by_one_trace()
        return math.fsum(p1 * (1 - p1) ** i for i in range(n))

    def log_pr_at_least_d_pruned(self, L, d, n: int) -> float:
        L, d = _as_count("L", L), _as_count("d", d)
        if d > L:
            raise ValueError("d cannot exceed L")
        log_survive = n * math.log1p(-self.pr_pruned_by_one_trace())
        log_pruned = math.log(-math.expm1(log_survive)) if n > 0 else -math.inf
        return log_binom_upper_tail(L, d, log_pruned, log_survive)

    def pr_at_least_d_pruned(self, L, d, n: int) -> float:
        """Probability that ``n`` leaks eliminate at least ``d`` of ``L`` wrong passwords."""
        return math.exp(self.log_pr_at_least_d_pruned(L, d, n))

    def traces_required(self, L, target_prob: float = 0.95, d=None, n_max: int = 100_000) -> int:
        """Fewest leaks that remove ``d`` (default: all ``L``) wrong passwords w.p. >= target."""
        L = _as_count("L", L)
        d = L if d is None else _as_count("d", d)
        check_probability("target_prob", target_prob)
        log_target = math.log(target_prob) if target_prob > 0 else -math.inf
        for n in range(n_max + 1):
            if self.log_pr_at_least_d_pruned(L, d, n) >= log_target:
                return n
        raise ValueError(f"target not reached within {n_max} traces")

    def traces_required_expected(self, L) -> int:
        """Fewest leaks leaving at most one expected wrong survivor."""
        L = _as_count("L", L)
        if L <= 1:
            return 0
        return math.ceil(math.log(L) / -math.log(self.pr_pass_one()))


def plan_table(sizes, target_prob: float = 0.95, model: AttackModel | None = None,
               baseline: AttackModel | None = None) -> list[dict]:
    """Table rows of leaks needed for each dictionary size under both leak models."""
    model = model or AttackModel()
    baseline = baseline or AttackModel.dragonblood(model.p_s)
    rows = []
    for L in sizes:
        L = _as_count("L", L)
        ours = model.traces_required(L, target_prob)
        base = baseline.traces_required(L, target_prob)
        rows.append({
            "L": L,
            "traces": ours,
            "traces_expected": model.traces_required_expected(L),
            "baseline_traces": base,
            "baseline_expected": baseline.traces_required_expected(L),
            "ratio": ours / base if base else float("nan"),
        })
    return rows


@dataclass(frozen=True)
class Leak:
    id_a: Identity
    id_b: Identity
    k: int
    kind: str = EXACT
    token: bytes | None = None

    def __post_init__(self):
        if self.kind not in (EXACT, AT_LEAST):
            raise ValueError(f"unknown leak kind {self.kind!r}")
        if self.kind == EXACT and self.k < 1:
            raise ValueError("exact leaks need k >= 1")
        if self.k < 0:
            raise ValueError("k must be non-negative")

    def consistent(self, success_iteration: int | None) -> bool:
        """``None`` means no success within ``k`` counters."""
        if self.kind == EXACT:
            return success_iteration == self.k
        return success_iteration is None or success_iteration > self.k

    def to_record(self) -> dict:
        rec = {"idA": _id_text(self.id_a), "idB": _id_text(self.id_b), "k": self.k,
               "kind": self.kind}
        if self.token is not None:
            rec["token"] = self.token.hex()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Leak":
        token = bytes.fromhex(rec["token"]) if rec.get("token") else None
        return cls(Identity.parse(rec["idA"]), Identity.parse(rec["idB"]), int(rec["k"]),
                   rec.get("kind", EXACT), token)


def _id_text(ident: Identity) -> str:
    return str(ident) if ident.is_mac else "hex:" + ident.value.hex()


def leaks_to_jsonl(leaks) -> str:
    return "".join(json.dumps(leak.to_record()) + "\n" for leak in leaks)


def leaks_from_jsonl(text: str) -> list[Leak]:
    return [Leak.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass
class PruneReport:
    input_size: int
    survivors: list
    eliminated_by: list[int]
    elapsed: float = 0.0
    shards: int = 1

    def merge(self, other: "PruneReport") -> "PruneReport":
        return PruneReport(
            self.input_size + other.input_size,
            self.survivors + other.survivors,
            [a + b for a, b in zip(self.eliminated_by, other.eliminated_by)],
            self.elapsed + other.elapsed,
            self.shards + other.shards,
        )


def _prune_shard(words, leaks, curve, variant) -> PruneReport:
    t0 = time.perf_counter()
    survivors = []
    eliminated = [0] * len(leaks)
    for w in words:
        raw = parse_password(w)
        for i, leak in enumerate(leaks):
            k = count_iterations(raw, leak.id_a, leak.id_b, curve=curve, variant=variant,
                                 token=leak.token, limit=max(leak.k, 1))
            if not leak.consistent(k):
                eliminated[i] += 1
                break
        else:
            survivors.append(w)
    return PruneReport(len(words), survivors, eliminated, time.perf_counter() - t0)


def prune_dictionary(dictionary, leaks, profile: Profile | str = "iwd-sae", *,
                     n_shards: int = 1, n_jobs: int = 1) -> PruneReport:
    """Keep only the passwords consistent with every leak.

    Shards are contiguous slices processed independently; their reports are
    merged in order, so the survivor list does not depend on ``n_shards``.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)
    leaks = list(leaks)
    if not leaks:
        raise ValueError("at least one leak is required")
    words = check_wordlist(dictionary)
    if not words:
        return PruneReport(0, [], [0] * len(leaks))
    n_shards = max(1, min(n_shards, len(words)))
    bounds = np.linspace(0, len(words), n_shards + 1).astype(int)
    shards = [words[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    args = [(s, leaks, profile.curve, profile.variant) for s in shards]
    if n_jobs > 1 and n_shards > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            reports = list(pool.map(_prune_shard, *zip(*args)))
    else:
        reports = [_prune_shard(*a) for a in args]
    out = reports[0]
    for r in reports[1:]:
        out = out.merge(r)
    return out


class DictionaryPruner(TransformerMixin, BaseEstimator):
    """``fit`` on leaks, ``transform`` a wordlist into its surviving candidates."""

    def __init__(self, profile="iwd-sae", n_shards=1, n_jobs=1):
        self.profile = profile
        self.n_shards = n_shards
        self.n_jobs = n_jobs

    def fit(self, leaks, y=None):
        leaks = list(leaks)
        if not leaks:
            raise ValueError("at least one leak is required")
        self.leaks_ = leaks
        self.profile_ = get_profile(self.profile) if isinstance(self.profile, str) else self.profile
        return self

    def transform(self, dictionary):
        check_fitted(self, "leaks_")
        self.report_ = prune_dictionary(dictionary, self.leaks_, self.profile_,
                                        n_shards=self.n_shards, n_jobs=self.n_jobs)
        return self.report_.survivors


def leak_from_outcome(outcome, trace) -> Leak | None:
    """Turn a parser outcome into a leak; warnings and vacuous bounds give ``None``."""
    if outcome.kind == "exact":
        return Leak(trace.id_a, trace.id_b, outcome.k, EXACT, trace.token)
    if outcome.kind == "lower_bound" and outcome.k >= 1:
        return Leak(trace.id_a, trace.id_b, outcome.k, AT_LEAST, trace.token)
    return None


__all__ = [
    "AT_LEAST", "AttackModel", "DictionaryPruner", "EXACT", "Leak", "PruneReport",
    "leak_from_outcome", "leaks_from_jsonl", "leaks_to_jsonl", "log_binom_upper_tail",
    "p_success", "plan_table", "prune_dictionary",
]
