"""Attacker-side interpretation of spy traces.

Each well-formed sample is walked line by line: a clock hit opens the next
iteration, a random-number hit adds its delay to the current iteration's
score, and a delay above the threshold ends the sample. Summed over the
samples of a trace, the score vector names the most probable success
iteration. Unclear traces become warnings rather than guesses.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .sidechannel import PREAMBLE_LENGTH, Sample, Trace
from .validation import check_fitted, check_traces

EXACT = "exact"
LOWER_BOUND = "lower_bound"
WARNING = "warning"


@dataclass(frozen=True)
class ParserConfig:
    long_delay_threshold: float = 1500.0
    min_well_formed_events: int = PREAMBLE_LENGTH + 1
    decision_margin: float = 2.0
    max_iterations: int = 20
    refractory_fraction: float = 1 / 3
    min_spacing: float = 2000.0
    nominal_spacing: float = 3950.0
    early_exit: bool = False

    def __post_init__(self):
        if self.long_delay_threshold <= 0:
            raise ValueError("long_delay_threshold must be positive")
        if self.decision_margin < 1:
            raise ValueError("decision_margin must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0 < self.refractory_fraction < 1:
            raise ValueError("refractory_fraction must lie in (0, 1)")


@dataclass
class ParseOutcome:
    kind: str
    k: int | None = None
    candidates: tuple[int, ...] = ()
    reason: str | None = None
    scores: np.ndarray | None = field(default=None, repr=False)
    n_used: int = 0
    n_dropped: int = 0

    @property
    def is_exact(self) -> bool:
        return self.kind == EXACT

    def to_record(self, trace_id: str) -> dict:
        return {"trace_id": trace_id, "kind": self.kind, "k": self.k,
                "candidates": list(self.candidates), "reason": self.reason}


def is_well_formed(sample: Sample, cfg: ParserConfig) -> bool:
    ev = sample.events
    if len(ev) < cfg.min_well_formed_events:
        return False
    first_clock = next((i for i, e in enumerate(ev) if e.is_clock), None)
    # no clock at all, or no random-number preamble before the loop
    return first_clock is not None and first_clock > 0


def filter_samples(samples, cfg: ParserConfig | None = None) -> list[Sample]:
    """Drop samples lacking the preamble, any clock hit, or enough events."""
    cfg = cfg or ParserConfig()
    return [s for s in samples if is_well_formed(s, cfg)]


def _opening_hits(clock_times: list[float], window: float) -> list[float]:
    """Times of the hits that open an iteration.

    Hits chain into one iteration while each follows the previous hit by less
    than ``window``.
    """
    opened: list[float] = []
    prev = None
    for t in clock_times:
        if prev is None or t - prev >= window:
            opened.append(t)
        prev = t
    return opened


def _refractory_window(clock_times: list[float], cfg: ParserConfig) -> float:
    """A fraction of the median iteration spacing, estimated per sample."""
    opened = _opening_hits(clock_times, cfg.refractory_fraction * cfg.nominal_spacing)
    gaps = [b - a for a, b in zip(opened, opened[1:]) if b - a >= cfg.min_spacing]
    spacing = statistics.median(gaps) if gaps else cfg.nominal_spacing
    return cfg.refractory_fraction * spacing


def score_sample(sample: Sample, cfg: ParserConfig | None = None) -> np.ndarray:
    """Per-iteration evidence; index 0 is iteration 1."""
    cfg = cfg or ParserConfig()
    scores = np.zeros(cfg.max_iterations)
    ev = sample.events
    first_clock = next((i for i, e in enumerate(ev) if e.is_clock), None)
    if first_clock is None:
        return scores
    # clock times counted from the first hit of the loop
    times = [0.0]
    for e in ev[first_clock + 1:]:
        if e.is_clock:
            times.append(times[-1] + e.delta)
    window = _refractory_window(times, cfg)
    iteration = 0
    for e in ev[first_clock:]:
        if e.is_clock:
            if iteration == 0 or e.delta >= window:
                iteration += 1
            continue
        if iteration > cfg.max_iterations:
            break
        scores[iteration - 1] += e.delta
        if not cfg.early_exit and e.delta > cfg.long_delay_threshold:
            break
    if cfg.early_exit and 1 <= iteration <= cfg.max_iterations:
        # the loop stops on success: the last pass observed is the answer
        last = scores[iteration - 1]
        scores[:] = 0.0
        scores[iteration - 1] = last + cfg.long_delay_threshold
    return scores


def decide(scores: np.ndarray, cfg: ParserConfig) -> ParseOutcome:
    if not np.any(scores > 0):
        return ParseOutcome(WARNING, reason="no_evidence", scores=scores)
    order = np.argsort(-scores, kind="stable")
    top, second = int(order[0]), int(order[1]) if len(order) > 1 else None
    runner = scores[second] if second is not None else 0.0
    if scores[top] >= cfg.decision_margin * runner and scores[top] > runner:
        return ParseOutcome(EXACT, k=top + 1, scores=scores)
    if second is not None and abs(top - second) == 1:
        lo = min(top, second) + 1
        return ParseOutcome(LOWER_BOUND, k=lo - 1, candidates=(lo, lo + 1), scores=scores)
    return ParseOutcome(WARNING, reason="ambiguous", scores=scores)


def interpret_trace(trace: Trace, cfg: ParserConfig | None = None) -> ParseOutcome:
    """Aggregate sample scores into an exact guess, a lower bound or a warning."""
    cfg = cfg or ParserConfig()
    kept = filter_samples(trace.samples, cfg)
    dropped = len(trace.samples) - len(kept)
    if not kept:
        return ParseOutcome(WARNING, reason="no_usable_samples", n_dropped=dropped)
    total = np.zeros(cfg.max_iterations)
    for s in kept:
        total += score_sample(s, cfg)
    out = decide(total, cfg)
    out.n_used, out.n_dropped = len(kept), dropped
    return out


class TraceInterpreter(BaseEstimator):
    """Estimator front end to :func:`interpret_trace`.

    ``fit`` only validates the configuration (the parser has no learned
    state); ``predict`` returns one :class:`ParseOutcome` per trace and
    ``score`` the accuracy of exact guesses against known iteration counts.
    """

    def __init__(self, long_delay_threshold=1500.0, min_well_formed_events=PREAMBLE_LENGTH + 1,
                 decision_margin=2.0, max_iterations=20, refractory_fraction=1 / 3,
                 early_exit=False):
        self.long_delay_threshold = long_delay_threshold
        self.min_well_formed_events = min_well_formed_events
        self.decision_margin = decision_margin
        self.max_iterations = max_iterations
        self.refractory_fraction = refractory_fraction
        self.early_exit = early_exit

    def fit(self, traces=None, y=None):
        self.config_ = ParserConfig(**self.get_params())
        return self

    def predict(self, traces) -> list[ParseOutcome]:
        check_fitted(self, "config_")
        return [interpret_trace(t, self.config_) for t in check_traces(traces)]

    def predict_k(self, traces) -> np.ndarray:
        """Exact guesses as integers, 0 where the outcome is not exact."""
        return np.array([o.k if o.is_exact else 0 for o in self.predict(traces)])

    def score(self, traces, y) -> float:
        metrics = evaluate(self.predict(traces), y)
        return metrics["accuracy"]


def evaluate(outcomes, truths) -> dict:
    """Usable fraction, accuracy among exact guesses, and the x/x+1 soft rate."""
    truths = list(truths)
    if len(outcomes) != len(truths):
        raise ValueError("outcomes and truths differ in length")
    n = len(truths)
    exact = [(o.k, t) for o, t in zip(outcomes, truths) if o.is_exact]
    correct = sum(k == t for k, t in exact)
    soft = sum(t in (k, k + 1) for k, t in exact)
    return {
        "n": n,
        "usable": len(exact) / n if n else 0.0,
        "accuracy": correct / len(exact) if exact else 0.0,
        "soft_accuracy": soft / len(exact) if exact else 0.0,
        "exact_rate": correct / n if n else 0.0,
        "soft_rate": soft / n if n else 0.0,
    }
