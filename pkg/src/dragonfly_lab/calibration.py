"""Fitting the channel noise model to the parser's reliability curve.

The reference curve has three anchors (1, 5 and 10 samples per trace): the
fraction of traces the parser accepts and the accuracy of the accepted
guesses. A second target is the single-shot EAP-pwd rate, where the loop
stops on success and only one sample exists per session. The search is a
plain random search with local perturbation around the incumbent.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from sklearn.base import BaseEstimator

from .interpret import ParserConfig, evaluate, interpret_trace
from .sidechannel import (
    EAP_CLOCKS_PER_ITER,
    SAE_CLOCKS_PER_ITER,
    NoiseModel,
    Trace,
    simulate_sample,
)
from .validation import check_fitted, check_positive_int

# samples per trace -> (accuracy, usable); accuracy for 5 and 10 is a floor
RELIABILITY_TARGETS = {1: (0.66, 0.705), 5: (0.90, 0.77), 10: (0.95, 0.88)}
RELIABILITY_TOLERANCE = 0.05
EAP_EXACT_FLOOR = 0.88
EAP_SOFT_FLOOR = 0.97

DEFAULT_SEARCH_SPACE = {
    "clock_miss_prob": (0.02, 0.20),
    "randomcall_miss_prob": (0.10, 0.60),
    "spurious_long_delay_prob": (0.0, 0.06),
    "malformed_sample_prob": (0.0, 0.35),
    "short_delay_median": (100.0, 900.0),
    "spurious_delay_median": (1600.0, 3900.0),
}


def draw_truth_k(rng: random.Random, k_max: int = 20) -> int:
    """Success iteration of a random password, conditioned on k <= k_max."""
    while True:
        k = 1
        while rng.random() >= 0.5:
            k += 1
        if k <= k_max:
            return k


def reliability_point(noise: NoiseModel, n_samples: int, n_traces: int, seed: int,
                      *, early_exit: bool = False) -> dict:
    """Parser metrics over ``n_traces`` synthetic traces of ``n_samples`` each."""
    rng = random.Random(seed)
    cfg = ParserConfig(early_exit=early_exit)
    clocks = EAP_CLOCKS_PER_ITER if early_exit else SAE_CLOCKS_PER_ITER
    outcomes, truths = [], []
    for i in range(n_traces):
        k = draw_truth_k(rng)
        samples = [simulate_sample(k, noise, rng, clocks_per_iter=clocks, early_exit=early_exit)
                   for _ in range(n_samples)]
        outcomes.append(interpret_trace(Trace(None, None, samples, str(i), truth_k=k), cfg))
        truths.append(k)
    return evaluate(outcomes, truths)


def reliability_curve(noise: NoiseModel, n_traces: int = 500, seed: int = 0,
                      sample_counts=(1, 5, 10)) -> dict[int, dict]:
    return {n: reliability_point(noise, n, n_traces, seed + n) for n in sample_counts}


@dataclass
class CalibrationReport:
    noise: NoiseModel
    loss: float
    curve: dict
    eap: dict
    distances: dict = field(default_factory=dict)

    @property
    def within_tolerance(self) -> bool:
        return all(d <= 0 for d in self.distances.values())

    def to_dict(self) -> dict:
        return {
            "noise": self.noise.to_dict(),
            "loss": self.loss,
            "within_tolerance": self.within_tolerance,
            "distances": self.distances,
            "curve": {str(k): v for k, v in self.curve.items()},
            "eap": self.eap,
        }


def target_distances(curve: dict, eap: dict) -> dict:
    """Signed excess over each tolerance; values <= 0 are within band."""
    tol = RELIABILITY_TOLERANCE
    out = {}
    for n, (acc, usable) in RELIABILITY_TARGETS.items():
        if n not in curve:
            continue
        r = curve[n]
        out[f"usable@{n}"] = abs(r["usable"] - usable) - tol
        if n == 1:
            out[f"accuracy@{n}"] = abs(r["accuracy"] - acc) - tol
        else:
            out[f"accuracy@{n}"] = acc - r["accuracy"]
    if eap:
        out["eap_exact"] = EAP_EXACT_FLOOR - eap["exact_rate"]
        out["eap_soft"] = EAP_SOFT_FLOOR - eap["soft_rate"]
    return out


def _loss(curve: dict, eap: dict) -> float:
    # squared distance to the anchors in percentage points; floors are one-sided
    # and weighted up, since the EAP numbers are pass/fail rather than read off a plot
    err = 0.0
    for n, (acc, usable) in RELIABILITY_TARGETS.items():
        r = curve[n]
        err += (100 * (r["usable"] - usable)) ** 2
        if n == 1:
            err += (100 * (r["accuracy"] - acc)) ** 2
        else:
            err += max(0.0, 100 * (acc - r["accuracy"])) ** 2
    err += 4 * max(0.0, 100 * (EAP_EXACT_FLOOR + 0.02 - eap["exact_rate"])) ** 2
    err += 4 * max(0.0, 100 * (EAP_SOFT_FLOOR + 0.005 - eap["soft_rate"])) ** 2
    return err


def score_noise(noise: NoiseModel, n_traces: int, seed: int) -> CalibrationReport:
    curve = reliability_curve(noise, n_traces, seed, tuple(RELIABILITY_TARGETS))
    eap = reliability_point(noise, 1, n_traces, seed + 100, early_exit=True)
    return CalibrationReport(noise, _loss(curve, eap), curve, eap, target_distances(curve, eap))


def calibrate(search_space: dict | None = None, *, base: NoiseModel | None = None,
              n_iter: int = 100, n_traces: int = 400, seed: int = 0,
              local_fraction: float = 0.6, refine_top: int = 5,
              refine_traces: int | None = None, log=None) -> CalibrationReport:
    """Random search over ``search_space`` (name -> (low, high)) for the best fit.

    Every candidate is screened on the same stream (``seed``), so the best
    screening scores are biased towards lucky draws. The ``refine_top``
    leaders are therefore re-scored on a fresh stream with ``refine_traces``
    traces (default three times ``n_traces``) and the best re-scored model
    wins. The first candidate is ``base`` itself when it lies inside the space.

    Returns the best report found whether or not it lies within tolerance;
    ``report.distances`` says how far each anchor is off.
    """
    space = dict(DEFAULT_SEARCH_SPACE if search_space is None else search_space)
    start = base is not None and all(getattr(base, k) is not None and lo <= getattr(base, k) <= hi
                                    for k, (lo, hi) in space.items())
    base = base or NoiseModel()
    check_positive_int("n_iter", n_iter)
    check_positive_int("refine_top", refine_top, minimum=0)
    rng = random.Random(seed)
    screened: list[CalibrationReport] = []
    best: CalibrationReport | None = None
    for it in range(n_iter):
        if it == 0 and start:
            params = {}
        elif best is None or not space or rng.random() >= local_fraction:
            params = {k: rng.uniform(lo, hi) for k, (lo, hi) in space.items()}
        else:
            params = {}
            for k, (lo, hi) in space.items():
                v = getattr(best.noise, k) * math.exp(rng.gauss(0.0, 0.12))
                params[k] = min(max(v, lo), hi)
        report = score_noise(base.with_params(**params), n_traces, seed)
        screened.append(report)
        if best is None or report.loss < best.loss:
            best = report
            if log:
                log(f"iter {it}: loss {report.loss:.1f}")
        if not space:
            break
    if refine_top == 0:
        return best
    leaders = sorted(screened, key=lambda r: r.loss)[:refine_top]
    n_refine = refine_traces or 3 * n_traces
    rescored = [score_noise(r.noise, n_refine, seed + 1000) for r in leaders]
    if log:
        log("refined: " + ", ".join(f"{a.loss:.1f}->{b.loss:.1f}"
                                    for a, b in zip(leaders, rescored)))
    return min(rescored, key=lambda r: r.loss)


class NoiseCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit`` searches, ``noise_model_`` holds the result."""

    def __init__(self, n_iter=100, n_traces=400, seed=0, search_space=None):
        self.n_iter = n_iter
        self.n_traces = n_traces
        self.seed = seed
        self.search_space = search_space

    def fit(self, X=None, y=None):
        self.report_ = calibrate(self.search_space, n_iter=self.n_iter,
                                 n_traces=self.n_traces, seed=self.seed)
        self.noise_model_ = self.report_.noise
        return self

    def score(self, X=None, y=None) -> float:
        check_fitted(self, "report_")
        return -self.report_.loss

    def save(self, path: str | Path) -> None:
        check_fitted(self, "noise_model_")
        Path(path).write_text(json.dumps(self.noise_model_.to_dict(), indent=2) + "\n")
