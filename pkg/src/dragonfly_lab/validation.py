"""Input checks shared by the estimator-style front ends."""

from __future__ import annotations

from collections.abc import Iterable

from sklearn.exceptions import NotFittedError

from .sidechannel import Trace


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first.")


def check_traces(traces) -> list[Trace]:
    if isinstance(traces, Trace):
        return [traces]
    if not isinstance(traces, Iterable):
        raise TypeError(f"expected a Trace or an iterable of traces, got {type(traces).__name__}")
    traces = list(traces)
    for t in traces:
        if not isinstance(t, Trace):
            raise TypeError(f"expected Trace, got {type(t).__name__}")
    return traces


def check_probability(name: str, value: float, *, open_interval: bool = False) -> float:
    value = float(value)
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return value


def check_positive_int(name: str, value, *, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_wordlist(words) -> list[str]:
    if isinstance(words, (str, bytes)):
        raise TypeError("expected an iterable of passwords, not a single string")
    return [w for w in words]
