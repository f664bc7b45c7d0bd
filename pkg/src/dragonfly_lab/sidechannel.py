"""Synthetic Flush+Reload observations of the conversion loop.

A spy watches two code lines: one hit at the start of every loop pass (the
synchronization clock, labelled ``kdf_sha256``) and one inside the random
number generator (``l_getrandom``). Each line of a sample reports the probe
label, the cycles elapsed since the last clock hit and the reload latency.
Evicting the Legendre code makes the success-only random call land late in
its iteration, which is what the attacker keys on.

Samples are produced from an event timeline; noise is applied by dropping
probe hits, injecting late random calls and corrupting whole samples.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .derive import DerivationContext, Identity, Variant, derive_pwe

CLOCK_LABEL = "kdf_sha256"
RANDOM_LABEL = "l_getrandom"
PREAMBLE_LENGTH = 5
# malformed_sample_prob is quoted for a window of this many loop passes
MALFORMED_REFERENCE_PASSES = 20
# clock hits per loop pass: iwd hashes once per pass, FreeRADIUS updates its
# HMAC state five times
SAE_CLOCKS_PER_ITER = 3
EAP_CLOCKS_PER_ITER = 5


class TraceFormatError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


@dataclass(frozen=True)
class ProbeEvent:
    label: str
    delta: int
    latency: int

    @property
    def is_clock(self) -> bool:
        return self.label == CLOCK_LABEL

    def to_line(self) -> str:
        return f"{self.label} {self.delta} ({self.latency})"


@dataclass
class Sample:
    events: list[ProbeEvent] = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass
class Trace:
    id_a: Identity | None
    id_b: Identity | None
    samples: list[Sample]
    trace_id: str = "0"
    token: bytes | None = None
    truth_k: int | None = field(default=None, repr=False)


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic channel parameters; delays are log-normal (median, sigma)."""

    clock_miss_prob: float = 0.0
    randomcall_miss_prob: float = 0.0
    spurious_long_delay_prob: float = 0.0
    malformed_sample_prob: float = 0.0
    short_delay_median: float = 150.0
    short_delay_sigma: float = 0.5
    long_delay_median: float = 3900.0
    long_delay_sigma: float = 0.06
    # injected late calls come from unrelated activity; None means "like the marker"
    spurious_delay_median: float | None = None
    spurious_delay_sigma: float = 0.06
    iteration_median: float = 3950.0
    iteration_sigma: float = 0.06
    extra_hit_median: float = 350.0
    extra_hit_sigma: float = 0.25
    seed: int | None = None

    def __post_init__(self):
        for name in ("clock_miss_prob", "randomcall_miss_prob",
                     "spurious_long_delay_prob", "malformed_sample_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.long_delay_median <= self.short_delay_median:
            raise ValueError("long delays must dominate short delays")
        if self.spurious_delay_median is not None and self.spurious_delay_median <= self.short_delay_median:
            raise ValueError("spurious late calls must be slower than short delays")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def default(cls) -> "NoiseModel":
        """The calibrated model shipped with the package."""
        text = resources.files("dragonfly_lab").joinpath("data/default_noise.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path: str | Path) -> "NoiseModel":
        if str(path) == "default":
            return cls.default()
        if str(path) == "noiseless":
            return cls.noiseless()
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_params(self, **kw) -> "NoiseModel":
        return replace(self, **kw)

    @property
    def spurious_median(self) -> float:
        if self.spurious_delay_median is None:
            return self.long_delay_median
        return self.spurious_delay_median

    def malformed_prob_for(self, passes: int) -> float:
        """Corruption probability for a window of ``passes`` loop iterations.

        A descheduled or disturbed spy ruins a sample at a constant rate per
        unit of monitored time, so short loops are corrupted less often.
        """
        keep = (1.0 - self.malformed_sample_prob) ** (passes / MALFORMED_REFERENCE_PASSES)
        return 1.0 - keep

    def spurious_composite(self, n_iterations: int) -> float:
        """Probability that a sample gets at least one injected late call."""
        return 1.0 - (1.0 - self.spurious_long_delay_prob) ** n_iterations


def _lognormal(rng: random.Random, median: float, sigma: float) -> float:
    if sigma <= 0:
        return median
    return rng.lognormvariate(0.0, sigma) * median


def simulate_sample(truth_k: int, noise: NoiseModel, rng: random.Random, *,
                    clocks_per_iter: int = 3, n_iterations: int = 20,
                    early_exit: bool = False, injected: list | None = None) -> Sample:
    """One monitored key exchange whose conversion succeeds at ``truth_k``.

    ``early_exit`` stops the loop at the success iteration (EAP-pwd);
    otherwise ``n_iterations`` passes are executed (SAE). Indices of injected
    late calls are appended to ``injected`` when a list is passed.
    """
    if truth_k < 1:
        raise ValueError("truth_k must be at least 1")
    if clocks_per_iter < 1:
        raise ValueError("clocks_per_iter must be at least 1")
    last = truth_k if early_exit else max(n_iterations, truth_k)
    timeline: list[tuple[float, str]] = []

    # qr/qnr generation happens before the loop and before any clock hit
    t = rng.uniform(5.0e6, 5.6e6)
    for _ in range(PREAMBLE_LENGTH):
        timeline.append((t, RANDOM_LABEL))
        t += _lognormal(rng, noise.iteration_median, noise.iteration_sigma)

    for i in range(1, last + 1):
        start = t
        hit = start
        for j in range(rng.randint(1, clocks_per_iter)):
            if j:
                hit += _lognormal(rng, noise.extra_hit_median, noise.extra_hit_sigma)
            if rng.random() >= noise.clock_miss_prob:
                timeline.append((hit, CLOCK_LABEL))
        if rng.random() >= noise.randomcall_miss_prob:
            timeline.append((hit + _lognormal(rng, noise.short_delay_median,
                                              noise.short_delay_sigma), RANDOM_LABEL))
        end = start + _lognormal(rng, noise.iteration_median, noise.iteration_sigma)
        if i == truth_k:
            late = hit + _lognormal(rng, noise.long_delay_median, noise.long_delay_sigma)
            if rng.random() >= noise.randomcall_miss_prob:
                timeline.append((late, RANDOM_LABEL))
            end = max(end, late + noise.short_delay_median)
        if rng.random() < noise.spurious_long_delay_prob:
            late = hit + _lognormal(rng, noise.spurious_median, noise.spurious_delay_sigma)
            timeline.append((late, RANDOM_LABEL))
            end = max(end, late + noise.short_delay_median)
            if injected is not None:
                injected.append(i)
        t = end

    timeline.sort(key=lambda e: e[0])
    events = []
    last_clock = 0.0
    for when, label in timeline:
        delta = int(round(when - last_clock))
        if label == CLOCK_LABEL:
            latency = int(round(rng.gauss(84, 2)))
            last_clock = when
        else:
            latency = int(round(rng.gauss(90, 3)))
        events.append(ProbeEvent(label, delta, max(latency, 1)))

    sample = Sample(events)
    if noise.malformed_sample_prob and rng.random() < noise.malformed_prob_for(last):
        sample = _corrupt(sample, rng)
    return sample


def _corrupt(sample: Sample, rng: random.Random) -> Sample:
    """Damage a sample the way system noise does: lost probes or cut streams."""
    kind = rng.randrange(4)
    ev = sample.events
    if kind == 0:  # preamble lost
        ev = ev[PREAMBLE_LENGTH:]
    elif kind == 1:  # clock line never observed
        ev = [e for e in ev if not e.is_clock]
    elif kind == 2:  # random-number line never observed
        ev = [e for e in ev if e.is_clock]
    else:  # spy descheduled almost immediately
        ev = ev[:rng.randint(0, PREAMBLE_LENGTH + 1)]
    return Sample(list(ev))


def simulate_trace(ctx: DerivationContext, n_samples: int, noise: NoiseModel,
                   rng: random.Random, *, trace_id: str = "0", clocks_per_iter: int | None = None,
                   truth_k: int | None = None) -> Trace:
    """Run the victim derivation for ground truth, then ``n_samples`` observations.

    EAP-pwd sessions draw a fresh token each time, so only one sample per
    trace is allowed. ``truth_k`` skips the derivation when already known.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    early_exit = ctx.variant is Variant.EAP_PWD
    if early_exit and n_samples != 1:
        raise ValueError("EAP-pwd traces hold exactly one sample")
    if clocks_per_iter is None:
        clocks_per_iter = EAP_CLOCKS_PER_ITER if early_exit else SAE_CLOCKS_PER_ITER
    if truth_k is None:
        result = derive_pwe(ctx, rng=rng)
        if not result.found:
            raise ValueError("derivation found no element; nothing leaks")
        truth_k = result.success_iteration
    samples = [
        simulate_sample(truth_k, noise, rng, clocks_per_iter=clocks_per_iter,
                        n_iterations=ctx.k_max, early_exit=early_exit)
        for _ in range(n_samples)
    ]
    return Trace(ctx.id_a, ctx.id_b, samples, trace_id, ctx.token, truth_k)


# -- text format -------------------------------------------------------------

_EVENT_RE = re.compile(r"^(\S+)\s+(-?\d+)\s+\((\d+)\)$")
_META_RE = re.compile(r"^#!\s*trace\s+(.*)$")


def _identity_str(ident: Identity | None) -> str:
    if ident is None:
        return "-"
    return str(ident) if ident.is_mac else "hex:" + ident.value.hex()


def _parse_identity(text: str) -> Identity | None:
    return None if text == "-" else Identity.parse(text)


def _meta_line(trace: Trace) -> str:
    parts = [f"id={trace.trace_id}", f"a={_identity_str(trace.id_a)}",
             f"b={_identity_str(trace.id_b)}"]
    if trace.token is not None:
        parts.append(f"token={trace.token.hex()}")
    return "#! trace " + " ".join(parts)


def serialize_trace(trace: Trace) -> str:
    """Text form: metadata directive, then samples separated by blank lines."""
    blocks = ["\n".join(e.to_line() for e in s.events) for s in trace.samples]
    return _meta_line(trace) + "\n" + "\n\n".join(blocks) + "\n"


def serialize_traces(traces) -> str:
    return "\n".join(serialize_trace(t) for t in traces)


def parse_trace_text(text: str) -> list[Trace]:
    """Parse one or more traces from text.

    ``#`` lines are comments, ``#! trace key=value ...`` starts a new trace,
    blank lines separate samples and a bare ``...`` marks an elided tail.
    Text without any directive is read as a single anonymous trace.
    """
    traces: list[Trace] = []
    current: Trace | None = None
    sample: list[ProbeEvent] = []

    def flush_sample():
        nonlocal sample
        if sample:
            if current is None:
                start_trace({})
            current.samples.append(Sample(sample))
            sample = []

    def start_trace(meta: dict):
        nonlocal current
        token = bytes.fromhex(meta["token"]) if "token" in meta else None
        current = Trace(_parse_identity(meta.get("a", "-")), _parse_identity(meta.get("b", "-")),
                        [], meta.get("id", str(len(traces))), token)
        traces.append(current)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            flush_sample()
            continue
        meta = _META_RE.match(line)
        if meta:
            flush_sample()
            try:
                fields_ = dict(kv.split("=", 1) for kv in meta.group(1).split())
            except ValueError:
                raise TraceFormatError(lineno, raw, "bad trace directive") from None
            start_trace(fields_)
            continue
        if line.startswith("#") or line == "...":
            continue
        m = _EVENT_RE.match(line)
        if not m:
            raise TraceFormatError(lineno, raw, "expected '<label> <delta> (<latency>)'")
        label, delta, latency = m.group(1), int(m.group(2)), int(m.group(3))
        if delta < 0:
            raise TraceFormatError(lineno, raw, "negative delta")
        if latency <= 0:
            raise TraceFormatError(lineno, raw, "latency must be positive")
        sample.append(ProbeEvent(label, delta, latency))
    flush_sample()
    return traces


# -- JSON-lines format ---------------------------------------------------------

def traces_to_jsonl(traces) -> str:
    """One sample per line; events as ``[label, delta, latency]`` arrays."""
    lines = []
    for t in traces:
        for s in t.samples:
            rec = {"trace_id": t.trace_id, "id_a": _identity_str(t.id_a),
                   "id_b": _identity_str(t.id_b),
                   "events": [[e.label, e.delta, e.latency] for e in s.events]}
            if t.token is not None:
                rec["token"] = t.token.hex()
            lines.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def traces_from_jsonl(text: str) -> list[Trace]:
    by_id: dict[str, Trace] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            events = [ProbeEvent(str(lab), int(d), int(lat)) for lab, d, lat in rec["events"]]
            tid = str(rec["trace_id"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TraceFormatError(lineno, raw, f"bad JSON sample ({exc})") from None
        if tid not in by_id:
            token = bytes.fromhex(rec["token"]) if rec.get("token") else None
            by_id[tid] = Trace(_parse_identity(rec.get("id_a", "-")),
                               _parse_identity(rec.get("id_b", "-")), [], tid, token)
        by_id[tid].samples.append(Sample(events))
    return list(by_id.values())


def load_traces(path: str | Path) -> list[Trace]:
    """Read either format; JSON-lines is detected by a leading ``{``."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return traces_from_jsonl(text)
    return parse_trace_text(text)


def answers_to_jsonl(traces) -> str:
    return "".join(json.dumps({"trace_id": t.trace_id, "truth_k": t.truth_k}) + "\n"
                   for t in traces)


def answers_from_jsonl(text: str) -> dict[str, int]:
    out = {}
    for raw in text.splitlines():
        if raw.strip():
            rec = json.loads(raw)
            out[str(rec["trace_id"])] = rec["truth_k"]
    return out
