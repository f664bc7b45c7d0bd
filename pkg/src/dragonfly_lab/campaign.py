"""End-to-end attack runs and the mitigation benchmark.

A campaign simulates the victim under many spoofed identities, parses the
resulting traces, turns clear outcomes into leaks and prunes a dictionary
with them. All randomness flows from one master seed: every trace gets its
own stream, so results do not depend on scheduling.
"""

from __future__ import annotations

import random
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import leak_from_outcome, leaks_to_jsonl, prune_dictionary
from .derive import (
    DerivationContext,
    Identity,
    Mode,
    Variant,
    derive_pwe,
    get_profile,
    operation_trace_fingerprint,
    random_mac,
)
from .interpret import ParserConfig, interpret_trace
from .sidechannel import NoiseModel, answers_to_jsonl, serialize_traces, simulate_trace
from .validation import check_positive_int, check_wordlist

EAP_PEER_ID = Identity.opaque("victim@example.org")
EAP_SERVER_ID = Identity.opaque("radius.example.org")


def stream_seeds(master: int, n: int) -> list[int]:
    """Independent 64-bit seeds for ``n`` sub-streams of ``master``."""
    children = np.random.SeedSequence(master).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


@dataclass
class CampaignConfig:
    dictionary: list[str] | str | Path
    planted: str
    n_identities: int = 16
    samples_per_identity: int = 10
    noise: NoiseModel | str = "default"
    profile: str = "iwd-sae"
    seed: int = 0
    output_dir: str | Path | None = None
    unusable_ceiling: float = 0.5
    n_jobs: int = 1

    def __post_init__(self):
        check_positive_int("n_identities", self.n_identities)
        check_positive_int("samples_per_identity", self.samples_per_identity)
        if get_profile(self.profile).variant is Variant.EAP_PWD and self.samples_per_identity != 1:
            raise ValueError("EAP-pwd sessions yield exactly one sample each")


@dataclass
class CampaignReport:
    outcomes: list[dict]
    leaks: list[dict]
    survivors: list[str]
    success: bool
    n_traces: int
    n_samples: int
    dictionary_size: int
    warnings: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "success": self.success,
            "totals": {"traces": self.n_traces, "samples": self.n_samples,
                       "dictionary": self.dictionary_size, "leaks": len(self.leaks),
                       "survivors": len(self.survivors)},
            "survivors": self.survivors,
            "leaks": self.leaks,
            "outcomes": self.outcomes,
            "warnings": self.warnings,
        }
        if timing:
            out["totals"]["elapsed"] = round(self.elapsed, 3)
        return out


def _read_dictionary(source) -> list[str]:
    if isinstance(source, (str, Path)):
        return [w for w in Path(source).read_text(encoding="utf-8").splitlines() if w]
    return check_wordlist(source)


def _simulate_one(profile_name: str, planted: str, noise: NoiseModel, n_samples: int,
                  ap: Identity, index: int, seed: int):
    rng = random.Random(seed)
    profile = get_profile(profile_name)
    if profile.variant is Variant.EAP_PWD:
        id_a, id_b, token = EAP_PEER_ID, EAP_SERVER_ID, rng.randbytes(4)
    else:
        id_a, id_b, token = random_mac(rng), ap, None
    ctx = DerivationContext.from_profile(profile, id_a, id_b, planted, token=token)
    return simulate_trace(ctx, n_samples, noise, rng, trace_id=str(index))


def simulate_campaign_traces(cfg: CampaignConfig, noise: NoiseModel):
    seeds = stream_seeds(cfg.seed, cfg.n_identities + 1)
    ap = random_mac(random.Random(seeds[0]))
    args = [(cfg.profile, cfg.planted, noise, cfg.samples_per_identity, ap, i, s)
            for i, s in enumerate(seeds[1:])]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(_simulate_one, *zip(*args)))
    return [_simulate_one(*a) for a in args]


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    """Simulate, parse, extract leaks and prune; deterministic in ``cfg.seed``."""
    t0 = time.perf_counter()
    words = _read_dictionary(cfg.dictionary)
    noise = cfg.noise if isinstance(cfg.noise, NoiseModel) else NoiseModel.load(cfg.noise)
    profile = get_profile(cfg.profile)
    traces = simulate_campaign_traces(cfg, noise)

    pcfg = ParserConfig(early_exit=profile.variant is Variant.EAP_PWD)
    outcomes, leaks = [], []
    for trace in traces:
        out = interpret_trace(trace, pcfg)
        outcomes.append(out.to_record(trace.trace_id))
        leak = leak_from_outcome(out, trace)
        if leak is not None:
            leaks.append(leak)

    warnings = []
    unusable = sum(o["kind"] == "warning" for o in outcomes) / len(outcomes)
    if unusable > cfg.unusable_ceiling:
        warnings.append(f"{unusable:.0%} of traces unusable (ceiling {cfg.unusable_ceiling:.0%})")
    if leaks:
        report = prune_dictionary(words, leaks, profile, n_shards=max(cfg.n_jobs, 1),
                                  n_jobs=cfg.n_jobs)
        survivors = report.survivors
    else:
        warnings.append("no leak extracted; dictionary left unpruned")
        survivors = list(words)

    result = CampaignReport(
        outcomes=outcomes,
        leaks=[leak.to_record() for leak in leaks],
        survivors=survivors,
        success=survivors == [cfg.planted],
        n_traces=len(traces),
        n_samples=sum(len(t.samples) for t in traces),
        dictionary_size=len(words),
        warnings=warnings,
        elapsed=time.perf_counter() - t0,
    )
    if cfg.output_dir is not None:
        _write_outputs(Path(cfg.output_dir), traces, leaks)
    return result


def _write_outputs(out: Path, traces, leaks) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces.txt").write_text(serialize_traces(traces))
    (out / "answers.jsonl").write_text(answers_to_jsonl(traces))
    (out / "leaks.jsonl").write_text(leaks_to_jsonl(leaks))


# -- mitigation benchmark ------------------------------------------------------

@dataclass
class BenchReport:
    profile: str
    n_runs: int
    vulnerable_mean: float
    hardened_mean: float
    vulnerable_median: float
    hardened_median: float
    fingerprints_constant: bool
    distinct_fingerprints: int
    time_by_iteration: dict = field(default_factory=dict)

    @property
    def mean_ratio(self) -> float:
        return self.hardened_mean / self.vulnerable_mean

    @property
    def median_ratio(self) -> float:
        return self.hardened_median / self.vulnerable_median

    def to_dict(self) -> dict:
        return {
            "profile": self.profile, "n_runs": self.n_runs,
            "vulnerable_mean_s": self.vulnerable_mean, "hardened_mean_s": self.hardened_mean,
            "vulnerable_median_s": self.vulnerable_median,
            "hardened_median_s": self.hardened_median,
            "mean_ratio": self.mean_ratio, "median_ratio": self.median_ratio,
            "fingerprints_constant": self.fingerprints_constant,
            "distinct_fingerprints": self.distinct_fingerprints,
            "vulnerable_time_by_iteration": self.time_by_iteration,
        }


def _timed(ctx, rng):
    t0 = time.perf_counter()
    res = derive_pwe(ctx, rng=rng)
    return time.perf_counter() - t0, res


def bench_mitigation(profile: str = "iwd-sae", n_runs: int = 1000, seed: int = 0) -> BenchReport:
    """Time vulnerable against hardened derivations of the same random contexts.

    Runs alternate between modes so drift affects both equally. Hardened
    fingerprints are collected for every password to check constant flow.
    """
    n_runs = check_positive_int("n_runs", n_runs, minimum=100)
    prof = get_profile(profile)
    rng = random.Random(seed)
    ap = random_mac(rng)
    vuln, hard = [], []
    by_k: dict[int, list[float]] = {}
    prints = set()
    for i in range(n_runs):
        pw = rng.randbytes(rng.randint(8, 16)).hex()
        token = rng.randbytes(4) if prof.variant is Variant.EAP_PWD else None
        ctx = DerivationContext.from_profile(prof, random_mac(rng), ap, pw, token=token)
        hctx = ctx.with_mode(Mode.HARDENED)
        # swap the order every run so warm caches favour neither mode
        if i % 2:
            th, _ = _timed(hctx, rng)
            tv, res = _timed(ctx, rng)
        else:
            tv, res = _timed(ctx, rng)
            th, _ = _timed(hctx, rng)
        vuln.append(tv)
        hard.append(th)
        by_k.setdefault(res.success_iteration or 0, []).append(tv)
        prints.add(operation_trace_fingerprint(hctx, rng))
    return BenchReport(
        profile, n_runs,
        statistics.fmean(vuln), statistics.fmean(hard),
        statistics.median(vuln), statistics.median(hard),
        len(prints) == 1, len(prints),
        {k: statistics.fmean(v) for k, v in sorted(by_k.items())},
    )
