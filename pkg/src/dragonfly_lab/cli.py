"""dragonfly-lab: command-line front end.

Every randomized command takes ``--seed``; without it a seed is drawn and
echoed on stderr so the run can be replayed. ``--config FILE`` reads
``key = value`` lines whose keys are the long flag names (dashes or
underscores); flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 domain failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import secrets
import sys
from pathlib import Path

from . import __version__
from .attack import AttackModel, leaks_from_jsonl, plan_table, prune_dictionary
from .calibration import calibrate, reliability_curve, reliability_point
from .campaign import CampaignConfig, bench_mitigation, run_campaign, stream_seeds
from .derive import (
    DerivationContext,
    Identity,
    Mode,
    Variant,
    derive_pwe,
    get_profile,
    random_mac,
    scan_high_iteration,
)
from .handshake import run_handshake
from .interpret import ParserConfig, evaluate, interpret_trace
from .sidechannel import (
    NoiseModel,
    TraceFormatError,
    answers_from_jsonl,
    answers_to_jsonl,
    load_traces,
    serialize_traces,
    simulate_trace,
    traces_to_jsonl,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DOMAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args, payload, text: str, out=None):
    """Write ``payload`` as JSON or ``text`` depending on ``--format``."""
    body = json.dumps(payload, indent=2, sort_keys=True) + "\n" if args.format == "json" else text
    if out:
        Path(out).write_text(body)
    else:
        sys.stdout.write(body)


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _identity(text: str | None, name: str) -> Identity:
    if not text:
        raise UsageError(f"--{name} is required")
    try:
        return Identity.parse(text)
    except ValueError as exc:
        raise UsageError(f"--{name}: {exc}") from None


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(str(exc)) from None


def _token(text: str | None, profile, rng) -> bytes | None:
    if get_profile(profile).variant is not Variant.EAP_PWD:
        return None
    if text:
        try:
            tok = bytes.fromhex(text)
        except ValueError:
            raise UsageError("--token must be hex") from None
        if len(tok) != 4:
            raise UsageError("--token must be 4 bytes")
        return tok
    return rng.randbytes(4)


# -- commands ------------------------------------------------------------------

def cmd_derive(args) -> int:
    _need(args, "password")
    rng = random.Random(_resolve_seed(args))
    token = _token(args.token, args.profile, rng)
    ctx = DerivationContext.from_profile(args.profile, _identity(args.id_a, "id-a"),
                                         _identity(args.id_b, "id-b"), args.password,
                                         Mode(args.mode), token)
    res = derive_pwe(ctx, rng=rng)
    payload = {
        "profile": args.profile, "mode": ctx.mode.value,
        "success_iteration": res.success_iteration,
        "iterations_executed": res.iterations_executed,
        "element_x": None if not res.found else format(res.element.x, "064x"),
    }
    if token is not None:
        payload["token"] = token.hex()
    if res.found:
        text = (f"success_iteration: {res.success_iteration}\n"
                f"element_x: {payload['element_x']}\n"
                f"iterations_executed: {res.iterations_executed}\n")
    else:
        text = f"not found within {res.iterations_executed} iterations\n"
    _emit(args, payload, text)
    return EXIT_OK if res.found else EXIT_DOMAIN


def _fingerprint(key: bytes | None) -> str | None:
    return None if key is None else hashlib.sha256(key).hexdigest()[:16]


def cmd_handshake_demo(args) -> int:
    _need(args, "password_a")
    rng = random.Random(_resolve_seed(args))
    pw_b = args.password_b if args.password_b is not None else args.password_a
    out = run_handshake(args.password_a, pw_b, _identity(args.id_a, "id-a"),
                        _identity(args.id_b, "id-b"), args.profile, rng=rng,
                        mode=Mode(args.mode), b_first=args.b_first)
    payload = {"success": out.success, "stage": out.stage, "error": out.error,
               "mk_a": _fingerprint(out.mk_a), "mk_b": _fingerprint(out.mk_b),
               "kck_a": _fingerprint(out.kck_a), "kck_b": _fingerprint(out.kck_b)}
    if out.success:
        text = (f"outcome: success\nmk fingerprint A: {payload['mk_a']}\n"
                f"mk fingerprint B: {payload['mk_b']}\n")
    else:
        text = f"outcome: failure at {out.stage}: {out.error}\n"
    _emit(args, payload, text)
    return EXIT_OK if out.success else EXIT_DOMAIN


def _load_noise(spec: str) -> NoiseModel:
    try:
        return NoiseModel.load(spec)
    except (OSError, ValueError, TypeError) as exc:
        raise DataError(f"noise model {spec!r}: {exc}") from None


def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    profile = get_profile(args.profile)
    noise = _load_noise(args.noise)
    if profile.variant is Variant.EAP_PWD and args.samples != 1:
        raise UsageError("EAP-pwd traces hold exactly one sample; use --samples 1")
    seeds = stream_seeds(seed, args.traces + 1)
    ap = _identity(args.id_b, "id-b") if args.id_b else random_mac(random.Random(seeds[0]))
    traces = []
    for i, s in enumerate(seeds[1:]):
        rng = random.Random(s)
        pw = args.password if args.password is not None else rng.randbytes(8).hex()
        id_a = _identity(args.id_a, "id-a") if args.id_a else random_mac(rng)
        token = rng.randbytes(4) if profile.variant is Variant.EAP_PWD else None
        ctx = DerivationContext.from_profile(profile, id_a, ap, pw, token=token)
        try:
            traces.append(simulate_trace(ctx, args.samples, noise, rng, trace_id=str(i)))
        except ValueError as exc:
            print(f"trace {i} skipped: {exc}", file=sys.stderr)
    body = traces_to_jsonl(traces) if args.format == "json" else serialize_traces(traces)
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)
    if args.answers:
        Path(args.answers).write_text(answers_to_jsonl(traces))
    return EXIT_OK


def cmd_parse_traces(args) -> int:
    _need(args, "traces")
    try:
        traces = load_traces(args.traces)
    except OSError as exc:
        raise DataError(str(exc)) from None
    except TraceFormatError as exc:
        raise DataError(f"{args.traces}: {exc}") from None
    early = args.early_exit or (args.profile and get_profile(args.profile).variant
                                is Variant.EAP_PWD)
    cfg = ParserConfig(long_delay_threshold=args.threshold, decision_margin=args.margin,
                       early_exit=bool(early))
    outcomes = [interpret_trace(t, cfg) for t in traces]
    records = [o.to_record(t.trace_id) for o, t in zip(outcomes, traces)]
    if args.format == "json":
        body = "".join(json.dumps(r) + "\n" for r in records)
    else:
        lines = []
        for r in records:
            if r["kind"] == "exact":
                lines.append(f"trace {r['trace_id']}: Exact({r['k']})")
            elif r["kind"] == "lower_bound":
                cands = ",".join(map(str, r["candidates"]))
                lines.append(f"trace {r['trace_id']}: LowerBound({r['k']}, {{{cands}}})")
            else:
                lines.append(f"trace {r['trace_id']}: Warning({r['reason']})")
        body = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(body)
    else:
        sys.stdout.write(body)
    if args.answers:
        answers = answers_from_jsonl(_read_text(args.answers))
        try:
            truths = [answers[t.trace_id] for t in traces]
        except KeyError as exc:
            raise DataError(f"no answer for trace {exc}") from None
        m = evaluate(outcomes, truths)
        print(json.dumps({k: round(v, 4) if isinstance(v, float) else v for k, v in m.items()},
                         sort_keys=True), file=sys.stderr)
    if traces and all(o.kind == "warning" for o in outcomes):
        return EXIT_DOMAIN
    return EXIT_OK


def _words(path) -> list[str]:
    return [w for w in _read_text(path).splitlines() if w]


def cmd_prune(args) -> int:
    _need(args, "dictionary", "leaks")
    words = _words(args.dictionary)
    try:
        leaks = leaks_from_jsonl(_read_text(args.leaks))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{args.leaks}: {exc}") from None
    if not leaks:
        raise DataError("no leaks given; nothing to prune with")
    report = prune_dictionary(words, leaks, args.profile, n_shards=args.shards, n_jobs=args.jobs)
    body = "".join(w + "\n" for w in report.survivors)
    if args.out:
        Path(args.out).write_text(body)
    summary = {"input": report.input_size, "survivors": len(report.survivors),
               "eliminated_by_leak": report.eliminated_by}
    if args.format == "json":
        payload = dict(summary, survivor_list=report.survivors)
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif not args.out:
        sys.stdout.write(body)
    print(f"{report.input_size} -> {len(report.survivors)} candidates", file=sys.stderr)
    return EXIT_OK


def _sizes(text: str) -> list[int]:
    try:
        return [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes: cannot parse {text!r}") from None


def cmd_plan(args) -> int:
    sizes = _sizes(args.sizes)
    model = AttackModel(p_s=args.p_s, k_max=args.k_max)
    rows = plan_table(sizes, args.target, model)
    lines = [f"{'L':>12}  {'traces':>6}  {'expected':>8}  {'baseline':>8}  {'b.expected':>10}"]
    for r in rows:
        lines.append(f"{r['L']:>12.3g}  {r['traces']:>6}  {r['traces_expected']:>8}  "
                     f"{r['baseline_traces']:>8}  {r['baseline_expected']:>10}")
    _emit(args, {"target": args.target, "p_s": args.p_s, "rows": rows}, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    seed = _resolve_seed(args)
    if args.evaluate:
        noise = _load_noise(args.evaluate)
        curve = reliability_curve(noise, args.traces, seed)
        eap = reliability_point(noise, 1, args.traces, seed + 100, early_exit=True)
        payload = {"curve": {str(k): v for k, v in curve.items()}, "eap": eap}
        text = "".join(f"{k:>2} samples: accuracy {v['accuracy']:.3f} usable {v['usable']:.3f}\n"
                       for k, v in curve.items())
        text += f"eap-pwd: exact {eap['exact_rate']:.3f} soft {eap['soft_rate']:.3f}\n"
        _emit(args, payload, text)
        return EXIT_OK
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    base = _load_noise(args.start) if args.start else None
    report = calibrate(base=base, n_iter=args.iterations, n_traces=args.traces, seed=seed,
                       refine_top=args.refine_top, refine_traces=args.refine_traces, log=log)
    if args.out:
        Path(args.out).write_text(json.dumps(report.noise.to_dict(), indent=2) + "\n")
    text = "".join(f"{k}: {v:+.3f}\n" for k, v in report.distances.items())
    text += f"within tolerance: {report.within_tolerance}\n"
    _emit(args, report.to_dict(), text)
    return EXIT_OK if report.within_tolerance else EXIT_DOMAIN


def cmd_bench_mitigation(args) -> int:
    if args.runs < 100:
        raise UsageError("--runs must be at least 100")
    rep = bench_mitigation(args.profile, args.runs, _resolve_seed(args))
    text = (f"vulnerable mean {rep.vulnerable_mean * 1e3:.3f} ms, "
            f"median {rep.vulnerable_median * 1e3:.3f} ms\n"
            f"hardened   mean {rep.hardened_mean * 1e3:.3f} ms, "
            f"median {rep.hardened_median * 1e3:.3f} ms\n"
            f"ratio mean {rep.mean_ratio:.3f}, median {rep.median_ratio:.3f}\n"
            f"hardened fingerprints constant: {rep.fingerprints_constant}\n")
    _emit(args, rep.to_dict(), text)
    return EXIT_OK if rep.fingerprints_constant else EXIT_DOMAIN


def cmd_campaign(args) -> int:
    _need(args, "dictionary", "planted")
    words = _words(args.dictionary)
    if args.planted not in words:
        words.append(args.planted)
    cfg = CampaignConfig(words, args.planted, args.identities, args.samples,
                         _load_noise(args.noise), args.profile, _resolve_seed(args),
                         args.out_dir, args.ceiling, args.jobs)
    rep = run_campaign(cfg)
    payload = rep.to_dict(timing=args.timing)
    t = payload["totals"]
    text = (f"traces: {t['traces']} samples: {t['samples']} leaks: {t['leaks']}\n"
            f"dictionary: {t['dictionary']} survivors: {t['survivors']}\n"
            f"success: {rep.success}\n")
    text += "".join(f"warning: {w}\n" for w in rep.warnings)
    if args.timing:
        text += f"elapsed: {t['elapsed']} s\n"
    _emit(args, payload, text)
    return EXIT_OK if rep.success else EXIT_DOMAIN


def cmd_scan(args) -> int:
    _need(args, "dictionary")
    hits = scan_high_iteration(_words(args.dictionary), _identity(args.id_a, "id-a"),
                               _identity(args.id_b, "id-b"), args.threshold, limit=args.limit)
    payload = [{"password": pw, "iterations": k} for pw, k in hits]
    text = "".join(f"{pw}\t{k if k is not None else f'>{args.limit}'}\n" for pw, k in hits)
    _emit(args, payload, text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default: drawn and printed)")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--config", help="key = value file mirroring the flags")

    parser = _Parser(prog="dragonfly-lab",
                     description="Dragonfly derivation, leakage simulation and attack toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    def ids(p):
        p.add_argument("--id-a", help="identity A: MAC address or hex:<bytes>")
        p.add_argument("--id-b", help="identity B: MAC address or hex:<bytes>")

    def prof(p, default="iwd-sae"):
        p.add_argument("--profile", default=default,
                       choices=("iwd-sae", "rfc7664-sae", "eap-pwd"))

    p = add("derive", cmd_derive, "convert a password to its password element")
    p.add_argument("--password")
    ids(p)
    prof(p)
    p.add_argument("--mode", choices=("vulnerable", "hardened"), default="vulnerable")
    p.add_argument("--token", help="EAP-pwd session token, 8 hex digits (default: random)")

    p = add("handshake-demo", cmd_handshake_demo, "run a commit/confirm exchange in-process")
    p.add_argument("--password-a")
    p.add_argument("--password-b", help="defaults to --password-a")
    ids(p)
    prof(p)
    p.add_argument("--mode", choices=("vulnerable", "hardened"), default="vulnerable")
    p.add_argument("--b-first", action="store_true", help="party B transmits first")

    p = add("simulate", cmd_simulate, "generate spy traces of simulated derivations")
    p.add_argument("--password", help="victim password (default: random per trace)")
    ids(p)
    prof(p)
    p.add_argument("--traces", type=int, default=10)
    p.add_argument("--samples", type=int, default=10, help="samples per trace")
    p.add_argument("--noise", default="default", help="default, noiseless or a JSON file")
    p.add_argument("--out", help="trace file (default: stdout)")
    p.add_argument("--answers", help="write the ground-truth sidecar here")

    p = add("parse-traces", cmd_parse_traces, "interpret trace files into iteration guesses")
    p.add_argument("traces", nargs="?", help="trace file, text or JSON-lines")
    p.add_argument("--answers", help="ground-truth sidecar; metrics go to stderr")
    p.add_argument("--profile", default=None, choices=("iwd-sae", "rfc7664-sae", "eap-pwd"))
    p.add_argument("--early-exit", action="store_true", help="loop stops on success (EAP-pwd)")
    p.add_argument("--threshold", type=float, default=1500.0, help="long delay, cycles")
    p.add_argument("--margin", type=float, default=2.0, help="decision margin")
    p.add_argument("--out")

    p = add("prune", cmd_prune, "eliminate dictionary words inconsistent with leaks")
    p.add_argument("--dictionary")
    p.add_argument("--leaks", help="JSON-lines leak file")
    prof(p)
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="survivor file")

    p = add("plan", cmd_plan, "traces needed to prune dictionaries of given sizes")
    p.add_argument("--sizes", default="1.4e7,3.5e7,5.5e8,4.6e14")
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--p-s", type=float, default=0.5)
    p.add_argument("--k-max", type=int, default=20)

    p = add("calibrate", cmd_calibrate, "fit the noise model to the reliability anchors")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--traces", type=int, default=400, help="traces per anchor point")
    p.add_argument("--out", help="write the fitted noise model JSON here")
    p.add_argument("--evaluate", help="only measure the curve of this noise model")
    p.add_argument("--start", help="noise model to start the search from")
    p.add_argument("--refine-top", type=int, default=5,
                   help="leaders re-scored on a fresh stream (0 disables)")
    p.add_argument("--refine-traces", type=int, help="traces for re-scoring (default 3x --traces)")
    p.add_argument("--verbose", action="store_true")

    p = add("bench-mitigation", cmd_bench_mitigation, "time vulnerable vs hardened derivation")
    prof(p)
    p.add_argument("--runs", type=int, default=1000)

    p = add("campaign", cmd_campaign, "simulate, parse, extract leaks and prune end to end")
    p.add_argument("--dictionary")
    p.add_argument("--planted", help="victim password, added to the dictionary if absent")
    p.add_argument("--identities", type=int, default=16)
    p.add_argument("--samples", type=int, default=10, help="samples per identity")
    p.add_argument("--noise", default="default")
    prof(p)
    p.add_argument("--out-dir")
    p.add_argument("--ceiling", type=float, default=0.5, help="unusable-trace warning level")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall-clock in the report")

    p = add("scan", cmd_scan, "list passwords needing more than THRESHOLD iterations")
    p.add_argument("--dictionary")
    ids(p)
    p.add_argument("--threshold", type=int, default=20)
    p.add_argument("--limit", type=int, default=256)
    return parser


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Keys are flag names."""
    out = {}
    for lineno, raw in enumerate(_read_text(path).splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser, argv, args):
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise UsageError(f"config key {key!r} is not a flag of {args.command}")
        if action.nargs == 0:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = action.type(value) if action.type else value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        return args.func(args)
    except UsageError as exc:
        print(f"dragonfly-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"dragonfly-lab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        print(f"dragonfly-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
