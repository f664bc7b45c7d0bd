"""Dragonfly password-element derivation, leakage simulation and attack toolkit."""

__version__ = "0.1.0"

from .ec import P256, P384, CurveParams, Point, get_curve  # noqa: E402
from .derive import (  # noqa: E402
    DerivationContext,
    DerivationResult,
    Identity,
    Mode,
    Variant,
    derive_pwe,
    get_profile,
)
from .handshake import run_handshake  # noqa: E402
from .sidechannel import NoiseModel, parse_trace_text, serialize_trace, simulate_trace  # noqa: E402
from .interpret import ParserConfig, TraceInterpreter, interpret_trace  # noqa: E402
from .attack import AttackModel, DictionaryPruner, Leak, plan_table, prune_dictionary  # noqa: E402

__all__ = [
    "AttackModel", "CurveParams", "DerivationContext", "DerivationResult", "DictionaryPruner",
    "Identity", "Leak", "Mode", "NoiseModel", "P256", "P384", "ParserConfig", "Point",
    "TraceInterpreter", "Variant", "derive_pwe", "get_curve", "get_profile", "interpret_trace",
    "parse_trace_text", "plan_table", "prune_dictionary", "run_handshake", "serialize_trace",
    "simulate_trace",
]
