"""Line-delimited run traces: one self-describing JSON object per iteration.

Each line carries the run metadata (id, method, cost kind, seed, config hash)
plus the full per-iteration observation: weights, raw losses, gradient norms,
the Gram upper triangle (row-major), and every derived metric.  Numeric fields
serialize with shortest-round-trip precision, so parse(serialize(line))
reproduces the exact binary values and identical runs produce byte-identical
files.  Parsing is strict: unknown fields are rejected and a truncated or
malformed line reports what is missing.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .core import MetricRecord

#: Exact serialized field order.  Metadata first, then the per-iteration payload.
TRACE_FIELDS = (
    "run_id", "method", "cost_kind", "seed", "config_hash",
    "iter", "weights", "losses", "grad_norms", "gram_upper",
    "gms_mean", "gcs_mean", "cond_number",
    "ilr", "ilr_std", "ldr", "rl", "rl_std",
    "degenerate_flags",
)

_FLOAT_TUPLES = ("weights", "losses", "grad_norms", "gram_upper", "ilr", "ldr", "rl")
_OPTIONAL_FLOATS = ("gms_mean", "gcs_mean")
_FLOATS = ("cond_number", "ilr_std", "rl_std")


class TraceParseError(ValueError):
    """A trace line failed to parse; the message names what went wrong."""


@dataclass(frozen=True)
class TraceLine:
    """One fully-described trace line (metadata + iteration payload)."""

    run_id: str
    method: str
    cost_kind: str
    seed: int
    config_hash: str
    iter: int
    weights: tuple[float, ...]
    losses: tuple[float, ...]
    grad_norms: tuple[float, ...]
    gram_upper: tuple[float, ...]
    gms_mean: float | None
    gcs_mean: float | None
    cond_number: float
    ilr: tuple[float, ...]
    ilr_std: float
    ldr: tuple[float, ...]
    rl: tuple[float, ...]
    rl_std: float
    degenerate_flags: tuple[str, ...]

    def __post_init__(self) -> None:
        for name in _FLOAT_TUPLES:
            object.__setattr__(self, name,
                               tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "degenerate_flags",
                           tuple(str(v) for v in self.degenerate_flags))


def trace_line_from_record(record: MetricRecord,
                           losses: Iterable[float],
                           grad_norms: Iterable[float],
                           gram_upper: Iterable[float],
                           run_id: str, method: str, cost_kind: str,
                           seed: int, config_hash: str) -> TraceLine:
    """Attach run metadata and raw observations to a metric record."""
    return TraceLine(
        run_id=run_id, method=method, cost_kind=cost_kind, seed=seed,
        config_hash=config_hash,
        iter=record.iteration,
        weights=record.weights,
        losses=tuple(float(v) for v in losses),
        grad_norms=tuple(float(v) for v in grad_norms),
        gram_upper=tuple(float(v) for v in gram_upper),
        gms_mean=record.gms_mean,
        gcs_mean=record.gcs_mean,
        cond_number=record.cond_number,
        ilr=record.ilr,
        ilr_std=record.ilr_std,
        ldr=record.ldr,
        rl=record.rl,
        rl_std=record.rl_std,
        degenerate_flags=record.degenerate_flags,
    )


def serialize_trace_line(line: TraceLine) -> str:
    """Compact JSON with the fixed field order; floats round-trip exactly."""
    payload = {}
    for name in TRACE_FIELDS:
        value = getattr(line, name)
        if isinstance(value, tuple):
            value = list(value)
        payload[name] = value
    return json.dumps(payload, separators=(",", ":"), allow_nan=False)


def parse_trace_line(text: str, line_number: int | None = None) -> TraceLine:
    """Strict inverse of :func:`serialize_trace_line`."""
    where = f"line {line_number}: " if line_number is not None else ""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"{where}invalid JSON ({exc.msg} at column {exc.colno})")
    if not isinstance(payload, dict):
        raise TraceParseError(f"{where}trace line must be a JSON object")
    unknown = set(payload) - set(TRACE_FIELDS)
    if unknown:
        raise TraceParseError(f"{where}unknown field(s): {', '.join(sorted(unknown))}")
    missing = [name for name in TRACE_FIELDS if name not in payload]
    if missing:
        raise TraceParseError(f"{where}missing field(s): {', '.join(missing)}")

    def fail(msg: str) -> TraceParseError:
        return TraceParseError(where + msg)

    kwargs = {}
    for name in ("run_id", "method", "cost_kind", "config_hash"):
        v = payload[name]
        if not isinstance(v, str):
            raise fail(f"field {name!r} must be a string")
        kwargs[name] = v
    for name in ("seed", "iter"):
        v = payload[name]
        if not isinstance(v, int) or isinstance(v, bool):
            raise fail(f"field {name!r} must be an integer")
        kwargs[name] = v
    for name in _FLOAT_TUPLES:
        v = payload[name]
        if not isinstance(v, list) or not all(
                isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
            raise fail(f"field {name!r} must be an array of numbers")
        kwargs[name] = tuple(float(e) for e in v)
    for name in _OPTIONAL_FLOATS:
        v = payload[name]
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise fail(f"field {name!r} must be a number or null")
        kwargs[name] = None if v is None else float(v)
    for name in _FLOATS:
        v = payload[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise fail(f"field {name!r} must be a number")
        kwargs[name] = float(v)
    flags = payload["degenerate_flags"]
    if not isinstance(flags, list) or not all(isinstance(e, str) for e in flags):
        raise fail("field 'degenerate_flags' must be an array of strings")
    kwargs["degenerate_flags"] = tuple(flags)
    return TraceLine(**kwargs)


def write_trace(path, lines: Iterable[TraceLine]) -> int:
    """Write lines to ``path``; returns the number written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(serialize_trace_line(line))
            fh.write("\n")
            count += 1
    return count


def iter_trace(path) -> Iterator[TraceLine]:
    """Stream parsed lines from a trace file (strict)."""
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            yield parse_trace_line(raw, line_number=i)


def read_trace(path) -> list[TraceLine]:
    return list(iter_trace(path))


def config_hash(config_dict: dict) -> str:
    """Stable short hash of a canonicalized configuration mapping."""
    canon = json.dumps(config_dict, sort_keys=True, separators=(",", ":"),
                       allow_nan=False, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
