"""Online control chart for multi-stream, median-recoded binary data.

Each sampling period delivers one observation per stream.  Raw observations
are recoded to indicators (strictly above the stream's in-control median or
not), summed into a period count, accumulated into a running total,
standardized against the in-control binomial moments, and smoothed by the
EWMA recursion.  Control limits use the exact time-varying variance, so the
chart is statistically valid from the very first period rather than only
after the asymptotic width is reached.

Ties with the median count as 0.  With genuinely continuous data ties have
probability zero; frequent ties pull the indicator rate below 1/2 and
invalidate the in-control law, so the monitor counts them and warns once
when their share of all observations exceeds 1%.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass

from .moments import MomentParams, VarianceAccumulator, exact_mean, variance_step

__all__ = [
    "RAW_MODE",
    "RECODED_MODE",
    "SIGNAL_IN_CONTROL",
    "SIGNAL_ABOVE_UCL",
    "SIGNAL_BELOW_LCL",
    "ChartConfig",
    "MonitorState",
    "ChartPoint",
    "StateMismatchError",
    "new_state",
    "recode",
    "column_total",
    "standardize",
    "update",
    "control_limits",
    "classify_signal",
    "save_state",
    "load_state",
]

RAW_MODE = "raw"
RECODED_MODE = "recoded"

SIGNAL_IN_CONTROL = "in_control"
SIGNAL_ABOVE_UCL = "above_ucl"
SIGNAL_BELOW_LCL = "below_lcl"

TIE_WARN_SHARE = 0.01

STATE_FORMAT = "mspewma-state"
STATE_VERSION = 1


class StateMismatchError(ValueError):
    """A persisted state does not belong to the supplied configuration."""


@dataclass(frozen=True)
class ChartConfig:
    """Chart parameters, fixed for the lifetime of a monitor.

    ``mode`` declares what ``update`` receives: ``"raw"`` observations that
    are recoded here against ``medians``, or ``"recoded"`` 0/1 indicators
    produced upstream.  Under median recoding the in-control proportion is
    exactly 1/2, so p0 = 0.5 is enforced in raw mode.  ``medians`` is one
    in-control median per stream and is required (and used) only in raw
    mode.
    """

    k: int
    lam: float
    L: float = 3.0
    r0: float = 0.0
    p0: float = 0.5
    medians: tuple[float, ...] | None = None
    mode: str = RAW_MODE

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "r0", float(self.r0))
        object.__setattr__(self, "p0", float(self.p0))
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam must be in (0, 1], got {self.lam!r}")
        if not (math.isfinite(self.L) and self.L > 0.0):
            raise ValueError(f"L must be positive, got {self.L!r}")
        if not math.isfinite(self.r0):
            raise ValueError(f"r0 must be finite, got {self.r0!r}")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must be in (0, 1), got {self.p0!r}")
        if self.mode not in (RAW_MODE, RECODED_MODE):
            raise ValueError(f"mode must be {RAW_MODE!r} or {RECODED_MODE!r}, got {self.mode!r}")
        if self.medians is not None:
            medians = tuple(float(m) for m in self.medians)
            if len(medians) != self.k:
                raise ValueError(f"medians must have exactly k={self.k} entries, got {len(medians)}")
            if not all(math.isfinite(m) for m in medians):
                raise ValueError("medians must all be finite")
            object.__setattr__(self, "medians", medians)
        if self.mode == RAW_MODE:
            if self.medians is None:
                raise ValueError("raw mode requires per-stream medians")
            if self.p0 != 0.5:
                raise ValueError(f"median recoding fixes p0 = 0.5, got {self.p0!r}")

    @property
    def moment_params(self) -> MomentParams:
        return MomentParams(lam=self.lam, r0=self.r0)

    def fingerprint(self) -> str:
        """Stable hash of everything the chart math depends on."""
        payload = json.dumps(
            {
                "k": self.k,
                "lam": self.lam,
                "r0": self.r0,
                "L": self.L,
                "p0": self.p0,
                "medians": list(self.medians) if self.medians is not None else None,
                "mode": self.mode,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class MonitorState:
    """Running chart state: sample number, cumulative count, current EWMA.

    Single-writer: one state is advanced by one caller at a time.  The tie
    counters only move in raw mode.
    """

    t: int
    q: int
    r: float
    var_acc: VarianceAccumulator
    tie_count: int = 0
    value_count: int = 0
    tie_warned: bool = False


@dataclass(frozen=True)
class ChartPoint:
    """One emitted monitoring record for sample t."""

    t: int
    c: int
    w: float
    r: float
    mean_t: float
    var_t: float
    lcl: float
    ucl: float
    signal: str


def new_state(config: ChartConfig) -> MonitorState:
    """Fresh monitor at t = 0 with r initialized to the configured r0."""
    return MonitorState(
        t=0,
        q=0,
        r=config.r0,
        var_acc=VarianceAccumulator.from_params(config.moment_params),
    )


def recode(raw_values, config: ChartConfig) -> list[int]:
    """Indicators for one period: 1 where a value strictly exceeds its median.

    Equality with the median yields 0.  Rejects the whole period on wrong
    arity or any non-finite value.
    """
    if config.medians is None:
        raise ValueError("recoding requires per-stream medians in the configuration")
    values = list(raw_values)
    if len(values) != config.k:
        raise ValueError(f"expected {config.k} stream values, got {len(values)}")
    out = []
    for i, v in enumerate(values):
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"stream {i + 1} value is not finite: {v!r}")
        out.append(1 if v > config.medians[i] else 0)
    return out


def column_total(indicators) -> int:
    """Count of streams flagged this period; rejects non-binary entries."""
    total = 0
    for i, x in enumerate(indicators):
        if x not in (0, 1):
            raise ValueError(f"indicator {i + 1} is not binary: {x!r}")
        total += int(x)
    return total


def standardize(q: int, t: int, config: ChartConfig) -> float:
    """Standardized deviation of the cumulative count after t periods."""
    if int(t) != t or t < 1:
        raise ValueError(f"t must be a positive integer, got {t!r}")
    if not 0 <= q <= config.k * t:
        raise ValueError(f"cumulative count {q!r} outside [0, {config.k * t}] at t={t}")
    mu = config.k * config.p0
    sigma2 = config.k * config.p0 * (1.0 - config.p0)
    return (q - mu * t) / math.sqrt(sigma2 * t)


def control_limits(t: int, var_t: float, config: ChartConfig) -> tuple[float, float]:
    """Adaptive limits at sample t: exact mean plus/minus L exact sd."""
    if not var_t > 0.0:
        raise ValueError(f"var_t must be positive, got {var_t!r}")
    center = exact_mean(config.moment_params, t)
    half = config.L * math.sqrt(var_t)
    return center - half, center + half


def classify_signal(r: float, lcl: float, ucl: float) -> str:
    """Single-point rule; a value exactly on a limit counts as in control."""
    if r > ucl:
        return SIGNAL_ABOVE_UCL
    if r < lcl:
        return SIGNAL_BELOW_LCL
    return SIGNAL_IN_CONTROL


def _count_ties(raw_values, medians) -> int:
    return sum(1 for v, m in zip(raw_values, medians) if float(v) == m)


def update(state: MonitorState, values, config: ChartConfig) -> tuple[MonitorState, ChartPoint]:
    """Fold one complete sampling period into the chart.

    ``values`` is the period's k-vector: raw observations in raw mode,
    0/1 indicators in recoded mode.  The whole period is validated before
    any state is touched, so a rejected period leaves the monitor exactly
    as it was.  Returns the advanced state (mutated in place) and the
    emitted point.
    """
    values = list(values)
    if len(values) != config.k:
        raise ValueError(f"expected {config.k} stream values, got {len(values)}")
    if config.mode == RAW_MODE:
        indicators = recode(values, config)
        ties = _count_ties(values, config.medians)
    else:
        indicators = values
        ties = 0
    c = column_total(indicators)

    t_new = state.t + 1
    q_new = state.q + c
    w = standardize(q_new, t_new, config)
    r_new = config.lam * w + (1.0 - config.lam) * state.r

    params = config.moment_params
    _, var_t = variance_step(state.var_acc, params)
    mean_t = exact_mean(params, t_new)
    lcl, ucl = control_limits(t_new, var_t, config)
    signal = classify_signal(r_new, lcl, ucl)

    state.t = t_new
    state.q = q_new
    state.r = r_new
    if config.mode == RAW_MODE:
        state.tie_count += ties
        state.value_count += config.k
        if not state.tie_warned and state.tie_count > TIE_WARN_SHARE * state.value_count:
            state.tie_warned = True
            share = state.tie_count / state.value_count
            warnings.warn(
                f"{state.tie_count} of {state.value_count} observations "
                f"({share:.1%}) tied with their median; the in-control "
                f"rate 1/2 no longer holds",
                stacklevel=2,
            )

    point = ChartPoint(
        t=t_new, c=c, w=w, r=r_new,
        mean_t=mean_t, var_t=var_t, lcl=lcl, ucl=ucl, signal=signal,
    )
    return state, point


def save_state(state: MonitorState, config: ChartConfig) -> str:
    """Serialize the monitor state to a versioned JSON record.

    The record carries a fingerprint of the configuration so it can only be
    restored against the same chart.  Floats survive the round trip exactly.
    """
    record = {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "fingerprint": config.fingerprint(),
        "t": state.t,
        "q": state.q,
        "r": state.r,
        "s": state.var_acc.s,
        "b": state.var_acc.b,
        "tie_count": state.tie_count,
        "value_count": state.value_count,
        "tie_warned": state.tie_warned,
    }
    return json.dumps(record, indent=2)


def load_state(record: str, config: ChartConfig) -> MonitorState:
    """Restore a monitor state saved by ``save_state``.

    Raises StateMismatchError when the record was written under a different
    configuration (any of k, lam, r0, L, p0, medians, mode changed).
    """
    try:
        data = json.loads(record)
    except json.JSONDecodeError as exc:
        raise ValueError(f"state record is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or data.get("format") != STATE_FORMAT:
        raise ValueError("record is not a monitor state")
    if data.get("version") != STATE_VERSION:
        raise ValueError(f"unsupported state version {data.get('version')!r}")
    if data.get("fingerprint") != config.fingerprint():
        raise StateMismatchError(
            "state fingerprint does not match the configuration; "
            "the chart parameters changed since the state was saved"
        )
    acc = VarianceAccumulator(
        lam=config.lam, t=int(data["t"]), s=float(data["s"]), b=float(data["b"])
    )
    return MonitorState(
        t=int(data["t"]),
        q=int(data["q"]),
        r=float(data["r"]),
        var_acc=acc,
        tie_count=int(data["tie_count"]),
        value_count=int(data["value_count"]),
        tie_warned=bool(data["tie_warned"]),
    )
