"""Point-neuron dynamics: gating kinetics, ionic currents, fused HH/LIF stepping.

Units follow the conductance-based convention throughout:
potential mV, time ms, capacitance uF/cm^2, conductance mS/cm^2,
current uA/cm^2, rates 1/ms.

The membrane update is the explicit Euler form

    V' = V + (dt / c_m) * (i_ext - sum_X g_X * eta_X(p) * (V - E_X))

and each gate follows the exponential Euler update toward its steady state,
both evaluated at the pre-update potential (operator splitting).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalOverflowError, UsageError

# Below this |denominator| the linoid rate switches to its analytic limit.
LINOID_EPS = 1e-7


# ---------------------------------------------------------------------------
# Voltage-dependent rate functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFn:
    """Parameterized opening/closing rate, one of three standard forms.

    kind = "linoid":   a * x / (1 - exp(-x / b)),  x = v - v0
    kind = "exp":      a * exp(-(v - v0) / b)
    kind = "sigmoid":  a / (1 + exp(-(v - v0) / b))

    The linoid form has a removable singularity at v = v0; when the
    denominator magnitude drops below LINOID_EPS the analytic limit
    (value a*b, slope a/2) is returned instead.
    """

    kind: str
    a: float
    v0: float
    b: float

    def __post_init__(self):
        if self.kind not in ("linoid", "exp", "sigmoid"):
            raise ConfigurationError(f"unknown rate kind {self.kind!r}")
        if self.b == 0.0:
            raise ConfigurationError("rate slope parameter b must be nonzero")

    def __call__(self, v):
        x = np.asarray(v, dtype=np.float64) - self.v0
        if self.kind == "exp":
            return self.a * np.exp(-x / self.b)
        if self.kind == "sigmoid":
            return self.a / (1.0 + np.exp(-x / self.b))
        den = 1.0 - np.exp(-x / self.b)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.a * x / den
        return np.where(np.abs(den) < LINOID_EPS, self.a * self.b, out)

    def deriv(self, v):
        """d(rate)/dV, analytic."""
        x = np.asarray(v, dtype=np.float64) - self.v0
        if self.kind == "exp":
            return -(self.a / self.b) * np.exp(-x / self.b)
        if self.kind == "sigmoid":
            s = 1.0 / (1.0 + np.exp(-x / self.b))
            return (self.a / self.b) * s * (1.0 - s)
        e = np.exp(-x / self.b)
        den = 1.0 - e
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.a * (den - x * e / self.b) / (den * den)
        return np.where(np.abs(den) < LINOID_EPS, 0.5 * self.a, out)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "v0": self.v0, "b": self.b}

    @staticmethod
    def from_dict(d: dict) -> "RateFn":
        try:
            return RateFn(str(d["kind"]), float(d["a"]), float(d["v0"]), float(d["b"]))
        except KeyError as k:
            raise ConfigurationError(f"rate function missing key {k}") from None


# ---------------------------------------------------------------------------
# Channel description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateSpec:
    """One gating sub-unit: opening rate alpha(V), closing rate beta(V),
    and the integer power this gate contributes to the channel conductance."""

    name: str
    alpha: RateFn
    beta: RateFn
    exponent: int = 1

    def __post_init__(self):
        if self.exponent < 0 or int(self.exponent) != self.exponent:
            raise ConfigurationError(f"gate {self.name}: exponent must be a non-negative integer")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "exponent": self.exponent,
            "alpha": self.alpha.to_dict(),
            "beta": self.beta.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "GateSpec":
        return GateSpec(
            name=str(d["name"]),
            alpha=RateFn.from_dict(d["alpha"]),
            beta=RateFn.from_dict(d["beta"]),
            exponent=int(d.get("exponent", 1)),
        )


@dataclass(frozen=True)
class ChannelSpec:
    """An ionic conductance: g_max * prod_i p_i^k_i * (V - e_rev).

    Leak channels carry an empty gate tuple (unit open fraction).
    """

    name: str
    g_max: float
    e_rev: float
    gates: tuple[GateSpec, ...] = ()

    def __post_init__(self):
        if self.g_max < 0:
            raise ConfigurationError(f"channel {self.name}: g_max must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "g_max": self.g_max,
            "e_rev": self.e_rev,
            "gates": [g.to_dict() for g in self.gates],
        }

    @staticmethod
    def from_dict(d: dict) -> "ChannelSpec":
        return ChannelSpec(
            name=str(d["name"]),
            g_max=float(d["g_max"]),
            e_rev=float(d["e_rev"]),
            gates=tuple(GateSpec.from_dict(g) for g in d.get("gates", [])),
        )


@dataclass(frozen=True)
class HHParams:
    """Full parameter set for a conductance-based point neuron.

    rate_scale multiplies every gate's alpha and beta; it is the kinetics
    speed knob (1/tau) that shifts the neuron's frequency selectivity.
    """

    c_m: float
    channels: tuple[ChannelSpec, ...]
    v_rest: float
    v_theta: float
    dt: float
    rate_scale: float = 1.0
    dtype: type = np.float64

    def __post_init__(self):
        if self.c_m <= 0:
            raise ConfigurationError("c_m must be > 0")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if self.rate_scale <= 0:
            raise ConfigurationError("rate_scale must be > 0")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"channel names must be unique, got {names}")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def gate_layout(self) -> tuple[tuple[int, GateSpec], ...]:
        """Flattened (channel_index, gate) pairs, in declaration order."""
        return tuple((ci, g) for ci, ch in enumerate(self.channels) for g in ch.gates)

    @property
    def n_gates(self) -> int:
        return sum(len(ch.gates) for ch in self.channels)

    def with_(self, **kw) -> "HHParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "c_m": self.c_m,
            "dt": self.dt,
            "v_rest": self.v_rest,
            "v_theta": self.v_theta,
            "rate_scale": self.rate_scale,
            "channels": [c.to_dict() for c in self.channels],
        }

    @staticmethod
    def from_dict(d: dict) -> "HHParams":
        try:
            return HHParams(
                c_m=float(d["c_m"]),
                channels=tuple(ChannelSpec.from_dict(c) for c in d["channels"]),
                v_rest=float(d.get("v_rest", -65.0)),
                v_theta=float(d.get("v_theta", 0.0)),
                dt=float(d["dt"]),
                rate_scale=float(d.get("rate_scale", 1.0)),
            )
        except KeyError as k:
            raise ConfigurationError(f"neuron parameters missing key {k}") from None


@dataclass(frozen=True)
class LIFParams:
    """Leaky integrate-and-fire baseline, dimensionless potential units."""

    tau: float
    v_theta: float
    v_reset: float
    dt: float
    dtype: type = np.float64

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if self.v_theta <= self.v_reset:
            raise ConfigurationError("v_theta must exceed v_reset")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------

@dataclass
class NeuronState:
    """Iterated simulation state: potential plus stacked gate probabilities.

    v has an arbitrary batch shape S; gates has shape (n_gates,) + S in
    the order given by HHParams.gate_layout (empty leading axis for LIF).
    """

    v: np.ndarray
    gates: np.ndarray

    def copy(self) -> "NeuronState":
        return NeuronState(self.v.copy(), self.gates.copy())


@dataclass
class Trace:
    """Time-major record of a simulation run."""

    v_series: np.ndarray       # (T,) + S
    spike_series: np.ndarray   # (T,) + S, bool
    dt: float

    def __post_init__(self):
        if self.v_series.shape != self.spike_series.shape:
            raise UsageError("v_series and spike_series must share shape")

    @property
    def n_steps(self) -> int:
        return self.v_series.shape[0]

    def spike_count(self) -> np.ndarray:
        return self.spike_series.sum(axis=0)

    def spike_times(self, dt_offset: float = 1.0) -> np.ndarray:
        """Spike times in ms for a scalar-batch trace."""
        if self.v_series.ndim != 1:
            raise UsageError("spike_times requires a single-neuron trace")
        return (np.flatnonzero(self.spike_series) + dt_offset) * self.dt

    def to_csv(self, path) -> None:
        """Write columns t_ms, neuron_id, v_mV, spike (one row per neuron per step)."""
        v = self.v_series.reshape(self.n_steps, -1)
        s = self.spike_series.reshape(self.n_steps, -1)
        with open(path, "w") as f:
            f.write("t_ms,neuron_id,v_mV,spike\n")
            for t in range(self.n_steps):
                t_ms = (t + 1) * self.dt
                for n in range(v.shape[1]):
                    f.write(f"{t_ms:.6g},{n},{v[t, n]!r},{int(s[t, n])}\n")


def init_state(params: HHParams | LIFParams, shape: tuple[int, ...] = (), v0: float | None = None) -> NeuronState:
    """Fresh state at rest: potential at v0 (default rest) and every gate at
    its steady-state open fraction for that potential."""
    if isinstance(params, LIFParams):
        v = np.full(shape, 0.0 if v0 is None else v0, dtype=params.dtype)
        return NeuronState(v, np.zeros((0,) + shape, dtype=params.dtype))
    if v0 is None:
        v0 = params.v_rest
    v = np.full(shape, v0, dtype=params.dtype)
    layout = params.gate_layout
    gates = np.empty((len(layout),) + shape, dtype=params.dtype)
    for gi, (_, gate) in enumerate(layout):
        a, b = gate_rates(gate, np.float64(v0), params.rate_scale)
        s = a + b
        gates[gi] = a / s if s > 0 else 0.5
    return NeuronState(v, gates)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def gate_rates(gate: GateSpec, v, rate_scale: float = 1.0):
    """Evaluate (alpha(V), beta(V)), finite everywhere including removable
    singularities, optionally sped up by rate_scale."""
    a = gate.alpha(v)
    b = gate.beta(v)
    if rate_scale != 1.0:
        a = a * rate_scale
        b = b * rate_scale
    return a, b


def gate_step(p, alpha, beta, dt: float):
    """Exponential Euler update: p_inf + (p - p_inf) * exp(-dt*(alpha+beta)).

    A zero total rate leaves p unchanged. The result is a convex combination
    of p and p_inf, so it stays in [0, 1] whenever p does.
    """
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(alpha + beta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_inf = np.where(s > 0, alpha / np.where(s > 0, s, 1.0), p)
    e = np.exp(-dt * s)
    return p_inf + (p - p_inf) * e


def int_pow(p, k: int):
    """p**k by left-fold multiplication; the one power sequence both the
    fused and reference paths share."""
    if k == 0:
        return np.ones_like(p)
    out = p
    for _ in range(k - 1):
        out = out * p
    return out


def ionic_current(state: NeuronState, channels: Sequence[ChannelSpec]):
    """Sum over channels of g_max * prod_i p_i^k_i * (V - e_rev)."""
    n_gates = sum(len(ch.gates) for ch in channels)
    if state.gates.shape[0] != n_gates:
        raise ConfigurationError(
            f"state carries {state.gates.shape[0]} gates but channels define {n_gates}"
        )
    v = state.v
    total = np.zeros_like(v)
    gi = 0
    for ch in channels:
        eta = 1.0
        for g in ch.gates:
            eta = eta * int_pow(state.gates[gi], g.exponent)
            gi += 1
        total = total + ch.g_max * eta * (v - ch.e_rev)
    return total


def spike_detect(v_prev, v_new, v_theta: float):
    """Upward threshold crossing: v_prev < v_theta <= v_new."""
    return np.logical_and(np.less(v_prev, v_theta), np.greater_equal(v_new, v_theta))


# ---------------------------------------------------------------------------
# Fused HH step
# ---------------------------------------------------------------------------

class Workspace:
    """Reusable scratch buffers so the fused step allocates nothing per call.

    Holds a fixed number of flat vectors regardless of how many gates or
    channels the parameter set defines.
    """

    def __init__(self, shape: tuple[int, ...], dtype=np.float64):
        n = int(np.prod(shape, dtype=np.int64))
        self.size = n
        self.dtype = dtype
        self.t0 = np.empty(n, dtype=dtype)
        self.t1 = np.empty(n, dtype=dtype)
        self.t2 = np.empty(n, dtype=dtype)
        self.eta = np.empty(n, dtype=dtype)
        self.i_ion = np.empty(n, dtype=dtype)

    def matches(self, shape, dtype) -> bool:
        return self.size == int(np.prod(shape, dtype=np.int64)) and self.dtype == dtype


def _rate_into(fn: RateFn, v, scale: float, out, tmp):
    """Evaluate scale * fn(v) into `out`, using `tmp` as scratch.

    Operation order mirrors RateFn.__call__ exactly so the fused step stays
    bit-identical to the multi-pass reference.
    """
    np.subtract(v, fn.v0, out=tmp)               # tmp = x
    if fn.kind == "exp":
        np.negative(tmp, out=out)
        np.divide(out, fn.b, out=out)
        np.exp(out, out=out)
        np.multiply(out, fn.a, out=out)
    elif fn.kind == "sigmoid":
        np.negative(tmp, out=out)
        np.divide(out, fn.b, out=out)
        np.exp(out, out=out)
        np.add(out, 1.0, out=out)
        np.divide(fn.a, out, out=out)
    else:  # linoid
        np.negative(tmp, out=out)
        np.divide(out, fn.b, out=out)
        np.exp(out, out=out)
        np.subtract(1.0, out, out=out)           # denominator
        sing = np.abs(out) < LINOID_EPS
        np.multiply(tmp, fn.a, out=tmp)          # a * x
        with np.errstate(divide="ignore", invalid="ignore"):
            np.divide(tmp, out, out=out)
        if sing.any():
            np.copyto(out, fn.a * fn.b, where=sing)
    if scale != 1.0:
        np.multiply(out, scale, out=out)
    return out


def hh_step(
    state: NeuronState,
    i_ext,
    params: HHParams,
    workspace: Workspace | None = None,
    step_index: int | None = None,
    out_state: NeuronState | None = None,
):
    """One fused forward step: gates, ionic sum, membrane update, spike flag.

    Gate updates and the ionic current both read the pre-update potential
    and pre-update gate values. The whole step runs in a single pass over
    the channel list with a constant number of scratch vectors; per-gate
    intermediate arrays are never materialized.
    """
    v_orig = state.v
    shape, dtype = v_orig.shape, v_orig.dtype
    ws = workspace
    if ws is None or not ws.matches(shape, dtype):
        ws = Workspace(shape, dtype)
    if out_state is None:
        out_state = NeuronState(np.empty_like(v_orig), np.empty_like(state.gates))

    # All arithmetic runs on flat 1-D views so scalar batches work too.
    v = np.ascontiguousarray(v_orig).reshape(-1)
    n_g = state.gates.shape[0]
    gates_in = np.ascontiguousarray(state.gates).reshape(n_g, v.size)
    gates_out = out_state.gates.reshape(n_g, v.size)

    dt, scale = params.dt, params.rate_scale
    i_ion = ws.i_ion
    i_ion.fill(0.0)
    gi = 0
    for ch in params.channels:
        if ch.gates:
            eta = ws.eta
            eta.fill(1.0)
            for g in ch.gates:
                p = gates_in[gi]
                k = g.exponent
                if k == 1:
                    np.multiply(eta, p, out=eta)
                elif k > 1:
                    np.multiply(p, p, out=ws.t2)
                    for _ in range(k - 2):
                        np.multiply(ws.t2, p, out=ws.t2)
                    np.multiply(eta, ws.t2, out=eta)
                a = _rate_into(g.alpha, v, scale, ws.t0, ws.t2)
                b = _rate_into(g.beta, v, scale, ws.t1, ws.t2)
                # p' = p_inf + (p - p_inf) * exp(-dt*(a+b)), via scratch only
                np.add(a, b, out=b)                       # b <- total rate
                all_pos = bool(b.all())
                zero = None if all_pos else (b == 0.0)
                if not all_pos:
                    np.copyto(b, 1.0, where=zero)
                np.divide(a, b, out=a)                    # a <- p_inf
                if not all_pos:
                    np.copyto(b, 0.0, where=zero)
                np.multiply(b, -dt, out=b)
                np.exp(b, out=b)                          # b <- decay factor
                pg = gates_out[gi]
                np.subtract(p, a, out=pg)
                np.multiply(pg, b, out=pg)
                np.add(pg, a, out=pg)
                if not all_pos:
                    np.copyto(pg, p, where=zero)
                gi += 1
            np.multiply(eta, ch.g_max, out=ws.t1)
            np.subtract(v, ch.e_rev, out=ws.t0)
            np.multiply(ws.t1, ws.t0, out=ws.t0)
        else:
            np.subtract(v, ch.e_rev, out=ws.t0)
            np.multiply(ws.t0, ch.g_max, out=ws.t0)
        np.add(i_ion, ws.t0, out=i_ion)

    v_new = out_state.v.reshape(-1)
    i_flat = np.asarray(i_ext, dtype=dtype)
    if i_flat.shape == shape:
        i_flat = np.ascontiguousarray(i_flat).reshape(-1)
    np.subtract(i_flat, i_ion, out=ws.t0)
    np.multiply(ws.t0, dt / params.c_m, out=ws.t0)
    np.add(v, ws.t0, out=v_new)

    if not np.all(np.isfinite(v_new)):
        raise NumericalOverflowError("membrane potential became non-finite", step_index)
    spikes = spike_detect(v_orig, out_state.v, params.v_theta)
    return out_state, spikes


def lif_step(state: NeuronState, i, params: LIFParams):
    """Leaky integration with inclusive threshold and hard reset."""
    v = state.v
    v_new = v + (params.dt / params.tau) * (i - v)
    spikes = v_new >= params.v_theta
    v_out = np.where(spikes, params.v_reset, v_new)
    return NeuronState(v_out, state.gates), spikes


def simulate(
    params: HHParams | LIFParams,
    i_series: np.ndarray,
    state0: NeuronState | None = None,
    record_state: bool = False,
):
    """Iterate the step function over a time-major current series.

    Deterministic: identical arguments produce identical traces. Returns the
    Trace, and additionally the final state when record_state is set.
    """
    i_series = np.asarray(i_series, dtype=np.float64)
    T = i_series.shape[0]
    shape = i_series.shape[1:]
    if state0 is None:
        state0 = init_state(params, shape)
    elif state0.v.shape != shape and T > 0:
        raise UsageError(f"state shape {state0.v.shape} does not match input shape {shape}")

    v_series = np.empty((T,) + shape, dtype=np.float64)
    spike_series = np.empty((T,) + shape, dtype=bool)
    state = state0
    if isinstance(params, HHParams):
        ws = Workspace(shape, np.float64)
        # Ping-pong buffers: the whole run allocates two states, not T.
        bufs = (
            NeuronState(np.empty_like(state0.v), np.empty_like(state0.gates)),
            NeuronState(np.empty_like(state0.v), np.empty_like(state0.gates)),
        )
        for t in range(T):
            state, spikes = hh_step(
                state, i_series[t], params, workspace=ws, step_index=t, out_state=bufs[t % 2]
            )
            v_series[t] = state.v
            spike_series[t] = spikes
        if record_state and T > 0:
            state = state.copy()
    else:
        for t in range(T):
            state, spikes = lif_step(state, i_series[t], params)
            v_series[t] = state.v
            spike_series[t] = spikes
    trace = Trace(v_series, spike_series, params.dt)
    if record_state:
        return trace, state
    return trace


def firing_rate(trace: Trace) -> np.ndarray:
    """Mean firing rate in Hz over the whole trace, per batch element."""
    if trace.n_steps == 0:
        return np.zeros(trace.v_series.shape[1:])
    duration_ms = trace.n_steps * trace.dt
    return trace.spike_count() * 1000.0 / duration_ms


def isi_cv(trace: Trace) -> float:
    """Coefficient of variation of inter-spike intervals (single-neuron trace)."""
    times = trace.spike_times()
    if times.size < 3:
        return float("nan")
    isi = np.diff(times)
    return float(np.std(isi) / np.mean(isi))
