"""Exact reverse-mode gradients through the discretized HH/LIF updates.

The backward step is derived by hand from the forward update:

    V'   = V + (dt/c_m) * (i_ext - sum_X g_X * eta_X(p) * (V - E_X))
    p'_g = p_inf + (p_g - p_inf) * exp(-dt * s_g),   s_g = a_g + b_g

with a_g, b_g evaluated at the pre-update V, so the chain rule needs
da/dV and db/dV (analytic, from RateFn.deriv). The spike indicator is
non-differentiable; its derivative is replaced by a surrogate kernel
applied at V' - v_theta.

Nothing per-gate is stored between forward and backward: the backward
step recomputes every intermediate from the step's input state, which is
what makes segment-wise checkpointing exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import HHParams, LIFParams, NeuronState, Workspace, hh_step, int_pow
from .errors import GradientOverflowError, UsageError


# ---------------------------------------------------------------------------
# Surrogate gradient for the spike nonlinearity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateSpec:
    """Smooth stand-in for the derivative of the spike indicator.

    kinds: "sigmoid-derivative" (default) and "rectangular"; both kernels
    integrate to one over the threshold offset u.
    """

    kind: str = "sigmoid-derivative"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sigmoid-derivative", "rectangular"):
            raise UsageError(f"unknown surrogate kind {self.kind!r}")
        if self.width <= 0:
            raise UsageError("surrogate width must be > 0")


def default_surrogate(params: HHParams | LIFParams) -> SurrogateSpec:
    """Width tied to a quarter of the threshold scale of the neuron."""
    if isinstance(params, HHParams):
        scale = abs(params.v_theta - params.v_rest)
    else:
        scale = abs(params.v_theta - params.v_reset)
    return SurrogateSpec("sigmoid-derivative", 0.25 * max(scale, 1e-12))


def surrogate_grad(u, spec: SurrogateSpec):
    """Evaluate the surrogate kernel at threshold offset u = V' - v_theta."""
    u = np.asarray(u, dtype=np.float64)
    if spec.kind == "rectangular":
        return np.where(np.abs(u) <= spec.width, 0.5 / spec.width, 0.0)
    s = 1.0 / (1.0 + np.exp(-u / spec.width))
    return s * (1.0 - s) / spec.width


# ---------------------------------------------------------------------------
# Adjoint state
# ---------------------------------------------------------------------------

@dataclass
class AdjointState:
    """Gradient counterpart of NeuronState plus parameter accumulators."""

    d_v: np.ndarray
    d_gates: np.ndarray
    d_c_m: float = 0.0
    d_g_max: np.ndarray | None = None
    d_spike: np.ndarray | None = None

    @staticmethod
    def zeros(state: NeuronState, n_channels: int) -> "AdjointState":
        return AdjointState(
            d_v=np.zeros_like(state.v),
            d_gates=np.zeros_like(state.gates),
            d_c_m=0.0,
            d_g_max=np.zeros(n_channels),
        )

    def copy(self) -> "AdjointState":
        return AdjointState(
            self.d_v.copy(),
            self.d_gates.copy(),
            self.d_c_m,
            None if self.d_g_max is None else self.d_g_max.copy(),
            None if self.d_spike is None else self.d_spike.copy(),
        )


def hh_step_backward(
    state_in: NeuronState,
    i_ext,
    params: HHParams,
    adj_out: AdjointState,
    surrogate: SurrogateSpec,
    step_index: int | None = None,
):
    """Adjoint of one fused HH step.

    state_in must be the exact forward input of the step. adj_out carries
    dL/dV', dL/dp', optionally dL/dspike; returns (adj_in, d_i_ext) where
    adj_in holds dL/dV, dL/dp and updated parameter accumulators.
    """
    v = state_in.v
    dt, cm, scale = params.dt, params.c_m, params.rate_scale
    dt_cm = dt / cm
    layout = params.gate_layout
    n_ch = len(params.channels)

    # Recompute the forward internals of this step from its input.
    eta = np.empty((n_ch,) + v.shape)
    drive = np.empty((n_ch,) + v.shape)       # V - E_X
    gi = 0
    for ci, ch in enumerate(params.channels):
        e = 1.0
        for g in ch.gates:
            e = e * int_pow(state_in.gates[gi], g.exponent)
            gi += 1
        eta[ci] = e
        drive[ci] = v - ch.e_rev
    g_max = np.array([ch.g_max for ch in params.channels])
    i_ion = np.einsum("c,c...->...", g_max, eta * drive)
    i_arr = np.asarray(i_ext, dtype=np.float64)
    v_new = v + dt_cm * (i_arr - i_ion)

    # Seed on V', folding the spike path through the surrogate.
    g_vp = adj_out.d_v
    if adj_out.d_spike is not None:
        g_vp = g_vp + adj_out.d_spike * surrogate_grad(v_new - params.v_theta, surrogate)

    d_i_ext = g_vp * dt_cm
    d_c_m = adj_out.d_c_m + float(np.sum(g_vp * (-(dt / cm**2)) * (i_arr - i_ion)))
    d_g_max = adj_out.d_g_max.copy() if adj_out.d_g_max is not None else np.zeros(n_ch)
    for ci in range(n_ch):
        d_g_max[ci] += float(np.sum(g_vp * (-dt_cm) * eta[ci] * drive[ci]))

    # dV'/dV through the ionic term: 1 - (dt/c_m) * sum g_X eta_X.
    g_eta_sum = np.einsum("c,c...->...", g_max, eta)
    d_v_in = g_vp * (1.0 - dt_cm * g_eta_sum)
    d_gates_in = np.empty_like(adj_out.d_gates)

    gi = 0
    for ci, ch in enumerate(params.channels):
        ch_gates = ch.gates
        base = gi
        for gj, g in enumerate(ch_gates):
            p = state_in.gates[gi]
            a = g.alpha(v) * scale
            b = g.beta(v) * scale
            da = g.alpha.deriv(v) * scale
            db = g.beta.deriv(v) * scale
            s = a + b
            pos = s > 0
            s_safe = np.where(pos, s, 1.0)
            e_decay = np.exp(-dt * s)
            p_inf = np.where(pos, a / s_safe, p)

            gp_out = adj_out.d_gates[gi]
            # p' = p_inf + (p - p_inf) e  =>  dp'/dp = e
            d_p = gp_out * np.where(pos, e_decay, 1.0)
            # dp'/dV = dp_inf/dV (1 - e) + (p - p_inf) de/dV
            dpinf_dv = np.where(pos, (da * b - a * db) / (s_safe * s_safe), 0.0)
            de_dv = -dt * (da + db) * e_decay
            dv_term = np.where(pos, dpinf_dv * (1.0 - e_decay) + (p - p_inf) * de_dv, 0.0)
            d_v_in = d_v_in + gp_out * dv_term

            # dV'/dp through eta of this channel.
            k = g.exponent
            if k > 0:
                detadp = float(k) * int_pow(p, k - 1)
                for oj, og in enumerate(ch_gates):
                    if oj != gj:
                        detadp = detadp * int_pow(state_in.gates[base + oj], og.exponent)
                d_p = d_p + g_vp * (-dt_cm) * ch.g_max * drive[ci] * detadp
            d_gates_in[gi] = d_p
            gi += 1

    if not (np.all(np.isfinite(d_v_in)) and np.all(np.isfinite(d_gates_in))):
        raise GradientOverflowError("adjoint state became non-finite", step_index)

    adj_in = AdjointState(d_v_in, d_gates_in, d_c_m, d_g_max, d_spike=None)
    return adj_in, d_i_ext


def lif_step_backward(
    state_in: NeuronState,
    i_ext,
    params: LIFParams,
    adj_out: AdjointState,
    surrogate: SurrogateSpec,
    step_index: int | None = None,
):
    """Adjoint of one LIF step.

    The hard reset is differentiated with the reset factor (1 - spike) and
    the spike indicator's derivative replaced by the surrogate, the usual
    spiking-network convention; gradients are exact only on spike-free
    segments.
    """
    v = state_in.v
    k = params.dt / params.tau
    v_pre = v + k * (np.asarray(i_ext, dtype=np.float64) - v)
    spikes = v_pre >= params.v_theta
    sg = surrogate_grad(v_pre - params.v_theta, surrogate)

    g_v_out = adj_out.d_v
    g_spike = adj_out.d_spike if adj_out.d_spike is not None else 0.0
    # V'' = V_pre (1 - s) + v_reset s; ds/dV_pre = surrogate
    d_v_pre = g_v_out * ((1.0 - spikes) + (params.v_reset - v_pre) * sg) + g_spike * sg
    d_v_in = d_v_pre * (1.0 - k)
    d_i_ext = d_v_pre * k
    if not np.all(np.isfinite(d_v_in)):
        raise GradientOverflowError("adjoint state became non-finite", step_index)
    adj_in = AdjointState(d_v_in, np.zeros_like(adj_out.d_gates), adj_out.d_c_m, adj_out.d_g_max)
    return adj_in, d_i_ext


# ---------------------------------------------------------------------------
# Checkpoint plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointPlan:
    """Which forward state indices are retained for the backward pass."""

    total_steps: int
    segment_length: int
    stored_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.stored_indices or self.stored_indices[0] != 0:
            raise UsageError("stored_indices must cover step 0")
        gaps = np.diff(np.asarray(self.stored_indices + (self.total_steps,)))
        if gaps.size and gaps.max() > self.segment_length:
            raise UsageError("checkpoint gap exceeds segment_length")


def make_plan(total_steps: int, budget: int) -> CheckpointPlan:
    """Equal-spaced checkpoints: segment_length = ceil(T / budget)."""
    if total_steps < 1:
        raise UsageError("total_steps must be >= 1")
    if budget < 1:
        raise UsageError("budget must be >= 1")
    seg = math.ceil(total_steps / budget)
    stored = tuple(range(0, total_steps, seg))
    return CheckpointPlan(total_steps, seg, stored)


@dataclass
class BPTTStats:
    """Instrumentation for the memory/compute bounds of a backward run."""

    forward_calls: int = 0
    peak_stored_states: int = 0

    def observe(self, live: int):
        self.peak_stored_states = max(self.peak_stored_states, live)


@dataclass
class BPTTResult:
    d_i: np.ndarray
    d_state0: AdjointState
    d_c_m: float
    d_g_max: np.ndarray
    stats: BPTTStats


def backward_through_time(
    params: HHParams,
    state0: NeuronState,
    i_series: np.ndarray,
    seed_v: np.ndarray,
    seed_spike: np.ndarray | None = None,
    plan: CheckpointPlan | None = None,
    surrogate: SurrogateSpec | None = None,
) -> BPTTResult:
    """Reverse-mode sweep over a simulated chain.

    seed_v[t] is dL/dV for the potential recorded after step t+1 (the trace
    row t); seed_spike seeds the spike outputs likewise. Gradients are
    independent of the CheckpointPlan choice; the plan only bounds how many
    states stay resident.
    """
    i_series = np.asarray(i_series, dtype=np.float64)
    T = i_series.shape[0]
    seed_v = np.asarray(seed_v, dtype=np.float64)
    if seed_v.shape[0] != T:
        raise UsageError(f"seed series length {seed_v.shape[0]} != input length {T}")
    if seed_spike is not None and seed_spike.shape[0] != T:
        raise UsageError("seed_spike length mismatch")
    if surrogate is None:
        surrogate = default_surrogate(params)

    stats = BPTTStats()
    ws = Workspace(state0.v.shape, np.float64)

    def forward_step(st, t):
        stats.forward_calls += 1
        out, _ = hh_step(st, i_series[t], params, workspace=ws, step_index=t)
        return out

    if plan is None:
        stored = {0: state0}
        st = state0
        for t in range(T):
            st = forward_step(st, t)
            stored[t + 1] = st
        stats.observe(len(stored))
        segments = [(0, T)]

        def states_for(lo, hi):
            return [stored[i] for i in range(lo, hi)]

    else:
        if plan.total_steps != T:
            raise UsageError("plan total_steps does not match input length")
        ckpt = {}
        st = state0
        for t in range(T):
            if t in plan.stored_indices:
                ckpt[t] = st
            st = forward_step(st, t)
        stats.observe(len(ckpt))
        bounds = list(plan.stored_indices) + [T]
        segments = [(bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1)][::-1]

        def states_for(lo, hi):
            seg = [ckpt[lo]]
            st = ckpt[lo]
            for t in range(lo, hi - 1):
                st = forward_step(st, t)
                seg.append(st)
            stats.observe(len(ckpt) + len(seg) - 1)
            ckpt.pop(lo)
            return seg

    shape = state0.v.shape
    adj = AdjointState.zeros(state0, len(params.channels))
    d_i = np.empty((T,) + shape)

    for lo, hi in (segments if plan is not None else [(0, T)]):
        seg_states = states_for(lo, hi)
        for t in range(hi - 1, lo - 1, -1):
            adj.d_v = adj.d_v + seed_v[t]
            if seed_spike is not None:
                adj.d_spike = np.asarray(seed_spike[t], dtype=np.float64)
            adj, d_i_t = hh_step_backward(
                seg_states[t - lo], i_series[t], params, adj, surrogate, step_index=t
            )
            d_i[t] = d_i_t

    return BPTTResult(d_i=d_i, d_state0=adj, d_c_m=adj.d_c_m, d_g_max=adj.d_g_max, stats=stats)
