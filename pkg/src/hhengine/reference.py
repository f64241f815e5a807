"""Deliberately naive multi-pass HH stepping.

Composes the elementary operations (gate_rates, gate_step, ionic_current)
exactly as written, materializing every per-gate intermediate as a fresh
array. Serves as the correctness reference for the fused step and as the
baseline side of the throughput benchmark; it is never the production path.
"""

from __future__ import annotations

import numpy as np

from .dynamics import (
    HHParams,
    NeuronState,
    Trace,
    gate_rates,
    gate_step,
    init_state,
    ionic_current,
    spike_detect,
)
from .errors import NumericalOverflowError


def naive_hh_step(state: NeuronState, i_ext, params: HHParams, step_index: int | None = None):
    """One step, as separate full passes: all rates, then all gate updates,
    then the ionic sum, then the membrane update, then spike detection."""
    v = state.v
    layout = params.gate_layout

    alphas = []
    betas = []
    for _, gate in layout:
        a, b = gate_rates(gate, v, params.rate_scale)
        alphas.append(np.broadcast_to(a, v.shape))
        betas.append(np.broadcast_to(b, v.shape))

    new_gates = np.empty_like(state.gates)
    for gi in range(len(layout)):
        new_gates[gi] = gate_step(state.gates[gi], alphas[gi], betas[gi], params.dt)

    i_ion = ionic_current(state, params.channels)
    v_new = v + (params.dt / params.c_m) * (np.asarray(i_ext, dtype=v.dtype) - i_ion)
    if not np.all(np.isfinite(v_new)):
        raise NumericalOverflowError("membrane potential became non-finite", step_index)
    spikes = spike_detect(v, v_new, params.v_theta)
    return NeuronState(v_new, new_gates), spikes


def naive_simulate(params: HHParams, i_series: np.ndarray, state0: NeuronState | None = None) -> Trace:
    """Iterate naive_hh_step; reference trajectory for fused-vs-naive checks."""
    i_series = np.asarray(i_series, dtype=np.float64)
    T = i_series.shape[0]
    shape = i_series.shape[1:]
    if state0 is None:
        state0 = init_state(params, shape)
    v_series = np.empty((T,) + shape, dtype=np.float64)
    spike_series = np.empty((T,) + shape, dtype=bool)
    state = state0
    for t in range(T):
        state, spikes = naive_hh_step(state, i_series[t], params, step_index=t)
        v_series[t] = state.v
        spike_series[t] = spikes
    return Trace(v_series, spike_series, params.dt)
