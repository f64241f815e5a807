"""Canonical parameter sets.

All built-in neuron variants live here so alternates are drop-in swaps.
The squid-axon set uses the classic 1952 rate constants; the cortical
regular-spiking set follows the minimal pyramidal-cell model of
Pospischil et al. 2008 (Na/K/leak with a threshold-shift parameter),
which is far more excitable and is the default for network simulations.
"""

from __future__ import annotations

import numpy as np

from .dynamics import ChannelSpec, GateSpec, HHParams, LIFParams, RateFn


def squid_axon_params(
    c_m: float = 1.0,
    dt: float = 0.025,
    v_theta: float = 0.0,
    v_rest: float = -65.0,
    g_na: float = 120.0,
    g_k: float = 36.0,
    g_leak: float = 0.3,
    e_na: float = 50.0,
    e_k: float = -77.0,
    e_leak: float = -54.4,
    rate_scale: float = 1.0,
) -> HHParams:
    """Classic squid-axon Na/K/leak point neuron (potentials shifted so rest
    sits near -65 mV)."""
    gate_m = GateSpec(
        "m",
        alpha=RateFn("linoid", 0.1, -40.0, 10.0),
        beta=RateFn("exp", 4.0, -65.0, 18.0),
        exponent=3,
    )
    gate_h = GateSpec(
        "h",
        alpha=RateFn("exp", 0.07, -65.0, 20.0),
        beta=RateFn("sigmoid", 1.0, -35.0, 10.0),
        exponent=1,
    )
    gate_n = GateSpec(
        "n",
        alpha=RateFn("linoid", 0.01, -55.0, 10.0),
        beta=RateFn("exp", 0.125, -65.0, 80.0),
        exponent=4,
    )
    channels = (
        ChannelSpec("na", g_max=g_na, e_rev=e_na, gates=(gate_m, gate_h)),
        ChannelSpec("k", g_max=g_k, e_rev=e_k, gates=(gate_n,)),
        ChannelSpec("leak", g_max=g_leak, e_rev=e_leak),
    )
    return HHParams(
        c_m=c_m, channels=channels, v_rest=v_rest, v_theta=v_theta, dt=dt, rate_scale=rate_scale
    )


def cortical_rs_params(
    c_m: float = 1.0,
    dt: float = 0.1,
    v_theta: float = 0.0,
    v_rest: float = -70.3,
    g_na: float = 56.0,
    g_k: float = 6.0,
    g_leak: float = 0.0205,
    e_na: float = 50.0,
    e_k: float = -90.0,
    e_leak: float = -70.3,
    v_t: float = -56.2,
    rate_scale: float = 1.0,
) -> HHParams:
    """Regular-spiking cortical pyramidal neuron, minimal Na/K/leak variant
    with Traub-style kinetics shifted by the spike-threshold parameter v_t
    (Pospischil et al. 2008, M-current omitted)."""
    gate_m = GateSpec(
        "m",
        alpha=RateFn("linoid", 0.32, v_t + 13.0, 4.0),
        beta=RateFn("linoid", -0.28, v_t + 40.0, -5.0),
        exponent=3,
    )
    gate_h = GateSpec(
        "h",
        alpha=RateFn("exp", 0.128, v_t + 17.0, 18.0),
        beta=RateFn("sigmoid", 4.0, v_t + 40.0, 5.0),
        exponent=1,
    )
    gate_n = GateSpec(
        "n",
        alpha=RateFn("linoid", 0.032, v_t + 15.0, 5.0),
        beta=RateFn("exp", 0.5, v_t + 10.0, 40.0),
        exponent=4,
    )
    channels = (
        ChannelSpec("na", g_max=g_na, e_rev=e_na, gates=(gate_m, gate_h)),
        ChannelSpec("k", g_max=g_k, e_rev=e_k, gates=(gate_n,)),
        ChannelSpec("leak", g_max=g_leak, e_rev=e_leak),
    )
    return HHParams(
        c_m=c_m, channels=channels, v_rest=v_rest, v_theta=v_theta, dt=dt, rate_scale=rate_scale
    )


def lif_params(tau: float = 10.0, v_theta: float = 1.0, v_reset: float = 0.0, dt: float = 0.1) -> LIFParams:
    """Dimensionless LIF baseline."""
    return LIFParams(tau=tau, v_theta=v_theta, v_reset=v_reset, dt=dt)
