"""Layered-cortex connectivity data.

Population sizes, connection probabilities, external in-degrees, delay
statistics, and thalamic targeting follow the 1 mm^2 early-sensory-cortex
compilation of Potjans & Diesmann (2014), "The cell-type specific cortical
microcircuit", Cerebral Cortex 24:785-806, and the reference NEST
implementation of that model. Probabilities are per ordered (target,
source) pair; sizes are the full-scale 1 mm^2 patch.
"""

from __future__ import annotations

import numpy as np

POPULATIONS = ("L2/3e", "L2/3i", "L4e", "L4i", "L5e", "L5i", "L6e", "L6i")

# Neurons per population, full 1 mm^2 patch.
FULL_SIZES = np.array([20683, 5834, 21915, 5479, 4850, 1065, 14395, 2948])

# CONN_PROBS[post, pre]: connection probability between any (pre, post) pair.
CONN_PROBS = np.array([
    # from: L2/3e  L2/3i   L4e     L4i     L5e     L5i     L6e     L6i
    [0.1009, 0.1689, 0.0437, 0.0818, 0.0323, 0.0000, 0.0076, 0.0000],  # to L2/3e
    [0.1346, 0.1371, 0.0316, 0.0515, 0.0755, 0.0000, 0.0042, 0.0000],  # to L2/3i
    [0.0077, 0.0059, 0.0497, 0.1350, 0.0067, 0.0003, 0.0453, 0.0000],  # to L4e
    [0.0691, 0.0029, 0.0794, 0.1597, 0.0033, 0.0000, 0.1057, 0.0000],  # to L4i
    [0.1004, 0.0622, 0.0505, 0.0057, 0.0831, 0.3726, 0.0204, 0.0000],  # to L5e
    [0.0548, 0.0269, 0.0257, 0.0022, 0.0600, 0.3158, 0.0086, 0.0000],  # to L5i
    [0.0156, 0.0066, 0.0211, 0.0166, 0.0572, 0.0197, 0.0396, 0.2252],  # to L6e
    [0.0364, 0.0010, 0.0034, 0.0005, 0.0277, 0.0080, 0.0658, 0.1443],  # to L6i
])

# External (background) in-degree per neuron, per population.
K_EXT = np.array([1600, 1500, 2100, 1900, 2000, 1900, 2900, 2100])

# Transmission delays: lognormal, std = 0.5 * mean, rounded to >= 1 step.
DELAY_MEAN_EXC_MS = 1.5
DELAY_MEAN_INH_MS = 0.75
DELAY_REL_STD = 0.5

# Transient thalamic input (NEST reference implementation values).
N_THALAMUS = 902
THALAMIC_PROBS = {"L4e": 0.0983, "L4i": 0.0619, "L6e": 0.0512, "L6i": 0.0196}
THALAMIC_RATE_HZ = 120.0
THALAMIC_DURATION_MS = 10.0


def is_excitatory(pop_index: int) -> bool:
    return POPULATIONS[pop_index].endswith("e")


def expected_neuron_count(scale: float) -> float:
    """Expected total neurons at a given linear population scale."""
    return float(np.sum(np.rint(FULL_SIZES * scale)))


def expected_recurrent_synapses(scale: float) -> float:
    """Expected Bernoulli synapse count over all blocks at a given scale."""
    sizes = np.rint(FULL_SIZES * scale)
    return float(np.sum(CONN_PROBS * np.outer(sizes, sizes)))


def expected_external_synapses(scale: float) -> float:
    """Expected background synapses (fixed per-neuron external in-degree)."""
    sizes = np.rint(FULL_SIZES * scale)
    return float(np.sum(sizes * K_EXT))
