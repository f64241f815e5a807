"""Desk-scale layered cortical network with HH point neurons.

Eight populations over four layers, sparse random connectivity with
per-block probabilities and lognormal transmission delays, exponential
synaptic currents, compound-Poisson background drive, and an optional
transient thalamic stimulus. Connectivity numbers live in
`connectivity`; the neuron is the excitable regular-spiking variant so
the printed microampere-scale synaptic strengths produce activity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import connectivity as conn
from .defaults import cortical_rs_params
from .dynamics import HHParams, NeuronState, Workspace, hh_step, init_state
from .errors import ConfigurationError, UsageError


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationSpec:
    name: str
    size: int
    offset: int            # first neuron index in the flat id space

    def __post_init__(self):
        if self.size <= 0:
            raise ConfigurationError(f"population {self.name} is empty")


@dataclass(frozen=True)
class BackgroundSpec:
    """Independent external Poisson sources per neuron, Gaussian amplitudes."""

    rate_hz: float
    k_ext: np.ndarray          # per-population source count
    w_mean: float
    w_std: float

    def __post_init__(self):
        if self.rate_hz < 0 or self.w_std < 0:
            raise ConfigurationError("background rate and w_std must be >= 0")


@dataclass
class CortexConfig:
    scale: float = 0.1
    recurrent_mean: float = 0.26
    recurrent_std: float = 0.026
    bg_mean: float = 0.17
    bg_std: float = 0.017
    bg_rate_hz: float = 8.0
    inh_factor: float = 4.0          # inhibitory weight = -inh_factor * excitatory
    psp_tau_ms: float = 0.5
    dt: float = 0.1
    neuron: HHParams | None = None

    def resolved_neuron(self) -> HHParams:
        return self.neuron if self.neuron is not None else cortical_rs_params(dt=self.dt)


REST_CONFIG = CortexConfig()
THALAMIC_CONFIG = CortexConfig(bg_mean=0.22, bg_std=0.022, bg_rate_hz=4.0)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

@dataclass
class NetworkTopology:
    """Synapses in CSR-by-source layout plus per-block bookkeeping."""

    populations: list[PopulationSpec]
    syn_offsets: np.ndarray      # (n_neurons + 1,)
    syn_target: np.ndarray
    syn_weight: np.ndarray
    syn_delay: np.ndarray        # steps, >= 1
    block_stats: dict            # (pre_pop, post_pop) -> dict(count, w_mean, w_std)
    max_delay: int
    dt: float

    @property
    def n_neurons(self) -> int:
        return self.populations[-1].offset + self.populations[-1].size

    @property
    def n_synapses(self) -> int:
        return int(self.syn_target.size)

    def population(self, name: str) -> PopulationSpec:
        for p in self.populations:
            if p.name == name:
                return p
        raise UsageError(f"unknown population {name!r}")

    def pop_slice(self, name: str) -> slice:
        p = self.population(name)
        return slice(p.offset, p.offset + p.size)

    def block_synapses(self, pre_pop: str, post_pop: str):
        """Materialize (pre, post, weight, delay) arrays for one block."""
        pre = self.pop_slice(pre_pop)
        post = self.pop_slice(post_pop)
        pres, posts, ws, ds = [], [], [], []
        for s in range(pre.start, pre.stop):
            lo, hi = self.syn_offsets[s], self.syn_offsets[s + 1]
            t = self.syn_target[lo:hi]
            m = (t >= post.start) & (t < post.stop)
            if m.any():
                pres.append(np.full(int(m.sum()), s))
                posts.append(t[m])
                ws.append(self.syn_weight[lo:hi][m])
                ds.append(self.syn_delay[lo:hi][m])
        if not pres:
            empty = np.array([])
            return empty, empty, empty, empty
        return (np.concatenate(pres), np.concatenate(posts),
                np.concatenate(ws), np.concatenate(ds))


def _delay_steps(rng, n, mean_ms, dt):
    """Lognormal delays (std = DELAY_REL_STD * mean), rounded, >= 1 step."""
    sigma2 = np.log(1.0 + conn.DELAY_REL_STD**2)
    mu = np.log(mean_ms) - sigma2 / 2.0
    d_ms = rng.lognormal(mu, np.sqrt(sigma2), size=n)
    return np.maximum(np.rint(d_ms / dt).astype(np.int32), 1)


def build_network(scale: float, seed: int, config: CortexConfig | None = None) -> NetworkTopology:
    """Sample the sparse topology at a population scale in (0, 1].

    Per block, the synapse count is Binomial(N_pre*N_post, p) with the
    connections drawn uniformly without replacement (pairwise Bernoulli);
    weights are sign-constrained Gaussians, delays lognormal-rounded.
    Plain downscaling: probabilities are untouched, so in-degrees shrink
    with scale.
    """
    if not (0.0 < scale <= 1.0):
        raise ConfigurationError("scale must lie in (0, 1]")
    cfg = config if config is not None else REST_CONFIG
    rng = np.random.default_rng(seed)
    sizes = np.rint(conn.FULL_SIZES * scale).astype(int)
    if (sizes <= 0).any():
        raise ConfigurationError(f"scale {scale} empties a population: {sizes}")

    pops = []
    offset = 0
    for name, size in zip(conn.POPULATIONS, sizes):
        pops.append(PopulationSpec(name, int(size), offset))
        offset += int(size)
    n_total = offset

    pre_list: list[np.ndarray] = []
    post_list: list[np.ndarray] = []
    w_list: list[np.ndarray] = []
    d_list: list[np.ndarray] = []
    block_stats = {}
    for pre_idx, pre_name in enumerate(conn.POPULATIONS):
        exc = conn.is_excitatory(pre_idx)
        w_mean = cfg.recurrent_mean if exc else -cfg.inh_factor * cfg.recurrent_mean
        w_std = cfg.recurrent_std if exc else cfg.inh_factor * cfg.recurrent_std
        d_mean = conn.DELAY_MEAN_EXC_MS if exc else conn.DELAY_MEAN_INH_MS
        for post_idx, post_name in enumerate(conn.POPULATIONS):
            p = conn.CONN_PROBS[post_idx, pre_idx]
            n_pre, n_post = sizes[pre_idx], sizes[post_idx]
            total_pairs = n_pre * n_post
            count = int(rng.binomial(total_pairs, p)) if p > 0 else 0
            block_stats[(pre_name, post_name)] = {
                "count": count, "w_mean": w_mean, "w_std": w_std, "p": float(p),
                "pairs": int(total_pairs),
            }
            if count == 0:
                continue
            pair_ids = rng.choice(total_pairs, size=count, replace=False)
            pre_local, post_local = np.divmod(pair_ids, n_post)
            w = rng.normal(w_mean, w_std, size=count)
            w = np.maximum(w, 0.0) if exc else np.minimum(w, 0.0)
            pre_list.append(pops[pre_idx].offset + pre_local)
            post_list.append(pops[post_idx].offset + post_local)
            w_list.append(w)
            d_list.append(_delay_steps(rng, count, d_mean, cfg.dt))

    if pre_list:
        pre = np.concatenate(pre_list).astype(np.int64)
        post = np.concatenate(post_list).astype(np.int64)
        w = np.concatenate(w_list)
        d = np.concatenate(d_list)
    else:
        pre = np.zeros(0, dtype=np.int64)
        post = np.zeros(0, dtype=np.int64)
        w = np.zeros(0)
        d = np.zeros(0, dtype=np.int32)

    order = np.argsort(pre, kind="stable")
    pre, post, w, d = pre[order], post[order], w[order], d[order]
    offsets = np.zeros(n_total + 1, dtype=np.int64)
    np.add.at(offsets, pre + 1, 1)
    offsets = np.cumsum(offsets)

    return NetworkTopology(
        populations=pops,
        syn_offsets=offsets,
        syn_target=post.astype(np.int32),
        syn_weight=w,
        syn_delay=d.astype(np.int32),
        block_stats=block_stats,
        max_delay=int(d.max()) if d.size else 1,
        dt=cfg.dt,
    )


# ---------------------------------------------------------------------------
# Background drive
# ---------------------------------------------------------------------------

def background_sample(lam_eff, mu: float, sigma: float, count, rng: np.random.Generator):
    """Compound-Poisson draw: sum of N ~ Poisson(lam_eff) Gaussian(mu, sigma)
    amplitudes, sampled in closed form as N*mu + sigma*sqrt(N)*z."""
    n = rng.poisson(lam_eff, size=count)
    out = n * mu
    if sigma > 0:
        out = out + sigma * np.sqrt(n) * rng.standard_normal(count)
    return out


# ---------------------------------------------------------------------------
# Spike buffer and stepping
# ---------------------------------------------------------------------------

class SpikeBuffer:
    """Ring of per-step pending synaptic-current accumulators."""

    def __init__(self, depth: int, n_neurons: int):
        if depth < 1:
            raise ConfigurationError("ring depth must be >= 1")
        self.depth = depth
        self.ring = np.zeros((depth, n_neurons))

    def enqueue(self, t: int, targets: np.ndarray, weights: np.ndarray, delays: np.ndarray):
        slots = (t + delays) % self.depth
        np.add.at(self.ring, (slots, targets), weights)

    def drain(self, t: int) -> np.ndarray:
        row = self.ring[t % self.depth]
        arrived = row.copy()
        row.fill(0.0)
        return arrived


@dataclass
class NetworkState:
    neuron: NeuronState
    psp: np.ndarray            # exponential synaptic current state
    buffer: SpikeBuffer
    t: int = 0


def init_network_state(topo: NetworkTopology, config: CortexConfig) -> NetworkState:
    n = topo.n_neurons
    state = init_state(config.resolved_neuron(), (n,))
    return NetworkState(state, np.zeros(n), SpikeBuffer(topo.max_delay + 1, n))


def step_network(
    net: NetworkState,
    topo: NetworkTopology,
    background: BackgroundSpec | None,
    config: CortexConfig,
    rng: np.random.Generator,
    params: HHParams,
    workspace: Workspace | None = None,
    extra_current: np.ndarray | float = 0.0,
):
    """One network step: drain arrivals, decay PSP, add background, advance
    neurons, enqueue the new spikes."""
    t = net.t
    arrived = net.buffer.drain(t)
    decay = np.exp(-config.dt / config.psp_tau_ms)
    net.psp *= decay
    net.psp += arrived
    if background is not None and background.rate_hz > 0:
        lam = np.empty(topo.n_neurons)
        for k, pop in enumerate(topo.populations):
            lam[pop.offset:pop.offset + pop.size] = (
                background.k_ext[k] * background.rate_hz * config.dt / 1000.0
            )
        bg = background_sample(lam, background.w_mean, background.w_std, topo.n_neurons, rng)
        net.psp += bg
    if np.isscalar(extra_current) and extra_current == 0.0:
        i_total = net.psp
    else:
        i_total = net.psp + extra_current

    net.neuron, spikes = hh_step(net.neuron, i_total, params, workspace=workspace, step_index=t)
    sources = np.flatnonzero(spikes)
    for s in sources:
        lo, hi = topo.syn_offsets[s], topo.syn_offsets[s + 1]
        if hi > lo:
            net.buffer.enqueue(t, topo.syn_target[lo:hi], topo.syn_weight[lo:hi], topo.syn_delay[lo:hi])
    net.t += 1
    return spikes


def make_background(config: CortexConfig) -> BackgroundSpec:
    return BackgroundSpec(config.bg_rate_hz, conn.K_EXT.astype(float), config.bg_mean, config.bg_std)


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

@dataclass
class SpikeRecord:
    """Spike events plus per-population rate statistics."""

    times_ms: np.ndarray
    neuron_ids: np.ndarray
    duration_ms: float
    warmup_ms: float
    topo: NetworkTopology

    def pop_rate(self, name: str) -> float:
        """Mean rate (Hz) per neuron over the post-warmup window."""
        sl = self.topo.pop_slice(name)
        m = (self.neuron_ids >= sl.start) & (self.neuron_ids < sl.stop) & (self.times_ms >= self.warmup_ms)
        window_s = (self.duration_ms - self.warmup_ms) / 1000.0
        return float(m.sum()) / (sl.stop - sl.start) / window_s

    def rate_quartiles(self, name: str):
        sl = self.topo.pop_slice(name)
        m = (self.neuron_ids >= sl.start) & (self.neuron_ids < sl.stop) & (self.times_ms >= self.warmup_ms)
        counts = np.bincount(self.neuron_ids[m] - sl.start, minlength=sl.stop - sl.start)
        window_s = (self.duration_ms - self.warmup_ms) / 1000.0
        return np.percentile(counts / window_s, [25, 50, 75])

    def isi_cv(self, name: str) -> float:
        """Mean ISI coefficient of variation over neurons with >= 3 spikes."""
        sl = self.topo.pop_slice(name)
        m = (self.neuron_ids >= sl.start) & (self.neuron_ids < sl.stop) & (self.times_ms >= self.warmup_ms)
        ids = self.neuron_ids[m]
        ts = self.times_ms[m]
        cvs = []
        for nid in np.unique(ids):
            tt = np.sort(ts[ids == nid])
            if tt.size >= 3:
                isi = np.diff(tt)
                if isi.mean() > 0:
                    cvs.append(isi.std() / isi.mean())
        return float(np.mean(cvs)) if cvs else float("nan")

    def rate_histogram(self, name: str, bin_ms: float = 1.0):
        """(bin centers ms, rate Hz) over the full duration."""
        sl = self.topo.pop_slice(name)
        m = (self.neuron_ids >= sl.start) & (self.neuron_ids < sl.stop)
        edges = np.arange(0.0, self.duration_ms + bin_ms, bin_ms)
        hist, _ = np.histogram(self.times_ms[m], bins=edges)
        rate = hist / (sl.stop - sl.start) / (bin_ms / 1000.0)
        return 0.5 * (edges[:-1] + edges[1:]), rate

    def to_ndjson(self, path) -> None:
        """One event per line: {t_ms, pop, neuron}."""
        pop_of = np.empty(self.topo.n_neurons, dtype=object)
        for p in self.topo.populations:
            pop_of[p.offset:p.offset + p.size] = p.name
        with open(path, "w") as f:
            for t, n in zip(self.times_ms, self.neuron_ids):
                f.write(json.dumps({"t_ms": round(float(t), 6), "pop": pop_of[n], "neuron": int(n)}) + "\n")


def run_network(
    topo: NetworkTopology,
    config: CortexConfig,
    duration_ms: float,
    seed: int,
    warmup_ms: float = 0.0,
    thalamic: dict | None = None,
) -> SpikeRecord:
    """Simulate and collect spikes; optional thalamic transient drive.

    thalamic: {"t_on_ms", "duration_ms", "rate_hz", "weight", "weight_std"}.
    """
    rng = np.random.default_rng(seed)
    params = config.resolved_neuron()
    background = make_background(config)
    net = init_network_state(topo, config)
    ws = Workspace((topo.n_neurons,), np.float64)
    n_steps = int(round(duration_ms / config.dt))

    thal_targets, thal_weights, thal_lam = None, None, 0.0
    if thalamic is not None:
        if thalamic["t_on_ms"] + thalamic["duration_ms"] > duration_ms:
            raise UsageError("thalamic stimulus extends beyond the simulation")
        scale = topo.populations[0].size / conn.FULL_SIZES[0]
        n_thal = max(int(round(conn.N_THALAMUS * scale)), 1)
        tt, tw = [], []
        for pop_name, p in conn.THALAMIC_PROBS.items():
            sl = topo.pop_slice(pop_name)
            size = sl.stop - sl.start
            count = int(rng.binomial(n_thal * size, p))
            if count == 0:
                continue
            ids = rng.choice(n_thal * size, size=count, replace=False)
            tt.append(sl.start + (ids % size))
            tw.append(np.maximum(rng.normal(
                thalamic["weight"], thalamic.get("weight_std", 0.0), size=count), 0.0))
        thal_targets = np.concatenate(tt) if tt else np.zeros(0, dtype=int)
        thal_weights = np.concatenate(tw) if tw else np.zeros(0)
        # Expected thalamic events per target synapse per step.
        thal_lam = thalamic["rate_hz"] * config.dt / 1000.0
        thal_lo = int(round(thalamic["t_on_ms"] / config.dt))
        thal_hi = int(round((thalamic["t_on_ms"] + thalamic["duration_ms"]) / config.dt))

    times, ids = [], []
    for t in range(n_steps):
        extra = 0.0
        if thal_targets is not None and thal_lo <= t < thal_hi and thal_targets.size:
            events = rng.random(thal_targets.size) < thal_lam
            if events.any():
                extra = np.zeros(topo.n_neurons)
                np.add.at(extra, thal_targets[events], thal_weights[events])
        spikes = step_network(net, topo, background, config, rng, params, ws, extra_current=extra)
        if spikes.any():
            nz = np.flatnonzero(spikes)
            times.append(np.full(nz.size, (t + 1) * config.dt))
            ids.append(nz)

    times = np.concatenate(times) if times else np.zeros(0)
    ids = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
    return SpikeRecord(times, ids, duration_ms, warmup_ms, topo)


def rest_state_run(duration_ms: float, scale: float, seed: int,
                   config: CortexConfig | None = None, warmup_ms: float = 200.0) -> SpikeRecord:
    """Spontaneous-activity run with the rest-state parameter set."""
    cfg = config if config is not None else REST_CONFIG
    cfg = replace(cfg, scale=scale)
    topo = build_network(scale, seed, cfg)
    return run_network(topo, cfg, duration_ms, seed + 1, warmup_ms=warmup_ms)


def thalamic_stimulus_run(duration_ms: float, scale: float, seed: int, t_on_ms: float,
                          config: CortexConfig | None = None, warmup_ms: float = 200.0,
                          rate_hz: float | None = None) -> SpikeRecord:
    """Thalamic-transient run: weaker background, brief strong L4/L6 drive."""
    cfg = config if config is not None else THALAMIC_CONFIG
    cfg = replace(cfg, scale=scale)
    topo = build_network(scale, seed, cfg)
    thal = {
        "t_on_ms": t_on_ms,
        "duration_ms": conn.THALAMIC_DURATION_MS,
        "rate_hz": rate_hz if rate_hz is not None else conn.THALAMIC_RATE_HZ,
        "weight": cfg.bg_mean,
        "weight_std": cfg.bg_std,
    }
    return run_network(topo, cfg, duration_ms, seed + 1, warmup_ms=warmup_ms, thalamic=thal)
