"""Minimal training stack for fitting neuron readout models.

Provides the fixed synaptic filters, dense layer, losses, the sMAPE
metric, a bias-corrected Adam, trace segmentation, and the synthetic
teacher-student fitting task whose pipeline is

    input spikes -> exponential PSP filter -> dense dendrite layer
                 -> point neuron -> affine scaling -> prediction.

All gradients flow through module `adjoint`; nothing here stores a graph.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .adjoint import SurrogateSpec, backward_through_time, default_surrogate
from .defaults import cortical_rs_params
from .dynamics import HHParams, LIFParams, NeuronState, init_state, simulate
from .errors import ConfigurationError, TrainingDivergedError, UsageError


# ---------------------------------------------------------------------------
# Synaptic filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PSPKernel:
    """Causal exponential-decay kernel, taps normalized to unit sum."""

    tau_decay: float
    length: int
    dt: float = 0.1

    def __post_init__(self):
        if self.tau_decay <= 0:
            raise ConfigurationError("tau_decay must be > 0")
        if self.length < 1:
            raise ConfigurationError("kernel length must be >= 1")

    @property
    def taps(self) -> np.ndarray:
        w = np.exp(-np.arange(self.length) * self.dt / self.tau_decay)
        return w / w.sum()


def psp_filter(spikes: np.ndarray, kernel: PSPKernel) -> np.ndarray:
    """Causal convolution along the leading (time) axis."""
    x = np.asarray(spikes, dtype=np.float64)
    return lfilter(kernel.taps, [1.0], x, axis=0)


# ---------------------------------------------------------------------------
# Metric and losses
# ---------------------------------------------------------------------------

def smape(pred, truth) -> float:
    """Symmetric mean absolute percentage error in [0, 100].

    Per-element |pred - truth| / (|pred| + |truth|), averaged and scaled by
    100; a 0/0 element counts as perfect agreement (0).
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0:
        raise UsageError("smape requires non-empty input")
    if pred.shape != truth.shape:
        raise UsageError("smape requires equal-length inputs")
    num = np.abs(pred - truth)
    den = np.abs(pred) + np.abs(truth)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * terms.mean())


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient seed d(loss)/d(pred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError("mse_loss shape mismatch")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    seed = 2.0 * diff / diff.size
    return loss, seed


def cross_entropy_loss(logits: np.ndarray, target: np.ndarray):
    """Softmax cross-entropy over the trailing axis, mean over rows.

    target holds integer class indices; returns (loss, d(loss)/d(logits)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    rows = np.arange(target.shape[0])
    n = target.shape[0]
    loss = float(-np.mean(np.log(p[rows, target])))
    seed = p.copy()
    seed[rows, target] -= 1.0
    return loss, seed / n


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam with per-parameter moment buffers."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None) -> dict:
    """One Adam update; returns the new parameter dict."""
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.m[name] = m
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m[...] = state.beta1 * m + (1 - state.beta1) * g
        v[...] = state.beta2 * v + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from base_lr to 0 over the run."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(total_epochs, 1)))


# ---------------------------------------------------------------------------
# Trace segmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentationScheme:
    """Sliced sample layout: an unsupervised warm-up prefix of pad_len steps
    followed by out_len supervised steps. Supervised windows of consecutive
    samples tile the trace without overlap; prefixes may overlap."""

    pad_len: int
    out_len: int

    def __post_init__(self):
        if self.pad_len < 0 or self.out_len <= 0:
            raise ConfigurationError("invalid segmentation scheme")


def segment_traces(input_trace: np.ndarray, output_trace: np.ndarray, scheme: SegmentationScheme):
    """Cut a long paired recording into (input, target) samples.

    Returns a list of (input_window, target_window) where input windows span
    pad_len + out_len steps and target windows the trailing out_len steps.
    """
    input_trace = np.asarray(input_trace)
    output_trace = np.asarray(output_trace)
    T = input_trace.shape[0]
    if output_trace.shape[0] != T:
        raise UsageError("input and output traces must share length")
    n = (T - scheme.pad_len) // scheme.out_len
    samples = []
    for k in range(max(n, 0)):
        lo = k * scheme.out_len
        hi = lo + scheme.pad_len + scheme.out_len
        samples.append((input_trace[lo:hi], output_trace[lo + scheme.pad_len:hi]))
    return samples


def split_dataset(n_samples: int, rng: np.random.Generator, ratio=(3, 1)):
    """Shuffled train/test index split; train side takes the floor."""
    idx = rng.permutation(n_samples)
    n_train = n_samples * ratio[0] // (ratio[0] + ratio[1])
    return idx[:n_train], idx[n_train:]


# ---------------------------------------------------------------------------
# Dense layer
# ---------------------------------------------------------------------------

@dataclass
class DenseLayer:
    """Affine map over the trailing axis: y = x @ W.T + b."""

    weights: np.ndarray   # (out, in)
    bias: np.ndarray      # (out,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias

    @staticmethod
    def init(n_out: int, n_in: int, rng: np.random.Generator, scale: float | None = None) -> "DenseLayer":
        scale = scale if scale is not None else 1.0 / math.sqrt(n_in)
        return DenseLayer(rng.normal(0.0, scale, size=(n_out, n_in)), np.zeros(n_out))


# ---------------------------------------------------------------------------
# Teacher-student readout task
# ---------------------------------------------------------------------------

@dataclass
class ReadoutModel:
    """The fitting pipeline: PSP filter, dendrite layer, point neuron, and an
    affine output scaling. The filter and neuron carry no trainables."""

    dense: DenseLayer
    scale_w: float
    scale_b: float
    neuron: HHParams
    kernel: PSPKernel

    def filter_inputs(self, spikes: np.ndarray) -> np.ndarray:
        """spikes (B, T, C) -> filtered currents (B, T, C)."""
        return np.moveaxis(psp_filter(np.moveaxis(spikes, 1, 0), self.kernel), 0, 1)

    def forward(self, filtered: np.ndarray):
        """filtered (B, T, C) -> (prediction (B, T), membrane (B, T))."""
        drive = self.dense(filtered)[..., 0]           # (B, T)
        i_series = np.ascontiguousarray(np.moveaxis(drive, 0, 1))   # (T, B)
        state0 = init_state(self.neuron, i_series.shape[1:])
        trace = simulate(self.neuron, i_series, state0=state0)
        v = np.moveaxis(trace.v_series, 0, 1)          # (B, T)
        return self.scale_w * v + self.scale_b, v

    def params(self) -> dict:
        return {
            "w": self.dense.weights,
            "b": self.dense.bias,
            "scale_w": np.float64(self.scale_w),
            "scale_b": np.float64(self.scale_b),
        }

    def load_params(self, p: dict) -> None:
        self.dense.weights = np.asarray(p["w"], dtype=np.float64)
        self.dense.bias = np.asarray(p["b"], dtype=np.float64)
        self.scale_w = float(p["scale_w"])
        self.scale_b = float(p["scale_b"])

    def grads(self, filtered: np.ndarray, seed_pred: np.ndarray, v: np.ndarray,
              surrogate: SurrogateSpec | None = None) -> dict:
        """Backpropagate d(loss)/d(prediction) to every trainable."""
        d_scale_w = float(np.sum(seed_pred * v))
        d_scale_b = float(np.sum(seed_pred))
        seed_v = np.ascontiguousarray(np.moveaxis(seed_pred * self.scale_w, 0, 1))  # (T, B)
        drive = self.dense(filtered)[..., 0]
        i_series = np.ascontiguousarray(np.moveaxis(drive, 0, 1))
        state0 = init_state(self.neuron, i_series.shape[1:])
        res = backward_through_time(self.neuron, state0, i_series, seed_v, surrogate=surrogate)
        d_drive = np.moveaxis(res.d_i, 0, 1)           # (B, T)
        d_w = np.einsum("bt,btc->c", d_drive, filtered)[None, :]
        d_b = np.array([float(np.sum(d_drive))])
        return {"w": d_w, "b": d_b, "scale_w": d_scale_w, "scale_b": d_scale_b}


@dataclass
class TeacherStudentTask:
    """Synthetic dataset: a frozen teacher readout labels Poisson spike trains."""

    teacher: ReadoutModel
    train_inputs: np.ndarray   # (B, T, C) binary
    train_targets: np.ndarray  # (B, T)
    val_inputs: np.ndarray
    val_targets: np.ndarray
    pad_len: int


def make_teacher_student_task(
    n_channels: int = 64,
    n_steps: int = 500,
    n_train: int = 16,
    n_val: int = 8,
    rate_hz: float = 60.0,
    pad_len: int = 50,
    seed: int = 0,
    neuron: HHParams | None = None,
) -> TeacherStudentTask:
    """Build the synthetic fitting task.

    Half the channels are excitatory, half inhibitory; the teacher's dendrite
    weights are signed accordingly and scaled so the neuron runs in a mixed
    sub/supra-threshold regime.
    """
    rng = np.random.default_rng(seed)
    neuron = neuron if neuron is not None else cortical_rs_params(dt=0.1)
    kernel = PSPKernel(tau_decay=2.0, length=64, dt=neuron.dt)

    n_exc = n_channels // 2
    w = np.empty((1, n_channels))
    w[0, :n_exc] = rng.uniform(0.5, 1.5, n_exc)
    w[0, n_exc:] = -rng.uniform(0.1, 0.6, n_channels - n_exc)
    # Scaled so the teacher runs just under threshold with large nonlinear
    # subthreshold swings; fitting stays well-conditioned there.
    w *= 16.0 / n_channels
    teacher = ReadoutModel(DenseLayer(w, np.array([0.45])), 1.0, 0.0, neuron, kernel)

    p_spike = rate_hz * neuron.dt / 1000.0
    def draw(n):
        return (rng.random((n, n_steps, n_channels)) < p_spike).astype(np.float64)

    train_inputs = draw(n_train)
    val_inputs = draw(n_val)
    train_targets, _ = teacher.forward(teacher.filter_inputs(train_inputs))
    val_targets, _ = teacher.forward(teacher.filter_inputs(val_inputs))
    return TeacherStudentTask(teacher, train_inputs, train_targets, val_inputs, val_targets, pad_len)


def make_student(task: TeacherStudentTask, seed: int = 1) -> ReadoutModel:
    """Same architecture as the teacher with re-initialized trainables."""
    rng = np.random.default_rng(seed)
    t = task.teacher
    n_in = t.dense.weights.shape[1]
    dense = DenseLayer.init(1, n_in, rng, scale=4.0 / n_in)
    return ReadoutModel(dense, 1.0, 0.0, t.neuron, t.kernel)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 5e-4
    cosine: bool = True
    freeze: bool = False


def evaluate_smape(model: ReadoutModel, inputs: np.ndarray, targets: np.ndarray, pad_len: int) -> float:
    pred, _ = model.forward(model.filter_inputs(inputs))
    return smape(pred[:, pad_len:], targets[:, pad_len:])


def fit(model: ReadoutModel, task: TeacherStudentTask, config: TrainConfig):
    """Full-batch gradient fitting; returns per-epoch history.

    history rows: (epoch, train_loss, val_smape). Deterministic for a fixed
    task and initial model.
    """
    filtered = model.filter_inputs(task.train_inputs)
    pad = task.pad_len
    opt = AdamState(lr=config.lr)
    history = []
    params = model.params()
    for epoch in range(config.epochs):
        model.load_params(params)
        pred, v = model.forward(filtered)
        mask = np.zeros_like(pred)
        mask[:, pad:] = 1.0
        loss, seed = mse_loss(pred * mask, task.train_targets * mask)
        if not np.isfinite(loss):
            raise TrainingDivergedError("training loss became non-finite", epoch)
        if not config.freeze:
            grads = model.grads(filtered, seed * mask, v)
            lr = cosine_lr(config.lr, epoch, config.epochs) if config.cosine else config.lr
            params = adam_step(params, grads, opt, lr=lr)
        val = evaluate_smape(model, task.val_inputs, task.val_targets, pad)
        history.append((epoch, loss, val))
    model.load_params(params)
    return history


# ---------------------------------------------------------------------------
# Dataset and history files
# ---------------------------------------------------------------------------

def write_ndjson_dataset(path, inputs: np.ndarray, targets: np.ndarray, pad_len: int) -> None:
    """One record per sample: {input: 2-D, target: 2-D, pad_len}."""
    with open(path, "w") as f:
        for x, y in zip(inputs, targets):
            rec = {
                "input": np.asarray(x).tolist(),
                "target": np.atleast_2d(np.asarray(y)).T.tolist() if np.asarray(y).ndim == 1
                else np.asarray(y).tolist(),
                "pad_len": pad_len,
            }
            f.write(json.dumps(rec) + "\n")


def read_ndjson_dataset(path):
    inputs, targets, pad = [], [], 0
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            inputs.append(np.asarray(rec["input"], dtype=np.float64))
            targets.append(np.asarray(rec["target"], dtype=np.float64))
            pad = int(rec["pad_len"])
    return np.stack(inputs), np.stack(targets), pad


def write_history_csv(path, history) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_smape\n")
        for epoch, loss, val in history:
            f.write(f"{epoch},{loss!r},{val!r}\n")
