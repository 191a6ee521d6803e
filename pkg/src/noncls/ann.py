"""Feed-forward classifier for nonclassicality depths.

Labeled training data is generated from the twin-beam model (histogram in,
depth class out), and a small from-scratch multi-layer perceptron with
ReLU hidden layers and a softmax head is trained on it with ADAM on
categorical cross-entropy.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, EmptyClassError, ValidationError
from .nonclassicality import (effective_mode_count, factorial_moments,
                              ncd_max, witness_set)
from .photostats import (DetectorParams, Distribution, TwinBeamParams,
                         compound_cutoff, detection_matrix, response_cutoff,
                         twin_beam_joint)

INPUT_BINS = 40

# ---------------------------------------------------------------------------
# classes and data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassScheme:
    """Equidistant depth classes on [tau_min, tau_max].

    Class c covers [tau_min + c w, tau_min + (c+1) w); a value exactly on an
    interior edge belongs to the higher class, and the top class is closed
    at tau_max.
    """

    tau_min: float
    tau_max: float
    n_classes: int

    def __post_init__(self):
        if not (self.tau_min < self.tau_max):
            raise ValidationError("tau_min must be below tau_max")
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")

    @property
    def width(self) -> float:
        return (self.tau_max - self.tau_min) / self.n_classes

    def contains(self, tau: float) -> bool:
        return self.tau_min <= tau <= self.tau_max

    def label(self, tau: float) -> int:
        if not self.contains(tau):
            raise ValidationError(f"tau={tau} outside "
                                  f"[{self.tau_min}, {self.tau_max}]")
        c = int(math.floor((tau - self.tau_min) / self.width))
        return min(c, self.n_classes - 1)

    def midpoint(self, label: int) -> float:
        if not (0 <= label < self.n_classes):
            raise ValidationError("label outside the scheme")
        return self.tau_min + (label + 0.5) * self.width


@dataclass
class TrainingSet:
    """Sample matrix plus the provenance needed to re-derive its labels."""

    x: np.ndarray          # (n, INPUT_BINS)
    labels: np.ndarray     # (n,) int
    tau_true: np.ndarray   # (n,)
    b_p: np.ndarray        # (n,)
    c_s: np.ndarray        # (n,) int
    scheme: ClassScheme
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 2:
            raise ValidationError("x must be 2-D")
        if np.any(self.x < 0) or np.any(self.x.sum(axis=1) > 1.0 + 1e-9):
            raise ValidationError("inputs must be nonnegative histogram "
                                  "prefixes with mass <= 1")

    def __len__(self) -> int:
        return self.x.shape[0]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.scheme.n_classes)

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.x[idx], self.labels[idx], self.tau_true[idx],
                           self.b_p[idx], self.c_s[idx], self.scheme,
                           dict(self.metadata))


def concat_training_sets(sets) -> TrainingSet:
    """Concatenate sets sharing one class scheme (e.g. several c_s slices)."""
    sets = list(sets)
    if not sets:
        raise ValidationError("nothing to concatenate")
    scheme = sets[0].scheme
    if any(ts.scheme != scheme for ts in sets):
        raise ValidationError("sets use different class schemes")
    meta = {"merged_from": [ts.metadata for ts in sets]}
    return TrainingSet(np.concatenate([ts.x for ts in sets]),
                       np.concatenate([ts.labels for ts in sets]),
                       np.concatenate([ts.tau_true for ts in sets]),
                       np.concatenate([ts.b_p for ts in sets]),
                       np.concatenate([ts.c_s for ts in sets]),
                       scheme, meta)


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------


@dataclass
class MlpModel:
    """Dense feed-forward network: ReLU hidden layers, softmax output."""

    layer_sizes: tuple
    weights: list          # per layer, shape (fan_in, fan_out)
    biases: list           # per layer, shape (fan_out,)

    def __post_init__(self):
        expect = len(self.layer_sizes) - 1
        if len(self.weights) != expect or len(self.biases) != expect:
            raise ValidationError("layer count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]):
                raise ValidationError(f"weight {i} has shape {w.shape}")
            if b.shape != (self.layer_sizes[i + 1],):
                raise ValidationError(f"bias {i} has shape {b.shape}")

    @property
    def activations(self) -> tuple:
        return ("relu",) * (len(self.weights) - 1) + ("softmax",)

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_sizes,
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])


def init_mlp(layer_sizes, seed: int) -> MlpModel:
    """Fresh network: zero biases, weights scaled sqrt(2/fan_in) on ReLU
    layers and sqrt(1/fan_in) on the output layer."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValidationError("need at least input and output layers")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = 2.0 if i < len(sizes) - 2 else 1.0
        weights.append(rng.normal(0.0, math.sqrt(gain / sizes[i]),
                                  size=(sizes[i], sizes[i + 1])))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpModel(sizes, weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(model: MlpModel, x: np.ndarray):
    """Returns (list of post-activation layer outputs, softmax probs)."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = _softmax(z) if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, h


def mlp_forward(model: MlpModel, x) -> np.ndarray:
    """Class probabilities for one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.layer_sizes[0],):
        raise ValidationError(f"input must have length {model.layer_sizes[0]}")
    return _forward_batch(model, x[None, :])[1][0]


def cross_entropy(onehot, q) -> float:
    """-sum p log q with the model probabilities clamped at 1e-15."""
    p = np.asarray(onehot, dtype=float)
    qq = np.maximum(np.asarray(q, dtype=float), 1e-15)
    return float(-(p * np.log(qq)).sum())


@dataclass
class Grads:
    weights: list
    biases: list


def _backprop_batch(model: MlpModel, x: np.ndarray, onehot: np.ndarray) -> Grads:
    """Mean gradient of cross-entropy over a batch.

    Softmax and cross-entropy are fused at the output (logit gradient is
    q - onehot); the ReLU subgradient at 0 is taken as 0.
    """
    acts, q = _forward_batch(model, x)
    batch = x.shape[0]
    delta = (q - onehot) / batch
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0.0)
    return Grads(gw, gb)


def backprop(model: MlpModel, x, onehot) -> Grads:
    """Exact gradients of cross_entropy(mlp_forward(x)) for one sample."""
    x = np.asarray(x, dtype=float)[None, :]
    onehot = np.asarray(onehot, dtype=float)[None, :]
    return _backprop_batch(model, x, onehot)


@dataclass
class AdamState:
    """First/second moment accumulators and hyperparameters."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(model: MlpModel, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(m_w=[np.zeros_like(w) for w in model.weights],
                     v_w=[np.zeros_like(w) for w in model.weights],
                     m_b=[np.zeros_like(b) for b in model.biases],
                     v_b=[np.zeros_like(b) for b in model.biases],
                     step=0, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(model: MlpModel, grads: Grads,
              state: AdamState) -> tuple[MlpModel, AdamState]:
    """One bias-corrected ADAM update; returns the new model and state."""
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_w, new_b = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    for i in range(len(model.weights)):
        mw = state.beta1 * state.m_w[i] + (1 - state.beta1) * grads.weights[i]
        vw = state.beta2 * state.v_w[i] + (1 - state.beta2) * grads.weights[i] ** 2
        mb = state.beta1 * state.m_b[i] + (1 - state.beta1) * grads.biases[i]
        vb = state.beta2 * state.v_b[i] + (1 - state.beta2) * grads.biases[i] ** 2
        new_w.append(model.weights[i] - state.lr * (mw / c1)
                     / (np.sqrt(vw / c2) + state.epsilon))
        new_b.append(model.biases[i] - state.lr * (mb / c1)
                     / (np.sqrt(vb / c2) + state.epsilon))
        m_w.append(mw); v_w.append(vw); m_b.append(mb); v_b.append(vb)
    return (MlpModel(model.layer_sizes, new_w, new_b),
            AdamState(m_w, v_w, m_b, v_b, step=t, lr=state.lr,
                      beta1=state.beta1, beta2=state.beta2,
                      epsilon=state.epsilon))


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MlpModel
    best_model: MlpModel
    metrics: list  # per-epoch dicts: train_loss, val_loss, val_accuracy


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def train(model: MlpModel, ts: TrainingSet, epochs: int,
          batch_size: int = 256, split: float = 0.8, seed: int = 0,
          lr: float = 1e-3) -> TrainResult:
    """Mini-batch ADAM training with a deterministic train/validation split.

    Records per-epoch training loss, validation loss, and validation
    accuracy; keeps the best-validation snapshot alongside the final model.

    Raises:
        DivergenceError: the loss became non-finite.
    """
    if not (0.0 < split < 1.0):
        raise ValidationError("split must be inside (0, 1)")
    if len(ts) == 0:
        raise ValidationError("empty training set")
    n_classes = ts.scheme.n_classes
    if model.layer_sizes[-1] != n_classes:
        raise ValidationError("output layer does not match the class count")
    if epochs == 0:
        return TrainResult(model.copy(), model.copy(), [])

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ts))
    n_train = int(round(split * len(ts)))
    tr_idx, va_idx = perm[:n_train], perm[n_train:]
    x_tr, y_tr = ts.x[tr_idx], ts.labels[tr_idx]
    x_va, y_va = ts.x[va_idx], ts.labels[va_idx]
    oh_va = _onehot(y_va, n_classes)

    state = init_adam(model, lr=lr)
    model = model.copy()
    best = model.copy()
    best_acc = -1.0
    metrics = []
    for _ in range(epochs):
        order = rng.permutation(n_train)
        losses = []
        for lo in range(0, n_train, batch_size):
            sel = order[lo:lo + batch_size]
            xb = x_tr[sel]
            oh = _onehot(y_tr[sel], n_classes)
            _, q = _forward_batch(model, xb)
            loss = cross_entropy(oh, q) / sel.size
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss {loss!r}")
            losses.append(loss)
            grads = _backprop_batch(model, xb, oh)
            model, state = adam_step(model, grads, state)
        _, q_va = _forward_batch(model, x_va)
        val_loss = cross_entropy(oh_va, q_va) / max(1, y_va.size)
        val_acc = float((q_va.argmax(axis=1) == y_va).mean()) if y_va.size else 0.0
        metrics.append({"train_loss": float(np.mean(losses)),
                        "val_loss": float(val_loss),
                        "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc = val_acc
            best = model.copy()
    return TrainResult(model, best, metrics)


def classify(model: MlpModel, x, scheme: ClassScheme):
    """(class index, depth midpoint, class probabilities) for one histogram.

    Argmax ties resolve to the lowest class index.
    """
    probs = mlp_forward(model, x)
    label = int(np.argmax(probs))
    return label, scheme.midpoint(label), probs


@dataclass
class EvalResult:
    accuracy: float
    within_one: float
    confusion: np.ndarray  # confusion[true, predicted]


def evaluate(model: MlpModel, ts: TrainingSet) -> EvalResult:
    """Exact and plus/minus-one class accuracy with the confusion matrix."""
    _, q = _forward_batch(model, ts.x)
    pred = q.argmax(axis=1)
    n = ts.scheme.n_classes
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (ts.labels, pred), 1)
    acc = float((pred == ts.labels).mean())
    near = float((np.abs(pred - ts.labels) <= 1).mean())
    return EvalResult(accuracy=acc, within_one=near, confusion=conf)


# ---------------------------------------------------------------------------
# training-data generation
# ---------------------------------------------------------------------------


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def solve_noise_means(base: TwinBeamParams, b_p: float) -> TwinBeamParams:
    """Twin-beam parameters at pair mean b_p with the beam means held at
    the base values (mode counts fixed, noise means absorb the change)."""
    b_s = (base.signal_mean - base.m_p * b_p) / base.m_s
    b_i = (base.idler_mean - base.m_p * b_p) / base.m_i
    if b_s < 0 or b_i < 0:
        raise ValidationError(
            f"b_p={b_p} pushes a noise mean negative "
            f"(limit {min(base.signal_mean, base.idler_mean) / base.m_p:.6g})")
    return TwinBeamParams(m_p=base.m_p, m_s=base.m_s, m_i=base.m_i,
                          b_p=b_p, b_s=b_s, b_i=b_i)


def generate_training_set(base: TwinBeamParams, det_s: DetectorParams,
                          det_i: DetectorParams, c_s: int, b_p_grid,
                          scheme: ClassScheme, per_class: int,
                          noise_frames: int | None, kind: str, seed: int,
                          *, max_order: int | None = None,
                          m_eff: float | None = None,
                          tail_tol: float = 1e-9) -> TrainingSet:
    """Labeled histograms for one post-selection slice.

    For each pair mean in the grid the beam means stay pinned at the base
    values, the post-selected idler distribution is labeled with its depth,
    and the detector-convolved histogram (40-bin prefix, not renormalized)
    becomes the input.  Each class is then filled with ``per_class``
    samples; with ``noise_frames`` set every sample is an independent
    multinomial resampling at that frame count, otherwise clean duplicates.
    Depths outside the scheme are skipped and counted.  Deterministic for a
    given seed.

    Raises:
        ValidationError: a grid point drives a noise mean negative.
        EmptyClassError: some class receives no grid point.
    """
    b_p_grid = [float(b) for b in b_p_grid]
    for b in b_p_grid:
        solve_noise_means(base, b)  # feasibility of the whole grid up front
    if kind not in ("intensity", "probability"):
        raise ValidationError(f"unknown witness kind {kind!r}")
    order = max_order or (3 if kind == "intensity" else 9)
    witnesses = witness_set(order)

    # shared grids: means are pinned, so one photon window fits every b_p
    ext = [solve_noise_means(base, b) for b in (min(b_p_grid), max(b_p_grid))]
    l_s = max(compound_cutoff([(p.m_s, p.b_s), (p.m_p, p.b_p)], tail_tol * 5e-4)
              for p in ext)
    l_i = max(compound_cutoff([(p.m_i, p.b_i), (p.m_p, p.b_p)], tail_tol * 5e-4)
              for p in ext)
    t_s_row = detection_matrix(det_s, c_s, l_s, validate=False).entries[c_s]
    c_full = min(det_i.n_pix, max(INPUT_BINS - 1,
                                  response_cutoff(det_i, l_i, 1e-12)))
    t_i = detection_matrix(det_i, c_full, l_i, validate=False)

    pool = {"x": [], "f": [], "tau": [], "label": [], "b_p": []}
    skipped = 0
    for b in b_p_grid:
        params = solve_noise_means(base, b)
        joint = twin_beam_joint(params, cutoffs=(l_s, l_i), tail_tol=tail_tol)
        weights = t_s_row @ joint.probs
        post = weights.sum()
        if post < 1e-12:
            skipped += 1
            continue
        p_cond = Distribution(weights / post)
        source = (factorial_moments(p_cond, order) if kind == "intensity"
                  else p_cond)
        mode_count = m_eff if m_eff is not None else effective_mode_count(
            factorial_moments(p_cond, 2), base.m_p + base.m_i)
        tau = ncd_max(source, witnesses, mode_count, kind).tau_max
        if not scheme.contains(tau):
            skipped += 1
            continue
        f_full = t_i.entries @ p_cond.probs
        pool["x"].append(f_full[:INPUT_BINS])
        pool["f"].append(f_full)
        pool["tau"].append(tau)
        pool["label"].append(scheme.label(tau))
        pool["b_p"].append(b)

    labels = np.array(pool["label"], dtype=np.int64)
    empty = [c for c in range(scheme.n_classes)
             if not np.any(labels == c)]
    if empty:
        raise EmptyClassError(empty)

    ss = np.random.SeedSequence(seed)
    pick_rng = np.random.default_rng(ss.spawn(1)[0])
    rows_x, rows_tau, rows_label, rows_bp = [], [], [], []
    for c in range(scheme.n_classes):
        members = np.nonzero(labels == c)[0]
        chosen = (pick_rng.choice(members, per_class, replace=True)
                  if members.size < per_class
                  else pick_rng.choice(members, per_class, replace=False))
        for i in chosen:
            i = int(i)
            if noise_frames is None:
                rows_x.append(pool["x"][i])
            else:
                f = pool["f"][i]
                counts = pick_rng.multinomial(noise_frames, f / f.sum())
                rows_x.append(counts[:INPUT_BINS] / noise_frames)
            rows_tau.append(pool["tau"][i])
            rows_label.append(c)
            rows_bp.append(pool["b_p"][i])
    order_shuffle = pick_rng.permutation(len(rows_x))
    meta = {"seed": seed, "skipped_out_of_range": skipped,
            "kind": kind, "max_order": order, "noise_frames": noise_frames,
            "m_eff": m_eff,
            "config_hash": _config_hash({
                "base": [base.m_p, base.m_s, base.m_i,
                         base.b_p, base.b_s, base.b_i],
                "det_s": [det_s.eta, det_s.d, det_s.n_pix],
                "det_i": [det_i.eta, det_i.d, det_i.n_pix],
                "c_s": c_s, "grid": b_p_grid, "per_class": per_class,
                "kind": kind, "seed": seed, "noise_frames": noise_frames})}
    return TrainingSet(np.asarray(rows_x)[order_shuffle],
                       np.asarray(rows_label, dtype=np.int64)[order_shuffle],
                       np.asarray(rows_tau)[order_shuffle],
                       np.asarray(rows_bp)[order_shuffle],
                       np.full(len(rows_x), c_s, dtype=np.int64)[order_shuffle],
                       scheme, meta)


def balance_classes(ts: TrainingSet, per_class: int, seed: int) -> TrainingSet:
    """Resample every class to exactly ``per_class`` samples.

    Undersamples without replacement, oversamples with replacement, then
    shuffles deterministically.

    Raises:
        EmptyClassError: listing the classes with no samples.
    """
    counts = ts.class_counts()
    empty = [c for c in range(ts.scheme.n_classes) if counts[c] == 0]
    if empty:
        raise EmptyClassError(empty)
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ts.scheme.n_classes):
        members = np.nonzero(ts.labels == c)[0]
        chosen.append(rng.choice(members, per_class,
                                 replace=members.size < per_class))
    idx = np.concatenate(chosen)
    out = ts.subset(rng.permutation(idx))
    out.metadata = dict(ts.metadata, balanced_per_class=per_class,
                        balance_seed=seed)
    return out
