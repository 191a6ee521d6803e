"""File formats: distributions, configurations, models, results.

CSV columns are ``index[,index2],probability[,count]``; the JSON
alternative carries ``probs``, ``counts``, ``n_frames``, ``meta``.  Floats
are serialized with their shortest round-trip representation, so
write -> read -> write reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .ann import ClassScheme, MlpModel, TrainingSet
from .errors import ValidationError
from .photostats import DetectorParams, Distribution, JointDistribution, \
    TwinBeamParams
from .reconstruct import FitResult

# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def write_distribution_csv(path, dist: Distribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if dist.counts is not None:
            w.writerow(["index", "probability", "count"])
            for i, (p, c) in enumerate(zip(dist.probs, dist.counts)):
                w.writerow([i, repr(float(p)), int(c)])
        else:
            w.writerow(["index", "probability"])
            for i, p in enumerate(dist.probs):
                w.writerow([i, repr(float(p))])


def read_distribution_csv(path) -> Distribution:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "index":
        raise ValidationError(f"{path}: not a distribution CSV")
    has_counts = rows[0][-1] == "count"
    probs = [float(r[1]) for r in rows[1:]]
    counts = [int(r[2]) for r in rows[1:]] if has_counts else None
    n_frames = int(sum(counts)) if counts else None
    return Distribution(np.array(probs),
                        counts=None if counts is None else np.array(counts),
                        n_frames=n_frames)


def write_joint_csv(path, joint: JointDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "index2", "probability"])
        for i in range(joint.probs.shape[0]):
            for j in range(joint.probs.shape[1]):
                w.writerow([i, j, repr(float(joint.probs[i, j]))])


def read_joint_csv(path) -> JointDistribution:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["index", "index2"]:
        raise ValidationError(f"{path}: not a joint-distribution CSV")
    body = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:]]
    n_s = max(r[0] for r in body) + 1
    n_i = max(r[1] for r in body) + 1
    probs = np.zeros((n_s, n_i))
    for i, j, p in body:
        probs[i, j] = p
    return JointDistribution(probs)


def write_distribution_json(path, dist: Distribution) -> None:
    payload = {"probs": [float(p) for p in dist.probs],
               "counts": None if dist.counts is None
               else [int(c) for c in dist.counts],
               "n_frames": dist.n_frames,
               "meta": dist.meta}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def read_distribution_json(path) -> Distribution:
    payload = json.loads(Path(path).read_text())
    return Distribution(np.array(payload["probs"], dtype=float),
                        counts=None if payload.get("counts") is None
                        else np.array(payload["counts"], dtype=np.int64),
                        n_frames=payload.get("n_frames"),
                        meta=payload.get("meta") or {})


def read_distribution(path) -> Distribution:
    path = Path(path)
    if path.suffix == ".json":
        return read_distribution_json(path)
    return read_distribution_csv(path)


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

_DETECTOR_KEYS = {"eta", "d", "n_pix"}
_TWIN_KEYS = {"m_p", "m_s", "m_i", "b_p", "b_s", "b_i"}


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid configuration: {exc}") from exc


def detector_from_mapping(cfg: dict) -> DetectorParams:
    """Detector from keys eta, d, d_convention (per_pixel|per_roi), n_pix."""
    missing = _DETECTOR_KEYS - cfg.keys()
    if missing:
        raise ValidationError(f"detector config missing keys {sorted(missing)}")
    convention = cfg.get("d_convention", "per_pixel")
    d = float(cfg["d"])
    n_pix = int(cfg["n_pix"])
    if convention == "per_roi":
        d = d / n_pix
    elif convention != "per_pixel":
        raise ValidationError(f"unknown d_convention {convention!r}")
    return DetectorParams(eta=float(cfg["eta"]), d=d, n_pix=n_pix)


def twin_beam_from_mapping(cfg: dict) -> TwinBeamParams:
    missing = _TWIN_KEYS - cfg.keys()
    if missing:
        raise ValidationError(f"twin-beam config missing keys {sorted(missing)}")
    return TwinBeamParams(**{k: float(cfg[k]) for k in sorted(_TWIN_KEYS)})


def load_detector(path) -> DetectorParams:
    return detector_from_mapping(load_config(path))


def load_twin_beam(path) -> TwinBeamParams:
    return twin_beam_from_mapping(load_config(path))


# ---------------------------------------------------------------------------
# models and results
# ---------------------------------------------------------------------------


def save_model(path, model: MlpModel, scheme: ClassScheme,
               train_config_hash: str = "") -> None:
    payload = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [[repr(float(v)) for v in w.ravel()] for w in model.weights],
        "biases": [[repr(float(v)) for v in b] for b in model.biases],
        "activations": list(model.activations),
        "class_scheme": {"tau_min": scheme.tau_min, "tau_max": scheme.tau_max,
                         "n_classes": scheme.n_classes},
        "train_config_hash": train_config_hash,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_model(path) -> tuple[MlpModel, ClassScheme, str]:
    payload = json.loads(Path(path).read_text())
    sizes = tuple(payload["layer_sizes"])
    weights = [np.array([float(v) for v in w]).reshape(sizes[i], sizes[i + 1])
               for i, w in enumerate(payload["weights"])]
    biases = [np.array([float(v) for v in b]) for b in payload["biases"]]
    sch = payload["class_scheme"]
    return (MlpModel(sizes, weights, biases),
            ClassScheme(sch["tau_min"], sch["tau_max"], sch["n_classes"]),
            payload.get("train_config_hash", ""))


def save_fit_result(path, result: FitResult) -> None:
    p = result.params
    payload = {"params": {"m_p": p.m_p, "m_s": p.m_s, "m_i": p.m_i,
                          "b_p": p.b_p, "b_s": p.b_s, "b_i": p.b_i},
               "objective_value": result.objective_value,
               "converged": result.converged,
               "n_evals": result.n_evals,
               "message": result.message}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# training sets (directory of .npy arrays + metadata)
# ---------------------------------------------------------------------------


def save_training_set(directory, ts: TrainingSet) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "x.npy", ts.x)
    np.save(directory / "labels.npy", ts.labels)
    np.save(directory / "tau_true.npy", ts.tau_true)
    np.save(directory / "b_p.npy", ts.b_p)
    np.save(directory / "c_s.npy", ts.c_s)
    meta = dict(ts.metadata)
    meta["scheme"] = {"tau_min": ts.scheme.tau_min,
                      "tau_max": ts.scheme.tau_max,
                      "n_classes": ts.scheme.n_classes}
    (directory / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_training_set(directory) -> TrainingSet:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    sch = meta.pop("scheme")
    return TrainingSet(np.load(directory / "x.npy"),
                       np.load(directory / "labels.npy"),
                       np.load(directory / "tau_true.npy"),
                       np.load(directory / "b_p.npy"),
                       np.load(directory / "c_s.npy"),
                       ClassScheme(sch["tau_min"], sch["tau_max"],
                                   sch["n_classes"]),
                       meta)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()
