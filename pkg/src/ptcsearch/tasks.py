"""Desk-scale tasks, phase-noise injection, and robustness evaluation."""
import copy
import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .mesh import SuperMesh, WeightPartition, certainty_gates
from .optim import Adam
from .topology import Topology


# ---------------------------------------------------------------------------
# tasks

@dataclass
class MatrixFitTask:
    """Fit the assembled complex weight to a fixed target matrix."""

    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=complex)

    @property
    def m_rows(self):
        return self.target.shape[0]

    @property
    def n_cols(self):
        return self.target.shape[1]

    def sample_batch(self, rng):
        return None

    def loss_and_grad(self, w, batch=None):
        diff = w - self.target
        mn = self.target.size
        loss = float(np.sum(np.abs(diff) ** 2)) / mn
        return loss, 2.0 * diff / mn

    def evaluate(self, w):
        return self.loss_and_grad(w)[0]


@dataclass
class ClassifyTask:
    """Tiny linear classifier: logits are the real part of W x."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    n_classes: int
    batch_size: int = 32

    @property
    def m_rows(self):
        return self.n_classes

    @property
    def n_cols(self):
        return self.x_train.shape[1]

    def sample_batch(self, rng):
        idx = rng.integers(0, self.x_train.shape[0], size=self.batch_size)
        return self.x_train[idx], self.y_train[idx]

    def _ce(self, w, x, y):
        logits = (x @ w.T).real
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        n = x.shape[0]
        loss = -float(np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
        g_logits = probs.copy()
        g_logits[np.arange(n), y] -= 1.0
        g_logits /= n
        return loss, g_logits, probs

    def loss_and_grad(self, w, batch=None):
        x, y = batch if batch is not None else (self.x_train, self.y_train)
        loss, g_logits, _ = self._ce(w, x, y)
        # logits take only the real part, so the cotangent on W is real
        g_w = (g_logits.T @ x).astype(complex)
        return loss, g_w

    def evaluate(self, w, split="val"):
        x, y = (self.x_val, self.y_val) if split == "val" else (self.x_train, self.y_train)
        loss, _, probs = self._ce(w, x, y)
        return loss

    def accuracy(self, w, split="val"):
        x, y = (self.x_val, self.y_val) if split == "val" else (self.x_train, self.y_train)
        pred = np.argmax((x @ w.T).real, axis=1)
        return float(np.mean(pred == y))


def task_loss(task, w, batch=None):
    """Spec-level entry point; accepts a dense W or a WeightPartition."""
    if isinstance(w, WeightPartition):
        w = w.assemble()
    return task.loss_and_grad(w, batch)


def random_unitary(k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish unitary from the QR of a complex Gaussian."""
    z = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def random_matrix_with_singular_values(k: int, singulars, rng) -> np.ndarray:
    u = random_unitary(k, rng)
    v = random_unitary(k, rng)
    return u @ np.diag(np.asarray(singulars, dtype=float)) @ v


# ---------------------------------------------------------------------------
# dataset loading

@dataclass
class NoiseModel:
    """Gaussian phase perturbation in radians."""

    phase_sigma: float = 0.02

    def __post_init__(self):
        if self.phase_sigma < 0:
            raise DomainError("phase_sigma must be nonnegative")


def _split_dataset(features, labels, split, seed, n_classes, batch_size=32):
    rng = np.random.default_rng(seed)
    n = features.shape[0]
    order = rng.permutation(n)
    n_train = int(round(split * n))
    train, val = order[:n_train], order[n_train:]
    return ClassifyTask(features[train], labels[train],
                        features[val], labels[val],
                        n_classes=n_classes, batch_size=batch_size)


def load_dataset(path, fmt="csv", split=0.8, seed=0, labels_path=None):
    """Load a classification task from CSV or IDX files.

    CSV schema: header f0..fn,label; decimal features, integer labels.
    IDX: standard big-endian magic-number layout; labels_path required.
    """
    if fmt == "csv":
        features, labels = _load_csv(path)
    elif fmt == "idx":
        if labels_path is None:
            raise ConfigError("idx format requires labels_path")
        features, labels = _load_idx(path, labels_path)
    else:
        raise ConfigError(f"unknown dataset format '{fmt}'")
    lo = features.min(axis=0)
    span = features.max(axis=0) - lo
    span[span == 0] = 1.0
    features = (features - lo) / span
    n_classes = int(labels.max()) + 1
    if labels.min() < 0:
        raise ConfigError("labels must be nonnegative integers")
    return _split_dataset(features, labels, split, seed, n_classes)


def _load_csv(path):
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV")
        if not header or header[-1].strip() != "label":
            raise ConfigError(f"{path}: last CSV column must be 'label'")
        n_feat = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_feat + 1:
                raise ConfigError(f"{path}: row {lineno} has {len(row)} fields, "
                                  f"expected {n_feat + 1}")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ConfigError(f"{path}: row {lineno}: {exc}") from exc
    if not feats:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(feats, dtype=float), np.asarray(labels, dtype=int)


def _load_idx(images_path, labels_path):
    def read_idx(path):
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 4 or data[0] != 0 or data[1] != 0:
            raise ConfigError(f"{path}: bad IDX magic")
        dtype_code, ndim = data[2], data[3]
        if dtype_code != 0x08:
            raise ConfigError(f"{path}: only unsigned-byte IDX supported")
        dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
        arr = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
        if arr.size != int(np.prod(dims)):
            raise ConfigError(f"{path}: IDX payload size mismatch")
        return arr.reshape(dims)

    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConfigError("IDX image/label counts differ")
    feats = images.reshape(images.shape[0], -1).astype(float)
    return feats, labels.astype(int)


# ---------------------------------------------------------------------------
# noise injection and variation-aware training

def inject_phase_noise(obj, noise: NoiseModel, rng: np.random.Generator):
    """Fresh perturbed copy with phi + N(0, sigma^2); the original is untouched."""
    out = copy.deepcopy(obj)
    if noise.phase_sigma == 0:
        return out
    if isinstance(out, Topology):
        for blk in out.blocks:
            blk.phases = blk.phases + rng.normal(0.0, noise.phase_sigma,
                                                 size=blk.phases.shape)
    elif isinstance(out, SuperMesh):
        out.phi = out.phi + rng.normal(0.0, noise.phase_sigma, size=out.phi.shape)
    else:
        raise DomainError("expected a Topology or SuperMesh")
    return out


def fit_mesh(mesh, task, steps, rng, lr=5e-3, noise=None, target_loss=None):
    """Train phi and sigma of a fixed-structure mesh; returns the loss trace.

    noise: optional NoiseModel applied as a fresh phase draw per forward pass.
    target_loss: optional early stop once the clean loss falls below it.
    """
    gates = certainty_gates(mesh.n_blocks)
    opt = Adam(lr=lr)
    trace = []
    for _ in range(steps):
        phi_noise = None
        if noise is not None and noise.phase_sigma > 0:
            phi_noise = rng.normal(0.0, noise.phase_sigma, size=mesh.phi.shape)
        batch = task.sample_batch(rng)
        w, cache = mesh.forward(gates, binarize=True, phi_noise=phi_noise)
        loss, g_w = task.loss_and_grad(w, batch)
        if not np.isfinite(loss):
            raise DivergenceError("training loss is not finite", snapshot=trace)
        trace.append(loss)
        grads = mesh.backward(cache, g_w)
        opt.step([mesh.phi, mesh.sigma], [grads.phi, grads.sigma])
        if target_loss is not None:
            clean_w, _ = mesh.forward(gates, binarize=True)
            if task.evaluate(clean_w) <= target_loss:
                break
    return trace


def clean_metric(mesh, task):
    w, _ = mesh.forward(certainty_gates(mesh.n_blocks), binarize=True)
    return task.evaluate(w)


def noisy_metric(mesh, task, sigma, rng, trials=20):
    gates = certainty_gates(mesh.n_blocks)
    vals = []
    for _ in range(trials):
        phi_noise = rng.normal(0.0, sigma, size=mesh.phi.shape) if sigma > 0 else None
        w, _ = mesh.forward(gates, binarize=True, phi_noise=phi_noise)
        vals.append(task.evaluate(w))
    return float(np.mean(vals)), float(np.std(vals))


def variation_aware_train(topology: Topology, task, noise: NoiseModel,
                          steps=400, rng=None, lr=5e-3):
    """Retrain phi/sigma of a fixed topology with per-pass phase noise.

    Returns (mesh, metrics) with clean and noisy validation metrics.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    mesh = SuperMesh.from_topology(topology, m_rows=task.m_rows,
                                   n_cols=task.n_cols, rng=rng)
    fit_mesh(mesh, task, steps, rng, lr=lr, noise=noise)
    clean = clean_metric(mesh, task)
    noisy_mean, noisy_std = noisy_metric(mesh, task, noise.phase_sigma, rng)
    return mesh, {"clean": clean, "noisy": noisy_mean, "noisy_std": noisy_std}


def robustness_sweep(model, task, sigmas, trials, rng):
    """Evaluate a trained mesh (or topology with phase snapshot) under noise.

    Returns a list of (sigma, mean_metric, std_metric) rows.
    """
    if trials < 2:
        raise DomainError("robustness sweep needs at least 2 trials")
    if isinstance(model, Topology):
        mesh = SuperMesh.from_topology(model, m_rows=task.m_rows,
                                       n_cols=task.n_cols,
                                       rng=np.random.default_rng(0))
    else:
        mesh = model
    rows = []
    for sigma in sigmas:
        if sigma == 0:
            val = clean_metric(mesh, task)
            rows.append((float(sigma), val, 0.0))
        else:
            mean, std = noisy_metric(mesh, task, sigma, rng, trials=trials)
            rows.append((float(sigma), mean, std))
    return rows
