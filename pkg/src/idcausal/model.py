"""Variational causal-strength model for samples of multi-value variables.

Pipeline for one sample ``X`` (N x D), all batched over a leading axis:

* encoder: dot-product attention scores restricted to the strict lower
  triangle, softmax per row -> strength matrix ``a_hat``;
* ``BL + E = GNN_enc(a_hat, X)``, then two MLP heads split it into the noise
  ``e_hat`` and the confounder estimate ``l_hat``;
* decoder: ``x_hat = GNN_dec((I - a_hat)^-1, e_hat)`` with
  ``GNN(A, X) = elu(A (X W_in)) W_out``;
* confounding head: sigmoid-gated, normalised node weights times ``X``;
* loss: reconstruction in correlation space, gated by the confounding score
  ``omega = rank(l_hat) / N``, plus the closed-form KL between the Gaussian
  posterior over strengths and a standard normal prior.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from . import tensor as T
from .deconfound import apply_gate
from .scm import Dataset, Sample
from .tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "ModelParams",
    "ForwardOutput",
    "TrainingError",
    "NonFiniteLossError",
    "InputError",
    "lower_mask",
    "encode",
    "decode",
    "estimate_confounding",
    "forward",
    "pair_similarity_sum",
    "gaussian_kl",
    "loss",
    "train",
    "predict",
    "representations",
    "save_checkpoint",
    "load_checkpoint",
]


class InputError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, msg: str, parts: dict):
        super().__init__(msg)
        self.parts = parts


class TrainingError(RuntimeError):
    """Training diverged; carries the last parameters that gave a finite loss."""

    def __init__(self, msg: str, params: "ModelParams", history: list[dict]):
        super().__init__(msg)
        self.params = params
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 50
    hidden_dim: int = 768
    seed: int = 0
    rank_tol: float = 1e-6
    sigma_q_init: float = 0.1
    sample_posterior: bool = True
    gate_threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.hidden_dim < 1:
            raise ValueError("batch_size and hidden_dim must be >= 1, epochs >= 0")
        if self.rank_tol <= 0 or self.sigma_q_init <= 0:
            raise ValueError("rank_tol and sigma_q_init must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        from .config import read_config

        return cls.from_dict(read_config(path))

    def to_dict(self) -> dict:
        return asdict(self)


# name -> (rows, cols) with D = embedding width, H = hidden width
def _param_shapes(d: int, h: int) -> dict[str, tuple[int, int]]:
    return {
        "attn.query": (d, h),
        "attn.key": (d, h),
        "gnn_enc.w_in": (d, h),
        "gnn_enc.w_out": (h, d),
        "mlp_e.w1": (d, h),
        "mlp_e.b1": (1, h),
        "mlp_e.w2": (h, d),
        "mlp_e.b2": (1, d),
        "mlp_l.w1": (d, h),
        "mlp_l.b1": (1, h),
        "mlp_l.w2": (h, d),
        "mlp_l.b2": (1, d),
        "gnn_dec.w_in": (d, h),
        "gnn_dec.w_out": (h, d),
        "conf.px_w": (d, 1),
        "conf.px_b": (1, 1),
        "conf.plx_wx": (d, 1),
        "conf.plx_wl": (d, 1),
        "conf.plx_b": (1, 1),
        "log_sigma_q": (1, 1),
    }


class ModelParams:
    """Named trainable tensors. Shapes are fixed by embedding width ``dim`` and ``hidden``."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    @classmethod
    def init(cls, dim: int, hidden: int, seed: int = 0, sigma_q_init: float = 0.1) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, (r, c) in _param_shapes(dim, hidden).items():
            if name == "log_sigma_q":
                value = np.full((r, c), math.log(sigma_q_init))
            elif name.endswith(("b1", "b2", "_b")):
                # not zero: the root row's messages are empty, and zero biases
                # would decode it to an exactly-zero row where cosine jumps
                value = rng.uniform(-0.1, 0.1, size=(r, c))
            else:
                # Glorot-uniform
                bound = math.sqrt(6.0 / (r + c))
                value = rng.uniform(-bound, bound, size=(r, c))
            tensors[name] = Tensor(value, requires_grad=True, name=name)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    @property
    def dim(self) -> int:
        return self.tensors["attn.query"].shape[0]

    @property
    def hidden(self) -> int:
        return self.tensors["attn.query"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()}
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v.data)) for v in self.tensors.values())


@dataclass
class ForwardOutput:
    z_logits: np.ndarray
    a_hat: np.ndarray
    e_hat: np.ndarray
    l_hat: np.ndarray
    c_hat: np.ndarray
    x_hat: np.ndarray
    omega: float | np.ndarray


def lower_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool), -1)


def _check_input(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise InputError(f"expected N x D or B x N x D input, got shape {x.shape}")
    if x.shape[-2] < 2:
        raise InputError("need at least two variables")
    if x.shape[-1] != params.dim:
        raise InputError(f"input width {x.shape[-1]} does not match model width {params.dim}")
    return x


def encode(params: ModelParams, x) -> tuple[Tensor, Tensor]:
    """Masked attention -> ``(z_logits, a_hat)``; row 0 of ``a_hat`` is all zeros."""
    x = _check_input(params, x)
    n = x.shape[-2]
    mask = lower_mask(n)
    q = T.matmul(x, params["attn.query"])
    k = T.matmul(x, params["attn.key"])
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(params.hidden))
    z_logits = T.mul(scores, mask.astype(np.float64))
    a_hat = T.softmax_rows(scores, mask)
    return z_logits, a_hat


def _gnn(adj, feats, w_in: Tensor, w_out: Tensor) -> Tensor:
    return T.matmul(T.elu(T.matmul(adj, T.matmul(feats, w_in))), w_out)


def _mlp(params: ModelParams, prefix: str, h) -> Tensor:
    hidden = T.elu(T.add(T.matmul(h, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def estimate_confounding(params: ModelParams, x, l_hat) -> Tensor:
    """``c_j = w_j / sum_i w_i * x_j`` with ``w_j = sigmoid(s1(x_j)) * sigmoid(s2(x_j, mean(l_hat)))``.

    Falls back to uniform weights for any sample whose weight sum is below 1e-12.
    """
    x = T.as_tensor(x)
    l_hat = T.as_tensor(l_hat)
    if x.shape != l_hat.shape:
        raise InputError(f"x {x.shape} and l_hat {l_hat.shape} must have the same shape")
    s1 = T.add(T.matmul(x, params["conf.px_w"]), params["conf.px_b"])
    pooled = T.mean(l_hat, axis=-2, keepdims=True)
    s2 = T.add(
        T.add(T.matmul(x, params["conf.plx_wx"]), T.matmul(pooled, params["conf.plx_wl"])),
        params["conf.plx_b"],
    )
    w = T.mul(T.sigmoid(s1), T.sigmoid(s2))
    total = T.sum_(w, axis=-2, keepdims=True)
    degenerate = total.data < 1e-12
    if np.any(degenerate):
        w = T.where(np.broadcast_to(degenerate, w.shape), np.ones(w.shape), w)
        total = T.sum_(w, axis=-2, keepdims=True)
    return T.mul(T.div(w, total), x)


def _omega(l_hat: np.ndarray, tol: float) -> np.ndarray:
    n = l_hat.shape[-2]
    flat = l_hat.reshape((-1,) + l_hat.shape[-2:])
    ranks = np.array([T.numerical_rank(m, tol) for m in flat], dtype=np.float64)
    return np.clip(ranks / n, 0.0, 1.0).reshape(l_hat.shape[:-2])


def decode(
    params: ModelParams,
    a_hat,
    x,
    rank_tol: float = 1e-6,
    a_sample=None,
) -> tuple[dict[str, Tensor], np.ndarray]:
    """Decoder pass. ``a_sample`` (a posterior draw) replaces ``a_hat`` inside ``z``."""
    x = _check_input(params, x)
    a_hat = T.as_tensor(a_hat)
    n = x.shape[-2]
    if np.any(a_hat.data[..., ~lower_mask(n)] != 0):
        raise InputError("a_hat must be strictly lower-triangular")
    ble = _gnn(a_hat, x, params["gnn_enc.w_in"], params["gnn_enc.w_out"])
    e_hat = _mlp(params, "mlp_e", ble)
    l_hat = _mlp(params, "mlp_l", ble)
    a_z = a_hat if a_sample is None else T.as_tensor(a_sample)
    z_inv = T.unit_lower_tri_inverse(T.sub(np.eye(n), a_z))
    x_hat = _gnn(z_inv, e_hat, params["gnn_dec.w_in"], params["gnn_dec.w_out"])
    c_hat = estimate_confounding(params, x, l_hat)
    omega = _omega(l_hat.data, rank_tol)
    return {"e_hat": e_hat, "l_hat": l_hat, "c_hat": c_hat, "x_hat": x_hat}, omega


def forward(params: ModelParams, x, rank_tol: float = 1e-6) -> ForwardOutput:
    z_logits, a_hat = encode(params, x)
    parts, omega = decode(params, a_hat, x, rank_tol)
    return ForwardOutput(
        z_logits=z_logits.data,
        a_hat=a_hat.data,
        e_hat=parts["e_hat"].data,
        l_hat=parts["l_hat"].data,
        c_hat=parts["c_hat"].data,
        x_hat=parts["x_hat"].data,
        omega=float(omega) if np.ndim(omega) == 0 else omega,
    )


def pair_similarity_sum(x) -> Tensor:
    """Sum of cosine similarities over variable pairs ``i < j`` (one scalar per sample)."""
    x = T.as_tensor(x)
    n = x.shape[-2]
    upper = np.triu(np.ones((n, n)), 1)
    return T.sum_(T.mul(T.cosine_similarity(x), upper), axis=(-2, -1))


def gaussian_kl(mu, log_sigma, mask: np.ndarray) -> Tensor:
    """``sum over mask of KL(N(mu, sigma^2) || N(0, 1))``, one value per sample."""
    mu = T.as_tensor(mu)
    log_sigma = T.as_tensor(log_sigma)
    maskf = np.asarray(mask, dtype=np.float64)
    n_free = maskf.sum()
    mean_part = T.scale(T.sum_(T.mul(T.mul(mu, mu), maskf), axis=(-2, -1)), 0.5)
    # 0.5 * (sigma^2 - 1 - 2 log sigma) per entry, identical for every entry
    var_part = T.sub(T.sub(T.exp(T.scale(log_sigma, 2.0)), 1.0), T.scale(log_sigma, 2.0))
    var_part = T.scale(T.sum_(var_part), 0.5 * n_free)
    return T.add(mean_part, var_part)


def loss(
    params: ModelParams,
    x,
    rng: np.random.Generator | None = None,
    rank_tol: float = 1e-6,
) -> tuple[Tensor, dict]:
    """Negative ELBO for one sample or a ``B x N x D`` batch.

    ``total = mean_b[omega_b * l_rc(X, X_hat + C) + (1 - omega_b) * l_rc(X, X_hat)] + mean_b KL_b``.
    With ``rng`` the decoder sees a reparameterised draw from the strength
    posterior; without it the posterior mean is used (deterministic).
    """
    x = _check_input(params, x)
    n = x.shape[-2]
    mask = lower_mask(n)
    _, a_hat = encode(params, x)
    a_sample = None
    if rng is not None:
        noise = rng.standard_normal(a_hat.shape) * mask
        a_sample = T.add(a_hat, T.mul(T.exp(params["log_sigma_q"]), noise))
    parts, omega = decode(params, a_hat, x, rank_tol, a_sample=a_sample)

    target = pair_similarity_sum(x).data
    plain = T.sub(pair_similarity_sum(parts["x_hat"]), target)
    confounded = T.sub(pair_similarity_sum(T.add(parts["x_hat"], parts["c_hat"])), target)
    per_sample = T.add(
        T.mul(T.mul(confounded, confounded), omega),
        T.mul(T.mul(plain, plain), 1.0 - omega),
    )
    l_rc = T.mean(per_sample)
    kl = T.mean(gaussian_kl(a_hat, params["log_sigma_q"], mask))
    total = T.add(l_rc, kl)
    info = {
        "total": float(total.data),
        "reconstruction": float(l_rc.data),
        "kl": float(kl.data),
        "omega": float(np.mean(omega)),
    }
    if not np.isfinite(info["total"]):
        raise NonFiniteLossError(f"non-finite loss: {info}", info)
    return total, info


# ---------------------------------------------------------------------------
# training


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ModelParams) -> None:
        c = self.cfg
        self.t += 1
        for k, p in params.tensors.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / (1 - c.beta1**self.t)
            v_hat = self.v[k] / (1 - c.beta2**self.t)
            p.data = p.data - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


def _batches(dataset: Dataset, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Index batches, each holding samples with the same number of variables."""
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(dataset.samples):
        groups.setdefault(s.n_vars, []).append(i)
    batches = []
    for n in sorted(groups):
        idx = np.array(groups[n])
        if rng is not None:
            idx = rng.permutation(idx)
        batches.extend(idx[i : i + batch_size] for i in range(0, len(idx), batch_size))
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


def _stack(dataset: Dataset, idx) -> np.ndarray:
    return np.stack([dataset.samples[i].x for i in idx])


def evaluate_loss(params: ModelParams, dataset: Dataset, cfg: TrainConfig) -> dict:
    """Sample-weighted mean of the deterministic loss over a dataset."""
    totals = {"total": 0.0, "reconstruction": 0.0, "kl": 0.0}
    for idx in _batches(dataset, cfg.batch_size, None):
        _, info = loss(params, _stack(dataset, idx), None, cfg.rank_tol)
        for key in totals:
            totals[key] += info[key] * len(idx)
    return {k: v / len(dataset) for k, v in totals.items()}


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Minibatch Adam on the negative ELBO.

    Returns the trained parameters and one history entry per epoch (entry 0
    is the loss before any update). Deterministic given ``cfg.seed``.
    """
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    dims = {s.dim for s in dataset}
    if len(dims) != 1:
        raise InputError(f"samples have mixed embedding widths {sorted(dims)}")
    dim = dims.pop()
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = ModelParams.init(dim, cfg.hidden_dim, seed=cfg.seed, sigma_q_init=cfg.sigma_q_init)
    else:
        params = params.copy()
    opt = _Adam(params, cfg)
    try:
        history = [dict(evaluate_loss(params, dataset, cfg), epoch=0)]
    except NonFiniteLossError as exc:
        raise TrainingError(f"initial loss: {exc}", params.copy(), []) from exc
    last_good = params.copy()
    for epoch in range(1, cfg.epochs + 1):
        for idx in _batches(dataset, cfg.batch_size, rng):
            for p in params:
                p.grad = None
            draw = rng if cfg.sample_posterior else None
            try:
                with T.Tape() as tape:
                    total, _ = loss(params, _stack(dataset, idx), draw, cfg.rank_tol)
            except NonFiniteLossError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}", last_good, history) from exc
            tape.backward(total)
            opt.step(params)
            if not params.all_finite():
                raise TrainingError(f"epoch {epoch}: parameters became non-finite", last_good, history)
        try:
            summary = evaluate_loss(params, dataset, cfg)
        except NonFiniteLossError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", last_good, history) from exc
        history.append(dict(summary, epoch=epoch))
        last_good = params.copy()
        log.debug("epoch %d loss %.6g", epoch, summary["total"])
    return params, history


def predict(params: ModelParams, dataset: Dataset | Iterable[Sample], rank_tol: float = 1e-6) -> list[ForwardOutput]:
    """Forward pass per sample (batched internally by variable count)."""
    ds = dataset if isinstance(dataset, Dataset) else Dataset(list(dataset))
    outputs: list[ForwardOutput | None] = [None] * len(ds)
    for idx in _batches(ds, 256, None):
        out = forward(params, _stack(ds, idx), rank_tol)
        for b, i in enumerate(idx):
            outputs[i] = ForwardOutput(
                z_logits=out.z_logits[b],
                a_hat=out.a_hat[b],
                e_hat=out.e_hat[b],
                l_hat=out.l_hat[b],
                c_hat=out.c_hat[b],
                x_hat=out.x_hat[b],
                omega=float(out.omega[b]),
            )
    return outputs


def representations(out: ForwardOutput, threshold: float = 0.5) -> np.ndarray:
    """Causal representation after the confounding gate.

    The decoder output is the confounder-free part, so the undisentangled
    representation is ``x_hat + c_hat``; the gate subtracts ``c_hat`` again
    when the confounding score clears ``threshold``.
    """
    return apply_gate(out.x_hat + out.c_hat, out.c_hat, float(out.omega), threshold).x_clean


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, params: ModelParams, cfg: TrainConfig | None = None, history=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, t in params.tensors.items():
        fname = name.replace(".", "__") + ".idt"
        T.save_tensor(d / fname, t.data)
        entries[name] = {
            "file": fname,
            "shape": list(t.shape),
            "sha256": hashlib.sha256((d / fname).read_bytes()).hexdigest(),
        }
    manifest = {"schema_version": 1, "params": entries}
    if cfg is not None:
        manifest["train_config"] = cfg.to_dict()
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if history is not None:
        (d / "history.json").write_text(json.dumps(history, indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory) -> tuple[ModelParams, TrainConfig | None]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    tensors = {}
    for name, entry in manifest["params"].items():
        path = d / entry["file"]
        if hashlib.sha256(path.read_bytes()).hexdigest() != entry["sha256"]:
            raise T.TensorFormatError(f"{path}: checksum mismatch")
        tensors[name] = Tensor(T.load_tensor(path), requires_grad=True, name=name)
    cfg = manifest.get("train_config")
    return ModelParams(tensors), (TrainConfig.from_dict(cfg) if cfg else None)
