"""Linear structural causal model with latent confounders.

Observed variables follow ``X = A X + B L + E`` where ``A`` is strictly
lower-triangular (variables are listed in their natural time order), ``B``
holds the confounder loadings, ``L`` the confounder values and ``E`` the
exogenous noise. Rows are variables; the ``D`` columns are independent
replicates of the same mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import unit_lower_tri_inverse

__all__ = [
    "StructureError",
    "CausalGraph",
    "ConfounderSpec",
    "Sample",
    "Dataset",
    "mixing_matrix",
    "forward_generate",
]


class StructureError(ValueError):
    """A causal-strength matrix is not strictly lower-triangular."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CausalGraph:
    """Causal strengths ``A`` (``A[i, j] != 0`` means ``j -> i``) plus binary labels."""

    strengths: np.ndarray
    adjacency: np.ndarray | None = None

    def __post_init__(self):
        a = _frozen(self.strengths)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise StructureError(f"strengths must be square, got {a.shape}")
        if np.any(np.triu(a) != 0):
            raise StructureError("strengths must be strictly lower-triangular")
        object.__setattr__(self, "strengths", a)
        adj = (a != 0) if self.adjacency is None else np.asarray(self.adjacency)
        adj = _frozen(adj.astype(np.float64))
        if adj.shape != a.shape:
            raise StructureError(f"adjacency shape {adj.shape} does not match strengths {a.shape}")
        if np.any(np.triu(adj) != 0):
            raise StructureError("adjacency must be strictly lower-triangular")
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_vars(self) -> int:
        return self.strengths.shape[0]

    @classmethod
    def from_adjacency(cls, adjacency) -> "CausalGraph":
        adj = np.asarray(adjacency, dtype=np.float64)
        return cls(strengths=adj, adjacency=adj)


@dataclass(frozen=True, eq=False)
class ConfounderSpec:
    """Loadings ``B`` (N x K), optional fixed confounders ``L`` (K x D), noise scale."""

    loadings: np.ndarray
    noise_sigma: float = 1.0
    confounders: np.ndarray | None = None

    def __post_init__(self):
        b = _frozen(self.loadings)
        if b.ndim != 2:
            raise ValueError(f"loadings must be N x K, got {b.shape}")
        object.__setattr__(self, "loadings", b)
        if self.confounders is not None:
            l = _frozen(self.confounders)
            if l.ndim != 2 or l.shape[0] != b.shape[1]:
                raise ValueError(f"confounders must be K x D with K={b.shape[1]}, got {l.shape}")
            object.__setattr__(self, "confounders", l)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    @classmethod
    def none(cls, n_vars: int, noise_sigma: float = 1.0) -> "ConfounderSpec":
        """A single confounder with zero loadings, i.e. no confounding."""
        return cls(loadings=np.zeros((n_vars, 1)), noise_sigma=noise_sigma)


@dataclass(frozen=True, eq=False)
class Sample:
    """One observation ``X`` (N x D) with optional ground truth.

    ``confounding`` is the additive effect ``C = B L`` (before mixing through
    ``(I - A)^-1``), ``confounders`` is ``L`` and ``noise`` is ``E``.
    """

    x: np.ndarray
    structure_id: int = 0
    ground_truth: CausalGraph | None = None
    confounding: np.ndarray | None = None
    confounders: np.ndarray | None = None
    noise: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = _frozen(self.x)
        if x.ndim != 2:
            raise ValueError(f"x must be N x D, got {x.shape}")
        object.__setattr__(self, "x", x)
        for name in ("confounding", "noise"):
            v = getattr(self, name)
            if v is not None:
                v = _frozen(v)
                if v.shape != x.shape:
                    raise ValueError(f"{name} shape {v.shape} does not match x {x.shape}")
                object.__setattr__(self, name, v)
        if self.confounders is not None:
            object.__setattr__(self, "confounders", _frozen(self.confounders))
        if self.ground_truth is not None and self.ground_truth.n_vars != x.shape[0]:
            raise ValueError("ground truth size does not match x")

    @property
    def n_vars(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass
class Dataset:
    samples: list[Sample]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def structure_ids(self) -> list[int]:
        return sorted({s.structure_id for s in self.samples})

    def by_structure(self) -> dict[int, list[Sample]]:
        groups: dict[int, list[Sample]] = {}
        for s in self.samples:
            groups.setdefault(s.structure_id, []).append(s)
        return groups

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], dict(self.metadata))


def mixing_matrix(graph: CausalGraph) -> np.ndarray:
    """``W = (I - A)^-1``."""
    n = graph.n_vars
    return unit_lower_tri_inverse(np.eye(n) - graph.strengths).data


def forward_generate(
    graph: CausalGraph,
    conf: ConfounderSpec,
    seed,
    dim: int | None = None,
    structure_id: int = 0,
) -> Sample:
    """Draw one sample ``X = (I - A)^-1 (B L + E)``.

    ``E`` is i.i.d. ``Normal(0, noise_sigma^2)``; ``L`` is i.i.d. standard
    normal unless ``conf`` fixes it. ``dim`` defaults to ``L``'s width, or 1.
    """
    n = graph.n_vars
    if conf.loadings.shape[0] != n:
        raise ValueError(f"loadings have {conf.loadings.shape[0]} rows, graph has {n} variables")
    if dim is None:
        dim = conf.confounders.shape[1] if conf.confounders is not None else 1
    rng = np.random.default_rng(seed)
    if conf.confounders is not None:
        if conf.confounders.shape[1] != dim:
            raise ValueError("fixed confounders have the wrong embedding width")
        l = np.array(conf.confounders)
    else:
        l = rng.standard_normal((conf.k, dim))
    e = conf.noise_sigma * rng.standard_normal((n, dim))
    c = conf.loadings @ l
    x = mixing_matrix(graph) @ (c + e)
    return Sample(
        x=x,
        structure_id=structure_id,
        ground_truth=graph,
        confounding=c,
        confounders=l,
        noise=e,
    )
