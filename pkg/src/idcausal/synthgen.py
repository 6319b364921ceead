"""Synthetic confounded benchmark: random DAG skeletons with pervasive confounders.

Each skeleton is a random strictly lower-triangular graph; every confounder
loads on every node independently with probability ``pervasiveness``. Edge
and loading weights share one convention: a random sign (the "trend type")
times a magnitude drawn uniformly from ``[weight_low, weight_high]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scm import CausalGraph, ConfounderSpec, Dataset, forward_generate

__all__ = [
    "BenchConfig",
    "BENCH_GRID",
    "derive_seed",
    "draw_weights",
    "random_skeleton",
    "attach_confounders",
    "generate_bench",
]

BENCH_GRID = {
    "n_observed": (20, 50, 100),
    "pervasiveness": (0.1, 0.4, 0.7),
    "n_confounders": (1, 5, 10),
    "samples_per_skeleton": (5, 10, 50),
}

# sub-stream tags for derive_seed
_GRAPH, _LOADINGS, _SAMPLE = 0, 1, 2


@dataclass(frozen=True)
class BenchConfig:
    n_observed: int = 20
    expected_neighborhood: float = 5.0
    pervasiveness: float = 0.1
    n_confounders: int = 1
    samples_per_skeleton: int = 5
    n_skeletons: int = 1
    noise_sigma: float = 1.0
    seed: int = 0
    embed_dim: int = 1
    weight_low: float = 0.5
    weight_high: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.pervasiveness <= 1.0:
            raise ValueError(f"pervasiveness must lie in [0, 1], got {self.pervasiveness}")
        for name in ("n_observed", "n_confounders", "samples_per_skeleton", "n_skeletons", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.expected_neighborhood < 0:
            raise ValueError("expected_neighborhood must be non-negative")
        if self.n_observed > 1 and self.expected_neighborhood >= self.n_observed:
            raise ValueError("expected_neighborhood must be smaller than n_observed")
        if not 0.0 <= self.weight_low <= self.weight_high:
            raise ValueError("need 0 <= weight_low <= weight_high")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def edge_probability(self) -> float:
        if self.n_observed < 2:
            return 0.0
        return min(1.0, self.expected_neighborhood / (self.n_observed - 1))

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(master: int, *path: int) -> np.random.SeedSequence:
    """Independent stream for a (skeleton, role, sample) coordinate."""
    return np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(p) for p in path]])


def draw_weights(rng: np.random.Generator, size, low: float, high: float) -> np.ndarray:
    sign = rng.choice((-1.0, 1.0), size=size)
    return sign * rng.uniform(low, high, size=size)


def random_skeleton(cfg: BenchConfig, seed) -> CausalGraph:
    """Every pair ``j < i`` gets an edge ``j -> i`` with probability ``edge_probability``."""
    rng = np.random.default_rng(seed)
    n = cfg.n_observed
    edges = np.tril(rng.random((n, n)) < cfg.edge_probability, -1)
    weights = draw_weights(rng, (n, n), cfg.weight_low, cfg.weight_high)
    return CausalGraph(strengths=np.where(edges, weights, 0.0))


def attach_confounders(graph: CausalGraph, cfg: BenchConfig, seed) -> ConfounderSpec:
    rng = np.random.default_rng(seed)
    shape = (graph.n_vars, cfg.n_confounders)
    hit = rng.random(shape) < cfg.pervasiveness
    weights = draw_weights(rng, shape, cfg.weight_low, cfg.weight_high)
    return ConfounderSpec(loadings=np.where(hit, weights, 0.0), noise_sigma=cfg.noise_sigma)


def generate_bench(cfg: BenchConfig) -> Dataset:
    samples = []
    for sk in range(cfg.n_skeletons):
        graph = random_skeleton(cfg, derive_seed(cfg.seed, sk, _GRAPH))
        conf = attach_confounders(graph, cfg, derive_seed(cfg.seed, sk, _LOADINGS))
        for s in range(cfg.samples_per_skeleton):
            samples.append(
                forward_generate(
                    graph,
                    conf,
                    derive_seed(cfg.seed, sk, _SAMPLE, s),
                    dim=cfg.embed_dim,
                    structure_id=sk,
                )
            )
    metadata = {
        "generator": "synthgen.generate_bench",
        "config": cfg.to_dict(),
        "conventions": {
            "edge_probability": "expected_neighborhood / (n_observed - 1), capped at 1",
            "weights": "random sign x Uniform(weight_low, weight_high)",
            "confounder_values": "i.i.d. Normal(0, 1)",
            "noise": "i.i.d. Normal(0, noise_sigma^2)",
            "confounding_effect": "C = B L (before mixing)",
        },
    }
    return Dataset(samples, metadata)
