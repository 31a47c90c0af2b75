"""Adam optimization and the dual-pool training scheme.

Module A is an ensemble of K networks trained on the union of the normal
and unlabeled pools; module B is K networks trained on the normal pool
only.  Members share no parameters, so each one minimizes its own mean
reconstruction loss; this reaches the same optima as the joint per-module
objective, which merely sums the member losses.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backbones import BackboneConfig, BackboneNet, build_backbone, loss_aeu, loss_mse
from .errors import ConfigError, NumericalError
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    learning_rate: float = 5e-4
    batch_size: int = 64
    k: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_seed: int = 0

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("ensemble size K must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class EnsembleModule:
    role: str  # "A" | "B"
    nets: list[BackboneNet]

    @property
    def k(self) -> int:
        return len(self.nets)


def adam_step(params, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update over Parameters whose .value.grad is populated."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = p.value.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {p.name}")
        m = state.m.setdefault(p.name, np.zeros_like(p.value.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.value.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _loss_for(net: BackboneNet, batch: Tensor):
    if net.config.kind == "aeu":
        recon, logvar = net.forward(batch, training=True)
        return loss_aeu(batch, recon, logvar)
    return loss_mse(batch, net.forward(batch, training=True))


def train_network(net: BackboneNet, pool: np.ndarray, config: TrainConfig,
                  seed: int) -> list[float]:
    """Train one network on a pool [n,1,H,W]; returns per-epoch mean losses."""
    config.validate()
    n = pool.shape[0]
    if n == 0:
        raise ConfigError("cannot train on an empty pool")
    shuffle_rng = np.random.default_rng([seed, 1])
    state = AdamState()
    params = net.params()
    curve: list[float] = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = Tensor(pool[idx])
            net.zero_grads()
            loss = _loss_for(net, batch)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batches}")
            loss.backward()
            try:
                adam_step(params, state, config.learning_rate,
                          (config.beta1, config.beta2), config.eps)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {batches}: {exc}") from exc
            total += float(loss.data)
            batches += 1
        curve.append(total / batches)
    return curve


def _worker_count() -> int:
    raw = os.environ.get("DDAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def train_dual_ensembles(d_n: np.ndarray, d_u: np.ndarray | None,
                         backbone: BackboneConfig, config: TrainConfig):
    """Train module A on d_n ∪ d_u and module B on d_n.

    Member i of A uses seed base_seed+i, member i of B uses
    base_seed+1000+i (both for weight init and shuffle order).
    Returns (module_a, module_b, loss_rows) where loss_rows are
    (epoch, member, role, loss) tuples.
    """
    config.validate()
    if d_n.shape[0] == 0:
        raise ConfigError("normal pool is empty")
    if d_u is None or d_u.shape[0] == 0:
        pool_a = d_n
    else:
        pool_a = np.concatenate([d_n, d_u], axis=0)

    jobs = []
    for i in range(config.k):
        jobs.append(("A", i, config.base_seed + i, pool_a))
    for i in range(config.k):
        jobs.append(("B", i, config.base_seed + 1000 + i, d_n))

    def run(job):
        role, i, seed, pool = job
        net = build_backbone(dataclasses.replace(backbone, seed=seed))
        curve = train_network(net, pool, config, seed)
        return role, i, net, curve

    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_ex:
            results = list(pool_ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    nets_a: list[BackboneNet] = [None] * config.k
    nets_b: list[BackboneNet] = [None] * config.k
    loss_rows: list[tuple[int, int, str, float]] = []
    for role, i, net, curve in results:
        (nets_a if role == "A" else nets_b)[i] = net
        for epoch, loss in enumerate(curve):
            loss_rows.append((epoch, i, role, loss))
    return EnsembleModule("A", nets_a), EnsembleModule("B", nets_b), loss_rows
