import numpy as np
import pytest

from ktgnn import autodiff as ad
from ktgnn.graph import build_graph


def finite_difference(f, tensors, h=1e-5):
    """Central-difference gradients of the scalar f() wrt each tensor."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.values)
        it = np.nditer(t.values, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t.values[idx]
            t.values[idx] = orig + h
            fp = f()
            t.values[idx] = orig - h
            fm = f()
            t.values[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, eps=1e-8):
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + eps)))


def check_grads(build_loss, params, h=1e-5, tol=1e-4):
    """Compare backward() gradients of build_loss() against central
    differences for every parameter tensor."""
    ad.zero_grads(params)
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values)
                for p in params]
    numeric = finite_difference(lambda: build_loss().item(), params, h=h)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e}"
    return worst


def random_vs_graph(rng, n, edge_prob=0.15, vocal_frac=0.3, d_obs=3, d_unobs=2,
                    label_rate=0.5):
    """Random graph with both populations, labels, and no split assigned."""
    population = (rng.random(n) < 1.0 - vocal_frac).astype(np.int8)
    if (population == 0).sum() == 0:
        population[int(rng.integers(n))] = 0
    if (population == 1).sum() == 0:
        population[int(rng.integers(n))] = 1
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < edge_prob]
    x_obs = rng.standard_normal((n, d_obs))
    x_unobs_vocal = {int(i): rng.standard_normal(d_unobs)
                     for i in np.flatnonzero(population == 0)}
    labels = np.where(rng.random(n) < label_rate,
                      rng.integers(0, 2, size=n), -1).astype(np.int64)
    return build_graph(edges, population, x_obs, x_unobs_vocal, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
