import numpy as np
import torch


def random_instance(rng, n_max=64, k_max=5, ignore_frac=0.4):
    """Random float64 (logits (N,K), labels (N,)) pair with some pixels ignored."""
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(2, k_max + 1))
    logits = torch.tensor(rng.normal(0, 2, size=(n, k)), dtype=torch.float64)
    labels = rng.integers(0, k, size=n)
    labels[rng.random(n) < ignore_frac] = -1
    return logits, torch.tensor(labels)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
