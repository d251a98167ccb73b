import numpy as np


def random_spd(rng, d, low=0.2, high=5.0):
    """SPD matrix with eigenvalues uniform in [low, high] and a Haar eigenbasis."""
    Z = rng.standard_normal((d, d))
    O, R = np.linalg.qr(Z)
    O = O * np.sign(np.diag(R))
    lam = rng.uniform(low, high, size=d)
    return (O * lam) @ O.T


def random_sym(rng, d):
    A = rng.standard_normal((d, d))
    return A + A.T


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)

