"""Independent numerical oracles shared by the test modules.

These deliberately avoid the package's analytic code paths: Jacobians are
assembled by central differences and fed to slogdet, AUC is brute-force
pair enumeration, and expected shapes are derived by explicit arithmetic.
"""

import numpy as np


def numerical_jacobian(f, x0: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Dense Jacobian of a flattened map by central differences."""
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.size
    y0 = np.asarray(f(x0)).reshape(-1)
    jac = np.zeros((y0.size, d))
    flat = x0.reshape(-1)
    for j in range(d):
        xp = flat.copy()
        xm = flat.copy()
        xp[j] += eps
        xm[j] -= eps
        yp = np.asarray(f(xp.reshape(x0.shape))).reshape(-1)
        ym = np.asarray(f(xm.reshape(x0.shape))).reshape(-1)
        jac[:, j] = (yp - ym) / (2.0 * eps)
    return jac


def numerical_logdet(f, x0: np.ndarray, eps: float = 1e-6) -> float:
    """log|det J| of a bijection, via the numerically assembled Jacobian."""
    jac = numerical_jacobian(f, x0, eps)
    _, logdet = np.linalg.slogdet(jac)
    return float(logdet)


def brute_force_auc(scores, labels) -> float:
    """AUC by explicit enumeration of positive/negative pairs (ties = 0.5)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = scores[labels == 1]
    neg = scores[labels != 1]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def multiscale_latent_shapes(c0: int, h0: int, w0: int, n_scales: int):
    """Expected latent shapes from first principles: squeeze x4 channels,
    halve spatial, split halves channels at every scale but the last."""
    shapes = []
    c, h, w = c0, h0, w0
    for i in range(n_scales):
        c, h, w = 4 * c, h // 2, w // 2
        if i < n_scales - 1:
            shapes.append((c // 2, h, w))
            c = c // 2
        else:
            shapes.append((c, h, w))
    return shapes
