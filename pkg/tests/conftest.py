import math

import numpy as np

from canardlab.slowfast import ChuaParams4, model_from_dict

ALPHA_FIG1 = 0.2571389636

CHUA4 = ChuaParams4()
U_STAR = math.sqrt(-CHUA4.c2 / (3.0 * CHUA4.c1))
Z_STAR = U_STAR * (3.0 + 2.0 * CHUA4.c2) / 3.0


def chua3_phi_polynomial(y, z, alpha):
    """Flow curvature of the reduced 3D Chua field, typed in by hand"""
    first = -3.0 * (y - z) * (6.0 * y**2 * z + 4.0 * z**3 * (-2.0 + z**2) + y * (-6.0 + 9.0 * z**2 - 5.0 * z**4))
    second = z * (-6.0 + z**2) * (-1.0 + z**2) ** 2 * (-3.0 * y - 3.0 * z + z**3) * alpha
    return alpha / 9.0 * (first + second)


def chua3_D2(alpha):
    return -100.0 / 27.0 * alpha**2 * (3.0 + 40.0 * alpha)


def chua4_S(params=CHUA4):
    a2, b1, c2 = params.alpha2, params.beta1, params.c2
    return -(2.0 / 3.0) * b1 * c2 * (3.0 * a2 + 2.0 * c2 * (1.0 + a2))


def chua4_threshold(params=CHUA4):
    return -2.0 * params.c2 / (3.0 + 2.0 * params.c2)


def equilibrium_eigenvalues_chua3(alpha):
    root = np.sqrt(complex(1.0 - 90.0 * alpha + 25.0 * alpha**2))
    return [0.0, 0.5 * (-1.0 + 5.0 * alpha + root), 0.5 * (-1.0 + 5.0 * alpha - root)]


def fd_gradient(fn, x, h=1e-6):
    x = np.array(x, dtype=float)
    grad = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        grad[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad


def fd_hessian(fn, x, h=1e-4):
    x = np.array(x, dtype=float)
    n = len(x)
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            hess[i, j] = (
                fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
            ) / (4.0 * h * h)
    return hess


def distinct_spectrum(rng: np.random.Generator, n: int, min_gap: float = 0.1) -> list[float]:
    while True:
        lam = rng.uniform(-3.0, 3.0, size=n)
        gaps = [abs(a - b) for i, a in enumerate(lam) for b in lam[i + 1 :]]
        if min(gaps) > min_gap and np.all(np.abs(lam) > min_gap):
            return [float(v) for v in lam]


class LinearField:
    """``X' = A X``"""

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=float)

    def __call__(self, point):
        return [sum(self.matrix[i, j] * point[j] for j in range(len(point))) for i in range(len(point))]


def chua3_model_dict(**changes) -> dict:
    data = {
        "name": "chua3_file",
        "slow_vars": ["x", "y"],
        "fast_var": "z",
        "f": ["z - y", "alpha*(x + y)"],
        "g": "-x - (z^3/3 - z)",
        "epsilon": 0.05,
        "params": {"alpha": ALPHA_FIG1},
        "eliminate_x1": "-(z^3/3 - z)",
    }
    data.update(changes)
    return {k: v for k, v in data.items() if v is not None}


def chua3_from_file(**changes):
    return model_from_dict(chua3_model_dict(**changes))
