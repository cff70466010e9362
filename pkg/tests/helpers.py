import numpy as np

from scotkit.control import ControlProblem
from scotkit.families import catalog_nonlinear
from scotkit.tree import NoiseSpec, build_tree


def scalar_problem(N, b, sigma, cost=None, terminal=None, x0=1.0, d=1, **kw):
    """n = m = 1 problem from scalar callbacks ``b(x, u)``, ``sigma(x, u)``."""
    cost = cost or (lambda x, u: 0.0 * x)
    terminal = terminal or (lambda x: 0.0 * x)
    return ControlProblem(
        N=N, n=1, m=1, d=d, x0=[x0],
        b=lambda k, X, U: b(X, U),
        sigma=lambda k, X, U: np.broadcast_to(sigma(X, U)[..., None], X.shape + (d,)).copy(),
        cost=lambda k, X, U: cost(X[:, 0], U[:, 0]),
        terminal=lambda X: terminal(X[:, 0]),
        **kw,
    )


def rad_tree(N, d=1):
    return build_tree(NoiseSpec.rademacher(d, N))


def catalog(N=3, n=2, m=2, d=1, seed=0, **kw):
    rng = np.random.default_rng(seed)
    A = rng.normal(scale=0.6, size=(n, n))
    B = rng.normal(scale=0.6, size=(n, m))
    C = rng.normal(scale=0.3, size=(d, n, n))
    D = rng.normal(scale=0.3, size=(d, n, m))
    return catalog_nonlinear(N, n, m, d, rng.normal(size=n), A, B, np.eye(n), 0.5 * np.eye(m),
                             np.eye(n), C=C, D=D, beta=0.3, gamma=0.2, eta=0.2, **kw)


def random_controls(p, tree, rng, scale=1.0):
    return [scale * rng.normal(size=(tree.n_nodes[k], p.m)) for k in range(p.N)]
