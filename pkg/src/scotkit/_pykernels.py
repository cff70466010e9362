"""Pure-numpy tree kernels, used when the compiled extension is unavailable."""
import numpy as np


def project_children(values, coef):
    """out[j, m, f] = sum_b coef[b, j] * values[m*B + b, f]."""
    B, J = coef.shape
    M = values.shape[0] // B
    blocks = values.reshape(M, B, values.shape[1])
    return np.einsum("bj,mbf->jmf", coef, blocks)


def lift_children(comps, basis):
    """out[m*B + b, f] = sum_j basis[b, j] * comps[j, m, f]."""
    J, M, F = comps.shape
    B = basis.shape[0]
    return np.einsum("bj,jmf->mbf", basis, comps).reshape(M * B, F)
