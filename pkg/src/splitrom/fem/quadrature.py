"""Quadrature rules on the reference triangle and on straight edges."""

import numpy as np

# Symmetric 6-point rule, exact for polynomials of total degree <= 4.
# Weights are normalised to sum to one; multiply by the triangle area.
_A1, _W1 = 0.445948490915964886318329, 0.223381589678011465944346
_A2, _W2 = 0.091576213509770743459571, 0.109951743655321867638987

TRI6_BARY = np.array([
    [1 - 2 * _A1, _A1, _A1],
    [_A1, 1 - 2 * _A1, _A1],
    [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2],
    [_A2, 1 - 2 * _A2, _A2],
    [_A2, _A2, 1 - 2 * _A2],
])
TRI6_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 3-point Gauss-Legendre on [0, 1], exact to degree 5.
_g = np.sqrt(3.0 / 5.0)
GAUSS3_S = 0.5 * (1.0 + np.array([-_g, 0.0, _g]))
GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 18.0


def shape_functions(degree, bary):
    """Lagrange basis values and barycentric derivatives.

    Returns ``N`` of shape (nq, nb) and ``dN`` of shape (nq, nb, 3) where
    ``dN[..., k]`` is the derivative with respect to barycentric ``lambda_k``.
    P2 node order: three vertices, then edge (1,2), edge (2,0), edge (0,1).
    """
    lam = np.atleast_2d(bary)
    nq = lam.shape[0]
    if degree == 1:
        dN = np.broadcast_to(np.eye(3), (nq, 3, 3)).copy()
        return lam.copy(), dN
    if degree != 2:
        raise ValueError("only P1 and P2 are supported")
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    N = np.column_stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                         4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1])
    dN = np.zeros((nq, 6, 3))
    for k, lk in enumerate((l0, l1, l2)):
        dN[:, k, k] = 4 * lk - 1
    for node, (i, j) in zip((3, 4, 5), ((1, 2), (2, 0), (0, 1))):
        dN[:, node, i] = 4 * lam[:, j]
        dN[:, node, j] = 4 * lam[:, i]
    return N, dN


EDGE_NODES = ((1, 2), (2, 0), (0, 1))  # local vertex pairs of P2 edge nodes 3, 4, 5
