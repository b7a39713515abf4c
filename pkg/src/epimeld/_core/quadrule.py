"""Gauss-Kronrod 7/15 node and weight tables.

Values are the classic QUADPACK constants. Both backends read this module at
import time so the rule is bit-identical everywhere; tests check the Gauss
subset against ``numpy.polynomial.legendre.leggauss`` and verify polynomial
exactness of the pair.
"""

import numpy as np

# Nonnegative abscissae of the 15-point Kronrod rule, descending. Entries at
# odd index (and the final 0.0) are the embedded 7-point Gauss nodes.
XGK_HALF = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144838258730,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ]
)

WGK_HALF = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ]
)

# Gauss weights for the nodes XGK_HALF[1], XGK_HALF[3], XGK_HALF[5], XGK_HALF[7].
WG_HALF = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ]
)


def full_rule():
    """Expand the symmetric half-tables to 15 explicit nodes on [-1, 1].

    Returns ``(nodes, kronrod_weights, gauss_weights)``; the Gauss weight
    vector has zeros at Kronrod-only nodes so both quadrature sums are plain
    dot products against the same function values.
    """
    nodes = np.concatenate([-XGK_HALF[:7], [0.0], XGK_HALF[6::-1]])
    wgk = np.concatenate([WGK_HALF[:7], [WGK_HALF[7]], WGK_HALF[6::-1]])
    wg = np.zeros(15)
    wg[1:14:2] = np.concatenate([WG_HALF[:3], [WG_HALF[3]], WG_HALF[2::-1]])
    return nodes, wgk, wg
