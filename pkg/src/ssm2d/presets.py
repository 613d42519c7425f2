"""Built-in model definitions used by the test-suite and the docs.

The damping splits are mass proportional per mode block, so they commute
with the rotation parts and the spectrum is exactly affine in the
damping parameter.
"""

from __future__ import annotations

import json

from .model import model_from_dict


def duffing_pair_dict():
    """Cubic oscillator paired with a detuned linear oscillator.

    First block: a Duffing oscillator that is exactly
    ``x'' + x + x^3 = 0`` at the conservative limit, with damping slope
    -1/2 per unit eps.  Second block: a linear oscillator at frequency
    sqrt(2) with damping slope -3/2.  Spectral ratio 3, smoothness
    order 4.
    """
    return {
        "nu": 2,
        "delta": [[-0.5, 0.0, 0.0, 0.0],
                  [0.0, -0.5, 0.0, 0.0],
                  [0.0, 0.0, -1.5, 0.0],
                  [0.0, 0.0, 0.0, -1.5]],
        "omega": [[0.0, 1.0, 0.0, 0.0],
                  [-1.0, 0.0, 0.0, 0.0],
                  [0.0, 0.0, 0.0, 1.0],
                  [0.0, 0.0, -2.0, 0.0]],
        "terms": [
            {"target": 1, "exponents": [3, 0, 0, 0],
             "eps_degree": 0, "coefficient": -1.0},
        ],
        "conserved": [
            {"exponents": [0, 2, 0, 0], "coefficient": 0.5},
            {"exponents": [2, 0, 0, 0], "coefficient": 0.5},
            {"exponents": [4, 0, 0, 0], "coefficient": 0.25},
            {"exponents": [0, 0, 0, 2], "coefficient": 0.5},
            {"exponents": [0, 0, 2, 0], "coefficient": 1.0},
        ],
        "eps_max": 0.5,
    }


def linear_pair_dict():
    """The same linear skeleton with no nonlinear terms."""
    d = duffing_pair_dict()
    d["terms"] = []
    return d


def coupled_pair_dict(beta=0.3):
    """Duffing block coupled into the second oscillator through x^3.

    The coupling derives from the potential term ``-beta x^3 y``, so the
    conservative flow still has a first integral and the manifold picks
    up genuine content in the second block.
    """
    d = duffing_pair_dict()
    d["terms"] = [
        {"target": 1, "exponents": [3, 0, 0, 0],
         "eps_degree": 0, "coefficient": -1.0},
        {"target": 1, "exponents": [2, 0, 1, 0],
         "eps_degree": 0, "coefficient": 3.0 * beta},
        {"target": 3, "exponents": [3, 0, 0, 0],
         "eps_degree": 0, "coefficient": beta},
    ]
    d["conserved"] = [
        {"exponents": [0, 2, 0, 0], "coefficient": 0.5},
        {"exponents": [2, 0, 0, 0], "coefficient": 0.5},
        {"exponents": [4, 0, 0, 0], "coefficient": 0.25},
        {"exponents": [0, 0, 0, 2], "coefficient": 0.5},
        {"exponents": [0, 0, 2, 0], "coefficient": 1.0},
        {"exponents": [3, 0, 1, 0], "coefficient": -beta},
    ]
    return d


def duffing_pair():
    return model_from_dict(duffing_pair_dict())


def linear_pair():
    return model_from_dict(linear_pair_dict())


def coupled_pair(beta=0.3):
    return model_from_dict(coupled_pair_dict(beta))


def write_model(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
