"""Small networks built directly in per-unit for unit and property tests."""
from __future__ import annotations

import numpy as np

from lvopf.netmodel import (ConventionalGenerator, Line, Load, Network, Node, OperatingLimits, Phase,
                            PvInverter)

S_BASE = 1000.0
V_BASE = 400.0 / np.sqrt(3.0)


def pu_network(n_nodes, lines, loads=(), pvs=(), *, v_min=0.0, v_max=2.0, gen_bound=50.0,
               cost=1.0):
    nodes = [Node(k + 1, 1.0, is_slack=(k == 0)) for k in range(n_nodes)]
    gens = [ConventionalGenerator(1, -gen_bound, gen_bound, -gen_bound, gen_bound, cost)]
    return Network(nodes, lines, loads, gens, pvs, OperatingLimits(v_min, v_max),
                   S_BASE, V_BASE, unit="pu")


def decoupled(z) -> np.ndarray:
    return np.eye(3) * complex(z)


def coupled(z_self, z_mutual) -> np.ndarray:
    return np.full((3, 3), complex(z_mutual)) + np.eye(3) * (complex(z_self) - complex(z_mutual))


def two_bus(z, s_avail, *, v_max=1.03, v_min=0.0, load=0j, phase=Phase.a):
    loads = [Load(2, phase, load.real, load.imag)] if load else []
    return pu_network(2, [Line(1, 2, decoupled(z))], loads, [PvInverter(2, phase, s_avail)],
                      v_min=v_min, v_max=v_max)


def random_impedance(rng, scale=1.0) -> np.ndarray:
    """Symmetric coupled series impedance with dominant self terms."""
    zs = complex(rng.uniform(0.02, 0.08), rng.uniform(0.01, 0.05)) * scale
    zm = np.array([complex(rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)) for _ in range(3)]) * zs
    z = np.eye(3) * zs
    for k, (a, b) in enumerate(((0, 1), (0, 2), (1, 2))):
        z[a, b] = z[b, a] = zm[k]
    z += np.diag(rng.uniform(-0.1, 0.1, 3) * zs)
    return z


def random_network(rng, n_nodes=None, *, injection=0.3, shunt=True, mesh=True):
    """Random 2-4 node feeder; a closing edge is added sometimes when ``mesh``."""
    n = int(rng.integers(2, 5)) if n_nodes is None else n_nodes
    edges = [(int(rng.integers(1, k + 1)), k + 1) for k in range(1, n)]
    if mesh and n >= 3 and rng.random() < 0.4:
        a, b = sorted(rng.choice(np.arange(1, n + 1), 2, replace=False))
        if (a, b) not in edges:
            edges.append((int(a), int(b)))
    lines = []
    for a, b in edges:
        ysh = np.diag(1j * rng.uniform(0.0, 0.02, 3)) if shunt else np.zeros((3, 3))
        lines.append(Line(a, b, random_impedance(rng), ysh))
    loads, pvs = [], []
    for node in range(2, n + 1):
        for ph in Phase:
            r = rng.random()
            if r < 0.4:
                loads.append(Load(node, ph, rng.uniform(0, injection), rng.uniform(-0.3, 0.5) * injection))
            elif r < 0.7:
                pvs.append(PvInverter(node, ph, rng.uniform(0, injection)))
    return pu_network(n, lines, loads, pvs)
