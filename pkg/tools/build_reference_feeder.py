"""Generate the bundled 18-node reference feeder (src/lvopf/data/ref18.json).

Topology: trunk 1-...-12 with laterals 6-13-14-15 and 9-16-17-18, all
segments identical. Cable data are a Kron-reduced 4-core 50 mm2 Al
underground cable; demand per phase is scaled to the 35.9/31.0/33.2 %
(P) and 36.9/34.9/28.2 % (Q) target phase shares.

Segment length and total demand were tuned so that the no-control
maximum voltage is about 1.056 pu on phase b, with P-only curtailment
near 10 % and coordinated P+Q control removing about 40 % of it.

    python tools/build_reference_feeder.py [--length-m 42] [--total-load-w 11600]
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "lvopf" / "data" / "ref18.json"

Z1_OHM_PER_KM = complex(0.647, 0.066)
Z0_OHM_PER_KM = 2.9 * Z1_OHM_PER_KM
B1_S_PER_KM = 2 * math.pi * 50 * 0.60e-6

EDGES = ([(k, k + 1) for k in range(1, 12)]
         + [(6, 13), (13, 14), (14, 15), (9, 16), (16, 17), (17, 18)])

# (node, phase, relative P, power factor) for loads C1..C20
LOADS = [
    (2, "a", 1.00, 0.95), (3, "c", 0.80, 0.93), (4, "c", 1.10, 0.95), (5, "a", 0.70, 0.96),
    (6, "b", 1.20, 0.94), (7, "c", 0.90, 0.92), (8, "a", 1.30, 0.95), (9, "b", 0.60, 0.95),
    (10, "c", 1.00, 0.96), (11, "a", 0.80, 0.94), (12, "b", 1.10, 0.95), (13, "c", 0.70, 0.93),
    (14, "a", 1.00, 0.95), (15, "b", 0.90, 0.94), (16, "c", 1.20, 0.95), (17, "a", 0.90, 0.96),
    (18, "b", 0.60, 0.95), (12, "c", 0.80, 0.94), (15, "a", 0.60, 0.95), (18, "b", 0.90, 0.95),
]
WITHOUT_PV = {2, 6, 11, 18}   # zero-based load positions with no inverter
P_SHARES = {"a": 0.359, "b": 0.310, "c": 0.332}
Q_SHARES = {"a": 0.369, "b": 0.349, "c": 0.282}


def cable(length_m):
    km = length_m / 1000.0
    zs = (2 * Z1_OHM_PER_KM + Z0_OHM_PER_KM) / 3 * km
    zm = (Z0_OHM_PER_KM - Z1_OHM_PER_KM) / 3 * km
    z = np.full((3, 3), zm) + np.eye(3) * (zs - zm)
    y = np.eye(3) * 1j * B1_S_PER_KM * km
    return z, y


def pairs(m):
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def build(length_m, total_load_w, s_pv_va=2500.0):
    v_base = 400.0 / math.sqrt(3.0)
    z, y = cable(length_m)
    share_total = sum(P_SHARES.values())
    p_raw = {ph: sum(r for _, p, r, _ in LOADS if p == ph) for ph in "abc"}
    q_raw = {ph: sum(r * math.tan(math.acos(pf)) for _, p, r, pf in LOADS if p == ph) for ph in "abc"}
    p_tot = total_load_w
    q_tot = sum(r * math.tan(math.acos(pf)) for _, _, r, pf in LOADS) / sum(r for _, _, r, _ in LOADS) * p_tot
    loads, pvs = [], []
    for k, (node, ph, r, pf) in enumerate(LOADS):
        p = r / p_raw[ph] * P_SHARES[ph] / share_total * p_tot
        q = r * math.tan(math.acos(pf)) / q_raw[ph] * Q_SHARES[ph] / sum(Q_SHARES.values()) * q_tot
        loads.append({"node": node, "phase": ph, "p_w": round(p, 2), "q_var": round(q, 2)})
        if k not in WITHOUT_PV:
            pvs.append({"node": node, "phase": ph, "s_available_va": s_pv_va})
    bound = 10 * total_load_w
    return {
        "bases": {"s_base_va": 1000.0, "v_base_phase_v": v_base},
        "limits": {"v_min_pu": 0.97, "v_max_pu": 1.03},
        "nodes": [{"id": i, "is_slack": i == 1} for i in range(1, 19)],
        "lines": [{"from": a, "to": b, "z_series": pairs(z), "y_shunt": pairs(y)} for a, b in EDGES],
        "loads": loads,
        "conv_generators": [{"node": 1, "p_min_w": -bound, "p_max_w": bound,
                             "q_min_var": -bound, "q_max_var": bound, "cost_per_w": 1.0}],
        "pv_inverters": pvs,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--length-m", type=float, default=42.0)
    ap.add_argument("--total-load-w", type=float, default=11600.0)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    doc = build(args.length_m, args.total_load_w)
    args.out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
