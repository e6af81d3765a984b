"""One user, one waveguide, one pinching antenna.

With a single PA the minimal power is the SINR target times the noise,
divided by the channel gain, so the best position sits right above the
user.  This script runs both optimizers from the centre of the waveguide
and compares them with a dense line search.

    python demos/toy_walkthrough.py
"""

import numpy as np

from passopt.channel import PhysConstants, Scenario, UserLayout, WaveguideLayout, channel_rows_batch
from passopt.mmpdd import run_mm_pdd
from passopt.psozf import PsoConfig, run_pso_zf

NOISE = 1e-11  # -80 dBm
SINR = 100.0   # 20 dB


def line_search(sc, n=20_001):
    xs = np.linspace(0.0, sc.layout.x_max, n)
    U = channel_rows_batch(xs.reshape(-1, 1, 1), sc.users.flat, sc.consts, sc.layout)
    p = SINR * NOISE / np.abs(U[:, 0, 0]) ** 2
    i = int(np.argmin(p))
    return xs[i], p[i]


def dbm(w):
    return 10 * np.log10(w * 1000)


for ux in (2.0, 12.3, 29.0):
    lay = WaveguideLayout(N=1, L=1, x_max=30.0)
    sc = Scenario(PhysConstants(), lay, UserLayout(np.array([[[ux, 2.0, 0.0]]])), SINR, NOISE)
    x_star, p_star = line_search(sc)
    mm = run_mm_pdd(sc)
    pso = run_pso_zf(sc, config=PsoConfig(seed=1))
    print(f"user at x={ux:5.1f} m: line search x={x_star:6.3f} {dbm(p_star):6.2f} dBm | "
          f"MM-PDD x={mm.X[0, 0]:6.3f} {dbm(mm.power):6.2f} dBm ({mm.iterations} it) | "
          f"PSO-ZF x={pso.X[0, 0]:6.3f} {dbm(pso.power):6.2f} dBm")
