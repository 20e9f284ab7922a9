"""Generate the bundled stand-in for the `optimism` data set.

The first six rows are the first observations of the original series; the rest
is simulated from a small news-shock model with quarterly magnitudes similar
to the original (log TFP, log real stock prices, log consumption, real rate,
log hours). Re-running reproduces the file exactly.
"""
from pathlib import Path

import numpy as np

HEAD = np.array([
    [0.2172072, -11.28895, -4.331866, 0.008022252, -7.599184],
    [0.2129482, -11.17647, -4.324255, 0.021877748, -7.592445],
    [0.2069894, -11.11805, -4.318455, 0.018811208, -7.580577],
    [0.2003908, -11.08317, -4.301382, 0.012867114, -7.572133],
    [0.1945243, -11.02211, -4.293948, 0.024503568, -7.577512],
    [0.2002138, -11.06306, -4.291474, 0.000876887, -7.577491],
])
NAMES = ["productivity", "stock_prices", "consumption", "real_interest_rate", "hours_worked"]
T = 200


def simulate(seed=20240607):
    rng = np.random.default_rng(seed)
    y = np.zeros((T, 5))
    y[:6] = HEAD
    news = np.zeros(T)
    for t in range(6, T):
        tech, nw, dem, mon, lab = rng.standard_normal(5)
        news[t] = nw
        # news raises productivity growth with a two-to-four quarter delay
        dprod = 0.0025 + 0.007 * tech + 0.0015 * (news[t - 2] + news[t - 3] + news[t - 4]) / 3
        dstock = 0.004 + 0.055 * nw + 0.02 * tech + 0.03 * dem - 0.3 * (y[t - 1, 3] - 0.015)
        dcons = 0.0045 + 0.0025 * nw + 0.003 * tech + 0.002 * dem
        rate = 0.015 + 0.85 * (y[t - 1, 3] - 0.015) + 0.006 * mon + 0.001 * nw
        hours = -7.58 + 0.96 * (y[t - 1, 4] + 7.58) + 0.004 * nw - 0.002 * tech + 0.005 * lab
        y[t] = [y[t - 1, 0] + dprod, y[t - 1, 1] + dstock, y[t - 1, 2] + dcons, rate, hours]
    return y


def main():
    y = simulate()
    out = Path(__file__).resolve().parents[1] / "src" / "svar_signs" / "data" / "optimism.csv"
    with open(out, "w") as fh:
        fh.write(",".join(NAMES) + "\n")
        for row in y:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
    print(f"wrote {out} ({len(y)} rows)")


if __name__ == "__main__":
    main()
