"""How the temporal emphasis factor weakens the gates of a convolutional LSTM cell.

Run: python3 demos/distance_weighted_gates.py
"""
import numpy as np

from temrnn.cells import TemParams, dlstm_step, init_cell_params, lstm_step, positive_inverse, tem_eval

rng = np.random.default_rng(0)

# D(d) = a * exp(-c * d). At the default init (a=1, c=0.01) it falls by e every 100 days
tem = TemParams.from_effective(a=1.0, c=0.01)
for d in (0, 30, 100, 365):
    print(f"d={d:4d} days  D={tem_eval(tem, d)[0]:.4f}")

# a single 2-channel 8x8 cell with 4 hidden channels
params = init_cell_params("dlstm", 2, 4, 3, (8, 8), rng, c=0.02)
x = rng.normal(size=(2, 8, 8))

# with d=0 and a=1 the cell is an ordinary LSTM
plain = {k: v for k, v in params.items() if k not in ("a_raw", "c_raw")}
same = dlstm_step(params, x, 0.0, 0.0)
print("max |dlstm - lstm| at d=0:", np.abs(same.H - lstm_step(plain, x).H).max())

# farther scans write less into the cell state
for d in (0.0, 50.0, 200.0):
    s = dlstm_step(params, x, d, d)
    print(f"d={d:5.0f}  mean input gate {s.cache['i'].mean():.4f}  |C| {np.abs(s.C).mean():.4f}")

# raising a amplifies both gates uniformly
params["a_raw"] = np.array(positive_inverse(1.5))
print("a=1.5, d=0: mean input gate", dlstm_step(params, x, 0.0, 0.0).cache["i"].mean().round(4))
