"""The norm-constraint loss surface and its closed form.

l_tn(h, h+) = ||h - h+|| / (||h|| + ||h+||) depends only on the norm ratio
k = ||h+||/||h|| and the cosine t between the vectors:

    l_tn_kt(k, t) = sqrt(1 + k^2 - 2kt) / (1 + k)

It is bounded in [0, 1] and vanishes exactly at (k=1, t=1): equal norms
and perfect alignment. This script tabulates the surface and verifies the
vector/closed-form bridge numerically.
"""

import numpy as np

from tncse import losses as L

print("l_tn_kt over a (k, t) grid:")
ks = [0.25, 0.5, 1.0, 2.0, 4.0]
ts = [-1.0, -0.5, 0.0, 0.5, 0.9, 1.0]
header = "k\\t " + " ".join(f"{t:6.2f}" for t in ts)
print(header)
for k in ks:
    row = " ".join(f"{L.l_tn_kt(k, t):6.4f}" for t in ts)
    print(f"{k:4.2f} {row}")

print("\nminimum: l_tn_kt(1, 1) =", L.l_tn_kt(1.0, 1.0))

# vector form agrees with the closed form
rng = np.random.default_rng(1)
worst = 0.0
for _ in range(1000):
    h, hp = rng.standard_normal(8), rng.standard_normal(8)
    k = np.linalg.norm(hp) / np.linalg.norm(h)
    t = float(h @ hp / (np.linalg.norm(h) * np.linalg.norm(hp)))
    worst = max(worst, abs(L.l_tn(h, hp).item() - L.l_tn_kt(k, np.clip(t, -1, 1))))
print("max |vector - closed form| over 1000 pairs:", worst)

# contrastive InfoNCE closed forms
from tncse.autodiff import Tensor
pair = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
print("\ninfo_nce, two identical rows, tau=1:", L.info_nce(pair, pair, 1.0).item(),
      "(= log 2 =", np.log(2.0), ")")
ortho = Tensor(np.eye(2))
print("info_nce, orthogonal rows, tau=0.05:", L.info_nce(ortho, ortho, 0.05).item(),
      "(= log(1+e^-20) =", np.log(1 + np.exp(-20.0)), ")")
