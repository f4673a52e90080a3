"""
How the neighborhood filter order shapes the frequency response
================================================================

The item filter ``I - (I - O)^k`` acts on every graph frequency ``lam`` of
the item graph as ``1 - lam**k``.  Larger ``k`` lets more of the low band
through at almost full strength while still suppressing high frequencies.
"""
import numpy as np

from freqgsp.filters import response, retained_fraction, smoothness

lam = np.linspace(0, 1, 11)
print("lam   " + " ".join(f"{x:5.1f}" for x in lam))
for k in (1, 2, 5, 10, 14):
    print(f"k={k:<3} " + " ".join(f"{v:5.3f}" for v in response(lam, k)))

# fraction of the band with response >= 0.999
for k in (2, 5, 10, 14):
    print(f"k={k:<3} passes lam <= {retained_fraction(k):.3f} at >= 0.999")

# %%
# Projecting a signal onto the smoothest eigenvectors of a path graph lowers
# its Rayleigh quotient; projecting onto the roughest ones raises it.
n = 12
A = np.diag(np.ones(n - 1), 1)
A = A + A.T
L = np.diag(A.sum(1)) - A
_, U = np.linalg.eigh(L)
x = np.random.default_rng(0).standard_normal(n)
low = U[:, :3] @ (U[:, :3].T @ x)
high = U[:, -3:] @ (U[:, -3:].T @ x)
for name, y in (("signal", x), ("low-passed", low), ("high-passed", high)):
    print(f"{name:12s} x'Lx/x'x = {smoothness(L, y, squared_norm=True):.3f}")
