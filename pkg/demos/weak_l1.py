"""f_n -> 0 in weak L^1 while f_n -> Dirac mass in distributions.

Run: python demos/weak_l1.py
"""
from hardyci.hardy import weak_l1_demo

for n in (1, 2, 4, 8, 16):
    d = weak_l1_demo(n)
    print(f"n = {n:2d}: int f_n = {d.integral}, weak norm = {d.weak_norm} ({float(d.weak_norm):.4f}), "
          f"|<f_n, phi> - phi(0)| = {d.pairing_error:.2e}")
