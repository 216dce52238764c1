"""Two-scale sweep over lam = 8..64 at the scheduled exponents for p = 3/4.

Run: python demos/scaling_sweep.py   (about a minute)
"""
from hardyci.scheduler import choose_parameters, exponent_table, gamma0
from hardyci.twoscale import sweep

p = 0.75
ch = choose_parameters(p)
print(f"alpha = {ch.alpha}, beta = {ch.beta}, N = {ch.N}, gamma0 = {gamma0(*ch, p)}")
for row in exponent_table(*ch, p):
    print(f"  {row['name']:>16} {row['norm']:>4}: lam^{row['exponent']:+.3f}   ({row['order']})")

res = sweep([8, 16, 32, 64], ch.alpha, ch.beta, p, N=2)
for q, f in res["fits"].items():
    print(f"{q:>14}: measured {f['slope']:+.3f}, predicted {f['predicted']:+.3f}")
