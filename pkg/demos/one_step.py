"""One perturbation step from the zero state: defect residual and error norms.

Run: python demos/one_step.py   (about a minute)
"""
from hardyci.error import assemble_new_error, defect_residual, norm_report, sample_grid
from hardyci.params import ParamSet
from hardyci.perturbation import EnergyProfile, assemble_perturbation, zero_state

P = ParamSet.desk(8, 64.0)
e = EnergyProfile.constant(1.0)

s0 = zero_state(1.0)
bundle = assemble_perturbation(s0, e, P, check=False)
s1, parts = assemble_new_error(s0, bundle, P)
print(f"kappa = {bundle.coeffs.kappa}, eps = {bundle.coeffs.epsilon:.3e}")

# a coarse grid keeps this quick; the acceptance suite uses 16 x 16 x 8
rep = defect_residual(s1, s0, P, grid=sample_grid(P, bundle.coeffs.kappa, n=8, nt=2))
print(f"defect residual {rep.relative:.2e} (relative, {rep.points} points), "
      f"largest term {rep.worst_term}, relative div u1 {rep.div_u_relative:.1e}")

for row in norm_report(parts, s1, P, t_grid=(0.5,), n=512):
    extra = "" if row.bound is None else f"  bound {row.bound:.3g} ok={row.ok}"
    print(f"{row.name:>7} {row.norm:>4}: {row.value:.3e} +- {row.stderr:.1e}  ~ {row.order}{extra}")
