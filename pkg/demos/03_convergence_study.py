"""
Mesh convergence of the shifted boundary solver
===============================================

Re-solves the immersed disk problem on uniformly refined meshes and fits
the slope of L2 error against element size. Second-order convergence is
the headline property of the method: the Taylor-shifted boundary condition
keeps the full accuracy of linear elements even though the boundary cuts
arbitrarily through the grid.
"""

import numpy as np

import treefem.expr as ex
from treefem import l2_error, parse_problem, run_problem, with_levels

SCRIPT = """
[domain]
dimension = 2
min = 0, 0
max = 1, 1
base_refine_level = 5

[geometry]
shape = circle
center = 0.5, 0.5
radius = 0.5
refine_level = 5
boundary_types = sbm
bids = 1

[variables]
names = u

[coefficients]
alpha = 400

[boundary_regions]
1 = true

[boundary_conditions]
u @ 1 = dirichlet, 0.01

[solver]
rel_tol = 1e-10

[weak_form]
dot(grad(u), grad(v)) - 1.0 * v
 + dirichletBoundary(
    -dot(grad(u), normal()) * v
    - dot(grad(v), normal())
      * (u + dot(grad(u), distanceToBoundary()) - dirichletValue())
    + alpha / elementDiameter()
      * (u + dot(grad(u), distanceToBoundary()) - dirichletValue())
      * (v + dot(grad(v), distanceToBoundary())))
"""

exact = ex.parse("0.01 + (0.25 - (x-0.5)*(x-0.5) - (y-0.5)*(y-0.5))/4")
spec = parse_problem(SCRIPT)

print(f"{'level':>5} {'h':>10} {'ndof':>8} {'L2 error':>12} {'rate':>6}")
hs, errors = [], []
for level in (5, 6, 7, 8):
    result = run_problem(with_levels(spec, level))
    err = l2_error(result.mesh, result.values, exact)
    hs.append(1.0 / (1 << level))
    errors.append(err)
    rate = ""
    if len(errors) > 1:
        rate = f"{np.log2(errors[-2] / errors[-1]):.2f}"
    print(f"{level:>5} {hs[-1]:>10.5f} {result.mesh.n_nodes:>8} "
          f"{err:>12.4e} {rate:>6}")

slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
print(f"\nfitted slope: {slope:.3f} (expect about 2)")
