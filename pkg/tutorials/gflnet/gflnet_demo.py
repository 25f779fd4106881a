import logging

from gflnet import PowerFlowProblem, certify, solve_fixed_point
from gflnet.powerflow import build_equilibrium
from gflnet.dynamics import simulate
from gflnet.spl import RadialFamilySpec, build_system, compute_spl

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("gflnet.demo")

## A 10-inverter feeder from the radial family
spec = RadialFamilySpec(eps_i=0.001, n_max=40)
model, constants, system = build_system(spec, 10, p_hat=1.0, logger=logger)

## Power flow with the existence certificate
problem = PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat)
solution = solve_fixed_point(problem, logger=logger)
print("existence margin:", solution.margin, "certified:", solution.certified)
print(solution.to_frame())

## Reduced-order test and full linearization
for method in ("m-matrix", "full-eig"):
    cert = certify(system, solution, method=method, model=model, constants=constants, logger=logger)
    print(method, cert.verdict, cert.margin)

## Short simulation from the equilibrium
eq = build_equilibrium(solution, system.reduced)
traj = simulate(system, eq.state + 1e-4, (0.0, 0.05), samples=51, logger=logger)
print("final deviation:", traj.deviation(eq.state)[-1])

## Safe penetration level at p_hat = 1.0
for method in ("static", "m-matrix"):
    print(method, compute_spl(spec, method, p_hat=1.0, progress=True).spl)
