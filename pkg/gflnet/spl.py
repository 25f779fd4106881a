"""Radial test networks and Safe Penetration Level scans."""
import time
import typing

import numpy as np
import pandas as pd
import pydantic
import tqdm

from .core import ModelError, NonConvergenceError, ObjCore
from .dynamics import DynamicsSystem
from .inverter import TimeConstants, eps_family_constants, lc_time_constants
from .linstab import certify, hurwitz_verdict, jacobian
from .netgraph import radial_chain
from .powerflow import (
    EXISTENCE_BOUND,
    PowerFlowProblem,
    build_equilibrium,
    existence_margin,
    solve_fixed_point,
)

SPL_METHODS = ("full-eig", "m-matrix", "static")
CONFIRM_WINDOW = 3


class RadialFamilySpec(ObjCore):
    """Chain of identical lines with one inverter per bus and a uniform injection."""

    r_ohm: float = pydantic.Field(0.02, gt=0, description="Line resistance (ohm)")
    l_henry: float = pydantic.Field(2e-5, ge=0, description="Line inductance (H)")
    v_g: float = pydantic.Field(float(120 * np.sqrt(2)), gt=0, description="Grid voltage peak (V)")
    omega_nom: float = pydantic.Field(float(120 * np.pi), gt=0, description="Nominal frequency (rad/s)")
    s_nom: float = pydantic.Field(1000.0, gt=0, description="Nominal power (VA)")
    eps_i: float = pydantic.Field(0.001, gt=0, description="Time-constant generator knob")
    tau_p_s: typing.Optional[float] = pydantic.Field(None, gt=0, description="Defaults to 0.1 V_g")
    l_f: float = pydantic.Field(1e-3, gt=0, description="Filter inductance (H)")
    c_f: float = pydantic.Field(2e-3, gt=0, description="Filter capacitance (F)")
    p_hat: float = pydantic.Field(1.0, ge=0, description="Uniform active injection")
    q_hat: float = pydantic.Field(0.0, description="Uniform reactive injection")
    n_max: int = pydantic.Field(60, ge=1, description="Scan cap")
    constants: typing.Optional[TimeConstants] = pydantic.Field(
        None, description="Fixed inverter constants replacing the eps_i generator"
    )

    def inverter_constants(self):
        if self.constants is not None:
            return self.constants
        return eps_family_constants(
            self.eps_i, self.v_g, self.s_nom, self.omega_nom, self.l_f, self.c_f, tau_p_s=self.tau_p_s
        )


def example1_spec(**overrides):
    """25-inverter chain with the published inverter parameter column."""
    v_g, s_nom, omega = 120 * np.sqrt(2), 1000.0, 120 * np.pi
    l_f, c_f = 1.35e-3, 50e-6
    tau_lc, tau_p_lc, tau_pp_lc = lc_time_constants(l_f, c_f, v_g, s_nom, omega)
    constants = TimeConstants(
        tau_pll=1.27e-5,
        tau_p_pll=4.7e-3,
        t_pll=1.25e-1,
        tau_s=1.99e-2,
        tau_p_s=16.97,
        t_s=1e-1,
        tau_c=7.85e-4,
        t_c=1.43e-3,
        tau_lc=tau_lc,
        tau_p_lc=tau_p_lc,
        tau_pp_lc=tau_pp_lc,
        l_f=l_f,
        c_f=c_f,
    )
    params = dict(r_ohm=1e-2, l_henry=1e-5, l_f=l_f, c_f=c_f, n_max=25, constants=constants)
    params.update(overrides)
    return RadialFamilySpec(**params)


def make_radial(spec: RadialFamilySpec, n, p_hat=None):
    """(NetworkModel, TimeConstants, s_ref_hat) for the n-inverter member of the family."""
    if n < 1:
        raise ModelError(f"radial network needs n >= 1, got {n}")
    model = radial_chain(
        n, spec.r_ohm, spec.l_henry, v_g=spec.v_g, omega_nom=spec.omega_nom, s_nom=spec.s_nom
    )
    p_hat = spec.p_hat if p_hat is None else p_hat
    s_ref_hat = np.tile([p_hat, spec.q_hat], n)
    return model, spec.inverter_constants(), s_ref_hat


def build_system(spec, n, p_hat=None, logger=None):
    model, constants, s_ref_hat = make_radial(spec, n, p_hat=p_hat)
    system = DynamicsSystem.from_model(model, constants, s_ref_hat, logger=logger)
    return model, constants, system


class SPLResult(ObjCore):
    method: str
    p_hat: float
    spl: int = pydantic.Field(0, description="Largest n with a stable verdict")
    capped: bool = pydantic.Field(False, description="Scan reached n_max without stopping")
    stopped_by: typing.Optional[str] = None
    t_total: float = pydantic.Field(0.0, description="Certificate time summed over the scan (s)")
    verdicts: typing.List[typing.Dict[str, typing.Any]] = []

    def to_frame(self):
        return pd.DataFrame(self.verdicts)


def _static_point(spec, n, p_hat):
    model, _, system = build_system(spec, n, p_hat=p_hat)
    start = time.perf_counter()
    margin = existence_margin(PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat))
    elapsed = time.perf_counter() - start
    verdict = "stable" if margin <= EXISTENCE_BOUND else "unstable"
    return verdict, margin, elapsed


def _dynamic_point(spec, n, p_hat, method, repeat, logger):
    model, constants, system = build_system(spec, n, p_hat=p_hat)
    problem = PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat)
    solution = solve_fixed_point(problem, logger=logger)
    cert = certify(
        system, solution, method=method, model=model, constants=constants, repeat=repeat, logger=logger
    )
    return cert.verdict, cert.margin, cert.timings["certificate_s"]


def compute_spl(
    spec: RadialFamilySpec,
    method="full-eig",
    p_hat=None,
    n_max=None,
    repeat=1,
    progress=False,
    logger=None,
):
    """Scans n = 1..n_max upward and returns the largest n with a stable verdict.

    The scan stops once three consecutive n fail, or at the first power-flow
    non-convergence.
    """
    if method not in SPL_METHODS:
        raise ModelError(f"unknown SPL method {method!r}, expected one of {SPL_METHODS}")
    p_hat = spec.p_hat if p_hat is None else p_hat
    n_max = spec.n_max if n_max is None else n_max
    result = SPLResult(method=method, p_hat=p_hat)
    failures = 0
    scan = tqdm.tqdm(range(1, n_max + 1), desc=f"{method} p={p_hat:g}", disable=not progress)
    for n in scan:
        try:
            if method == "static":
                verdict, margin, elapsed = _static_point(spec, n, p_hat)
            else:
                verdict, margin, elapsed = _dynamic_point(spec, n, p_hat, method, repeat, logger)
        except NonConvergenceError as exc:
            if logger:
                logger.info(f"power flow failed at n = {n}, scan stopped: {exc}")
            result.verdicts.append({"n": n, "verdict": "no-solution", "margin": np.nan, "time_s": 0.0})
            result.stopped_by = "power-flow"
            break
        result.t_total += elapsed
        result.verdicts.append({"n": n, "verdict": verdict, "margin": margin, "time_s": elapsed})
        if logger:
            logger.debug(f"{method} n = {n}: {verdict} ({margin:.4e})")
        if verdict == "stable":
            result.spl = n
            failures = 0
        else:
            failures += 1
            if failures >= CONFIRM_WINDOW:
                result.stopped_by = "confirmed-failure"
                break
    else:
        result.capped = True
    scan.close()
    if logger:
        logger.info(f"SPL[{method}] at p = {p_hat:g}: {result.spl}{' (capped)' if result.capped else ''}")
    return result


def time_certificates(spec, n, p_hat=None, repeat=3, logger=None):
    """Best-of-``repeat`` times (s) of the full linearization and of the M test at size n."""
    model, constants, system = build_system(spec, n, p_hat=p_hat)
    problem = PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat)
    solution = solve_fixed_point(problem, logger=logger)
    t_lin = certify(system, solution, "full-eig", model=model, repeat=repeat).timings["certificate_s"]
    t_test = certify(system, solution, "m-matrix", model=model, repeat=repeat).timings["certificate_s"]
    return t_lin, t_test


def spl_table(spec, p_grid, methods=SPL_METHODS, repeat=3, progress=False, logger=None):
    """One row per p_hat: p_hat, T_lin, T_test, SPL, SPL_test, SPL_static."""
    rows = []
    for p_hat in p_grid:
        row = {"p_hat": float(p_hat)}
        results = {}
        for method in methods:
            results[method] = compute_spl(spec, method, p_hat=p_hat, progress=progress, logger=logger)
        row["SPL"] = results["full-eig"].spl if "full-eig" in results else np.nan
        row["SPL_test"] = results["m-matrix"].spl if "m-matrix" in results else np.nan
        row["SPL_static"] = results["static"].spl if "static" in results else np.nan
        t_lin = t_test = np.nan
        if "full-eig" in results and "m-matrix" in results and results["full-eig"].spl > 0:
            t_lin, t_test = time_certificates(
                spec, results["full-eig"].spl, p_hat=p_hat, repeat=repeat, logger=logger
            )
        row["T_lin"] = t_lin
        row["T_test"] = t_test
        rows.append(row)
    return pd.DataFrame(rows, columns=["p_hat", "T_lin", "T_test", "SPL", "SPL_test", "SPL_static"])


class SweepResult(ObjCore):
    table: typing.Any = pydantic.Field(..., description="DataFrame of sweep points")
    largest_valid_eps: typing.Optional[float] = pydantic.Field(
        None, description="Largest eps_i up to which SPL_test <= SPL at every point"
    )


def epsilon_sweep(spec, eps_grid, p_list, progress=False, logger=None):
    """SPL and SPL_test over a grid of eps_i generator values and injections."""
    eps_grid = sorted(float(e) for e in eps_grid)
    if not eps_grid:
        raise ModelError("eps grid is empty")
    rows = []
    for eps_i in eps_grid:
        point_spec = spec.model_copy(update={"eps_i": eps_i, "constants": None})
        for p_hat in p_list:
            full = compute_spl(point_spec, "full-eig", p_hat=p_hat, progress=progress, logger=logger)
            test = compute_spl(point_spec, "m-matrix", p_hat=p_hat, progress=progress, logger=logger)
            rows.append(
                {
                    "eps_i": eps_i,
                    "p_hat": float(p_hat),
                    "spl_full": full.spl,
                    "spl_test": test.spl,
                    "lower_bound": test.spl <= full.spl,
                }
            )
    table = pd.DataFrame(rows)
    largest = None
    for eps_i in eps_grid:
        if not table.loc[table["eps_i"] == eps_i, "lower_bound"].all():
            if logger:
                logger.warning(f"SPL_test exceeds SPL at eps_i = {eps_i:g}")
            break
        largest = eps_i
    return SweepResult(table=table, largest_valid_eps=largest)


class InstabilitySweep(ObjCore):
    table: typing.Any
    onset_p: typing.Optional[float] = pydantic.Field(None, description="First p_hat with abscissa > 0")
    existence_p: typing.Optional[float] = pydantic.Field(
        None, description="Largest p_hat meeting the existence condition"
    )

    @property
    def below_existence(self):
        """Instability appears while the existence condition still holds."""
        return (
            self.onset_p is not None
            and self.existence_p is not None
            and self.onset_p <= self.existence_p
        )


def instability_sweep(spec, n, p_grid, progress=False, logger=None):
    """Existence margin and full spectral abscissa along p_hat at fixed n."""
    rows = []
    for p_hat in tqdm.tqdm(list(p_grid), desc=f"sweep n={n}", disable=not progress):
        model, constants, system = build_system(spec, n, p_hat=p_hat)
        problem = PowerFlowProblem(reduced=system.reduced, s_ref_hat=system.s_ref_hat)
        margin = existence_margin(problem)
        try:
            solution = solve_fixed_point(problem, logger=logger)
        except NonConvergenceError:
            rows.append({"p_hat": float(p_hat), "existence_margin": margin, "spectral_abscissa": np.nan})
            continue
        eq = build_equilibrium(solution, system.reduced, line_model=system.line_model)
        lin = jacobian(system, eq.state, logger=logger)
        rows.append(
            {"p_hat": float(p_hat), "existence_margin": margin, "spectral_abscissa": lin.spectral_abscissa}
        )
    table = pd.DataFrame(rows, columns=["p_hat", "existence_margin", "spectral_abscissa"])
    unstable = table[table["spectral_abscissa"].apply(lambda a: hurwitz_verdict(a) == "unstable"
                                                       if np.isfinite(a) else False)]
    feasible = table[table["existence_margin"] <= EXISTENCE_BOUND]
    return InstabilitySweep(
        table=table,
        onset_p=float(unstable["p_hat"].min()) if len(unstable) else None,
        existence_p=float(feasible["p_hat"].max()) if len(feasible) else None,
    )
