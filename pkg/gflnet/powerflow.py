"""Dimensionless power flow, existence conditions and network equilibria."""
import typing

import numpy as np
import pandas as pd
import pydantic
import scipy.optimize

from .blockmath import (
    block_moduli,
    cnorm_inf,
    cnorm_inf_mat,
    dmat_apply,
    dmat_inv_apply,
    dpmat,
    encode_vector,
    h_apply,
    j_apply,
    kron_i2,
    rot_apply,
)
from .core import ModelError, NonConvergenceError, NumericalError, ObjCore
from .dynamics import DynamicsSystem, StateLayout, rhs
from .netgraph import ReducedNetwork

EXISTENCE_BOUND = 3.0 / 8.0


class PowerFlowProblem(ObjCore):
    reduced: ReducedNetwork
    s_ref_hat: typing.Any = pydantic.Field(..., description="Per-inverter (p, q), length 2n")

    @pydantic.model_validator(mode="after")
    def check_dims(self):
        self.s_ref_hat = np.asarray(self.s_ref_hat, dtype=float).ravel()
        if self.s_ref_hat.size != 2 * self.reduced.n_inverters:
            raise ModelError(
                f"s_ref_hat has {self.s_ref_hat.size} entries for {self.reduced.n_inverters} inverters"
            )
        return self

    @classmethod
    def uniform(cls, reduced, p_hat, q_hat=0.0):
        n = reduced.n_inverters
        return cls(reduced=reduced, s_ref_hat=np.tile([p_hat, q_hat], n))


class PowerFlowSolution(ObjCore):
    v_o_hat: typing.Any
    i_o_hat: typing.Any
    s_ref_hat: typing.Any
    iterations: int = 0
    residual_power: float = 0.0
    residual_current: float = 0.0
    margin: typing.Optional[float] = None
    certified: bool = False
    in_ball: bool = True
    all_in_ball: bool = True
    steps: typing.List[float] = []
    buses: typing.List[int] = []

    @property
    def residual(self):
        return max(self.residual_power, self.residual_current)

    def to_frame(self):
        """One row per inverter bus with per-bus residuals."""
        n = self.v_o_hat.size // 2
        power = self.s_ref_hat - 1.5 * dmat_apply(self.v_o_hat, self.i_o_hat)
        return pd.DataFrame(
            {
                "bus": self.buses or list(range(n)),
                "v_D": self.v_o_hat[0::2],
                "v_Q": self.v_o_hat[1::2],
                "i_D": self.i_o_hat[0::2],
                "i_Q": self.i_o_hat[1::2],
                "residual_power": np.maximum(np.abs(power[0::2]), np.abs(power[1::2])),
                "residual_current": np.full(n, self.residual_current),
            }
        )


class Equilibrium(ObjCore):
    alpha: typing.Any = pydantic.Field(..., description="Phase choice per inverter, 0 or 1")
    state: typing.Any
    delta_ref: typing.Any = pydantic.Field(..., description="Angles for alpha = 0 (rad)")
    layout: StateLayout


def _conj_dpmat_inv(w):
    # D'(w)^-1 = D'(conj w) / |w|^2
    mod2 = np.repeat(block_moduli(w) ** 2, 2)
    conj = w.copy()
    conj[1::2] *= -1
    return dpmat(conj / mod2)


def existence_margin(problem: PowerFlowProblem):
    """|| D'(w) Y_red^-1 D'(w)^-1 D'(s_ref) ||; a unique solution exists when <= 3/8."""
    red = problem.reduced
    w = red.w_hat
    if np.any(block_moduli(w) == 0.0):
        raise ModelError("degenerate no-load voltage: a block of w is zero")
    mat = dpmat(w) @ red.y_red_hat_inv @ _conj_dpmat_inv(w) @ dpmat(problem.s_ref_hat)
    return cnorm_inf_mat(mat)


def static_margin(reduced: ReducedNetwork, p_hat):
    """p_hat || Y_red^-1 || for a uniform active injection."""
    return float(p_hat) * cnorm_inf_mat(reduced.y_red_hat_inv)


def power_residuals(reduced, s_ref_hat, v, i, v_g_hat=None):
    v_g_hat = reduced.v_g_hat if v_g_hat is None else v_g_hat
    res_power = np.max(np.abs(s_ref_hat - 1.5 * dmat_apply(v, i)))
    res_current = np.max(np.abs(i - reduced.y_red_hat @ v - reduced.y_g_hat @ v_g_hat))
    return float(res_power), float(res_current)


def solve_fixed_point(problem: PowerFlowProblem, tol=1e-12, max_iter=1000, logger=None):
    """Fixed-point iteration v <- w + 2/3 Y_red^-1 D(v)^-1 s_ref started at w.

    The iteration is attempted even when the existence margin exceeds 3/8; the
    solution is then flagged as not certified.
    """
    red = problem.reduced
    s_ref = problem.s_ref_hat
    w = red.w_hat
    margin = existence_margin(problem)
    certified = margin <= EXISTENCE_BOUND
    if not certified and logger:
        logger.warning(f"existence margin {margin:.6f} exceeds 3/8, solution is uncertified")

    radius = 0.5 * cnorm_inf(w)
    v = w.copy()
    steps = []
    all_in_ball = True
    for k in range(1, max_iter + 1):
        v_next = w + (2.0 / 3.0) * red.solve_red(dmat_inv_apply(v, s_ref))
        if not np.all(np.isfinite(v_next)):
            raise NonConvergenceError(
                f"fixed-point iterate diverged at iteration {k}", residual=np.inf, iterations=k
            )
        step = cnorm_inf(v_next - v)
        steps.append(step)
        v = v_next
        if logger:
            logger.debug(f"fixed point iteration {k}: step {step:.3e}")
        if cnorm_inf(v - w) > radius * (1 + 1e-12):
            all_in_ball = False
            if certified:
                if logger:
                    logger.error(f"iterate {k} left the existence ball although the margin holds")
                raise NumericalError(
                    f"iterate {k} left the existence ball although margin {margin:.6f} <= 3/8"
                )
        if step <= tol:
            break
    else:
        if logger:
            logger.error(f"fixed point did not converge in {max_iter} iterations")
        raise NonConvergenceError(
            f"fixed point did not converge in {max_iter} iterations (last step {steps[-1]:.3e})",
            residual=steps[-1],
            iterations=max_iter,
        )

    i = red.y_red_hat @ (v - w)
    res_power, res_current = power_residuals(red, s_ref, v, i)
    if logger:
        logger.info(
            f"power flow converged in {k} iterations, residuals {res_power:.2e} / {res_current:.2e}"
        )
    return PowerFlowSolution(
        v_o_hat=v,
        i_o_hat=i,
        s_ref_hat=s_ref,
        iterations=k,
        residual_power=res_power,
        residual_current=res_current,
        margin=margin,
        certified=certified,
        in_ball=cnorm_inf(v - w) <= radius * (1 + 1e-12),
        all_in_ball=all_in_ball,
        steps=steps,
        buses=red.inverter_buses,
    )


def reference_angles(v_o_hat):
    """delta with d-component of R(delta) v zero and q-component positive."""
    v = np.asarray(v_o_hat, dtype=float)
    if np.any(block_moduli(v) == 0.0):
        k = int(np.flatnonzero(block_moduli(v) == 0.0)[0])
        raise ModelError(f"inverter {k} has zero voltage, its angle is undefined")
    return -np.arctan2(v[0::2], v[1::2])


def build_equilibrium(
    solution: PowerFlowSolution,
    reduced: ReducedNetwork,
    tau_pp_lc=None,
    alpha=None,
    line_model="dynamic",
    v_g_hat=None,
):
    """Equilibrium state for a power-flow solution and a phase choice ``alpha``."""
    n = reduced.n_inverters
    tau_pp_lc = reduced.tau_pp_lc if tau_pp_lc is None else np.broadcast_to(tau_pp_lc, (n,))
    if tau_pp_lc is None:
        raise ModelError("filter capacitance time constant is required")
    alpha = np.zeros(n, dtype=int) if alpha is None else np.asarray(alpha, dtype=int)
    if alpha.shape != (n,) or np.any((alpha != 0) & (alpha != 1)):
        raise ModelError(f"alpha must be a 0/1 vector of length {n}")
    v_g_hat = reduced.v_g_hat if v_g_hat is None else np.asarray(v_g_hat, dtype=float)

    v = np.asarray(solution.v_o_hat, dtype=float)
    i = np.asarray(solution.i_o_hat, dtype=float)
    delta_ref = reference_angles(v)
    delta = delta_ref + np.pi * alpha

    i_l = np.repeat(tau_pp_lc, 2) * j_apply(v) + i
    phi_s = h_apply(rot_apply(delta, i_l))

    m = reduced.n_lines if line_model == "dynamic" else 0
    layout = StateLayout(n=n, m=m)
    s = layout.slices()
    x = np.zeros(layout.dim)
    x[s["delta"]] = delta
    x[s["phi_s"]] = phi_s
    x[s["s_avg"]] = solution.s_ref_hat
    x[s["gamma"]] = v
    x[s["i_l"]] = i_l
    x[s["v_o"]] = v
    if m:
        x[s["xi"]] = np.linalg.solve(
            reduced.z_l, kron_i2(reduced.bi.T) @ v + kron_i2(reduced.b0.T) @ v_g_hat
        )
    return Equilibrium(alpha=alpha, state=x, delta_ref=delta_ref, layout=layout)


def static_spl(family_generator, p_hat, n_max=200, logger=None):
    """Largest n whose generated network meets the existence condition.

    Args:
        family_generator: Callable n -> ReducedNetwork.
        p_hat: Uniform active injection.
        n_max: Scan cap.

    Returns:
        (spl, capped) where ``capped`` tells the scan reached ``n_max``.
    """
    if p_hat < 0:
        raise ModelError(f"p_hat must be nonnegative, got {p_hat}")
    spl = 0
    for n in range(1, n_max + 1):
        problem = PowerFlowProblem.uniform(family_generator(n), p_hat)
        margin = existence_margin(problem)
        if logger:
            logger.debug(f"static scan n = {n}: margin {margin:.6f}")
        if margin > EXISTENCE_BOUND:
            return spl, False
        spl = n
    return spl, True


def solution_from_state(system: DynamicsSystem, x):
    """Power-flow solution read off a (near) equilibrium state."""
    x = np.asarray(x, dtype=float)
    v = x[system.layout.slices()["v_o"]].copy()
    i = system.output_current(x)
    res_power, res_current = power_residuals(
        system.reduced, system.s_ref_hat, v, i, v_g_hat=system.v_g_hat
    )
    return PowerFlowSolution(
        v_o_hat=v,
        i_o_hat=i,
        s_ref_hat=system.s_ref_hat,
        residual_power=res_power,
        residual_current=res_current,
        buses=system.reduced.inverter_buses,
    )


def solve_equilibrium_root(system: DynamicsSystem, x0, tol=1e-12, logger=None):
    """Root of the network right-hand side from ``x0`` by a generic nonlinear solve."""
    sol = scipy.optimize.root(lambda x: rhs(system, x), np.asarray(x0, dtype=float),
                              method="hybr", tol=tol)
    residual = float(np.max(np.abs(sol.fun)))
    if not sol.success:
        if logger:
            logger.error(f"equilibrium solve failed: {sol.message}")
        raise NonConvergenceError(
            f"equilibrium solve failed: {sol.message}", residual=residual, iterations=sol.nfev
        )
    if logger:
        logger.info(f"equilibrium found, rhs residual {residual:.2e}")
    return sol.x


def single_inverter_voltage(z_hat, s_hat):
    """High-voltage solution for one inverter behind impedance ``z_hat`` from a unit grid.

    Args:
        z_hat: Complex dimensionless line impedance.
        s_hat: Complex injection p + i q.

    Returns:
        Block vector (v_D, v_Q).
    """
    # V conj(V - i) = 2/3 S conj(z)  =>  x = Im c, y^2 - y + x^2 - Re c = 0
    c = (2.0 / 3.0) * complex(s_hat) * np.conj(complex(z_hat))
    x = c.imag
    disc = 1.0 - 4.0 * (x ** 2 - c.real)
    if disc < 0:
        raise ModelError("no power-flow solution for this injection")
    y = 0.5 * (1.0 + np.sqrt(disc))
    return encode_vector(x + 1j * y)


def single_inverter_condition(s_ref_va, r_ohm, l_henry, v_g, omega_nom):
    """|s_ref| <= 3/8 V_g^2 / |R + i omega L| for one inverter behind one line."""
    return bool(abs(complex(s_ref_va)) <= EXISTENCE_BOUND * v_g ** 2 / np.hypot(r_ohm, omega_nom * l_henry))


def resistive_existence_margin(l_red_hat, u_hat, p_hat):
    """|| [u] L_red^-1 [u]^-1 [p] ||_inf for purely resistive networks and active injections."""
    u_hat = np.asarray(u_hat, dtype=float)
    if np.any(u_hat == 0):
        raise ModelError("degenerate no-load voltage: a component of u is zero")
    p_hat = np.broadcast_to(np.asarray(p_hat, dtype=float), u_hat.shape)
    mat = np.diag(u_hat) @ np.linalg.inv(l_red_hat) @ np.diag(1.0 / u_hat) @ np.diag(p_hat)
    return float(np.max(np.sum(np.abs(mat), axis=1)))
