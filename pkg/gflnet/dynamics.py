"""Full-order dimensionless dynamics of a grid-tied inverter network.

State ordering per inverter group, then lines:

    v_pll (n), phi_pll (n), delta (n), phi_s (2n), s_avg (2n),
    gamma (2n), i_l (2n), v_o (2n), xi (2m)

DQ quantities are stacked blockwise. ``delta`` is kept unwrapped. With
quasi-static lines the ``xi`` group is empty and the inverter output
currents follow from the Kron-reduced network.
"""
import functools
import typing

import numpy as np
import pandas as pd
import pydantic
import scipy.integrate

from .blockmath import H, dmat_apply, h_apply, j_apply, kron_i2, rot, rot_apply
from .core import ModelError, NumericalError, ObjCore
from .inverter import stack_constants
from .netgraph import ReducedNetwork, assemble_admittance, kron_reduce

LINE_MODELS = ("auto", "dynamic", "quasi-static")

_SCALAR_GROUPS = ("v_pll", "phi_pll", "delta")
_BLOCK_GROUPS = ("phi_s", "s_avg", "gamma", "i_l", "v_o")


class NetworkState(ObjCore):
    v_pll: typing.Any
    phi_pll: typing.Any
    delta: typing.Any
    phi_s: typing.Any
    s_avg: typing.Any
    gamma: typing.Any
    i_l: typing.Any
    v_o: typing.Any
    xi: typing.Any


class StateLayout(ObjCore):
    """Slot ordering of the network state."""

    n: int = pydantic.Field(..., ge=1, description="Number of inverters")
    m: int = pydantic.Field(0, ge=0, description="Number of dynamic lines")

    @property
    def dim(self):
        return 13 * self.n + 2 * self.m

    def slices(self):
        out = {}
        start = 0
        for name in _SCALAR_GROUPS:
            out[name] = slice(start, start + self.n)
            start += self.n
        for name in _BLOCK_GROUPS:
            out[name] = slice(start, start + 2 * self.n)
            start += 2 * self.n
        out["xi"] = slice(start, start + 2 * self.m)
        return out

    def labels(self):
        labels = []
        for name in _SCALAR_GROUPS:
            labels += [f"inv{k}.{name}" for k in range(self.n)]
        suffix = {
            "phi_s": ("p", "q"),
            "s_avg": ("p", "q"),
            "gamma": ("D", "Q"),
            "i_l": ("D", "Q"),
            "v_o": ("D", "Q"),
        }
        for name in _BLOCK_GROUPS:
            for k in range(self.n):
                labels += [f"inv{k}.{name}_{c}" for c in suffix[name]]
        for e in range(self.m):
            labels += [f"line{e}.xi_D", f"line{e}.xi_Q"]
        return labels

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ModelError(f"state has shape {x.shape}, expected ({self.dim},)")
        return NetworkState(**{name: x[s] for name, s in self.slices().items()})

    def pack(self, state: NetworkState):
        x = np.zeros(self.dim)
        for name, s in self.slices().items():
            x[s] = getattr(state, name)
        return x


class DynamicsSystem(ObjCore):
    """Everything ``rhs`` needs, with per-inverter constants stacked as arrays."""

    reduced: ReducedNetwork
    layout: StateLayout
    line_model: str = pydantic.Field("dynamic", description="dynamic or quasi-static")
    s_ref_hat: typing.Any
    v_g_hat: typing.Any = pydantic.Field(np.array([0.0, 1.0]), description="Grid phasor")
    omega_nom: float
    tau_pll: typing.Any
    tau_p_pll: typing.Any
    t_pll: typing.Any
    tau_s: typing.Any
    tau_p_s: typing.Any
    t_s: typing.Any
    tau_c: typing.Any
    t_c: typing.Any
    tau_pp_lc: typing.Any
    kappa_lc: typing.Any = pydantic.Field(..., description="V_g^2 / (s_nom L_f)")
    kappa_c: typing.Any = pydantic.Field(..., description="s_nom / (V_g^2 C_f)")
    logger: typing.Any = None

    @property
    def n(self):
        return self.layout.n

    @property
    def dim(self):
        return self.layout.dim

    def dict(self, **kwrds):
        kwrds.setdefault("exclude", set()).add("logger")
        return super().dict(**kwrds)

    @classmethod
    def from_model(
        cls,
        model,
        constants,
        s_ref_hat,
        line_model="auto",
        v_g_hat=None,
        logger=None,
    ):
        """Builds the system for a network and its inverter constants.

        Args:
            model: NetworkModel.
            constants: One TimeConstants shared by all inverters, or one per inverter.
            s_ref_hat: Per-inverter (p, q) references, length 2n.
            line_model: ``auto``, ``dynamic`` or ``quasi-static``.
        """
        n = model.n_inverters
        if line_model not in LINE_MODELS:
            raise ModelError(f"unknown line model {line_model!r}")
        if line_model == "auto":
            if model.is_inductive:
                line_model = "dynamic"
            elif model.is_resistive:
                line_model = "quasi-static"
            else:
                raise ModelError(
                    "network mixes resistive and inductive lines, choose the line model explicitly"
                )
        if line_model == "dynamic" and not model.is_inductive:
            raise ModelError("dynamic line model needs a positive inductance on every line")

        groups = constants if isinstance(constants, (list, tuple)) else [constants]
        if len(groups) == 1:
            groups = list(groups) * n
        stacked = stack_constants(groups, n)
        filters = [c.filter_values(model.v_g, model.s_nom, model.omega_nom) for c in groups]
        l_f = np.array([f[0] for f in filters])
        c_f = np.array([f[1] for f in filters])

        adm = assemble_admittance(model, logger=logger)
        reduced = kron_reduce(
            adm, model, c_f=c_f, l_f=l_f, tau_lc=stacked["tau_lc"], logger=logger
        )
        s_ref_hat = np.asarray(s_ref_hat, dtype=float).ravel()
        if s_ref_hat.size != 2 * n:
            raise ModelError(f"s_ref_hat has {s_ref_hat.size} entries, expected {2 * n}")
        scale = model.v_g ** 2 / model.s_nom
        m = model.n_lines if line_model == "dynamic" else 0
        if logger:
            logger.info(f"dynamics assembled: n = {n}, m = {m}, lines {line_model}")
        return cls(
            reduced=reduced,
            layout=StateLayout(n=n, m=m),
            line_model=line_model,
            s_ref_hat=s_ref_hat,
            v_g_hat=np.array([0.0, 1.0]) if v_g_hat is None else np.asarray(v_g_hat, dtype=float),
            omega_nom=model.omega_nom,
            kappa_lc=scale / l_f,
            kappa_c=1.0 / (scale * c_f),
            logger=logger,
            **{k: v for k, v in stacked.items() if k not in ("tau_lc", "tau_p_lc")},
        )

    @functools.cached_property
    def line_operators(self):
        red = self.reduced
        return {
            "b0": kron_i2(red.b0),
            "bl": kron_i2(red.bl),
            "bi": kron_i2(red.bi),
            "r_load": np.repeat(red.r_load_hat, 2),
            "gain": np.repeat(red.line_gain, 2),
        }

    def output_current(self, x):
        """Inverter output currents i_o for state ``x``."""
        s = self.layout.slices()
        v_o = x[s["v_o"]]
        if self.line_model == "dynamic":
            return self.line_operators["bi"] @ x[s["xi"]]
        return self.reduced.y_red_hat @ v_o + self.reduced.y_g_hat @ self.v_g_hat

    def load_voltages(self, x):
        """Load-bus voltages v_L = -[R_L] (B_L xi) under dynamic lines."""
        if self.line_model != "dynamic" or self.reduced.bl.shape[0] == 0:
            return np.zeros(0)
        xi = x[self.layout.slices()["xi"]]
        ops = self.line_operators
        return -ops["r_load"] * (ops["bl"] @ xi)


def instantaneous_power(v_o_hat, i_o_hat):
    """s = 3/2 D(v) i blockwise: p = 3/2 (vD iD + vQ iQ), q = 3/2 (vQ iD - vD iQ)."""
    return 1.5 * dmat_apply(v_o_hat, i_o_hat)


def rhs(system: DynamicsSystem, x, t=None):
    """Right-hand side of the network dynamics."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise ModelError(f"state has shape {x.shape}, expected ({system.dim},)")
    s = system.layout.slices()
    v_pll = x[s["v_pll"]]
    phi_pll = x[s["phi_pll"]]
    delta = x[s["delta"]]
    phi_s = x[s["phi_s"]]
    s_avg = x[s["s_avg"]]
    gamma = x[s["gamma"]]
    i_l = x[s["i_l"]]
    v_o = x[s["v_o"]]

    def per_block(a):
        return np.repeat(a, 2)

    # PLL
    v_od = np.cos(delta) * v_o[0::2] + np.sin(delta) * v_o[1::2]
    d_v_pll = (v_od - v_pll) / system.tau_pll
    d_phi_pll = -v_pll / system.t_pll
    d_delta = (phi_pll - v_pll) / system.tau_p_pll

    # power controller
    i_o = system.output_current(x)
    s_meas = instantaneous_power(v_o, i_o)
    d_s_avg = (s_meas - s_avg) / per_block(system.tau_s)
    d_phi_s = (system.s_ref_hat - s_avg) / per_block(system.tau_p_s)

    # current controller
    i_tilde = rot_apply(-delta, h_apply(per_block(system.t_s) * d_phi_s + phi_s))
    err = i_tilde - i_l
    d_gamma = err / per_block(system.tau_c) + per_block(d_delta) * j_apply(gamma)
    v_l = per_block(system.t_c / system.tau_c) * err + gamma

    # LC filter
    d_i_l = per_block(system.kappa_lc) * (v_l - v_o) + per_block(d_delta) * j_apply(i_l)
    d_v_o = per_block(system.kappa_c) * (i_l - i_o) - system.omega_nom * j_apply(v_o)

    parts = [d_v_pll, d_phi_pll, d_delta, d_phi_s, d_s_avg, d_gamma, d_i_l, d_v_o]

    if system.line_model == "dynamic":
        ops = system.line_operators
        xi = x[s["xi"]]
        v_bus = (
            ops["b0"].T @ system.v_g_hat
            + ops["bl"].T @ system.load_voltages(x)
            + ops["bi"].T @ v_o
        )
        parts.append(ops["gain"] * (v_bus - system.reduced.z_hat @ xi))

    return np.concatenate(parts)


class Trajectory(ObjCore):
    t: typing.Any = pydantic.Field(..., description="Sample times (s)")
    x: typing.Any = pydantic.Field(..., description="States, one row per sample")
    labels: typing.List[str]

    def to_frame(self):
        df = pd.DataFrame(self.x, columns=self.labels)
        df.insert(0, "t", self.t)
        return df

    def deviation(self, x_ref):
        """Infinity-norm distance to ``x_ref`` at every sample."""
        return np.max(np.abs(self.x - np.asarray(x_ref)[None, :]), axis=1)


def simulate(
    system: DynamicsSystem,
    x0,
    t_span,
    rel_tol=1e-8,
    abs_tol=1e-10,
    method="Radau",
    samples=201,
    logger=None,
):
    """Integrates the network dynamics with a stiff solver.

    Raises:
        NumericalError: the integrator stopped; ``t_last`` holds the last accepted time.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ModelError(f"initial state has shape {x0.shape}, expected ({system.dim},)")
    t_eval = np.linspace(t_span[0], t_span[1], samples) if samples else None
    sol = scipy.integrate.solve_ivp(
        lambda t, x: rhs(system, x, t),
        t_span,
        x0,
        method=method,
        rtol=rel_tol,
        atol=abs_tol,
        t_eval=t_eval,
    )
    if not sol.success:
        t_last = float(sol.t[-1]) if sol.t.size else float(t_span[0])
        if logger:
            logger.error(f"integration failed at t = {t_last}: {sol.message}")
        raise NumericalError(f"integration failed at t = {t_last}: {sol.message}", t_last=t_last)
    if logger:
        logger.info(f"simulated {t_span} with {method}: {sol.nfev} rhs evaluations")
    return Trajectory(t=sol.t, x=sol.y.T, labels=system.layout.labels())


class ReducedOrderModel(ObjCore):
    """Slow power-controller dynamics around an equilibrium.

    eta' = R(-delta) H [tau'_s]^-1 (s_ref - 3/2 D(Y_C^-1 eta + v) (Y_red Y_C^-1 eta + i))
    """

    y_red_hat: typing.Any
    y_cred_hat_inv: typing.Any
    v_ref: typing.Any
    i_ref: typing.Any
    s_ref: typing.Any
    delta_ref: typing.Any
    tau_p_s: typing.Any

    @property
    def input_map(self):
        """R(-delta) H [tau'_s]^-1."""
        n = len(self.delta_ref)
        return rot(-np.asarray(self.delta_ref)) @ np.kron(np.eye(n), H) @ kron_i2(1.0 / self.tau_p_s)

    @classmethod
    def from_equilibrium(cls, system: DynamicsSystem, v_ref, i_ref, delta_ref):
        y_cred = system.reduced.y_cred_hat
        if y_cred is None:
            raise ModelError("reduced network carries no filter capacitance")
        try:
            y_cred_inv = np.linalg.inv(y_cred)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Y_Cred is singular") from exc
        return cls(
            y_red_hat=system.reduced.y_red_hat,
            y_cred_hat_inv=y_cred_inv,
            v_ref=np.asarray(v_ref, dtype=float),
            i_ref=np.asarray(i_ref, dtype=float),
            s_ref=system.s_ref_hat,
            delta_ref=np.asarray(delta_ref, dtype=float),
            tau_p_s=system.tau_p_s,
        )


def reduced_order_rhs(model: ReducedOrderModel, eta):
    eta = np.asarray(eta, dtype=float)
    u = model.y_cred_hat_inv @ eta
    power = instantaneous_power(u + model.v_ref, model.y_red_hat @ u + model.i_ref)
    return model.input_map @ (model.s_ref - power)
