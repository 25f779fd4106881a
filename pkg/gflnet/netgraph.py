"""Network graph, nodal admittance and Kron reduction.

Buses are ordered grid first (bus 0), then the load buses 1..l, then the
inverter buses l+1..l+n. Quantities carrying a ``_hat`` suffix are
dimensionless, scaled by the grid voltage peak V_g and the nominal power
s_nom: voltages by V_g, currents by s_nom/V_g, admittances by V_g^2/s_nom.
"""
import typing

import numpy as np
import pydantic
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

from .blockmath import I2, J, kron_i2
from .core import ModelError, NumericalError, ObjCore

COND_WARN = 1e12


class Line(ObjCore):
    """Series R-L branch between two buses."""

    bus_from: int = pydantic.Field(..., ge=0, description="Sending bus index")
    bus_to: int = pydantic.Field(..., ge=0, description="Receiving bus index")
    r_ohm: float = pydantic.Field(..., ge=0, description="Series resistance (ohm)")
    l_henry: float = pydantic.Field(..., ge=0, description="Series inductance (H)")

    @pydantic.model_validator(mode="after")
    def check_impedance(self):
        if self.r_ohm == 0 and self.l_henry == 0:
            raise ModelError(
                f"line {self.bus_from}-{self.bus_to} has zero impedance (R = L = 0)"
            )
        if self.bus_from == self.bus_to:
            raise ModelError(f"line {self.bus_from}-{self.bus_to} is a self loop")
        return self


class NetworkModel(ObjCore):
    """Grid-tied network of resistive loads and inverters."""

    n_inverters: int = pydantic.Field(..., ge=1, description="Number of inverter buses")
    n_loads: int = pydantic.Field(0, ge=0, description="Number of load buses")
    lines: typing.List[Line] = pydantic.Field(..., min_length=1, description="Network lines")
    load_resistances: typing.List[float] = pydantic.Field(
        [], description="Load resistance per load bus (ohm)"
    )
    v_g: float = pydantic.Field(float(120 * np.sqrt(2)), gt=0, description="Grid voltage peak (V)")
    omega_nom: float = pydantic.Field(float(120 * np.pi), gt=0, description="Nominal frequency (rad/s)")
    s_nom: float = pydantic.Field(1000.0, gt=0, description="Nominal power (VA)")

    @pydantic.model_validator(mode="after")
    def check_topology(self):
        if len(self.load_resistances) != self.n_loads:
            raise ModelError(
                f"{self.n_loads} load buses but {len(self.load_resistances)} load resistances"
            )
        for k, r_load in enumerate(self.load_resistances):
            if not r_load > 0:
                raise ModelError(f"load bus {k + 1} has nonpositive resistance {r_load}")
        n_buses = self.n_buses
        for line in self.lines:
            if line.bus_from >= n_buses or line.bus_to >= n_buses:
                raise ModelError(
                    f"line {line.bus_from}-{line.bus_to} references a bus outside 0..{n_buses - 1}"
                )
        n_components, labels = scipy.sparse.csgraph.connected_components(
            self.adjacency(), directed=False
        )
        if n_components > 1:
            isolated = np.flatnonzero(labels != labels[0]).tolist()
            raise ModelError(f"network is disconnected, buses {isolated} unreachable from grid")
        return self

    @property
    def n_buses(self):
        return 1 + self.n_loads + self.n_inverters

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def load_buses(self):
        return list(range(1, 1 + self.n_loads))

    @property
    def inverter_buses(self):
        return list(range(1 + self.n_loads, self.n_buses))

    @property
    def is_resistive(self):
        return all(line.l_henry == 0 for line in self.lines)

    @property
    def is_inductive(self):
        return all(line.l_henry > 0 for line in self.lines)

    def adjacency(self):
        rows = [line.bus_from for line in self.lines]
        cols = [line.bus_to for line in self.lines]
        return scipy.sparse.coo_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_buses, self.n_buses)
        ).tocsr()


def incidence_matrix(model: NetworkModel):
    """Bus-by-line incidence: +1 at the sending bus, -1 at the receiving bus."""
    B = np.zeros((model.n_buses, model.n_lines))
    for e, line in enumerate(model.lines):
        B[line.bus_from, e] = 1.0
        B[line.bus_to, e] = -1.0
    return B


def radial_chain(n, r_ohm, l_henry, v_g=120 * np.sqrt(2), omega_nom=120 * np.pi, s_nom=1000.0):
    """Chain 0 - 1 - ... - n of identical lines with inverters at buses 1..n."""
    lines = [Line(bus_from=k - 1, bus_to=k, r_ohm=r_ohm, l_henry=l_henry) for k in range(1, n + 1)]
    return NetworkModel(
        n_inverters=n, n_loads=0, lines=lines, v_g=v_g, omega_nom=omega_nom, s_nom=s_nom
    )


class AdmittanceDecomposition(ObjCore):
    """Nodal admittance Y = (B kron I2) A (B kron I2)^T and its bus-class partition."""

    Y: typing.Any = pydantic.Field(..., description="Nodal admittance (S), 2N x 2N")
    B: typing.Any = pydantic.Field(..., description="Incidence matrix, N x m")
    branch: typing.Any = pydantic.Field(..., description="Block-diagonal branch admittances (S)")
    n_loads: int = pydantic.Field(..., ge=0)
    n_inverters: int = pydantic.Field(..., ge=1)

    def _slots(self, cls):
        if cls == "0":
            return slice(0, 2)
        if cls == "L":
            return slice(2, 2 + 2 * self.n_loads)
        if cls == "I":
            return slice(2 + 2 * self.n_loads, 2 + 2 * (self.n_loads + self.n_inverters))
        raise ModelError(f"unknown bus class {cls!r}")

    def _buses(self, cls):
        s = self._slots(cls)
        return slice(s.start // 2, s.stop // 2)

    def block(self, rows, cols):
        """Partition block of Y, e.g. ``block("I", "L")`` for Y_IL."""
        return self.Y[self._slots(rows), self._slots(cols)]

    @property
    def Y00(self):
        return self.block("0", "0")

    @property
    def Y0L(self):
        return self.block("0", "L")

    @property
    def Y0I(self):
        return self.block("0", "I")

    @property
    def YL0(self):
        return self.block("L", "0")

    @property
    def YLL(self):
        return self.block("L", "L")

    @property
    def YLI(self):
        return self.block("L", "I")

    @property
    def YI0(self):
        return self.block("I", "0")

    @property
    def YIL(self):
        return self.block("I", "L")

    @property
    def YII(self):
        return self.block("I", "I")

    @property
    def B0(self):
        return self.B[self._buses("0"), :]

    @property
    def BL(self):
        return self.B[self._buses("L"), :]

    @property
    def BI(self):
        return self.B[self._buses("I"), :]


def branch_admittance(r_ohm, l_henry, omega_nom):
    """(R I2 + omega L J)^-1 = (R I2 - omega L J) / (R^2 + omega^2 L^2)."""
    x = omega_nom * l_henry
    return (r_ohm * I2 - x * J) / (r_ohm ** 2 + x ** 2)


def assemble_admittance(model: NetworkModel, logger=None):
    B = incidence_matrix(model)
    branch = scipy.linalg.block_diag(
        *[branch_admittance(line.r_ohm, line.l_henry, model.omega_nom) for line in model.lines]
    )
    BB = kron_i2(B)
    Y = BB @ branch @ BB.T
    if logger:
        logger.debug(f"assembled admittance for {model.n_buses} buses, {model.n_lines} lines")
    return AdmittanceDecomposition(
        Y=Y, B=B, branch=branch, n_loads=model.n_loads, n_inverters=model.n_inverters
    )


def _factor(mat, what, block_name="block", logger=None):
    """LU factorization that names the first zero pivot block."""
    lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = max(np.max(np.abs(mat)), np.finfo(float).tiny)
    bad = np.flatnonzero(pivots <= 1e-14 * scale)
    if bad.size:
        k = int(bad[0]) // 2
        if logger:
            logger.error(f"{what} is singular at {block_name} {k}")
        raise NumericalError(f"{what} is singular at {block_name} {k}")
    cond = np.linalg.cond(mat)
    if cond > COND_WARN and logger:
        logger.warning(f"{what} is ill-conditioned (cond = {cond:.3e})")
    return lu, piv


class ReducedNetwork(ObjCore):
    """Kron-reduced network seen from the inverter buses plus line data."""

    v_g: float
    s_nom: float
    omega_nom: float
    n_inverters: int
    n_lines: int
    inverter_buses: typing.List[int]
    y_red: typing.Any = pydantic.Field(..., description="Reduced admittance (S), 2n x 2n")
    y_g: typing.Any = pydantic.Field(..., description="Grid coupling admittance (S), 2n x 2")
    w: typing.Any = pydantic.Field(..., description="No-load inverter voltages (V)")
    y_red_hat: typing.Any
    y_red_hat_inv: typing.Any
    y_g_hat: typing.Any
    w_hat: typing.Any
    y_cred: typing.Any = pydantic.Field(None, description="Y_red plus filter capacitance (S)")
    y_cred_hat: typing.Any = None
    tau_pp_lc: typing.Any = pydantic.Field(None, description="C_f omega V_g^2 / s_nom per inverter")
    z_hat: typing.Any = pydantic.Field(..., description="Block diagonal line impedances")
    z_l: typing.Any = pydantic.Field(..., description="Line impedances plus load coupling")
    line_gain: typing.Any = pydantic.Field(
        ..., description="V_g^2 / (s_nom L) per line, inf for resistive lines"
    )
    r_load_hat: typing.Any
    b0: typing.Any
    bl: typing.Any
    bi: typing.Any
    x_scale: typing.Any = pydantic.Field(None, description="V_g^2 tau_LC / (s_nom L_f) per inverter")

    @property
    def v_g_hat(self):
        return np.array([0.0, 1.0])

    def solve_red(self, rhs):
        """Y_red_hat^-1 rhs."""
        return self.y_red_hat_inv @ rhs


def kron_reduce(
    adm: AdmittanceDecomposition,
    model: NetworkModel,
    c_f=None,
    l_f=None,
    tau_lc=None,
    logger=None,
):
    """Eliminates the resistive load buses.

    Args:
        adm: Admittance of ``model``.
        model: Network description.
        c_f: Filter capacitance (F), scalar or per inverter; enables Y_Cred.
        l_f: Filter inductance (H), scalar or per inverter; with ``tau_lc``
            enables the per-inverter X scale.
        tau_lc: LC time constant per inverter.
        logger: Optional logger.
    """
    n = model.n_inverters
    v_g, s_nom, omega = model.v_g, model.s_nom, model.omega_nom
    scale = v_g ** 2 / s_nom
    v_gdq = np.array([0.0, v_g])

    if model.n_loads:
        m_ll = adm.YLL + kron_i2(1.0 / np.asarray(model.load_resistances))
        lu_piv = _factor(m_ll, "Y_LL + [R_L]^-1", block_name="load block", logger=logger)
        y_red = adm.YII - adm.YIL @ scipy.linalg.lu_solve(lu_piv, adm.YLI)
        y_g = adm.YI0 - adm.YIL @ scipy.linalg.lu_solve(lu_piv, adm.YL0)
    else:
        y_red = adm.YII.copy()
        y_g = adm.YI0.copy()

    lu_red = _factor(y_red, "Y_red", block_name="inverter block", logger=logger)
    y_red_inv = scipy.linalg.lu_solve(lu_red, np.eye(2 * n))
    w = -y_red_inv @ (y_g @ v_gdq)

    y_red_hat = scale * y_red
    y_g_hat = scale * y_g
    w_hat = w / v_g

    y_cred = y_cred_hat = tau_pp = None
    if c_f is not None:
        c_f = np.broadcast_to(np.asarray(c_f, dtype=float), (n,))
        y_cred = y_red + omega * np.kron(np.diag(c_f), J)
        tau_pp = c_f * omega * scale
        y_cred_hat = y_red_hat + np.kron(np.diag(tau_pp), J)

    x_scale = None
    if l_f is not None and tau_lc is not None:
        l_f = np.broadcast_to(np.asarray(l_f, dtype=float), (n,))
        x_scale = scale * np.asarray(tau_lc, dtype=float) / l_f

    r = np.array([line.r_ohm for line in model.lines])
    ell = np.array([line.l_henry for line in model.lines])
    z_hat = scipy.linalg.block_diag(
        *[(ri * I2 + omega * li * J) / scale for ri, li in zip(r, ell)]
    )
    r_load_hat = np.asarray(model.load_resistances, dtype=float) / scale
    bl = adm.BL
    z_l = z_hat + kron_i2(bl.T @ np.diag(r_load_hat) @ bl) if model.n_loads else z_hat.copy()
    line_gain = np.full(model.n_lines, np.inf)
    inductive = ell > 0
    line_gain[inductive] = scale / ell[inductive]

    if logger:
        logger.info(f"Kron reduction done: {model.n_loads} load buses eliminated, {n} inverters kept")

    return ReducedNetwork(
        v_g=v_g,
        s_nom=s_nom,
        omega_nom=omega,
        n_inverters=n,
        n_lines=model.n_lines,
        inverter_buses=model.inverter_buses,
        y_red=y_red,
        y_g=y_g,
        w=w,
        y_red_hat=y_red_hat,
        y_red_hat_inv=y_red_inv / scale,
        y_g_hat=y_g_hat,
        w_hat=w_hat,
        y_cred=y_cred,
        y_cred_hat=y_cred_hat,
        tau_pp_lc=tau_pp,
        z_hat=z_hat,
        z_l=z_l,
        line_gain=line_gain,
        r_load_hat=r_load_hat,
        b0=adm.B0,
        bl=bl,
        bi=adm.BI,
        x_scale=x_scale,
    )


def purely_resistive_reduction(adm: AdmittanceDecomposition, model: NetworkModel):
    """Scalar grounded-Laplacian reduction of a purely resistive network.

    Returns:
        (L_red_hat, u_hat) where the no-load voltages are u_hat kron (0, 1).
    """
    if not model.is_resistive:
        raise ModelError("network not purely resistive")
    scale = model.v_g ** 2 / model.s_nom
    B = adm.B
    conductance = np.array([1.0 / line.r_ohm for line in model.lines])
    lap = scale * B @ np.diag(conductance) @ B.T
    grid = [0]
    loads = model.load_buses
    invs = model.inverter_buses
    l_ii = lap[np.ix_(invs, invs)]
    l_i0 = lap[np.ix_(invs, grid)][:, 0]
    if loads:
        r_load_hat = np.asarray(model.load_resistances) / scale
        m_ll = lap[np.ix_(loads, loads)] + np.diag(1.0 / r_load_hat)
        l_il = lap[np.ix_(invs, loads)]
        l_red = l_ii - l_il @ np.linalg.solve(m_ll, lap[np.ix_(loads, invs)])
        l_0g = l_i0 - l_il @ np.linalg.solve(m_ll, lap[np.ix_(loads, grid)][:, 0])
    else:
        l_red = l_ii
        l_0g = l_i0
    u_hat = -np.linalg.solve(l_red, l_0g)
    return l_red, u_hat


def expand_load_voltages(adm: AdmittanceDecomposition, model: NetworkModel, v_inv, v_g=None):
    """Load-bus voltages (V) implied by the resistive loads for given inverter voltages."""
    if model.n_loads == 0:
        return np.zeros(0)
    if v_g is None:
        v_g = np.array([0.0, model.v_g])
    m_ll = adm.YLL + kron_i2(1.0 / np.asarray(model.load_resistances))
    return -np.linalg.solve(m_ll, adm.YL0 @ v_g + adm.YLI @ np.asarray(v_inv, dtype=float))
