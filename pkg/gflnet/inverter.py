"""Inverter control parameters, time constants and the singular perturbation parameter."""
import typing

import numpy as np
import pydantic

from .core import ModelError, ObjCore


class RawInverterGains(ObjCore):
    """Controller gains and filter values in SI units.

    Args:
        omega_c_pll: PLL low-pass cutoff (rad/s).
        kp_pll, ki_pll: PLL PI gains.
        omega_s: Power measurement filter cutoff (rad/s).
        kp_s, ki_s: Power controller PI gains.
        kp_c, ki_c: Current controller PI gains.
        l_f: Filter inductance (H).
        c_f: Filter capacitance (F).
    """

    omega_c_pll: float = pydantic.Field(..., gt=0)
    kp_pll: float = pydantic.Field(..., gt=0)
    ki_pll: float = pydantic.Field(..., gt=0)
    omega_s: float = pydantic.Field(..., gt=0)
    kp_s: float = pydantic.Field(..., gt=0)
    ki_s: float = pydantic.Field(..., gt=0)
    kp_c: float = pydantic.Field(..., gt=0)
    ki_c: float = pydantic.Field(..., gt=0)
    l_f: float = pydantic.Field(..., gt=0, description="Filter inductance (H)")
    c_f: float = pydantic.Field(..., gt=0, description="Filter capacitance (F)")


class TimeConstants(ObjCore):
    """Dimensionless time constants of one inverter."""

    tau_pll: float = pydantic.Field(..., gt=0, description="PLL low-pass filter")
    tau_p_pll: float = pydantic.Field(..., gt=0, description="PLL proportional gain")
    t_pll: float = pydantic.Field(..., gt=0, description="PLL PI ratio")
    tau_s: float = pydantic.Field(..., gt=0, description="Power filter")
    tau_p_s: float = pydantic.Field(..., gt=0, description="Power integral gain")
    t_s: float = pydantic.Field(..., gt=0, description="Power PI ratio")
    tau_c: float = pydantic.Field(..., gt=0, description="Current integral gain")
    t_c: float = pydantic.Field(..., gt=0, description="Current PI ratio")
    tau_lc: float = pydantic.Field(..., gt=0, description="LC filter inductive")
    tau_p_lc: float = pydantic.Field(..., gt=0, description="LC filter capacitive")
    tau_pp_lc: float = pydantic.Field(..., gt=0, description="C_f omega V_g^2 / s_nom")
    l_f: typing.Optional[float] = pydantic.Field(None, gt=0, description="Filter inductance (H)")
    c_f: typing.Optional[float] = pydantic.Field(None, gt=0, description="Filter capacitance (F)")
    tau_e: typing.List[float] = pydantic.Field([], description="Line time constants")
    tau_p_e: typing.List[float] = pydantic.Field([], description="Line admittance scales")

    def filter_values(self, v_g, s_nom, omega_nom):
        """Returns (L_f, C_f), recovered from tau_LC and tau''_LC when not stored."""
        if self.l_f is not None and self.c_f is not None:
            return self.l_f, self.c_f
        c_f = self.tau_pp_lc * s_nom / (omega_nom * v_g ** 2)
        arg = 1.0 - (self.tau_lc * omega_nom) ** 2
        if arg <= 0:
            raise ModelError(
                f"tau_LC = {self.tau_lc} is incompatible with omega_nom = {omega_nom}"
            )
        l_f = self.tau_lc / (omega_nom * c_f * np.sqrt(arg))
        return l_f, c_f

    def remark_bounds(self, omega_nom, logger=None):
        """Checks tau_LC, tau'_LC <= omega^-1/2 and tau_e <= omega^-1."""
        bounds = {
            "tau_lc": self.tau_lc <= omega_nom ** -0.5,
            "tau_p_lc": self.tau_p_lc <= omega_nom ** -0.5,
            "tau_e": all(t <= 1.0 / omega_nom for t in self.tau_e),
        }
        if logger:
            for name, ok in bounds.items():
                if not ok:
                    logger.warning(f"time constant bound violated for {name}")
        return bounds


class EpsilonReport(ObjCore):
    eps_i: float = pydantic.Field(..., ge=0, description="Inverter contribution")
    eps_e: float = pydantic.Field(..., ge=0, description="Filter and line contribution")
    eps: float = pydantic.Field(..., ge=0)
    dominant: str = pydantic.Field(..., description="Constant attaining eps")


def lc_time_constants(l_f, c_f, v_g, s_nom, omega_nom):
    """(tau_LC, tau'_LC, tau''_LC) of an LC filter."""
    w = omega_nom
    tau_lc = l_f / np.sqrt(1.0 / (w * c_f) ** 2 + (w * l_f) ** 2)
    tau_p_lc = c_f / np.sqrt((w * c_f) ** 2 + 1.0 / (w * l_f) ** 2)
    tau_pp_lc = c_f * w * v_g ** 2 / s_nom
    return float(tau_lc), float(tau_p_lc), float(tau_pp_lc)


def line_time_constants(lines, v_g, s_nom, omega_nom):
    """(tau_e, tau'_e) per line."""
    tau_e, tau_p_e = [], []
    for line in lines:
        mag = np.hypot(line.r_ohm, omega_nom * line.l_henry)
        tau_e.append(float(line.l_henry / mag))
        tau_p_e.append(float(s_nom * mag / v_g ** 2))
    return tau_e, tau_p_e


def derive_time_constants(raw: RawInverterGains, v_g, s_nom, omega_nom, lines=None):
    if not (v_g > 0 and s_nom > 0 and omega_nom > 0):
        raise ModelError("grid voltage, nominal power and frequency must be positive")
    tau_lc, tau_p_lc, tau_pp_lc = lc_time_constants(raw.l_f, raw.c_f, v_g, s_nom, omega_nom)
    tau_e, tau_p_e = line_time_constants(lines or [], v_g, s_nom, omega_nom)
    return TimeConstants(
        tau_pll=1.0 / raw.omega_c_pll,
        tau_p_pll=1.0 / (v_g * raw.kp_pll),
        t_pll=raw.kp_pll / raw.ki_pll,
        tau_s=1.0 / raw.omega_s,
        tau_p_s=1.0 / (v_g * raw.ki_s),
        t_s=raw.kp_s / raw.ki_s,
        tau_c=v_g ** 2 / (raw.ki_c * s_nom),
        t_c=raw.kp_c / raw.ki_c,
        tau_lc=tau_lc,
        tau_p_lc=tau_p_lc,
        tau_pp_lc=tau_pp_lc,
        l_f=raw.l_f,
        c_f=raw.c_f,
        tau_e=tau_e,
        tau_p_e=tau_p_e,
    )


def eps_family_constants(eps_i, v_g, s_nom, omega_nom, l_f, c_f, tau_p_s=None, lines=None):
    """Time constants generated from a single knob eps_i.

    Note that T_s = 10 eps_i, so the resulting eps is not eps_i itself.
    """
    if not eps_i > 0:
        raise ModelError(f"eps_i must be positive, got {eps_i}")
    tau_lc, tau_p_lc, tau_pp_lc = lc_time_constants(l_f, c_f, v_g, s_nom, omega_nom)
    tau_e, tau_p_e = line_time_constants(lines or [], v_g, s_nom, omega_nom)
    return TimeConstants(
        tau_pll=eps_i ** 2,
        tau_p_pll=eps_i ** 2 / v_g,
        t_pll=eps_i,
        tau_s=eps_i,
        tau_p_s=0.1 * v_g if tau_p_s is None else tau_p_s,
        t_s=10 * eps_i,
        tau_c=v_g / s_nom * eps_i ** 2,
        t_c=eps_i ** 2,
        tau_lc=tau_lc,
        tau_p_lc=tau_p_lc,
        tau_pp_lc=tau_pp_lc,
        l_f=l_f,
        c_f=c_f,
        tau_e=tau_e,
        tau_p_e=tau_p_e,
    )


def as_constant_list(constants):
    if isinstance(constants, TimeConstants):
        return [constants]
    constants = list(constants)
    if not constants:
        raise ModelError("no inverter time constants given")
    return constants


def stack_constants(constants, n=None):
    """Dict of per-inverter arrays, broadcasting a single group to ``n`` inverters."""
    constants = as_constant_list(constants)
    if n is not None and len(constants) == 1:
        constants = constants * n
    if n is not None and len(constants) != n:
        raise ModelError(f"{len(constants)} constant groups for {n} inverters")
    fields = [
        "tau_pll", "tau_p_pll", "t_pll", "tau_s", "tau_p_s", "t_s",
        "tau_c", "t_c", "tau_lc", "tau_p_lc", "tau_pp_lc",
    ]
    return {name: np.array([getattr(c, name) for c in constants]) for name in fields}


def epsilon(constants, tau_e=None):
    """Singular perturbation parameter of a set of inverters and lines.

    Args:
        constants: TimeConstants or a list of them, one per inverter.
        tau_e: Line time constants; defaults to those carried by ``constants``.
    """
    constants = as_constant_list(constants)
    if tau_e is None:
        tau_e = [t for c in constants for t in c.tau_e]
    stacked = stack_constants(constants)

    def inf(name):
        return float(np.max(stacked[name]))

    inverter_terms = {
        "tau_pll": inf("tau_pll"),
        "tau_p_pll": inf("tau_p_pll"),
        "tau_s": inf("tau_s"),
        "t_s": inf("t_s"),
        "t_pll": inf("t_pll"),
        "tau_c": inf("tau_c") ** 0.5,
        "t_c": inf("t_c") ** 0.5,
    }
    external_terms = {
        "tau_lc": inf("tau_lc") ** 0.5,
        "tau_p_lc": inf("tau_p_lc") ** 0.5,
    }
    if len(tau_e):
        external_terms["tau_e"] = float(np.max(tau_e)) ** 0.5

    eps_i = max(inverter_terms.values())
    eps_e = max(external_terms.values())
    terms = {**inverter_terms, **external_terms}
    dominant = max(terms, key=terms.get)
    return EpsilonReport(eps_i=eps_i, eps_e=eps_e, eps=max(eps_i, eps_e), dominant=dominant)


def check_pll_condition(constants):
    """True per inverter when T_PLL > tau_PLL strictly."""
    stacked = stack_constants(constants)
    return stacked["t_pll"] > stacked["tau_pll"]
