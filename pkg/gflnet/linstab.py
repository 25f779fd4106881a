"""Small-signal stability: linearization, reduced matrices M and N, LP test and lemma oracles."""
import time
import typing

import cvxpy as cp
import numpy as np
import pydantic
import scipy.linalg
import scipy.optimize
import yaml

from .blockmath import H, dmat, dpmat, kron_i2, rot
from .core import ModelError, NumericalError, ObjCore
from .dynamics import DynamicsSystem, rhs
from .inverter import epsilon, line_time_constants
from .netgraph import assemble_admittance, purely_resistive_reduction
from .powerflow import (
    PowerFlowProblem,
    PowerFlowSolution,
    build_equilibrium,
    existence_margin,
    reference_angles,
)

HURWITZ_THRESHOLD = 1e-9
METHODS = ("full-eig", "m-matrix", "n-metzler-lp", "static-only")
CAVEAT = "sufficient-condition, valid for eps <= eps* (eps* not computed)"


def fd_jacobian(fun, x, rel_step=1e-7, abs_step=1e-7):
    """Central-difference Jacobian with step h_k = max(abs_step, rel_step |x_k|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = max(abs_step, rel_step * abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return jac


def eigenvalues(A):
    try:
        return scipy.linalg.eigvals(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc


def spectral_abscissa(A):
    """Largest real part over the eigenvalues of A."""
    return float(np.max(eigenvalues(A).real))


def hurwitz_verdict(abscissa, threshold=HURWITZ_THRESHOLD):
    if abscissa < -threshold:
        return "stable"
    if abscissa > threshold:
        return "unstable"
    return "uncertified"


class Linearization(ObjCore):
    jac: typing.Any = pydantic.Field(..., description="Jacobian of the network dynamics")
    eigenvalues: typing.Any
    spectral_abscissa: float
    dominant_eigenvalue: typing.List[float] = pydantic.Field(..., description="(real, imag)")

    def participation(self, labels=None, top=5):
        """States with the largest participation in the dominant mode."""
        vals, left, right = scipy.linalg.eig(self.jac, left=True, right=True)
        k = int(np.argmax(vals.real))
        factors = np.abs(left[:, k].conj() * right[:, k])
        factors = factors / factors.sum()
        order = np.argsort(factors)[::-1][:top]
        names = labels if labels is not None else [str(i) for i in range(factors.size)]
        return [(names[i], float(factors[i])) for i in order]


def jacobian(system: DynamicsSystem, state, rel_step=1e-7, abs_step=1e-7, logger=None):
    """Finite-difference linearization of the network dynamics at ``state``."""
    state = np.asarray(state, dtype=float)
    drift = float(np.max(np.abs(rhs(system, state))))
    if drift > 1e-6 and logger:
        logger.warning(f"linearizing away from an equilibrium, |rhs| = {drift:.2e}")
    jac = fd_jacobian(lambda x: rhs(system, x), state, rel_step=rel_step, abs_step=abs_step)
    vals = eigenvalues(jac)
    k = int(np.argmax(vals.real))
    if logger:
        logger.debug(f"linearization of dimension {jac.shape[0]}: abscissa {vals[k].real:.4e}")
    return Linearization(
        jac=jac,
        eigenvalues=vals,
        spectral_abscissa=float(vals[k].real),
        dominant_eigenvalue=[float(vals[k].real), float(vals[k].imag)],
    )


def build_M(solution: PowerFlowSolution, reduced, delta_ref, tau_p_s):
    """M = -(D(v) Y_red + D'(i)) Y_Cred^-1 R(-delta) H [tau'_s]^-1."""
    if reduced.y_cred_hat is None:
        raise ModelError("reduced network carries no filter capacitance")
    n = reduced.n_inverters
    tau_p_s = np.broadcast_to(np.asarray(tau_p_s, dtype=float), (n,))
    right = rot(-np.asarray(delta_ref, dtype=float)) @ np.kron(np.eye(n), H) @ kron_i2(1.0 / tau_p_s)
    try:
        lu = scipy.linalg.lu_factor(reduced.y_cred_hat, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("Y_Cred is singular") from exc
    if np.any(np.diag(lu[0]) == 0.0):
        raise NumericalError("Y_Cred is singular")
    left = dmat(solution.v_o_hat) @ reduced.y_red_hat + dpmat(solution.i_o_hat)
    return -left @ scipy.linalg.lu_solve(lu, right)


def is_metzler(N, tol=1e-12):
    N = np.asarray(N, dtype=float)
    off = N - np.diag(np.diag(N))
    return bool(np.all(off >= -tol * max(1.0, float(np.max(np.abs(N))))))


def build_N(l_red_hat, solution: PowerFlowSolution, tau_p_s):
    """N = -[v_q][tau'_s]^-1 + [i_q] L_red^-1 [tau'_s]^-1 for purely active injections."""
    v = np.asarray(solution.v_o_hat, dtype=float)
    i = np.asarray(solution.i_o_hat, dtype=float)
    if np.any(np.abs(np.asarray(solution.s_ref_hat)[1::2]) > 0):
        raise ModelError("injections are not purely active")
    v_q, i_q = v[1::2], i[1::2]
    n = v_q.size
    tau_p_s = np.broadcast_to(np.asarray(tau_p_s, dtype=float), (n,))
    inv_tau = np.diag(1.0 / tau_p_s)
    N = -np.diag(v_q) @ inv_tau + np.diag(i_q) @ np.linalg.inv(l_red_hat) @ inv_tau
    if not is_metzler(N):
        raise NumericalError("N has negative off-diagonal entries")
    return N


def metzler_lp_margin(N, solver=None):
    """Optimal t of: min t  s.t.  N xi <= t 1, xi >= 0, sum(xi) = 1.

    For a Metzler N the optimum is negative exactly when N is Hurwitz.
    """
    N = np.asarray(N, dtype=float)
    if not is_metzler(N):
        raise ModelError("matrix is not Metzler")
    n = N.shape[0]
    xi = cp.Variable(n, nonneg=True)
    t = cp.Variable()
    constraints = [N @ xi <= t * np.ones(n), cp.sum(xi) == 1]
    prob = cp.Problem(cp.Minimize(t), constraints)
    prob.solve(solver=solver)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise NumericalError(f"LP solve ended with status {prob.status}")
    return float(t.value)


def metzler_hurwitz_lp(N, tol=1e-9, solver=None):
    """True iff some xi > 0 gives N xi < 0."""
    N = np.asarray(N, dtype=float)
    scale = max(1.0, float(np.max(np.abs(N))))
    return metzler_lp_margin(N, solver=solver) < -tol * scale


class StabilityCertificate(ObjCore):
    kind: str = pydantic.Field(..., description="Method that produced the verdict")
    verdict: str = pydantic.Field(..., description="stable, unstable or uncertified")
    margin: float = pydantic.Field(..., description="Abscissa or LP optimum")
    assumptions: typing.Dict[str, typing.Any] = {}
    caveat: typing.Optional[str] = None
    dominant_eigenvalue: typing.Optional[typing.List[float]] = None
    timings: typing.Dict[str, float] = {}

    def to_record(self):
        record = self.model_dump()
        return yaml.safe_dump(plain_record(record), sort_keys=False)


def plain_record(obj):
    """Nested containers of builtins only, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): plain_record(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain_record(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain_record(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def assumption_checks(system: DynamicsSystem, solution=None, model=None, constants=None):
    red = system.reduced
    pll = system.t_pll > system.tau_pll
    checks = {
        "pll_condition": bool(np.all(pll)),
        "pll_violations": np.flatnonzero(~pll).tolist(),
        "ker_bi_trivial": bool(np.linalg.matrix_rank(red.bi) == red.n_inverters),
        "z_l_definite": bool(np.min(np.linalg.eigvalsh(red.z_l + red.z_l.T)) > 0),
    }
    if solution is not None and solution.margin is not None:
        checks["existence_margin"] = float(solution.margin)
    else:
        checks["existence_margin"] = existence_margin(
            PowerFlowProblem(reduced=red, s_ref_hat=system.s_ref_hat)
        )
    checks["existence_condition"] = checks["existence_margin"] <= 3.0 / 8.0
    if constants is not None:
        tau_e = None
        if model is not None:
            tau_e, _ = line_time_constants(model.lines, model.v_g, model.s_nom, model.omega_nom)
        checks["epsilon"] = epsilon(constants, tau_e=tau_e).model_dump()
    return checks


def certify(
    system: DynamicsSystem,
    solution: PowerFlowSolution,
    method="full-eig",
    model=None,
    constants=None,
    equilibrium=None,
    repeat=1,
    logger=None,
):
    """Runs one stability test at the equilibrium of ``solution``.

    Args:
        system: Network dynamics.
        solution: Power-flow solution defining the equilibrium.
        method: One of ``full-eig``, ``m-matrix``, ``n-metzler-lp``, ``static-only``.
        model: NetworkModel, required by ``n-metzler-lp``.
        constants: Inverter time constants, used for the epsilon report.
        equilibrium: Precomputed equilibrium for ``full-eig``.
        repeat: Runs of the certificate computation; the best time is reported.
    """
    method = method.lower()
    if method not in METHODS:
        raise ModelError(f"unknown method {method!r}, expected one of {METHODS}")
    checks = assumption_checks(system, solution, model=model, constants=constants)
    pll_ok = checks["pll_condition"]
    dominant = None
    caveat = None

    if method == "n-metzler-lp":
        if model is None or not model.is_resistive:
            raise ModelError("the Metzler LP test needs a purely resistive network model")
        l_red, _ = purely_resistive_reduction(assemble_admittance(model), model)

    def compute():
        if method == "full-eig":
            eq = equilibrium
            if eq is None:
                eq = build_equilibrium(
                    solution, system.reduced, line_model=system.line_model, v_g_hat=system.v_g_hat
                )
            return jacobian(system, eq.state, logger=logger)
        if method == "m-matrix":
            M = build_M(solution, system.reduced, reference_angles(solution.v_o_hat), system.tau_p_s)
            return spectral_abscissa(M)
        if method == "n-metzler-lp":
            N = build_N(l_red, solution, system.tau_p_s)
            return metzler_lp_margin(N)
        return checks["existence_margin"]

    best = np.inf
    for _ in range(max(1, repeat)):
        start = time.perf_counter()
        result = compute()
        best = min(best, time.perf_counter() - start)

    if method == "full-eig":
        margin = result.spectral_abscissa
        dominant = result.dominant_eigenvalue
        verdict = hurwitz_verdict(margin)
    elif method == "static-only":
        margin = result
        verdict = "stable" if margin <= 3.0 / 8.0 else "uncertified"
        caveat = "existence condition only, no dynamic stability claim"
    else:
        margin = result
        caveat = CAVEAT
        verdict = hurwitz_verdict(margin)
        if not pll_ok:
            verdict = "uncertified"
            if logger:
                logger.warning("T_PLL > tau_PLL fails, reduced-order certificate withheld")

    if logger:
        logger.info(f"{method} certificate: {verdict} (margin {margin:.4e}, {best:.3e} s)")
    return StabilityCertificate(
        kind=method,
        verdict=verdict,
        margin=float(margin),
        assumptions=checks,
        caveat=caveat,
        dominant_eigenvalue=dominant,
        timings={"certificate_s": float(best)},
    )


def tensor_eigs_oracle(A, B, C, tol=1e-8):
    """Eigenvalues of A kron I + B kron C, checked against the union of eig(A + eta_k B).

    Raises:
        NumericalError: the two multisets differ.
    """
    A = np.atleast_2d(np.asarray(A))
    B = np.atleast_2d(np.asarray(B))
    C = np.atleast_2d(np.asarray(C))
    if A.shape != B.shape or A.shape[0] != A.shape[1] or C.shape[0] != C.shape[1]:
        raise ModelError(f"incompatible shapes A {A.shape}, B {B.shape}, C {C.shape}")
    m = C.shape[0]
    direct = eigenvalues(np.kron(A, np.eye(m)) + np.kron(B, C))
    union = np.concatenate([eigenvalues(A + eta * B) for eta in eigenvalues(C)])
    cost = np.abs(direct[:, None] - union[None, :])
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    mismatch = float(np.max(cost[rows, cols])) if direct.size else 0.0
    if mismatch > tol * max(1.0, float(np.max(np.abs(direct)))):
        raise NumericalError(f"eigenvalue multisets differ by {mismatch:.3e}")
    return direct


def _diag(x):
    x = np.asarray(x, dtype=float)
    return np.diag(x) if x.ndim == 1 else x


def lemma3_matrices(Gamma, Pi, Xi, Upsilon, Sigma, Theta, K, P, Z):
    """Block matrices A (3n square) and B (3n + m square) without checking any premise."""
    Gamma, Pi, Xi, Upsilon, Sigma, Theta = map(_diag, (Gamma, Pi, Xi, Upsilon, Sigma, Theta))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Gamma.shape[0]
    m = Theta.shape[0]
    zn = np.zeros((n, n))
    znm = np.zeros((n, m))
    zmn = np.zeros((m, n))
    A = np.block([[-Gamma, zn, Upsilon], [-Sigma, zn, zn], [-Xi, Xi, zn]])
    B = np.block(
        [
            [zn, -Gamma, zn, znm],
            [Xi, -Upsilon, -Xi, znm],
            [zn, Pi, Pi @ P, -Pi @ K.T],
            [zmn, zmn, Theta @ K, Theta @ Z],
        ]
    )
    return A, B


def lemma3_oracle(Gamma, Pi, Xi, Upsilon, Sigma, Theta, K, P, Z):
    """Checks the premises, then whether both constructed matrices are Hurwitz."""
    named = {"Gamma": Gamma, "Pi": Pi, "Xi": Xi, "Upsilon": Upsilon, "Sigma": Sigma, "Theta": Theta}
    for name, mat in named.items():
        mat = _diag(mat)
        if np.any(mat - np.diag(np.diag(mat))) or np.any(np.diag(mat) <= 0):
            raise ModelError(f"{name} must be diagonal with positive entries")
    if not np.all(np.diag(_diag(Gamma)) > np.diag(_diag(Sigma))):
        raise ModelError("premise Gamma > Sigma violated")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if np.linalg.matrix_rank(K) < K.shape[1]:
        raise ModelError("premise Ker(K) = {0} violated")
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if np.max(np.abs(P + P.T)) > 1e-12:
        raise ModelError("premise P skew-symmetric violated")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if np.max(np.linalg.eigvalsh(Z + Z.T)) >= 0:
        raise ModelError("premise Z + Z^T negative definite violated")
    A, B = lemma3_matrices(Gamma, Pi, Xi, Upsilon, Sigma, Theta, K, P, Z)
    return spectral_abscissa(A) < 0 and spectral_abscissa(B) < 0
