"""2x2 real-block algebra.

A complex scalar x + iy is stored as the real block x*I2 + y*J and a vector of
n complex values as a real vector of length 2n, block k occupying slots
(2k, 2k+1). The operators R, D and D' are not complex-linear, so all
complex arithmetic goes through these blocks.
"""
import numpy as np
import scipy.linalg

from .core import ModelError

BLOCK_TOL = 1e-12

I2 = np.eye(2)
I2.setflags(write=False)

J = np.array([[0.0, -1.0], [1.0, 0.0]])
J.setflags(write=False)

H = np.array([[0.0, 1.0], [1.0, 0.0]])
H.setflags(write=False)


def encode(z):
    """Block of a complex scalar."""
    z = complex(z)
    return np.array([[z.real, -z.imag], [z.imag, z.real]])


def encode_vector(z):
    z = np.asarray(z, dtype=complex).ravel()
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def decode_vector(v):
    v = as_block_vector(v)
    return v[0::2] + 1j * v[1::2]


def encode_matrix(Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    return np.kron(Z.real, I2) + np.kron(Z.imag, J)


def decode_matrix(A):
    A = check_complex_form(A)
    return A[0::2, 0::2] + 1j * A[1::2, 0::2]


def as_block_vector(v, name="vector"):
    v = np.asarray(v, dtype=float).ravel()
    if v.size % 2:
        raise ModelError(f"{name} has odd length {v.size}")
    return v


def as_block_matrix(A, name="matrix"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] % 2 or A.shape[1] % 2:
        raise ModelError(f"{name} has shape {A.shape}, expected even row and column counts")
    return A


def is_complex_form(A, tol=BLOCK_TOL):
    """True when every 2x2 block of A reads [[a, -b], [b, a]].

    ``tol`` is absolute for matrices with entries of order one and relative
    to the largest entry otherwise.
    """
    A = as_block_matrix(A)
    if A.size:
        tol = tol * max(1.0, float(np.max(np.abs(A))))
    diag_ok = np.abs(A[0::2, 0::2] - A[1::2, 1::2]) <= tol
    skew_ok = np.abs(A[0::2, 1::2] + A[1::2, 0::2]) <= tol
    return bool(np.all(diag_ok) and np.all(skew_ok))


def check_complex_form(A, tol=BLOCK_TOL, name="matrix"):
    A = as_block_matrix(A, name=name)
    if not is_complex_form(A, tol=tol):
        raise ModelError(f"{name} has blocks that do not encode complex numbers")
    return A


def rot(theta):
    """Rotation R(theta) = [[cos, sin], [-sin, cos]].

    A scalar angle gives a 2x2 block, an array of angles the block-diagonal
    matrix diag(R(theta_k)).
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ModelError("rotation angle is not finite")
    if theta.ndim == 0:
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, s], [-s, c]])
    return scipy.linalg.block_diag(*[rot(t) for t in theta.ravel()])


def rot_apply(theta, v):
    """Blockwise R(theta_k) v_k without forming the block-diagonal matrix."""
    theta = np.asarray(theta, dtype=float).ravel()
    v = as_block_vector(v)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty_like(v)
    out[0::2] = c * v[0::2] + s * v[1::2]
    out[1::2] = -s * v[0::2] + c * v[1::2]
    return out


def j_apply(v):
    """Blockwise J v_k = (-v_Q, v_D)."""
    v = as_block_vector(v)
    out = np.empty_like(v)
    out[0::2] = -v[1::2]
    out[1::2] = v[0::2]
    return out


def h_apply(v):
    """Blockwise H v_k, swapping the two components."""
    v = as_block_vector(v)
    out = np.empty_like(v)
    out[0::2] = v[1::2]
    out[1::2] = v[0::2]
    return out


def _dmat_single(u):
    return np.array([[u[0], u[1]], [u[1], -u[0]]])


def _dpmat_single(u):
    return np.array([[u[0], u[1]], [-u[1], u[0]]])


def dmat(u):
    """D(u) = [[u1, u2], [u2, -u1]], block diagonal for a block vector."""
    u = as_block_vector(u)
    if u.size == 2:
        return _dmat_single(u)
    return scipy.linalg.block_diag(*[_dmat_single(u[k:k + 2]) for k in range(0, u.size, 2)])


def dpmat(u):
    """D'(u) = [[u1, u2], [-u2, u1]], block diagonal for a block vector."""
    u = as_block_vector(u)
    if u.size == 2:
        return _dpmat_single(u)
    return scipy.linalg.block_diag(*[_dpmat_single(u[k:k + 2]) for k in range(0, u.size, 2)])


def dmat_apply(u, v):
    """Blockwise D(u_k) v_k."""
    u = as_block_vector(u)
    v = as_block_vector(v)
    out = np.empty_like(v)
    out[0::2] = u[0::2] * v[0::2] + u[1::2] * v[1::2]
    out[1::2] = u[1::2] * v[0::2] - u[0::2] * v[1::2]
    return out


def dmat_inv(u):
    """D(u)^-1 = D(u) / |u|^2 blockwise."""
    u = as_block_vector(u)
    mod2 = u[0::2] ** 2 + u[1::2] ** 2
    if np.any(mod2 == 0.0):
        k = int(np.flatnonzero(mod2 == 0.0)[0])
        raise ModelError(f"D(u) is singular: block {k} is zero")
    return dmat(u / np.repeat(mod2, 2))


def dmat_inv_apply(u, v):
    u = as_block_vector(u)
    mod2 = u[0::2] ** 2 + u[1::2] ** 2
    if np.any(mod2 == 0.0):
        k = int(np.flatnonzero(mod2 == 0.0)[0])
        raise ModelError(f"D(u) is singular: block {k} is zero")
    return dmat_apply(u / np.repeat(mod2, 2), v)


def kron_i2(A):
    """A kron I2; a 1-d input is treated as a diagonal."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    return np.kron(A, I2)


def block_moduli(v):
    v = as_block_vector(v)
    return np.hypot(v[0::2], v[1::2])


def cnorm_inf(v):
    """Largest block modulus of a block vector."""
    v = as_block_vector(v)
    if v.size == 0:
        raise ModelError("norm of an empty vector is undefined")
    return float(np.max(block_moduli(v)))


def cnorm_inf_mat(A, tol=BLOCK_TOL):
    """Induced complex infinity norm: largest block-row sum of block moduli."""
    A = check_complex_form(A, tol=tol)
    moduli = np.hypot(A[0::2, 0::2], A[1::2, 0::2])
    return float(np.max(np.sum(moduli, axis=1)))
