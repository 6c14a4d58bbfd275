"""Gaussian-state engine for the EPR source and beam-1 operations.

Quadratures follow ``Z_phi = a e^{-i phi} + a^dag e^{i phi} = X cos(phi) + P sin(phi)``
with ``X = a + a^dag`` and ``P = (a - a^dag)/i``.  In these units the vacuum has
unit variance in every quadrature (``VACUUM_VARIANCE``), so two independent vacua
give ``Var(Z_1 - Z_2) = 2``.  Phase-space vectors are ordered
``(X_1, P_1, X_2, P_2, ...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

VACUUM_VARIANCE = 1.0
MAX_SQUEEZING = 10.0
TWO_PI = 2.0 * math.pi

_SYM_TOL = 1e-12
_UNCERTAINTY_TOL = 1e-9


def canonical_phase(phase: float) -> float:
    """Reduce an angle to ``[0, 2*pi)``."""
    out = math.fmod(float(phase), TWO_PI)
    if out < 0.0:
        out += TWO_PI
    # fmod of values just below 0 can round up to exactly 2*pi
    return 0.0 if out >= TWO_PI else out


def wrap_angle(phase: float) -> float:
    """Reduce an angle to ``(-pi, pi]``."""
    out = canonical_phase(phase)
    return out - TWO_PI if out > math.pi else out


def omega(num_modes: int) -> np.ndarray:
    """Symplectic form for the interleaved ``(X, P)`` ordering."""
    return np.kron(np.eye(num_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def symplectic_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Symplectic spectrum of a covariance matrix, sorted ascending."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0] // 2
    ev = np.linalg.eigvals(1j * omega(n) @ cov)
    return np.sort(np.abs(ev))[::2]


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean vector and covariance matrix of ``num_modes`` bosonic modes."""

    num_modes: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError("a Gaussian state needs at least one mode")
        dim = 2 * self.num_modes
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise ValueError(f"expected mean of length {dim} and a {dim}x{dim} covariance")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("state contains non-finite entries")
        if np.max(np.abs(cov - cov.T)) > _SYM_TOL * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance matrix is not symmetric")
        cov = 0.5 * (cov + cov.T)
        nu = symplectic_eigenvalues(cov)
        if np.min(nu) < VACUUM_VARIANCE - _UNCERTAINTY_TOL * max(1.0, np.max(nu)):
            raise ValueError(f"covariance violates the uncertainty principle (min nu = {np.min(nu):.3g})")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def mode_slice(self, mode: int) -> slice:
        check_mode(self, mode)
        return slice(2 * mode, 2 * mode + 2)

    def reduced(self, modes: Sequence[int]) -> "GaussianState":
        """Marginal state of the listed modes, in the listed order."""
        idx = np.concatenate([np.arange(2 * m, 2 * m + 2) for m in _checked_modes(self, modes)])
        return GaussianState(len(modes), self.mean[idx], self.cov[np.ix_(idx, idx)])

    def allclose(self, other: "GaussianState", atol: float = 1e-12) -> bool:
        return (
            self.num_modes == other.num_modes
            and np.allclose(self.mean, other.mean, rtol=0.0, atol=atol)
            and np.allclose(self.cov, other.cov, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True)
class QuadratureSpec:
    """Homodyne setting: which mode, and the local-oscillator phase."""

    mode: int
    phase: float

    def __post_init__(self):
        if int(self.mode) != self.mode or self.mode < 0:
            raise ValueError(f"invalid mode index {self.mode!r}")
        object.__setattr__(self, "mode", int(self.mode))
        object.__setattr__(self, "phase", canonical_phase(self.phase))

    def direction(self, num_modes: int) -> np.ndarray:
        d = np.zeros(2 * num_modes)
        d[2 * self.mode] = math.cos(self.phase)
        d[2 * self.mode + 1] = math.sin(self.phase)
        return d


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """Joint normal law of a set of homodyne outcomes."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        k = mean.shape[0]
        if cov.shape != (k, k):
            raise ValueError("mean and covariance sizes differ")
        if np.any(np.diag(cov) < 0.0):
            raise ValueError("negative variance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class BivariateGaussian(GaussianLaw):
    """Law of an (Alice, Bob) outcome pair ``(u, v)``."""

    def __post_init__(self):
        super().__post_init__()
        if self.dim != 2:
            raise ValueError("BivariateGaussian needs exactly two components")
        if np.linalg.det(self.cov) < -1e-12:
            raise ValueError("covariance is not positive semidefinite")

    @property
    def difference_variance(self) -> float:
        """``Var(u - v)``."""
        c = self.cov
        return float(c[0, 0] + c[1, 1] - 2.0 * c[0, 1])

    @property
    def difference_mean(self) -> float:
        return float(self.mean[0] - self.mean[1])


def check_mode(state: GaussianState, mode: int) -> int:
    if int(mode) != mode or not 0 <= mode < state.num_modes:
        raise IndexError(f"mode {mode!r} out of range for a {state.num_modes}-mode state")
    return int(mode)


def _checked_modes(state, modes):
    return [check_mode(state, m) for m in modes]


def _check_real(name, value):
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return float(value)


def _symplectic_update(state: GaussianState, modes: Sequence[int], S: np.ndarray) -> GaussianState:
    idx = np.concatenate([np.arange(2 * m, 2 * m + 2) for m in modes])
    full = np.eye(2 * state.num_modes)
    full[np.ix_(idx, idx)] = S
    cov = full @ state.cov @ full.T
    return GaussianState(state.num_modes, full @ state.mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# state constructors


def vacuum_state(num_modes: int) -> GaussianState:
    if int(num_modes) != num_modes or num_modes < 1:
        raise ValueError("num_modes must be a positive integer")
    n = int(num_modes)
    return GaussianState(n, np.zeros(2 * n), VACUUM_VARIANCE * np.eye(2 * n))


def two_mode_squeezed_vacuum(r: float) -> GaussianState:
    """EPR source ``exp(r a1^dag a2^dag - r a1 a2)|0,0>`` as a Gaussian state.

    Each beam alone is thermal with variance ``cosh(2r)``; the cross block is
    ``sinh(2r) diag(1, -1)`` so that ``Cov(Z_1(a), Z_2(b)) = sinh(2r) cos(a + b)``.
    """
    r = _check_real("r", r)
    if abs(r) > MAX_SQUEEZING:
        raise ValueError(f"|r| must not exceed {MAX_SQUEEZING}")
    ch, sh = math.cosh(2 * r), math.sinh(2 * r)
    cov = np.zeros((4, 4))
    cov[:2, :2] = cov[2:, 2:] = ch * np.eye(2)
    cov[:2, 2:] = cov[2:, :2] = sh * np.diag([1.0, -1.0])
    return GaussianState(2, np.zeros(4), cov)


def tensor(*states: GaussianState) -> GaussianState:
    """Product state; modes are concatenated in argument order."""
    mean = np.concatenate([s.mean for s in states])
    dim = mean.shape[0]
    cov = np.zeros((dim, dim))
    k = 0
    for s in states:
        d = 2 * s.num_modes
        cov[k:k + d, k:k + d] = s.cov
        k += d
    return GaussianState(dim // 2, mean, cov)


def permute_modes(state: GaussianState, order: Sequence[int]) -> GaussianState:
    """Relabel modes: output mode ``k`` is input mode ``order[k]``."""
    if sorted(order) != list(range(state.num_modes)):
        raise ValueError("order must be a permutation of the mode indices")
    return state.reduced(order)


def replace_mode(state: GaussianState, mode: int, new: GaussianState) -> GaussianState:
    """Discard ``mode`` and put the single-mode state ``new`` in its place."""
    check_mode(state, mode)
    if new.num_modes != 1:
        raise ValueError("replacement must be a single-mode state")
    sl = state.mode_slice(mode)
    mean = state.mean.copy()
    cov = state.cov.copy()
    mean[sl] = new.mean
    cov[sl, :] = 0.0
    cov[:, sl] = 0.0
    cov[sl, sl] = new.cov
    return GaussianState(state.num_modes, mean, cov)


# ---------------------------------------------------------------------------
# transformations


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def phase_shift(state: GaussianState, mode: int, theta: float) -> GaussianState:
    """Rotate one mode so that ``a -> e^{-i theta} a``.

    Measuring ``Z_phi`` on the output equals measuring ``Z_{phi+theta}`` on the
    input.  This is the Gaussian image of the Fock unitary ``exp(-i theta n)``.
    """
    mode = check_mode(state, mode)
    theta = _check_real("theta", theta)
    return _symplectic_update(state, [mode], rotation(theta))


def beamsplitter(state: GaussianState, mode_a: int, mode_b: int, eta: float) -> GaussianState:
    """Mix two modes with intensity transmissivity ``eta``.

    ``a -> sqrt(eta) a + sqrt(1-eta) b`` and ``b -> -sqrt(1-eta) a + sqrt(eta) b``,
    so ``eta = 0`` swaps the modes and flips the sign of the one landing in ``b``.
    """
    mode_a, mode_b = check_mode(state, mode_a), check_mode(state, mode_b)
    if mode_a == mode_b:
        raise ValueError("beamsplitter needs two distinct modes")
    eta = _check_real("eta", eta)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {eta}")
    t, rho = math.sqrt(eta), math.sqrt(1.0 - eta)
    I2 = np.eye(2)
    S = np.block([[t * I2, rho * I2], [-rho * I2, t * I2]])
    return _symplectic_update(state, [mode_a, mode_b], S)


def displace(state: GaussianState, mode: int, dx: float, dp: float) -> GaussianState:
    mode = check_mode(state, mode)
    mean = state.mean.copy()
    mean[2 * mode] += _check_real("dx", dx)
    mean[2 * mode + 1] += _check_real("dp", dp)
    return GaussianState(state.num_modes, mean, state.cov)


def displace_along(state: GaussianState, mode: int, phase: float, amount: float) -> GaussianState:
    """Shift the mean of ``Z_phase`` on ``mode`` by ``amount``; the conjugate is untouched."""
    return displace(state, mode, amount * math.cos(phase), amount * math.sin(phase))


# ---------------------------------------------------------------------------
# homodyne statistics


def measured_distribution(state: GaussianState, specs: Sequence[QuadratureSpec]) -> GaussianLaw:
    """Joint law of simultaneous homodyne measurements on distinct modes."""
    modes = [s.mode for s in specs]
    if len(set(modes)) != len(modes):
        raise ValueError("each mode can be measured only once")
    _checked_modes(state, modes)
    D = np.array([s.direction(state.num_modes) for s in specs])
    return GaussianLaw(D @ state.mean, D @ state.cov @ D.T)


def measured_pair_distribution(state: GaussianState, alice: QuadratureSpec, bob: QuadratureSpec) -> BivariateGaussian:
    law = measured_distribution(state, [alice, bob])
    return BivariateGaussian(law.mean, law.cov)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov``; pivoted Cholesky when singular."""
    k = cov.shape[0]
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
    c, piv, rank, info = lapack.dpstrf(cov, lower=1, tol=1e-13 * scale)
    if info < 0:
        raise ValueError("pivoted Cholesky failed")
    L = np.tril(c)
    L[:, rank:] = 0.0
    P = np.zeros((k, k))
    P[piv - 1, np.arange(k)] = 1.0
    out = P @ L
    if np.max(np.abs(out @ out.T - cov)) > 1e-9 * scale:
        raise ValueError("covariance is not positive semidefinite")
    return out


def sample_gaussian(law: GaussianLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from ``law`` as an ``(n, dim)`` array."""
    if int(n) != n or n < 1:
        raise ValueError("number of samples must be a positive integer")
    L = _psd_factor(law.cov)
    z = rng.standard_normal((int(n), law.dim))
    return law.mean + z @ L.T


def sample_homodyne_pairs(dist: BivariateGaussian, n: int, seed: int) -> np.ndarray:
    """Paired ``(u, v)`` homodyne records as an ``(n, 2)`` array, reproducible from ``seed``."""
    return sample_gaussian(dist, n, np.random.default_rng(seed))


def z_minus_variance(r: float, delta: float) -> float:
    """``Var(Z_A - Z_B)`` for the EPR pair when the two phases add up to ``delta``."""
    r, delta = _check_real("r", r), _check_real("delta", delta)
    return 2.0 * (math.cosh(2 * r) - math.cos(delta) * math.sinh(2 * r))


def z_minus_variance_asymptote(r: float, delta: float) -> float:
    """Large-``r`` form ``4 sinh(2r) sin^2(delta/2)``."""
    return 4.0 * math.sinh(2 * r) * math.sin(delta / 2.0) ** 2
