"""Truncated Fock-space oracle for the EPR source and beam-1 attacks.

Everything here is computed from state amplitudes rather than covariance
matrices, so it doubles as an independent check of :mod:`qpk.gaussian` and can
represent non-Gaussian intrusions (ancilla couplings, ``exp(i t Z^2)`` and so on).

The quadrature eigenbasis uses ``<z|_phi |n> = exp(-i n phi) psi_n(z)``, which is
the representation of ``Z_phi = a e^{-i phi} + a^dag e^{i phi}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

DEFAULT_TRUNCATION = 1e-8
MAX_CUTOFF = 256
DETECTION_FLOOR = 0.01
GRID_SPAN = 8.0  # half-width of the default grid in units of the beam-1 standard deviation
GRID_STEP = 0.05
NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FockAmplitudes:
    """Coefficients ``c_n = |c_n| exp(i phase_n)`` of ``sum_n c_n |n>_1 |n>_2`` for ``n < cutoff``.

    Kept in polar form so that diagonal phase operations never touch the
    magnitudes, and hence the photon-number distribution, even in floating point.
    """

    magnitudes: np.ndarray
    phases: np.ndarray | None = None

    def __post_init__(self):
        m = np.array(self.magnitudes, dtype=float).reshape(-1)
        ph = np.zeros_like(m) if self.phases is None else np.array(self.phases, dtype=float).reshape(-1)
        if m.size < 1:
            raise ValueError("cutoff must be at least 1")
        if ph.shape != m.shape:
            raise ValueError("magnitudes and phases differ in length")
        if np.any(m < 0):
            raise ValueError("magnitudes must be non-negative")
        if np.sum(m ** 2) > 1.0 + 1e-12:
            raise ValueError("amplitudes carry more than unit norm")
        m.setflags(write=False)
        ph.setflags(write=False)
        object.__setattr__(self, "magnitudes", m)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def from_complex(cls, coeffs) -> "FockAmplitudes":
        c = np.asarray(coeffs, dtype=complex).reshape(-1)
        return cls(np.abs(c), np.angle(c))

    @property
    def coeffs(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)

    @property
    def cutoff(self) -> int:
        return self.magnitudes.size

    @property
    def deficit(self) -> float:
        """Probability weight lost to truncation."""
        return max(0.0, 1.0 - float(np.sum(self.magnitudes ** 2)))


@dataclass(frozen=True, eq=False)
class AttackUnitary:
    """Unitary on (beam-1 Fock space) x (ancilla); index ``n * ancilla_dim + nu``."""

    matrix: np.ndarray
    ancilla_dim: int = 1
    description: str = ""
    commutes: bool | None = None  # expected verdict, used only for reporting

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = m.shape[0]
        if m.shape != (dim, dim) or dim % self.ancilla_dim:
            raise ValueError("matrix must be square with a dimension divisible by ancilla_dim")
        err = np.max(np.abs(m.conj().T @ m - np.eye(dim)))
        if err > 1e-9:
            raise ValueError(f"attack matrix is not unitary (max deviation {err:.2e})")
        object.__setattr__(self, "matrix", m)

    @property
    def cutoff(self) -> int:
        return self.matrix.shape[0] // self.ancilla_dim

    def kraus(self) -> np.ndarray:
        """Blocks ``W[nu][m, n] = <m, nu| U |n, 0>`` as a ``(d, N, N)`` array."""
        N, d = self.cutoff, self.ancilla_dim
        cols = self.matrix[:, ::d]  # input ancilla in |0>
        return cols.reshape(N, d, N).transpose(1, 0, 2)


@dataclass(frozen=True, eq=False)
class JointPdf:
    """Joint density ``P(z1, z2)`` sampled on a uniform square grid."""

    z: np.ndarray
    values: np.ndarray

    @property
    def step(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def total(self) -> float:
        return float(self.step ** 2 * np.sum(self.values))

    def marginal(self, axis: int) -> np.ndarray:
        """Density of the other variable after integrating out ``axis`` (0 -> z1)."""
        return self.step * np.sum(self.values, axis=axis)

    def moments(self) -> dict:
        """Means, variances, covariance and ``Var(z1 - z2)`` by grid quadrature."""
        h2 = self.step ** 2
        z1 = self.z[:, None]
        z2 = self.z[None, :]
        P = self.values
        m1 = h2 * np.sum(z1 * P)
        m2 = h2 * np.sum(z2 * P)
        v1 = h2 * np.sum((z1 - m1) ** 2 * P)
        v2 = h2 * np.sum((z2 - m2) ** 2 * P)
        c12 = h2 * np.sum((z1 - m1) * (z2 - m2) * P)
        return {
            "mean1": float(m1), "mean2": float(m2),
            "var1": float(v1), "var2": float(v2), "cov12": float(c12),
            "var_diff": float(v1 + v2 - 2 * c12),
        }


def l1_distance(p: JointPdf, q: JointPdf) -> float:
    """``h^2 * sum |p - q|`` on a shared grid."""
    if p.z.shape != q.z.shape or not np.array_equal(p.z, q.z):
        raise ValueError("densities live on different grids")
    return float(p.step ** 2 * np.sum(np.abs(p.values - q.values)))


# ---------------------------------------------------------------------------
# state coefficients


def auto_cutoff(r: float, tol: float = DEFAULT_TRUNCATION) -> int:
    """Smallest ``N`` with ``tanh(r)^(2N) / (1 - tanh(r)^2) <= tol``, capped at ``MAX_CUTOFF``."""
    q = math.tanh(abs(r)) ** 2
    if q == 0.0:
        return 1
    n = math.ceil(math.log(tol * (1.0 - q)) / math.log(q))
    return int(min(max(n, 1), MAX_CUTOFF))


def tmsv_coefficients(r: float, cutoff: int | None = None, tol: float | None = None) -> FockAmplitudes:
    """``c_n = tanh(r)^n / cosh(r)``.

    With ``tol`` given, raise if the requested cutoff leaves more than ``tol``
    of the norm outside the truncated space.
    """
    if not math.isfinite(r):
        raise ValueError("r must be finite")
    if cutoff is None:
        cutoff = auto_cutoff(r, tol or DEFAULT_TRUNCATION)
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    n = np.arange(cutoff)
    c = np.tanh(r) ** n / math.cosh(r)
    amps = FockAmplitudes.from_complex(c)
    if tol is not None and amps.deficit > tol:
        raise ValueError(f"cutoff {cutoff} leaves a truncation deficit {amps.deficit:.2e} > {tol:.1e}")
    return amps


def encrypt_coefficients(amps: FockAmplitudes, theta: float) -> FockAmplitudes:
    """Apply ``exp(i theta n)`` to beam 1: ``c_n -> exp(i theta n) c_n``.

    In the measurement convention used here this moves the effective Alice phase
    from ``phi`` to ``phi - theta``; :func:`qpk.gaussian.phase_shift` implements
    the opposite rotation ``exp(-i theta n)``.
    """
    n = np.arange(amps.cutoff)
    return FockAmplitudes(amps.magnitudes, amps.phases + theta * n)


def pad(amps: FockAmplitudes, cutoff: int) -> FockAmplitudes:
    """Embed the amplitudes in a larger Fock space."""
    if cutoff < amps.cutoff:
        raise ValueError("cannot pad to a smaller cutoff")
    m = np.zeros(cutoff)
    ph = np.zeros(cutoff)
    m[:amps.cutoff] = amps.magnitudes
    ph[:amps.cutoff] = amps.phases
    return FockAmplitudes(m, ph)


def reduced_density_diag(amps: FockAmplitudes) -> np.ndarray:
    """Diagonal of the beam-1 reduced density matrix, ``|c_n|^2``."""
    return amps.magnitudes ** 2


# ---------------------------------------------------------------------------
# operators and wavefunctions


def quadrature_wavefunction(n, z):
    """``<z|n>`` for the unit-vacuum-variance quadrature, ``psi_0 = (2 pi)^(-1/4) exp(-z^2/4)``.

    Scalar ``n`` gives ``psi_n(z)``; use :func:`wavefunction_table` for all
    ``n`` at once.
    """
    n = int(n)
    table = wavefunction_table(n + 1, z)
    return table[n]


def wavefunction_table(cutoff: int, z) -> np.ndarray:
    """Rows ``psi_0 .. psi_{cutoff-1}`` evaluated at ``z``, shape ``(cutoff, len(z))``.

    Uses the normalized recurrence ``z psi_n = sqrt(n+1) psi_{n+1} + sqrt(n) psi_{n-1}``.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    if cutoff > MAX_CUTOFF:
        raise ValueError(f"Fock index above {MAX_CUTOFF - 1} is outside the supported range")
    z = np.asarray(z, dtype=float)
    out = np.empty((cutoff,) + z.shape)
    out[0] = (2.0 * math.pi) ** -0.25 * np.exp(-z ** 2 / 4.0)
    if cutoff > 1:
        out[1] = z * out[0]
    for k in range(1, cutoff - 1):
        out[k + 1] = (z * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)


def number_operator(cutoff: int) -> np.ndarray:
    return np.diag(np.arange(cutoff, dtype=float)).astype(complex)


def quadrature_matrix(phi: float, cutoff: int) -> np.ndarray:
    """Truncated ``a e^{-i phi} + a^dag e^{i phi}``; the conjugate ``Q_phi`` is ``phi + pi/2``."""
    if cutoff < 2:
        raise ValueError("cutoff must be at least 2")
    a = annihilation(cutoff) * np.exp(-1j * phi)
    return a + a.conj().T


def translation_identity_residual(s: float, phi: float, cutoff: int) -> float:
    """Spectral-norm residual of ``e^{isZ} Q e^{-isZ} = Q - 2s`` on the block ``n < cutoff/4``."""
    if cutoff < 32:
        raise ValueError("cutoff must be at least 32")
    Z = quadrature_matrix(phi, cutoff)
    Q = quadrature_matrix(phi + math.pi / 2, cutoff)
    U = expm(1j * s * Z)
    R = U @ Q @ U.conj().T - (Q - 2 * s * np.eye(cutoff))
    k = cutoff // 4
    return float(np.linalg.norm(R[:k, :k], 2))


# ---------------------------------------------------------------------------
# attack families


def _exp_hermitian(H: np.ndarray, scale: float) -> np.ndarray:
    return expm(1j * scale * H)


def identity_attack(cutoff: int) -> AttackUnitary:
    return AttackUnitary(np.eye(cutoff, dtype=complex), 1, "identity", commutes=True)


def quadrature_phase_attack(s: float, theta: float, cutoff: int, t: float = 0.0) -> AttackUnitary:
    """``exp(i (s Z_theta + t Z_theta^2))``: a function of ``Z_theta`` alone."""
    Z = quadrature_matrix(theta, cutoff)
    label = f"exp(i s Z) s={s:g}" if t == 0 else f"exp(i(sZ+tZ^2)) s={s:g} t={t:g}"
    return AttackUnitary(_exp_hermitian(s * Z + t * Z @ Z, 1.0), 1, label, commutes=True)


def conjugate_shift_attack(s: float, theta: float, cutoff: int) -> AttackUnitary:
    """``exp(i s Q_theta)``: shifts ``Z_theta`` by ``-2s``."""
    Q = quadrature_matrix(theta + math.pi / 2, cutoff)
    return AttackUnitary(_exp_hermitian(Q, s), 1, f"exp(i s Q) s={s:g}", commutes=False)


def number_phase_attack(eps: float, cutoff: int) -> AttackUnitary:
    n = np.arange(cutoff)
    return AttackUnitary(np.diag(np.exp(1j * eps * n)), 1, f"exp(i eps n) eps={eps:g}", commutes=False)


def qnd_probe_attack(s: float, theta: float, cutoff: int, ancilla_dim: int) -> AttackUnitary:
    """``exp(i s Z_theta (x) P_anc)``: copies ``Z_theta`` onto an oscillator probe."""
    Z = quadrature_matrix(theta, cutoff)
    P = quadrature_matrix(math.pi / 2, ancilla_dim)
    U = _exp_hermitian(np.kron(Z, P), s)
    return AttackUnitary(U, ancilla_dim, f"QND probe s={s:g} d={ancilla_dim}", commutes=True)


def beamsplitter_attack(eta: float, cutoff: int, ancilla_dim: int) -> AttackUnitary:
    """Tap beam 1 onto a vacuum ancilla mode with transmissivity ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    angle = math.acos(math.sqrt(eta))
    a = np.kron(annihilation(cutoff), np.eye(ancilla_dim))
    b = np.kron(np.eye(cutoff), annihilation(ancilla_dim))
    G = a @ b.conj().T - a.conj().T @ b
    U = expm(angle * G)
    return AttackUnitary(U, ancilla_dim, f"beamsplitter eta={eta:g} d={ancilla_dim}", commutes=False)


# ---------------------------------------------------------------------------
# joint densities


def default_grid(r: float, step: float = GRID_STEP, span: float = GRID_SPAN, margin: float = 0.0) -> np.ndarray:
    """Symmetric grid covering ``span`` beam standard deviations plus ``margin``."""
    z_max = span * math.sqrt(math.cosh(2 * r)) + margin
    n = int(math.ceil(z_max / step))
    return step * np.arange(-n, n + 1)


def _check_grid(r, z):
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 3:
        raise ValueError("grid must be a 1-d array of sample points")
    h = np.diff(z)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    if min(-z[0], z[-1]) < 5.0 * math.sqrt(math.cosh(2 * r)) - 1e-9:
        raise ValueError("grid must cover at least five beam standard deviations")
    return z


def _to_pdf(z, values) -> JointPdf:
    pdf = JointPdf(z, values)
    if abs(pdf.total - 1.0) > NORM_TOL:
        raise ValueError(f"density integrates to {pdf.total:.9f}; grid or cutoff inadequate")
    return pdf


def _amplitude_factors(amps: FockAmplitudes, theta_a: float, theta_b: float, z: np.ndarray):
    N = amps.cutoff
    psi = wavefunction_table(N, z)
    n = np.arange(N)
    left = (np.exp(-1j * n * theta_a)[:, None] * psi).T  # (G, N): <z1| on beam 1
    right = (amps.coeffs * np.exp(-1j * n * theta_b))[:, None] * psi  # (N, G): c_n <z2|n>
    return left, right


def joint_quadrature_pdf(amps: FockAmplitudes, theta_a: float, theta_b: float, z=None, r: float | None = None) -> JointPdf:
    """Exact ``P(z1, z2)`` for Alice at effective phase ``theta_a`` and Bob at ``theta_b``.

    ``r`` only sets the default grid and its coverage check; pass the squeezing
    the amplitudes were built from.
    """
    r = _infer_r(amps) if r is None else r
    z = default_grid(r) if z is None else _check_grid(r, z)
    left, right = _amplitude_factors(amps, theta_a, theta_b, z)
    A = left @ right
    return _to_pdf(z, np.abs(A) ** 2)


def attacked_joint_pdf(amps: FockAmplitudes, attack: AttackUnitary, theta_a: float, theta_b: float,
                       z=None, r: float | None = None) -> JointPdf:
    """``P_E(z1, z2)`` after ``attack`` acts on beam 1 and a fresh ancilla ``|0>``.

    The ancilla is traced out: ``P_E = sum_nu |<z1, nu| U |Psi, 0>|^2`` projected on ``z2``.
    """
    if attack.cutoff < amps.cutoff:
        raise ValueError("attack acts on a smaller Fock space than the state")
    r = _infer_r(amps) if r is None else r
    amps = pad(amps, attack.cutoff)
    z = default_grid(r) if z is None else _check_grid(r, z)
    left, right = _amplitude_factors(amps, theta_a, theta_b, z)
    values = np.zeros((z.size, z.size))
    for W in attack.kraus():
        A = left @ (W @ right)
        values += np.abs(A) ** 2
    return _to_pdf(z, values)


def _infer_r(amps: FockAmplitudes) -> float:
    c0 = float(amps.magnitudes[0])
    return math.acosh(1.0 / c0) if c0 > 0 else 0.0


@dataclass
class TheoremReport:
    description: str
    theta_a: float
    theta_b: list
    l1: list
    max_l1: float
    argmax_theta_b: float
    tolerance: float
    floor: float
    commutes: bool | None = None
    extra: dict = field(default_factory=dict)

    @property
    def undetected(self) -> bool:
        return self.max_l1 <= self.tolerance

    @property
    def flagged(self) -> bool:
        return self.max_l1 > self.floor

    @property
    def verdict_ok(self) -> bool:
        """Whether the observed behavior matches the expected commuting/non-commuting class."""
        if self.commutes is None:
            return True
        return self.undetected if self.commutes else self.flagged


def theorem_check(attack: AttackUnitary, theta_a: float, theta_b_grid: Sequence[float], r: float,
                  cutoff: int | None = None, z=None, tolerance: float | None = None,
                  floor: float = DETECTION_FLOOR) -> TheoremReport:
    """Sweep Bob's phase and record ``L1(P_E, P)`` at each setting.

    ``tolerance`` defaults to five times the truncation deficit, floored at
    ``1e-10`` to stay above round-off in the grid sums.
    """
    cutoff = auto_cutoff(r) if cutoff is None else cutoff
    amps = tmsv_coefficients(r, cutoff)
    if tolerance is None:
        tolerance = max(5.0 * amps.deficit, 1e-10)
    z = default_grid(r) if z is None else z
    dists = []
    for tb in theta_b_grid:
        p = joint_quadrature_pdf(amps, theta_a, tb, z, r)
        pe = attacked_joint_pdf(amps, attack, theta_a, tb, z, r)
        dists.append(l1_distance(pe, p))
    k = int(np.argmax(dists))
    return TheoremReport(
        description=attack.description, theta_a=float(theta_a), theta_b=[float(t) for t in theta_b_grid],
        l1=dists, max_l1=float(dists[k]), argmax_theta_b=float(theta_b_grid[k]),
        tolerance=float(tolerance), floor=float(floor), commutes=attack.commutes,
    )


def default_theta_b_grid(points: int = 12) -> list:
    return list(np.linspace(0.0, 2 * math.pi, points, endpoint=False))


def default_battery(theta_a: float, cutoff: int, ancilla_dim: int = 8) -> list:
    """Attack families with known verdicts: function-of-Z attacks first, then the rest."""
    return [
        identity_attack(cutoff),
        quadrature_phase_attack(0.5, theta_a, cutoff),
        quadrature_phase_attack(0.3, theta_a, cutoff, t=0.05),
        qnd_probe_attack(0.1, theta_a, cutoff, ancilla_dim),
        conjugate_shift_attack(1.0, theta_a, cutoff),
        number_phase_attack(0.3, cutoff),
        beamsplitter_attack(0.9, cutoff, ancilla_dim),
    ]
