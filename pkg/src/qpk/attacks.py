"""Eavesdropper models acting on the beam sent to Alice, and Eve-side decoders.

All attacks here are Gaussian so that sessions stay exact at the covariance
level; non-Gaussian intrusions are covered by :mod:`qpk.fock`.

Beam 1 (Alice's) is mode 0 and Bob's private beam is mode 1.  Modes Eve adds
are appended after them.  An attack returns a *world*: a valid Gaussian state
over all modes plus an :class:`EveRecord` that says which quadratures Eve reads
and, for intercept-resend, how her outcome is fed forward into the resent beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np

from .gaussian import (
    GaussianLaw,
    GaussianState,
    QuadratureSpec,
    beamsplitter,
    canonical_phase,
    check_mode,
    displace_along,
    permute_modes,
    phase_shift,
    tensor,
    two_mode_squeezed_vacuum,
    vacuum_state,
)

BEAM = 0
BOB = 1


@dataclass(frozen=True)
class AttackModel:
    name: ClassVar[str] = "none"

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("theta") and v is not None:
                object.__setattr__(self, f.name, canonical_phase(v))

    @property
    def label(self) -> str:
        args = ",".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return f"{self.name}:{args}" if args else self.name

    def params(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class NoAttack(AttackModel):
    name: ClassVar[str] = "none"


@dataclass(frozen=True)
class CommutingPhase(AttackModel):
    """``exp(i s Z_theta*)``: shifts the conjugate quadrature by ``+2s``, leaves ``Z_theta*`` alone.

    With ``aligned=True`` the session engine sets ``theta*`` to Alice's
    effective phase for each transmission (an Eve who knows it).
    """

    name: ClassVar[str] = "commuting-phase"
    s: float = 0.5
    theta_star: float = 0.0
    aligned: bool = False


@dataclass(frozen=True)
class ConjugateDisplacement(AttackModel):
    """``exp(i s Q_theta*)``: shifts ``Z_theta*`` by ``-2s``."""

    name: ClassVar[str] = "conjugate-displacement"
    s: float = 1.0
    theta_star: float = 0.0


@dataclass(frozen=True)
class NumberPhase(AttackModel):
    """``exp(i eps n)`` on beam 1, i.e. a rotation that mimics extra encryption."""

    name: ClassVar[str] = "number-phase"
    eps: float = 0.3


@dataclass(frozen=True)
class BeamsplitterTap(AttackModel):
    name: ClassVar[str] = "tap"
    eta: float = 0.8
    theta_e: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("tap transmissivity must lie in [0, 1]")


@dataclass(frozen=True)
class InterceptResend(AttackModel):
    """Eve homodynes beam 1 at ``theta_e`` and resends a coherent state.

    ``resend="feedforward"`` displaces the resent state along ``theta_e`` by
    ``gain`` times her outcome (``gain=None`` means ``tanh 2r``, inferred from the
    beam variance); ``resend="vacuum"`` sends vacuum.
    """

    name: ClassVar[str] = "intercept-resend"
    theta_e: float = 0.0
    resend: str = "feedforward"
    gain: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.resend not in ("feedforward", "vacuum"):
            raise ValueError("resend must be 'feedforward' or 'vacuum'")


@dataclass(frozen=True)
class BlockAndReplace(AttackModel):
    """Eve blocks beam 1, sends one half of her own EPR pair and keeps the other.

    ``theta_e=None`` lets Eve hold her half until the public phase is announced
    and then pick a measurement phase that centres the message.
    """

    name: ClassVar[str] = "block-replace"
    r_e: float = 1.0
    theta_e: float | None = None


ATTACKS = {cls.name: cls for cls in (NoAttack, CommutingPhase, ConjugateDisplacement, NumberPhase,
                                     BeamsplitterTap, InterceptResend, BlockAndReplace)}
_ALIASES = {
    "None": "none", "CommutingPhase": "commuting-phase", "ConjugateDisplacement": "conjugate-displacement",
    "NumberPhase": "number-phase", "BeamsplitterTap": "tap", "beamsplitter-tap": "tap",
    "InterceptResend": "intercept-resend", "BlockAndReplace": "block-replace",
}


def parse_attack(spec: str | None) -> AttackModel:
    """Parse ``NAME:k=v,...`` (e.g. ``tap:eta=0.8,theta_e=0``)."""
    if spec is None or spec.strip() == "":
        return NoAttack()
    name, _, rest = spec.strip().partition(":")
    name = _ALIASES.get(name, name)
    if name not in ATTACKS:
        raise ValueError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}")
    cls = ATTACKS[name]
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq or key not in types:
            raise ValueError(f"bad parameter {item!r} for attack {name!r}")
        kwargs[key] = _coerce(key, value, types[key])
    return cls(**kwargs)


def _coerce(key, value, annotation):
    text = value.strip()
    ann = str(annotation)
    if "bool" in ann:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{key} expects a boolean")
    if ann == "str":
        return text
    if "None" in ann and text.lower() == "none":
        return None
    return float(text)


@dataclass
class EveRecord:
    """What Eve holds after a session.

    ``eve_readout`` lists the quadratures of the world state that Eve measures;
    ``feedforward`` is ``(gain, theta_e, mode)`` for intercept-resend.  Samples
    and the public announcements she saw are appended by the session engine.
    """

    attack_label: str = "none"
    eve_readout: list = field(default_factory=list)
    feedforward: tuple | None = None
    adaptive: bool = False
    eve_state_params: dict = field(default_factory=dict)
    eve_samples: list = field(default_factory=list)
    eve_phases: list = field(default_factory=list)
    knowledge: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.eve_readout


def apply_attack(state: GaussianState, attack: AttackModel, seed=None, target: int = BEAM,
                 alice_phase: float | None = None) -> tuple[GaussianState, EveRecord]:
    """Apply ``attack`` to ``target`` (beam 1) in transit.

    ``alice_phase`` is the effective phase Alice will measure in the
    pre-encryption frame; only aligned :class:`CommutingPhase` uses it.  ``seed``
    is accepted for API symmetry: attacks here are deterministic channels and
    Eve's outcomes are drawn jointly with Alice's and Bob's by the session engine.
    """
    check_mode(state, target)
    if target == BOB:
        raise ValueError("attacks may not address Bob's private beam")
    rec = EveRecord(attack_label=attack.label, eve_state_params=attack.params())
    if isinstance(attack, NoAttack):
        return state, rec
    if isinstance(attack, CommutingPhase):
        theta = attack.theta_star
        if attack.aligned:
            if alice_phase is None:
                raise ValueError("an aligned commuting attack needs Alice's effective phase")
            theta = alice_phase
        return displace_along(state, target, theta + math.pi / 2, 2.0 * attack.s), rec
    if isinstance(attack, ConjugateDisplacement):
        return displace_along(state, target, attack.theta_star, -2.0 * attack.s), rec
    if isinstance(attack, NumberPhase):
        return phase_shift(state, target, -attack.eps), rec
    if isinstance(attack, BeamsplitterTap):
        world = tensor(state, vacuum_state(1))
        tap = world.num_modes - 1
        world = beamsplitter(world, target, tap, attack.eta)
        rec.eve_readout = [QuadratureSpec(tap, attack.theta_e)]
        return world, rec
    if isinstance(attack, InterceptResend):
        # intercepted beam moves to Eve's lab; a fresh vacuum carrier takes its place
        world = tensor(state, vacuum_state(1))
        held = world.num_modes - 1
        order = list(range(world.num_modes))
        order[target], order[held] = held, target
        world = permute_modes(world, order)
        rec.eve_readout = [QuadratureSpec(held, attack.theta_e)]
        if attack.resend == "feedforward":
            gain = attack.gain
            if gain is None:
                c = 0.5 * float(np.trace(state.reduced([target]).cov))
                gain = math.sqrt(max(c * c - 1.0, 0.0)) / c
            rec.feedforward = (float(gain), attack.theta_e, held)
            rec.eve_state_params = {**rec.eve_state_params, "gain": float(gain)}
        return world, rec
    if isinstance(attack, BlockAndReplace):
        eve_pair = two_mode_squeezed_vacuum(attack.r_e)
        world = tensor(state, eve_pair)
        k = state.num_modes
        # Eve's sent half takes the beam slot; the original beam 1 is discarded
        order = [k if m == target else m for m in range(state.num_modes)] + [k + 1]
        world = world.reduced(order)
        held = world.num_modes - 1
        rec.eve_readout = [QuadratureSpec(held, 0.0 if attack.theta_e is None else attack.theta_e)]
        rec.adaptive = attack.theta_e is None
        return world, rec
    raise TypeError(f"unsupported attack {attack!r}")


def adaptive_eve_phase(phi_a: float, center: float) -> float:
    """Measurement phase that puts Eve's sum phase at pi/2 for the message centre."""
    return canonical_phase(math.pi / 2 - phi_a - center)


def alice_readout(world: GaussianState, record: EveRecord, phase: float, encryption: float = 0.0) -> np.ndarray:
    """Linear functional on ``world`` giving Alice's outcome when she measures beam 1 at ``phase``.

    Encryption is a rotation of beam 1 only, so on an unencrypted world the
    readout at ``phi_A + theta`` equals the readout at ``phi_A`` after encrypting
    with ``theta``.  ``encryption`` is needed only to rotate a feedforward
    displacement that Eve applied before Alice's encryption.
    """
    d = QuadratureSpec(BEAM, phase).direction(world.num_modes)
    if record.feedforward is not None:
        gain, theta_e, held = record.feedforward
        c = math.cos(phase + encryption - theta_e)
        d = d + gain * c * QuadratureSpec(held, theta_e).direction(world.num_modes)
    return d


def observation_law(world: GaussianState, record: EveRecord, alpha: float, bob_phase: float | None,
                    eve_phases: list | None = None, encryption: float = 0.0) -> GaussianLaw:
    """Joint law of ``(u, v, eve...)``; ``bob_phase=None`` leaves Bob out.

    ``alpha`` is Alice's measurement phase on ``world``; pass the encryption
    phase when ``world`` has already been encrypted.
    """
    rows = [alice_readout(world, record, alpha, encryption)]
    if bob_phase is not None:
        rows.append(QuadratureSpec(BOB, bob_phase).direction(world.num_modes))
    specs = record.eve_readout
    if eve_phases is not None:
        specs = [QuadratureSpec(s.mode, p) for s, p in zip(specs, eve_phases)]
    rows += [s.direction(world.num_modes) for s in specs]
    D = np.array(rows)
    return GaussianLaw(D @ world.mean, D @ world.cov @ D.T)


def _eve_view_grid(world, record, alphas, eve_phases):
    """Means and covariances of ``(u, eve...)`` for many effective phases at once."""
    A = alice_readout(world, record, 0.0)
    B = alice_readout(world, record, math.pi / 2)
    specs = [QuadratureSpec(s.mode, p) for s, p in zip(record.eve_readout, eve_phases)]
    E = np.array([s.direction(world.num_modes) for s in specs])
    c, s = np.cos(alphas)[:, None], np.sin(alphas)[:, None]
    du = c * A + s * B  # (G, dim)
    mu_u = du @ world.mean
    mu_e = E @ world.mean
    var_u = np.einsum("gi,ij,gj->g", du, world.cov, du)
    cov_ue = du @ world.cov @ E.T  # (G, k)
    cov_ee = E @ world.cov @ E.T
    k = E.shape[0]
    G = alphas.size
    means = np.empty((G, k + 1))
    means[:, 0] = mu_u
    means[:, 1:] = mu_e
    covs = np.empty((G, k + 1, k + 1))
    covs[:, 0, 0] = var_u
    covs[:, 0, 1:] = cov_ue
    covs[:, 1:, 0] = cov_ue
    covs[:, 1:, 1:] = cov_ee
    return means, covs


def _gaussian_loglik(samples: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Log-likelihood of ``samples`` under each of a stack of normal laws (constants dropped)."""
    n = samples.shape[0]
    xbar = samples.mean(axis=0)
    S = np.cov(samples, rowvar=False, ddof=0).reshape(samples.shape[1], samples.shape[1])
    diff = xbar[None, :] - means
    M = S[None, :, :] + diff[:, :, None] * diff[:, None, :]
    sign, logdet = np.linalg.slogdet(covs)
    inv = np.linalg.inv(covs)
    return -0.5 * n * (logdet + np.einsum("gij,gji->g", inv, M))


def eve_decode(record: EveRecord, announcements: dict, strategy: str = "correlation",
               r: float | None = None, attack: AttackModel | None = None, grid_points: int = 720) -> dict:
    """Eve's estimate of the message from her own samples and the public record.

    ``announcements`` is the public part of a transcript (as produced by
    :meth:`qpk.protocol.Transcript.public_dict`).  Strategies:

    ``"correlation"``
        Maximum likelihood over the message phase using the joint law of the
        public ``u`` and Eve's samples, which she can compute from the public
        squeezing, the announced phases and her own attack.  Bob's key never
        enters.
    ``"exhaustive-theta_b-scan"``
        Eve treats her samples as if they were Bob's private record and runs
        Bob's decoder for a grid of key guesses, keeping the guess under which
        the most symbols decode consistently.

    Returns a dict with ``values`` (per-symbol estimates, ``nan`` when
    undecided), ``mode`` and ``strategy``.  An empty record yields ``None``.
    """
    if record.empty:
        return {"values": None, "mode": None, "strategy": strategy}
    fmt = announcements["message_format"]
    r = announcements["params"]["r"] if r is None else r
    grouped = _group_by_symbol(announcements, record)
    if strategy == "correlation":
        attack = attack if attack is not None else parse_attack(record.attack_label)
        values = _decode_correlation(grouped, fmt, r, attack, grid_points)
    elif strategy in ("exhaustive-theta_b-scan", "scan"):
        values = _decode_scan(grouped, fmt, announcements["params"])
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return {"values": values, "mode": fmt["mode"], "strategy": strategy}


def _group_by_symbol(announcements, record):
    out = {}
    for entry, eve, phases in zip(announcements["symbols"], record.eve_samples, record.eve_phases):
        out.setdefault(entry["index"], []).append((entry["phi_A"], np.asarray(entry["u"]), np.asarray(eve), phases))
    return [out[k] for k in sorted(out)]


def _decode_correlation(grouped, fmt, r, attack, grid_points):
    # Eve rebuilds the pre-encryption world herself; none of it depends on Bob's key
    world, rec = apply_attack(two_mode_squeezed_vacuum(r), attack,
                              alice_phase=0.0 if getattr(attack, "aligned", False) else None)
    if fmt["mode"] == "digital":
        thetas = np.array(fmt["bit_map"], dtype=float)
    else:
        thetas = np.linspace(0.0, 2 * math.pi, grid_points, endpoint=False)
        lo, hi = fmt.get("window") or (0.0, 2 * math.pi)
        thetas = lo + np.mod(thetas - lo, 2 * math.pi)
        thetas = np.sort(thetas[thetas < hi])
    values = []
    for reps in grouped:
        ll = np.zeros(thetas.size)
        for phi_a, u, eve, phases in reps:
            samples = np.column_stack([u, eve])
            means, covs = _eve_view_grid(world, rec, phi_a + thetas, phases)
            ll += _gaussian_loglik(samples, means, covs)
        k = int(np.argmax(ll))
        if fmt["mode"] == "digital":
            values.append(float(k) if ll[0] != ll[1] else float("nan"))
        else:
            values.append(float(thetas[k]))
    return values


def _decode_scan(grouped, fmt, params, guesses: int = 64):
    from .protocol import PrivateKey, decode_symbol

    best = None
    for tb in np.linspace(0.0, 2 * math.pi, guesses, endpoint=False):
        key = PrivateKey(float(tb))
        decoded = []
        for reps in grouped:
            fake = [(phi_a, u, eve[:, 0]) for phi_a, u, eve, _ in reps]
            decoded.append(decode_symbol(fake, key, params["r"], fmt))
        accepted = sum(1 for d in decoded if not math.isnan(d["value"]))
        misfit = sum(d["misfit"] for d in decoded if not math.isnan(d["value"]))
        score = (accepted, -misfit)
        if best is None or score > best[0]:
            best = (score, [d["value"] for d in decoded])
    return best[1]


def information_score(estimates, truth) -> float:
    """Pearson correlation between Eve's estimates and the true values (undecided entries dropped)."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    ok = np.isfinite(est) & np.isfinite(tru)
    if ok.sum() < 3 or np.std(est[ok]) == 0.0 or np.std(tru[ok]) == 0.0:
        return 0.0
    return float(np.corrcoef(est[ok], tru[ok])[0, 1])
