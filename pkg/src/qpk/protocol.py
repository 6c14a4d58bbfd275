"""End-to-end sessions: key generation, encryption, public announcements, decryption, detection.

Bob keeps beam 2 and a private homodyne phase ``theta_b``.  Alice encrypts a
message phase ``theta`` on beam 1, measures it at a publicly announced
``phi_A`` and publishes her outcomes ``u``.  Bob pairs them with his own
outcomes ``v``; only the combination ``delta = phi_A + theta + theta_b`` enters
``Var(u - v) = 2 [cosh 2r - cos(delta) sinh 2r]``, so without ``theta_b`` the
message cannot be read off.

Since the variance fixes only ``cos(delta)``, analog messages carry a declared
window: the decoder keeps whichever of the two mirror candidates falls inside it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as st

from . import attacks as atk
from .gaussian import (
    MAX_SQUEEZING,
    TWO_PI,
    canonical_phase,
    phase_shift,
    sample_gaussian,
    two_mode_squeezed_vacuum,
    wrap_angle,
    z_minus_variance,
)
from .stats import TestResult, chi2_from_z, combine_pvalues, mean_test, variance_test

DEFAULT_SHOTS = 10_000
DEFAULT_REDUNDANCY = 2
DEFAULT_ALPHA = 0.01
WINDOW_MARGIN = 0.2
MIN_PAIRS = 100
INTEGRITY_SIGMAS = 4.0
NUM_TESTS = 4


class IntegrityError(RuntimeError):
    """Redundant repetitions of a symbol decoded to incompatible values."""


@dataclass(frozen=True)
class PublicParams:
    r: float
    alice_phases: tuple = (0.0,)
    shots_per_symbol: int = DEFAULT_SHOTS
    redundancy: int = DEFAULT_REDUNDANCY

    def __post_init__(self):
        if not math.isfinite(self.r) or abs(self.r) > MAX_SQUEEZING:
            raise ValueError("squeezing parameter outside the supported range")
        phases = tuple(canonical_phase(p) for p in self.alice_phases)
        if not phases:
            raise ValueError("at least one Alice phase is required")
        for i in range(len(phases)):
            for j in range(i):
                d = abs(wrap_angle(phases[i] - phases[j]))
                if d < 1e-9 or abs(d - math.pi) < 1e-9:
                    raise ValueError("Alice phases must be distinct and non-opposite")
        if int(self.shots_per_symbol) != self.shots_per_symbol or self.shots_per_symbol < MIN_PAIRS:
            raise ValueError(f"shots_per_symbol must be an integer >= {MIN_PAIRS}")
        if int(self.redundancy) != self.redundancy or self.redundancy < 1:
            raise ValueError("redundancy must be a positive integer")
        object.__setattr__(self, "alice_phases", phases)
        object.__setattr__(self, "shots_per_symbol", int(self.shots_per_symbol))
        object.__setattr__(self, "redundancy", int(self.redundancy))

    def to_dict(self) -> dict:
        return {"r": self.r, "alice_phases": list(self.alice_phases),
                "shots_per_symbol": self.shots_per_symbol, "redundancy": self.redundancy}

    @classmethod
    def from_dict(cls, d: dict) -> "PublicParams":
        return cls(d["r"], tuple(d["alice_phases"]), d["shots_per_symbol"], d["redundancy"])


@dataclass(frozen=True)
class PrivateKey:
    theta_b: float

    def __post_init__(self):
        object.__setattr__(self, "theta_b", canonical_phase(self.theta_b))

    def __repr__(self):
        return "PrivateKey(theta_b=<hidden>)"


@dataclass(frozen=True)
class MessagePlain:
    """Plaintext: analog phases inside ``window`` or bits mapped through ``bit_map``.

    ``nan`` analog values mark symbols a decoder could not recover.
    """

    mode: str
    values: tuple
    window: tuple | None = None
    bit_map: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.mode == "analog":
            if self.window is None:
                raise ValueError("analog messages need a declared window")
            lo, hi = (float(x) for x in self.window)
            if not 0.0 < hi - lo < TWO_PI:
                raise ValueError("window must have positive width below 2 pi")
            object.__setattr__(self, "window", (lo, hi))
            for v in self.values:
                if not math.isnan(v) and not in_window(v, (lo, hi)):
                    raise ValueError(f"value {v} lies outside the window {self.window}")
        elif self.mode == "digital":
            if self.bit_map is None or len(self.bit_map) != 2:
                raise ValueError("digital messages need a two-entry bit map")
            t0, t1 = (float(x) for x in self.bit_map)
            d = abs(wrap_angle(t1 - t0))
            if d < 1e-9 or abs(d - math.pi) < 1e-9:
                raise ValueError("bit phases must be distinct and non-opposite")
            object.__setattr__(self, "bit_map", (t0, t1))
            if any(b not in (0, 1) for b in self.values if not (isinstance(b, float) and math.isnan(b))):
                raise ValueError("digital values must be bits")
        else:
            raise ValueError("mode must be 'analog' or 'digital'")

    def public_format(self) -> dict:
        if self.mode == "analog":
            return {"mode": "analog", "window": list(self.window)}
        return {"mode": "digital", "bit_map": list(self.bit_map)}


def in_window(theta: float, window) -> bool:
    lo, hi = window
    return lo < lo + (theta - lo) % TWO_PI < hi


def to_window(theta: float, window) -> float:
    """Representative of ``theta`` in ``[lo, lo + 2 pi)``."""
    lo = window[0]
    return lo + (theta - lo) % TWO_PI


def fold(delta: float) -> float:
    """Map a phase sum onto ``[0, pi]``, the range the variance can resolve."""
    return abs(wrap_angle(delta))


# ---------------------------------------------------------------------------
# keys and messages


def keygen(r: float, theta_b_seed: int, **overrides) -> tuple[PublicParams, PrivateKey]:
    """Public parameters with protocol defaults and a uniformly drawn private phase."""
    params = PublicParams(r, **overrides)
    theta_b = np.random.default_rng(theta_b_seed).uniform(0.0, TWO_PI)
    return params, PrivateKey(float(theta_b))


def analog_window(params: PublicParams, key: PrivateKey, margin: float = WINDOW_MARGIN) -> tuple[float, float]:
    """Largest message window whose phase sums stay in ``(margin, pi - margin)`` for every Alice phase.

    Bob-side helper.  The window is a function of ``theta_b``, so announcing it
    hands out the key up to the window offset.
    """
    width = math.pi - 2.0 * margin
    phi0 = params.alice_phases[0]
    lo0 = canonical_phase(margin - key.theta_b - phi0)
    deltas = [wrap_angle(p - phi0) for p in params.alice_phases]
    lo = lo0 - min(deltas)
    hi = lo0 + width - max(deltas)
    if hi <= lo:
        raise ValueError("Alice phases are too far apart to share an analog window")
    shift = canonical_phase(lo) - lo
    return lo + shift, hi + shift


def encode_message(plain: MessagePlain, params: PublicParams) -> list:
    """Phase symbols in transmission order, each repeated ``redundancy`` times."""
    if not plain.values:
        raise ValueError("empty message")
    if plain.mode == "digital":
        thetas = [plain.bit_map[int(b)] for b in plain.values]
    else:
        thetas = [float(v) for v in plain.values]
    return [t for t in thetas for _ in range(params.redundancy)]


# ---------------------------------------------------------------------------
# sessions


@dataclass
class Transmission:
    index: int
    repetition: int
    phi_a: float
    u: np.ndarray
    v: np.ndarray


@dataclass
class Transcript:
    """Per-transmission records with separable public and private parts."""

    params: PublicParams
    message_format: dict
    records: list
    seed: int
    attack_label: str = "none"
    eve: atk.EveRecord | None = field(default=None, repr=False)

    def public_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "message_format": self.message_format,
            "symbols": [
                {"index": t.index, "repetition": t.repetition, "phi_A": t.phi_a, "u": t.u.tolist()}
                for t in self.records
            ],
        }

    def to_dict(self) -> dict:
        out = self.public_dict()
        out["private"] = {"v": [t.v.tolist() for t in self.records]}
        out["meta"] = {"seed": self.seed}
        out["ground_truth"] = {"attack": self.attack_label}
        return out

    def to_json(self, public_only: bool = False) -> str:
        return json.dumps(self.public_dict() if public_only else self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        v = d.get("private", {}).get("v")
        records = [
            Transmission(s["index"], s["repetition"], s["phi_A"], np.asarray(s["u"], dtype=float),
                         np.asarray(v[i], dtype=float) if v is not None else np.empty(0))
            for i, s in enumerate(d["symbols"])
        ]
        return cls(PublicParams.from_dict(d["params"]), d["message_format"], records,
                   d.get("meta", {}).get("seed", 0), d.get("ground_truth", {}).get("attack", "none"))

    def grouped(self) -> list:
        """``[(phi_A, u, v), ...]`` per symbol, in symbol order."""
        out = {}
        for t in self.records:
            out.setdefault(t.index, []).append((t.phi_a, t.u, t.v))
        return [out[k] for k in sorted(out)]


def _message_center(fmt: dict) -> float:
    if fmt["mode"] == "digital":
        t0, t1 = fmt["bit_map"]
        return t0 + 0.5 * wrap_angle(t1 - t0)
    lo, hi = fmt["window"]
    return 0.5 * (lo + hi)


def transmission_rng(seed: int, index: int, repetition: int) -> np.random.Generator:
    """Independent stream per transmission, so results do not depend on evaluation order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index), int(repetition))))


def run_session(params: PublicParams, key: PrivateKey, plain: MessagePlain,
                attack: atk.AttackModel | None = None, seed: int = 0) -> Transcript:
    """Simulate one session: source, Eve in transit, Alice's encryption and both homodynes."""
    attack = attack if attack is not None else atk.NoAttack()
    fmt = plain.public_format()
    thetas = encode_message(plain, params)
    source = two_mode_squeezed_vacuum(params.r)
    records = []
    eve = None
    R = params.redundancy
    for j, theta in enumerate(thetas):
        i, k = divmod(j, R)
        rng = transmission_rng(seed, i, k)
        phi_a = params.alice_phases[int(rng.integers(len(params.alice_phases)))]
        world, rec = atk.apply_attack(source, attack, alice_phase=phi_a + theta)
        world = phase_shift(world, atk.BEAM, theta)
        eve_phases = [s.phase for s in rec.eve_readout]
        if rec.adaptive:
            eve_phases = [atk.adaptive_eve_phase(phi_a, _message_center(fmt)) for _ in eve_phases]
        law = atk.observation_law(world, rec, phi_a, key.theta_b, eve_phases, encryption=theta)
        draws = sample_gaussian(law, params.shots_per_symbol, rng)
        records.append(Transmission(i, k, phi_a, draws[:, 0].copy(), draws[:, 1].copy()))
        if eve is None:
            eve = rec
        if not rec.empty:
            eve.eve_samples.append(draws[:, 2:].copy())
            eve.eve_phases.append(eve_phases)
    transcript = Transcript(params, fmt, records, int(seed), attack.label, eve)
    if eve is not None:
        eve.knowledge = {"public": "transcript.public_dict()"}
    return transcript


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float
    stderr: float
    boundary: bool
    variance: float
    n: int


def estimate_delta(u, v, r: float) -> DeltaEstimate:
    """Invert ``Var(u - v) = 2[cosh 2r - cos(delta) sinh 2r]`` for ``delta`` in ``[0, pi]``.

    The error bar propagates ``Var(V) ~ 2 V^2 / (N - 1)``; a clamped cosine is
    flagged as a boundary estimate with an infinite error bar.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.size < MIN_PAIRS:
        raise ValueError(f"need at least {MIN_PAIRS} paired samples")
    if not r > 0:
        raise ValueError("the variance cannot be inverted without squeezing (r <= 0)")
    V = float(np.var(u - v, ddof=1))
    return delta_from_variance(V, r, u.size)


def delta_from_variance(V: float, r: float, n: int) -> DeltaEstimate:
    ch, sh = math.cosh(2 * r), math.sinh(2 * r)
    x = (ch - V / 2.0) / sh
    boundary = not -1.0 < x < 1.0
    delta = math.acos(min(1.0, max(-1.0, x)))
    s = math.sin(delta)
    se = math.sqrt(2.0 * V * V / (n - 1)) / (2.0 * sh * s) if s > 0 and not boundary else math.inf
    return DeltaEstimate(delta, se, boundary, V, int(n))


def estimate_delta_from_covariance(u, v, r: float) -> DeltaEstimate:
    """Alternative estimator from ``Cov(u, v) = sinh(2r) cos(delta)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.size < MIN_PAIRS or not r > 0:
        raise ValueError("need paired samples and r > 0")
    c = float(np.cov(u, v)[0, 1])
    sh = math.sinh(2 * r)
    x = c / sh
    boundary = not -1.0 < x < 1.0
    delta = math.acos(min(1.0, max(-1.0, x)))
    # Var of a sample covariance of a normal pair: (s_uu s_vv + s_uv^2) / (N - 1)
    ch = math.cosh(2 * r)
    var_c = (ch * ch + c * c) / (u.size - 1)
    s = math.sin(delta)
    se = math.sqrt(var_c) / (sh * s) if s > 0 and not boundary else math.inf
    return DeltaEstimate(delta, se, boundary, float(np.var(u - v, ddof=1)), int(u.size))


def _rep_estimates(reps, r):
    return [(phi_a, estimate_delta(u, v, r)) for phi_a, u, v in reps]


def decode_symbol(reps, key: PrivateKey, r: float, fmt: dict) -> dict:
    """Decode one symbol from its repetitions ``[(phi_A, u, v), ...]``."""
    ests = _rep_estimates(reps, r)
    if fmt["mode"] == "analog":
        return _decode_analog(ests, key, fmt)
    return _decode_digital(ests, key, r, fmt)


def _decode_analog(ests, key, fmt):
    window = tuple(fmt["window"])
    per_rep = []
    for phi_a, e in ests:
        cands = [to_window(sign * e.delta - phi_a - key.theta_b, window) for sign in (1.0, -1.0)]
        inside = [c for c in cands if c < window[1]]
        if e.delta == 0.0 or e.delta == math.pi:
            inside = inside[:1]  # the two candidates coincide
        value = inside[0] if len(inside) == 1 else math.nan
        per_rep.append({"phi_A": phi_a, "delta": e.delta, "stderr": e.stderr, "boundary": e.boundary,
                        "variance": e.variance, "theta": value})
    ok = [p for p in per_rep if not math.isnan(p["theta"]) and math.isfinite(p["stderr"])]
    if not ok:
        return {"value": math.nan, "stderr": math.inf, "misfit": math.inf, "integrity": False,
                "rejected": len(per_rep), "reps": per_rep}
    w = np.array([1.0 / p["stderr"] ** 2 for p in ok])
    th = np.array([p["theta"] for p in ok])
    mean = float(np.sum(w * th) / np.sum(w))
    se = float(1.0 / math.sqrt(np.sum(w)))
    misfit = float(np.sum(w * (th - mean) ** 2))
    integrity = len(ok) == len(per_rep)
    for a in range(len(ok)):
        for b in range(a):
            lim = INTEGRITY_SIGMAS * math.hypot(ok[a]["stderr"], ok[b]["stderr"])
            if abs(ok[a]["theta"] - ok[b]["theta"]) > lim:
                integrity = False
    return {"value": mean, "stderr": se, "misfit": misfit, "integrity": integrity,
            "rejected": len(per_rep) - len(ok), "reps": per_rep}


def _decode_digital(ests, key, r, fmt):
    bit_map = fmt["bit_map"]
    per_rep = []
    scores = np.zeros(2)
    for phi_a, e in ests:
        predicted = [fold(t + phi_a + key.theta_b) for t in bit_map]
        dist = [(e.delta - p) ** 2 for p in predicted]
        scores += dist
        per_rep.append({"phi_A": phi_a, "delta": e.delta, "stderr": e.stderr, "boundary": e.boundary,
                        "variance": e.variance, "predicted": predicted, "bit": int(np.argmin(dist))})
    if scores[0] == scores[1]:
        bit, misfit = math.nan, math.inf
    else:
        bit = int(np.argmin(scores))
        misfit = float(scores[bit])
    integrity = len({p["bit"] for p in per_rep}) == 1
    return {"value": bit, "stderr": math.nan, "misfit": misfit, "integrity": integrity,
            "rejected": 0, "reps": per_rep}


def decrypt(transcript: Transcript, key: PrivateKey, params: PublicParams | None = None,
            strict: bool = False) -> tuple[MessagePlain, list]:
    """Bob's decoding of every symbol, with per-symbol diagnostics.

    With ``strict=True`` an :class:`IntegrityError` is raised when redundant
    repetitions disagree; otherwise the disagreement is reported in the
    diagnostics and picked up by :func:`detect_eavesdropping`.
    """
    params = transcript.params if params is None else params
    fmt = transcript.message_format
    diags = [decode_symbol(reps, key, params.r, fmt) for reps in transcript.grouped()]
    if strict and not all(d["integrity"] for d in diags):
        bad = [i for i, d in enumerate(diags) if not d["integrity"]]
        raise IntegrityError(f"repetitions disagree for symbols {bad}")
    values = [d["value"] for d in diags]
    if fmt["mode"] == "analog":
        msg = MessagePlain("analog", values, window=tuple(fmt["window"]))
    else:
        msg = MessagePlain("digital", [v if isinstance(v, float) else int(v) for v in values],
                           bit_map=tuple(fmt["bit_map"]))
    return msg, diags


# ---------------------------------------------------------------------------
# detection


@dataclass
class DetectionReport:
    tests: dict
    alpha: float
    alarm: bool
    num_tests: int = NUM_TESTS
    notes: list = field(default_factory=list)

    @property
    def p_values(self) -> dict:
        return {k: t.p_value for k, t in self.tests.items()}

    @property
    def min_p(self) -> float:
        return min(self.p_values.values())

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "alarm": self.alarm, "num_tests": self.num_tests,
                "tests": {k: asdict(t) for k, t in self.tests.items()}, "notes": list(self.notes)}


def _two_sided_chi2_p(stat, dof):
    return float(min(1.0, 2.0 * min(st.chi2.cdf(stat, dof), st.chi2.sf(stat, dof))))


def detect_eavesdropping(transcript: Transcript, params: PublicParams | None, key: PrivateKey,
                         alpha: float = DEFAULT_ALPHA) -> DetectionReport:
    """Four tests on the paired records, Bonferroni-combined into one alarm.

    ``mean_difference``: ``E[u - v] = 0`` per transmission.
    ``alice_variance``: ``Var(u) = cosh 2r``.
    ``difference_variance``: ``Var(u - v)`` against the closed form at each symbol's decoded value.
    ``redundancy``: repetitions of a symbol decode to the same value.
    Per-transmission p-values are merged with Fisher's method.
    """
    params = transcript.params if params is None else params
    r = params.r
    ch = math.cosh(2 * r)
    fmt = transcript.message_format
    _, diags = decrypt(transcript, key, params)
    p_mean, p_var, p_model, z_redundancy = [], [], [], []
    dof_redundancy = 0
    notes = []
    disagreements, expected_disagreements = 0, 0.0
    for reps, diag in zip(transcript.grouped(), diags):
        for phi_a, u, v in reps:
            p_mean.append(mean_test(u - v, 0.0).p_value)
            p_var.append(variance_test(u, ch).p_value)
        value = diag["value"]
        if isinstance(value, float) and math.isnan(value):
            notes.append("undecodable symbol")
            p_model.append(0.0)
            continue
        theta = value if fmt["mode"] == "analog" else fmt["bit_map"][int(value)]
        fitted = fmt["mode"] == "analog"
        if fitted and len(reps) == 1:
            pass  # a single repetition fits the model exactly
        else:
            for (phi_a, u, v), rep in zip(reps, diag["reps"]):
                V0 = z_minus_variance(r, theta + phi_a + key.theta_b)
                n = u.size
                p_model.append(_two_sided_chi2_p((n - 1) * rep["variance"] / V0, n - 1))
        if fmt["mode"] == "analog":
            if diag["rejected"]:
                notes.append("repetition outside the message window")
                z_redundancy.append(math.inf)
                continue
            ok = [p for p in diag["reps"] if math.isfinite(p["stderr"])]
            for p in ok:
                z_redundancy.append((p["theta"] - value) / p["stderr"])
            dof_redundancy += max(len(ok) - 1, 0)
        else:
            disagreements += 0 if diag["integrity"] else 1
            expected_disagreements += _digital_disagreement_rate(reps, diag, key, r, fmt)
    tests = {
        "mean_difference": combine_pvalues(p_mean, "E[u - v] = 0"),
        "alice_variance": combine_pvalues(p_var, "Var(u) = cosh 2r"),
        "difference_variance": combine_pvalues(p_model, "Var(u - v) matches the decoded symbols"),
    }
    if fmt["mode"] == "analog":
        if any(math.isinf(z) for z in z_redundancy):
            tests["redundancy"] = TestResult(math.inf, 0.0, max(2, len(z_redundancy)), "repetitions agree")
        else:
            tests["redundancy"] = chi2_from_z(z_redundancy, dof_redundancy, "repetitions agree")
    else:
        p = 1.0 if disagreements == 0 else float(st.poisson.sf(disagreements - 1, max(expected_disagreements, 1e-300)))
        tests["redundancy"] = TestResult(float(disagreements), p, max(2, len(diags)), "repetitions agree")
    alarm = any(t.p_value < alpha / NUM_TESTS for t in tests.values())
    return DetectionReport(tests, float(alpha), bool(alarm), NUM_TESTS, notes)


def _digital_disagreement_rate(reps, diag, key, r, fmt) -> float:
    """Chance, under the no-attack model, that the repetitions of one symbol decode differently."""
    theta = fmt["bit_map"][int(diag["value"])]
    p_wrong = []
    for (phi_a, u, _), rep in zip(reps, diag["reps"]):
        d_true, d_other = (fold(t + phi_a + key.theta_b) for t in (theta, fmt["bit_map"][1 - int(diag["value"])]))
        V = z_minus_variance(r, d_true)
        s = math.sin(d_true)
        se = math.sqrt(2.0 * V * V / (u.size - 1)) / (2.0 * math.sinh(2 * r) * max(s, 1e-12))
        p_wrong.append(float(st.norm.sf(abs(d_true - d_other) / 2.0 / se)))
    agree = np.prod([1 - p for p in p_wrong]) + np.prod(p_wrong)
    return float(1.0 - agree)
