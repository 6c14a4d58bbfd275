"""Command-line experiment runner.

Every subcommand reads a JSON config (bundled defaults, optionally overridden
by ``--config`` and flags), runs deterministically from its seeds and writes
``report.json`` and ``table.csv`` into the output directory.

Exit codes: 0 on success, 2 when ``simulate`` raises a detection alarm, 1 on
errors and on failed verification runs (``verify-theorem``, ``oracle-check``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from . import attacks as atk
from . import fock
from . import protocol as pr
from .config import SUBCOMMANDS, load_config
from .gaussian import QuadratureSpec, canonical_phase, measured_pair_distribution, two_mode_squeezed_vacuum
from .report import RunResult, emit_report
from .stats import binomial_acceptance

OUT_DIR_ENV = "QPK_OUT_DIR"
DEFAULT_OUT_DIR = "qpk-out"
DEFAULT_BIT_DELTAS = (0.6, 2.2)
TEST_NAMES = ("mean_difference", "alice_variance", "difference_variance", "redundancy")


# ---------------------------------------------------------------------------
# session helpers


def session_setup(cfg: dict, key_seed: int) -> tuple[pr.PublicParams, pr.PrivateKey]:
    if not cfg["r"] > 0:
        raise ValueError("sessions need r > 0: without squeezing the message cannot be decoded")
    return pr.keygen(cfg["r"], key_seed, alice_phases=tuple(cfg["alice_phases"]),
                     shots_per_symbol=cfg["shots"], redundancy=cfg["redundancy"])


def build_message(spec: dict, params: pr.PublicParams, key: pr.PrivateKey) -> pr.MessagePlain:
    """Plaintext from a config block.

    ``positions`` are fractions of Bob's analog window and ``bit_deltas`` are the
    phase sums the two bits should produce at the first Alice phase.  Both are
    Bob-side conveniences for setting up readable experiments.
    """
    if spec["mode"] == "analog":
        if "positions" in spec:
            lo, hi = pr.analog_window(params, key)
            return pr.MessagePlain("analog", [lo + p * (hi - lo) for p in spec["positions"]], window=(lo, hi))
        return pr.MessagePlain("analog", spec["values"], window=tuple(spec["window"]))
    bits = [int(b) for b in spec["bits"]]
    if "bit_map" in spec:
        bit_map = tuple(spec["bit_map"])
    else:
        deltas = spec.get("bit_deltas", DEFAULT_BIT_DELTAS)
        phi0 = params.alice_phases[0]
        bit_map = tuple(canonical_phase(d - phi0 - key.theta_b) for d in deltas)
    return pr.MessagePlain("digital", bits, bit_map=bit_map)


def random_analog_message(params, key, symbols: int, rng: np.random.Generator) -> pr.MessagePlain:
    lo, hi = pr.analog_window(params, key)
    values = lo + rng.uniform(0.1, 0.9, symbols) * (hi - lo)
    return pr.MessagePlain("analog", list(values), window=(lo, hi))


def _sessions(cfg: dict, attack: atk.AttackModel):
    """Yield ``(j, params, key, plain, transcript)`` for the configured number of random sessions."""
    for j in range(cfg["sessions"]):
        params, key = session_setup(cfg, cfg["key_seed"] + j)
        rng = np.random.default_rng([cfg["seed"], j])
        plain = random_analog_message(params, key, cfg["symbols"], rng)
        yield j, params, key, plain, pr.run_session(params, key, plain, attack, seed=cfg["seed"] + j)


def _errors(plain: pr.MessagePlain, decoded: pr.MessagePlain) -> list:
    if plain.mode == "digital":
        return [float(a != b) for a, b in zip(plain.values, decoded.values)]
    return [abs(a - b) for a, b in zip(plain.values, decoded.values)]


# ---------------------------------------------------------------------------
# subcommands


def run_simulate(cfg: dict, save_transcript: str | None = None) -> RunResult:
    params, key = session_setup(cfg, cfg["key_seed"])
    plain = build_message(cfg["message"], params, key)
    attack = atk.parse_attack(cfg["attack"])
    transcript = pr.run_session(params, key, plain, attack, seed=cfg["seed"])
    decoded, diags = pr.decrypt(transcript, key)
    report = pr.detect_eavesdropping(transcript, params, key, cfg["alpha"])
    errors = _errors(plain, decoded)

    eve_values = [None] * len(plain.values)
    eve = None
    if transcript.eve is not None and not transcript.eve.empty:
        out = atk.eve_decode(transcript.eve, transcript.public_dict(), cfg["eve_strategy"], attack=attack)
        eve_values = out["values"]
        eve = {"strategy": out["strategy"], "values": eve_values, "errors": _errors(plain, _as_message(plain, eve_values))}

    rows = [
        {"index": i, "true_value": t, "decoded_value": d["value"], "abs_error": e, "stderr": d["stderr"],
         "integrity": d["integrity"], "misfit": d["misfit"], "eve_value": ev}
        for i, (t, d, e, ev) in enumerate(zip(plain.values, diags, errors, eve_values))
    ]
    summary = {
        "attack": attack.label,
        "message_format": plain.public_format(),
        "decrypt": {
            "mode": plain.mode,
            "max_abs_error" if plain.mode == "analog" else "bit_errors":
                max(errors) if plain.mode == "analog" else int(sum(errors)),
            "integrity": all(d["integrity"] for d in diags),
        },
        "detection": report.to_dict(),
        "eve": eve,
    }
    if save_transcript:
        with open(save_transcript, "w") as fh:
            fh.write(transcript.to_json())
    columns = ["index", "true_value", "decoded_value", "abs_error", "stderr", "integrity", "misfit", "eve_value"]
    return RunResult("simulate", cfg["seed"], cfg, summary, columns, rows, exit_code=2 if report.alarm else 0)


def _as_message(plain, values):
    if plain.mode == "digital":
        return dataclasses.replace(plain, values=tuple(values))
    return pr.MessagePlain("analog", [v if pr.in_window(v, plain.window) else math.nan for v in values],
                           window=plain.window)


def _tally(transcripts_reports, alpha):
    alarms = 0
    rejects = dict.fromkeys(TEST_NAMES, 0)
    for rep in transcripts_reports:
        alarms += rep.alarm
        for name, p in rep.p_values.items():
            rejects[name] += p < alpha / rep.num_tests
    return alarms, rejects


def run_attack_sweep(cfg: dict) -> RunResult:
    base = atk.parse_attack(cfg["attack"])
    names = {f.name for f in dataclasses.fields(base)}
    if cfg["parameter"] not in names:
        raise ValueError(f"attack {base.name!r} has no parameter {cfg['parameter']!r}; choose from {sorted(names)}")
    rows = []
    for value in cfg["values"]:
        attack = dataclasses.replace(base, **{cfg["parameter"]: value})
        reports = [pr.detect_eavesdropping(t, p, k, cfg["alpha"]) for _, p, k, _, t in _sessions(cfg, attack)]
        alarms, rejects = _tally(reports, cfg["alpha"])
        n = len(reports)
        rows.append({"attack": attack.label, "parameter": cfg["parameter"], "value": value, "sessions": n,
                     "alarms": alarms, "power": alarms / n,
                     **{f"reject_{k}": v / n for k, v in rejects.items()}})
    summary = {"attack": base.name, "parameter": cfg["parameter"], "values": cfg["values"],
               "power": [row["power"] for row in rows]}
    columns = ["attack", "parameter", "value", "sessions", "alarms", "power"] + [f"reject_{k}" for k in TEST_NAMES]
    return RunResult("attack-sweep", cfg["seed"], cfg, summary, columns, rows)


def run_calibrate(cfg: dict) -> RunResult:
    attack = atk.parse_attack(cfg["attack"])
    rows = []
    reports = []
    for j, p, k, _, t in _sessions(cfg, attack):
        rep = pr.detect_eavesdropping(t, p, k, cfg["alpha"])
        reports.append(rep)
        rows.append({"session": j, "alarm": rep.alarm, "min_p": rep.min_p, **rep.p_values})
    alarms, rejects = _tally(reports, cfg["alpha"])
    n = len(reports)
    lo, hi = binomial_acceptance(cfg["alpha"], n, cfg["confidence"])
    summary = {"attack": attack.label, "sessions": n, "alarms": alarms, "alarm_rate": alarms / n,
               "acceptance_counts": [lo, hi], "calibrated": lo <= alarms <= hi,
               "per_test_rejections": rejects}
    columns = ["session", "alarm", "min_p", *TEST_NAMES]
    return RunResult("calibrate", cfg["seed"], cfg, summary, columns, rows)


def run_verify_theorem(cfg: dict) -> RunResult:
    r = cfg["r"]
    cutoff = cfg["cutoff"] or fock.auto_cutoff(r)
    attack_cutoff = cfg["attack_cutoff"] or min(2 * cutoff, fock.MAX_CUTOFF)
    if attack_cutoff < cutoff:
        raise ValueError("attack_cutoff must be at least the state cutoff")
    grid = fock.default_theta_b_grid(cfg["theta_b_points"])
    rows = []
    for attack in fock.default_battery(cfg["theta_a"], attack_cutoff, cfg["ancilla_dim"]):
        rep = fock.theorem_check(attack, cfg["theta_a"], grid, r, cutoff=cutoff, floor=cfg["floor"])
        rows.append({"attack": rep.description, "commutes": rep.commutes, "max_l1": rep.max_l1,
                     "argmax_theta_b": rep.argmax_theta_b, "tolerance": rep.tolerance, "floor": rep.floor,
                     "undetected": rep.undetected, "flagged": rep.flagged, "verdict_ok": rep.verdict_ok})
    ok = all(row["verdict_ok"] for row in rows)
    summary = {"cutoff": cutoff, "attack_cutoff": attack_cutoff, "all_verdicts_ok": ok,
               "commuting_max_l1": max((row["max_l1"] for row in rows if row["commutes"]), default=0.0),
               "non_commuting_min_l1": min((row["max_l1"] for row in rows if not row["commutes"]), default=math.inf)}
    columns = ["attack", "commutes", "max_l1", "argmax_theta_b", "tolerance", "floor", "undetected", "flagged",
               "verdict_ok"]
    return RunResult("verify-theorem", cfg["seed"], cfg, summary, columns, rows, exit_code=0 if ok else 1)


def oracle_moments(r: float, cutoff: int, theta_a: float, theta_b: float) -> list:
    """Compare grid moments of the Fock-space density with the Gaussian closed forms."""
    pdf = fock.joint_quadrature_pdf(fock.tmsv_coefficients(r, cutoff), theta_a, theta_b, r=r)
    m = pdf.moments()
    law = measured_pair_distribution(two_mode_squeezed_vacuum(r), QuadratureSpec(0, theta_a),
                                     QuadratureSpec(1, theta_b))
    ref = {
        "mean1": law.mean[0], "mean2": law.mean[1],
        "var1": law.cov[0, 0], "var2": law.cov[1, 1], "cov12": law.cov[0, 1],
        "var_diff": law.difference_variance,
    }
    out = []
    for name, g in ref.items():
        g = float(g)
        err = abs(m[name] - g)
        out.append({"r": r, "quantity": name, "fock": m[name], "gaussian": g, "abs_error": err,
                    "rel_error": err / abs(g) if abs(g) > 1e-12 else err})
    return out


def run_oracle_check(cfg: dict) -> RunResult:
    rows = []
    for r in cfg["r_values"]:
        rows += oracle_moments(r, cfg["cutoff"], cfg["theta_a"], cfg["theta_b"])
    worst = max(row["rel_error"] for row in rows)
    ok = worst <= cfg["tolerance"]
    summary = {"max_rel_error": worst, "tolerance": cfg["tolerance"], "passed": ok}
    columns = ["r", "quantity", "fock", "gaussian", "abs_error", "rel_error"]
    return RunResult("oracle-check", cfg["seed"], cfg, summary, columns, rows, exit_code=0 if ok else 1)


RUNNERS = {
    "attack-sweep": run_attack_sweep,
    "verify-theorem": run_verify_theorem,
    "oracle-check": run_oracle_check,
    "calibrate": run_calibrate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; keys override the bundled defaults")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    common.add_argument("--shots", type=int, help="shots per symbol")
    common.add_argument("--attack", help="attack spec NAME:k=v,... (e.g. tap:eta=0.8)")
    common.add_argument("--alpha", type=float, help="detection significance level")
    common.add_argument("--format", choices=["both", "document", "table"], default="both",
                        help="which report files to write")
    common.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    parser = argparse.ArgumentParser(prog="qpk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qpk {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "simulate": "run one session, decrypt and test for eavesdropping",
        "attack-sweep": "detection power over a grid of attack parameters",
        "verify-theorem": "Fock-space check that only quadrature-function attacks go unseen",
        "oracle-check": "cross-validate Fock-space densities against Gaussian moments",
        "calibrate": "false-alarm rate over many seeded sessions",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "simulate":
            p.add_argument("--save-transcript", metavar="PATH", help="also write the full session transcript")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "shots": args.shots, "attack": args.attack, "alpha": args.alpha}
    try:
        cfg = load_config(args.subcommand, args.config, overrides)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        if args.subcommand == "simulate":
            result = run_simulate(cfg, args.save_transcript)
        else:
            result = RUNNERS[args.subcommand](cfg)
        out_dir = args.out or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
        paths = emit_report(result, out_dir, args.format)
    except (ValueError, TypeError, OSError, jsonschema.ValidationError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"qpk {args.subcommand}: error: {msg}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
