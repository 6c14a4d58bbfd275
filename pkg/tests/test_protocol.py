import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpk import attacks as atk
from qpk import protocol as pr
from qpk.gaussian import canonical_phase, wrap_angle, z_minus_variance


def make_session(r=1.0, theta_b=0.2, values=(1.0,), shots=10_000, redundancy=2, phases=(0.0,), attack=None, seed=0,
                 window=None):
    params = pr.PublicParams(r, phases, shots, redundancy)
    key = pr.PrivateKey(theta_b)
    window = window or pr.analog_window(params, key)
    plain = pr.MessagePlain("analog", list(values), window=window)
    return params, key, plain, pr.run_session(params, key, plain, attack, seed=seed)


# ---------------------------------------------------------------------------
# keys and parameters


def test_keygen_reproducible_and_in_range():
    a = pr.keygen(1.0, 42)[1].theta_b
    assert a == pr.keygen(1.0, 42)[1].theta_b
    keys = np.sort([pr.keygen(1.0, s)[1].theta_b for s in range(100)])
    assert np.all((keys >= 0) & (keys < 2 * math.pi))
    assert np.min(np.diff(keys)) > 1e-6


def test_keygen_defaults():
    params, _ = pr.keygen(0.5, 0)
    assert params.shots_per_symbol == 10_000 and params.redundancy == 2 and params.alice_phases == (0.0,)


@pytest.mark.parametrize("kwargs", [
    dict(r=11.0),
    dict(alice_phases=()),
    dict(alice_phases=(0.0, math.pi)),
    dict(alice_phases=(0.3, 0.3 + 2 * math.pi)),
    dict(shots_per_symbol=99),
    dict(redundancy=0),
])
def test_public_params_invariants(kwargs):
    base = dict(r=1.0, alice_phases=(0.0,), shots_per_symbol=1000, redundancy=1)
    with pytest.raises(ValueError):
        pr.PublicParams(**{**base, **kwargs})


def test_private_key_hidden_in_repr():
    assert "0.123" not in repr(pr.PrivateKey(0.123))


def test_message_validation():
    with pytest.raises(ValueError):
        pr.MessagePlain("analog", [1.0])
    with pytest.raises(ValueError):
        pr.MessagePlain("analog", [3.0], window=(0.5, 2.0))
    with pytest.raises(ValueError):
        pr.MessagePlain("digital", [0, 1], bit_map=(0.3, 0.3 + math.pi))
    with pytest.raises(ValueError):
        pr.MessagePlain("digital", [0, 2], bit_map=(0.3, 1.3))
    with pytest.raises(ValueError):
        pr.MessagePlain("ternary", [0])
    # windows may straddle 2 pi
    assert pr.MessagePlain("analog", [0.1, 6.2], window=(6.0, 6.0 + 1.0)).values == (0.1, 6.2)


def test_encode_message():
    params = pr.PublicParams(1.0, (0.0,), 100, 2)
    plain = pr.MessagePlain("digital", [0, 1], bit_map=(0.7, 2.1))
    assert pr.encode_message(plain, params) == [0.7, 0.7, 2.1, 2.1]
    one = pr.PublicParams(1.0, (0.0,), 100, 1)
    analog = pr.MessagePlain("analog", [0.5, 1.0, 1.5], window=(0.0, 2.0))
    assert pr.encode_message(analog, one) == [0.5, 1.0, 1.5]
    three = pr.PublicParams(1.0, (0.0,), 100, 3)
    assert len(pr.encode_message(analog, three)) == 9
    with pytest.raises(ValueError):
        pr.encode_message(pr.MessagePlain("analog", [], window=(0.0, 1.0)), one)


@settings(max_examples=60)
@given(st.floats(0, 2 * math.pi), st.lists(st.floats(0, 1.2), min_size=1, max_size=3, unique=True))
def test_analog_window_keeps_sums_in_range(theta_b, phases):
    try:
        params = pr.PublicParams(1.0, tuple(phases), 100, 1)
    except ValueError:
        return
    key = pr.PrivateKey(theta_b)
    try:
        lo, hi = pr.analog_window(params, key)
    except ValueError:
        return
    for t in np.linspace(lo, hi, 9)[1:-1]:
        for phi in params.alice_phases:
            d = canonical_phase(t + phi + theta_b)
            assert 0.2 - 1e-9 <= d <= math.pi - 0.2 + 1e-9


def test_analog_window_rejects_spread_phases():
    params = pr.PublicParams(1.0, (0.0, 3.0), 100, 1)
    with pytest.raises(ValueError):
        pr.analog_window(params, pr.PrivateKey(0.0))


# ---------------------------------------------------------------------------
# sessions and transcripts


def test_zero_sum_gives_squeezed_variance():
    r = 1.0
    # theta + phi + theta_b = 2 pi: the difference is as quiet as the source allows
    params, key, plain, tr = make_session(r, theta_b=0.5, values=[2 * math.pi - 0.5], window=(5.0, 6.0),
                                          shots=100_000, redundancy=1)
    d = tr.records[0].u - tr.records[0].v
    assert np.var(d, ddof=1) == pytest.approx(2 * math.exp(-2 * r), rel=0.02)


def test_no_squeezing_hides_the_message():
    for theta in (0.3, 1.5, 2.8):
        *_, tr = make_session(0.0, theta_b=0.0, values=[theta], window=(0.1, 3.0), shots=100_000, redundancy=1)
        d = tr.records[0].u - tr.records[0].v
        assert np.var(d, ddof=1) == pytest.approx(2.0, rel=0.02)


def test_intercept_resend_vacuum_uncorrelated_in_session():
    n = 100_000
    *_, tr = make_session(values=[1.0], shots=n, attack=atk.InterceptResend(resend="vacuum"))
    for rec in tr.records:
        assert abs(np.cov(rec.u, rec.v)[0, 1]) <= 5 / math.sqrt(n)


def test_record_layout():
    params, _, _, tr = make_session(values=[1.0, 1.5], redundancy=3, phases=(0.0, 0.4))
    assert [(t.index, t.repetition) for t in tr.records] == [(i, k) for i in range(2) for k in range(3)]
    assert all(t.u.size == params.shots_per_symbol for t in tr.records)
    assert {t.phi_a for t in tr.records} <= set(params.alice_phases)


def test_public_transcript_excludes_secrets():
    params, key, plain, tr = make_session(theta_b=0.123456789, values=[1.02345678, 1.3456789])
    public = tr.public_dict()
    assert set(public) == {"params", "message_format", "symbols"}
    assert all(set(s) == {"index", "repetition", "phi_A", "u"} for s in public["symbols"])
    text = tr.to_json(public_only=True)
    for secret in [key.theta_b, *plain.values]:
        assert repr(secret) not in text
        assert f"{secret:.6f}"[:-1] not in text
    full = json.loads(tr.to_json())
    assert "theta_b" not in json.dumps(full)
    assert set(full) == {"params", "message_format", "symbols", "private", "meta", "ground_truth"}


def test_transcript_round_trip():
    *_, tr = make_session(values=[1.0], shots=200)
    again = pr.Transcript.from_dict(json.loads(tr.to_json()))
    assert again.to_json() == tr.to_json()


def test_session_deterministic_and_order_independent():
    a = make_session(values=[1.0, 1.4], seed=5)[3]
    b = make_session(values=[1.0, 1.4], seed=5)[3]
    assert a.to_json() == b.to_json()
    # the first symbol's draws do not depend on what follows it
    c = make_session(values=[1.0, 1.4, 1.8], seed=5)[3]
    np.testing.assert_array_equal(a.records[0].u, c.records[0].u)
    np.testing.assert_array_equal(a.records[3].v, c.records[3].v)


# ---------------------------------------------------------------------------
# estimation and decryption


def test_exact_inversion():
    r = 1.0
    V = 2 * math.cosh(2 * r) - 2 * math.sinh(2 * r) * math.cos(1.2)
    assert pr.delta_from_variance(V, r, 10_000).delta == pytest.approx(1.2, abs=1e-12)


def test_clamped_estimate_flagged():
    est = pr.delta_from_variance(0.1, 1.0, 1000)
    assert est.delta == 0.0 and est.boundary and math.isinf(est.stderr)


def test_estimator_preconditions():
    x = np.zeros(100)
    with pytest.raises(ValueError):
        pr.estimate_delta(x, x, 0.0)
    with pytest.raises(ValueError):
        pr.estimate_delta(x[:50], x[:50], 1.0)


def test_estimator_coverage():
    r, delta, n = 1.0, 0.8, 100_000
    from qpk.gaussian import BivariateGaussian, sample_homodyne_pairs
    ch, sh = math.cosh(2 * r), math.sinh(2 * r)
    law = BivariateGaussian([0, 0], [[ch, sh * math.cos(delta)], [sh * math.cos(delta), ch]])
    hits = 0
    for seed in range(100):
        x = sample_homodyne_pairs(law, n, seed)
        est = pr.estimate_delta(x[:, 0], x[:, 1], r)
        hits += abs(est.delta - delta) <= 3 * est.stderr
        if seed < 10:
            cov_est = pr.estimate_delta_from_covariance(x[:, 0], x[:, 1], r)
            assert abs(cov_est.delta - delta) <= 5 * cov_est.stderr
    assert hits >= 99


def test_analog_round_trip():
    *_, tr = make_session(values=[1.0], shots=100_000, redundancy=2, seed=1)
    msg, diags = pr.decrypt(tr, pr.PrivateKey(0.2))
    assert abs(msg.values[0] - 1.0) <= 0.02
    assert diags[0]["integrity"] and diags[0]["rejected"] == 0


def test_round_trip_within_predicted_error():
    hits = 0
    for seed in range(100):
        params, key = pr.keygen(1.0, seed)
        lo, hi = pr.analog_window(params, key)
        theta = lo + np.random.default_rng(seed).uniform(0.2, 1.8)
        plain = pr.MessagePlain("analog", [theta], window=(lo, hi))
        msg, diags = pr.decrypt(pr.run_session(params, key, plain, seed=seed), key)
        hits += abs(msg.values[0] - theta) <= 3 * diags[0]["stderr"]
    assert hits >= 99


def test_digital_round_trip_with_random_quadrature():
    params = pr.PublicParams(1.0, (0.0, 0.5), 10_000, 3)
    key = pr.PrivateKey(4.0)
    bits = list(np.random.default_rng(0).integers(0, 2, 64))
    plain = pr.MessagePlain("digital", bits, bit_map=(canonical_phase(0.4 - 4.0), canonical_phase(2.0 - 4.0)))
    msg, _ = pr.decrypt(pr.run_session(params, key, plain, seed=3), key)
    assert list(msg.values) == bits


def test_wrong_key_shifts_analog_estimate():
    *_, tr = make_session(values=[1.4], shots=100_000, seed=2)
    right, _ = pr.decrypt(tr, pr.PrivateKey(0.2))
    wrong, _ = pr.decrypt(tr, pr.PrivateKey(0.7))
    assert wrong.values[0] - right.values[0] == pytest.approx(-0.5, abs=1e-9)


def test_mirror_candidate_outside_window_rejected():
    # with a window that excludes both candidates the symbol is not recovered
    *_, tr = make_session(values=[1.0], shots=10_000, seed=2)
    tr.message_format = {"mode": "analog", "window": [4.0, 4.5]}
    msg, diags = pr.decrypt(tr, pr.PrivateKey(0.2))
    assert math.isnan(msg.values[0]) and diags[0]["rejected"] == 2


def test_integrity_error_on_tampered_repetition():
    *_, tr = make_session(values=[0.6, 2.0], shots=10_000, seed=4)
    tr.records[1].u, tr.records[3].u = tr.records[3].u, tr.records[1].u
    tr.records[1].v, tr.records[3].v = tr.records[3].v, tr.records[1].v
    with pytest.raises(pr.IntegrityError):
        pr.decrypt(tr, pr.PrivateKey(0.2), strict=True)
    report = pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2))
    assert report.p_values["redundancy"] < 1e-6 and report.alarm


# ---------------------------------------------------------------------------
# detection


def test_alarm_is_bonferroni_rule():
    for attack in (None, atk.BeamsplitterTap(0.995), atk.NumberPhase(0.01), atk.ConjugateDisplacement(0.02)):
        for seed in range(3):
            *_, tr = make_session(values=[1.0, 1.5], attack=attack, seed=seed)
            rep = pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2), alpha=0.05)
            assert rep.alarm == any(p < 0.05 / 4 for p in rep.p_values.values())
            assert set(rep.p_values) == {"mean_difference", "alice_variance", "difference_variance", "redundancy"}


def test_tap_detected_by_alice_variance():
    *_, tr = make_session(values=[1.0], attack=atk.BeamsplitterTap(0.8), seed=3)
    assert pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2)).p_values["alice_variance"] < 1e-3


def test_conjugate_displacement_detected_by_mean():
    *_, tr = make_session(values=[1.0], attack=atk.ConjugateDisplacement(1.0), seed=3)
    assert pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2)).p_values["mean_difference"] < 1e-3


def test_number_phase_seen_by_model_with_two_phases():
    # a constant extra rotation mimics a different message; alternating Alice
    # phases make the two repetitions disagree
    params = pr.PublicParams(1.0, (0.0, 0.6), 10_000, 2)
    key = pr.PrivateKey(0.2)
    plain = pr.MessagePlain("digital", [0, 1, 1, 0], bit_map=(0.5, 1.6))
    tr = pr.run_session(params, key, plain, atk.NumberPhase(0.4), seed=0)
    assert pr.detect_eavesdropping(tr, None, key).alarm


def test_detection_power_grows_with_shots():
    attack = atk.BeamsplitterTap(0.97)
    powers = []
    for shots in (1_000, 10_000, 100_000):
        alarms = 0
        for seed in range(15):
            *_, tr = make_session(values=[1.0], shots=shots, attack=attack, seed=seed)
            alarms += pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2)).alarm
        powers.append(alarms)
    assert powers == sorted(powers) and powers[-1] == 15


def test_report_serializable():
    *_, tr = make_session(values=[1.0])
    rep = pr.detect_eavesdropping(tr, None, pr.PrivateKey(0.2))
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["num_tests"] == 4 and doc["alpha"] == 0.01


def test_fold():
    assert pr.fold(-0.3) == pytest.approx(0.3)
    assert pr.fold(2 * math.pi - 0.3) == pytest.approx(0.3)
    assert pr.fold(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(pr.fold(5.0)) >= 0


def test_model_variance_matches_closed_form_in_session():
    *_, tr = make_session(values=[1.0], shots=100_000, redundancy=1, seed=8)
    d = tr.records[0].u - tr.records[0].v
    assert np.var(d, ddof=1) == pytest.approx(z_minus_variance(1.0, 1.2), rel=0.02)
