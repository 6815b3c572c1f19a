import itertools
import math
import sys
import textwrap

import numpy as np
import pytest

from speedbo.acquisition import TaskKind
from speedbo.evaluator import (EvaluationError, ExternalCommandSpec,
                               ExternalDecoder, SimulatedDecoder,
                               SimulatorConfig, measure_speed_subset,
                               run_external, simulate, speed_from_timing)


def noiseless(**kw):
    return SimulatorConfig(sigma_log=0.0, sigma_B=0.0, **kw)


def test_speed_anchors():
    cfg = noiseless()
    assert simulate(cfg, (0, 1, 1), TaskKind.BOTH, 0).speed_wpm == pytest.approx(105_700)
    assert simulate(cfg, (5, 100, 100), TaskKind.BOTH, 0).speed_wpm == pytest.approx(854.23, rel=1e-9)


def test_two_anchor_exponent_solve():
    cfg = SimulatorConfig()
    lhs = math.log(105_700 / 854.23)
    rhs = cfg.alpha * math.log(6) + (cfg.beta + cfg.gamma) * math.log(100)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert (cfg.alpha, cfg.beta) == (0.5, 0.55)
    assert cfg.gamma == pytest.approx(0.30, abs=0.005)


def test_noiseless_repeats_identical():
    cfg = noiseless()
    a = simulate(cfg, (3, 40, 12), TaskKind.BOTH, 1)
    b = simulate(cfg, (3, 40, 12), TaskKind.BOTH, 99)
    assert a == b


def test_seeded_stream_deterministic():
    a = SimulatedDecoder(seed=4)
    b = SimulatedDecoder(seed=4)
    for x in [(1, 2, 3), (9, 400, 80)]:
        assert a(x) == b(x)


def test_task_fields():
    sim = SimulatedDecoder(seed=0)
    both = sim((2, 10, 10), TaskKind.BOTH)
    assert both.objective is not None and both.speed_wpm is not None
    obj = sim((2, 10, 10), TaskKind.OBJECTIVE)
    assert obj.objective is not None and obj.speed_wpm is None
    con = sim((2, 10, 10), TaskKind.CONSTRAINT)
    assert con.objective is None and con.speed_wpm is not None
    assert con.words_translated == 1_000 and both.words_translated == 25_000


def test_subset_time_ratio():
    cfg = noiseless()
    full = simulate(cfg, (4, 30, 7), TaskKind.BOTH, 0)
    sub = simulate(cfg, (4, 30, 7), TaskKind.CONSTRAINT, 0)
    assert sub.wall_seconds == pytest.approx(full.wall_seconds / 25)
    assert sub.speed_wpm == full.speed_wpm
    assert measure_speed_subset(SimulatedDecoder(cfg), (4, 30, 7)) == full.speed_wpm


def test_wall_time_matches_words_over_speed():
    cfg = noiseless(time_scale=0.5)
    r = simulate(cfg, (0, 1, 1), TaskKind.BOTH, 0)
    assert r.wall_seconds == pytest.approx(0.5 * 25_000 / (105_700 / 60))


def test_score_clamped():
    cfg = SimulatorConfig(B_star=99.99, sigma_B=5.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert 0.0 <= simulate(cfg, (10, 500, 100), TaskKind.BOTH, rng).objective <= 100.0


def test_monotonicity_on_coarse_grid():
    cfg = SimulatorConfig()
    ds, ss, ns = range(0, 11, 2), [1, 2, 5, 20, 80, 300, 500], [1, 3, 10, 31, 100]
    for d, s, n in itertools.product(ds, ss, ns):
        b, v = cfg.noiseless_score(d, s, n), cfg.noiseless_speed(d, s, n)
        for nd, ns_, nn in ((d + 1, s, n), (d, s + 1, n), (d, s, n + 1)):
            if nd > 10 or ns_ > 500 or nn > 100:
                continue
            assert cfg.noiseless_score(nd, ns_, nn) >= b
            assert cfg.noiseless_speed(nd, ns_, nn) < v


def test_heteroscedastic_raw_homoscedastic_log():
    sim = SimulatedDecoder(seed=11)
    slow = np.array([sim((5, 100, 100)).speed_wpm for _ in range(100)])
    fast = np.array([sim((0, 1, 1)).speed_wpm for _ in range(100)])
    assert fast.std(ddof=1) / slow.std(ddof=1) > 50
    ratio = np.log(fast).std(ddof=1) / np.log(slow).std(ddof=1)
    assert 1 / 1.5 <= ratio <= 1.5


def test_config_validation():
    with pytest.raises(ValueError):
        SimulatorConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SimulatorConfig(sigma_log=-1.0)


# -- external adapter --------------------------------------------------------

FAKE = textwrap.dedent("""
    import sys, time
    d, s, n, path = sys.argv[1:5]
    mode = sys.argv[5] if len(sys.argv) > 5 else "ok"
    if mode == "crash":
        sys.exit(3)
    if mode == "hang":
        time.sleep(10)
    print("sentences", path)
    if mode != "noscore":
        print("SCORE", 30 + int(d) / 10)
""")


@pytest.fixture
def fake_decoder(tmp_path):
    script = tmp_path / "fake_decoder.py"
    script.write_text(FAKE)
    (tmp_path / "full.txt").write_text("x\n")
    (tmp_path / "sub.txt").write_text("x\n")

    def make(mode="ok", timeout=5.0):
        return ExternalCommandSpec(
            command=f"{sys.executable} {script} {{d}} {{s}} {{n}} {{sentences}} {mode}",
            full_set_path=str(tmp_path / "full.txt"),
            subset_path=str(tmp_path / "sub.txt"),
            full_set_words=500, subset_words=50, timeout_seconds=timeout)
    return make


def test_speed_from_timing():
    assert speed_from_timing(500, 30.0) == pytest.approx(1000.0)


def test_external_parses_score(fake_decoder):
    res = run_external(fake_decoder(), (6, 10, 10), TaskKind.BOTH)
    assert res.objective == pytest.approx(30.6)
    assert res.words_translated == 500
    assert res.speed_wpm == pytest.approx(60 * 500 / res.wall_seconds)


def test_external_score_line_value():
    from speedbo.evaluator import _SCORE_RE
    assert float(_SCORE_RE.findall("log\nSCORE 36.6\n")[-1]) == 36.6


def test_external_constraint_uses_subset(fake_decoder):
    res = run_external(fake_decoder(), (1, 1, 1), TaskKind.CONSTRAINT)
    assert res.objective is None
    assert res.words_translated == 50


def test_external_objective_only_has_no_speed(fake_decoder):
    res = ExternalDecoder(fake_decoder())((1, 1, 1), TaskKind.OBJECTIVE)
    assert res.speed_wpm is None and res.objective is not None


@pytest.mark.parametrize("mode, timeout, match", [
    ("crash", 5.0, "exit status"), ("noscore", 5.0, "SCORE"), ("hang", 0.5, "timed out")])
def test_external_failures(fake_decoder, mode, timeout, match):
    with pytest.raises(EvaluationError, match=match) as info:
        run_external(fake_decoder(mode, timeout), (1, 1, 1), TaskKind.BOTH)
    assert info.value.x == (1, 1, 1)


def test_external_template_requires_placeholders():
    with pytest.raises(ValueError):
        ExternalCommandSpec("decode {d} {s}", "a", "b", 1, 1)
