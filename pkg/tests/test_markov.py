import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gatesim.lattice import Crossing, GateExit, GateIndex, Histogram, detect_crossing, remap_crossing
from gatesim.markov import (N_INPUTS, N_OUTPUTS, TRAPPED, BoundaryState, TransitionMatrix,
                            boundary_state_to_local, classify_output, compare_distributions, crossing_state,
                            discretize_input, en_state, estimate_transition_matrix, input_box, input_catalog,
                            mcmc_run, next_input, sample_input_state)
from gatesim.model import SystemState, lattice_config


def _exit(crossing, x, y, vx, vy):
    return GateExit(crossing, 100, SystemState(0.0, x, y, vx, vy))


# -- discretisation --------------------------------------------------------------

def test_input_examples():
    assert discretize_input(BoundaryState("EN", 0.0, 0.0, 15.0)) == 13
    assert discretize_input(BoundaryState("RD", 12.0, -25.0, 5.0)) == 28
    assert discretize_input(BoundaryState("LT", 3.0, 1.0, 2.0)) == 87
    assert discretize_input(BoundaryState("RT", 3.0, 1.0, 2.0)) == 86


def test_mt_is_output_only():
    with pytest.raises(ValueError):
        discretize_input(BoundaryState("MT", 0.0, 0.0, 15.0))
    with pytest.raises(ValueError):
        BoundaryState("XX", 0.0, 0.0, 0.0)


def test_bin_edges_half_open():
    assert discretize_input(en_state(-15.0, 0.0, 15.0)) == 8  # d exactly on an edge goes up
    assert discretize_input(en_state(25.0, 25.0, 20.0)) == 25  # last bin closed


def test_catalog_is_a_bijection():
    boxes = input_catalog()
    assert [b.index for b in boxes] == list(range(1, N_INPUTS + 1))
    for b in boxes:
        q = BoundaryState(b.boundary, *b.centre)
        assert discretize_input(q) == b.index
    assert Counter(b.boundary for b in boxes) == {"EN": 25, "RD": 30, "LD": 30, "RT": 1, "LT": 1}


def test_input_box_range():
    for bad in (0, 88):
        with pytest.raises(ValueError):
            input_box(bad)


def test_clamps_counted():
    clamps = Counter()
    assert discretize_input(BoundaryState("RD", 3.0, -25.0, 5.0), clamps) == 26 + 2
    assert discretize_input(en_state(0.0, 0.0, 35.0), clamps) == 13
    assert discretize_input(en_state(-40.0, 0.0, 15.0), clamps) == 3
    assert clamps == {"RD.d": 1, "EN.v_y": 1, "EN.d": 1}


@given(st.sampled_from(["EN", "RD", "LD"]), st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100))
def test_every_state_maps_into_its_family(b, d, vx, vy):
    i = discretize_input(BoundaryState(b, d, vx, vy))
    lo, hi = {"EN": (1, 25), "RD": (26, 55), "LD": (56, 85)}[b]
    assert lo <= i <= hi


# -- outputs ---------------------------------------------------------------------

def test_output_examples():
    assert classify_output(_exit(Crossing.TOP, -2.0, 60.1, 1.0, 14.0)) == 13
    assert classify_output(GateExit(None, 3000, SystemState(0.0, 0.0, 30.0, 0.0, 0.0))) == TRAPPED
    assert classify_output(_exit(Crossing.RIGHT, 25.1, 40.0, 3.0, 1.0)) == 86
    assert classify_output(_exit(Crossing.LEFT, -25.1, 40.0, -3.0, 1.0)) == 87
    assert classify_output(_exit(Crossing.BOTTOM, 0.0, -0.1, 0.0, -3.0)) == TRAPPED
    assert classify_output(GateExit(None, 5, SystemState(0.0, 0.0, 30.0, 0.0, 0.0), aborted=True)) == TRAPPED


def test_output_catalog_covers_1_to_88():
    seen = set()
    g = lattice_config().geometry
    for box in input_catalog():
        d, vx, vy = box.centre
        if box.boundary == "EN":
            seen.add(classify_output(_exit(Crossing.TOP, d, 60.1, vx, vy)))
        elif box.boundary == "LD":  # right crossings bin on the neighbour's LD grid
            seen.add(classify_output(_exit(Crossing.RIGHT, 25.1, g.joint_y - d, vx, vy)))
        elif box.boundary == "RD":
            seen.add(classify_output(_exit(Crossing.LEFT, -25.1, g.joint_y - d, vx, vy)))
    seen |= {86, 87, TRAPPED}
    assert seen == set(range(1, N_OUTPUTS + 1))


def test_outputs_become_inputs_of_the_neighbour():
    """Binning an exit as an output equals binning the entry it becomes in the next gate."""
    g = lattice_config().geometry
    cases = [(Crossing.TOP, 3.0, 60.2, 2.0, 14.0), (Crossing.RIGHT, 25.2, 17.0, 4.0, -3.0),
             (Crossing.LEFT, -25.2, 12.0, -14.0, 8.0), (Crossing.RIGHT, 25.2, 45.0, 4.0, 3.0),
             (Crossing.LEFT, -25.2, 45.0, -4.0, 3.0)]
    for c, x, y, vx, vy in cases:
        ex = _exit(c, x, y, vx, vy)
        o = classify_output(ex)
        i, dx, dy = next_input(o)
        moved = remap_crossing(ex.state, GateIndex(0, 0), lattice_config(), c)
        assert (moved.index.ix, moved.index.iy) == (dx, dy)
        s = moved.state
        if c is Crossing.TOP:
            q = en_state(s.x, s.vx, s.vy)
        else:
            side = "L" if s.x < 0 else "R"
            seg = "D" if s.y < g.joint_y else "T"
            q = BoundaryState(side + seg, abs(g.joint_y - s.y), s.vx, s.vy)
        assert discretize_input(q) == i


def test_next_input_involution():
    """A right exit enters the neighbour on LD; any left exit from there returns to an RD input here."""
    families = {"RD": range(26, 56), "LD": range(56, 86)}
    for o in families["RD"]:
        i, dx, dy = next_input(o)
        assert i in families["LD"] and (dx, dy) == (1, 0)
        for back in range(56, 86):
            j, bx, by = next_input(back)
            assert j in families["RD"] and (dx + bx, dy + by) == (0, 0)
    assert next_input(next_input(86)[0])[0] == 86  # RT -> LT -> RT


def test_next_input_table():
    assert next_input(13) == (13, 0, 1)
    assert next_input(26) == (56, 1, 0)
    assert next_input(85) == (55, -1, 0)
    assert next_input(86) == (87, 1, 0)
    assert next_input(87) == (86, -1, 0)
    assert next_input(TRAPPED) is None
    with pytest.raises(ValueError):
        next_input(0)


def test_crossing_state_measures_d_from_joints():
    g = lattice_config().geometry
    q = crossing_state(_exit(Crossing.RIGHT, 25.2, 12.0, 1.0, 2.0))
    assert q.boundary == "RD" and q.d == pytest.approx(g.joint_y - 12.0)
    q = crossing_state(_exit(Crossing.LEFT, -25.2, 41.0, 1.0, 2.0))
    assert q.boundary == "LT" and q.d == pytest.approx(11.0)


def test_entry_states_on_their_boundaries():
    cfg = lattice_config()
    g = cfg.geometry
    rng = np.random.default_rng(0)
    for box in input_catalog():
        s = sample_input_state(box.index, rng, cfg)
        assert box.v_x[0] <= s.vx <= box.v_x[1] and box.v_y[0] <= s.vy <= box.v_y[1]
        if box.boundary == "EN":
            assert s.y == 0.0 and box.d[0] <= s.x <= box.d[1]
        else:
            assert abs(s.x) == g.half_width
            assert (s.x < 0) == box.boundary.startswith("L")
            assert (s.y < g.joint_y) == box.boundary.endswith("D")
        assert detect_crossing(s.x, s.y, g) is None
    with pytest.raises(ValueError):
        boundary_state_to_local(BoundaryState("MT", 0, 0, 0))


# -- estimation ------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_matrix():
    return estimate_transition_matrix(lattice_config(), 6, 1, inputs=[13, 8, 18, 40, 70, 86, 87])


def test_rows_stochastic_and_flagged(small_matrix):
    m = small_matrix
    p = m.probabilities
    assert (p >= 0).all()
    for i in (13, 8, 18, 40, 70, 86, 87):
        assert abs(m.row(i).sum() - 1.0) <= 1e-12
        assert m.visits[i - 1] == 6
    assert set(m.zero_rows) == set(range(1, 88)) - {13, 8, 18, 40, 70, 86, 87}
    assert (p[np.array(m.zero_rows) - 1] == 0).all()


def test_estimation_reproducible(small_matrix):
    again = estimate_transition_matrix(lattice_config(), 6, 1, inputs=[13, 8, 18, 40, 70, 86, 87], jobs=2)
    assert np.array_equal(again.counts, small_matrix.counts)


def test_json_round_trip(small_matrix):
    text = small_matrix.to_json()
    doc = json.loads(text)
    assert doc["format"] == "gate-transition-matrix/1"
    assert len(doc["inputs"]) == 87 and doc["config_fingerprint"] == lattice_config().fingerprint()
    back = TransitionMatrix.from_json(text)
    assert np.array_equal(back.counts, small_matrix.counts)
    assert back.to_json() == text
    with pytest.raises(ValueError):
        TransitionMatrix.from_json(json.dumps({"format": "other"}))
    bad = dict(doc, counts=[[1]])
    with pytest.raises(ValueError):
        TransitionMatrix.from_json(json.dumps(bad))


def test_zero_noise_centres_give_one_hot_rows():
    cfg = lattice_config(Rm=0.0)
    m = estimate_transition_matrix(cfg, 3, 0, inputs=[13, 3, 40, 86], centre=True)
    for i in (13, 3, 40, 86):
        assert m.row(i).max() == 1.0


def test_estimation_rejects_zero_trials():
    with pytest.raises(ValueError):
        estimate_transition_matrix(lattice_config(), 0)


# -- MCMC ------------------------------------------------------------------------

def _one_hot(output):
    p = np.zeros((N_INPUTS, N_OUTPUTS))
    p[:, output - 1] = 1.0
    return TransitionMatrix.from_probabilities(p)


def test_all_up_chain_ends_at_top_row():
    res = mcmc_run(_one_hot(13), 13, 50, 0)
    assert res.histogram.count(0, 8) == 50
    assert res.terminations == {"exited_lattice": 50}


def test_trapped_is_absorbing():
    res = mcmc_run(_one_hot(TRAPPED), 13, 20, 0)
    assert res.histogram.count(0, 0) == 20
    assert res.terminations == {"trapped": 20}


def test_step_budget_stops_chain():
    res = mcmc_run(_one_hot(13), 13, 5, 0, max_steps=3, keep_paths=True)
    assert res.histogram.count(0, 3) == 5
    assert res.paths[0] == [(0, 0), (0, 1), (0, 2), (0, 3)]
    assert res.terminations == {"step_budget": 5}


def test_right_chain_hits_lattice_edge():
    p = np.zeros((N_INPUTS, N_OUTPUTS))
    p[:, 86 - 1] = 1.0
    res = mcmc_run(TransitionMatrix.from_probabilities(p), 13, 3, 0)
    assert res.histogram.count(4, 0) == 3


def test_unvisited_row_stops_chain(small_matrix):
    counts = np.zeros((N_INPUTS, N_OUTPUTS), dtype=np.int64)
    counts[12, 13 - 1] = 5  # EN 13 -> MT 13 -> next gate's row 13, twice, then row 13 only
    m = TransitionMatrix(counts)
    res = mcmc_run(m, 13, 4, 0)
    assert res.histogram.count(0, 8) == 4
    res = mcmc_run(m, 12, 4, 0)
    assert res.terminations == {"unvisited_row": 4}
    assert res.histogram.count(0, 0) == 4


def test_histogram_mass_equals_trial_count(small_matrix):
    res = mcmc_run(small_matrix, 13, 77, 5)
    assert res.histogram.total == 77
    assert sum(res.terminations.values()) == 77


def test_mcmc_reproducible(small_matrix):
    a = mcmc_run(small_matrix, 13, 40, 3)
    b = mcmc_run(small_matrix, 13, 40, 3)
    assert np.array_equal(a.histogram.counts, b.histogram.counts)


def test_mcmc_rejects_bad_input(small_matrix):
    with pytest.raises(ValueError):
        mcmc_run(small_matrix, 88, 1, 0)


# -- comparison ------------------------------------------------------------------

@given(st.lists(st.integers(0, 30), min_size=81, max_size=81))
def test_compare_identity_and_scale(values):
    a = np.array(values).reshape(9, 9)
    corr, rmse = compare_distributions(a, a)
    assert rmse == 0.0
    if a.std() > 0:
        assert corr == pytest.approx(1.0)
        assert compare_distributions(a, 2 * a)[0] == pytest.approx(1.0)
    else:
        assert math.isnan(corr)


def test_compare_needs_same_shape():
    with pytest.raises(ValueError):
        compare_distributions(np.zeros((9, 9)), np.zeros((8, 9)))


def test_compare_accepts_histograms():
    h = Histogram.empty()
    h.add(GateIndex(0, 8), 3)
    g = Histogram.empty()
    g.add(GateIndex(0, 7), 3)
    corr, rmse = compare_distributions(h, g)
    assert rmse == pytest.approx(math.sqrt(18 / 81))
    assert corr < 0


# -- convergence -----------------------------------------------------------------

@pytest.mark.slow
def test_more_estimation_trials_converge():
    cfg = lattice_config()
    m100 = estimate_transition_matrix(cfg, 100, 0)
    m1000 = estimate_transition_matrix(cfg, 1000, 0)
    start = discretize_input(en_state(0.0, 0.0, 15.0))
    a = mcmc_run(m100, start, 100, 42).histogram
    b = mcmc_run(m1000, start, 100, 42).histogram
    # per-cell binomial spread of a 100-trial histogram, from a long run on the better matrix
    p = mcmc_run(m1000, start, 20000, 7).histogram.counts.ravel() / 20000
    sigma = math.sqrt(np.mean(100 * p * (1 - p)))
    _, rmse = compare_distributions(a, b)
    assert rmse <= 2 * sigma
