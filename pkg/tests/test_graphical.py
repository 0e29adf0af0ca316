from __future__ import annotations

import numpy as np
import pytest

from _helpers import max_abs_z, tv
from moran_asg import generators as gen
from moran_asg import graphical as g
from moran_asg.ancestral import h_r_via_L
from moran_asg.ctmc import Dist, replicate_rng, transient
from moran_asg.generators import DELTA
from moran_asg.graphical import Event, EventLog
from moran_asg.params import ftw_params

P10 = ftw_params(10, 0.3, 0.4, {1: 0.5, 2: 0.3})
P0 = ftw_params(8, 0.0, 0.4, {1: 0.6, 3: 0.2})


def logs(params, horizon, n, seed=1):
    rng = replicate_rng(seed, 0)
    batch = g.sample_event_logs(params, horizon, n, rng, seed)
    return [batch.log(i) for i in range(n)]


# --- sampling --------------------------------------------------------------


def test_event_count_mean():
    h, n = 2.0, 10**4
    batch = g.sample_event_logs(P10, h, n, replicate_rng(3, 0))
    counts = np.diff(batch.offsets)
    lam = h * g.total_event_rate(P10)
    assert lam == pytest.approx(h * 10 * (1 + 0.3 + 0.8))
    assert abs(counts.mean() - lam) <= 4 * np.sqrt(lam / n)


def test_no_mutations_without_u():
    batch = g.sample_event_logs(P0, 5.0, 200, replicate_rng(1, 0))
    assert not np.isin(batch.kind, [g.MUT_DEL, g.MUT_BEN]).any()


def test_deleterious_rate_per_site():
    h, n = 4.0, 2000
    batch = g.sample_event_logs(P10, h, n, replicate_rng(5, 0))
    count = np.count_nonzero(batch.kind == g.MUT_DEL)
    exposure = n * h * P10.N
    rate = P10.u * P10.nu1
    assert abs(count / exposure - rate) <= 4 * np.sqrt(rate / exposure)


def test_log_invariants():
    for log in logs(P10, 3.0, 50):
        assert np.all(np.diff(log.t) > 0)
        assert log.t.size == 0 or (log.t[0] >= 0 and log.t[-1] <= 3.0)
        for e in np.flatnonzero(log.kind == g.SELECTIVE):
            J = log.J[e, : log.order[e]]
            assert J.size == log.order[e] >= 1 and np.all((J >= 0) & (J < 10))
        assert np.all(log.src[log.kind == g.NEUTRAL] >= 0)


def test_same_seed_same_log():
    a = g.sample_event_logs(P10, 2.0, 5, replicate_rng(9, 4))
    b = g.sample_event_logs(P10, 2.0, 5, replicate_rng(9, 4))
    for field in ("offsets", "t", "kind", "dst", "src", "order", "J"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_jsonl_round_trip(tmp_path):
    log = logs(P10, 2.0, 1)[0]
    path = tmp_path / "log.jsonl"
    log.save(path)
    back = EventLog.from_jsonl(path.read_text())
    assert list(back.events()) == list(log.events())
    assert back.N == log.N and back.horizon == log.horizon
    with pytest.raises(ValueError):
        EventLog.from_jsonl('{"format": "other", "version": 1}\n')


def test_from_events_validates():
    with pytest.raises(ValueError):
        EventLog.from_events(3, 1.0, [Event(0.5, "neutral", 0, 1), Event(0.4, "mut_del", 2)])
    with pytest.raises(ValueError):
        EventLog.from_events(3, 1.0, [Event(0.5, "neutral", 0, 7)])


# --- forward propagation ---------------------------------------------------


def test_monochrome_colourings_are_closed():
    for log in logs(P0, 4.0, 30):
        assert not g.propagate_types(log, np.zeros(8, int)).any()
        assert g.propagate_types(log, np.ones(8, int)).all()


def test_ftw_typing_rule():
    ev = [Event(0.1, "selective", 0, None, (1, 2))]
    log = EventLog.from_events(3, 1.0, ev)
    assert list(g.propagate_types(log, [1, 1, 0])) == [0, 1, 0]
    assert list(g.propagate_types(log, [1, 1, 1])) == [1, 1, 1]
    assert list(g.propagate_types(log, [0, 1, 1])) == [0, 1, 1]


def test_unfit_count_law_matches_generator():
    k, t, n = 4, 1.5, 10**5
    counts = g.unfit_counts(P10, k, t, n, seed=4)
    emp = np.bincount(counts, minlength=11) / n
    qy = gen.build_Q_Y_ftw(P10)
    assert tv(emp, transient(qy, Dist.delta(qy, k), t).p) <= 0.02


def test_ancestry_trivial_cases():
    empty = EventLog.from_events(4, 1.0, [])
    assert g.propagate_ancestry(empty, [1, 0, 1, 0]) == {0: 0, 1: 1, 2: 2, 3: 3}
    one = EventLog.from_events(4, 1.0, [Event(0.3, "neutral", 2, 1)])
    assert g.propagate_ancestry(one, [1, 0, 1, 0], [2]) == {2: 1}


def test_ancestry_selective_parent():
    ev = [Event(0.3, "selective", 0, None, (1, 2, 3))]
    log = EventLog.from_events(4, 1.0, ev)
    assert g.propagate_ancestry(log, [1, 1, 0, 0], [0]) == {0: 2}
    assert g.propagate_ancestry(log, [0, 1, 1, 1], [0]) == {0: 0}
    assert g.propagate_ancestry(log, [0, 0, 1, 1], [0]) == {0: 1}


def test_common_ancestor_emerges():
    hits = 0
    for i, log in enumerate(logs(P10, 200.0, 1000)):
        colour = replicate_rng(11, i).integers(0, 2, 10)
        hits += len(set(g.propagate_ancestry(log, colour).values())) == 1
    assert hits / 1000 >= 0.99


# --- kASG extraction -------------------------------------------------------


def test_R_path_conventions():
    log = logs(P10, 3.0, 1)[0]
    assert g.extract_R_path(log, []).values == (0,)
    for log in logs(P0, 3.0, 200):
        vals = g.extract_R_path(log, [0, 3]).values
        assert 0 not in vals and DELTA not in vals


def test_R_path_hand_log():
    ev = [
        Event(0.1, "mut_ben", 5),
        Event(0.2, "neutral", 0, 1),
        Event(0.3, "selective", 1, None, (2, 3)),
        Event(0.4, "mut_del", 3),
    ]
    log = EventLog.from_events(6, 1.0, ev)
    path = g.extract_R_path(log, [1, 3])
    # Backwards: del at 3 drops a line, selection on 1 adds 2 and 3, neutral moves 1 to 0.
    assert path.values == (2, 1, 3)
    assert path.times == pytest.approx([0.0, 0.6, 0.7])
    killed = g.extract_R_path(log, [5])
    assert killed.values == (1, DELTA)


def test_R_first_jump_law():
    out = g.first_jump_R(P10, 3, 10**5, seed=2, horizon=2.0)
    row = g.generator_row(gen.build_Q_R(P10), 3)
    assert max_abs_z(g.compare_jump_law(out[out != -2], row)) <= 4


def test_R_final_law():
    n, r = 2, 0.6
    out = g.final_R(P10, n, 10**5, seed=6, horizon=r)
    qr = gen.build_Q_R(P10)
    law = transient(qr, Dist.delta(qr, n), r).p
    emp = np.array([np.count_nonzero(out == k) for k in range(11)] + [np.count_nonzero(out == -1)]) / out.size
    assert tv(emp, law) <= 0.02


# --- pruned lookdown extraction --------------------------------------------


def test_pld_rejects_multi_site_start():
    with pytest.raises(ValueError):
        g.extract_pld_path(logs(P10, 1.0, 1)[0], [0, 1])


def test_pld_without_events():
    path = g.extract_pld_path(EventLog.from_events(5, 2.0, []), [3])
    assert path.states == (g.PldState((3,), 1),)
    assert path.L.values == (1,)


def test_pld_rules_on_hand_log():
    ev = [
        Event(0.1, "mut_ben", 4),
        Event(0.2, "mut_del", 0),
        Event(0.3, "neutral", 2, 1),
        Event(0.4, "selective", 0, None, (4, 2, 4)),
    ]
    path = g.extract_pld_path(EventLog.from_events(6, 1.0, ev), [0])
    s = path.states
    # selection: tuple members get consecutive levels after the lower ones, duplicates once
    assert s[1] == g.PldState((4, 2, 0), 3)
    # neutral arrow whose tail lies outside the graph: the tail takes over the tip's level
    assert s[2] == g.PldState((4, 1, 0), 3)
    # deleterious mutation on the immune line sends it to the top, where it already is
    assert s[-2].levels == (4, 1, 0)
    # beneficial mutation at level 1 prunes everything above and becomes immune
    assert s[-1] == g.PldState((4,), 1)
    assert path.L.values == (1, 3, 1)


def test_pld_deleterious_non_immune_removed():
    ev = [Event(0.2, "mut_del", 3), Event(0.4, "selective", 0, None, (3,))]
    path = g.extract_pld_path(EventLog.from_events(5, 1.0, ev), [0])
    assert path.states[1] == g.PldState((3, 0), 2)
    assert path.final == g.PldState((0,), 1)


def test_pld_coalescence_keeps_lower_level():
    ev = [Event(0.2, "neutral", 3, 0), Event(0.4, "selective", 0, None, (3,))]
    path = g.extract_pld_path(EventLog.from_events(5, 1.0, ev), [0])
    assert path.states[1] == g.PldState((3, 0), 2)
    # tip 3 (level 1) merges into 0 (level 2): 0 takes level 1; the immune line was 0
    assert path.final == g.PldState((0,), 1)


def test_pld_immune_follows_coalescence():
    ev = [Event(0.2, "neutral", 0, 3), Event(0.4, "selective", 0, None, (3,))]
    path = g.extract_pld_path(EventLog.from_events(5, 1.0, ev), [0])
    assert path.final == g.PldState((3,), 1)


def test_pld_next_jump_law():
    out = g.next_jump_L(P10, 2, 10**5, seed=8, horizon=3.0)
    row = g.generator_row(gen.build_Q_L(P10), 2)
    assert max_abs_z(g.compare_jump_law(out[out != -2], row)) <= 4


def test_pld_equals_R_without_mutation():
    for log in logs(P0, 3.0, 300, seed=4):
        R = g.extract_R_path(log, [0])
        L = g.extract_pld_path(log, [0]).L
        assert R.values == L.values and np.array_equal(R.times, L.times)


def test_pld_sites_inside_unpruned_asg():
    for log in logs(P10, 2.0, 300, seed=5):
        pld = set(g.extract_pld_path(log, [0]).final.levels)
        assert pld <= g.asg_sites(log, [0])


def test_pld_can_exceed_killed_count():
    # Deleterious mutation on the immune line: the killed graph drops it, the lookdown graph keeps it.
    ev = [Event(0.2, "mut_del", 0), Event(0.4, "selective", 0, None, (3,))]
    log = EventLog.from_events(5, 1.0, ev)
    assert g.extract_R_path(log, [0]).values == (1, 2, 1)
    assert g.extract_pld_path(log, [0]).L.values == (1, 2)


# --- pathwise ancestor check -----------------------------------------------


def test_ancestor_is_lowest_fit_level_or_immune():
    for i, log in enumerate(logs(P10, 2.5, 500, seed=12)):
        colour = replicate_rng(13, i).integers(0, 2, 10)
        st = g.extract_pld_path(log, [0]).final
        assert g.propagate_ancestry(log, colour, [0])[0] == g.ancestral_site_from_levels(st, colour)


def test_type_at_horizon_matches_ancestral_colour_without_mutation():
    for i, log in enumerate(logs(P0, 2.5, 300, seed=14)):
        colour = replicate_rng(15, i).integers(0, 2, 8)
        final = g.propagate_types(log, colour)
        anc = g.propagate_ancestry(log, colour)
        assert all(final[s] == colour[a] for s, a in anc.items())


def test_sweeps_are_deterministic():
    log = logs(P10, 3.0, 1)[0]
    colour = np.array([1, 0] * 5)
    assert np.array_equal(g.propagate_types(log, colour), g.propagate_types(log, colour))
    a, b = g.extract_pld_path(log, [2]), g.extract_pld_path(log, [2])
    assert a.states == b.states and np.array_equal(a.times, b.times)


# --- ancestral type --------------------------------------------------------


def test_empirical_ancestral_type_extremes():
    rng = replicate_rng(1, 1)
    for log in logs(P10, 2.0, 50):
        assert g.empirical_ancestral_type(log, 0, rng) == 0
        assert g.empirical_ancestral_type(log, 10, rng) == 1


def test_ancestral_type_matches_h_r():
    k, r, n = 6, 0.8, 20000
    vals = g.ancestral_types(P10, k, r, n, seed=21)
    h = h_r_via_L(P10, r).h[k]
    assert abs(vals.mean() - h) <= 4 * np.sqrt(h * (1 - h) / n)


def test_single_log_ancestral_type_agrees_with_batch_rule():
    rng = replicate_rng(3, 3)
    vals = [g.empirical_ancestral_type(log, 6, rng) for log in logs(P10, 0.8, 3000, seed=22)]
    h = h_r_via_L(P10, 0.8).h[6]
    assert abs(np.mean(vals) - h) <= 4 * np.sqrt(h * (1 - h) / 3000)


# --- descendants -----------------------------------------------------------


def test_descendants_of_everyone():
    for i, log in enumerate(logs(P10, 2.0, 50)):
        colour = replicate_rng(2, i).integers(0, 2, 10)
        path = g.descendant_counts(log, range(10), colour)
        assert all(d + b == 10 for _, d, b in path.values)


def test_descendant_additivity():
    for i, log in enumerate(logs(P10, 2.0, 50, seed=3)):
        colour = replicate_rng(4, i).integers(0, 2, 10)
        A1, A2 = [0, 3, 5], [1, 7]
        both = g.descendant_counts(log, A1 + A2, colour)
        one = g.descendant_counts(log, A1, colour)
        two = g.descendant_counts(log, A2, colour)
        for t in both.times:
            def at(path):
                idx = int(np.searchsorted(path.times, t, side="right")) - 1
                return path.values[idx]
            y, d, b = at(both)
            assert (d, b) == (at(one)[1] + at(two)[1], at(one)[2] + at(two)[2])


def test_descendant_first_jump_law():
    p = ftw_params(6, 0.3, 0.4, {1: 0.5, 2: 0.3})
    out = g.first_jump_descendant(p, (3, 2, 1), 10**5, seed=5, horizon=1.0)
    obs = [tuple(r) for r in out[out[:, 0] != -2]]
    row = g.generator_row(gen.build_Q_descendant(p), (3, 2, 1))
    assert max_abs_z(g.compare_jump_law(obs, row)) <= 4


# --- coupling --------------------------------------------------------------


def test_higher_order_dominates_pathwise():
    s = 0.6
    p2 = ftw_params(10, 0.3, 0.4, {3: s})
    rng = replicate_rng(30, 0)
    for i in range(300):
        log2 = g.sample_event_log(p2, 2.0, rng)
        log1 = g.with_selection_order(log2, 1)
        colour = replicate_rng(31, i).integers(0, 2, 10)
        y1 = g.propagate_types(log1, colour).sum()
        y2 = g.propagate_types(log2, colour).sum()
        assert y2 <= y1
    with pytest.raises(ValueError):
        g.with_selection_order(log2, 5)


def test_compare_jump_law_flags_impossible_targets():
    rows = g.compare_jump_law([1, 1, 7], {1: 2.0, 2: 1.0})
    assert any(r.target == 7 and r.z == np.inf for r in rows)
