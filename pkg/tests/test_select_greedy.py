import csv
import io

import numpy as np
import pytest

from micsubset.beamform import output_noise_power, snr_gain
from micsubset.scene import build_spectral_model, reference_scene, random_scene, transmission_costs
from micsubset.select_greedy import (
    TRACE_COLUMNS,
    GreedyError,
    SelectionTrace,
    TraceRecord,
    default_transmission_range,
    expand_candidates,
    greedy_select,
    initial_candidates,
    warm_restart,
)


def _node(scene, x, y):
    return int(np.flatnonzero(np.all(np.isclose(scene.mic_positions, [x, y]), axis=1))[0])


def _filter(scene, centres, R0):
    d = np.linalg.norm(scene.mic_positions[:, None, :] - np.atleast_2d(centres)[None], axis=2).min(axis=1)
    return set(np.flatnonzero(d <= R0 + 1e-9).tolist())


class TestCandidates:
    def test_grid_node_four_neighbourhood(self, desk):
        sc, _, _ = desk
        S1 = initial_candidates(sc, (6.0, 6.0), 2.0)
        assert len(S1) == 5

    def test_room_diagonal(self, desk):
        sc, _, _ = desk
        assert len(initial_candidates(sc, (6, 6), 12 * np.sqrt(2))) == sc.num_mics

    def test_unit_square_range(self, desk):
        sc, _, _ = desk
        R0 = np.sqrt(np.log(2 * 49) / 49) * 12.0
        assert set(initial_candidates(sc, (5.0, 7.0), R0).tolist()) == _filter(sc, (5.0, 7.0), R0)

    def test_isolated(self, desk):
        sc, _, _ = desk
        with pytest.raises(GreedyError, match="isolated"):
            initial_candidates(sc, (1.0, 1.0), 0.5)
        with pytest.raises(ValueError):
            initial_candidates(sc, (1.0, 1.0), 0.0)

    def test_expand_interior_node(self, desk):
        sc, _, _ = desk
        i = _node(sc, 6, 6)
        assert len(expand_candidates(sc, [i], 2.0)) == 5

    def test_expand_full_network_fixed_point(self, desk):
        sc, _, _ = desk
        full = np.arange(sc.num_mics)
        assert np.array_equal(expand_candidates(sc, full, 2.0), full)

    def test_expand_two_adjacent(self, desk):
        sc, _, _ = desk
        S2 = [_node(sc, 6, 6), _node(sc, 8, 6)]
        got = set(expand_candidates(sc, S2, 2.0).tolist())
        assert got == _filter(sc, sc.mic_positions[S2], 2.0)
        assert len(got) == 8

    def test_expand_requires_nonempty(self, desk):
        sc, _, _ = desk
        with pytest.raises(ValueError):
            expand_candidates(sc, [], 2.0)

    def test_default_range(self, desk):
        sc, _, _ = desk
        assert default_transmission_range(sc) == pytest.approx(2.0)
        rs = random_scene(30, 1)
        ext = np.max(np.ptp(rs.mic_positions, axis=0))
        assert default_transmission_range(rs) == pytest.approx(np.sqrt(np.log(60) / 30) * ext)


class TestTrace:
    def test_strictly_increasing(self):
        tr = SelectionTrace()
        tr.append(TraceRecord(1, "local", 5, 2, 0.1, 1e-6))
        with pytest.raises(ValueError):
            tr.append(TraceRecord(1, "local", 5, 2, 0.1, 1e-6))

    def test_csv_schema(self):
        tr = SelectionTrace()
        tr.append(TraceRecord(1, "local", 5, 2, 0.1, 1e-6))
        tr.append(TraceRecord(2, "global", 9, 3, 0.2, 1e-7))
        rows = list(csv.reader(io.StringIO(tr.to_csv())))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert rows[2][:4] == ["2", "global", "9", "3"]
        assert float(rows[2][5]) == pytest.approx(-70.0)


@pytest.fixture(scope="module")
def desk_run():
    sc = reference_scene()
    m = build_spectral_model(sc, 2 * np.pi * 1000)
    c = transmission_costs(sc)
    res, tr = greedy_select(sc, m, c, 0.65)
    return sc, m, c, res, tr


class TestGreedy:
    def test_single_sensor_suffices(self, desk):
        sc, m, c = desk
        i = _node(sc, 2, 10)  # grid node nearest the source
        beta = 1 / snr_gain(m, np.ones(sc.num_mics))
        alpha = 0.5 * beta * snr_gain(m, [i])
        res, tr = greedy_select(sc, m, c, alpha, z0=sc.mic_positions[i], R0=2.0)
        local = [r for r in tr.records if r.phase == "local"]
        assert len(local) <= 2
        assert res.selection.K == 1

    def test_global_constraint_and_trace(self, desk_run):
        sc, m, c, res, tr = desk_run
        beta = 1 / snr_gain(m, np.ones(sc.num_mics))
        assert res.feasible
        assert res.achieved_noise_power <= beta / 0.65 + 1e-6 * beta
        its = [r.iteration for r in tr.records]
        assert its == sorted(set(its))
        phases = [r.phase for r in tr.records]
        assert phases == sorted(phases, key=lambda p: p != "local")  # local records first, one switch
        assert tr.records[-1].phase == "global"
        assert all(r.n_selected <= r.n_candidates for r in tr.records)

    def test_close_to_model_driven(self, desk_run):
        from micsubset.select_model import select_model_driven

        sc, m, c, res, _ = desk_run
        md = select_model_driven(m, c, 0.65)
        assert abs(res.achieved_noise_power - md.achieved_noise_power) <= 0.05 * md.achieved_noise_power

    def test_local_only_flag(self, desk):
        sc, m, c = desk
        res, tr = greedy_select(sc, m, c, 0.65, local_only=True)
        assert all(r.phase == "local" for r in tr.records)

    def test_union_update_monotone(self, desk):
        sc, m, c = desk
        _, tr = greedy_select(sc, m, c, 0.65, update="union")
        sizes = [r.n_candidates for r in tr.records if r.phase == "local"]
        assert sizes == sorted(sizes)

    def test_max_iter(self, desk):
        sc, m, c = desk
        with pytest.raises(GreedyError) as ei:
            greedy_select(sc, m, c, 0.9, max_iter=2)
        assert len(ei.value.trace) == 2
        with pytest.raises(ValueError):
            greedy_select(sc, m, c, 0.9, max_iter=0)

    def test_alpha_validated(self, desk):
        sc, m, c = desk
        with pytest.raises(ValueError):
            greedy_select(sc, m, c, 0.0)

    def test_deterministic(self, desk_run):
        sc, m, c, res, tr = desk_run
        res2, tr2 = greedy_select(sc, m, c, 0.65)
        assert np.array_equal(res.indices, res2.indices)
        assert tr.to_csv() == tr2.to_csv()


class TestWarmRestart:
    def test_unmoved_fc_fixed_point(self, desk_run):
        sc, m, c, res, _ = desk_run
        res2, tr2 = warm_restart(res, sc, m, c, 0.65)
        assert tr2.iterations <= 2
        assert res2.achieved_noise_power == pytest.approx(res.achieved_noise_power, rel=1e-12)

    def test_one_step_move_faster_than_cold(self, desk_run):
        sc, m, c, res, tr = desk_run
        moved = sc.with_fc(sc.fc_position + np.array([0.0, 2.0]))
        c2 = transmission_costs(moved)
        res2, tr2 = warm_restart(res, moved, m, c2, 0.65)
        _, cold = greedy_select(moved, m, c2, 0.65)
        assert tr2.iterations < cold.iterations
        beta = 1 / snr_gain(m, np.ones(sc.num_mics))
        assert output_noise_power(m, res2.indices) <= beta / 0.65 * (1 + 1e-6)
