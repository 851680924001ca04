"""Tests for the compaction automaton against a brute-force reference."""

import numpy as np
import pytest

from tape_lab.compaction import (
    CellGrid,
    DicCurve,
    correct,
    load_curves,
    rasterize,
    save_curves,
    simulate,
    simulate_profiles,
    smooth,
)
from tape_lab.errors import (
    InvalidArgumentError,
    InvalidDataError,
    ParseError,
    ResourceLimitError,
    TerminalState,
)
from tape_lab.profile import RoughnessProfile

from oracle_ca import NaiveGrid, rasterize_counts


def random_counts(rng, n_w, max_height):
    counts = rng.integers(0, max_height + 1, size=n_w)
    if counts.max() < 1:
        counts[rng.integers(0, n_w)] = 1
    return counts


class TestHandTraces:
    def test_flat_grid_first_step_full_contact(self):
        grid = CellGrid.from_column_cells([3, 3, 3, 3])
        assert grid.plate_row == 4
        assert grid.step() == 4

    def test_flat_grid_second_step_terminal(self):
        grid = CellGrid.from_column_cells([3, 3, 3, 3])
        grid.step()
        with pytest.raises(TerminalState) as term:
            grid.step()
        assert term.value.n_c == 4

    def test_terminal_step_mutates_nothing(self):
        grid = CellGrid.from_column_cells([3, 3, 3, 3])
        grid.step()
        occ_before = grid.occ.copy()
        plate_before = grid.plate_row
        with pytest.raises(TerminalState):
            grid.step()
        np.testing.assert_array_equal(grid.occ, occ_before)
        assert grid.plate_row == plate_before
        # terminal is sticky
        with pytest.raises(TerminalState):
            grid.step()

    def test_step_profile_fills_valleys(self):
        # Two full columns next to two empty ones: contact rises from 1/2 to
        # 1 as displaced material fills the valley, then the automaton stops.
        grid = CellGrid.from_column_cells([2, 2, 0, 0])
        assert grid.step() == 2
        assert grid.step() == 4
        with pytest.raises(TerminalState) as term:
            grid.step()
        assert term.value.n_c == 4

    def test_tie_breaks_toward_smaller_column(self):
        # Displaced cell at column 1 sees air at equal distance in columns 0
        # and 2; the smaller column index must win.
        grid = CellGrid.from_column_cells([1, 3, 1], eps_x=1.0, eps_z=1.0)
        assert grid.step() == 1
        assert grid.step() == 2
        # column 0 received the cell, column 2 kept its air at row 1
        assert grid.occ[0, 1] == 1
        assert grid.occ[2, 1] == 0

    def test_artifact_fraction_from_terminal_contact(self):
        profile = RoughnessProfile(id="t", heights=[2.0, 2.0, 0.0], spacing=1.0)
        curve = simulate(profile, eps_z=1.0, horizon=8, base_rows=0)
        # terminal n_c = 2 of 3 columns -> artifact 2/3
        assert curve.artifact_value == pytest.approx(2 / 3)

    def test_flat_profile_curve_and_correction(self):
        profile = RoughnessProfile(id="flat", heights=[5.0, 5.0, 5.0], spacing=1.0)
        raw = simulate(profile, eps_z=0.5, horizon=6)
        np.testing.assert_allclose(raw.values, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert raw.artifact_value == 0.0
        fixed = correct(raw)
        np.testing.assert_allclose(fixed.values, 1.0)

    def test_trailing_real_sample_equal_to_artifact_is_corrected(self):
        # counts [1,3,1]: raw [1/3, 2/3, 2/3 padding...], artifact 2/3; the
        # genuine second sample coincides with the artifact value and is
        # folded into the corrected plateau.
        profile = RoughnessProfile(id="t", heights=[1.0, 3.0, 1.0], spacing=1.0)
        raw = simulate(profile, eps_z=1.0, horizon=5, base_rows=0)
        np.testing.assert_allclose(raw.values, [1 / 3, 2 / 3, 2 / 3, 2 / 3, 2 / 3])
        assert raw.artifact_value == pytest.approx(2 / 3)
        fixed = correct(raw)
        np.testing.assert_allclose(fixed.values, [1 / 3, 1.0, 1.0, 1.0, 1.0])


class TestAgainstOracle:
    def test_random_grids_match_reference_step_by_step(self):
        rng = np.random.default_rng(42)
        for trial in range(60):
            n_w = int(rng.integers(2, 16))
            max_h = int(rng.integers(1, 12))
            counts = random_counts(rng, n_w, max_h)
            eps_x = float(rng.choice([0.5, 1.0, 3.0]))
            eps_z = float(rng.choice([0.1, 0.7, 1.0, 2.5]))
            fast = CellGrid.from_column_cells(counts, eps_x=eps_x, eps_z=eps_z)
            slow = NaiveGrid(counts, eps_x=eps_x, eps_z=eps_z)
            mass = fast.material_count
            for _ in range(200):
                expected = slow.step()
                if expected is None:
                    with pytest.raises(TerminalState) as term:
                        fast.step()
                    assert term.value.n_c == slow.terminal_n_c
                    break
                got = fast.step()
                assert got == expected, f"trial {trial}: contact diverged"
                np.testing.assert_array_equal(
                    fast.occ, slow.occ, err_msg=f"trial {trial}: occupancy diverged"
                )
                assert fast.occ.sum() == mass

    def test_raw_curves_match_reference(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            n_w = int(rng.integers(2, 14))
            counts = random_counts(rng, n_w, 10)
            profile = RoughnessProfile(id="r", heights=counts.astype(float), spacing=1.0)
            curve = simulate(profile, eps_z=1.0, horizon=40, base_rows=0)
            expected, artifact = NaiveGrid(rasterize_counts(counts, 1.0, 0)).run(40)
            np.testing.assert_array_equal(curve.values, expected)
            assert curve.artifact_value == artifact

    def test_mass_conserved_on_larger_grids(self):
        rng = np.random.default_rng(44)
        for _ in range(5):
            counts = random_counts(rng, 200, 60)
            grid = CellGrid.from_column_cells(counts, eps_x=3.0, eps_z=0.1)
            mass = grid.material_count
            while True:
                try:
                    grid.step()
                except TerminalState:
                    break
                assert grid.occ.sum() == mass
            assert grid.occ.sum() == mass


class TestRasterize:
    def test_round_half_up(self):
        profile = RoughnessProfile(id="r", heights=[0.0, 0.24, 0.25, 0.76], spacing=1.0)
        grid = rasterize(profile, eps_z=0.5, base_rows=2)
        np.testing.assert_array_equal(grid.column_cells(), [2, 2, 3, 4])

    def test_base_rows_offset_only(self):
        profile = RoughnessProfile(id="r", heights=[0.0, 1.0, 2.0], spacing=1.0)
        g0 = rasterize(profile, eps_z=1.0, base_rows=0)
        g3 = rasterize(profile, eps_z=1.0, base_rows=3)
        np.testing.assert_array_equal(g3.column_cells(), g0.column_cells() + 3)

    def test_cell_cap_enforced(self):
        profile = RoughnessProfile(id="r", heights=np.linspace(0, 100, 50), spacing=1.0)
        with pytest.raises(ResourceLimitError):
            rasterize(profile, eps_z=0.001, cell_cap=10_000)

    def test_bad_eps_rejected(self):
        profile = RoughnessProfile(id="r", heights=[0.0, 1.0], spacing=1.0)
        with pytest.raises(InvalidArgumentError):
            rasterize(profile, eps_z=0.0)

    def test_finer_eps_z_means_taller_grid(self):
        profile = RoughnessProfile(id="r", heights=np.sin(np.linspace(0, 7, 80)) * 4.0, spacing=1.0)
        coarse = rasterize(profile, eps_z=0.1)
        fine = rasterize(profile, eps_z=0.05)
        assert fine.n_h > coarse.n_h


class TestSimulate:
    def test_horizon_reached_leaves_artifact_unset(self):
        profile = RoughnessProfile(id="r", heights=[5.0, 1.0], spacing=1.0)
        curve = simulate(profile, eps_z=1.0, horizon=2, base_rows=0)
        assert curve.artifact_value is None
        assert curve.horizon == 2

    def test_values_in_unit_interval_and_padded(self):
        rng = np.random.default_rng(45)
        profile = RoughnessProfile(id="r", heights=rng.uniform(0, 6, 30), spacing=1.0)
        curve = simulate(profile, eps_z=0.5, horizon=100)
        assert curve.values.min() >= 0.0 and curve.values.max() <= 1.0
        assert curve.artifact_value is not None
        # after termination the padding is constant
        pad = curve.values == curve.artifact_value
        first = int(np.argmax(pad))
        assert pad[first:].all()

    def test_simulate_profiles_worker_pool_matches_serial(self):
        rng = np.random.default_rng(46)
        profiles = [
            RoughnessProfile(id=f"p{i}", heights=rng.uniform(0, 4, 24), spacing=1.0)
            for i in range(6)
        ]
        raw1, smooth1 = simulate_profiles(profiles, eps_z=0.5, horizon=60, jobs=1)
        raw2, smooth2 = simulate_profiles(profiles, eps_z=0.5, horizon=60, jobs=3)
        for a, b in zip(raw1 + smooth1, raw2 + smooth2):
            assert a.id == b.id
            np.testing.assert_array_equal(a.values, b.values)


class TestCorrectAndSmooth:
    def test_correct_without_artifact_is_identity(self):
        curve = DicCurve(id="c", values=[0.1, 0.5, 0.9], stage="raw", eps_z=0.1)
        fixed = correct(curve)
        assert fixed.stage == "corrected"
        np.testing.assert_array_equal(fixed.values, curve.values)

    def test_correct_requires_raw(self):
        curve = DicCurve(id="c", values=[0.1], stage="corrected", eps_z=0.1)
        with pytest.raises(InvalidArgumentError):
            correct(curve)

    def test_correct_only_touches_trailing_run(self):
        # An interior sample equal to the artifact value stays put.
        curve = DicCurve(id="c", values=[0.25, 0.5, 0.75, 0.25, 0.25], stage="raw",
                         eps_z=0.1, artifact_value=0.25)
        fixed = correct(curve)
        np.testing.assert_allclose(fixed.values, [0.25, 0.5, 0.75, 1.0, 1.0])

    def test_smooth_matches_manual_truncated_mean(self):
        values = np.array([0.0, 0.2, 0.1, 0.6, 0.8, 1.0, 1.0])
        curve = DicCurve(id="c", values=values, stage="corrected", eps_z=0.1)
        out = smooth(curve, window=5)
        expected = np.array([
            np.mean(values[0:3]), np.mean(values[0:4]), np.mean(values[0:5]),
            np.mean(values[1:6]), np.mean(values[2:7]), np.mean(values[3:7]),
            np.mean(values[4:7]),
        ])
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_smooth_preserves_monotonicity_and_range(self):
        rng = np.random.default_rng(47)
        for _ in range(25):
            values = np.sort(rng.uniform(0, 1, 50))
            curve = DicCurve(id="c", values=values, stage="corrected", eps_z=0.1)
            out = smooth(curve, window=5).values
            assert np.all(np.diff(out) >= -1e-12)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_smooth_rejects_even_window(self):
        curve = DicCurve(id="c", values=[0.1, 0.2], stage="corrected", eps_z=0.1)
        with pytest.raises(InvalidArgumentError):
            smooth(curve, window=4)

    def test_smooth_requires_corrected(self):
        curve = DicCurve(id="c", values=[0.1, 0.2], stage="raw", eps_z=0.1)
        with pytest.raises(InvalidArgumentError):
            smooth(curve)


class TestCurveTypesAndCsv:
    def test_values_outside_unit_interval_rejected(self):
        with pytest.raises(InvalidDataError):
            DicCurve(id="c", values=[0.5, 1.2], stage="raw", eps_z=0.1)
        with pytest.raises(InvalidDataError):
            DicCurve(id="c", values=[-0.1, 0.5], stage="raw", eps_z=0.1)

    def test_unknown_stage_rejected(self):
        with pytest.raises(InvalidArgumentError):
            DicCurve(id="c", values=[0.5], stage="weird", eps_z=0.1)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(48)
        curves = [
            DicCurve(id=f"c{i}", values=np.sort(rng.uniform(0, 1, 12)), stage="smoothed",
                     eps_z=0.1, artifact_value=None if i == 0 else 0.25)
            for i in range(3)
        ]
        path = tmp_path / "dic.csv"
        save_curves(curves, path, config={"eps_z": 0.1})
        loaded = load_curves(path)
        for a, b in zip(curves, loaded):
            assert a.id == b.id and a.stage == b.stage and a.eps_z == b.eps_z
            assert a.artifact_value == b.artifact_value
            np.testing.assert_array_equal(a.values, b.values)

    def test_bad_cell_reports_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,stage,eps_z_um,artifact_value,d_0,d_1\nc0,raw,0.1,,0.5,xx\n")
        with pytest.raises(ParseError) as err:
            load_curves(path)
        assert err.value.row == 2
        assert err.value.column == 6

    def test_mixed_horizons_rejected_on_save(self, tmp_path):
        curves = [
            DicCurve(id="a", values=[0.1, 0.2], stage="raw", eps_z=0.1),
            DicCurve(id="b", values=[0.1], stage="raw", eps_z=0.1),
        ]
        with pytest.raises(InvalidDataError):
            save_curves(curves, tmp_path / "x.csv")
