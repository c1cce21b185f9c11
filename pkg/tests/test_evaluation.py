import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upstereo.evaluation import (
    mean_angular_error,
    read_report,
    report,
    write_energy_csv,
    write_report,
)
from upstereo.solver import SolverConfig, SolverState


def unit_normals(rng, count):
    n = rng.standard_normal((count, 3))
    return n / np.linalg.norm(n, axis=1, keepdims=True)


class TestMeanAngularError:
    def test_identical_fields_zero(self):
        # zero up to the arccos clamp tolerance at dot products of ~1
        n = unit_normals(np.random.default_rng(0), 100)
        assert mean_angular_error(n, n) < 1e-5

    def test_rotated_by_90_degrees(self):
        count = 64
        a = np.tile([0.0, 0.0, -1.0], (count, 1))
        b = np.tile([1.0, 0.0, 0.0], (count, 1))
        assert np.isclose(mean_angular_error(a, b), 90.0)

    def test_sign_convention_normalized(self):
        # flipped copies compare as equal after toward-camera normalization
        n = unit_normals(np.random.default_rng(1), 50)
        n[:, 2] = -np.abs(n[:, 2]) - 0.1
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        assert mean_angular_error(n, -n) < 1e-6

    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a = unit_normals(rng, 40)
        b = unit_normals(rng, 40)
        ab = mean_angular_error(a, b)
        ba = mean_angular_error(b, a)
        assert np.isclose(ab, ba)
        assert 0.0 <= ab <= 180.0

    def test_domain_mismatch_rejected(self):
        a = unit_normals(np.random.default_rng(2), 10)
        with pytest.raises(ValueError):
            mean_angular_error(a, a[:5])


class TestReport:
    def _state(self):
        return SolverState(
            rho=np.ones((1, 4)),
            lighting=np.zeros((2, 1, 9)),
            z=np.ones(4),
            theta=np.ones(4),
            energy_history=[(0, 3.0), (1, 2.0), (2, 1.5)],
        )

    def test_without_ground_truth_no_mae_field(self):
        summary = report(self._state())
        assert "mae_degrees" not in summary
        assert summary["final_energy"] == 1.5
        assert summary["iterations"] == 2

    def test_history_length_matches_iterations(self):
        summary = report(self._state())
        assert len(summary["energy_history"]) == summary["iterations"] + 1

    def test_json_round_trip(self, tmp_path):
        summary = report(self._state(), mae_degrees=7.25, timing_seconds=1.5, config=SolverConfig())
        write_report(summary, tmp_path / "report.json")
        back = read_report(tmp_path / "report.json")
        assert back == summary
        assert back["mae_degrees"] == 7.25
        assert back["config"]["tv_weight"] == 2e-6

    def test_energy_csv(self, tmp_path):
        write_energy_csv(self._state().energy_history, tmp_path / "energy.csv")
        lines = (tmp_path / "energy.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,energy"
        assert len(lines) == 4
