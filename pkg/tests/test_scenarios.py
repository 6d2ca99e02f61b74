import pytest

from ibcvp_lab.models.scenario import ScenarioConfig
from ibcvp_lab.services import scenarios
from ibcvp_lab.services.scenarios import ScenarioRunner, second_order_under_halving


@pytest.mark.parametrize("coarse,fine,expected", [
    (4.0e-3, 1.0e-3, True),
    (3.3e-3, 1.0e-3, True),
    (4.7e-3, 1.0e-3, True),
    (2.6e-3, 1.0e-3, False),     # first-order contamination
    (6.0e-3, 1.0e-3, False),
    (1.0e-3, 0.0, False),
    (0.0, 0.0, True),
    (5e-14, 4e-14, True),        # both at rounding
    (5e-14, 1e-3, False),
])
def test_second_order_window(coarse, fine, expected):
    assert second_order_under_halving(coarse, fine) is expected


def test_cylinder_gate_uses_reference_collapse_time(tmp_path):
    runner = ScenarioRunner(ScenarioConfig.build({"scenario": "cylinder", "output_dir": str(tmp_path)}))
    outcome = runner._cylinder()
    assert outcome.summary["pass"]
    assert outcome.summary["monotone"]
    assert outcome.summary["reference_gaps"]["-0.1"] <= 1e-6


def test_cylinder_gate_fails_on_shifted_reference(tmp_path, monkeypatch):
    monkeypatch.setattr(scenarios, "REFERENCE_COLLAPSE_TIMES", {-0.1: 2.3009})
    runner = ScenarioRunner(ScenarioConfig.build({"scenario": "cylinder", "output_dir": str(tmp_path)}))
    outcome = runner._cylinder()
    assert outcome.summary["reference_gaps"]["-0.1"] > 1e-6
    assert not outcome.summary["pass"]
