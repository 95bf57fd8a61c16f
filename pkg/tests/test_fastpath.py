"""The jitted cruise-control kernel must be indistinguishable from the
interpreted pipeline: identical expressions in identical order, so ensemble
summaries agree bit for bit."""

from __future__ import annotations

import json
from dataclasses import replace

import pytest

from ssk import fastpath
from ssk.harness import ScenarioConfig, run_ensemble

pytestmark = pytest.mark.skipif(
    not fastpath.HAVE_FASTPATH, reason="jit compiler unavailable"
)

BASE = {
    "model": "acc",
    "T": 0.4,
    "dt": 0.0005,
    "trajectories": 5,
    "seed": 902,
}
BOX = [[-8093.25, None]]


def both_paths(cfg, monkeypatch):
    monkeypatch.setenv("SSK_THREADS", "1")
    monkeypatch.setenv("SSK_FASTPATH", "0")
    slow = run_ensemble(cfg).to_dict()
    monkeypatch.setenv("SSK_FASTPATH", "1")
    fast = run_ensemble(cfg).to_dict()
    return slow, fast


@pytest.mark.parametrize("family", ["srcbf", "szcbf", "scbf"])
@pytest.mark.parametrize(
    "box,saturate_after",
    [(None, True), (BOX, True), (BOX, False)],
    ids=["unbounded", "post-clamp", "box-in-qp"],
)
def test_summaries_bit_identical(family, box, saturate_after, monkeypatch):
    cfg = ScenarioConfig.from_dict(BASE)
    cfg = replace(
        cfg,
        certificate={**cfg.certificate, "family": family},
        control_box=box,
        saturate_after=saturate_after,
    )
    slow, fast = both_paths(cfg, monkeypatch)
    assert json.dumps(slow, sort_keys=True) == json.dumps(fast, sort_keys=True)


def test_near_boundary_start_bit_identical(monkeypatch):
    # starts close to the constraint so rows bind and saturation engages
    cfg = ScenarioConfig.from_dict(
        {**BASE, "model_params": {"x0": [18.0, 10.0, 35.0]}, "T": 1.0}
    )
    for family in ("srcbf", "scbf"):
        case = replace(
            cfg,
            certificate={**cfg.certificate, "family": family},
            control_box=BOX,
            saturate_after=True,
        )
        slow, fast = both_paths(case, monkeypatch)
        assert json.dumps(slow, sort_keys=True) == json.dumps(fast, sort_keys=True)


def test_infeasible_fallback_bit_identical(monkeypatch):
    # box inside the program conflicts with the reciprocal row near the
    # boundary, driving thousands of least-squares fallback steps
    cfg = ScenarioConfig.from_dict(
        {
            **BASE,
            "T": 1.0,
            "model_params": {"x0": [18.0, 10.0, 35.0]},
            "certificate": {"family": "srcbf"},
        }
    )
    case = replace(cfg, control_box=BOX, saturate_after=False)
    slow, fast = both_paths(case, monkeypatch)
    assert slow["infeasible_step_count"] > 100
    assert json.dumps(slow, sort_keys=True) == json.dumps(fast, sort_keys=True)


def test_unsupported_scenarios_fall_back(monkeypatch):
    # nonlinear zeroing gain has no kernel; run_ensemble must still work
    cfg = ScenarioConfig.from_dict(
        {
            **BASE,
            "certificate": {"family": "szcbf", "alpha": {"kind": "cubic", "k": 1.0}},
        }
    )
    from ssk.harness import _build_runtime

    assert _build_runtime(cfg).fast is None
    report = run_ensemble(cfg)
    assert report.trajectories == 5


def test_disk_model_never_uses_kernel():
    cfg = ScenarioConfig.from_dict(
        {"model": "unicycle", "T": 0.1, "dt": 0.001, "trajectories": 2, "seed": 1}
    )
    from ssk.harness import _build_runtime

    assert _build_runtime(cfg).fast is None


def test_env_kill_switch(monkeypatch):
    monkeypatch.setenv("SSK_FASTPATH", "0")
    cfg = ScenarioConfig.from_dict(BASE)
    from ssk.harness import _build_runtime

    assert _build_runtime(cfg).fast is None
