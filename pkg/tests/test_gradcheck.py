"""Unit tests for the gradient-check harness itself (the acceptance suite runs
the full 100-instance sweep; here we exercise the harness mechanics)."""

import pytest

from softsil import gradcheck


class TestHarness:
    def test_scopes_cover_all_targets(self):
        assert set(gradcheck.SCOPES["all"]) == set(gradcheck.TARGETS)
        for scope in ("sil", "supcon", "baselines", "e2e"):
            assert set(gradcheck.SCOPES[scope]) <= set(gradcheck.TARGETS)
        assert all(t.startswith("e2e_") for t in gradcheck.SCOPES["e2e"])

    def test_small_run_passes_each_scope(self):
        for scope in ("sil", "supcon", "baselines"):
            ok, results = gradcheck.run(scope=scope, instances=2, printer=lambda *_: None)
            assert ok, results
            assert all(err <= gradcheck.DEFAULT_TOL for err in results.values())

    def test_corrupted_gradient_detected(self):
        err = gradcheck.run_target("cross_entropy", instances=1, corruption=0.05)
        assert err > gradcheck.DEFAULT_TOL

    def test_report_lines_name_target_and_verdict(self):
        lines = []
        ok, _ = gradcheck.run(scope="sil", instances=1, printer=lines.append)
        assert ok
        assert len(lines) == len(gradcheck.SCOPES["sil"])
        for line, name in zip(lines, gradcheck.SCOPES["sil"]):
            assert line.startswith("PASS")
            assert name in line
            assert "worst rel err" in line

    def test_seeded_reproducibility(self):
        a = gradcheck.run_target("sil_grad_D", instances=2, seed=3)
        b = gradcheck.run_target("sil_grad_D", instances=2, seed=3)
        assert a == b
