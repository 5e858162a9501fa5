import numpy as np
import pytest

from mgcap import gradcheck, spectral
from mgcap.gradcheck import SCOPES, run_gradcheck, tolerance


@pytest.mark.parametrize("scope", SCOPES)
def test_scopes_pass_quick(scope):
    report = run_gradcheck(scope, trials=10, seed=3)
    assert report.passed, report.line()
    assert report.tol == (1e-5 if scope in gradcheck.CLOSED_FORM else 1e-4)


@pytest.mark.parametrize("scope", ["spectral_log", "spectral_sqrt"])
def test_degenerate_suite(scope):
    report = run_gradcheck(scope, trials=6, seed=0, degenerate=True)
    assert report.passed and report.finite, report.line()


def test_detects_a_wrong_backward(monkeypatch):
    good = spectral.spectrum_map_grad
    monkeypatch.setattr(spectral, "spectrum_map_grad", lambda mode, r: 1.1 * good(mode, r))
    assert not run_gradcheck("spectral_sqrt", trials=5).passed


def test_unknown_scope_lists_valid_ones():
    with pytest.raises(ValueError, match="spectral_sqrt"):
        run_gradcheck("spectral")
    with pytest.raises(ValueError):
        run_gradcheck("maxout", degenerate=True)


def test_report_is_seeded():
    a = run_gradcheck("full", trials=3, seed=11)
    b = run_gradcheck("full", trials=3, seed=11)
    assert a.max_rel_err == b.max_rel_err and a.redraws == b.redraws


def test_rel_err_floor():
    assert gradcheck.rel_err(0.0, 0.0) == 0.0
    assert gradcheck.rel_err(1.0, 1.0 + 1e-9) == pytest.approx(1e-9, rel=1e-3)
    assert tolerance("full") == 1e-4 and tolerance("ridge") == 1e-5
    assert np.isfinite(gradcheck.five_point(np.sin, 1e-3))
