# tests/test_readgreen.py
import numpy as np
import pytest

from rgbethe.apps.readgreen import peak_ratio, readgreen_scan, scan_point, transition_points
from rgbethe.errors import ConfigError
from rgbethe.schema import readgreen_inverse_coupling

ETAS = [1.0, 2.0, 3.0, 4.0]


def test_readgreen_points():
    assert [readgreen_inverse_coupling(4, n) for n in range(2)] == [3.0, 1.0]
    assert readgreen_inverse_coupling(12, 0) == 11.0


def test_closed_system_has_integer_pair_number():
    for x, n in [(4.0, 0), (2.5, 1), (2.0, 1), (0.5, 2)]:
        p = scan_point(ETAS, 0.0, x)
        assert p["pair_number"] == pytest.approx(n, abs=1e-10)
        assert np.allclose(p["pair_amplitude"], 0.0, atol=1e-12)
        assert sum(p["occupation"]) == pytest.approx(n, abs=1e-10)


def test_degeneracy_at_readgreen_point_and_bath_gap():
    closed = scan_point(ETAS, 0.0, 3.0)
    assert closed["gap"] < 1e-9 and closed["flagged"]
    opened = scan_point(ETAS, 0.05, 3.0)
    assert opened["gap"] > 1e-6 and not opened["flagged"]
    assert max(abs(a) for a in opened["pair_amplitude"]) > 0.05


def test_transitions_interpolate_between_plateaus():
    grid = [3.5, 3.25, 2.75, 2.5, 1.5, 1.25, 0.75, 0.5]
    scan = readgreen_scan(ETAS, 0.0, grid)
    assert scan.inverse_couplings == grid
    found = transition_points(scan)
    assert found == pytest.approx([1.0, 3.0], abs=1e-9)


def test_scan_rows_and_threads():
    grid = [3.2, 2.8, 2.0, 1.2, 0.8]
    a = readgreen_scan(ETAS, 0.02, grid)
    b = readgreen_scan(ETAS, 0.02, grid, threads=2)
    assert len(a.rows()) == 5 and all(len(r) == len(a.header()) for r in a.rows())
    assert np.allclose(a.pair_number, b.pair_number, atol=1e-12)
    assert peak_ratio(a, 0, window=0.25) is not None


def test_bad_inputs():
    with pytest.raises(ConfigError):
        scan_point(ETAS, 0.0, 0.0)
    with pytest.raises(ConfigError):
        readgreen_scan([0.0, 1.0], 0.0, [1.0])
