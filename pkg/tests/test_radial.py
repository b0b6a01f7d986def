import math
import numpy as np
import pytest

from conformal.qcurv.radial import (
    GaussianEnvelopeTail,
    LogSlopeTail,
    PowerTail,
    RadialFunction,
    build_grid,
    fd_weights,
    integrate_laplacian,
    integrate_radial,
    log_mass,
    radial_derivative,
    radial_laplacian,
    write_columns,
)
from scipy import integrate


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("grading", [1.0, 2.0, 3.0])
def test_grid_layout(n, grading):
    grid = build_grid(n, r_max=30.0, size=256, grading=grading)
    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == 30.0
    assert np.all(np.diff(grid.nodes) > 0)
    assert np.all(grid.weights[1:] > 0)
    if grading > 1:
        assert grid.weights[0] == 0.0
    else:
        assert grid.weights[0] > 0.0
    assert grid.key == (n, 256, 30.0, grading)


@pytest.mark.parametrize("n", [3, 5])
def test_ball_volume_is_exact(n):
    grid = build_grid(n, r_max=50.0, size=256)
    ball = grid.constants.omega_nm1 * 50.0**n / n
    assert integrate_radial(grid, np.ones_like(grid.nodes)).value == pytest.approx(ball, rel=1e-13)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_gaussian_moment(n):
    grid = build_grid(n, r_max=100.0, size=512)
    value = integrate_radial(grid, np.exp(-grid.nodes**2)).value
    assert value == pytest.approx(math.pi ** (n / 2), rel=1e-8)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"size": 32},
        {"size": 100.5},
        {"r_max": 0.0},
        {"r_max": math.inf},
        {"grading": 0.5},
        {"grading": math.nan},
    ],
)
def test_build_grid_rejects_bad_inputs(kwargs):
    with pytest.raises(ValueError):
        build_grid(3, **kwargs)


def test_build_grid_rejects_low_dimension():
    with pytest.raises(ValueError):
        build_grid(2)


def test_radial_function_values_are_frozen():
    grid = build_grid(3, r_max=20.0, size=64)
    raw = grid.nodes**2
    f = RadialFunction(grid, raw)
    raw[3] = -1.0
    assert f.values[3] == grid.nodes[3] ** 2
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_radial_function_interpolation():
    grid = build_grid(3, r_max=20.0, size=128)
    f = RadialFunction(grid, np.exp(-grid.nodes**2))
    # Node values come back verbatim
    assert np.array_equal(f(grid.nodes), f.values)
    # Even extension
    assert f(-0.7) == f(0.7)
    assert f(0.7) == pytest.approx(math.exp(-0.49), abs=1e-3)
    assert isinstance(f(1.0), float)
    with pytest.raises(ValueError):
        f(20.5)


@pytest.mark.parametrize("values", [np.nan, np.inf])
def test_radial_function_rejects_non_finite(values):
    grid = build_grid(3, r_max=20.0, size=64)
    bad = np.zeros_like(grid.nodes)
    bad[5] = values
    with pytest.raises(ValueError):
        RadialFunction(grid, bad)


def test_radial_function_rejects_wrong_shape():
    grid = build_grid(3, r_max=20.0, size=64)
    with pytest.raises(ValueError):
        RadialFunction(grid, np.zeros(10))


def test_integrate_radial_rejects_nan_and_foreign_grid():
    grid = build_grid(3, r_max=20.0, size=64)
    other = build_grid(3, r_max=25.0, size=64)
    values = np.ones_like(grid.nodes)
    values[2] = np.nan
    with pytest.raises(ValueError):
        integrate_radial(grid, values)
    with pytest.raises(ValueError):
        integrate_radial(grid, RadialFunction(other, np.ones_like(other.nodes)))


def test_log_mass_matches_direct_integral():
    grid = build_grid(4, r_max=30.0, size=256)
    log_values = -grid.nodes**2 + 3.0
    direct = integrate_radial(grid, np.exp(log_values)).value
    assert log_mass(grid, log_values) == pytest.approx(math.log(direct), abs=1e-12)
    # No overflow for huge log-densities
    assert math.isfinite(log_mass(grid, log_values + 1000.0))


def test_fd_weights_reproduce_polynomials():
    x = np.array([0.0, 0.3, 0.7, 1.2, 2.0])
    z = 0.5
    c = fd_weights(z, x, 2)
    for degree in range(5):
        f = x**degree
        assert np.dot(c[0], f) == pytest.approx(z**degree, abs=1e-12)
        assert np.dot(c[1], f) == pytest.approx(degree * z ** max(degree - 1, 0), abs=1e-10)
        second = degree * (degree - 1) * z ** max(degree - 2, 0)
        assert np.dot(c[2], f) == pytest.approx(second, abs=1e-9)


@pytest.mark.parametrize("n", [3, 5])
def test_laplacian_of_even_polynomials(n):
    grid = build_grid(n, r_max=20.0, size=256)
    r = grid.nodes
    lap2 = radial_laplacian(RadialFunction(grid, r**2)).values
    lap4 = radial_laplacian(RadialFunction(grid, r**4)).values
    np.testing.assert_allclose(lap2, 2 * n, rtol=1e-7)
    np.testing.assert_allclose(lap4, 4 * (n + 2) * r**2, rtol=1e-6, atol=1e-6)


def test_radial_derivative():
    grid = build_grid(3, r_max=20.0, size=256)
    r = grid.nodes
    d = radial_derivative(RadialFunction(grid, r**2 + 5.0)).values
    assert d[0] == 0.0
    np.testing.assert_allclose(d, 2 * r, rtol=1e-8, atol=1e-8)


def test_integrate_laplacian_recovers_profile():
    grid = build_grid(3, r_max=20.0, size=256)
    f = RadialFunction(grid, 4.0 - 0.5 * grid.nodes**2)
    rebuilt = integrate_laplacian(radial_laplacian(f)).values
    np.testing.assert_allclose(rebuilt, f.values - 4.0, atol=1e-6)


def test_power_tail():
    grid = build_grid(3, r_max=50.0, size=256)
    values = 1.0 / (1.0 + grid.nodes**2) ** 3
    tail = PowerTail(6).bound(grid, values)
    exact, _ = integrate.quad(lambda r: 4 * math.pi * r**2 / (1 + r**2) ** 3, 50.0, math.inf)
    assert tail == pytest.approx(exact, rel=1e-3)
    assert PowerTail(3).bound(grid, values) == math.inf
    result = integrate_radial(grid, values, PowerTail(6))
    assert result.tail == tail
    assert result.truncated == pytest.approx(result.value - tail)
    assert float(result) == result.value


def test_gaussian_envelope_tail():
    grid = build_grid(3, r_max=2.0, size=64)
    tail = GaussianEnvelopeTail(log_amplitude=math.log(3.0), rate=1.0, power=2).bound(grid, None)
    exact, _ = integrate.quad(lambda r: 4 * math.pi * 3.0 * math.exp(-(r**2)) * r**2, 2.0, math.inf)
    assert tail == pytest.approx(exact, rel=1e-7)
    far = build_grid(5, r_max=100.0, size=64)
    assert GaussianEnvelopeTail(0.0, 5.0, 4).bound(far, None) == 0.0


def test_log_slope_tail():
    grid = build_grid(3, r_max=30.0, size=512)
    values = np.exp(-grid.nodes)
    tail = LogSlopeTail().bound(grid, values)
    exact, _ = integrate.quad(lambda r: 4 * math.pi * math.exp(-r) * r**2, 30.0, math.inf)
    # The log-concave extrapolation overestimates the decaying tail by a modest factor
    assert exact <= tail <= 2 * exact
    assert LogSlopeTail().bound(grid, np.ones_like(grid.nodes)) == math.inf
    assert LogSlopeTail().bound(grid, np.zeros_like(grid.nodes)) == 0.0


def test_csv_round_trip(tmp_path):
    grid = build_grid(3, r_max=20.0, size=64)
    f = RadialFunction(grid, np.sin(grid.nodes) / (1 + grid.nodes))
    path = tmp_path / "profile.csv"
    f.to_csv(str(path))
    assert np.array_equal(RadialFunction.from_csv(str(path), grid).values, f.values)
    with pytest.raises(ValueError):
        RadialFunction.from_csv(str(path), build_grid(3, r_max=21.0, size=64))


def test_write_columns_rejects_ragged(tmp_path):
    with pytest.raises(ValueError):
        write_columns(str(tmp_path / "x.csv"), {"a": [1.0, 2.0], "b": [1.0]})


def test_integrate_radial_is_linear():
    grid = build_grid(3, r_max=30.0, size=256)
    f = np.exp(-grid.nodes**2)
    g = 1.0 / (1.0 + grid.nodes**2) ** 3
    combined = integrate_radial(grid, 0.3 * f - 2.5 * g).value
    expected = 0.3 * integrate_radial(grid, f).value - 2.5 * integrate_radial(grid, g).value
    assert combined == pytest.approx(expected, rel=1e-12)


def test_quartic_exponential_matches_quad():
    grid = build_grid(5)
    omega = grid.constants.omega_nm1
    reference, _ = integrate.quad(lambda s: math.exp(-(s**4)) * s**4, 0, math.inf)
    value = integrate_radial(grid, np.exp(-grid.nodes**4)).value
    assert value == pytest.approx(omega * reference, rel=1e-6)


def test_spherical_density_has_sphere_mass():
    grid = build_grid(3)
    # e^{3 u} for u = log(2 / (1 + r^2)) integrates to |S^3|
    density = 8.0 / (1.0 + grid.nodes**2) ** 3
    result = integrate_radial(grid, density, tail=PowerTail(6.0))
    assert result.tail > 0
    assert result.value == pytest.approx(2 * math.pi**2, rel=1e-6)
