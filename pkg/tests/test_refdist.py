import math
import struct

import numpy as np
import pytest
from scipy import stats

from sizeunfold import geometry, harness, refdist
from sizeunfold.rng import make_rng

BALL = refdist.AnalyticBall()


@pytest.fixture(scope="module")
def ball_kde():
    return refdist.fit_density(BALL.sample_sqrt(make_rng(1), 10**6))


@pytest.fixture(scope="module")
def shape_refs():
    return {name: refdist.fit_density(refdist.sample_reference(geometry.SHAPES[name](), 10**6, make_rng(2)))
            for name in ("cube", "dodecahedron", "tetrahedron")}


def test_analytic_ball_oracle_consistency():
    # the CDF, density and quantile of the exact ball law agree with each other
    s = np.linspace(0.01, 1.7, 50)
    h = 1e-6
    assert np.allclose((BALL.cdf(s + h) - BALL.cdf(s - h)) / (2 * h), BALL.density(s), rtol=1e-5)
    u = np.linspace(0.01, 0.99, 50)
    assert np.allclose(BALL.cdf(BALL.quantile(u)), u, atol=1e-12)
    z = s**2
    assert np.allclose(BALL.area_density(z), BALL.density(s) / (2 * s), rtol=1e-12)


def test_ball_mesh_matches_analytic_law(reference):
    ref = reference("ball-mesh", 10**6)
    assert stats.kstest(ref.sqrt_samples, BALL.cdf).statistic < 0.005


def test_single_sample_in_support():
    ref = refdist.sample_reference(geometry.cube(), 1, make_rng(0))
    # the largest section of the unit cube is the diagonal rectangle of area sqrt 2
    assert ref.n_samples == 1 and 0 < ref.sqrt_samples[0] <= 2**0.25 + 1e-12


def test_scaled_body_scaled_samples():
    K = geometry.dodecahedron()
    a = refdist.sample_reference(K, 10**5, make_rng(3)).sqrt_samples
    b = refdist.sample_reference(K.scaled(2.0), 10**5, make_rng(4)).sqrt_samples
    assert stats.ks_2samp(b, 2 * a).statistic < 0.01


def test_samples_sorted_and_keyed():
    K = geometry.tetrahedron()
    ref = refdist.sample_reference(K, 5000, make_rng(5))
    assert np.all(np.diff(ref.sqrt_samples) >= 0)
    assert ref.key == K.content_hash()


def test_sampling_independent_of_workers():
    K = geometry.cube()
    a = refdist.sample_reference(K, 3000, make_rng(6), chunk_size=1000, workers=1)
    b = refdist.sample_reference(K, 3000, make_rng(6), chunk_size=1000, workers=3)
    assert np.array_equal(a.sqrt_samples, b.sqrt_samples)


def test_ball_kde_interior(ball_kde):
    s = np.linspace(0.05, 0.9 * math.sqrt(math.pi), 2000)
    assert np.abs(ball_kde.density(s) - BALL.density(s)).max() < 0.02


@pytest.mark.xfail(strict=True, reason="Silverman-bandwidth KDE bias near the integrable spike at sqrt(pi) "
                                        "is about 0.054 at s = 0.95 sqrt(pi)")
def test_ball_kde_up_to_095(ball_kde):
    s = np.linspace(0.05, 0.95 * math.sqrt(math.pi), 2000)
    assert np.abs(ball_kde.density(s) - BALL.density(s)).max() < 0.02


def test_density_invariants(shape_refs):
    for ref in shape_refs.values():
        assert (ref.density_values >= 0).all()
        assert np.trapezoid(ref.density_values, ref.grid) == pytest.approx(1.0, abs=1e-3)
        assert np.all(np.diff(ref.cdf_values) >= 0) and ref.cdf_values[-1] == 1.0
        assert ref.grid[0] == 0.0 and ref.grid[-1] == ref.s_max_hat


def test_degenerate_sample_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        refdist.fit_density(np.full(2000, 0.7))


def test_too_few_samples_rejected():
    with pytest.raises(ValueError, match="at least"):
        refdist.fit_density(np.linspace(0.1, 1, 999))


def test_grid_refinement(shape_refs):
    ref = shape_refs["dodecahedron"]
    fine = refdist.fit_density(ref, 2 * len(ref.grid))
    s = np.linspace(0, ref.s_max_hat, 7777)
    assert np.abs(fine.density(s) - ref.density(s)).max() < 1e-3


def test_eval_density_interpolation(shape_refs):
    ref = shape_refs["cube"]
    i = 1234
    assert ref.density(ref.grid[i]) == ref.density_values[i]
    mid = 0.5 * (ref.grid[i] + ref.grid[i + 1])
    assert ref.density(mid) == pytest.approx(0.5 * (ref.density_values[i] + ref.density_values[i + 1]), rel=1e-12)
    assert ref.density(ref.s_max_hat * 1.0001) == 0.0
    assert ref.density(-0.1) == 0.0


def test_eval_cdf_order_statistics(shape_refs):
    ref = shape_refs["tetrahedron"]
    x = ref.sqrt_samples
    assert ref.cdf(x[0] / 2) == 0.0
    assert ref.cdf(x[-1]) == 1.0 and ref.cdf(x[-1] + 1) == 1.0
    assert abs(ref.cdf(np.median(x)) - 0.5) <= 1 / len(x)


def test_initial_monotonicity(shape_refs):
    # the tolerance absorbs Monte Carlo wiggles of the KDE near zero
    for name, ref in shape_refs.items():
        assert refdist.initial_monotone_extent(ref, 1e-3 * ref.density_values.max()) > 0, name


@pytest.mark.parametrize("name", ["dodecahedron", "tetrahedron"])
def test_sqrt_and_area_densities_agree(shape_refs, name):
    ref = shape_refs[name]
    z = ref.sqrt_samples**2
    direct = stats.gaussian_kde(z[::10])
    zz = np.linspace(0.1 * z[-1], 0.8 * z[-1], 200)
    assert np.abs(refdist.area_density(ref, zz) - direct(zz)).max() < 0.05


def test_round_trip_bit_exact(tmp_path, shape_refs):
    ref = shape_refs["dodecahedron"]
    p = tmp_path / "r.szuf"
    refdist.save_reference(ref, p)
    back = refdist.load_reference(p)
    assert back.sqrt_samples.tobytes() == ref.sqrt_samples.tobytes()
    assert back.key == ref.key and back.bandwidth == ref.bandwidth
    assert np.array_equal(back.density_values, ref.density_values)


def test_round_trip_unfitted(tmp_path):
    ref = refdist.sample_reference(geometry.cube(), 100, make_rng(1))
    p = tmp_path / "u.szuf"
    refdist.save_reference(ref, p)
    back = refdist.load_reference(p)
    assert not back.fitted and np.array_equal(back.sqrt_samples, ref.sqrt_samples)


def test_truncated_file(tmp_path, shape_refs):
    p = tmp_path / "t.szuf"
    refdist.save_reference(shape_refs["cube"], p)
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(refdist.ReferenceFormatError, match="corrupt header"):
        refdist.load_reference(p)
    p.write_bytes(data[:10])
    with pytest.raises(refdist.ReferenceFormatError, match="corrupt header"):
        refdist.load_reference(p)


def test_version_mismatch(tmp_path, shape_refs):
    p = tmp_path / "v.szuf"
    refdist.save_reference(shape_refs["cube"], p)
    data = bytearray(p.read_bytes())
    data[4:8] = struct.pack("<I", refdist.FORMAT_VERSION + 1)
    p.write_bytes(bytes(data))
    with pytest.raises(refdist.ReferenceVersionError):
        refdist.load_reference(p)


def test_cache_rejects_other_shape(tmp_path):
    ref = harness.get_reference("cube", 2000, 0, 1, str(tmp_path))
    path = harness.reference_cache_path(str(tmp_path), "cube", geometry.cube(), 2000, 0, 1)
    # overwrite the cube cache with a tetrahedron reference
    other = refdist.fit_density(refdist.sample_reference(geometry.tetrahedron(), 2000, make_rng(0)))
    refdist.save_reference(other, path)
    again = harness.get_reference("cube", 2000, 0, 1, str(tmp_path))
    assert again.key == geometry.cube().content_hash()
    assert np.array_equal(again.sqrt_samples, ref.sqrt_samples)
