import numpy as np
import pytest

from marsim.errors import ArgumentError, DomainError
from marsim.quality import (
    gan_losses,
    gaussian_blur_3d,
    metric_report_lines,
    metrics,
    positive_shift,
    retinex_loss,
    retinex_reflectance,
    _gaussian_kernel,
)
from marsim.volume import Volume3D, VolumeKind


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestMetrics:
    def test_identical(self, rng):
        a = rng.random((6, 7, 8))
        rep = metrics(a, a.copy())
        assert rep.rmse == 0.0
        assert rep.ssim == 1.0
        assert rep.identical
        assert rep.psnr_db == 99.0

    def test_offset_closed_form(self, rng):
        a = rng.random((8, 8, 8)) * 0.8
        rep = metrics(a, a + 0.1)
        assert rep.rmse == pytest.approx(0.1, abs=1e-12)
        assert rep.psnr_db == pytest.approx(20.0, abs=1e-6)

    def test_symmetry(self, rng):
        a = rng.random((6, 6, 6))
        b = rng.random((6, 6, 6))
        r1 = metrics(a, b)
        r2 = metrics(b, a)
        assert r1.rmse == r2.rmse
        assert r1.ssim == pytest.approx(r2.ssim, abs=1e-12)
        assert r1.psnr_db == r2.psnr_db

    def test_volume_kind_enforced(self, rng):
        hu = Volume3D(rng.random((4, 4, 4)) * 100, (1, 1, 1), VolumeKind.HU)
        norm = Volume3D(rng.random((4, 4, 4)), (1, 1, 1), VolumeKind.NORMALIZED)
        with pytest.raises(ArgumentError):
            metrics(hu, norm)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ArgumentError):
            metrics(rng.random((4, 4, 4)), rng.random((4, 4, 5)))

    def test_per_slice(self, rng):
        a = rng.random((5, 6, 6))
        rep = metrics(a, np.clip(a + 0.05, 0, 1), per_slice=True)
        assert len(rep.per_slice) == 5
        assert all(s.rmse > 0 for s in rep.per_slice)

    def test_ssim_affine_rescale_tolerance(self, rng):
        a = rng.random((8, 8, 8))
        b = np.clip(0.9 * a + 0.05, 0, 1)
        rep = metrics(a, b)
        assert rep.ssim > 0.9

    def test_report_lines(self, rng):
        a = rng.random((4, 4, 4))
        lines = metric_report_lines(metrics(a, a), prefix="ctrl")
        assert "ctrl.rmse=0" in lines[1]
        assert "ctrl.identical=true" in lines[3]


class TestGaussianBlur:
    def test_constant_preserved(self):
        c = np.full((6, 6, 6), 3.7)
        assert np.abs(gaussian_blur_3d(c, 1.5) - 3.7).max() < 1e-6

    def test_delta_separable_closed_form(self):
        d = np.zeros((15, 15, 15))
        d[7, 7, 7] = 1.0
        out = gaussian_blur_3d(d, 1.2)
        k = _gaussian_kernel(1.2)
        assert out[7, 7, 7] == pytest.approx(k[len(k) // 2] ** 3, rel=1e-12)

    def test_mean_preserved_interior_support(self, rng):
        a = np.zeros((20, 20, 20))
        a[8:12, 8:12, 8:12] = rng.random((4, 4, 4))
        out = gaussian_blur_3d(a, 1.0)
        assert out.mean() == pytest.approx(a.mean(), abs=1e-4)

    def test_volume_kind_preserved(self, rng):
        v = Volume3D(rng.random((6, 6, 6)), (1, 1, 1), VolumeKind.NORMALIZED)
        out = gaussian_blur_3d(v, 1.0)
        assert isinstance(out, Volume3D)
        assert out.kind == VolumeKind.NORMALIZED

    def test_mask_rejected(self):
        v = Volume3D(np.ones((4, 4, 4)), (1, 1, 1), VolumeKind.MASK)
        with pytest.raises(ArgumentError):
            gaussian_blur_3d(v, 1.0)

    def test_sigma_positive(self):
        with pytest.raises(ArgumentError):
            gaussian_blur_3d(np.ones((4, 4, 4)), 0.0)


class TestRetinex:
    def test_constant_reflectance_is_one(self):
        c = np.full((8, 8, 8), 0.25)
        assert np.abs(retinex_reflectance(c, 2.0) - 1.0).max() == 0.0

    def test_scale_invariance(self, rng):
        x = rng.random((8, 8, 8)) + 0.5
        r1 = retinex_reflectance(x, 2.0)
        r2 = retinex_reflectance(123.4 * x, 2.0)
        assert np.abs(r1 - r2).max() < 1e-6

    def test_checkerboard_alternates(self):
        idx = np.indices((8, 8, 8)).sum(axis=0)
        x = np.where(idx % 2 == 0, 1.0, 0.2)
        r = retinex_reflectance(x, 1.0)
        hi = r[idx % 2 == 0]
        lo = r[idx % 2 == 1]
        assert hi.mean() > 1.0 > lo.mean()

    def test_nonpositive_rejected(self):
        x = np.full((4, 4, 4), 0.5)
        x[0, 0, 0] = 0.0
        with pytest.raises(DomainError):
            retinex_reflectance(x, 1.0)

    def test_loss_zero_for_unit_input(self):
        g = np.ones((6, 6, 6))
        y = np.full((6, 6, 6), 0.3)
        assert retinex_loss(g, y, 2.0) == 0.0

    def test_loss_closed_form_constant(self):
        g = np.full((6, 6, 6), 0.7)
        y = np.ones((6, 6, 6))
        assert retinex_loss(g, y, 2.0) == pytest.approx(0.3, abs=1e-9)

    def test_loss_nonnegative(self, rng):
        g = rng.random((6, 6, 6)) + 0.1
        y = rng.normal(size=(6, 6, 6))
        assert retinex_loss(g, y, 1.5) >= 0.0

    def test_positive_shift_range(self, rng):
        a = rng.random((5, 5, 5))
        s = positive_shift(a)
        assert s.min() >= 1e-6
        assert s.max() <= 1.0


class TestGanLosses:
    def test_half_half_disc_loss(self, rng):
        g = positive_shift(rng.random((4, 4, 4)))
        out = gan_losses(np.full(3, 0.5), np.full(3, 0.5), g, g, g, alpha=0.0)
        assert out.l_disc == pytest.approx(2.0 * np.log(0.5), rel=1e-12)

    def test_perfect_generator(self, rng):
        a = positive_shift(rng.random((4, 4, 4)))
        eps = 1e-9
        out = gan_losses(np.array([0.9]), np.array([1.0 - eps]), a, a, a, alpha=2.0)
        assert out.l_mse == 0.0
        assert out.l_adv == pytest.approx(0.0, abs=1e-17)
        assert out.l_gen == pytest.approx(2.0 * out.l_retinex, rel=1e-9)

    def test_alpha_zero_excludes_retinex(self, rng):
        g = positive_shift(rng.random((4, 4, 4)))
        t = positive_shift(rng.random((4, 4, 4)))
        out = gan_losses(np.array([0.6]), np.array([0.4]), g, t, t, alpha=0.0)
        assert out.l_retinex > 0.0
        assert out.l_gen == pytest.approx(out.l_mse + out.l_adv, rel=1e-12)

    def test_domain_validation(self, rng):
        g = positive_shift(rng.random((4, 4, 4)))
        with pytest.raises(DomainError):
            gan_losses(np.array([1.0]), np.array([0.5]), g, g, g, alpha=0.0)
        with pytest.raises(DomainError):
            gan_losses(np.array([0.5]), np.array([0.0]), g, g, g, alpha=0.0)
        with pytest.raises(ArgumentError):
            gan_losses(np.array([0.5]), np.array([0.5]), g, g, g, alpha=-1.0)


class TestFiniteDifferenceConsistency:
    """Directional finite differences of the loss operators at two step
    sizes must agree after Richardson extrapolation."""

    @staticmethod
    def _directional_check(fn, x, direction, h):
        d1 = (fn(x + h * direction) - fn(x - h * direction)) / (2 * h)
        h2 = h / 2
        d2 = (fn(x + h2 * direction) - fn(x - h2 * direction)) / (2 * h2)
        richardson = (4.0 * d2 - d1) / 3.0
        # both estimates must be consistent with the extrapolated limit
        assert abs(d2 - richardson) <= abs(d1 - richardson) + 1e-12
        assert abs(d1 - richardson) <= 1e-4 * max(1.0, abs(richardson))

    def test_mse_gradient(self, rng):
        t = rng.random((8, 8, 8))
        x = rng.random((8, 8, 8))
        v = rng.normal(size=(8, 8, 8))
        v /= np.linalg.norm(v)
        self._directional_check(lambda g: float(np.mean((t - g) ** 2)), x, v, 1e-3)

    def test_retinex_loss_gradient(self, rng):
        x = rng.random((8, 8, 8)) * 0.5 + 0.3
        y = np.full((8, 8, 8), 0.8)
        v = rng.normal(size=(8, 8, 8))
        v /= np.linalg.norm(v)
        self._directional_check(lambda g: retinex_loss(g, y, 2.0), x, v, 1e-4)
