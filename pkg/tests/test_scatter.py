import numpy as np
import pytest
from scipy import stats

from marsim.errors import (
    ArgumentError,
    BadMagicError,
    DegenerateBankError,
    DomainError,
    GeometryError,
)
from marsim.phantom import MATERIAL_TABLE, MaterialPhantom, make_head_phantom
from marsim.projector import FanBeamGeometry
from marsim.scatter import (
    RoiFootprint,
    ScatterBank,
    compton_energy,
    klein_nishina_pdf,
    normalize_scatter,
    read_scatter_bank,
    sample_scatter_angles,
    sample_trace,
    trace_photons,
    write_scatter_bank,
)
from marsim.volume import EnergySpectrum


@pytest.fixture(scope="module")
def head():
    return make_head_phantom()


@pytest.fixture(scope="module")
def head_geom():
    return FanBeamGeometry.for_slice(64, 64, 3.0, 3.0, n_views=8, n_detectors=64)


@pytest.fixture(scope="module")
def head_bank(head, head_geom):
    return trace_photons(head, head_geom, EnergySpectrum.default_140kvp(), 40000, seed=5)


def water_cylinder_phantom(n=32, spacing=3.0):
    gx, gy = np.meshgrid(np.arange(n) - (n - 1) / 2, np.arange(n) - (n - 1) / 2)
    rr = np.hypot(gx, gy) * spacing
    labels = np.zeros((4, n, n), dtype=np.uint8)
    labels[:, rr <= 0.35 * n * spacing] = 1  # water
    return MaterialPhantom(labels, (spacing, spacing, spacing), dict(MATERIAL_TABLE))


class TestComptonEnergy:
    def test_no_deviation(self):
        assert compton_energy(80.0, 0.0) == pytest.approx(80.0, rel=1e-12)

    def test_511_at_half_pi(self):
        assert compton_energy(511.0, np.pi / 2) == pytest.approx(255.5, rel=1e-12)

    def test_511_at_pi(self):
        assert compton_energy(511.0, np.pi) == pytest.approx(511.0 / 3.0, rel=1e-12)

    def test_energy_never_increases(self):
        rng = np.random.default_rng(0)
        e = rng.uniform(1.0, 500.0, 1000)
        beta = rng.uniform(1e-6, np.pi, 1000)
        out = compton_energy(e, beta)
        assert np.all(out < e)
        assert np.all(compton_energy(e, np.zeros_like(e)) == e)

    def test_positive_energy_required(self):
        with pytest.raises(DomainError):
            compton_energy(-5.0, 0.1)


class TestKleinNishinaSampling:
    @pytest.mark.parametrize("energy", [30.0, 70.0, 140.0])
    def test_histogram_matches_density(self, energy):
        n = 1_000_000
        c = sample_scatter_angles(energy, n, seed=17)
        edges = np.linspace(-1.0, 1.0, 41)
        hist, _ = np.histogram(c, bins=edges)
        fine = np.linspace(-1.0, 1.0, 8001)
        pdf = klein_nishina_pdf(fine, energy)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(fine))])
        cdf /= cdf[-1]
        probs = np.diff(np.interp(edges, fine, cdf))
        _, p = stats.chisquare(hist, probs * n)
        assert p > 0.01

    def test_deterministic(self):
        a = sample_scatter_angles(70.0, 1000, seed=3)
        b = sample_scatter_angles(70.0, 1000, seed=3)
        assert np.array_equal(a, b)


class TestTracePhotons:
    def test_vacuum_phantom_no_scatter(self, head_geom):
        labels = np.zeros((4, 64, 64), dtype=np.uint8)
        vac = MaterialPhantom(labels, (3.0, 3.0, 3.0), dict(MATERIAL_TABLE))
        bank = trace_photons(vac, head_geom, EnergySpectrum.default_140kvp(), 20000, seed=1)
        assert bank.primary.mean() > 0
        assert bank.scatter.mean() <= 1e-3 * bank.primary.mean()

    def test_same_seed_identical(self, head, head_geom):
        spec = EnergySpectrum.default_140kvp()
        a = trace_photons(head, head_geom, spec, 20000, seed=9)
        b = trace_photons(head, head_geom, spec, 20000, seed=9)
        assert np.array_equal(a.primary, b.primary)
        assert np.array_equal(a.scatter, b.scatter)

    def test_batch_size_invariance(self, head, head_geom):
        spec = EnergySpectrum.default_140kvp()
        a = trace_photons(head, head_geom, spec, 20000, seed=9)
        c = trace_photons(head, head_geom, spec, 20000, seed=9, batch_size=3001)
        assert np.allclose(a.primary, c.primary)
        assert np.allclose(a.scatter, c.scatter)

    def test_history_counting(self, head_geom):
        phantom = water_cylinder_phantom()
        geom = FanBeamGeometry.for_slice(32, 32, 3.0, 3.0, n_views=4, n_detectors=32)
        bank = trace_photons(phantom, geom, EnergySpectrum.mono(70.0), 1001, seed=0)
        # distributed evenly across views, rounded up
        assert bank.n_histories == 4 * int(np.ceil(1001 / 4))

    def test_convergence_one_over_sqrt_n(self):
        phantom = water_cylinder_phantom()
        geom = FanBeamGeometry.for_slice(32, 32, 3.0, 3.0, n_views=4, n_detectors=32)
        spec = EnergySpectrum.mono(70.0)
        rel_se = []
        for n in (4000, 16000):
            means = [
                trace_photons(phantom, geom, spec, n, seed=100 + r).scatter.mean()
                for r in range(10)
            ]
            means = np.array(means)
            rel_se.append(means.std(ddof=1) / means.mean())
        ratio = rel_se[0] / rel_se[1]
        assert 1.0 <= ratio <= 4.0  # expected 2, within factor 2

    def test_requires_positive_histories(self, head, head_geom):
        with pytest.raises(ArgumentError):
            trace_photons(head, head_geom, EnergySpectrum.mono(70.0), 0)


class TestNormalizeScatter:
    def test_exact_ratio(self, head_bank):
        for alpha in (0.001, 0.01, 0.02):
            s = normalize_scatter(head_bank, alpha)
            assert s.data.mean() / head_bank.primary.mean() == pytest.approx(alpha, abs=1e-14)

    def test_alpha_out_of_range_rejected(self, head_bank):
        with pytest.raises(ArgumentError):
            normalize_scatter(head_bank, 0.0005)
        with pytest.raises(ArgumentError):
            normalize_scatter(head_bank, 0.03)

    def test_degenerate_bank_rejected(self, head_geom):
        zero = ScatterBank(
            geometry=head_geom,
            primary=np.ones((head_geom.n_views, head_geom.n_detectors)),
            scatter=np.zeros((head_geom.n_views, head_geom.n_detectors)),
            n_histories=10,
            rng_seed=0,
        )
        with pytest.raises(DegenerateBankError):
            normalize_scatter(zero, 0.01)


class TestSampleTrace:
    def test_full_footprint_identity(self, head_bank, head_geom):
        roi = RoiFootprint((0.0, 0.0), head_geom.coverage_radius_mm)
        out = sample_trace(head_bank, roi, head_geom, roll=0)
        assert np.abs(out.data - head_bank.scatter).max() == 0.0

    def test_nonnegative(self, head_bank, head_geom):
        out = sample_trace(head_bank, RoiFootprint.default_head_roi(), head_geom, seed=3)
        assert out.data.min() >= 0.0

    def test_seeds_pick_different_offsets(self, head_bank, head_geom):
        roi = RoiFootprint.default_head_roi()
        outs = set()
        for seed in range(100):
            out = sample_trace(head_bank, roi, head_geom, seed=seed)
            outs.add(out.data.tobytes())
        assert len(outs) >= 2

    def test_footprint_outside_arc_rejected(self, head_bank, head_geom):
        big = RoiFootprint((0.0, 0.0), head_geom.coverage_radius_mm * 2.5)
        with pytest.raises(GeometryError):
            sample_trace(head_bank, big, head_geom, roll=0)

    def test_resample_to_other_geometry(self, head_bank):
        target = FanBeamGeometry.for_slice(40, 40, 0.3, 0.3, n_views=20, n_detectors=48)
        out = sample_trace(head_bank, RoiFootprint.default_head_roi(), target, seed=1)
        assert out.data.shape == (20, 48)
        assert out.data.min() >= 0.0


class TestBankIO:
    def test_roundtrip(self, head_bank, tmp_path):
        p = tmp_path / "bank.marb"
        write_scatter_bank(head_bank, p)
        got = read_scatter_bank(p)
        assert got.n_histories == head_bank.n_histories
        assert got.rng_seed == head_bank.rng_seed
        assert got.phantom_id == head_bank.phantom_id
        assert np.allclose(got.primary, head_bank.primary, rtol=1e-6)
        assert np.allclose(got.scatter, head_bank.scatter, rtol=1e-6)
        assert got.geometry.n_views == head_bank.geometry.n_views

    def test_bad_magic(self, head_bank, tmp_path):
        p = tmp_path / "bank.marb"
        write_scatter_bank(head_bank, p)
        blob = bytearray(p.read_bytes())
        blob[0] = 0x41
        p.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            read_scatter_bank(p)
