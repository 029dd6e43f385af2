"""Dataset generation, baseline evaluation and slice export.

``cmd_generate`` builds paired samples (clean / artifact / augmented target)
from seeded random spiral phantoms; ``cmd_evaluate`` runs MAR baselines over
a manifest and emits metric tables in CSV form; ``cmd_export_slices`` writes
windowed 8-bit PGM images for figure panels.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_METAL_THRESHOLD_HU, run_baseline
from .configfile import ConfigView, parse_config_file
from .errors import ArgumentError, ConfigError, MarsimError
from .phantom import (
    CochleaSpiral,
    electrode_mask,
    insert_metal,
    make_cochlea_volume,
    augment_target,
    place_electrodes,
    signed_distance,
)
from .physics import ALPHA_R_MAX, ALPHA_R_MIN, SimulationConfig, simulate_artifacts
from .quality import MetricReport, metrics
from .rng import CounterRNG, derive_seed
from .scatter import RoiFootprint, read_scatter_bank
from .volume import (
    EnergySpectrum,
    VolumeKind,
    WaterMuTable,
    normalize_for_metrics,
    read_volume,
    write_volume,
)

_TAG_SAMPLE = 201
_TAG_SPIRAL = 202
_TAG_ALPHA = 203

EVALUATION_METHODS = ("li", "bhc", "nmar", "external")
UNTREATED = "untreated"


@dataclass(frozen=True)
class PipelineConfig:
    # dataset
    n_volumes: int = 20
    out_dir: str = "dataset"
    seed: int = 1234
    workers: int = 1
    # grid
    dims: tuple[int, int, int] = (60, 50, 50)
    spacing: tuple[float, float, float] = (0.2, 0.2, 0.2)
    # spiral phantom
    spiral: CochleaSpiral = field(default_factory=CochleaSpiral)
    jitter_fraction: float = 0.15
    # electrodes
    electrode_count: int = 12
    electrode_pitch_mm: float = 1.0
    electrode_offset_mm: float = 1.0
    tube_threshold_mm: float = -0.15
    # simulation
    spectrum: EnergySpectrum = field(default_factory=EnergySpectrum.default_140kvp)
    n_views: int = 360
    n_detectors: int | None = None
    noise_sigma2: float = 0.04
    alpha_r: float | str = "random"
    scatter_enabled: bool = False
    scatter_bank_path: str | None = None
    scatter_roi: tuple[float, float, float] = (48.0, 0.0, 12.0)  # cx, cy, radius mm
    water_mu_path: str | None = None

    def __post_init__(self):
        if self.n_volumes < 1:
            raise ConfigError("dataset.n_volumes must be >= 1")
        if self.workers < 1:
            raise ConfigError("dataset.workers must be >= 1")
        if not 0 <= self.jitter_fraction < 1:
            raise ConfigError("spiral.jitter_fraction must be in [0, 1)")
        if self.scatter_enabled and not self.scatter_bank_path:
            raise ConfigError("scatter enabled but scatter.bank_path not set")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        view = ConfigView(parse_config_file(path))
        base = Path(path).parent

        def respath(p):
            if p is None:
                return None
            q = Path(p)
            return str(q if q.is_absolute() else base / q)

        dims = (
            view.get_int("grid.nx", 60),
            view.get_int("grid.ny", 50),
            view.get_int("grid.nz", 50),
        )
        spacing = (
            view.get_float("grid.spacing_x_mm", 0.2),
            view.get_float("grid.spacing_y_mm", 0.2),
            view.get_float("grid.spacing_z_mm", 0.2),
        )
        spiral = CochleaSpiral(
            basal_radius_mm=view.get_float("spiral.basal_radius_mm", 2.8),
            taper_rate=view.get_float("spiral.taper_rate", 0.12),
            turns=view.get_float("spiral.turns", 2.5),
            height_mm=view.get_float("spiral.height_mm", 4.0),
            duct_radius_mm=view.get_float("spiral.duct_radius_mm", 0.5),
        )
        energies = view.get_float_list("spectrum.energies_kev")
        weights = view.get_float_list("spectrum.weights")
        if (energies is None) != (weights is None):
            raise ConfigError("spectrum.energies_kev and spectrum.weights go together")
        spectrum = (
            EnergySpectrum(np.array(energies), np.array(weights))
            if energies is not None
            else EnergySpectrum.default_140kvp()
        )
        alpha_raw = view.get_str("sim.alpha_r", "random")
        alpha_r: float | str
        if alpha_raw == "random":
            alpha_r = "random"
        else:
            try:
                alpha_r = float(alpha_raw)
            except ValueError:
                raise ConfigError(f"sim.alpha_r: expected number or 'random', got {alpha_raw!r}") from None
        cfg = cls(
            n_volumes=view.get_int("dataset.n_volumes", 20),
            out_dir=respath(view.get_str("dataset.out_dir", "dataset")),
            seed=view.get_int("dataset.seed", 1234),
            workers=view.get_int("dataset.workers", 1),
            dims=dims,
            spacing=spacing,
            spiral=spiral,
            jitter_fraction=view.get_float("spiral.jitter_fraction", 0.15),
            electrode_count=view.get_int("electrodes.count", 12),
            electrode_pitch_mm=view.get_float("electrodes.pitch_mm", 1.0),
            electrode_offset_mm=view.get_float("electrodes.offset_mm", 1.0),
            tube_threshold_mm=view.get_float("electrodes.tube_threshold_mm", -0.15),
            spectrum=spectrum,
            n_views=view.get_int("sim.n_views", 360),
            n_detectors=view.get_int("sim.n_detectors", None),
            noise_sigma2=view.get_float("sim.noise_sigma2", 0.04),
            alpha_r=alpha_r,
            scatter_enabled=view.get_bool("sim.scatter_enabled", False),
            scatter_bank_path=respath(view.get_str("scatter.bank_path", None)),
            scatter_roi=(
                view.get_float("scatter.roi_center_x_mm", 48.0),
                view.get_float("scatter.roi_center_y_mm", 0.0),
                view.get_float("scatter.roi_radius_mm", 12.0),
            ),
            water_mu_path=respath(view.get_str("paths.water_mu_table", None)),
        )
        view.reject_unknown()
        return cfg

    def validate_files(self):
        """All referenced files must exist at run start."""
        if self.water_mu_path and not Path(self.water_mu_path).is_file():
            raise ConfigError(f"water table not found: {self.water_mu_path}")
        if self.scatter_enabled and not Path(self.scatter_bank_path).is_file():
            raise ConfigError(f"scatter bank not found: {self.scatter_bank_path}")

    def water_table(self) -> WaterMuTable:
        if self.water_mu_path:
            return WaterMuTable.from_file(self.water_mu_path)
        return WaterMuTable.default()


@dataclass(frozen=True)
class PairedSample:
    index: int
    clean: str
    artifact: str
    target: str
    alpha_r: float
    seed: int


@dataclass(frozen=True)
class GenerateResult:
    manifest_path: str
    samples: tuple[PairedSample, ...]
    failures: tuple[str, ...]


def _jittered_spiral(base: CochleaSpiral, frac: float, rng: CounterRNG, stream: int) -> CochleaSpiral:
    if frac == 0:
        return base
    u = rng.uniform_words(np.uint64(stream), np.uint64(0), 3)
    factors = 1.0 + frac * (2.0 * u - 1.0)
    return replace(
        base,
        basal_radius_mm=base.basal_radius_mm * float(factors[0]),
        turns=min(base.turns * float(factors[1]), 3.0),
        height_mm=base.height_mm * float(factors[2]),
    )


def _build_sample(cfg: PipelineConfig, index: int, out_dir: Path, bank, table) -> PairedSample:
    sample_seed = derive_seed(cfg.seed, _TAG_SAMPLE, index)
    spiral = _jittered_spiral(
        cfg.spiral, cfg.jitter_fraction, CounterRNG(derive_seed(sample_seed, _TAG_SPIRAL)), 0
    )
    line = spiral.centerline(512)
    sdf = signed_distance(line, cfg.dims, cfg.spacing, spiral.duct_radius_mm)
    clean = make_cochlea_volume(spiral, cfg.dims, cfg.spacing, sdf=sdf)
    tube = electrode_mask(sdf, cfg.tube_threshold_mm)
    with_metal = insert_metal(clean, tube)
    electrodes = place_electrodes(
        spiral, cfg.electrode_count, cfg.electrode_pitch_mm, cfg.electrode_offset_mm
    )
    target = augment_target(clean, electrodes)

    if cfg.alpha_r == "random":
        u = float(CounterRNG(derive_seed(sample_seed, _TAG_ALPHA)).uniform(0, 0))
        alpha = ALPHA_R_MIN + u * (ALPHA_R_MAX - ALPHA_R_MIN)
    else:
        alpha = float(cfg.alpha_r)

    sim = SimulationConfig(
        spectrum=cfg.spectrum,
        scatter_enabled=cfg.scatter_enabled,
        alpha_r=alpha,
        noise_sigma2=cfg.noise_sigma2,
        rng_seed=sample_seed,
        n_views=cfg.n_views,
        n_detectors=cfg.n_detectors,
    )
    roi = RoiFootprint(cfg.scatter_roi[:2], cfg.scatter_roi[2]) if cfg.scatter_enabled else None
    artifact = simulate_artifacts(with_metal, sim, scatter_bank=bank, table=table, scatter_roi=roi)

    names = {
        "clean": f"sample_{index:04d}_clean.marv",
        "artifact": f"sample_{index:04d}_artifact.marv",
        "target": f"sample_{index:04d}_target.marv",
    }
    write_volume(clean, out_dir / names["clean"])
    write_volume(artifact, out_dir / names["artifact"])
    write_volume(target, out_dir / names["target"])
    return PairedSample(index, names["clean"], names["artifact"], names["target"], alpha, sample_seed)


def cmd_generate(cfg: PipelineConfig, workers: int | None = None) -> GenerateResult:
    """Generate the paired dataset described by ``cfg`` and its manifest.

    Samples are independent and seeded per index, so results are
    byte-identical for a fixed config regardless of worker count."""
    cfg.validate_files()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = cfg.water_table()
    bank = read_scatter_bank(cfg.scatter_bank_path) if cfg.scatter_enabled else None
    n_workers = cfg.workers if workers is None else max(1, int(workers))

    results: dict[int, PairedSample] = {}
    failures: dict[int, str] = {}

    def build(i: int):
        try:
            return i, _build_sample(cfg, i, out_dir, bank, table), None
        except MarsimError as e:
            return i, None, f"{type(e).__name__}: {e}"

    if n_workers == 1:
        outcomes = [build(i) for i in range(cfg.n_volumes)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(build, range(cfg.n_volumes)))
    for i, sample, err in outcomes:
        if err is None:
            results[i] = sample
        else:
            failures[i] = err

    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", newline="") as fh:
        fh.write("# index\tclean\tartifact\ttarget\talpha_r\tseed\n")
        for i in range(cfg.n_volumes):
            if i in failures:
                fh.write(f"# sample {i} failed: {failures[i]}\n")
            else:
                s = results[i]
                fh.write(
                    f"{s.index}\t{s.clean}\t{s.artifact}\t{s.target}\t"
                    f"{s.alpha_r:.12g}\t{s.seed}\n"
                )
    return GenerateResult(
        str(manifest),
        tuple(results[i] for i in sorted(results)),
        tuple(f"sample {i}: {failures[i]}" for i in sorted(failures)),
    )


def read_manifest(path) -> list[PairedSample]:
    p = Path(path)
    if not p.is_file():
        raise ArgumentError(f"manifest not found: {p}")
    samples = []
    for raw in p.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ArgumentError(f"bad manifest row: {raw!r}")
        samples.append(
            PairedSample(int(cols[0]), cols[1], cols[2], cols[3], float(cols[4]), int(cols[5]))
        )
    return samples


@dataclass(frozen=True)
class MetricRow:
    volume_id: str
    method: str
    psnr_db: float | None
    rmse: float | None
    ssim: float | None
    skipped: bool = False


@dataclass(frozen=True)
class EvaluateResult:
    table_path: str
    per_slice_path: str
    rows: tuple[MetricRow, ...]

    def aggregate(self, method: str) -> MetricRow:
        for r in self.rows:
            if r.volume_id == "mean" and r.method == method:
                return r
        raise KeyError(method)


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_evaluate(
    manifest_path,
    methods: list[str],
    out_csv,
    external_dir=None,
    hu_threshold: float = DEFAULT_METAL_THRESHOLD_HU,
    n_views: int | None = None,
) -> EvaluateResult:
    """Run baselines over every manifest sample and emit metric tables.

    Writes ``out_csv`` (volume_id, method, psnr, rmse, ssim; one row per
    volume and method plus 'mean' aggregate rows) and a companion
    ``*_slices.csv`` with per-slice series."""
    for m in methods:
        if m not in EVALUATION_METHODS:
            raise ArgumentError(f"unknown method {m!r}; choose from {EVALUATION_METHODS}")
    if "external" in methods and external_dir is None:
        raise ArgumentError("method 'external' requires external_dir")
    samples = read_manifest(manifest_path)
    if not samples:
        raise ArgumentError(f"manifest {manifest_path} has no samples")
    base = Path(manifest_path).parent

    rows: list[MetricRow] = []
    slice_rows: list[tuple[str, str, int, float, float, float]] = []
    sums: dict[str, list[float]] = {}

    def record(vid: str, method: str, rep: MetricReport | None):
        if rep is None:
            rows.append(MetricRow(vid, method, None, None, None, skipped=True))
            return
        rows.append(MetricRow(vid, method, rep.psnr_db, rep.rmse, rep.ssim))
        sums.setdefault(method, []).append((rep.psnr_db, rep.rmse, rep.ssim))
        for s in rep.per_slice:
            slice_rows.append((vid, method, s.slice_index, s.psnr_db, s.rmse, s.ssim))

    geom_kwargs = {} if n_views is None else {"n_views": n_views}

    for s in samples:
        vid = f"{s.index:04d}"
        clean = read_volume(base / s.clean)
        artifact = read_volume(base / s.artifact)
        clean_n = normalize_for_metrics(clean)
        record(vid, UNTREATED, metrics(normalize_for_metrics(artifact), clean_n, per_slice=True))
        for method in methods:
            if method == "external":
                ext = Path(external_dir) / f"sample_{s.index:04d}_mar.marv"
                if not ext.is_file():
                    record(vid, method, None)
                    continue
                out_vol = read_volume(ext)
                if out_vol.kind == VolumeKind.NORMALIZED:
                    record(vid, method, metrics(out_vol, clean_n, per_slice=True))
                    continue
            else:
                geom = None
                if geom_kwargs:
                    from .projector import FanBeamGeometry

                    nx, ny, _ = artifact.dims
                    geom = FanBeamGeometry.for_slice(
                        nx, ny, artifact.spacing[0], artifact.spacing[1], **geom_kwargs
                    )
                out_vol = run_baseline(artifact, method, hu_threshold=hu_threshold, geom=geom)
            record(vid, method, metrics(normalize_for_metrics(out_vol), clean_n, per_slice=True))

    for method in [UNTREATED] + list(methods):
        vals = sums.get(method)
        if not vals:
            rows.append(MetricRow("mean", method, None, None, None, skipped=True))
            continue
        arr = np.array(vals)
        rows.append(MetricRow("mean", method, *(float(x) for x in arr.mean(axis=0))))

    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["volume_id", "method", "psnr", "rmse", "ssim"])
        for r in rows:
            w.writerow([r.volume_id, r.method, _fmt(r.psnr_db), _fmt(r.rmse), _fmt(r.ssim)])
    per_slice_path = out_csv.with_name(out_csv.stem + "_slices.csv")
    with open(per_slice_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["volume_id", "method", "slice", "psnr", "rmse", "ssim"])
        for vid, method, z, p, r_, s_ in slice_rows:
            w.writerow([vid, method, z, _fmt(p), _fmt(r_), _fmt(s_)])

    return EvaluateResult(str(out_csv), str(per_slice_path), tuple(rows))


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ArgumentError("write_pgm expects a 2-D uint8 array")
    h, wdt = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{wdt} {h}\n255\n".encode())
        fh.write(img.tobytes())


def hu_window_to_u8(slice2d: np.ndarray) -> np.ndarray:
    """Window [-1000, 3071] HU to [0, 255] with round-half-up."""
    scaled = (np.asarray(slice2d, dtype=np.float64) + 1000.0) / 4071.0 * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def cmd_export_slices(volume_path, axis: str, indices: list[int], out_dir) -> list[str]:
    """Export selected slices of a volume as windowed PGM images."""
    vol = read_volume(volume_path)
    nx, ny, nz = vol.dims
    sizes = {"x": nx, "y": ny, "z": nz}
    if axis not in sizes:
        raise ArgumentError(f"axis must be one of x, y, z; got {axis!r}")
    limit = sizes[axis]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for idx in indices:
        if not 0 <= idx < limit:
            raise ArgumentError(f"index {idx} out of range for axis {axis} (size {limit})")
        if axis == "z":
            sl = vol.data[idx]
        elif axis == "y":
            sl = vol.data[:, idx, :]
        else:
            sl = vol.data[:, :, idx]
        name = f"slice_{axis}{idx:04d}.pgm"
        write_pgm(hu_window_to_u8(sl), out_dir / name)
        files.append(str(out_dir / name))
    return files
