"""Config-driven experiments: phantoms, simulated views, preprocessing, training and reports.

Every command takes an :class:`ExperimentConfig` (or explicit paths) and
writes its artifacts under ``output_dir``:

    phantoms/phantom_000.rv1 ... + manifest.json
    views/vol_000_view_a.rv1, vol_000_view_b.rv1, vol_000_psf_a.rv1, ... + manifest.json
    train/vol_000/<method>.pt + history.json
    recon/vol_000_<method>.rv1
    figures/vol_000_<method>.png
    metrics.json, summary.txt
"""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import metrics
from .classical import RLConfig, fuse_average, joint_richardson_lucy
from .errors import ConfigError, DualCycleError, NormalizationError, TrainingFault
from .forward import (
    AffineMismatchSpec,
    AffineTransform,
    NoiseSpec,
    ViewPair,
    delta_psf,
    gaussian_psf,
    load_psf,
    register_views,
    save_psf,
    simulate_views,
)
from .phantom import PhantomSpec, generate_dataset
from .volume import SliceSpec, Volume3D, extract_slice, load_volume, max_intensity_projection, \
    resample_isotropic, save_volume

log = logging.getLogger(__name__)

METHODS = ("view_a", "view_b", "fuse_average", "joint_rl", "dual_cycle", "single_view_ablation")
TRAINED_METHODS = ("dual_cycle", "single_view_ablation")

REPORT_NOTES = [
    "inputs registered to the ground-truth frame with the known simulation transforms before evaluation",
    "no denoising step is applied during preprocessing",
]


@dataclass
class SimulationConfig:
    sigma_a: object = 3.0  # number, or [lo, hi] sampled per volume; 0 selects a delta PSF
    sigma_b: object = 3.0
    mismatch: dict = field(default_factory=lambda: {"matrix_perturbation_bound": 0.0025, "translation_bound": 0.05})
    noise: dict = field(default_factory=lambda: {"model": "none", "sigma": 0.0})
    apply_rotation: bool = False
    register_mismatch: bool = True


@dataclass
class ExperimentConfig:
    phantoms: List[dict] = field(default_factory=lambda: [{} for _ in range(6)])
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    rl: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    output_dir: str = "out"
    seed: int = 0
    figures: bool = True

    # -- serialization --
    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = copy.deepcopy(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sim = d.pop("simulation", {})
        if not isinstance(sim, dict):
            raise ConfigError("simulation must be an object")
        unknown = set(sim) - set(SimulationConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        cfg = cls(simulation=SimulationConfig(**sim), **d)
        cfg.validate()
        return cfg

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(raw)

    # -- derived objects --
    def phantom_specs(self) -> List[PhantomSpec]:
        specs = []
        for i, p in enumerate(self.phantoms):
            p = dict(p)
            p.setdefault("seed", self.seed + i)
            specs.append(PhantomSpec.from_dict(p))
        return specs

    def sigmas(self, i):
        out = []
        for stream, s in enumerate((self.simulation.sigma_a, self.simulation.sigma_b)):
            if isinstance(s, (list, tuple)):
                rng = np.random.default_rng([self.seed + i, 100 + stream])
                out.append(float(rng.uniform(s[0], s[1])))
            else:
                out.append(float(s))
        return out

    def mismatch_spec(self, i):
        return AffineMismatchSpec(seed=self.seed + i, **self.simulation.mismatch)

    def noise_spec(self, i):
        return NoiseSpec(seed=self.seed + i, **self.simulation.noise)

    def rl_config(self):
        return RLConfig(**self.rl)

    def train_config(self, i, single_view=False, **overrides):
        from .network import TrainConfig

        d = dict(self.train)
        d["seed"] = int(d.get("seed", 0)) + self.seed + i
        d["single_view"] = single_view
        d.update(overrides)
        return TrainConfig.from_dict(d)

    def validate(self):
        try:
            if not self.phantoms:
                raise ConfigError("at least one phantom is required")
            self.phantom_specs()
            for i in range(len(self.phantoms)):
                for s in self.sigmas(i):
                    if not s >= 0:
                        raise ConfigError("PSF sigma must be >= 0")
                self.mismatch_spec(i)
                self.noise_spec(i)
            self.rl_config()
            bad = [m for m in self.methods if m not in METHODS]
            if bad or not self.methods:
                raise ConfigError(f"unknown or empty methods: {bad}; choose from {METHODS}")
            if any(m in TRAINED_METHODS for m in self.methods) or self.train:
                tc = self.train_config(0)
                if tc.warm_start and not Path(tc.warm_start).exists():
                    raise ConfigError(f"warm_start checkpoint not found: {tc.warm_start}")
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None


def default_config(**overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(**overrides)
    cfg.validate()
    return cfg


# -- helpers ---------------------------------------------------------------

def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"missing file: {path}") from None


class DataError(DualCycleError):
    """Input data required by a command is missing or unusable."""


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise DataError(f"missing file: {path}")
    return Path(path)


# -- commands --------------------------------------------------------------

def cmd_phantom(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir) / "phantoms"
    out.mkdir(parents=True, exist_ok=True)
    specs = config.phantom_specs()
    volumes = generate_dataset(specs)
    entries = []
    for i, (spec, v) in enumerate(zip(specs, volumes)):
        name = f"phantom_{i:03d}.rv1"
        save_volume(v, out / name)
        entries.append({"volume_id": i, "file": name, "spec": spec.to_dict()})
    _write_json(out / "manifest.json", {"volumes": entries})
    return out / "manifest.json"


def cmd_simulate(config: ExperimentConfig) -> Path:
    root = Path(config.output_dir)
    manifest = _read_json(root / "phantoms" / "manifest.json")
    out = root / "views"
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest["volumes"]:
        i = entry["volume_id"]
        u = load_volume(_require(root / "phantoms" / entry["file"]))
        sa, sb = config.sigmas(i)
        psf_a, psf_b = _psf(sa, "z"), _psf(sb, "x")
        pair = simulate_views(u, psf_a, psf_b, config.mismatch_spec(i), config.noise_spec(i),
                              config.simulation.apply_rotation)
        stem = f"vol_{i:03d}"
        files = {k: f"{stem}_{k}.rv1" for k in ("view_a", "view_b", "psf_a", "psf_b")}
        save_volume(pair.view_a, out / files["view_a"])
        save_volume(pair.view_b, out / files["view_b"])
        save_psf(psf_a, out / files["psf_a"])
        save_psf(psf_b, out / files["psf_b"])
        entries.append({
            "volume_id": i,
            "ground_truth": f"../phantoms/{entry['file']}",
            "files": files,
            "sigma_a": sa,
            "sigma_b": sb,
            "mismatch_a": pair.mismatch_a.to_dict(),
            "mismatch_b": pair.mismatch_b.to_dict(),
            "noise": asdict(pair.noise),
            "rotated": pair.rotated,
        })
    _write_json(out / "manifest.json", {"views": entries})
    return out / "manifest.json"


def _psf(sigma, axis):
    return gaussian_psf(sigma, axis) if sigma > 0 else delta_psf(axis)


def load_view_pair(views_dir: Path, entry: dict) -> ViewPair:
    f = entry["files"]
    return ViewPair(
        view_a=load_volume(_require(views_dir / f["view_a"])),
        view_b=load_volume(_require(views_dir / f["view_b"])),
        psf_a=load_psf(_require(views_dir / f["psf_a"])),
        psf_b=load_psf(_require(views_dir / f["psf_b"])),
        mismatch_a=AffineTransform.from_dict(entry["mismatch_a"]),
        mismatch_b=AffineTransform.from_dict(entry["mismatch_b"]),
        noise=NoiseSpec(**entry["noise"]),
        rotated=entry["rotated"],
    )


def preprocess_volume(v: Volume3D, truncate_floor: float = 78.0, target_spacing: float = 0.1625) -> Volume3D:
    """Clamp below ``truncate_floor``, subtract it, rescale to [0, 1], resample isotropically."""
    data = np.maximum(v.data.astype(np.float64), truncate_floor) - truncate_floor
    hi = float(data.max())
    if hi <= 0:
        raise NormalizationError("volume is constant after truncation")
    scaled = Volume3D((data / hi).astype(np.float32), v.spacing)
    return resample_isotropic(scaled, target_spacing)


def cmd_preprocess(in_path, out_path, truncate_floor: float = 78.0, target_spacing: float = 0.1625) -> Volume3D:
    v = load_volume(_require(in_path))
    out = preprocess_volume(v, truncate_floor, target_spacing)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_volume(out, out_path)
    return out


def _views_manifest(config):
    root = Path(config.output_dir)
    return root / "views", _read_json(root / "views" / "manifest.json")["views"]


def _prepared_pair(config, views_dir, entry):
    raw = load_view_pair(views_dir, entry)
    return register_views(raw, undo_mismatch=config.simulation.register_mismatch)


def cmd_train(config: ExperimentConfig, volume_id: int = 0, method: str = "dual_cycle") -> Path:
    from .network import save_checkpoint, train

    views_dir, entries = _views_manifest(config)
    entry = _entry(entries, volume_id)
    pair = _prepared_pair(config, views_dir, entry)
    cfg = config.train_config(volume_id, single_view=(method == "single_view_ablation"))
    result = train(pair, cfg)
    out = Path(config.output_dir) / "train" / f"vol_{volume_id:03d}"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{method}.pt", result, cfg)
    _write_json(out / f"{method}_history.json", result.history)
    return out / f"{method}.pt"


def cmd_reconstruct(config: ExperimentConfig, checkpoint, volume_id: int = 0, tile: Optional[int] = None,
                    out_path=None) -> Path:
    from .network import TileSpec, load_checkpoint, model_from_checkpoint, reconstruct

    views_dir, entries = _views_manifest(config)
    pair = _prepared_pair(config, views_dir, _entry(entries, volume_id))
    model = model_from_checkpoint(load_checkpoint(_require(checkpoint)), pair)
    recon = reconstruct(model, pair, TileSpec(tile) if tile else None)
    out_path = Path(out_path or Path(config.output_dir) / "recon" / f"vol_{volume_id:03d}_reconstruct.rv1")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_volume(recon, out_path)
    return out_path


def cmd_evaluate(ground_truth, volumes: Sequence, labels: Optional[Sequence[str]] = None, volume_id=0):
    """Metric rows for each volume in ``volumes`` against ``ground_truth``."""
    ref = load_volume(_require(ground_truth))
    labels = labels or [Path(p).stem for p in volumes]
    rows = []
    for label, p in zip(labels, volumes):
        rows.append(metrics.metric_row(label, volume_id, metrics.evaluate(ref, load_volume(_require(p)))))
    return rows


def _entry(entries, volume_id):
    for e in entries:
        if e["volume_id"] == volume_id:
            return e
    raise DataError(f"volume {volume_id} not found in views manifest")


def run_method(method: str, pair: ViewPair, config: ExperimentConfig, volume_id: int, train_dir: Path):
    if method == "view_a":
        return pair.view_a
    if method == "view_b":
        return pair.view_b
    if method == "fuse_average":
        return fuse_average(pair)
    if method == "joint_rl":
        return joint_richardson_lucy(pair, cfg=config.rl_config())
    from .network import reconstruct, save_checkpoint, train

    cfg = config.train_config(volume_id, single_view=(method == "single_view_ablation"))
    result = train(pair, cfg)
    train_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(train_dir / f"{method}.pt", result, cfg)
    _write_json(train_dir / f"{method}_history.json", result.history)
    return reconstruct(result.model, pair)


def save_figure(path: Path, v: Volume3D, title: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 3, figsize=(9, 6))
    for ax, plane in zip(axes[0], ("xy", "xz", "yz")):
        ax.imshow(extract_slice(v, SliceSpec.central(v, plane)), cmap="gray", vmin=0, vmax=1)
        ax.set_title(plane.upper())
    for ax, axis in zip(axes[1], ("z", "y", "x")):
        ax.imshow(max_intensity_projection(v, axis), cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"MIP along {axis}")
    for ax in axes.ravel():
        ax.set_axis_off()
    fig.suptitle(title)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def _run_volume(args):
    config, entry = args
    root = Path(config.output_dir)
    views_dir = root / "views"
    i = entry["volume_id"]
    gt = load_volume(_require((views_dir / entry["ground_truth"]).resolve()))
    pair = _prepared_pair(config, views_dir, entry)
    rows, failures = [], []
    for method in config.methods:
        try:
            recon = run_method(method, pair, config, i, root / "train" / f"vol_{i:03d}")
        except DualCycleError as exc:
            log.error("method %s failed on volume %d: %s", method, i, exc)
            failures.append({"method": method, "volume_id": i, "error": str(exc),
                             "kind": type(exc).__name__})
            continue
        save_volume(recon, root / "recon" / f"vol_{i:03d}_{method}.rv1")
        report = metrics.evaluate(gt, recon)
        rows.append(metrics.metric_row(method, i, report))
        if config.figures:
            save_figure(root / "figures" / f"vol_{i:03d}_{method}.png", recon,
                        f"{method} (volume {i}) SSIM {report.ssim:.3f}")
    return rows, failures


def cmd_run(config: ExperimentConfig, jobs: int = 1) -> dict:
    """Run every configured method on every simulated volume and write the report."""
    root = Path(config.output_dir)
    views_manifest = root / "views" / "manifest.json"
    if not views_manifest.exists():
        cmd_phantom(config)
        cmd_simulate(config)
    _, entries = _views_manifest(config)
    (root / "recon").mkdir(parents=True, exist_ok=True)
    if config.figures:
        (root / "figures").mkdir(parents=True, exist_ok=True)
    work = [(config, e) for e in entries]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_volume, work))
    else:
        results = [_run_volume(w) for w in work]
    rows = [r for rs, _ in results for r in rs]
    failures = [f for _, fs in results for f in fs]
    header = {"config": config.to_dict(), "notes": REPORT_NOTES, "failures": failures}
    (root / "metrics.json").write_text(metrics.rows_to_json(rows, header) + "\n")
    (root / "summary.txt").write_text(metrics.format_table(rows))
    return {"rows": rows, "failures": failures}
