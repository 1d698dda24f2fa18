"""Experiment orchestration: config parsing, the run pipeline, output emission.

A run is described by a flat key=value config file (``#`` comments and
blank lines allowed) plus repeatable ``key=value`` overrides. The pipeline
is: load or synthesize data, optionally decimate, add noise, extract
patches, split columns across nodes, learn, reconstruct, score against
the clean (pre-noise) data, and write everything under the output
directory. Identical configs and seeds give byte-identical metrics.csv.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .imaging import (ImageGray, NoiseSpec, PatchMatrix, add_awgn, assemble_image,
                      downscale, extract_patches, load_image, save_image, split_columns)
from .learn import LearnConfig, run_cloud_ksvd
from .network import build_topology, build_weights
from .sparse import Dictionary

_STREAM_NOISE = 2
_STREAM_SYNTH = 3

CSV_HEADER = "iteration,node,mse,l2_error,psnr,ssim,dict_divergence"


class ConfigError(Exception):
    """A config key is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth model for synthetic training data: Y = D_true X_true."""

    dim_m: int
    count_q: int
    true_atoms: int
    true_sparsity: int

    def __post_init__(self):
        if min(self.dim_m, self.count_q, self.true_atoms, self.true_sparsity) < 1:
            raise ValueError("synthetic dimensions must all be >= 1")
        if self.true_sparsity > min(self.dim_m, self.true_atoms):
            raise ValueError(
                f"true_sparsity={self.true_sparsity} exceeds "
                f"min(dim_m, true_atoms)={min(self.dim_m, self.true_atoms)}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment."""

    image: Path | None
    synthetic: SyntheticSpec | None
    alpha: int
    patch_side: int
    noise: NoiseSpec
    learn: LearnConfig
    nodes: int
    topology: str
    weight_scheme: str
    epsilon: float | None
    failures: dict
    out_dir: Path
    seed: int


@dataclass
class MetricRecord:
    iteration: int
    node: str
    mse: float
    l2_error: float
    psnr: float
    ssim: float
    dict_divergence: float


@dataclass
class RunManifest:
    """Everything a finished run produced, ready for emission."""

    config_echo: dict
    records: list
    inventory: list = field(default_factory=list)
    wall_time: float = 0.0
    clean_image: ImageGray | None = None
    noisy_image: ImageGray | None = None
    recovered_image: ImageGray | None = None
    dictionaries: list = field(default_factory=list)
    node_mse_trace: list = field(default_factory=list)


_KNOWN_KEYS = (
    "image", "synthetic_m", "synthetic_q", "synthetic_atoms", "synthetic_sparsity",
    "alpha", "patch_side", "noise_mean", "noise_variance", "noise_seed",
    "t_d", "t_p", "t_c", "sparsity", "atoms", "variant",
    "nodes", "topology", "weights", "epsilon", "failures",
    "seed", "out",
)

# keys the grid runner may expand on commas, in expansion order
_GRID_KEYS = (
    "t_d", "t_p", "t_c", "sparsity", "atoms", "patch_side", "alpha",
    "nodes", "seed", "noise_variance", "epsilon", "variant", "topology",
)

_DEFAULTS = {
    "alpha": "1",
    "patch_side": "5",
    "noise_mean": "0.0",
    "noise_variance": "0.0",
    "t_d": "10",
    "t_p": "3",
    "t_c": "5",
    "sparsity": "3",
    "atoms": "50",
    "variant": "cloud",
    "nodes": "4",
    "topology": "complete",
    "weights": "uniform-neighbor",
    "seed": "0",
    "out": "run-output",
}


def parse_kv_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment line."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _as_int(kv: dict, key: str, minimum: int | None = None) -> int:
    raw = kv[key]
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return value


def _as_float(kv: dict, key: str) -> float:
    raw = kv[key]
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    return value


def _parse_failures(raw: str, nodes: int) -> dict:
    """Parse 'round:node,node;round:node' into the schedule mapping."""
    schedule: dict = {}
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigError(f"failures: expected round:nodes, got {chunk!r}")
        rnd_s, _, nodes_s = chunk.partition(":")
        try:
            rnd = int(rnd_s)
        except ValueError:
            raise ConfigError(f"failures: bad round index {rnd_s!r}") from None
        if rnd < 0:
            raise ConfigError(f"failures: round index must be >= 0, got {rnd}")
        try:
            ids = frozenset(int(v) for v in nodes_s.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"failures: bad node list {nodes_s!r}") from None
        for v in ids:
            if not (0 <= v < nodes):
                raise ConfigError(f"failures: node {v} outside 0..{nodes - 1}")
        if rnd in schedule:
            raise ConfigError(f"failures: duplicate round {rnd}")
        schedule[rnd] = ids
    return schedule


def config_from_mapping(kv: dict) -> ExperimentConfig:
    """Validate a raw key=value mapping into an ExperimentConfig."""
    for key in kv:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    given = dict(kv)
    merged = dict(_DEFAULTS)
    merged.update(given)

    nodes = _as_int(merged, "nodes", minimum=1)
    has_image = "image" in given
    synth_keys = [k for k in given if k.startswith("synthetic_")]
    if has_image and synth_keys:
        raise ConfigError(f"image and {synth_keys[0]} are mutually exclusive")
    if not has_image and not synth_keys:
        raise ConfigError("config needs either image=PATH or the synthetic_* keys")

    seed = _as_int(merged, "seed", minimum=0)
    if seed >= 2 ** 64:
        raise ConfigError(f"seed: must fit in 64 bits, got {seed}")

    atoms = _as_int(merged, "atoms", minimum=1)
    sparsity = _as_int(merged, "sparsity", minimum=1)
    variant = merged["variant"]
    try:
        learn = LearnConfig(
            t_d=_as_int(merged, "t_d", minimum=1),
            t_p=_as_int(merged, "t_p", minimum=1),
            t_c=_as_int(merged, "t_c", minimum=0),
            sparsity=sparsity,
            n_atoms=atoms,
            seed=seed,
            variant=variant,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    synthetic = None
    image = None
    patch_side = _as_int(merged, "patch_side", minimum=1)
    alpha = _as_int(merged, "alpha", minimum=1)
    if has_image:
        image = Path(merged["image"])
        if not merged["image"]:
            raise ConfigError("image: empty path")
    else:
        for required in ("synthetic_m", "synthetic_q"):
            if required not in given:
                raise ConfigError(f"{required}: required for synthetic runs")
        m = _as_int(merged, "synthetic_m", minimum=1)
        if "patch_side" in given and patch_side ** 2 != m:
            raise ConfigError(
                f"patch_side: {patch_side}^2 = {patch_side ** 2} "
                f"inconsistent with synthetic_m={m}"
            )
        merged.setdefault("synthetic_atoms", str(atoms))
        merged.setdefault("synthetic_sparsity", str(sparsity))
        try:
            synthetic = SyntheticSpec(
                dim_m=m,
                count_q=_as_int(merged, "synthetic_q", minimum=1),
                true_atoms=_as_int(merged, "synthetic_atoms", minimum=1),
                true_sparsity=_as_int(merged, "synthetic_sparsity", minimum=1),
            )
        except ValueError as exc:
            raise ConfigError(f"synthetic_*: {exc}") from None

    variance = _as_float(merged, "noise_variance")
    if variance < 0:
        raise ConfigError(f"noise_variance: must be >= 0, got {variance}")
    if "noise_seed" in merged:
        noise_seed = _as_int(merged, "noise_seed", minimum=0)
    else:
        noise_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_NOISE,))
            .generate_state(1, np.uint64)[0]
        )
    noise = NoiseSpec(mean=_as_float(merged, "noise_mean"), variance=variance,
                      seed=noise_seed)

    topology = merged["topology"]
    if topology not in ("complete", "ring", "path"):
        raise ConfigError(f"topology: unknown kind {topology!r}")
    scheme = merged["weights"]
    if scheme not in ("uniform-neighbor", "laplacian"):
        raise ConfigError(f"weights: unknown scheme {scheme!r}")
    epsilon = None
    if "epsilon" in merged:
        epsilon = _as_float(merged, "epsilon")
    if scheme == "laplacian" and epsilon is None:
        raise ConfigError("epsilon: required for the laplacian weight scheme")

    failures = _parse_failures(merged.get("failures", ""), nodes)

    if not has_image and sparsity > min(synthetic.dim_m, atoms):
        raise ConfigError(
            f"sparsity: {sparsity} exceeds min(synthetic_m, atoms)"
            f"={min(synthetic.dim_m, atoms)}"
        )

    return ExperimentConfig(
        image=image, synthetic=synthetic, alpha=alpha, patch_side=patch_side,
        noise=noise, learn=learn, nodes=nodes, topology=topology,
        weight_scheme=scheme, epsilon=epsilon, failures=failures,
        out_dir=Path(merged["out"]), seed=seed,
    )


def load_config(path=None, overrides=(), seed=None, out=None) -> ExperimentConfig:
    """Read a config file, apply overrides and CLI seed/out, validate."""
    kv: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        kv = parse_kv_text(p.read_text(encoding="utf-8"))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        kv[key.strip()] = value.strip()
    if seed is not None:
        kv["seed"] = str(seed)
    if out is not None:
        kv["out"] = str(out)
    return config_from_mapping(kv)


def _echo(cfg: ExperimentConfig) -> dict:
    echo = {
        "alpha": str(cfg.alpha),
        "patch_side": str(cfg.patch_side),
        "noise_mean": f"{cfg.noise.mean:.17g}",
        "noise_variance": f"{cfg.noise.variance:.17g}",
        "noise_seed": str(cfg.noise.seed),
        "t_d": str(cfg.learn.t_d),
        "t_p": str(cfg.learn.t_p),
        "t_c": str(cfg.learn.t_c),
        "sparsity": str(cfg.learn.sparsity),
        "atoms": str(cfg.learn.n_atoms),
        "variant": cfg.learn.variant,
        "nodes": str(cfg.nodes),
        "topology": cfg.topology,
        "weights": cfg.weight_scheme,
        "seed": str(cfg.seed),
        "out": str(cfg.out_dir),
    }
    if cfg.image is not None:
        echo["image"] = str(cfg.image)
    if cfg.synthetic is not None:
        echo["synthetic_m"] = str(cfg.synthetic.dim_m)
        echo["synthetic_q"] = str(cfg.synthetic.count_q)
        echo["synthetic_atoms"] = str(cfg.synthetic.true_atoms)
        echo["synthetic_sparsity"] = str(cfg.synthetic.true_sparsity)
    if cfg.epsilon is not None:
        echo["epsilon"] = f"{cfg.epsilon:.17g}"
    if cfg.failures:
        echo["failures"] = ";".join(
            f"{rnd}:{','.join(str(v) for v in sorted(nodes))}"
            for rnd, nodes in sorted(cfg.failures.items())
        )
    return echo


def _synthesize(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """Draw Y = D_true X_true with unit-norm Gaussian atoms."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_SYNTH,))
    )
    d_true = rng.standard_normal((spec.dim_m, spec.true_atoms))
    d_true /= np.linalg.norm(d_true, axis=0)
    x = np.zeros((spec.true_atoms, spec.count_q))
    for q in range(spec.count_q):
        support = rng.choice(spec.true_atoms, size=spec.true_sparsity, replace=False)
        x[support, q] = rng.standard_normal(spec.true_sparsity)
    return d_true @ x


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Execute one experiment end to end and write its artifacts.

    Metrics compare each iteration's reconstruction to the clean
    (pre-noise) data; for image runs that is the decimated image before
    AWGN. One CSV row per iteration, node column 'all' (the row scores
    the concatenated reconstruction of every node's block; per-node MSE
    goes to manifest.txt).
    """
    t_start = time.perf_counter()
    manifest = RunManifest(config_echo=_echo(cfg), records=[])

    if cfg.image is not None:
        img = load_image(cfg.image)
        clean = downscale(img, cfg.alpha)
        noisy = add_awgn(clean, cfg.noise)
        patches = extract_patches(noisy, cfg.patch_side)
        clean_target = None
        manifest.clean_image = clean
        manifest.noisy_image = noisy
    else:
        y_clean = _synthesize(cfg.synthetic, cfg.seed)
        y = y_clean
        if cfg.noise.variance > 0.0 or cfg.noise.mean != 0.0:
            nrng = np.random.default_rng(cfg.noise.seed)
            # synthetic signals are unbounded, so no clipping here
            y = y_clean + nrng.normal(cfg.noise.mean, math.sqrt(cfg.noise.variance),
                                      size=y_clean.shape)
        patches = PatchMatrix(y)
        clean_target = y_clean
        clean = noisy = None

    if cfg.learn.sparsity > min(patches.dim_m, cfg.learn.n_atoms):
        raise ConfigError(
            f"sparsity: {cfg.learn.sparsity} exceeds min(M, atoms)"
            f"={min(patches.dim_m, cfg.learn.n_atoms)}"
        )
    parts = split_columns(patches, cfg.nodes)
    topo = build_topology(cfg.topology, cfg.nodes, cfg.failures)
    weights = build_weights(topo, cfg.weight_scheme, cfg.epsilon)

    def observe(iteration, dicts, codes):
        yhat = np.concatenate([dicts[i] @ codes[i] for i in range(cfg.nodes)], axis=1)
        div = metrics_mod.dict_divergence(dicts) if cfg.nodes > 1 else float("nan")
        node_mse = tuple(
            float(np.mean((parts[i].data - dicts[i] @ codes[i]) ** 2))
            for i in range(cfg.nodes)
        )
        if cfg.image is not None:
            recon = assemble_image(PatchMatrix(yhat, patch_side=cfg.patch_side,
                                               source_dims=(clean.height, clean.width)))
            err = float(np.mean((clean.pixels - recon.pixels) ** 2))
            l2 = float(np.linalg.norm(clean.pixels - recon.pixels))
            p = metrics_mod.psnr(clean.pixels, recon.pixels).value
            s = metrics_mod.ssim(clean, recon)
            manifest.recovered_image = recon
        else:
            err = float(np.mean((clean_target - yhat) ** 2))
            l2 = float(np.linalg.norm(clean_target - yhat))
            p = metrics_mod.psnr(clean_target, yhat).value
            s = float("nan")
        manifest.records.append(
            MetricRecord(iteration, "all", err, l2, p, s, div)
        )
        manifest.node_mse_trace.append((iteration, node_mse))

    result = run_cloud_ksvd(parts, cfg.learn, topo, weights, on_iteration=observe)
    manifest.dictionaries = list(result.dictionaries)
    manifest.wall_time = time.perf_counter() - t_start
    emit_outputs(manifest, cfg.out_dir)
    return manifest


def _g17(x: float) -> str:
    return f"{x:.17g}"


def emit_outputs(manifest: RunManifest, out_dir) -> None:
    """Write metrics.csv, images, per-node dictionaries, and manifest.txt.

    CSV is UTF-8 with LF endings and 17-significant-digit floats, so a
    repeated run with the same seed is byte-identical. Infinite PSNR is
    serialized as 'inf'.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory = []

    lines = [CSV_HEADER]
    for r in manifest.records:
        lines.append(
            f"{r.iteration},{r.node},{_g17(r.mse)},{_g17(r.l2_error)},"
            f"{_g17(r.psnr)},{_g17(r.ssim)},{_g17(r.dict_divergence)}"
        )
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8",
                                     newline="\n")
    inventory.append("metrics.csv")

    for name, image in (("clean.pgm", manifest.clean_image),
                        ("noisy.pgm", manifest.noisy_image),
                        ("recovered.pgm", manifest.recovered_image)):
        if image is not None:
            save_image(image, out / name)
            inventory.append(name)
    if manifest.clean_image is not None and manifest.recovered_image is not None:
        diff = np.abs(manifest.clean_image.pixels - manifest.recovered_image.pixels)
        save_image(ImageGray(np.clip(diff, 0.0, 1.0)), out / "difference.pgm")
        inventory.append("difference.pgm")

    for i, d in enumerate(manifest.dictionaries):
        name = f"dictionary_node{i}.txt"
        np.savetxt(out / name, d.data, fmt="%.17g")
        inventory.append(name)

    manifest.inventory = inventory
    text = ["# resolved configuration"]
    for key in sorted(manifest.config_echo):
        text.append(f"{key} = {manifest.config_echo[key]}")
    text.append("")
    text.append("# per-node reconstruction MSE by iteration")
    for iteration, node_mse in manifest.node_mse_trace:
        joined = " ".join(_g17(v) for v in node_mse)
        text.append(f"iteration {iteration}: {joined}")
    text.append("")
    text.append("# outputs")
    text.extend(inventory)
    text.append("")
    text.append(f"rows = {len(manifest.records)}")
    text.append(f"wall_time_s = {manifest.wall_time:.3f}")
    (out / "manifest.txt").write_text("\n".join(text) + "\n", encoding="utf-8",
                                      newline="\n")
    manifest.inventory = inventory + ["manifest.txt"]


def grid_cells(kv: dict):
    """Expand comma lists in grid-able keys into per-cell mappings.

    Yields (cell_name, mapping) pairs in deterministic order. Keys outside
    the grid-able set keep commas verbatim (the failures syntax uses them).
    """
    axes = []
    for key in _GRID_KEYS:
        if key in kv and "," in kv[key]:
            values = [v.strip() for v in kv[key].split(",") if v.strip()]
            if not values:
                raise ConfigError(f"{key}: empty grid list")
            axes.append((key, values))
    if not axes:
        yield "cell", dict(kv)
        return
    names = [a[0] for a in axes]
    for combo in itertools.product(*(a[1] for a in axes)):
        cell = dict(kv)
        cell.update(zip(names, combo))
        label = "_".join(f"{k}={v}" for k, v in zip(names, combo))
        yield label, cell


def run_grid(kv: dict) -> list:
    """Run every cell of a config grid; one output subdirectory per cell."""
    out_root = Path(kv.get("out", _DEFAULTS["out"]))
    results = []
    for label, cell in grid_cells(kv):
        cell["out"] = str(out_root / label)
        cfg = config_from_mapping(cell)
        results.append((label, run_experiment(cfg)))
    return results


def consensus_demo_mapping(seed: str = "0", out: str = "consensus-demo-output") -> dict:
    """Base config for the synthetic consensus study grid.

    Four nodes on a ring with Metropolis weights, 2000 exactly-3-sparse
    signals in dimension 20, a 50-atom dictionary, 50 learning iterations,
    swept over power and consensus round counts. The ring (rather than a
    complete graph) keeps single-round averaging inexact, which is the
    regime where the consensus round count matters.
    """
    return {
        "synthetic_m": "20",
        "synthetic_q": "2000",
        "synthetic_atoms": "50",
        "synthetic_sparsity": "3",
        "atoms": "50",
        "sparsity": "3",
        "nodes": "4",
        "topology": "ring",
        "weights": "uniform-neighbor",
        "variant": "cloud",
        "t_d": "50",
        "t_p": "2,3,4,5",
        "t_c": "1,2,3",
        "seed": seed,
        "out": out,
    }
