"""Cross-validated experiment runs: the engine behind the train and
compare commands.

Every run is deterministic under its seed: the fold plan, per-fold
initialization, shuffling, and dropout masks all derive from it, so two
identical invocations produce byte-identical CSVs and checkpoints.  All
artifacts stay inside the configured output directory.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    FoldPlan,
    Manifest,
    ManifestRow,
    kfold_split,
    load_dataset,
    load_manifest,
    synth_generate,
    write_manifest,
    write_rawf32,
)
from .errors import ConfigError, DataError, FormatError
from .graph import ParameterStore, init_parameters
from .metrics import RocCurve, roc_curve, write_roc_csv
from .optim import EpochRecord, TrainConfig, evaluate, fit
from .presets import VARIANTS as VARIANT_SET
from .presets import build_preset, parse_preset_name
from .tensor import Rng, Shape4, derive_seed

# seed-derivation labels, fixed so streams never collide
_SEED_DATA = 97
_SEED_FOLDS = 11
_SEED_INIT = 0
_SEED_TRAIN = 1


@dataclass
class RunConfig:
    command: str = "train"
    preset: str = "alexnet_mini"
    variant: str = "baseline"
    data: Optional[str] = None
    synth: Optional[str] = None
    k: int = 5
    epochs: int = 100
    learning_rate: float = 1e-5
    momentum: float = 0.9
    batch_size: int = 10
    seed: int = 7
    out: Optional[str] = None
    grouped: bool = False
    parallel: int = 1
    input_shape: Optional[str] = None  # "CxHxW"
    shuffle: bool = True

    def validate(self) -> None:
        if (self.data is None) == (self.synth is None):
            raise ConfigError("exactly one data source required: --data or --synth")
        if self.out is None:
            raise ConfigError("--out directory is required")
        if self.k < 2:
            raise ConfigError(f"--k must be >= 2, got {self.k}")
        if self.parallel < 1:
            raise ConfigError(f"--parallel must be >= 1, got {self.parallel}")

    def preset_full_name(self) -> str:
        return preset_with_variant(self.preset, self.variant)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            shuffle=self.shuffle,
        )


def preset_with_variant(preset: str, variant: str) -> str:
    parts = [p for p in variant.replace("+", ",").split(",") if p and p != "baseline"]
    name = "+".join([preset] + parts)
    parse_preset_name(name)  # validate early
    return name


def parse_synth_spec(spec: str) -> Dict[str, int]:
    """Parse "n=200,size=32" into generator arguments."""
    values = {"n": 100, "size": 32}
    if spec:
        for item in spec.split(","):
            if not item:
                continue
            if "=" not in item:
                raise ConfigError(f"bad synth spec item {item!r}; use n=..,size=..")
            key, _, raw = item.partition("=")
            key = key.strip()
            if key not in values:
                raise ConfigError(f"unknown synth spec key {key!r}; use n, size")
            try:
                values[key] = int(raw)
            except ValueError:
                raise ConfigError(f"synth spec {key}={raw!r} is not an integer") from None
    return values


def parse_input_shape(text: str) -> Shape4:
    """Parse "CxHxW" into a per-sample shape."""
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"input shape must look like 3x64x64, got {text!r}")
    try:
        c, h, w = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"input shape must be integers, got {text!r}") from None
    return Shape4(1, c, h, w)


def load_run_dataset(cfg: RunConfig) -> Tuple[np.ndarray, np.ndarray, Manifest]:
    """Materialize the configured data source as (patches, labels, manifest)."""
    if cfg.synth is not None:
        spec = parse_synth_spec(cfg.synth)
        patches, labels = synth_generate(spec["n"], spec["size"], derive_seed(cfg.seed, _SEED_DATA))
        rows = [ManifestRow(f"synth/{i:05d}", int(label)) for i, label in enumerate(labels)]
        return patches, labels, Manifest(rows)
    manifest = load_manifest(cfg.data)
    target = parse_input_shape(cfg.input_shape) if cfg.input_shape else None
    patches, labels = load_dataset(manifest, target)
    return patches, labels, manifest


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, store: ParameterStore) -> None:
    """One RAWF32 file per tensor plus a plain-text index.

    Index rows are ``kind<TAB>slot<TAB>file<TAB>dims``; parameters are
    stored alongside batchnorm running statistics (kind ``state``).
    Values are cast to float32 by the container format.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, slot in store.slots.items():
        filename = f"{name}.rawf32"
        _write_flat_rawf32(directory / filename, slot.value)
        dims = "x".join(str(d) for d in slot.value.shape)
        lines.append(f"param\t{name}\t{filename}\t{dims}")
    for name, value in store.state.items():
        filename = f"{name}.rawf32"
        _write_flat_rawf32(directory / filename, value)
        dims = "x".join(str(d) for d in value.shape)
        lines.append(f"state\t{name}\t{filename}\t{dims}")
    (directory / "index.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_flat_rawf32(path, value: np.ndarray) -> None:
    write_rawf32(path, np.asarray(value, dtype=np.float64).reshape(1, 1, -1))


def load_checkpoint(directory, store: ParameterStore) -> None:
    """Restore parameter and state values (float32 precision) in place."""
    from .data import load_patch

    directory = Path(directory)
    index = directory / "index.txt"
    if not index.exists():
        raise DataError(f"checkpoint index {index} does not exist")
    for line in index.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            kind, name, filename, dims = line.split("\t")
        except ValueError:
            raise FormatError(f"bad checkpoint index line: {line!r}") from None
        shape = tuple(int(d) for d in dims.split("x"))
        values = load_patch(directory / filename).reshape(shape)
        if kind == "param":
            if name not in store.slots:
                raise DataError(f"checkpoint slot {name!r} not present in this graph")
            store.slots[name].value[...] = values
        elif kind == "state":
            if name not in store.state:
                raise DataError(f"checkpoint state {name!r} not present in this graph")
            store.state[name][...] = values
        else:
            raise FormatError(f"unknown checkpoint entry kind {kind!r}")


# ---------------------------------------------------------------------------
# fold execution


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    auc: float  # nan when ROC is undefined (multi-class or one-class fold)
    history: List[EpochRecord]
    curve: Optional[RocCurve]
    val_scores: Optional[np.ndarray]
    val_labels: np.ndarray


def run_fold(preset_name: str, num_classes: int, patches: np.ndarray, labels: np.ndarray,
             train_idx: np.ndarray, val_idx: np.ndarray, cfg: RunConfig,
             fold_index: int, out_dir: Path) -> FoldResult:
    """Train one fold end to end and write its history/ROC/checkpoint files."""
    fold_seed = derive_seed(cfg.seed, 1000 + fold_index)
    per_sample = Shape4(1, *patches.shape[1:])
    g = build_preset(preset_name, num_classes, per_sample)
    store = init_parameters(g, Rng(derive_seed(fold_seed, _SEED_INIT)))
    train_cfg = cfg.train_config(seed=fold_seed)
    history = fit(
        g, store,
        (patches[train_idx], labels[train_idx]),
        (patches[val_idx], labels[val_idx]),
        train_cfg,
        Rng(derive_seed(fold_seed, _SEED_TRAIN)),
    )
    _, acc, probs = evaluate(g, store, (patches[val_idx], labels[val_idx]), cfg.batch_size)
    val_labels = labels[val_idx]
    curve = None
    scores = None
    auc = float("nan")
    if num_classes == 2 and len(set(val_labels.tolist())) == 2:
        scores = probs[:, 1]
        curve = roc_curve(scores, val_labels)
        auc = curve.auc

    out_dir.mkdir(parents=True, exist_ok=True)
    write_history_csv(out_dir / f"fold{fold_index}_history.csv", history)
    if curve is not None:
        write_roc_csv(out_dir / f"fold{fold_index}_roc.csv", curve)
    save_checkpoint(out_dir / f"fold{fold_index}_checkpoint", store)
    return FoldResult(fold_index, acc, auc, history, curve, scores, val_labels)


def _run_fold_packed(args) -> FoldResult:
    return run_fold(*args)


def run_folds(preset_name: str, patches: np.ndarray, labels: np.ndarray,
              plan: FoldPlan, cfg: RunConfig, out_dir: Path) -> List[FoldResult]:
    num_classes = int(labels.max()) + 1
    jobs = [
        (preset_name, num_classes, patches, labels,
         plan.train_indices(i), plan.val_indices(i), cfg, i, out_dir)
        for i in range(plan.k)
    ]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            return list(pool.map(_run_fold_packed, jobs))
    return [_run_fold_packed(job) for job in jobs]


# ---------------------------------------------------------------------------
# CSV + figure emission


def _fmt(value: float) -> str:
    return repr(float(value))


def write_history_csv(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for row in history:
            writer.writerow([row.epoch, _fmt(row.train_loss), _fmt(row.train_acc),
                             _fmt(row.val_loss), _fmt(row.val_acc)])


def write_summary_csv(path, results: Sequence[FoldResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fold", "accuracy", "auc"])
        for r in results:
            writer.writerow([r.fold, _fmt(r.accuracy), _fmt(r.auc)])
        writer.writerow(["mean", _fmt(float(np.mean([r.accuracy for r in results]))),
                         _fmt(float(np.mean([r.auc for r in results])))])


def run_training(cfg: RunConfig) -> List[FoldResult]:
    """The train command: k-fold cross-validated run of one preset."""
    cfg.validate()
    preset_name = cfg.preset_full_name()
    patches, labels, manifest = load_run_dataset(cfg)
    plan = kfold_split(manifest, cfg.k, derive_seed(cfg.seed, _SEED_FOLDS), cfg.grouped)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = run_folds(preset_name, patches, labels, plan, cfg, out_dir)
    write_summary_csv(out_dir / "summary.csv", results)

    from .report import render_history_figure, render_roc_figure

    render_history_figure(out_dir / "history.png",
                          [(f"fold {r.fold}", r.history) for r in results],
                          title=preset_name)
    curves = [(f"fold {r.fold}", r.curve) for r in results if r.curve is not None]
    if curves:
        render_roc_figure(out_dir / "roc.png", curves, title=preset_name)
    return results


def run_compare(cfg: RunConfig) -> List[Tuple[str, float, float]]:
    """The compare command: the five canonical variants under identical
    seeds and folds, one subdirectory each, plus compare.csv and figures."""
    cfg.validate()
    patches, labels, manifest = load_run_dataset(cfg)
    plan = kfold_split(manifest, cfg.k, derive_seed(cfg.seed, _SEED_FOLDS), cfg.grouped)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: List[Tuple[str, float, float]] = []
    pooled_curves = []
    for variant in VARIANT_SET:
        preset_name = preset_with_variant(cfg.preset, variant)
        variant_dir = out_dir / variant
        results = run_folds(preset_name, patches, labels, plan, cfg, variant_dir)
        write_summary_csv(variant_dir / "summary.csv", results)
        mean_acc = float(np.mean([r.accuracy for r in results]))
        mean_auc = float(np.mean([r.auc for r in results]))
        rows.append((variant, mean_acc, mean_auc))
        if all(r.val_scores is not None for r in results):
            scores = np.concatenate([r.val_scores for r in results])
            val_labels = np.concatenate([r.val_labels for r in results])
            pooled_curves.append((variant, roc_curve(scores, val_labels)))

    with open(out_dir / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "mean_accuracy", "mean_auc"])
        for variant, mean_acc, mean_auc in rows:
            writer.writerow([variant, _fmt(mean_acc), _fmt(mean_auc)])

    from .report import render_compare_figure, render_roc_figure

    render_compare_figure(out_dir / "compare.png", rows, title=cfg.preset)
    if pooled_curves:
        render_roc_figure(out_dir / "compare_roc.png", pooled_curves,
                          title=f"{cfg.preset}: pooled validation ROC")
    return rows


# ---------------------------------------------------------------------------
# synth export


def export_synth(n_per_class: int, size: int, seed: int, out_dir) -> Path:
    """Write a synthetic benchmark to disk: RAWF32 patches plus manifest.csv."""
    out_dir = Path(out_dir)
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    patches, labels = synth_generate(n_per_class, size, seed)
    rows = []
    for i in range(patches.shape[0]):
        filename = f"patches/{i:05d}.rawf32"
        write_rawf32(out_dir / filename, patches[i])
        rows.append(ManifestRow(filename, int(labels[i])))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path
