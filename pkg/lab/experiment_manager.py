"""
Experiment Manager
Runs experiments end to end (extract features, train SOMs, label, evaluate), sweeps one
configuration axis, grid-searches SOM hyper-parameters, and re-labels or re-evaluates
saved grids. Every number in a report is determined by the configuration and master seed.
"""

import csv
import itertools
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lab.features import FeatureSet, extract, feature_dump_path, load_data, load_features, save_features
from models import som
from models.dataset import LabeledDataset, sample_subset
from models.errors import EmptyInputError, LabError, StageError
from models.labeling import UNLABELED, evaluate, label_grid, load_labels, save_labels
from models.schemas import (
    ExperimentConfig,
    ExperimentReport,
    Extractor,
    GridSearchResult,
    GridSearchRow,
    RepetitionResult,
    SomHyperParams,
    SubsetSpec,
    SweepAxis,
    SweepPoint,
)
from utils.image_grid import dump_prototypes
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["axis", "value", "mean", "std", "reps", "status", "error"]
COMPARE_COLUMNS = ["extractor", "topology", "dim", "mean", "std", "reps", "supervised_accuracy", "status", "error"]
COMPARE_ORDER = (Extractor.RAW, Extractor.SCAE, Extractor.SNN, Extractor.CNN)


@contextmanager
def stage(name: str):
    """Re-raise any failure inside the block as StageError(name, cause)."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error("✗ Stage '%s' failed: %s", name, e)
        raise StageError(name, e) from e


def summarize(accuracies: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(accuracies, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def grid_shape(cfg: ExperimentConfig) -> Tuple[int, int]:
    """Configured (width, height), or the squarest factorization of the neuron count."""
    if cfg.som.width and cfg.som.height:
        return cfg.som.width, cfg.som.height
    return som.squarest_shape(cfg.som.neurons)


def _write_csv(path: Path, columns: List[str], rows: Iterable[Dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return path


def _labeling_positions(labels: np.ndarray, fraction: float, seed: int, stratified: bool) -> np.ndarray:
    """Positions (into the train features) of the seeded labeling subset."""
    count = len(labels)
    pool = LabeledDataset(np.zeros((count, 1, 1), dtype=np.float32), labels, "train")
    return sample_subset(pool, SubsetSpec(fraction=fraction, seed=seed, stratified=stratified)).indices


class ExperimentManager:
    """
    Orchestrates experiments and writes their artifacts.

    Attributes:
        write_artifacts (bool): Save grid checkpoints and reports to the output directory
    """

    def __init__(self, write_artifacts: bool = True):
        self.write_artifacts = write_artifacts

    # ==================== SINGLE EXPERIMENT ====================

    def prepare_features(self, cfg: ExperimentConfig, artifacts: Dict[str, str],
                         data_info: Optional[Dict[str, Dict]] = None) -> FeatureSet:
        with stage("load"):
            train, test = load_data(cfg.data)
        if data_info is not None:
            data_info.update(train=train.to_dict(), test=test.to_dict())
        with stage("extract"):
            features = extract(cfg, train, test, artifacts)
        if cfg.som.normalize_features:
            features = features.normalized()
        return features

    def _repetition(self, cfg: ExperimentConfig, features: FeatureSet, index: int,
                    run_dir: Path, artifacts: Dict[str, str]) -> RepetitionResult:
        seed = derive_seed(cfg.seed, "rep", index)
        width, height = grid_shape(cfg)

        with stage("som_train"):
            grid = som.SomGrid.create(width, height, features.dim, seed=derive_seed(seed, "init"))
            grid = som.train(grid, features.train, cfg.som.hyper, seed=derive_seed(seed, "order"))
        with stage("labeling"):
            positions = _labeling_positions(features.train_labels, cfg.label_fraction,
                                            derive_seed(seed, "labels"), cfg.stratified_labels)
            labels = label_grid(grid, features.train[positions], features.train_labels[positions],
                                cfg.som.labeling_alpha)
        with stage("evaluate"):
            accuracy = evaluate(grid, labels, features.test, features.test_labels)
            qe = grid.quantization_error(features.train)

        if self.write_artifacts:
            path = som.save_grid(run_dir / "grids" / f"rep{index:02d}", grid, cfg.som.hyper, labels,
                                 {"extractor": features.extractor.value, "topology": features.topology})
            artifacts[f"grid_{index:02d}"] = str(path)
            if cfg.dump_images and index == 0:
                image = dump_prototypes(run_dir / "prototypes.png", grid.weights, grid.width)
                if image is not None:
                    artifacts["prototypes"] = str(image)

        logger.info("  rep %d/%d: accuracy=%.4f qe=%.4f labeled=%d/%d", index + 1, cfg.repetitions, accuracy,
                    qe, int(np.sum(labels != UNLABELED)), grid.k)
        return RepetitionResult(index=index, seed=seed, accuracy=accuracy, quantization_error=qe,
                                labeled_neurons=int(np.sum(labels != UNLABELED)), label_samples=len(positions),
                                grid=grid.to_dict())

    def run_experiment(self, cfg: ExperimentConfig) -> ExperimentReport:
        """
        Train the extractor, extract train/test features, then for every repetition train
        a SOM, label it from a seeded subset and evaluate it on the test features.

        Raises:
            StageError: a stage failed; .stage names it and .cause holds the original error
        """
        cfg = cfg.validated()
        started = time.time()
        run_dir = Path(cfg.output_dir) / cfg.name
        artifacts: Dict[str, str] = {}
        data_info: Dict[str, Dict] = {}
        logger.info("→ Experiment '%s': %s + SOM(%d), %.2f%% labels, %d reps", cfg.name, cfg.extractor.value,
                    cfg.som.neurons, 100 * cfg.label_fraction, cfg.repetitions)

        features = self.prepare_features(cfg, artifacts, data_info)
        reps = [self._repetition(cfg, features, i, run_dir, artifacts) for i in range(cfg.repetitions)]
        mean, std = summarize([r.accuracy for r in reps])

        report = ExperimentReport(
            config=cfg,
            extractor_info=features.to_dict(),
            data_info=data_info,
            repetitions=reps,
            mean=mean,
            std=std,
            wall_clock_seconds=round(time.time() - started, 3),
            artifacts=artifacts,
        )
        if self.write_artifacts:
            path = run_dir / "report.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            report.artifacts["report"] = str(path)
            path.write_text(report.model_dump_json(indent=2))
        logger.info("✓ Experiment '%s': accuracy %.2f%% ± %.2f", cfg.name, 100 * mean, 100 * std)
        return report

    # ==================== SWEEPS ====================

    def run_sweep(self, cfg: ExperimentConfig, axis: SweepAxis, values: Sequence[float],
                  out_dir: Optional[Path] = None) -> Tuple[List[SweepPoint], List[ExperimentReport]]:
        """
        One experiment per axis value. A failing point is recorded and the sweep continues.
        Writes sweep.csv (one row per value) and sweep.json (points plus full reports).
        """
        axis = SweepAxis(axis)
        out_dir = Path(out_dir or Path(cfg.output_dir) / f"{cfg.name}-sweep-{axis.value}")
        points: List[SweepPoint] = []
        reports: List[ExperimentReport] = []
        if not values:
            logger.warning("⚠️ Sweep over %s has no values; nothing to run", axis.value)

        for value in values:
            try:
                point_cfg = cfg.with_axis_value(axis, value).validated()
                point_cfg = point_cfg.model_copy(update={"name": f"{cfg.name}-{axis.value}-{value:g}"})
                report = self.run_experiment(point_cfg)
            except (LabError, ValueError, ArithmeticError) as e:
                logger.warning("⚠️ Sweep point %s=%s failed: %s", axis.value, value, e)
                points.append(SweepPoint(axis=axis, value=value, status="failed", error=str(e)))
                continue
            reports.append(report)
            points.append(SweepPoint(axis=axis, value=value, mean=report.mean, std=report.std,
                                     reps=len(report.repetitions)))

        if self.write_artifacts:
            _write_csv(out_dir / "sweep.csv", SWEEP_COLUMNS,
                       [{**p.model_dump(mode="json"), "axis": axis.value} for p in points])
            bundle = {
                "axis": axis.value,
                "points": [p.model_dump(mode="json") for p in points],
                "reports": [r.model_dump(mode="json") for r in reports],
            }
            (out_dir / "sweep.json").write_text(json.dumps(bundle, indent=2))
            logger.info("✓ Sweep written to %s", out_dir / "sweep.csv")
        return points, reports

    def grid_search_som(self, cfg: ExperimentConfig, grid: Dict[str, Sequence[float]],
                        validation_fraction: float = 0.1, out_dir: Optional[Path] = None) -> GridSearchResult:
        """
        Evaluate every SOM hyper-parameter combination of the grid on the training set:
        the SOM trains on the training features minus a held-out slice, is labeled from
        a subset of the remaining items and is scored on the held-out slice. Invalid
        combinations become failed rows. The first best combination wins ties.

        Raises:
            EmptyInputError: the grid has no combination
        """
        cfg = cfg.validated()
        if not grid or any(len(v) == 0 for v in grid.values()):
            raise EmptyInputError("grid search needs at least one value per parameter")
        unknown = set(grid) - set(SomHyperParams.model_fields)
        if unknown:
            raise ValueError(f"unknown SOM hyper-parameters: {sorted(unknown)}")

        features = self.prepare_features(cfg, {})
        n = features.train.shape[0]
        order = np.random.default_rng(derive_seed(cfg.seed, "validation")).permutation(n)
        n_val = max(1, int(round(validation_fraction * n)))
        held_out, fit = order[:n_val], order[n_val:]
        if fit.size == 0:
            raise EmptyInputError("validation slice leaves no training items")
        positions = fit[_labeling_positions(features.train_labels[fit], cfg.label_fraction,
                                            derive_seed(cfg.seed, "validation-labels"), cfg.stratified_labels)]
        width, height = grid_shape(cfg)
        seed = derive_seed(cfg.seed, "grid-search")

        keys = list(grid)
        result = GridSearchResult()
        best_accuracy = -1.0
        for combo in itertools.product(*(grid[k] for k in keys)):
            params = {k: float(v) for k, v in zip(keys, combo)}
            if "epochs" in params:
                params["epochs"] = int(params["epochs"])
            try:
                hp = SomHyperParams.model_validate({**cfg.som.hyper.model_dump(), **params})
                trained = som.train(som.SomGrid.create(width, height, features.dim, seed=seed),
                                    features.train[fit], hp, seed=seed)
                labels = label_grid(trained, features.train[positions], features.train_labels[positions],
                                    cfg.som.labeling_alpha)
                accuracy = evaluate(trained, labels, features.train[held_out], features.train_labels[held_out])
            except (LabError, ValueError, ArithmeticError) as e:
                logger.warning("⚠️ Combination %s failed: %s", params, e)
                result.rows.append(GridSearchRow(params=params, status="failed", error=str(e)))
                continue
            result.rows.append(GridSearchRow(params=params, accuracy=accuracy))
            logger.info("  %s -> %.4f", params, accuracy)
            if accuracy > best_accuracy:
                best_accuracy = accuracy
                result.best = params

        if self.write_artifacts:
            out_dir = Path(out_dir or Path(cfg.output_dir) / f"{cfg.name}-grid-search")
            rows = [{**r.params, "accuracy": r.accuracy, "status": r.status, "error": r.error} for r in result.rows]
            _write_csv(out_dir / "grid_search.csv", keys + ["accuracy", "status", "error"], rows)
            (out_dir / "grid_search.json").write_text(result.model_dump_json(indent=2))
        logger.info("✓ Grid search: best %s (%.4f)", result.best, best_accuracy)
        return result

    def compare(self, cfg: ExperimentConfig, extractors: Optional[Sequence[Extractor]] = None,
                out_dir: Optional[Path] = None) -> List[Dict]:
        """
        Run the same SOM / labeling settings with each extractor and write comparison.csv.
        A failing extractor is recorded as a failed row.
        """
        extractors = [Extractor(e) for e in (extractors or COMPARE_ORDER)]
        rows = []
        for extractor in extractors:
            run_cfg = cfg.model_copy(update={"extractor": extractor, "name": f"{cfg.name}-{extractor.value}"})
            try:
                report = self.run_experiment(run_cfg)
            except (LabError, ValueError, ArithmeticError) as e:
                logger.warning("⚠️ %s failed: %s", extractor.value, e)
                rows.append({"extractor": extractor.value, "status": "failed", "error": str(e)})
                continue
            info = report.extractor_info
            rows.append({
                "extractor": extractor.value,
                "topology": info.get("topology"),
                "dim": info.get("dim"),
                "mean": report.mean,
                "std": report.std,
                "reps": len(report.repetitions),
                "supervised_accuracy": info.get("supervised_accuracy"),
                "status": "ok",
            })
        if self.write_artifacts:
            path = _write_csv(Path(out_dir or Path(cfg.output_dir) / f"{cfg.name}-compare") / "comparison.csv",
                              COMPARE_COLUMNS, rows)
            logger.info("✓ Comparison written to %s", path)
        return rows

    # ==================== SAVED ARTIFACTS ====================

    def dump_features(self, cfg: ExperimentConfig) -> Path:
        """Train the extractor and write its feature dump, ignoring any cached copy."""
        cfg = cfg.validated().model_copy(update={"cache_features": False})
        artifacts: Dict[str, str] = {}
        features = self.prepare_features(cfg, artifacts)
        if "features" in artifacts:
            return Path(artifacts["features"])
        # raw pixels are never cached by extract
        return save_features(feature_dump_path(cfg), features)

    def relabel(self, grid_path, features_path, fraction: float, seed: int, stratified: bool = False,
                alpha: float = 1.0, out_path=None) -> Tuple[np.ndarray, float, Path]:
        """
        Label a saved grid from a new seeded subset of the dump's training features and
        evaluate it on the dump's test features.

        Returns:
            (labels, accuracy, path of the written label table)
        """
        with stage("load"):
            grid, _, _, _ = som.load_grid(grid_path)
            features = load_features(features_path)
        with stage("labeling"):
            positions = _labeling_positions(features.train_labels, fraction, seed, stratified)
            labels = label_grid(grid, features.train[positions], features.train_labels[positions], alpha)
        with stage("evaluate"):
            accuracy = evaluate(grid, labels, features.test, features.test_labels)
        out_path = out_path or Path(grid_path).with_name(Path(grid_path).stem + f"-labels-{seed}")
        path = save_labels(out_path, labels, {"fraction": fraction, "seed": seed, "accuracy": accuracy})
        logger.info("✓ Relabeled %s: accuracy %.4f (labels in %s)", grid_path, accuracy, path)
        return labels, accuracy, path

    def evaluate_checkpoint(self, grid_path, features_path, labels_path=None) -> float:
        """Accuracy of a saved grid on a dump's test features, with stored or external labels."""
        with stage("load"):
            grid, _, labels, _ = som.load_grid(grid_path)
            features = load_features(features_path)
            if labels_path is not None:
                labels = load_labels(labels_path)
            if labels is None:
                raise EmptyInputError(f"{grid_path} carries no labels; pass a label table")
        with stage("evaluate"):
            accuracy = evaluate(grid, np.asarray(labels, dtype=np.int64), features.test, features.test_labels)
        logger.info("✓ %s: accuracy %.4f", grid_path, accuracy)
        return accuracy
