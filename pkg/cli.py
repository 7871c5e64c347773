"""
Few-Label SOM Lab - Command Line
Verbs: run, sweep, grid-search, label, eval, dump-features, compare, serve.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from lab.experiment_manager import ExperimentManager
from lab.presets import PRESETS, build_config, load_config_file
from models.errors import LabError
from models.schemas import ExperimentConfig, Extractor, SweepAxis

logger = logging.getLogger("cli")

DEFAULT_GRID = {
    "epsilon_i": [0.5, 1.0],
    "epsilon_f": [0.01, 0.1],
    "sigma_i": [5.0, 10.0],
    "sigma_f": [0.01, 0.1],
}


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file (overrides the preset)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Start from a named preset")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--reps", type=int, help="Repetitions per experiment")
    parser.add_argument("--dump-images", action="store_true", help="Save PNG grids of prototypes and kernels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somlab", description="Few-label SOM classification experiments")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Run one experiment and write report.json")
    _add_config_flags(run)

    sweep = verbs.add_parser("sweep", help="Run one experiment per value of a config axis")
    _add_config_flags(sweep)
    sweep.add_argument("--axis", required=True, choices=[a.value for a in SweepAxis])
    sweep.add_argument("--values", type=_floats, default=[], help="Comma-separated values, e.g. 16,64,256")

    grid = verbs.add_parser("grid-search", help="Grid-search SOM hyper-parameters on a validation slice")
    _add_config_flags(grid)
    grid.add_argument("--grid", help="JSON object (or file) mapping hyper-parameter names to value lists")

    label = verbs.add_parser("label", help="Re-label a saved grid from a new labeled subset")
    label.add_argument("--grid-checkpoint", required=True)
    label.add_argument("--features", required=True, help="Feature dump the grid was trained on")
    label.add_argument("--fraction", type=float, default=0.01)
    label.add_argument("--seed", type=int, default=0, help="Subset seed")
    label.add_argument("--stratified", action="store_true")
    label.add_argument("--alpha", type=float, default=1.0)
    label.add_argument("--out", help="Label table path")

    evaluate = verbs.add_parser("eval", help="Re-evaluate a saved grid on a feature dump")
    evaluate.add_argument("--grid-checkpoint", required=True)
    evaluate.add_argument("--features", required=True)
    evaluate.add_argument("--labels", help="Label table (defaults to the labels stored with the grid)")

    dump = verbs.add_parser("dump-features", help="Train the extractor and write its feature dump")
    _add_config_flags(dump)

    compare = verbs.add_parser("compare", help="Same SOM settings with every extractor")
    _add_config_flags(compare)
    compare.add_argument("--with-cae", action="store_true", help="Include the non-sparse autoencoder")

    serve = verbs.add_parser("serve", help="Start the HTTP job service")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Preset, then config file, then --seed/--out/--reps/--dump-images."""
    overrides: Dict[str, Any] = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.dump_images:
        overrides["dump_images"] = True
    return build_config(args.preset, overrides)


def _parse_grid(text: Optional[str]) -> Dict[str, List[float]]:
    if text is None:
        return DEFAULT_GRID
    stripped = text.strip()
    return json.loads(stripped) if stripped.startswith("{") else load_config_file(stripped)


def _banner(verb: str, cfg: Optional[ExperimentConfig] = None):
    print("\n" + "="*60)
    print(f"🧪 Few-Label SOM Lab - {verb}")
    print("="*60)
    if cfg is not None:
        print(f"📍 Experiment: {cfg.name}")
        print(f"🔬 Extractor: {cfg.extractor.value}")
        print(f"🧠 SOM neurons: {cfg.som.neurons}")
        print(f"🏷️  Labels: {100 * cfg.label_fraction:g}% of the training set")
        print(f"🔄 Repetitions: {cfg.repetitions} (master seed {cfg.seed})")
        print(f"📁 Output: {cfg.output_dir}")
    print("="*60 + "\n")


def run_verb(args: argparse.Namespace) -> int:
    manager = ExperimentManager()
    if args.verb == "serve":
        import uvicorn
        uvicorn.run("app:app", host=args.host, port=args.port, log_level="info")
        return 0

    if args.verb == "label":
        _banner("label")
        _, accuracy, path = manager.relabel(args.grid_checkpoint, args.features, args.fraction, args.seed,
                                            args.stratified, args.alpha, args.out)
        print(json.dumps({"accuracy": accuracy, "labels": str(path)}, indent=2))
        return 0

    if args.verb == "eval":
        _banner("eval")
        accuracy = manager.evaluate_checkpoint(args.grid_checkpoint, args.features, args.labels)
        print(json.dumps({"accuracy": accuracy}, indent=2))
        return 0

    cfg = config_from_args(args)
    _banner(args.verb, cfg)
    if args.verb == "run":
        report = manager.run_experiment(cfg)
        print(json.dumps({"mean": report.mean, "std": report.std, "report": report.artifacts.get("report")},
                         indent=2))
    elif args.verb == "sweep":
        points, _ = manager.run_sweep(cfg, SweepAxis(args.axis), args.values)
        for p in points:
            print(f"  {p.axis.value}={p.value:g}: " +
                  (f"{100 * p.mean:.2f}% ± {100 * p.std:.2f}" if p.status == "ok" else f"failed ({p.error})"))
    elif args.verb == "grid-search":
        result = manager.grid_search_som(cfg, _parse_grid(args.grid))
        print(json.dumps({"best": result.best}, indent=2))
    elif args.verb == "dump-features":
        print(f"✓ Features written to {manager.dump_features(cfg)}")
    elif args.verb == "compare":
        extractors = [Extractor.RAW, Extractor.SCAE, Extractor.SNN, Extractor.CNN]
        if args.with_cae:
            extractors.insert(2, Extractor.CAE)
        for row in manager.compare(cfg, extractors):
            status = (f"{100 * row['mean']:.2f}% ± {100 * row['std']:.2f}" if row["status"] == "ok"
                      else f"failed ({row['error']})")
            print(f"  {row['extractor']:>5}: {status}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run_verb(args)
    except (LabError, ValueError, OSError) as e:
        logger.error("✗ %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
