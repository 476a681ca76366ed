"""Command line entry point.

    privsemcom <verb> [--config PATH] [--seed N] [--out DIR] [--checkpoint PATH ...] [--key=value ...]

Any ``--key=value`` that is not a CLI option is applied as a config
override (``--latent_dim=256``, ``--perturb.steps=10``); the last one wins.
Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, PerturbationConfig, RandomStreams, load_config, new_run
from .data import DatasetError, LabeledImageSet, load_dataset
from .evaluation import (EvalReport, EvaluationError, evaluate, evaluate_with_jammer, export_report,
                         gap_sweep, load_report, plot_report)
from .models import CheckpointError, ModelBundle
from .perturbation import make_delta_fn, spec_tag
from .training import TrainingDivergence, train_baseline, train_eve, train_minmax

log = logging.getLogger("privsemcom")

VERBS = ("train-baseline", "train-minmax", "train-eve", "eval", "gap-sweep", "perturb-eval", "plot")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privsemcom", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter, allow_abbrev=False)
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("out"), help="parent of run directories")
    p.add_argument("--checkpoint", type=Path, action="append", default=[],
                   help="bundle checkpoint (repeat for gap-sweep)")
    p.add_argument("--csv", type=Path, help="report CSV for the plot verb")
    p.add_argument("--ladder", default="fgsm,pgd4,pgd10",
                   help="perturb-eval: comma list of fgsm / pgdK to compare against no protection")
    p.add_argument("--no-retrain-eve", action="store_true",
                   help="gap-sweep/perturb-eval: use the stored Eve instead of a fresh best response")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _split_overrides(rest: list[str]) -> dict[str, str]:
    overrides = {}
    for token in rest:
        if not token.startswith("--") or "=" not in token:
            raise UsageError(f"unrecognized argument {token!r} (overrides use --key=value)")
        key, value = token[2:].split("=", 1)
        overrides[key] = value
    return overrides


def _resolve_config(args, overrides, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else (load_config(args.config) if args.config else ExperimentConfig())
    if args.seed is not None:
        overrides = {"seed": str(args.seed), **{k: v for k, v in overrides.items() if k != "seed"}}
    return cfg.with_overrides(overrides) if overrides else cfg


def _datasets(cfg: ExperimentConfig) -> tuple[LabeledImageSet, LabeledImageSet]:
    train = load_dataset(cfg.dataset, "train", cfg.subset_size, np.random.default_rng([cfg.seed, 0]))
    test = load_dataset(cfg.dataset, "test", cfg.test_subset_size, np.random.default_rng([cfg.seed, 1]))
    return train, test


def _load_bundles(args) -> list[ModelBundle]:
    if not args.checkpoint:
        raise UsageError(f"{args.verb} needs --checkpoint PATH")
    return [ModelBundle.load(p) for p in args.checkpoint]


def _finish(record, bundle: ModelBundle, curve=None) -> None:
    path = bundle.save(record.checkpoint_dir / "bundle.pt")
    record.checkpoint_paths.append(str(path))
    if curve is not None:
        tmp = record.metrics_log_path.with_suffix(".csv.tmp")
        curve.to_csv(tmp)
        tmp.replace(record.metrics_log_path)
    record.write_manifest()
    print(record.run_dir)


def _train(args, overrides, minmax: bool) -> None:
    cfg = _resolve_config(args, overrides)
    record = new_run(cfg, args.out, "minmax" if minmax else "baseline")
    train, test = _datasets(cfg)
    fn = train_minmax if minmax else train_baseline
    bundle, curve = fn(cfg, train, test, RandomStreams(cfg.seed))
    _finish(record, bundle, curve)


def _train_eve(args, overrides) -> None:
    (bundle,) = _load_bundles(args)[:1]
    cfg = _resolve_config(args, overrides, base=bundle.config)
    record = new_run(cfg, args.out, "eve")
    train, _ = _datasets(cfg)
    train_eve(bundle, cfg, train, RandomStreams(cfg.seed))
    _finish(record, bundle)


def _best_response(bundle: ModelBundle, cfg: ExperimentConfig, retrain: bool) -> None:
    if retrain or not bundle.eve_trained:
        train, _ = _datasets(bundle.config)
        train_eve(bundle, cfg, train, RandomStreams(cfg.seed))


def _write_report(record, report: EvalReport, name: str) -> None:
    export_report(report, record.run_dir / f"{name}.csv")
    plot_report(report, record.run_dir / "plots")
    record.write_manifest()
    print(record.run_dir / f"{name}.csv")


def _eval(args, overrides) -> None:
    (bundle,) = _load_bundles(args)[:1]
    cfg = _resolve_config(args, overrides, base=bundle.config)
    record = new_run(cfg, args.out, "eval")
    _, test = _datasets(bundle.config)
    report = evaluate(bundle, test, cfg.eval_snr_list_db, cfg.n_real, cfg.seed)
    _write_report(record, report, "report")


def _gap_sweep(args, overrides) -> None:
    bundles = _load_bundles(args)
    by_weight: dict[float, ModelBundle] = {}
    for b in bundles:
        if b.config.privacy_weight in by_weight:
            raise UsageError(f"two checkpoints share w_P={b.config.privacy_weight}")
        by_weight[b.config.privacy_weight] = b
    cfg = _resolve_config(args, overrides, base=bundles[0].config)
    record = new_run(cfg, args.out, "gap-sweep")
    for b in by_weight.values():
        _best_response(b, _resolve_config(args, overrides, base=b.config), not args.no_retrain_eve)
    _, test = _datasets(bundles[0].config)
    report = gap_sweep(by_weight, test, cfg.eval_snr_list_db, cfg.n_real, cfg.seed, bob_snr_db=cfg.bob_snr_db)
    _write_report(record, report, "gap_sweep")


def _ladder_specs(text: str, base: PerturbationConfig) -> list[PerturbationConfig]:
    specs = []
    for item in (t.strip() for t in text.split(",") if t.strip()):
        if item == "fgsm":
            specs.append(PerturbationConfig("fgsm", base.epsilon, 1, base.epsilon, base.m,
                                            fading_known=base.fading_known))
        elif item.startswith("pgd") and item[3:].isdigit():
            specs.append(PerturbationConfig("pgd", base.epsilon, int(item[3:]), base.alpha, base.m,
                                            base.random_start, base.fading_known))
        else:
            raise UsageError(f"bad ladder entry {item!r}; use fgsm or pgdK")
    return specs


def _perturb_eval(args, overrides) -> None:
    (bundle,) = _load_bundles(args)[:1]
    cfg = _resolve_config(args, overrides, base=bundle.config)
    record = new_run(cfg, args.out, "perturb-eval")
    _best_response(bundle, cfg, not args.no_retrain_eve)
    _, test = _datasets(bundle.config)
    base = cfg.perturbation or PerturbationConfig()
    specs = _ladder_specs(args.ladder, base)
    if cfg.perturbation is not None and spec_tag(cfg.perturbation) not in {spec_tag(s) for s in specs}:
        specs.append(cfg.perturbation)
    report = evaluate_with_jammer(bundle, None, test, cfg.eval_snr_list_db, cfg.jammer_bob_gain,
                                  cfg.jammer_eve_gain, cfg.n_real, cfg.seed, bob_snr_db=cfg.bob_snr_db, tag="none")
    for spec in specs:
        fn = make_delta_fn(bundle.eve_cls, spec, seed=cfg.seed, jam_gain=cfg.jammer_eve_gain)
        report.extend(evaluate_with_jammer(bundle, fn, test, cfg.eval_snr_list_db, cfg.jammer_bob_gain,
                                           cfg.jammer_eve_gain, cfg.n_real, cfg.seed,
                                           bob_snr_db=cfg.bob_snr_db, tag=spec_tag(spec)))
    _write_report(record, report, "perturb_eval")


def _plot(args, overrides) -> None:
    if args.csv is None:
        raise UsageError("plot needs --csv PATH")
    files = plot_report(load_report(args.csv), args.out)
    for f in files:
        print(f)


HANDLERS = {
    "train-baseline": lambda a, o: _train(a, o, minmax=False),
    "train-minmax": lambda a, o: _train(a, o, minmax=True),
    "train-eve": _train_eve,
    "eval": _eval,
    "gap-sweep": _gap_sweep,
    "perturb-eval": _perturb_eval,
    "plot": _plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        HANDLERS[args.verb](args, _split_overrides(rest))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"privsemcom: usage error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"privsemcom: config error: {exc}", file=sys.stderr)
        return 1
    except DatasetError as exc:
        print(f"privsemcom: data error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergence as exc:
        print(f"privsemcom: training diverged: {exc}", file=sys.stderr)
        return 1
    except CheckpointError as exc:
        print(f"privsemcom: IO error: {exc}", file=sys.stderr)
        return 1
    except EvaluationError as exc:
        print(f"privsemcom: evaluation error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"privsemcom: IO error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
