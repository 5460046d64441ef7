#!/usr/bin/python3 -u
"""Command line entry point: datagen, train, evaluate, ablate, capacity-report, report."""
import argparse
import json
import sys
from pathlib import Path

import config  # noqa
from config import ConfigError  # noqa

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4


class UsageError(Exception):
    """Bad command line (unknown subcommand, missing or malformed flag)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def log(msg):
    print(msg, flush=True)


def _require(cfg, key, section):
    if cfg.get(key) is None:
        raise ConfigError(f"{section}: {key} is required")
    return cfg[key]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_datagen(args):
    import datagen

    cfg = config.load_section("datagen", args.config, {
        "split": args.split, "out": args.out, "seed": args.seed,
        "n_a": args.n_a, "n_b": args.n_b, "resolution": args.resolution,
    })
    out = Path(_require(cfg, "out", "datagen"))
    split = datagen.load_split(cfg["split"]).with_overrides(
        seed=cfg["seed"], n_a=cfg["n_a"], n_b=cfg["n_b"],
        resolution=cfg["resolution"],
    )
    manifest = datagen.write_dataset(datagen.build_split(split), out)
    config.write_effective(out, "datagen", cfg)
    log(f"Wrote {len(manifest.records)} images of split {split.split_id} "
        f"to {out}")


def _train_config(args_config, overrides):
    from trainer import TrainConfig

    cfg = config.load_section("train", args_config, overrides)
    return cfg, TrainConfig.from_dict(cfg)


def cmd_train(args):
    import trainer

    cfg, train_cfg = _train_config(args.config, {
        "data": args.data, "out": args.out, "resume": args.resume,
        "seed": args.seed, "steps": args.steps, "restarts": args.restarts,
        "disable_norm": True if args.disable_norm else None,
        "disable_guess": True if args.disable_guess else None,
    })
    out = Path(_require(cfg, "out", "train"))
    if cfg["resume"] is not None and cfg["restarts"] > 1:
        raise ConfigError("train: resume and restarts > 1 are exclusive")
    config.write_effective(out, "train", cfg)
    if cfg["restarts"] > 1:
        result = trainer.train_restarts(train_cfg, out, cfg["restarts"],
                                        progress=True, log_fn=log)
    else:
        result = trainer.train(train_cfg, out, resume=cfg["resume"],
                               progress=True, log_fn=log)
    log(f"Final checkpoint: {result.checkpoint}")


def _load_model(checkpoint):
    from model import load_checkpoint

    bundle, _, meta = load_checkpoint(checkpoint)
    return bundle, meta


def _dataset(data, meta, section):
    import datagen

    data = data or meta.get("train", {}).get("data")
    if data is None:
        raise ConfigError(f"{section}: no dataset given and none recorded "
                          f"in the checkpoint")
    return datagen.read_dataset(data)


def cmd_evaluate(args):
    import evalkit
    import report

    cfg = config.load_section("evaluate", args.config, {
        "checkpoint": args.checkpoint, "data": args.data,
        "guides_per_source": args.guides_per_source, "seed": args.seed,
        "out": args.out, "grid": True if args.grid else None,
    })
    out = Path(_require(cfg, "out", "evaluate"))
    bundle, meta = _load_model(cfg["checkpoint"])
    manifest = _dataset(cfg["data"], meta, "evaluate")
    evaluation = evalkit.evaluate(bundle, manifest, cfg["guides_per_source"],
                                  seed=cfg["seed"],
                                  batch_size=cfg["batch_size"], log_fn=log)
    rand = evalkit.rand_baseline(manifest, n_trials=10000, seed=cfg["seed"])
    path = report.write_evaluation(evaluation, out, rand)
    if cfg["grid"]:
        report.translation_grid(bundle, manifest, out / "grid.png",
                                seed=cfg["seed"])
    config.write_effective(out, "evaluate", cfg)
    ac, rd = evaluation.scores()
    log(f"AC {evalkit.percent(ac)}  RD "
        f"{'-' if rd is None else evalkit.round_half_up(rd)}  ({path})")


def cmd_ablate(args):
    import diagnostics

    cfg = config.load_section("ablate", None, {
        "config": args.config, "out": args.out, "seed": args.seed,
    })
    out = Path(_require(cfg, "out", "ablate"))
    train_section, train_cfg = _train_config(cfg["config"],
                                             {"seed": cfg["seed"]})
    config.write_effective(out, "ablate", {**cfg, "train": train_section})
    diagnostics.ablation_suite(train_cfg, out, cfg["amplitudes"],
                               cfg["guides_per_source"], progress=True,
                               log_fn=log)
    log((out / "ablation.txt").read_text(encoding="utf-8"))


def cmd_capacity_report(args):
    import capacity
    import storage
    from model import to_tensor

    cfg = config.load_section("capacity-report", args.config, {
        "checkpoints": args.checkpoint, "data": args.data,
        "samples": args.samples, "seed": args.seed, "out": args.out,
    })
    out = Path(_require(cfg, "out", "capacity-report"))
    if not cfg["checkpoints"]:
        raise ConfigError("capacity-report: no checkpoints given")
    entries, lines = [], []
    for checkpoint in cfg["checkpoints"]:
        bundle, meta = _load_model(checkpoint)
        manifest = _dataset(cfg["data"], meta, "capacity-report")
        sigma_g = meta.get("train", {}).get("noise", {}).get("sigma_g", 0.5)
        for domain in ("A", "B"):
            images = to_tensor(manifest.images(domain))
            bound = capacity.measured_capacity(bundle, domain, images,
                                               sigma_g)
            estimates = {}
            for attr in manifest.split.varying(domain):
                if attr.role == "shared":
                    continue
                codes = [a[attr.name] for a in manifest.attrs(domain)]
                estimates[attr.name] = capacity.embedding_information(
                    bundle, domain, images, codes, sigma_g,
                    samples=cfg["samples"], seed=cfg["seed"])
            entries.append({"checkpoint": str(checkpoint), "domain": domain,
                            "step": meta.get("step"), **bound.to_dict(),
                            "estimated_bits": estimates})
            est = ", ".join(f"{k} {v:.3f}" for k, v in estimates.items())
            lines.append(
                f"{checkpoint} [{domain}] power {bound.power:.4f} "
                f"bound {bound.bits:.2f} bits; estimated: {est or '-'}"
            )
    out.mkdir(parents=True, exist_ok=True)
    (out / "capacity.json").write_text(storage.dumps(entries),
                                       encoding="utf-8")
    (out / "capacity.txt").write_text("\n".join(lines) + "\n",
                                      encoding="utf-8")
    config.write_effective(out, "capacity-report", cfg)
    log("\n".join(lines))


def cmd_report(args):
    import report

    cfg = config.load_section("report", args.config, {
        "metrics": args.metrics, "evals": args.evals, "out": args.out,
    })
    out = Path(_require(cfg, "out", "report"))
    path = report.build_report(cfg["metrics"], cfg["evals"], out)
    config.write_effective(out, "report", cfg)
    log(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="render a toy split to disk")
    p.add_argument("--config")
    p.add_argument("--split", help="A, B, C or a split JSON file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-a", dest="n_a", type=int)
    p.add_argument("--n-b", dest="n_b", type=int)
    p.add_argument("--resolution", type=int)
    p.set_defaults(handler=cmd_datagen)

    p = sub.add_parser("train", help="train a translator")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--disable-norm", action="store_true")
    p.add_argument("--disable-guess", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="manipulation accuracy of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--guides-per-source", dest="guides_per_source", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--grid", action="store_true")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ablate", help="full model against its two ablations")
    p.add_argument("--config", required=True, help="train config file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("capacity-report",
                       help="embedding capacity bound and MI estimate")
    p.add_argument("--config")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--data")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_capacity_report)

    p = sub.add_parser("report", help="tables and curves from run outputs")
    p.add_argument("--config")
    p.add_argument("--metrics", nargs="*")
    p.add_argument("--evals", nargs="*")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_report)
    return parser


def _fail(code, kind, error) -> int:
    print(f"rift-error code={code} kind={kind} "
          f"message={json.dumps(str(error))}", file=sys.stderr, flush=True)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.handler(args)
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except UsageError as e:
        return _fail(EXIT_USAGE, "usage", e)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", e)
    except Exception as e:
        return _fail(EXIT_RUNTIME, "runtime", e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
