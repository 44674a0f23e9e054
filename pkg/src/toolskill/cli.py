"""Reproducible experiment driver.

Subcommands mirror the experiment workflow: collect, pretrain, finetune,
rollout, eval, analyze. Every command validates its config, writes a config
echo plus input hashes next to its outputs, and is idempotent given the
same inputs. Artifacts carry no timestamps, so a rerun with identical seeds
produces byte-identical files.

Exit codes: 0 success, 2 invalid config or inputs, 3 missing upstream
artifact, 4 numeric failure during training or simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import controller, evaluation, rollout as rollout_mod, training
from .config import (
    config_hash,
    env_from_config,
    load_config,
    tool_from_config,
    write_echo,
)
from .data import Dataset, file_hash, spec_from_json
from .errors import (
    ConfigError,
    DomainError,
    InputError,
    MetricError,
    MissingInputError,
    NumericalError,
)
from .seq2seq import Seq2SeqParams
from .sensing import NormalizationStats
from .training import TrainConfig

log = logging.getLogger("toolskill")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingInputError(f"{what} not found: {path}")
    return Path(path)


def _load_artifacts(params_dir) -> tuple[Seq2SeqParams, NormalizationStats]:
    params_dir = Path(params_dir)
    params_path = _require(params_dir / "params.json", "parameter file")
    stats_path = _require(params_dir / "normalization.json", "normalization stats")
    return Seq2SeqParams.load(params_path), NormalizationStats.load(stats_path)


def _train_config(section: dict, seed: int, mask=None, channel_mask=None) -> TrainConfig:
    kwargs = dict(
        epochs=section["epochs"],
        lr=section["lr"],
        seed=seed,
    )
    for key in ("beta", "t_past", "t_next", "dropout", "batch_size", "channel_mask"):
        if key in section:
            kwargs[key] = section[key]
    if channel_mask is not None:
        kwargs["channel_mask"] = channel_mask
    if mask is not None:
        kwargs["mask"] = tuple(mask)
    return TrainConfig(**kwargs)


def _save_loss_curve(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i + 1, repr(float(v))])


def _save_train_outputs(out_dir, result, cfg, inputs, provenance, wall_seconds=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = write_echo(out_dir, cfg, inputs)
    provenance = {"config_hash": digest, **provenance}
    result.stats.save(out_dir / "normalization.json")
    result.params.save(
        out_dir / "params.json", stats_ref="normalization.json", provenance=provenance
    )
    _save_loss_curve(out_dir / "loss_curve.csv", result.loss_curve)
    if wall_seconds is not None:
        # machine-dependent side channel; deliberately not part of the
        # byte-reproducible artifact set
        with open(out_dir / "timing.json", "w") as fh:
            json.dump({"wall_seconds": wall_seconds, "epochs": len(result.loss_curve)}, fh)
    print(f"wrote {out_dir}/params.json (final loss {result.loss_curve[-1]:.6f})")


def cmd_collect(args) -> int:
    cfg = load_config(args.config, args.set or [])
    tool = tool_from_config(cfg["tool"])
    seed = cfg["seed"] if args.seed is None else args.seed
    col = cfg["collect"]
    if args.kind == "primitive":
        dataset = controller.collect_primitive_dataset(
            tool,
            seed=seed,
            n_inclined=col["n_inclined"],
            n_step=col["n_step"],
            inclination_range=tuple(col["inclination_range"]),
            step_height_range=tuple(col["step_height_range"]),
            grip_force=col["grip_force"],
            tactile_sigma=col["tactile_sigma"],
            prox_sigma=col["prox_sigma"],
        )
    else:
        demo = cfg["demo"]
        target = demo["target_force"] if args.target_force is None else args.target_force
        demo_tool = tool if demo["tool"] is None else tool_from_config(demo["tool"])
        envs = [env_from_config(e) for e in demo["envs"]]
        dataset = controller.collect_demo_dataset(
            envs[0],
            demo_tool,
            target,
            seed=seed,
            count=demo["count"],
            envs=envs,
            grip_force=col["grip_force"],
            tactile_sigma=col["tactile_sigma"],
            prox_sigma=col["prox_sigma"],
        )
    digest = dataset.save(args.out)
    write_echo(args.out, cfg)
    print(f"wrote {len(dataset)} trajectories to {args.out} (content hash {digest[:12]})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.set or [])
    dataset_dir = _require(Path(args.dataset), "dataset")
    _require(dataset_dir / "manifest.json", "dataset manifest")
    dataset = Dataset.load(dataset_dir)
    seed = cfg["seed"] if args.seed is None else args.seed
    tc = _train_config(cfg["pretrain"], seed)
    t0 = time.perf_counter()
    result = training.pretrain(dataset, tc)
    wall = time.perf_counter() - t0
    dataset_hash = Dataset.content_hash(dataset_dir)
    _save_train_outputs(
        args.out,
        result,
        cfg,
        inputs={"dataset": dataset_hash},
        provenance={
            "phase": "pretrain",
            "dataset_hash": dataset_hash,
            "tool": cfg["tool"],
            "channel_mask": tc.channel_mask,
            "seed": seed,
        },
        wall_seconds=wall,
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_config(args.config, args.set or [])
    mask = list(cfg["finetune"]["mask"])
    if mask != ["dec_fc"] and not args.allow_full:
        raise ConfigError(
            f"finetune.mask {mask} touches more than the decoder FC layer; "
            "pass --allow-full to permit it"
        )
    base_dir = Path(args.base)
    base_params, stats = _load_artifacts(base_dir)
    demos_dir = _require(Path(args.demos), "demo dataset")
    demos = Dataset.load(demos_dir)
    seed = cfg["seed"] if args.seed is None else args.seed
    base_mask = getattr(base_params, "meta", {}).get("provenance", {}).get("channel_mask")
    tc = _train_config(
        cfg["finetune"] | {k: cfg["pretrain"][k] for k in ("beta", "t_past", "t_next", "dropout", "batch_size")},
        seed,
        mask=mask,
        channel_mask=base_mask or cfg["pretrain"]["channel_mask"],
    )
    t0 = time.perf_counter()
    result = training.finetune(base_params, demos, tc, stats)
    wall = time.perf_counter() - t0
    demos_hash = Dataset.content_hash(demos_dir)
    base_hash = file_hash(base_dir / "params.json")
    _save_train_outputs(
        args.out,
        result,
        cfg,
        inputs={"base_params": base_hash, "demos": demos_hash},
        provenance={
            "phase": "finetune",
            "base_hash": base_hash,
            "demos_hash": demos_hash,
            "tool": cfg["tool"],
            "channel_mask": tc.channel_mask,
            "seed": seed,
        },
        wall_seconds=wall,
    )
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, args.set or [])
    params, stats = _load_artifacts(args.params)
    tool = tool_from_config(cfg["tool"])
    ro = cfg["rollout"]
    env = env_from_config(ro["env"])
    col = cfg["collect"]
    mask = getattr(params, "meta", {}).get("provenance", {}).get("channel_mask", "full")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for seed in ro["seeds"]:
        rec = rollout_mod.rollout(
            params, stats, env, tool, ro["duration"], seed=seed,
            channel_mask=mask, clamp=ro["clamp"],
            grip_force=col["grip_force"],
            tactile_sigma=col["tactile_sigma"],
            prox_sigma=col["prox_sigma"],
        )
        record_name = f"rollout_s{seed}.jsonl"
        latents_name = f"latents_s{seed}.csv"
        rec.save(out_dir / record_name, out_dir / latents_name)
        files.extend([record_name, latents_name])
    manifest = {
        "files": files,
        "params_hash": file_hash(Path(args.params) / "params.json"),
        "channel_mask": mask,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    write_echo(out_dir, cfg, inputs={"params": manifest["params_hash"]})
    print(f"wrote {len(ro['seeds'])} rollouts to {out_dir}")
    return EXIT_OK


def _parse_conditions(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--condition needs NAME=DIR, got {pair!r}")
        name, _, d = pair.partition("=")
        out[name] = Path(d)
    return out


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set or [])
    cond_dirs = _parse_conditions(args.condition)
    ev = cfg["eval"]
    seeds = list(ev["seeds"])
    if not cond_dirs or not seeds:
        raise MissingInputError("eval needs at least one --condition and one seed")
    tool = tool_from_config(cfg["tool"])
    conditions = {}
    tools_seen = {}
    for name, d in sorted(cond_dirs.items()):
        params, stats = _load_artifacts(d)
        prov = getattr(params, "meta", {}).get("provenance", {})
        tools_seen[name] = prov.get("tool")
        conditions[name] = evaluation.ConditionSpec(
            params=params, stats=stats, channel_mask=prov.get("channel_mask", "full")
        )
    distinct = {json.dumps(t, sort_keys=True) for t in tools_seen.values() if t is not None}
    if len(distinct) > 1 and not args.allow_mismatch:
        raise ConfigError(
            f"conditions were trained with different tools: {tools_seen}; "
            "pass --allow-mismatch to compare anyway"
        )
    envs = [env_from_config(e) for e in ev["envs"]]
    if len(envs) == 1:
        envs = envs * len(seeds)
    if len(envs) != len(seeds):
        raise ConfigError("eval.envs must have one entry or one per seed")
    env_by_seed = dict(zip(seeds, envs))
    col = cfg["collect"]
    report = evaluation.compare_baselines(
        conditions,
        env_for_seed=lambda s: env_by_seed[s],
        tool=tool,
        seeds=seeds,
        target_force=ev["target_force"],
        metrics=tuple(ev["metrics"]),
        rollout_kwargs={
            "grip_force": col["grip_force"],
            "tactile_sigma": col["tactile_sigma"],
            "prox_sigma": col["prox_sigma"],
        },
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "report.json", out_dir / "report.csv")
    inputs = {name: file_hash(d / "params.json") for name, d in sorted(cond_dirs.items())}
    write_echo(out_dir, cfg, inputs=inputs)
    for row in report.rows:
        stats_txt = "  ".join(
            f"{m}={row['mean'][m]:.4f}+-{row['std'][m]:.4f}" for m in report.metrics
        )
        print(f"{row['condition']:<12} {stats_txt}")
    return EXIT_OK


def _read_latents(rollout_dir) -> list:
    """(name, header meta, frame indices, cell-state matrix) per rollout."""
    rollout_dir = Path(rollout_dir)
    out = []
    for latents_path in sorted(rollout_dir.glob("latents_s*.csv")):
        record_path = latents_path.with_name(
            latents_path.name.replace("latents_", "rollout_")
        ).with_suffix(".jsonl")
        meta = {}
        if record_path.exists():
            with open(record_path) as fh:
                meta = json.loads(fh.readline())["header"]
        with open(latents_path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n_hidden = sum(1 for c in header if c.startswith("c"))
            frames, cells = [], []
            for row in reader:
                frames.append(int(row[0]))
                cells.append([float(v) for v in row[1 : 1 + n_hidden]])
        out.append((latents_path.stem, meta, np.array(frames), np.array(cells)))
    if not out:
        raise MissingInputError(f"no latent files under {rollout_dir}")
    return out


def cmd_analyze(args) -> int:
    load_config(args.config, args.set or [])  # validated for hash/echo only
    runs = []
    for d in args.rollouts:
        runs.extend(_read_latents(d))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "pca":
        rows, labels = [], []
        for name, meta, frames, cells in runs:
            sel = np.flatnonzero(frames == args.frame)
            if sel.size == 0:
                raise InputError(f"{name}: no latent at frame {args.frame}")
            rows.append(cells[sel[0]])
            labels.append((name, meta.get("env", {}).get("inclination")))
        result = evaluation.pca(np.array(rows), k=args.components)
        with open(out_dir / "pca_projections.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rollout", "inclination"] + [f"pc{i+1}" for i in range(args.components)])
            for (name, incl), proj in zip(labels, result.projections):
                w.writerow([name, incl] + [repr(float(v)) for v in proj])
        with open(out_dir / "pca_variance_ratios.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "variance_ratio"])
            for i, r in enumerate(result.variance_ratios):
                w.writerow([i + 1, repr(float(r))])
        print(f"wrote PCA of {len(rows)} latent snapshots to {out_dir}")
    else:
        all_cells, index = [], []
        for name, _, frames, cells in runs:
            all_cells.append(cells)
            index.extend((name, int(f)) for f in frames)
        mat = np.concatenate(all_cells)
        result = evaluation.tsne(
            mat, perplexity=args.perplexity, lr=args.lr, iters=args.iters, seed=args.seed
        )
        with open(out_dir / "tsne_embedding.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rollout", "frame", "x", "y"])
            for (name, frame), (x, y) in zip(index, result.embedding):
                w.writerow([name, frame, repr(float(x)), repr(float(y))])
        print(f"wrote t-SNE of {mat.shape[0]} cell states to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toolskill",
        description="Few-shot tool-use skill transfer workbench",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config value")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("collect", help="run the scripted controller and record data")
    common(p)
    p.add_argument("--kind", choices=["primitive", "demo"], default="primitive")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target-force", type=float, default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("pretrain", help="train the base policy on primitive data")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="adapt the decoder head on demonstrations")
    common(p)
    p.add_argument("--base", required=True, help="directory with base params")
    p.add_argument("--demos", required=True, help="demo dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--allow-full", action="store_true",
                   help="permit fine-tuning beyond the decoder FC layer")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("rollout", help="closed-loop policy execution")
    common(p)
    p.add_argument("--params", required=True, help="directory with trained params")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="compare policy conditions with matched rollouts")
    common(p)
    p.add_argument("--condition", action="append", metavar="NAME=DIR",
                   help="policy condition to evaluate (repeatable)")
    p.add_argument("--allow-mismatch", action="store_true",
                   help="compare conditions with mismatched tool provenance")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="latent-space exports (PCA / t-SNE)")
    common(p)
    p.add_argument("--rollouts", action="append", required=True,
                   help="rollout directory with latent sidecars (repeatable)")
    p.add_argument("--mode", choices=["pca", "tsne"], default="pca")
    p.add_argument("--frame", type=int, default=100,
                   help="frame index for PCA snapshots (default t=5s)")
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--lr", type=float, default=200.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, DomainError, InputError, MetricError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as e:
        extra = f" (epoch {e.epoch})" if e.epoch is not None else ""
        print(f"numeric failure: {e}{extra}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
