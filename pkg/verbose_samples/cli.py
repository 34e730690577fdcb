from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from verbose_samples import __version__
from verbose_samples.attack.gate import FeasibilityGate
from verbose_samples.attack.pgd import attack
from verbose_samples.core.config import (
    METHODS, MODALITIES, AttackConfig, RunConfig, VictimConfig, WeightSchedule,
)
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.harness.experiments import (
    Crafted,
    EvalSettings,
    SampleRecord,
    ablation_suite,
    craft_samples,
    diversity_variants,
    epsilon_sweep,
    evaluate_samples,
    summarize,
    task_comparison,
    transfer_eval,
)
from verbose_samples.harness.measure import linearity_check, linearity_from_points, make_meter
from verbose_samples.harness.reports import (
    Table, format_summary, read_jsonl, split_timing, write_csv, write_json, write_jsonl, write_table,
)
from verbose_samples.harness.stats import length_histogram, mann_whitney, sign_test
from verbose_samples.victim.checkpoint import load_checkpoint, read_header, save_checkpoint
from verbose_samples.victim.model import ToyCaptioner, build_victim, freeze
from verbose_samples.victim.samples import DecodePolicy
from verbose_samples.victim.shape_world import (
    ShapeWorld, ShapeWorldItem, export_dataset, load_dataset, make_shape_world,
)
from verbose_samples.victim.train import mean_greedy_length, token_accuracy, train_toy

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------
_TOP_FLAGS = ("seed", "out", "workers", "modality", "prompt", "method", "trials", "eval_policy",
              "progress", "data", "checkpoints", "records", "forced_lengths")


def _checkpoint_victim(paths: list[str]) -> dict[str, Any] | None:
    """Victim config of the first existing checkpoint; missing paths are left to validate_paths."""
    configs = [read_header(p)[0]["config"] for p in paths if Path(p).is_file()]
    kinds = sorted({str(c["kind"]) for c in configs})
    if len(kinds) > 1:
        raise VerboseSamplesError(
            FailCode.FAIL_CONFIG_INVALID, f"checkpoints mix victim kinds {kinds}", paths=list(paths),
        )
    return configs[0] if configs else None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, then flags, then modality-dependent defaults for anything still unset."""
    raw: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise VerboseSamplesError(FailCode.FAIL_IO, f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "config must be a JSON object")

    for name in _TOP_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    if getattr(args, "epsilons", None) is not None:
        raw["epsilons"] = [e / 255 for e in args.epsilons]

    attack_raw = raw.setdefault("attack", {})
    if getattr(args, "iterations", None) is not None:
        attack_raw["iterations"] = args.iterations
    if getattr(args, "max_length", None) is not None:
        attack_raw["max_length"] = args.max_length
    train_raw = raw.setdefault("train", {})
    if getattr(args, "epochs", None) is not None:
        train_raw["epochs"] = args.epochs
    dataset_raw = raw.setdefault("dataset", {})
    if getattr(args, "n", None) is not None:
        dataset_raw["n_samples"] = args.n
    meter_raw = raw.setdefault("meter", {})
    if getattr(args, "meter", None) is not None:
        meter_raw["kind"] = args.meter
    if getattr(args, "watts", None) is not None:
        meter_raw["watts"] = args.watts

    ckpt_victim = _checkpoint_victim(raw.get("checkpoints") or [])
    if ckpt_victim is not None:
        ckpt_kind = ckpt_victim["kind"]
        if raw.get("modality", ckpt_kind) != ckpt_kind:
            raise VerboseSamplesError(
                FailCode.FAIL_CONFIG_INVALID,
                f"--modality {raw['modality']} contradicts the {ckpt_kind} checkpoint",
                checkpoint_kind=ckpt_kind, modality=raw["modality"],
            )
        raw["modality"] = ckpt_kind
        for key, value in ckpt_victim.items():
            raw.setdefault("victim", {}).setdefault(key, value)
    modality = raw.get("modality", "image")
    victim_defaults = VictimConfig.for_modality(modality)
    victim_raw = raw.setdefault("victim", {})
    victim_raw.setdefault("kind", modality)
    victim_raw.setdefault("n_frames", victim_defaults.n_frames)
    attack_raw.setdefault("schedule", WeightSchedule.for_modality(modality).as_dict())
    dataset_raw.setdefault("kind", modality)
    if "seed" in raw:
        dataset_raw.setdefault("seed", raw["seed"])
    return RunConfig.from_dict(raw)


def _settings(cfg: RunConfig) -> EvalSettings:
    policy = DecodePolicy(cfg.eval_policy, cfg.attack.top_p)
    return EvalSettings(
        policy=policy, trials=cfg.trials, meter=make_meter(cfg.meter),
        max_length=cfg.attack.max_length, workers=cfg.workers, progress=cfg.progress,
    )


def _victim(cfg: RunConfig) -> ToyCaptioner:
    cfg.validate_paths("checkpoints")
    if not cfg.checkpoints:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "--checkpoint is required")
    return load_checkpoint(cfg.checkpoints[0])


def _dataset(cfg: RunConfig) -> ShapeWorld:
    cfg.validate_paths("data")
    if not cfg.data:
        raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "--data is required")
    return load_dataset(cfg.data[0])


# ---------------------------------------------------------------------------
# Command runner
# ---------------------------------------------------------------------------
def _error(out: Path | None, record: dict[str, Any]) -> None:
    print(json.dumps(record, ensure_ascii=False, indent=2), file=sys.stderr)
    if out is not None:
        try:
            write_json(out / "error.json", record)
        except VerboseSamplesError:
            pass


def _run(name: str, args: argparse.Namespace, body: Callable[[RunConfig, Path], dict[str, Any]]) -> int:
    """Resolve config, write provenance, run *body*, print its JSON payload."""
    out: Path | None = None
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        write_json(out / "resolved_config.json", cfg.as_dict())
        log.info("%s: start (out=%s)", name, out)
        payload = body(cfg, out)
        payload = {"command": name, "status": "ok", **payload}
        print(json.dumps(payload, ensure_ascii=False, indent=2))
        if getattr(args, "text", False):
            print(format_summary(name, {k: v for k, v in payload.items() if not isinstance(v, (dict, list))}),
                  file=sys.stderr)
        log.info("%s: done", name)
        return 0
    except VerboseSamplesError as exc:
        _error(out, exc.as_record())
        return 2
    except Exception as exc:  # noqa: BLE001 - any crash becomes an error record
        log.exception("%s failed", name)
        _error(out, {
            "status": "error", "code": "UNEXPECTED", "message": repr(exc),
            "cause": "unexpected exception", "next": "rerun with --log-level DEBUG", "context": {},
        })
        return 1


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_make_data(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        ds_cfg = cfg.dataset
        ds = make_shape_world(ds_cfg.n_samples, ds_cfg.kind, ds_cfg.seed, ds_cfg.image_size, ds_cfg.n_frames)
        export_dataset(ds, out)
        counts = ds.object_counts()
        return {
            "n_samples": len(ds),
            "kind": ds_cfg.kind,
            "seed": ds_cfg.seed,
            "manifest": str(out / "manifest.jsonl"),
            "object_counts": {str(k): int((counts == k).sum()) for k in (1, 2, 3)},
        }
    return _run("make-data", args, body)


def cmd_train(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        tcfg, vcfg = cfg.train, cfg.victim
        if cfg.data:
            cfg.validate_paths("data")
            train_set = load_dataset(cfg.data[0])
            heldout = make_shape_world(tcfg.n_heldout, vcfg.kind, cfg.dataset.seed + 1,
                                       vcfg.image_size, vcfg.n_frames)
        else:
            full = make_shape_world(tcfg.n_train + tcfg.n_heldout, vcfg.kind, cfg.dataset.seed,
                                    vcfg.image_size, vcfg.n_frames)
            train_set = ShapeWorld(full.kind, full.seed, full.items[:tcfg.n_train])
            heldout = ShapeWorld(full.kind, full.seed, full.items[tcfg.n_train:])
        model = train_toy(vcfg, train_set, tcfg, seed=cfg.seed, progress=cfg.progress)
        accuracy = token_accuracy(model, heldout)
        mean_len = mean_greedy_length(model, heldout, cfg.attack.max_length)
        meta = {"epochs": tcfg.epochs, "heldout_accuracy": accuracy, "heldout_mean_length": mean_len,
                "n_train": len(train_set)}
        path = save_checkpoint(model, out / "victim.ckpt", meta)
        return {"checkpoint": str(path), **meta}
    return _run("train", args, body)


def _export_crafted(crafted: list[Crafted], kind: str, out: Path) -> None:
    items = []
    for c in crafted:
        meta = {"method": c.method, "source_id": c.item.sample_id}
        items.append(ShapeWorldItem(c.sample_id, c.sample, c.item.caption, c.item.objects, meta))
        if c.result is not None and len(c.result.history):
            write_jsonl(out / "histories" / f"{c.sample_id}.jsonl",
                        (r.as_dict() for r in c.result.history))
    export_dataset(ShapeWorld(kind, -1, items), out)


def cmd_attack(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        victim, ds = _victim(cfg), _dataset(cfg)
        crafted = craft_samples(victim, ds, cfg.method, cfg.attack, cfg.prompt, cfg.seed,
                                cfg.workers, progress=cfg.progress)
        _export_crafted(crafted, ds.kind, out)
        # feasibility re-checked on what was written
        gate = FeasibilityGate(cfg.attack.epsilon)
        originals = {it.sample_id: it for it in ds}
        violations = []
        for item in load_dataset(out):
            res = gate.check(item.sample.frames, originals[item.meta["source_id"]].sample.frames)
            if not res.passed:
                violations.append({"id": item.sample_id, "reasons": res.fail_reasons})
        if violations:
            raise VerboseSamplesError(
                FailCode.FAIL_CONSTRAINT_VIOLATION, f"{len(violations)} written samples infeasible",
                violations=violations,
            )
        return {
            "method": cfg.method,
            "n_samples": len(crafted),
            "epsilon": cfg.attack.epsilon,
            "iterations": cfg.attack.iterations,
            "samples": [
                {"id": c.sample_id, **(c.result.summary() if c.result else {})} for c in crafted
            ],
        }
    return _run("attack", args, body)


def _crafted_from_datasets(datasets: list[ShapeWorld]) -> tuple[list[Crafted], dict[str, ShapeWorldItem]]:
    originals: dict[str, ShapeWorldItem] = {}
    for ds in datasets:
        for it in ds:
            if it.meta.get("method", "original") == "original":
                originals[it.meta.get("source_id", it.sample_id)] = it
    crafted = []
    for ds in datasets:
        for it in ds:
            method = it.meta.get("method", "original")
            source = it.meta.get("source_id", it.sample_id)
            base = originals.get(source) or ShapeWorldItem(source, it.sample, it.caption, it.objects)
            originals.setdefault(source, base)
            crafted.append(Crafted(base, it.sample, method))
    return crafted, originals


def _direction_checks(records: list[SampleRecord]) -> dict[str, Any]:
    """
    Per attacked method, paired against the original: length U test and
    sign tests on attention and saliency entropy.
    """
    by_method: dict[str, dict[str, Any]] = {}
    for r in records:
        by_method.setdefault(r.method, {})[r.source_id] = r
    base = by_method.get("original")
    checks: dict[str, Any] = {}
    if not base:
        return checks
    for method, rows in sorted(by_method.items()):
        if method == "original":
            continue
        shared = sorted(set(rows) & set(base))
        if not shared:
            continue
        treated = [rows[s].length for s in shared]
        control = [base[s].length for s in shared]
        checks[method] = {
            "n_pairs": len(shared),
            "length_ratio": float(np.mean(treated) / np.mean(control)) if np.mean(control) else None,
            "length_mann_whitney": mann_whitney(treated, control).as_dict(),
            "attention_entropy_sign_test": sign_test(
                [rows[s].metrics["attention_entropy"] for s in shared],
                [base[s].metrics["attention_entropy"] for s in shared],
            ).as_dict(),
        }
        if all("saliency_entropy" in rows[s].metrics and "saliency_entropy" in base[s].metrics for s in shared):
            checks[method]["saliency_entropy_sign_test"] = sign_test(
                [rows[s].metrics["saliency_entropy"] for s in shared],
                [base[s].metrics["saliency_entropy"] for s in shared],
            ).as_dict()
    return checks


def cmd_evaluate(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        victim = _victim(cfg)
        cfg.validate_paths("data")
        datasets = [load_dataset(p) for p in cfg.data]
        crafted, originals = _crafted_from_datasets(datasets)
        records = evaluate_samples(victim, crafted, cfg.prompt, _settings(cfg), cfg.seed)

        write_jsonl(out / "records.jsonl", (r.as_dict() for r in records))
        write_jsonl(out / "timing.jsonl", (r.timing() for r in records))
        summary, timing = split_timing(summarize(records, originals))
        checks = _direction_checks(records)
        write_json(out / "summary.json", {"table": summary.as_dict(), "direction_checks": checks})
        write_csv(out / "summary.csv", summary)
        write_json(out / "timing_summary.json", timing.as_dict() if timing else {})

        # histogram of the original against the first attacked method
        methods = [str(r["method"]) for r in summary.rows]
        if methods:
            first = methods[0]
            second = methods[1] if len(methods) > 1 else None
            hist = length_histogram(
                [r.length for r in records if r.method == first], bins=10,
                other=[r.length for r in records if r.method == second] if second else None,
            )
            columns = ["bin_lo", "bin_hi", first] + ([second] if second else [])
            write_csv(out / "lengths_histogram.csv",
                      Table("lengths_histogram", columns, hist.rows(first, second or "other")))
        return {
            "n_records": len(records),
            "summary": summary.rows,
            "direction_checks": checks,
        }
    return _run("evaluate", args, body)


def cmd_ablate(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        table = ablation_suite(_victim(cfg), _dataset(cfg), cfg.attack, cfg.prompt, cfg.seed, _settings(cfg))
        write_table(out, table)
        return {"cells": split_timing(table)[0].rows}
    return _run("ablate", args, body)


def cmd_transfer(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        cfg.validate_paths("checkpoints")
        if not cfg.checkpoints:
            raise VerboseSamplesError(FailCode.FAIL_CONFIG_INVALID, "--checkpoint is required")
        victims: dict[str, ToyCaptioner] = {}
        for i, path in enumerate(cfg.checkpoints):
            name = Path(path).stem
            victims[name if name not in victims else f"{name}-{i}"] = load_checkpoint(path)
        table = transfer_eval(victims, _dataset(cfg), cfg.attack, cfg.prompt, cfg.seed, _settings(cfg))
        write_table(out, table)
        return {"cells": split_timing(table)[0].rows}
    return _run("transfer", args, body)


def cmd_linearity(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        if cfg.records:
            cfg.validate_paths("records")
            result = linearity_from_points(read_jsonl(cfg.records))
        else:
            result = linearity_check(_victim(cfg), cfg.forced_lengths, meter=make_meter(cfg.meter))
        write_json(out / "linearity.json", result.as_dict())
        points = Table("linearity_points", ["forced_length", "length", "latency", "energy"], result.points)
        write_csv(out / "linearity_points.csv", points)
        return {"latency": result.latency.as_dict(),
                "energy": None if result.energy is None else result.energy.as_dict()}
    return _run("linearity", args, body)


def cmd_sweep(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        table = epsilon_sweep(_victim(cfg), _dataset(cfg), cfg.attack, cfg.epsilons, cfg.prompt,
                              cfg.seed, _settings(cfg))
        write_table(out, table)
        return {"rows": split_timing(table)[0].rows}
    return _run("sweep", args, body)


def cmd_variants(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        table = diversity_variants(_victim(cfg), _dataset(cfg), cfg.attack, cfg.prompt, cfg.seed,
                                   _settings(cfg))
        write_table(out, table)
        return {"rows": split_timing(table)[0].rows}
    return _run("variants", args, body)


def cmd_tasks(args: argparse.Namespace) -> int:
    def body(cfg: RunConfig, out: Path) -> dict[str, Any]:
        table = task_comparison(_victim(cfg), _dataset(cfg), cfg.attack, cfg.prompt or None, cfg.seed,
                                _settings(cfg))
        write_table(out, table)
        return {"rows": split_timing(table)[0].rows}
    return _run("tasks", args, body)


def cmd_selftest(_: argparse.Namespace) -> int:
    """
    Minimal smoke test:
      - reduced image victim builds
      - a shape-world sample decodes
      - a 3-iteration attack stays inside the ε-ball
    Returns:
      0 on success, 1 on error/exception
    """
    try:
        victim = freeze(build_victim(VictimConfig.reduced("image"), seed=0))
        item = make_shape_world(1, "image", seed=0, image_size=8)[0]
        cfg = AttackConfig.for_modality("image", iterations=3, max_length=8)
        result = attack(victim, item.sample, (), cfg, np.random.default_rng(0))
        payload = {
            "version": __version__,
            "caption": item.caption,
            "lengths": result.history.lengths,
            "gate": None if result.gate is None else result.gate.as_dict(),
        }
        print(json.dumps(payload, ensure_ascii=False, indent=2))
        return 0 if result.gate is not None and result.gate.passed else 1
    except Exception as e:
        print(f"[verbose-samples selftest] FAIL: {e!r}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, help="Run seed")
    p.add_argument("--out", help="Output directory")
    p.add_argument("--workers", type=int, help="Worker pool size")
    p.add_argument("--modality", choices=MODALITIES)
    p.add_argument("--prompt", help="Question prompt (empty = captioning)")
    p.add_argument("--progress", action="store_const", const=True, help="Show progress bars")
    p.add_argument("--text", action="store_true", help="Also print a text summary to stderr")
    return p


def _add(sub: Any, name: str, func: Callable[[argparse.Namespace], int], help_: str,
         parents: list[argparse.ArgumentParser]) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_, parents=parents)
    p.set_defaults(func=func)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="verbose-samples", description="Verbose-samples attack toolkit")
    p.add_argument("--version", action="store_true", help="Print version and exit")
    p.add_argument("--log-level", default="WARNING", help="Logging level (DEBUG, INFO, WARNING, ...)")
    sub = p.add_subparsers(dest="cmd", required=False)
    common = [_common()]

    mk = _add(sub, "make-data", cmd_make_data, "Generate a shape-world dataset", common)
    mk.add_argument("--n", type=int, help="Number of samples")

    tr = _add(sub, "train", cmd_train, "Train a toy victim", common)
    tr.add_argument("--data", action="append", help="Training dataset directory")
    tr.add_argument("--epochs", type=int)

    def victim_data(q: argparse.ArgumentParser, many_data: bool = False, many_ckpt: bool = False) -> None:
        q.add_argument("--checkpoint", dest="checkpoints", action="append",
                       help="Victim checkpoint" + (" (repeatable)" if many_ckpt else ""))
        q.add_argument("--data", action="append", help="Dataset directory" + (" (repeatable)" if many_data else ""))

    def attack_flags(q: argparse.ArgumentParser) -> None:
        q.add_argument("--iterations", type=int, help="PGD iterations T")
        q.add_argument("--max-length", dest="max_length", type=int)

    def eval_flags(q: argparse.ArgumentParser) -> None:
        q.add_argument("--trials", type=int)
        q.add_argument("--policy", dest="eval_policy", choices=("greedy", "nucleus"))
        q.add_argument("--meter", choices=("power_proxy", "external_command", "null"))
        q.add_argument("--watts", type=float)

    at = _add(sub, "attack", cmd_attack, "Craft samples with a method", common)
    victim_data(at)
    attack_flags(at)
    at.add_argument("--method", choices=METHODS)

    ev = _add(sub, "evaluate", cmd_evaluate, "Measure length/latency/energy and metrics", common)
    victim_data(ev, many_data=True)
    attack_flags(ev)
    eval_flags(ev)

    for name, func, help_ in (
        ("ablate", cmd_ablate, "Loss-subset and optimizer ablation"),
        ("transfer", cmd_transfer, "Surrogate-to-target transfer table"),
        ("sweep", cmd_sweep, "Perturbation-magnitude sweep"),
        ("variants", cmd_variants, "Video diversity-loss variants"),
        ("tasks", cmd_tasks, "Captioning vs question answering"),
    ):
        q = _add(sub, name, func, help_, common)
        victim_data(q, many_ckpt=name == "transfer")
        attack_flags(q)
        eval_flags(q)
        if name == "sweep":
            q.add_argument("--epsilons", type=float, nargs="+", help="ε values in 8-bit units")

    li = _add(sub, "linearity", cmd_linearity, "Cost vs generated length regression", common)
    victim_data(li)
    li.add_argument("--records", help="JSONL of {length, latency[, energy]} points")
    li.add_argument("--lengths", dest="forced_lengths", type=int, nargs="+")
    li.add_argument("--meter", choices=("power_proxy", "external_command", "null"))
    li.add_argument("--watts", type=float)

    st = sub.add_parser("selftest", help="Run a minimal smoke test")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        print(__version__)
        return 0

    logging.basicConfig(level=str(args.log_level).upper(), format=LOG_FORMAT, stream=sys.stderr)

    func = getattr(args, "func", None)
    if func is None:
        parser.print_help()
        return 0

    return int(func(args))


if __name__ == "__main__":
    raise SystemExit(main())
