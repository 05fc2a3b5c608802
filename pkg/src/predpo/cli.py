"""Command-line entry point: ``predpo <subcommand> ...``.

Every subcommand writes ``config.json`` (effective configuration),
``manifest.json`` (hashes of everything produced), ``snapshots/`` and ``csv/``
under ``--out``; the default output root comes from ``$PREDPO_OUT``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .data import (GenerationConfig, build_on_policy_dataset, dataset_avg_nld, load_jsonl,
                   save_jsonl, synthetic_prompts, synthetic_sft_corpus)
from .errors import ConfigError, PreDpoError
from .evaluation import EVAL_DECODING, RewardOracle, pairwise_win_rate
from .model import ArchConfig, Vocabulary, init_model, load_snapshot, save_snapshot
from .pre_dpo import PreDpoPlan, run_pre_dpo
from .search import SearchSpace, two_stage_search, winrate_objective
from .telemetry import format_phase_table, phase_summary, read_lambda_csv
from .trainer import Method, TrainConfig, sft_train, train_preference

log = logging.getLogger("predpo")

OUT_ENV = "PREDPO_OUT"

SFT_DEFAULTS = {"method": "sft", "learning_rate": 1e-2, "epochs": 10, "batch_size": 32}
PREF_DEFAULTS = {"learning_rate": 5e-3, "epochs": 2, "batch_size": 16}


# --- config handling ----------------------------------------------------------


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path or "<root>")
    for key in d:
        if key not in allowed:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)


def _dataclass_from(cls, d, path, **overrides):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(d, names, path)
    merged = {**d, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return cls(**merged)
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[-1], f"{path}.{e.field}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), path) from None


def load_config(path, sections) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config: {e}", str(path)) from None
    _check_keys(cfg, sections, "")
    return cfg


def _arch(cfg):
    d = dict(cfg.get("arch", {}))
    _check_keys(d, {"vocab_size", "context", "embed_dim", "hidden_dim"}, "arch")
    vocab = Vocabulary(d.pop("vocab_size", 32))
    return _dataclass_from(ArchConfig, d, "arch", vocab=vocab)


def _oracle(cfg, vocab, seed):
    d = dict(cfg.get("oracle", {}))
    _check_keys(d, {"seed", "n_targets", "target_weight", "length_cap", "length_penalty"}, "oracle")
    d.setdefault("seed", seed)
    return RewardOracle(vocab, **d)


def _train_config(section, path, defaults, **flags):
    merged = {**defaults, **section}
    return TrainConfig.from_dict(
        {**merged, **{k: v for k, v in flags.items() if v is not None}}, path)


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(exist_ok=True)
    (out / "csv").mkdir(exist_ok=True)
    return out


def _write(out, config, manifest):
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _load_prompts(args, vocab, seed):
    if getattr(args, "prompts", None):
        text = Path(args.prompts).read_text()
        try:
            return [tuple(p) for p in json.loads(text)]
        except json.JSONDecodeError:
            return [tuple(json.loads(line)) for line in text.splitlines() if line.strip()]
    return synthetic_prompts(args.n_prompts, vocab, seed=seed, length=args.prompt_len)


# --- subcommands --------------------------------------------------------------


def cmd_sft(args):
    cfg = load_config(args.config, {"arch", "oracle", "sft"})
    arch = _arch(cfg)
    oracle = _oracle(cfg, arch.vocab, args.oracle_seed)
    tcfg = _train_config(cfg.get("sft", {}), "sft", SFT_DEFAULTS, seed=args.seed,
                         learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size)
    prompts = _load_prompts(args, arch.vocab, args.seed)
    corpus = synthetic_sft_corpus(prompts, oracle, seed=args.seed)
    model = init_model(arch, args.seed)
    report = sft_train(model, corpus, tcfg)
    out = _out_dir(args)
    save_snapshot(report.final_snapshot, out / "snapshots" / "sft.snap")
    (out / "prompts.json").write_text(json.dumps([list(p) for p in prompts]))
    report.save(out)
    _write(out, {"arch": arch.to_dict(), "oracle": oracle.to_dict(), "sft": tcfg.to_dict(),
                 "seed": args.seed, "n_corpus": len(corpus)},
           {"sft_hash": report.final_snapshot.content_hash, "total_steps": report.total_steps,
            "final_loss": report.loss_curve[-1][2]})
    print(f"sft {report.final_snapshot.content_hash[:12]} loss "
          f"{report.loss_curve[0][2]:.4f} -> {report.loss_curve[-1][2]:.4f}")


def cmd_gen_data(args):
    cfg = load_config(args.config, {"generation", "oracle"})
    snap = load_snapshot(args.model)
    gen = _dataclass_from(GenerationConfig, cfg.get("generation", {}), "generation",
                          seed=args.seed, n_samples=args.n_samples)
    oracle = _oracle(cfg, snap.arch.vocab, args.oracle_seed)
    prompts = _load_prompts(args, snap.arch.vocab, args.seed)
    ds = build_on_policy_dataset(snap, prompts, gen, oracle, jobs=args.jobs)
    out = _out_dir(args)
    save_jsonl(ds, out / "dataset.jsonl")
    _write(out, {"generation": dataclasses.asdict(gen), "oracle": oracle.to_dict(),
                 "model": str(args.model), "n_prompts": len(prompts)},
           {"model_hash": snap.content_hash, "dataset_hash": ds.content_hash(),
            "n_triples": len(ds), "n_dropped": len(prompts) - len(ds),
            "avg_nld": dataset_avg_nld(ds) if len(ds) else None})
    print(f"gen-data {len(ds)} triples from {len(prompts)} prompts -> {out / 'dataset.jsonl'}")


def cmd_train(args):
    cfg = load_config(args.config, {"train"})
    tcfg = _train_config(cfg.get("train", {}), "train", PREF_DEFAULTS, method=args.method,
                         seed=args.seed, beta=args.beta, gamma=args.gamma,
                         learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         tr_dpo_update_every=args.tr_every, sdpo_stages=args.sdpo_stages)
    if tcfg.method is Method.SIMPO and args.ref:
        raise ConfigError("SimPO is reference-free; drop --ref", "train.ref")
    if tcfg.method.uses_reference and not args.ref:
        raise ConfigError(f"{tcfg.method.value} needs --ref", "train.ref")
    policy = load_snapshot(args.policy)
    ref = load_snapshot(args.ref) if args.ref else None
    ds = load_jsonl(args.data)
    report = train_preference(policy, ref, ds, tcfg)
    out = _out_dir(args)
    report.save(out)
    print(f"train {tcfg.method.value} steps={report.total_steps} "
          f"final={report.final_snapshot.content_hash[:12]}")


def cmd_pre_dpo(args):
    cfg = load_config(args.config, {"first", "second"})
    first = _train_config(cfg.get("first", {}), "first", PREF_DEFAULTS, method=args.first,
                          seed=args.seed, beta=args.beta, gamma=args.gamma,
                          learning_rate=args.lr, epochs=args.epochs,
                          batch_size=args.batch_size)
    base = {k: v for k, v in first.to_dict().items() if k != "gamma"}
    base.update(method="dpo", seed=first.seed + 1)
    if first.method is Method.SIMPO:
        base["beta"] = 0.1
    second = _train_config(cfg.get("second", {}), "second", base, beta=args.guide_beta)
    sft = load_snapshot(args.sft)
    ds = load_jsonl(args.data)
    plan = PreDpoPlan.default(sft, ds, first, second)
    result = run_pre_dpo(plan)
    out = _out_dir(args)
    result.save(out)
    (out / "config.json").write_text(json.dumps(
        {"first": plan.first_config.to_dict(), "second": plan.second_config.to_dict(),
         "sft": str(args.sft), "data": str(args.data)}, indent=2, sort_keys=True))
    m = result.manifest()
    print(f"pre-dpo first={m['first_method']} ref={m['first_ref_hash'] and m['first_ref_hash'][:12]} "
          f"guide={m['guide_hash'][:12]} final={m['final_hash'][:12]}")


def cmd_eval(args):
    cfg = load_config(args.config, {"decoding", "oracle"})
    a, b = load_snapshot(args.a), load_snapshot(args.b)
    base = dataclasses.asdict(EVAL_DECODING)
    base.update(cfg.get("decoding", {}))
    decoding = _dataclass_from(GenerationConfig, base, "decoding", seed=args.seed)
    oracle = _oracle(cfg, a.arch.vocab, args.oracle_seed)
    prompts = _load_prompts(args, a.arch.vocab, args.seed + 10_000)
    report = pairwise_win_rate(a, b, prompts, oracle, decoding)
    out = _out_dir(args)
    (out / "eval.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    _write(out, {"decoding": dataclasses.asdict(decoding), "oracle": oracle.to_dict()},
           {"a_hash": a.content_hash, "b_hash": b.content_hash})
    print(report.summary())


def _lambda_runs(run_dir: Path):
    if (run_dir / "csv" / "lambdas.csv").exists():
        yield run_dir.name, run_dir
    for sub in ("round1", "round2"):
        if (run_dir / sub / "csv" / "lambdas.csv").exists():
            yield f"{run_dir.name}/{sub}", run_dir / sub


def cmd_lambda_report(args):
    found = False
    for run_dir in args.run_dirs:
        for label, d in _lambda_runs(Path(run_dir)):
            records = read_lambda_csv(d / "csv" / "lambdas.csv")
            if not records:
                print(f"{label}: no lambda records (reference-free run)")
                continue
            total = json.loads((d / "manifest.json").read_text())["total_steps"]
            print(format_phase_table(*phase_summary(records, total), title=label))
            found = True
    if not found:
        raise PreDpoError("no lambdas.csv with records found in the given directories")


def cmd_search(args):
    cfg = load_config(args.config, {"search", "oracle"})
    section = dict(cfg.get("search", {}))
    _check_keys(section, {"base", "stage1_fixed_lr", "beta_grid", "gamma_grid", "lr_grid"},
                "search")
    base = _train_config(section.pop("base", {}), "search.base", PREF_DEFAULTS,
                         method=args.method, seed=args.seed)
    space = SearchSpace.desk_default(args.method, base)
    for key, value in section.items():
        setattr(space, key, tuple(value) if isinstance(value, list) else value)
    space.__post_init__()
    sft = load_snapshot(args.sft)
    ds = load_jsonl(args.data)
    oracle = _oracle(cfg, sft.arch.vocab, args.oracle_seed)
    prompts = synthetic_prompts(args.n_eval_prompts, sft.arch.vocab, seed=args.seed + 10_000)
    objective = winrate_objective(sft, prompts, oracle)
    ref_spec = args.ref if args.ref in ("sft", "none") else load_snapshot(args.ref)
    result = two_stage_search(space, sft, ref_spec, ds, objective, jobs=args.jobs)
    out = _out_dir(args)
    result.save(out)
    _write(out, {"space": space.audit(), "base": base.to_dict(), "oracle": oracle.to_dict(),
                 "n_eval_prompts": args.n_eval_prompts},
           {"sft_hash": sft.content_hash, "dataset_hash": ds.content_hash(),
            "n_runs": len(result.runs), "best": result.best and dataclasses.asdict(result.best)})
    best = result.best
    print(f"search {len(result.runs)} runs; best beta={best.config['beta']} "
          f"gamma={best.config['gamma']} lr={best.config['learning_rate']} value={best.value:.4f}")


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>)")
    common.add_argument("--oracle-seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    prompts = argparse.ArgumentParser(add_help=False)
    prompts.add_argument("--prompts", help="JSON array or JSONL of token sequences")
    prompts.add_argument("--n-prompts", type=int, default=256)
    prompts.add_argument("--prompt-len", type=int, default=2)

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--beta", type=float)
    train.add_argument("--gamma", type=float)
    train.add_argument("--lr", type=float)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)

    p = argparse.ArgumentParser(prog="predpo", description="Preference optimization lab")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sft", parents=[common, prompts, train], help="supervised pretraining")
    s.set_defaults(func=cmd_sft)

    s = sub.add_parser("gen-data", parents=[common, prompts], help="on-policy preference data")
    s.add_argument("--model", required=True)
    s.add_argument("--n-samples", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common, train], help="preference optimization")
    s.add_argument("--method", required=True, choices=["dpo", "simpo", "trdpo", "sdpo"])
    s.add_argument("--policy", required=True)
    s.add_argument("--ref")
    s.add_argument("--data", required=True)
    s.add_argument("--tr-every", type=int)
    s.add_argument("--sdpo-stages", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("pre-dpo", parents=[common, train], help="guiding-reference pipeline")
    s.add_argument("--first", required=True, choices=["dpo", "simpo", "trdpo", "sdpo"])
    s.add_argument("--sft", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--guide-beta", type=float, help="beta of the guided DPO round")
    s.set_defaults(func=cmd_pre_dpo)

    s = sub.add_parser("eval", parents=[common, prompts], help="pairwise oracle win rate")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("lambda-report", parents=[common], help="early/late lambda buckets")
    s.add_argument("run_dirs", nargs="+")
    s.set_defaults(func=cmd_lambda_report)

    s = sub.add_parser("search", parents=[common], help="two-stage hyperparameter search")
    s.add_argument("--method", required=True, choices=["dpo", "simpo", "trdpo", "sdpo"])
    s.add_argument("--sft", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--ref", default="sft", help="sft, none, or a snapshot path")
    s.add_argument("--n-eval-prompts", type=int, default=128)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_search)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"predpo {args.command}: config error: {e}", file=sys.stderr)
        return 1
    except (PreDpoError, OSError, ValueError) as e:
        print(f"predpo {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
