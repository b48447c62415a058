"""Command-line driver.

    flowuap synth      --out flows.csv
    flowuap preprocess --input flows.csv --profile cicids2018 --out data/
    flowuap train      --data data/ --runs 10 --seed 0 --out agents/
    flowuap attack     --agent agents/median.npz --data data/ --method bim --eps 0.02
    flowuap uap        --agent agents/median.npz --data data/ --loss pcc_pertu --eps 0.04 --runs 5
    flowuap sweep      --agent agents/median.npz --data data/ --grid 0:0.04:17 --runs 80 --out results/sweep

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
Every subcommand accepts ``--config file.json``; its keys are flag names
(dashes or underscores) and explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

from . import __version__
from .errors import ConfigurationError, FlowUapError, SchemaError, ValidationError

log = logging.getLogger("flowuap")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DATA_FILES = ("train", "balanced", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---- argument definitions

def _common(p):
    p.add_argument("--config", help="JSON file with default values for any flag of this command")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _agent_data(p):
    p.add_argument("--agent", required=True, help="network checkpoint (.npz)")
    p.add_argument("--data", required=True, help="directory written by `preprocess`")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flowuap", description="Constrained adversarial attacks on a DQN flow classifier.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic CICFlowMeter-style CSV")
    _common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--n-benign", type=int, default=3600)
    p.add_argument("--n-attack", type=int, default=2400)
    p.add_argument("--separation", type=float, default=2.0, help="class separation scale (0 = identical)")
    p.add_argument("--uf-signal", type=float, default=0.25, help="class signal in non-modifiable columns")

    p = sub.add_parser("preprocess", help="encode, split, normalize and undersample CSV flows")
    _common(p)
    p.add_argument("--input", nargs="+", required=True, help="one or more CSV files")
    p.add_argument("--profile", default="cicids2018", help="feature profile name or JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--no-reconcile", action="store_true",
                   help="keep recorded related-feature values instead of recomputing them")

    p = sub.add_parser("train", help="train DQN agents and select the median one")
    _common(p)
    p.add_argument("--data", required=True, help="directory written by `preprocess`")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--gamma", type=float, default=0.001)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--jobs", type=int, default=1, help="parallel training runs")

    p = sub.add_parser("attack", help="per-input FGSM/BIM attack on the malicious test rows")
    _common(p)
    _agent_data(p)
    p.add_argument("--method", choices=("fgsm", "bim"), required=True)
    p.add_argument("--eps", type=float, required=True, help="L-inf budget in normalized units")
    p.add_argument("--unconstrained", action="store_true", help="perturb all features, skip domain constraints")
    p.add_argument("--bim-steps", type=int, default=20)
    p.add_argument("--bim-max-iter", type=int, default=100)
    p.add_argument("--out", help="optional CSV of per-sample results")

    p = sub.add_parser("uap", help="generate universal perturbations")
    _common(p)
    _agent_data(p)
    p.add_argument("--loss", default="ce", help="ce|pcc_pertu|pd_mean|pd_l2|cossim_l3|cossim_l4")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed-fraction", type=float, default=0.001)
    p.add_argument("--delta-target", type=float, default=0.2)
    p.add_argument("--max-iter", type=int, default=10)
    p.add_argument("--random-init", action="store_true", help="start from a small random sign vector")
    p.add_argument("--out", help="output directory for UAP files")

    p = sub.add_parser("sweep", help="full attack x epsilon x run grid")
    _common(p)
    _agent_data(p)
    p.add_argument("--grid", default="0:0.04:17", help="lo:hi:n or comma list (default 0:0.04:17)")
    p.add_argument("--runs", type=int, default=80, help="UAP generations per cell")
    p.add_argument("--attacks", default="fgsm,bim,fgsm_unconstrained,bim_unconstrained",
                   help="comma list of per-input attacks ('' for none)")
    p.add_argument("--losses", default="ce,pcc_pertu,pd_mean,pd_l2,cossim_l3,cossim_l4",
                   help="comma list of UAP losses ('' for none)")
    p.add_argument("--seed-fraction", type=float, default=0.001)
    p.add_argument("--delta-target", type=float, default=0.2)
    p.add_argument("--max-iter", type=int, default=10)
    p.add_argument("--random-init", action="store_true")
    p.add_argument("--pcc-layer", default="q", help="layer for PCC metrics: q or 1..4")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv, PREFIX_long.csv, PREFIX_summary.json")
    return ap


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _read_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return cfg


def parse_args(argv):
    """Parse ``argv``; values from ``--config`` become defaults, so flags win."""
    ap = build_parser()
    path = _config_path(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if path and command:
        sub = ap._subparsers._group_actions[0].choices[command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for k, v in _read_config(path).items():
            dest = k.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise ConfigurationError(f"config key {k!r} is not a flag of `{command}`")
            defaults[dest] = v
        sub.set_defaults(**defaults)
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
    return ap.parse_args(argv)


# ---- helpers

def _load_data(dirpath, names=DATA_FILES):
    from .persist import load_dataset

    if not os.path.isdir(dirpath):
        raise ConfigurationError(f"data directory not found: {dirpath}")
    return {n: load_dataset(os.path.join(dirpath, f"{n}.npz")) for n in names}


def _load_agent(path, schema):
    from .persist import load_network

    net, meta = load_network(path)
    want = meta.get("schema_hash")
    if want and want != schema.fingerprint:
        raise SchemaError(f"{path} was trained on a different feature schema")
    return net


def _print_counts(title, ds):
    b, a = ds.class_counts()
    print(f"  {title:<10} benign {b:>8}  attack {a:>8}  total {b + a:>8}")


def _manifest(args, config):
    from .persist import RunManifest

    return RunManifest(args.command, config, args.seed)


def _args_dict(args):
    return {k: v for k, v in vars(args).items() if k not in ("verbose",)}


# ---- commands

def cmd_synth(args):
    from .data.synth import SynthConfig, synth_generate, write_csv

    cfg = SynthConfig(args.n_benign, args.n_attack, args.separation, args.seed, args.uf_signal)
    table = synth_generate(cfg)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_csv(table, args.out)
    b = int(sum(1 for v in table.labels if v == "Benign"))
    print(f"wrote {len(table)} flows ({b} benign, {len(table) - b} attack) to {args.out}")
    return EXIT_OK


def cmd_preprocess(args):
    from .data import get_profile, load_csv, prepare
    from .persist import save_dataset

    profile = get_profile(args.profile)
    raw = load_csv(args.input, profile)
    st = raw.stats
    print(f"rows read {st.rows_read}  skipped malformed {st.skipped_malformed}  "
          f"header repeats {st.header_repeats}  dropped invalid MF {st.dropped_invalid_mf}  "
          f"Infinity substituted {st.inf_substituted}  NaN substituted {st.nan_substituted}")
    prep = prepare(raw, profile, seed=args.seed, train_fraction=args.train_fraction,
                   reconcile_related=not args.no_reconcile)
    os.makedirs(args.out, exist_ok=True)
    man = _manifest(args, _args_dict(args))
    for p in args.input:
        man.add_input(p)
    for name in DATA_FILES:
        path = os.path.join(args.out, f"{name}.npz")
        man.add_output(path, save_dataset(path, getattr(prep, name)))
    with open(os.path.join(args.out, "schema.json"), "w") as f:
        f.write(prep.schema.to_json())
    print(f"profile {prep.schema.name}: {prep.schema.n_features} features; "
          f"related features reconciled on {prep.reconciled_rows} rows; "
          f"test values clamped {prep.test.clamped}")
    _print_counts("train", prep.train)
    _print_counts("balanced", prep.balanced)
    _print_counts("test", prep.test)
    man.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def cmd_train(args):
    from .dqn import TrainConfig, select_median_agent, train_many
    from .persist import save_network

    data = _load_data(args.data)
    cfg = TrainConfig(gamma=args.gamma, episodes=args.episodes, learning_rate=args.lr,
                      runs=args.runs, seed=args.seed)
    reports = train_many(data["balanced"], cfg, data["test"], jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    man = _manifest(args, {**_args_dict(args), "train_config": asdict(cfg)})
    schema_hash = data["test"].schema.fingerprint
    with open(os.path.join(args.out, "run_ledger.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("run", "episode", "train_acc", "test_acc", "seed"))
        for r in reports:
            for ep, acc in enumerate(r.train_accuracy):
                w.writerow((r.run_index, ep, repr(acc), repr(r.test_accuracy), r.seed))
    for r in reports:
        path = os.path.join(args.out, f"run_{r.run_index:02d}.npz")
        man.add_output(path, save_network(path, r.agent, schema_hash, r.summary()))
        print(f"  run {r.run_index:2d}  test accuracy {r.test_accuracy:.4f}")
    best = select_median_agent(reports)
    path = os.path.join(args.out, "median.npz")
    man.add_output(path, save_network(path, best.agent, schema_hash, best.summary()))
    print(f"median agent: run {best.run_index} (test accuracy {best.test_accuracy:.4f}) -> {path}")
    man.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def _clean_line(net, test):
    from .sweep import clean_baseline

    c = clean_baseline(net, test)
    fnr = "undefined" if c["fnr"] is None else f"{c['fnr']:.4f}"
    return f"clean      accuracy {c['accuracy']:.4f}  FNR {fnr}"


def cmd_attack(args):
    from .attacks import AttackConfig, adversarial_features, attack_dataset
    from .metrics import accuracy_fnr, confusion

    data = _load_data(args.data, ("test",))
    test = data["test"]
    net = _load_agent(args.agent, test.schema)
    cfg = AttackConfig(args.eps, bim_steps=args.bim_steps, bim_max_iter=args.bim_max_iter,
                       constrained=not args.unconstrained)
    res = attack_dataset(net, test, args.method, cfg)
    c = confusion(net.predict(adversarial_features(test, res)), test.labels)
    acc, fnr = accuracy_fnr(c)
    print(_clean_line(net, test))
    fnr_s = "undefined" if fnr is None else f"{fnr:.4f}"
    kind = args.method + ("" if cfg.constrained else " (unconstrained)")
    print(f"{kind:<10} accuracy {acc:.4f}  FNR {fnr_s}  eps {args.eps}  attacked rows {len(res.ids)}")
    if args.out:
        rows = list(res.rows())
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", newline="") as f:
            if rows:
                w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
        print(f"per-sample results -> {args.out}")
    return EXIT_OK


def cmd_uap(args):
    from .losses import LossKind
    from .metrics import accuracy_fnr, confusion
    from .persist import save_uap
    from .uap import UapConfig, apply_uap, generate_uap, run_seed

    data = _load_data(args.data, ("balanced", "test"))
    train, test = data["balanced"], data["test"]
    net = _load_agent(args.agent, test.schema)
    kind = LossKind.parse(args.loss)
    if args.runs < 1:
        raise ConfigurationError("--runs must be >= 1")
    man = _manifest(args, _args_dict(args))
    print(_clean_line(net, test))
    for r in range(args.runs):
        cfg = UapConfig(epsilon=args.eps, loss=kind, seed_fraction=args.seed_fraction,
                        delta_target=args.delta_target, max_iter=args.max_iter,
                        random_init=args.random_init,
                        seed=run_seed(args.seed, f"uap/{kind.value}/{args.eps!r}", r))
        res = generate_uap(net, train, cfg, test.schema)
        X = apply_uap(test.features, res.uap, test.schema)
        acc, fnr = accuracy_fnr(confusion(net.predict(X), test.labels))
        fnr_s = "undefined" if fnr is None else f"{fnr:.4f}"
        print(f"  run {r:3d}  iterations {res.iterations_used:3d}  train fooling rate "
              f"{res.fooling_rate:.4f}  test accuracy {acc:.4f}  FNR {fnr_s}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, f"uap_{kind.value}_{r:03d}.npz")
            man.add_output(path, save_uap(path, res, test.schema.fingerprint))
    if args.out:
        man.write(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


def _csv_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip()) if text else ()


def cmd_sweep(args):
    from .sweep import SweepConfig, clean_baseline, parse_grid, run_sweep, write_outputs

    data = _load_data(args.data, ("balanced", "test"))
    train, test = data["balanced"], data["test"]
    net = _load_agent(args.agent, test.schema)
    layer = args.pcc_layer if args.pcc_layer == "q" else int(args.pcc_layer)
    cfg = SweepConfig(
        grid=parse_grid(args.grid), attacks=_csv_list(args.attacks), losses=_csv_list(args.losses),
        runs=args.runs, master_seed=args.seed, seed_fraction=args.seed_fraction,
        delta_target=args.delta_target, max_iter=args.max_iter, random_init=args.random_init,
        pcc_layer=layer,
    )
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    records = run_sweep(net, train, test, cfg, jobs=args.jobs)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    paths = write_outputs(records, args.out, clean_baseline(net, test))
    man = _manifest(args, {**_args_dict(args), "sweep_config": cfg.to_dict()})
    man.add_input(args.agent)
    for p in paths.values():
        man.add_output(p)
    man.write(f"{args.out}_manifest.json")
    print(_clean_line(net, test))
    print(f"{len(records)} metric rows; {len(cfg.grid)} epsilon values; {cfg.runs} UAP runs per cell")
    for k, p in paths.items():
        print(f"  {k:<9} {p}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
    "attack": cmd_attack, "uap": cmd_uap, "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        print(f"flowuap: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, SchemaError, ValidationError) as e:
        print(f"flowuap {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FlowUapError, ArithmeticError, OSError) as e:
        print(f"flowuap {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
