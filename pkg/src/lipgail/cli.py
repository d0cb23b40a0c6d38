"""``lipgail`` command line: demos, training, noise/ELLC evaluation, theory checks.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 I/O failure,
4 training aborted on a non-finite loss.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .envs import ENVS, gen_demos, load_demos, make_env
from .evaluation import DEFAULT_NOISE_LEVELS, ellc_report, eval_noise, report_to_csv
from .gail import VERSION_TAG, Agent, ConfigError, TrainConfig, TrainingDiverged, config_hash, train
from .theory import SHIPPED, verify

log = logging.getLogger("lipgail")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
DEFAULT_DEMOS = 25


@dataclass
class EvalSpec:
    noise_levels: list = field(default_factory=lambda: list(DEFAULT_NOISE_LEVELS))
    noise_kind: str = "gaussian"
    episodes: int = 20
    ellc_radii: list = field(default_factory=lambda: [0.05, 0.1, 0.2])

    def __post_init__(self):
        if not self.noise_levels or min(self.noise_levels) < 0:
            raise ConfigError("eval.noise_levels must be a nonempty list of values >= 0")
        if self.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        if not self.ellc_radii or min(self.ellc_radii) <= 0:
            raise ConfigError("eval.ellc_radii must be a nonempty list of values > 0")


@dataclass
class Paths:
    demos: str | None = None  # None: generate `n_demos` expert trajectories into the out dir
    out_dir: str = "runs/default"
    n_demos: int = DEFAULT_DEMOS


def _strict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """One training run plus how to evaluate it; every section is strictly keyed."""

    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    paths: Paths = field(default_factory=Paths)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - {"train", "eval", "paths", "seed"})
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {unknown}")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        train_doc = dict(doc.get("train", {}))
        if "seed" in train_doc and train_doc["seed"] != seed:
            raise ConfigError("train.seed conflicts with the top-level seed")
        train_doc["seed"] = seed
        tc = TrainConfig.from_dict(train_doc)
        if tc.env not in ENVS:
            raise ConfigError(f"unknown env {tc.env!r}; choose from {sorted(ENVS)}")
        try:
            make_env(tc.env, **tc.env_params)
        except TypeError as exc:
            raise ConfigError(f"train.env_params: {exc}") from exc
        return cls(tc, _strict(EvalSpec, doc.get("eval", {}), "eval"),
                   _strict(Paths, doc.get("paths", {}), "paths"), seed)

    @classmethod
    def from_json(cls, text, source="<config>"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=seed, train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self):
        return {"train": self.train.to_dict(), "eval": dataclasses.asdict(self.eval),
                "paths": dataclasses.asdict(self.paths), "seed": self.seed}

    def config_hash(self):
        return config_hash(self.to_dict())


# helpers -------------------------------------------------------------------

def _float_list(text, name):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{name}: no values given")
    return vals


def _write(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _provenance(agent: Agent):
    return {"config_hash": agent.config.config_hash(), "seed": agent.config.seed,
            "version_tag": VERSION_TAG}


def thread_limit(environ=None):
    """Parallelism cap from LIPGAIL_THREADS (default 1, the deterministic setting)."""
    raw = (environ if environ is not None else os.environ).get("LIPGAIL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"LIPGAIL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"LIPGAIL_THREADS must be a positive integer, got {raw!r}")
    return n


# commands ------------------------------------------------------------------

def cmd_gen_demos(args):
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if args.seed < 0:
        raise ConfigError("--seed must be >= 0")
    env = make_env(args.env)
    meta = {"env": args.env, "n": args.n, "seed": args.seed}
    meta = {"config_hash": config_hash(meta), "seed": args.seed, "version_tag": VERSION_TAG}
    trajs = gen_demos(env, args.n, args.seed, args.out, meta)
    rets = [t.env_return for t in trajs]
    log.info("wrote %d demos to %s (mean expert return %.3f)", len(trajs), args.out, sum(rets) / len(rets))
    return EXIT_OK


def cmd_train(args):
    path = Path(args.config)
    cfg = ExperimentConfig.from_json(path.read_text(), str(path))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.train.env, **cfg.train.env_params)
    if cfg.paths.demos:
        demos = load_demos(cfg.paths.demos)
    else:
        demos = gen_demos(env, cfg.paths.n_demos, cfg.seed, out / "demos.jsonl",
                          {"config_hash": cfg.config_hash(), "seed": cfg.seed, "version_tag": VERSION_TAG})
    (out / "experiment.json").write_text(json.dumps(
        {"experiment": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
         "version_tag": VERSION_TAG}, indent=2, sort_keys=True))

    def progress(row):
        log.info("iter %d steps %d bce %.4f reg_d %.4g reg_g %.4g return %.2f", row["iter"],
                 row["env_steps"], row["disc_bce"], row["disc_reg"], row["gen_reg"],
                 row["rollout_env_return_mean"])

    res = train(cfg.train, demos, out, progress)
    final = eval_noise(res.agent, [0.0], cfg.eval.episodes, cfg.seed, cfg.eval.noise_kind, env)
    summary = {**_provenance(res.agent), "iterations": res.agent.iteration,
               "final_eval_return": final.rows[0]["mean_return"],
               "final_eval_episodes": cfg.eval.episodes,
               "final_rollout_return": res.final_return_mean}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    log.info("done: eval return at noise 0 = %.3f", summary["final_eval_return"])
    return EXIT_OK


def cmd_evaluate(args):
    levels = _float_list(args.noise_levels, "--noise-levels")
    if min(levels) < 0:
        raise ConfigError("--noise-levels must be >= 0")
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    agent = Agent.load(args.checkpoint)
    rep = eval_noise(agent, levels, args.episodes, args.seed, args.kind)
    rep.metadata.update(_provenance(agent), eval_seed=args.seed)
    _write(args.out, report_to_csv(rep))
    return EXIT_OK


def cmd_ellc(args):
    radii = _float_list(args.radii, "--radii")
    if min(radii) <= 0:
        raise ConfigError("--radii entries must be > 0")
    agent = Agent.load(args.checkpoint)
    rep = ellc_report(agent, radii, args.seed, norm=args.norm, adversarial=args.adversarial)
    rep.metadata.update(_provenance(agent), eval_seed=args.seed)
    _write(args.out, report_to_csv(rep))
    return EXIT_OK


def cmd_verify_theory(args):
    names = sorted(SHIPPED) if args.mdp == "all" else [args.mdp]
    if args.probes < 2:
        raise ConfigError("--probes must be >= 2")
    reports = []
    for name in names:
        rep = verify(name, args.probes)
        rep.update(config_hash=config_hash({"mdp": name, "probes": args.probes}), seed=0,
                   version_tag=VERSION_TAG)
        reports.append(rep)
    doc = reports[0] if len(reports) == 1 else reports
    _write(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    applicable = [r["pass"] for r in reports if r["status"] != "NOT-APPLICABLE"]
    return EXIT_OK if all(applicable) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="lipgail", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="roll the scripted expert into a JSON-lines demo file")
    g.add_argument("--env", required=True, choices=sorted(ENVS))
    g.add_argument("--n", type=int, default=DEFAULT_DEMOS, help="number of trajectories")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_demos)

    t = sub.add_parser("train", help="train from a JSON experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.add_argument("--out", default=None, help="overrides paths.out_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="mean-action returns under observation noise (CSV)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--noise-levels", default=",".join(str(x) for x in DEFAULT_NOISE_LEVELS))
    e.add_argument("--kind", default="gaussian", choices=["gaussian", "linf"])
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("ellc", help="empirical local Lipschitzness of the policy (CSV)")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--radii", default="0.05,0.1,0.2")
    c.add_argument("--norm", default="l2", choices=["l2", "linf"])
    c.add_argument("--adversarial", action="store_true",
                   help="worst-case deltas from projected gradient ascent instead of random directions")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_ellc)

    v = sub.add_parser("verify-theory", help="check the Q-gradient bound on a synthetic MDP (JSON)")
    v.add_argument("--mdp", default="linear_1d", choices=sorted(SHIPPED) + ["all"])
    v.add_argument("--probes", type=int, default=64)
    v.add_argument("--out", default="-")
    v.set_defaults(func=cmd_verify_theory)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse itself exits 2 with usage on bad arguments
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = thread_limit()
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"lipgail: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"lipgail: training aborted: {exc} (last good checkpoint saved)", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"lipgail: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"lipgail: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
