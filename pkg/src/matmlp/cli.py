"""Command-line experiment runner.

Every command reads an optional JSON config, merges it over the command's
defaults, and writes CSV/JSON outputs into ``--out``. Each output row carries
a short hash of the effective config (including the seed) so results can be
traced back to the exact run.

Exit codes: 0 success, 2 bad config, 3 numerical failure, 4 file error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .distributions import SAMPLER_MODES, TraceOneMpe, mpe_moments, mpe_sample_batch
from .errors import ConfigError, FormatError, MatMlpError
from .gradcheck import CHECK_NAMES, json_report, run_suite, tap_report
from .linalg import random_trace_one
from .losses import LOSSES, qre_loss
from .network import BasicMmlpParams, ShallowParams
from .optim import Adam
from .spd_regression import TrainConfig, evaluate_spd, train_spd
from .vae import (
    MODEL_TABLE,
    VaeModelSpec,
    VaeParams,
    VaeTrainConfig,
    sample_generative,
    spec_to_json,
    train,
    write_metrics,
)

log = logging.getLogger("matmlp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "example1": {
        "d0": 10, "n_train": 20, "n_test": 1000, "hidden": [20, 20], "input_dim": 20,
        "losses": list(LOSSES), "epochs": 100, "batch_size": 5, "lr": 1e-3, "draws": 10000,
    },
    "example2": {
        "d0": 10, "n_train": 20, "n_test": 1000, "width": 20, "depths": [2, 4, 6], "input_dim": 20,
        "epochs": 100, "batch_size": 5, "lr": 1e-3, "draws": 10000,
    },
    "gamma-vs-gauss": {
        "alphas": [0.6, 1.0, 1.4], "betas": [0.6, 1.0, 1.4], "dims": [2, 6],
        "sample_sizes": [10000, 100000], "log_eta": 0.0,
    },
    "vae": {
        "model": "NfNf", "latent_dim": 2, "data_dim": 5, "k_true": 2, "n_train": 300, "n_test": 100,
        "hidden": [8, 8], "hidden_vec": [8, 8], "epochs": 20, "batch_size": 10, "lr": 1e-3,
        "train_r": 1, "eval_r": 100, "sampler_mode": "gauss-approx", "record_wall_time": False,
        "n_generate": 100, "data_path": None, "pca_components": None, "checkpoint_every": 1,
    },
    "gradcheck": {"seeds": 20, "checks": list(CHECK_NAMES), "mutate": None},
}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def load_config(command: str, path: str | None, seed: int) -> dict:
    cfg = dict(DEFAULTS[command])
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise ConfigError(f"{path}: unknown keys {unknown} for {command}")
        cfg.update(user)
    cfg["seed"] = int(seed)
    return cfg


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _spd_data(cfg, seed):
    ds = data_mod.gen_spd_dataset(cfg["n_train"] + cfg["n_test"], cfg["d0"], seed,
                                  input_dim=cfg["input_dim"], draws=cfg["draws"])
    return ds.split(cfg["n_train"])


# commands ---------------------------------------------------------------------

def cmd_example1(cfg: dict, out: Path) -> list:
    """Same mMLP trained under each loss; every model scored with every error measure."""
    for loss in cfg["losses"]:
        if loss not in LOSSES:
            raise ConfigError(f"unknown loss {loss!r}")
    seed = cfg["seed"]
    train_set, test_set = _spd_data(cfg, seed)
    dims = (cfg["d0"], *cfg["hidden"])
    chash = config_hash(cfg)
    rows = []
    for i, loss in enumerate(cfg["losses"]):
        params = BasicMmlpParams.init(dims, (cfg["input_dim"], 1), np.random.default_rng([seed, 1]))
        tcfg = TrainConfig(loss=loss, epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"])
        params, _ = train_spd(params, train_set, tcfg, np.random.default_rng([seed, 2, i]))
        errs = evaluate_spd(params, test_set)
        rows.append([loss, errs["E_quad"], errs["E_QRE"], errs["E_Stein"], seed, chash])
        log.info("example1 loss=%s %s", loss, errs)
    _write_csv(out / "example1.csv", ["loss", "E_quad", "E_QRE", "E_Stein", "seed", "config_hash"], rows)
    return rows


def cmd_example2(cfg: dict, out: Path) -> list:
    """Deep mMLP against the shallow kernel-head baseline at several depths."""
    seed = cfg["seed"]
    train_set, test_set = _spd_data(cfg, seed)
    chash = config_hash(cfg)
    rows = []
    for j in cfg["depths"]:
        if j < 0:
            raise ConfigError("depths must be non-negative")
        width = cfg["width"]
        models = {
            "deep": BasicMmlpParams.init((cfg["d0"],) + (width,) * (j + 1), (cfg["input_dim"], 1),
                                         np.random.default_rng([seed, 1, j])),
            "shallow": ShallowParams.init(cfg["d0"], (width,) * (j + 1), (cfg["input_dim"], 1),
                                          np.random.default_rng([seed, 1, j])),
        }
        for design, params in models.items():
            tcfg = TrainConfig(loss="qre", epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"])
            params, _ = train_spd(params, train_set, tcfg, np.random.default_rng([seed, 2, j]))
            errs = evaluate_spd(params, test_set)
            rows.append([design, j, errs["E_QRE"], errs["E_quad"], errs["E_Stein"], seed, chash])
            log.info("example2 j=%d %s %s", j, design, errs)
    _write_csv(out / "example2.csv", ["design", "j", "E_QRE", "E_quad", "E_Stein", "seed", "config_hash"], rows)
    return rows


def cmd_gamma_vs_gauss(cfg: dict, out: Path) -> list:
    """Sample covariance and mean error of both radial samplers over a parameter grid."""
    seed = cfg["seed"]
    chash = config_hash(cfg)
    rows = []
    for d in cfg["dims"]:
        omega = random_trace_one(int(d), np.random.default_rng([seed, int(d)]))
        for a in cfg["alphas"]:
            for b in cfg["betas"]:
                if not (0.5 <= a <= 1.5 and 0.5 <= b <= 1.5):
                    raise ConfigError("alpha and beta must lie in [0.5, 1.5]")
                dist = TraceOneMpe(np.zeros(int(d)), omega, float(cfg["log_eta"]), float(a), float(b))
                mean, cov = mpe_moments(dist)
                for mode_idx, mode in enumerate(SAMPLER_MODES):
                    for n in cfg["sample_sizes"]:
                        rng = np.random.default_rng([seed, int(d), round(a * 100), round(b * 100), mode_idx, int(n)])
                        x = mpe_sample_batch(dist, rng, int(n), mode)
                        sample_cov = np.cov(x, rowvar=False)
                        cov_err = qre_loss(sample_cov, cov)
                        mean_err = float(np.max(np.abs(x.mean(axis=0) - mean)))
                        rows.append([d, a, b, mode, n, cov_err, mean_err, seed, chash])
    _write_csv(out / "gamma_vs_gauss.csv",
               ["d", "alpha", "beta", "mode", "n", "cov_sqre", "mean_abs_err", "seed", "config_hash"], rows)
    return rows


def _vae_data(cfg, seed):
    if cfg["data_path"]:
        ds = data_mod.load_dataset(cfg["data_path"])
        x = ds.inputs
        if cfg["pca_components"]:
            x = data_mod.pca_reduce(x, int(cfg["pca_components"])).scores
        if len(x) < cfg["n_train"] + 1:
            raise ConfigError("dataset is smaller than n_train + 1")
        return x[:cfg["n_train"]], x[cfg["n_train"]:cfg["n_train"] + cfg["n_test"]]
    ds, _ = data_mod.gen_vae_dataset(cfg["n_train"] + cfg["n_test"], cfg["data_dim"], cfg["k_true"], seed)
    return ds.inputs[:cfg["n_train"]], ds.inputs[cfg["n_train"]:]


def _truncate_metrics(path: Path, next_epoch: int, chash: str):
    """Drop rows logged after the checkpoint being resumed from."""
    if not path.exists():
        write_metrics(path, [], chash)
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) < next_epoch]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)


def cmd_vae(cfg: dict, out: Path, resume: str | None = None) -> list:
    """Train one model variant; write metrics, generated samples, spec and checkpoint."""
    if cfg["model"] not in MODEL_TABLE:
        raise ConfigError(f"unknown model {cfg['model']!r}")
    if cfg["sampler_mode"] not in SAMPLER_MODES:
        raise ConfigError(f"unknown sampler mode {cfg['sampler_mode']!r}")
    seed = cfg["seed"]
    chash = config_hash(cfg)
    train_x, test_x = _vae_data(cfg, seed)
    spec = VaeModelSpec.from_name(cfg["model"], cfg["latent_dim"], train_x.shape[1],
                                  hidden=tuple(cfg["hidden"]), hidden_vec=tuple(cfg["hidden_vec"]))
    tcfg = VaeTrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"], train_r=cfg["train_r"],
                          eval_r=cfg["eval_r"], sampler_mode=cfg["sampler_mode"],
                          record_wall_time=cfg["record_wall_time"], checkpoint_every=cfg["checkpoint_every"])
    ckpt_path = out / "checkpoint.json"
    metrics_path = out / "metrics.csv"
    start = 0
    if resume:
        models, opt_state, rng, extra = load_checkpoint(resume)
        if extra.get("config_hash") != chash:
            raise ConfigError("checkpoint was written under a different config")
        params = VaeParams(spec, models["rec"], models["gen"])
        optimizer = Adam(opt_state)
        start = int(extra["next_epoch"])
        _truncate_metrics(metrics_path, start, chash)
    else:
        params = VaeParams.init(spec, np.random.default_rng([seed, 1]))
        optimizer = Adam(lr=cfg["lr"])
        rng = np.random.default_rng([seed, 2])
        write_metrics(metrics_path, [], chash)

    def on_epoch(epoch, p, opt, rng_now, epoch_rows):
        # metrics go out as each epoch finishes so an interrupted run keeps its log
        write_metrics(metrics_path, epoch_rows, chash, append=True)
        if tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
            save_checkpoint(ckpt_path, {"rec": p.rec, "gen": p.gen}, opt.state, rng_now,
                            {"config_hash": chash, "next_epoch": epoch + 1, "spec": spec_to_json(spec)})

    result = train(params, train_x, test_x, tcfg, rng, optimizer, start_epoch=start, on_epoch=on_epoch)
    samples = sample_generative(result.params, cfg["n_generate"], np.random.default_rng([seed, 3]), cfg["sampler_mode"])
    _write_csv(out / "samples.csv", [f"x{i}" for i in range(samples.shape[1])] + ["config_hash"],
               [list(row) + [chash] for row in samples])
    (out / "spec.json").write_text(json.dumps({**spec_to_json(spec), "config_hash": chash}, sort_keys=True, indent=2))
    return result.rows


def cmd_gradcheck(cfg: dict, out: Path) -> bool:
    """Run the finite-difference suite; returns True when every comparison passes."""
    unknown = sorted(set(cfg["checks"]) - set(CHECK_NAMES))
    if unknown:
        raise ConfigError(f"unknown checks {unknown}")
    seeds = [cfg["seed"] + i for i in range(int(cfg["seeds"]))]
    results = run_suite(seeds, only=cfg["checks"], mutate=cfg["mutate"])
    chash = config_hash(cfg)
    (out / "gradcheck.tap").write_text(tap_report(results))
    (out / "gradcheck.json").write_text(json_report(results, config_hash=chash, mutate=cfg["mutate"]))
    return all(r.ok for r in results)


# entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matmlp", description="matrix MLP experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in DEFAULTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file overriding the command defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = reproducible mode)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "vae":
            p.add_argument("--resume", help="checkpoint to continue from")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=max(1, args.threads)):
            if args.command == "example1":
                cmd_example1(cfg, out)
            elif args.command == "example2":
                cmd_example2(cfg, out)
            elif args.command == "gamma-vs-gauss":
                cmd_gamma_vs_gauss(cfg, out)
            elif args.command == "vae":
                cmd_vae(cfg, out, resume=args.resume)
            elif args.command == "gradcheck":
                if not cmd_gradcheck(cfg, out):
                    print("gradcheck: failures, see gradcheck.tap", file=sys.stderr)
                    return EXIT_NUMERIC
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MatMlpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
