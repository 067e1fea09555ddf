"""Command-line orchestration: gen | train | eval | compare | weights | selftest.

Exit codes: 0 success, 2 missing inputs, 3 validation failure, 4 numerical
failure. Failures print one machine-readable JSON object to stderr. All
structural choices live in the JSON config; flags cover only paths, seed
override and verbosity. The default output root comes from $HYPALIGN_OUT.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .align import AlignConfig, AlignerParams, InstanceBank, align
from .artifacts import (
    load_aligner,
    load_implicit,
    load_report_json,
    load_scenes,
    output_lock,
    save_aligner,
    save_implicit,
    save_latency_json,
    save_loss_curve,
    save_report_csv,
    save_report_json,
    save_scenes,
)
from .baselines import ImplicitParams
from .config import (
    DOM_ALIGNER_INIT,
    DOM_ALIGNER_M1_INIT,
    DOM_ENCODER_INIT,
    DOM_ENCODER_M1_INIT,
    DOM_EVAL_OBS,
    DOM_EVAL_SCENE,
    DOM_IMPLICIT_ENC_INIT,
    DOM_IMPLICIT_INIT,
    DOM_SHUFFLE,
    DOM_TRAIN_OBS,
    DOM_TRAIN_SCENE,
    ExperimentConfig,
    derive_seed,
)
from .errors import (
    ConfigError,
    ContractError,
    HypalignError,
    NumericalError,
    TrainingError,
    ValidationError,
)
from .geometry import EgoTransform
from .harness import (
    AlignerMethod,
    ImplicitMethod,
    SingleModelMethod,
    TrainOptions,
    evaluate,
    measure_latency,
    train_aligner,
    train_implicit,
    weight_report,
)
from .sim import WindowEncoder, generate_scene, observe
from .tensor import grad_check, no_grad

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

SCENES_FILE = "scenes.jsonl"
TRAIN_SCENES_FILE = "scenes_train.jsonl"


def _out_dir(args) -> str:
    return args.out or os.environ.get("HYPALIGN_OUT") or "hypalign_out"


def _load_config(args) -> ExperimentConfig:
    if not os.path.exists(args.config):
        raise FileNotFoundError(f"config file not found: {args.config}")
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _meta(cfg: ExperimentConfig) -> dict:
    return {"tool_version": __version__, "config_hash": cfg.config_hash(),
            "seed": cfg.seed}


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path} (run the producing command first)")
    return path


def _gen_split(cfg: ExperimentConfig, count: int, scene_dom: int, obs_dom: int):
    sim_cfg = cfg.sim_config()
    scenes, obs = [], []
    for i in range(count):
        scene = generate_scene(sim_cfg, derive_seed(cfg.seed, scene_dom, i))
        scenes.append(scene)
        obs.append(observe(scene, sim_cfg.noise, derive_seed(cfg.seed, obs_dom, i)))
    return scenes, obs


def _params_path(out: str, method: str, seed: int) -> str:
    return os.path.join(out, f"params_{method}_seed{seed}.hatp")


def cmd_gen(cfg: ExperimentConfig, out: str, quiet: bool) -> int:
    meta = _meta(cfg)
    with output_lock(out):
        scenes, obs = _gen_split(cfg, cfg.scene_count, DOM_EVAL_SCENE, DOM_EVAL_OBS)
        save_scenes(os.path.join(out, SCENES_FILE), scenes, obs, meta)
        tr_scenes, tr_obs = _gen_split(cfg, cfg.train_scene_count,
                                       DOM_TRAIN_SCENE, DOM_TRAIN_OBS)
        save_scenes(os.path.join(out, TRAIN_SCENES_FILE), tr_scenes, tr_obs, meta)
    if not quiet:
        print(f"wrote {cfg.scene_count} benchmark + {cfg.train_scene_count} "
              f"training scenes to {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, out: str, quiet: bool) -> int:
    path = _require(os.path.join(out, TRAIN_SCENES_FILE), "training scenes")
    scenes, obs, _ = load_scenes(path)
    meta = _meta(cfg)
    with output_lock(out):
        for s in cfg.train_seeds:
            opts = TrainOptions(epochs=cfg.epochs, lr=cfg.lr,
                                seed=derive_seed(cfg.seed, DOM_SHUFFLE, s))
            jobs = (
                ("hat_m5", AlignConfig(c=cfg.align_c, models=cfg.align_models,
                                       max_instances=cfg.max_instances),
                 DOM_ALIGNER_INIT, DOM_ENCODER_INIT),
                ("hat_m1", AlignConfig(c=cfg.align_c, models=("cv",),
                                       max_instances=cfg.max_instances),
                 DOM_ALIGNER_M1_INIT, DOM_ENCODER_M1_INIT),
            )
            for name, acfg, dom_p, dom_e in jobs:
                params = AlignerParams(acfg, derive_seed(cfg.seed, dom_p, s))
                encoder = WindowEncoder(cfg.align_c, derive_seed(cfg.seed, dom_e, s))
                curve = train_aligner(scenes, obs, params, encoder, opts)
                save_aligner(_params_path(out, name, s), params, encoder, meta)
                save_loss_curve(os.path.join(out, f"loss_{name}_seed{s}.csv"),
                                curve, meta)
                if not quiet:
                    tail = f"{curve[-1]:.4f}" if curve else "n/a"
                    print(f"trained {name} seed {s}: final loss {tail}")
            iparams = ImplicitParams(cfg.align_c, derive_seed(cfg.seed, DOM_IMPLICIT_INIT, s))
            iencoder = WindowEncoder(cfg.align_c,
                                     derive_seed(cfg.seed, DOM_IMPLICIT_ENC_INIT, s))
            curve = train_implicit(scenes, obs, iparams, iencoder, opts)
            save_implicit(_params_path(out, "implicit", s), iparams, iencoder, meta)
            save_loss_curve(os.path.join(out, f"loss_implicit_seed{s}.csv"), curve, meta)
            if not quiet:
                tail = f"{curve[-1]:.4f}" if curve else "n/a"
                print(f"trained implicit seed {s}: final loss {tail}")
    return EXIT_OK


def _load_methods(cfg: ExperimentConfig, out: str) -> list:
    methods = []
    for s in cfg.train_seeds:
        params, encoder, _ = load_aligner(
            _require(_params_path(out, "hat_m5", s), "trained hat_m5 parameters"))
        methods.append(AlignerMethod(f"hat_m5_seed{s}", params, encoder))
        params1, encoder1, _ = load_aligner(
            _require(_params_path(out, "hat_m1", s), "trained hat_m1 parameters"))
        methods.append(AlignerMethod(f"hat_m1_seed{s}", params1, encoder1))
        ip, ienc, _ = load_implicit(
            _require(_params_path(out, "implicit", s), "trained implicit parameters"))
        methods.append(ImplicitMethod(f"implicit_seed{s}", ip, ienc))
    for kind in cfg.align_models:
        methods.append(SingleModelMethod(kind))
    return methods


def cmd_eval(cfg: ExperimentConfig, out: str, quiet: bool) -> int:
    scenes, obs, _ = load_scenes(_require(os.path.join(out, SCENES_FILE),
                                          "benchmark scenes"))
    methods = _load_methods(cfg, out)
    meta = _meta(cfg)
    with output_lock(out):
        report = evaluate(scenes, obs, methods)
        save_report_csv(os.path.join(out, "report.csv"), report, meta)
        save_report_json(os.path.join(out, "report.json"), report, meta)
        first = cfg.train_seeds[0]
        latency_targets = [m for m in methods
                           if m.name.endswith(f"seed{first}")
                           or m.name.startswith("single_")]
        latency = {m.name: measure_latency(m, scenes[0], obs[0],
                                           iters=cfg.latency_iters)
                   for m in latency_targets}
        save_latency_json(os.path.join(out, "latency.json"), latency, meta)
    if not quiet:
        for row in sorted(report.rows, key=lambda r: r.translation_mean):
            if row.regime == "all":
                print(f"{row.method:24s} translation {row.translation_mean:.4f} m")
    return EXIT_OK


def _base_name(method: str) -> str:
    head, _, tail = method.rpartition("_seed")
    return head if head and tail.isdigit() else method


def cmd_compare(cfg: ExperimentConfig, out: str, quiet: bool) -> int:
    report = load_report_json(_require(os.path.join(out, "report.json"),
                                       "evaluation report"))
    groups: dict = {}
    for row in report.rows:
        if row.regime != "all":
            continue
        groups.setdefault(_base_name(row.method), []).append(row)
    lines = [f"{'method':16s} {'runs':>4s} {'translation':>12s} {'yaw':>8s} "
             f"{'velocity':>9s}"]
    table = []
    for name in sorted(groups):
        rows = groups[name]
        table.append((name, len(rows),
                      float(np.mean([r.translation_mean for r in rows])),
                      float(np.mean([r.yaw_mean for r in rows])),
                      float(np.mean([r.velocity_mean for r in rows]))))
    for name, runs, tr, yw, vel in sorted(table, key=lambda t: t[2]):
        lines.append(f"{name:16s} {runs:4d} {tr:12.4f} {yw:8.4f} {vel:9.4f}")
    text = "\n".join(lines)
    print(text)
    with output_lock(out):
        with open(os.path.join(out, "compare.csv"), "w", encoding="utf-8") as fh:
            fh.write(f"# hypalign {__version__} config={cfg.config_hash()} "
                     f"seed={cfg.seed}\n")
            fh.write("method,runs,translation_mean,yaw_mean,velocity_mean\n")
            for name, runs, tr, yw, vel in sorted(table):
                fh.write(f"{name},{runs},{tr!r},{yw!r},{vel!r}\n")
    return EXIT_OK


def cmd_weights(cfg: ExperimentConfig, out: str, quiet: bool) -> int:
    scenes, obs, _ = load_scenes(_require(os.path.join(out, SCENES_FILE),
                                          "benchmark scenes"))
    model_names = list(cfg.align_models)
    with output_lock(out):
        path = os.path.join(out, "weights.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# hypalign {__version__} config={cfg.config_hash()} "
                     f"seed={cfg.seed}\n")
            fh.write("seed,regime,pairs," + ",".join(f"w_{m}" for m in model_names)
                     + "\n")
            for s in cfg.train_seeds:
                params, encoder, _ = load_aligner(
                    _require(_params_path(out, "hat_m5", s),
                             "trained hat_m5 parameters"))
                table = weight_report(scenes, obs, params, encoder)
                for regime in sorted(table):
                    entry = table[regime]
                    cells = ",".join(repr(w) for w in entry["weights"])
                    fh.write(f"{s},{regime},{entry['pairs']},{cells}\n")
    if not quiet:
        print(f"wrote per-regime hypothesis weights to {path}")
    return EXIT_OK


# -- selftest -----------------------------------------------------------------------


def _selftest_suites():
    from .geometry import build_augmented, warp_anchor
    from .motion import LatentKinematics, MODEL_ORDER, integrate_oracle, predict

    rng = np.random.default_rng(20240501)
    n = 200
    theta = rng.uniform(-np.pi, np.pi, n)
    speed = rng.uniform(0.0, 20.0, n)
    anchors = np.zeros((n, 10))
    anchors[:, 0:3] = rng.uniform(-50, 50, (n, 3))
    anchors[:, 3:6] = rng.uniform(0.5, 5, (n, 3))
    anchors[:, 6], anchors[:, 7] = np.cos(theta), np.sin(theta)
    anchors[:, 8] = speed * np.cos(theta)
    anchors[:, 9] = speed * np.sin(theta)
    lat = LatentKinematics(ax=rng.uniform(-.1, .1, n), ay=rng.uniform(-.1, .1, n),
                           accel=rng.uniform(-.1, .1, n), omega=rng.uniform(-.1, .1, n))

    def kinematics():
        worst = 0.0
        for dt in (0.1, 0.5):
            for kind in MODEL_ORDER:
                closed = predict(kind, anchors, dt, lat)
                ref = integrate_oracle(kind, anchors, dt, lat, steps=256)
                worst = max(worst, float(np.abs(closed[:, :2] - ref[:, :2]).max()))
        return worst <= 1e-8, f"max position error {worst:.3e} (tol 1e-8)"

    def degeneracy():
        cv = predict("cv", anchors, 0.5)
        gaps = [
            np.abs(predict("ca", anchors, 0.5) - cv).max(),
            np.abs(predict("ctra", anchors, 0.5,
                           LatentKinematics(omega=lat.omega))
                   - predict("ctrv", anchors, 0.5,
                             LatentKinematics(omega=lat.omega))).max(),
            np.abs(predict("ctrv", anchors, 0.5,
                           LatentKinematics(omega=np.full(n, 1e-6)))[:, :2]
                   - cv[:, :2]).max(),
        ]
        ok = gaps[0] <= 1e-9 and gaps[1] <= 1e-9 and gaps[2] <= 1e-4
        return ok, f"gaps {[float(f'{g:.3e}') for g in gaps]}"

    def geometry_roundtrip():
        from .geometry import compose, invert
        e = EgoTransform.planar(0.7, 3.0, -2.0, 0.1)
        back = compose(e, invert(e))
        dev = max(np.abs(back.r - np.eye(3)).max(), np.abs(back.t).max())
        warped = warp_anchor(warp_anchor(anchors, build_augmented(e)),
                             build_augmented(invert(e)))
        dev = max(dev, float(np.abs(warped - anchors).max()))
        return dev <= 1e-9, f"round-trip deviation {dev:.3e}"

    def hull():
        cfga = AlignConfig(c=16)
        params = AlignerParams(cfga, seed=7)
        k = 16
        slack = 0.0
        for trial in range(20):
            sub = anchors[rng.choice(n, k, replace=False)]
            queries = rng.normal(0, 1, (k, 16))
            ego = EgoTransform.planar(rng.uniform(-1, 1), *rng.uniform(-5, 5, 2))
            with no_grad():
                res = align(InstanceBank(sub, queries), 0.5, ego, params)
                from .align import generate_anchor_hypotheses
                hyps = generate_anchor_hypotheses(params, sub, queries, 0.5, ego)
            lo, hi = hyps.min(axis=1), hyps.max(axis=1)
            slack = max(slack,
                        float((lo - res.anchors_pre_refine).max()),
                        float((res.anchors_pre_refine - hi).max()))
        return slack <= 1e-12, f"hull slack {slack:.3e} (tol 1e-12)"

    def gradients():
        from .tensor import Tensor
        # near-origin anchors keep the objective small, so finite-difference
        # rounding noise stays well under the 1e-4 tolerance
        grng = np.random.default_rng(11)
        th2 = grng.uniform(-np.pi, np.pi, 2)
        sub = np.zeros((2, 10))
        sub[:, 0:3] = grng.uniform(-2.0, 2.0, (2, 3))
        sub[:, 3:6] = grng.uniform(0.5, 3, (2, 3))
        sub[:, 6], sub[:, 7] = np.cos(th2), np.sin(th2)
        sp = grng.uniform(0.5, 3.0, 2)
        sub[:, 8], sub[:, 9] = sp * np.cos(th2), sp * np.sin(th2)
        queries = Tensor(grng.normal(0, 1, (2, 16)), requires_grad=True)
        params = AlignerParams(AlignConfig(c=16), seed=3)
        ego = EgoTransform.planar(0.2, 1.0, -1.0)
        # l_a.bias shifts every hypothesis logit equally, which softmax cancels;
        # its true gradient is zero, so a relative-error probe only sees noise.
        check = [p for name, p in params.named_parameters().items()
                 if name != "l_a.bias"]

        def objective():
            res = align(InstanceBank(sub, queries), 0.5, ego, params)
            return (res.anchors * res.anchors).sum() + res.features.sum()

        err = grad_check(objective, check, step=1e-5, max_coords=8)
        return err <= 1e-4, f"max relative gradient error {err:.3e} (tol 1e-4)"

    return [("kinematics-oracle", kinematics), ("degeneracy-lattice", degeneracy),
            ("geometry-roundtrip", geometry_roundtrip), ("stability-hull", hull),
            ("gradient-check", gradients)]


def cmd_selftest(quiet: bool) -> int:
    failures = 0
    for name, suite in _selftest_suites():
        ok, detail = suite()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        raise NumericalError(f"{failures} selftest suite(s) failed")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypalign",
        description="Multi-hypothesis spatio-temporal anchor alignment benchmark")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate benchmark and training scene files"),
        ("train", "train the aligner and baselines on the training scenes"),
        ("eval", "evaluate all methods on the benchmark scenes"),
        ("compare", "print a side-by-side method table from report.json"),
        ("weights", "export per-regime hypothesis-weight averages"),
        ("selftest", "run the built-in numerical oracle suites"),
    ):
        p = sub.add_parser(name, help=help_text)
        if name != "selftest":
            p.add_argument("--config", required=True, help="JSON experiment config")
            p.add_argument("--seed", type=int, default=None, help="override config seed")
            p.add_argument("--out", default=None,
                           help="output directory (default $HYPALIGN_OUT or ./hypalign_out)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args.quiet)
        cfg = _load_config(args)
        out = _out_dir(args)
        os.makedirs(out, exist_ok=True)
        handler = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
                   "compare": cmd_compare, "weights": cmd_weights}[args.command]
        return handler(cfg, out, args.quiet)
    except FileNotFoundError as exc:
        _fail(exc, EXIT_MISSING)
        return EXIT_MISSING
    except (ConfigError, ValidationError, ContractError) as exc:
        _fail(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION
    except (NumericalError, TrainingError) as exc:
        _fail(exc, EXIT_NUMERICAL)
        return EXIT_NUMERICAL
    except HypalignError as exc:  # anything else from the library is a contract issue
        _fail(exc, EXIT_VALIDATION)
        return EXIT_VALIDATION


def _fail(exc: Exception, code: int) -> None:
    sys.stderr.write(json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
