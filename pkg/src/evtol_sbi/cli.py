"""Command line for the design-inference toolkit.

Five subcommands cover the artifact life cycle: gen-data writes the
filtered surrogate dataset, train fits either diffusion model with
periodic checkpointing, sample runs the two-stage posterior, evaluate
dispatches to the metrics module, and serve exposes the HTTP API the
explorer UI consumes.

Exit codes: 0 success, 1 validation (bad arguments, malformed files,
mismatched hashes), 2 runtime failure (training blew up, server died).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import maskedit, mixedit
from .checkpoints import StandardizationStats, load_checkpoint, save_checkpoint
from .errors import StatsMismatch
from .manifold import precompute_interpolant_table
from .pipeline import (
    RunConfig,
    SampleRequest,
    case_study_sweep,
    load_run_config,
    sample_designs,
)
from .surrogate_sim import (
    CHANNELS,
    FEATURE_TABLE_VERSION,
    Dataset,
    config_hash,
    generate_dataset,
)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="evtol-sbi",
        description="dataset generation, diffusion training, posterior sampling",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config (profile plus overrides)")
        sp.add_argument("--profile", choices=("desk", "paper"), help="base profile")
        sp.add_argument("--seed", type=int, help="override the config seed")

    g = sub.add_parser("gen-data", help="sample, filter and save a dataset")
    common(g)
    g.add_argument("--n-raw", type=int, help="prior draws before filtering")
    g.add_argument("--out", default="dataset.ndjson")

    t = sub.add_parser("train", help="fit one of the diffusion models")
    common(t)
    t.add_argument("model", choices=("mixedit", "maskedit"))
    t.add_argument("--data", required=True, help="dataset file from gen-data")
    t.add_argument("--out", default=None, help="checkpoint path (default <model>.ckpt)")
    t.add_argument("--resume", help="continue from a saved checkpoint")
    t.add_argument(
        "--checkpoint-every",
        type=int,
        default=None,
        help="epochs between live snapshots (default epochs // 5)",
    )

    s = sub.add_parser("sample", help="draw designs from trained checkpoints")
    common(s)
    s.add_argument("--mixedit", required=True, help="topology model checkpoint")
    s.add_argument("--maskedit", required=True, help="parameter model checkpoint")
    s.add_argument(
        "--x-target",
        help='conditioning as JSON, e.g. \'{"total_mass": 2800}\' (raw units)',
    )
    s.add_argument("--topology", type=int, help="fix the topology index")
    s.add_argument(
        "--pin",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="pin a parameter slot (repeatable)",
    )
    s.add_argument("-n", type=int, default=1, help="number of designs")
    s.add_argument("--out", default="designs.json")

    e = sub.add_parser("evaluate", help="metrics and predictive checks")
    common(e)
    e.add_argument(
        "kind", choices=("marginal-kl", "mmd", "c2st", "ppc", "case-study")
    )
    e.add_argument("--dataset", help="reference dataset file")
    e.add_argument("--samples", help="designs file from the sample command")
    e.add_argument("--mixedit", help="topology model checkpoint")
    e.add_argument("--maskedit", help="parameter model checkpoint")
    e.add_argument("--n", type=int, default=500, help="sample/draw count")
    e.add_argument("--mode", choices=("joint", "marginal"), default="joint")
    e.add_argument("--channel", default="total_mass", help="case-study channel")
    e.add_argument(
        "--offsets", default="-2,-1,0,1,2", help="case-study sigma offsets"
    )
    e.add_argument("--out", default=None, help="report path (default stdout)")

    v = sub.add_parser("serve", help="run the HTTP design service")
    common(v)
    v.add_argument("--mixedit", required=True)
    v.add_argument("--maskedit", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return p


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
        if args.profile and args.profile != cfg.profile:
            raise ValueError(
                f"--profile {args.profile} contradicts the config file profile"
            )
    elif args.profile == "paper":
        cfg = RunConfig.paper()
    else:
        cfg = RunConfig.desk()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _load_dataset_for(cfg: RunConfig, path: str) -> Dataset:
    expected = config_hash(cfg.mission, cfg.constants)
    return Dataset.load(path, expected_config_hash=expected)


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    n_raw = args.n_raw if args.n_raw is not None else cfg.n_raw
    dset = generate_dataset(n_raw, cfg.seed, cfg.mission, cfg.constants)
    dset.save(args.out)
    acc = dset.acceptance
    print(f"wrote {args.out}: {acc['accepted']}/{acc['n_raw']} accepted "
          f"({100 * acc['fraction']:.1f}%)")
    print(f"{'stage':<12}{'rejected':>10}")
    for stage, count in sorted(acc["rejected"].items()):
        print(f"{stage:<12}{count:>10}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dset = _load_dataset_for(cfg, args.data)
    stats = StandardizationStats.from_dataset(dset)
    out = Path(args.out if args.out else f"{args.model}.ckpt")
    partial = out.with_suffix(out.suffix + ".partial")
    init = load_checkpoint(args.resume) if args.resume else None

    if args.model == "mixedit":
        model_cfg = cfg.mixedit
        make = lambda res: mixedit.make_checkpoint(res, model_cfg, stats)
    else:
        model_cfg = cfg.maskedit
        make = lambda res: maskedit.make_checkpoint(res, model_cfg, stats)

    every = args.checkpoint_every
    if every is None:
        every = max(1, model_cfg.epochs // 5)

    def snapshot(epoch, result):
        if (epoch + 1) % every == 0:
            ck = make(result)
            ck.extra["config_hash"] = dset.config_digest
            ck.extra["live"] = True
            save_checkpoint(partial, ck)

    def log(epoch, train_loss, val_loss=None):
        tail = f" val {val_loss:.4f}" if val_loss is not None else ""
        print(f"epoch {epoch}: loss {train_loss:.4f}{tail}", flush=True)

    if args.model == "mixedit":
        table = precompute_interpolant_table(dim=model_cfg.vocab, seed=cfg.seed)
        result = mixedit.train(
            dset, table, model_cfg, cfg.seed, init=init, log=log, snapshot=snapshot
        )
    else:
        result = maskedit.train(
            dset, model_cfg, cfg.seed, init=init, log=log, snapshot=snapshot
        )

    ckpt = make(result)
    ckpt.extra["config_hash"] = dset.config_digest
    save_checkpoint(out, ckpt)
    partial.unlink(missing_ok=True)
    print(f"wrote {out} at step {result.step}")
    return 0


def _load_checkpoint_pair(mixedit_path, maskedit_path):
    mix = load_checkpoint(mixedit_path)
    mask = load_checkpoint(maskedit_path)
    hm, hk = mix.extra.get("config_hash"), mask.extra.get("config_hash")
    if hm and hk and hm != hk:
        raise StatsMismatch("checkpoints were trained on different configs")
    return mix, mask


def _parse_pins(items: list[str]) -> dict[str, float]:
    pins = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--pin expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pins[key] = float(value)
    return pins


def cmd_sample(args) -> int:
    cfg = _resolve_config(args)
    mix, mask = _load_checkpoint_pair(args.mixedit, args.maskedit)
    x_target = json.loads(args.x_target) if args.x_target else None
    request = SampleRequest(
        x_target=x_target,
        topology_index=args.topology,
        theta_pins=_parse_pins(args.pin),
        n=args.n,
        seed=cfg.seed,
    )
    designs = sample_designs(mix, mask, request, cfg.mission, cfg.constants)

    from .design_space.tree import tree_to_dict

    payload = {
        "feature_table_version": FEATURE_TABLE_VERSION,
        "config_hash": mix.extra.get("config_hash"),
        "request": {
            "x_target": x_target,
            "topology_index": args.topology,
            "theta_pins": request.theta_pins,
            "n": request.n,
            "seed": request.seed,
        },
        "designs": [
            {
                "seed": d.seed,
                "topology_index": d.topology.index,
                "topology": vars(d.topology),
                "theta": [None if np.isnan(v) else v for v in d.theta.tolist()],
                "x_conditioned": (
                    None if d.x_conditioned is None else d.x_conditioned.tolist()
                ),
                "tree": tree_to_dict(d.aircraft),
            }
            for d in designs
        ],
    }
    Path(args.out).write_text(json.dumps(payload))
    print(f"wrote {args.out}: {len(designs)} designs")
    return 0


def _report_out(args, report: dict) -> int:
    blob = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(blob)
        print(f"wrote {args.out}")
    else:
        print(blob)
    return 0


def _load_samples(path: str) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("feature_table_version") != FEATURE_TABLE_VERSION:
        raise StatsMismatch(f"{path} was written under a different feature table")
    return payload


def _resim_samples(payload: dict, cfg: RunConfig) -> np.ndarray:
    """Observations of the resimulatable designs in a cmd_sample file."""
    from .surrogate_sim import resimulate_flat

    xs = []
    for d in payload["designs"]:
        theta = np.array(
            [np.nan if v is None else v for v in d["theta"]], dtype=float
        )
        obs, _ = resimulate_flat(
            theta, d["topology_index"], d["seed"], cfg.mission, cfg.constants
        )
        if obs is not None:
            xs.append(obs.as_vector())
    if not xs:
        raise ValueError("no design in the samples file survived re-simulation")
    return np.stack(xs)


def cmd_evaluate(args) -> int:
    from . import evaluation as ev

    cfg = _resolve_config(args)
    base = {
        "kind": args.kind,
        "feature_table_version": FEATURE_TABLE_VERSION,
        "seed": cfg.seed,
    }

    if args.kind == "case-study":
        if not (args.mixedit and args.maskedit):
            raise ValueError("case-study needs --mixedit and --maskedit")
        mix, mask = _load_checkpoint_pair(args.mixedit, args.maskedit)
        offsets = [float(v) for v in args.offsets.split(",") if v.strip()]
        # with a dataset the unswept channels track their conditional
        # means instead of sitting at the global mean
        profile_xs = (
            _load_dataset_for(cfg, args.dataset).xs() if args.dataset else None
        )
        rows = case_study_sweep(
            mix, mask, args.channel, offsets, args.n, cfg.seed,
            cfg.mission, cfg.constants, profile_xs=profile_xs,
        )
        return _report_out(args, {**base, "config_hash": mix.extra.get("config_hash"),
                                  "rows": rows})

    if args.kind == "ppc":
        if not (args.mixedit and args.maskedit):
            raise ValueError("ppc needs --mixedit and --maskedit")
        mix, mask = _load_checkpoint_pair(args.mixedit, args.maskedit)
        x_std = np.zeros(len(CHANNELS))  # x = dataset mean
        rep = ev.posterior_predictive_check(
            mix, mask, x_std, args.n, mission=cfg.mission, seed=cfg.seed
        )
        return _report_out(args, {**base, "config_hash": mix.extra.get("config_hash"),
                                  "report": rep.to_jsonable(),
                                  "within_half_sigma": rep.within(0.5)})

    if not args.dataset:
        raise ValueError(f"{args.kind} needs --dataset")
    dset = _load_dataset_for(cfg, args.dataset)
    base["config_hash"] = dset.config_digest
    samples = _load_samples(args.samples) if args.samples else None

    if args.kind == "marginal-kl":
        # reference is the dataset; comparison is a samples file if given,
        # otherwise the dataset's other half (the null)
        idx = [r.topology_index for r in dset.rows]
        if samples is not None:
            h_ref = ev.histogram_from_topologies(idx)
            h_cmp = ev.histogram_from_topologies(
                [d["topology_index"] for d in samples["designs"]]
            )
        else:
            h_ref = ev.histogram_from_topologies(idx[0::2])
            h_cmp = ev.histogram_from_topologies(idx[1::2])
        value = ev.kl_topology(h_ref, h_cmp)
        return _report_out(args, {**base, "value": value,
                                  "n_ref": int(h_ref.sum()), "n_cmp": int(h_cmp.sum())})

    xs = dset.xs()
    if samples is not None:
        x, y = xs, _resim_samples(samples, cfg)
    else:
        x, y = xs[0::2], xs[1::2]

    if args.kind == "mmd":
        value = ev.mmd(x, y)
        se = ev.mmd_permutation_se(x, y, seed=cfg.seed)
        return _report_out(args, {**base, "value": value, "permutation_se": se,
                                  "n_x": len(x), "n_y": len(y)})

    # c2st wants equal sizes
    n = min(len(x), len(y), args.n)
    out = ev.c2st(x[:n], y[:n], mode=args.mode, seed=cfg.seed)
    if args.mode == "joint":
        return _report_out(args, {**base, "accuracy": out, "n": n})
    return _report_out(args, {**base, "n": n, "kept": out.kept,
                              "per_dimension": {str(k): v for k, v in out.per_dimension.items()},
                              "mean": out.mean, "max": out.max})


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    cfg = _resolve_config(args)
    mix, mask = _load_checkpoint_pair(args.mixedit, args.maskedit)
    app = create_app(mix, mask, mission=cfg.mission, constants=cfg.constants)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - the CLI boundary maps everything
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
