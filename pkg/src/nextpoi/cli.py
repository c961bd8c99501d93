"""Command-line pipeline: preprocess -> build-graphs -> walk -> train -> evaluate.

Every stage writes into ``<workspace>/<stage>-<hash>/`` where the hash
covers the stage's own settings plus its upstream hash, and records itself
in ``<workspace>/manifest.json``. Re-running a stage whose directory
already exists is a no-op.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass

from .baselines import baseline_top, baseline_utop
from .dataset import PreprocessConfig, load_dataset, preprocess, read_checkins, save_dataset
from .graphs import GraphConfig, build_stp_graphs, build_user_graph, read_graph, write_graph
from .metrics import EvalReport
from .model import HyperParams, NeighborhoodIndex, export_attention, forward
from .tensor import dump_checkpoint, load_checkpoint
from .training import TrainConfig, derive_seed, evaluate, train
from .walks import (
    WalkConfig, build_explorations, read_explorations, run_walks, write_explorations, write_walks,
)

log = logging.getLogger("nextpoi")

UPSTREAM = {"graphs": "preprocess", "walks": "graphs", "train": "walks"}
STAGE_COMMAND = {"preprocess": "preprocess", "graphs": "build-graphs", "walks": "walk", "train": "train"}
STP = ("S", "T", "P")


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    pass


class StaleArtifactError(PipelineError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: str | None
    workspace: str
    variant: str = "stp-udgat"
    seed: int = 0
    dim: int = 1024
    epochs: int = 100
    tau: int = 23
    mu: int = 5
    beta: int = 5
    sigma: int = 5
    jaccard_threshold: float = 0.2
    dropout: float = 0.95
    attention: str | None = None
    options: tuple[str, ...] | None = None
    graphs: tuple[str, ...] | None = None
    explore: bool | None = None
    exploit: bool | None = None
    user: str | None = None
    skip: bool | None = None
    cold_start: bool = False
    scale: str = "large"
    lr_initial: float = 1e-3
    lr_after_decay: float = 1e-4
    decay_epoch: int = 10
    checkpoint_every: int = 0

    def preprocess_config(self) -> PreprocessConfig:
        if self.cold_start:
            return PreprocessConfig.for_cold_start()
        return PreprocessConfig.small_scale() if self.scale == "small" else PreprocessConfig.large_scale()

    def graph_config(self) -> GraphConfig:
        return GraphConfig(sigma=self.sigma, jaccard_threshold=self.jaccard_threshold)

    def hyperparams(self) -> HyperParams:
        overrides = {
            "attention_mode": self.attention,
            "options": self.options,
            "graphs_enabled": self.graphs,
            "explore_enabled": self.explore,
            "exploit_enabled": self.exploit,
            "user_module": self.user,
            "skip_connection": self.skip,
        }
        overrides = {k: v for k, v in overrides.items() if v is not None}
        variant = "stp-udgat" if self.variant == "custom" else self.variant
        return HyperParams.preset(
            variant, dim=self.dim, delta=self.dim, tau=self.tau, mu=self.mu, beta=self.beta,
            sigma=self.sigma, dropout_rate=self.dropout, **overrides,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, lr_initial=self.lr_initial, lr_after_decay=self.lr_after_decay,
            decay_epoch=min(self.decay_epoch, self.epochs), rng_seed=self.seed,
            checkpoint_every=self.checkpoint_every,
        )


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hp_dict(hp: HyperParams) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(hp).items()}


class Workspace:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.workspace
        self.manifest_path = os.path.join(self.root, "manifest.json")

    # -- hashing ---------------------------------------------------------

    def stage_config(self, stage: str) -> dict:
        c = self.cfg
        if stage == "preprocess":
            if c.input is None:
                raise PipelineError("--input is required")
            if not os.path.exists(c.input):
                raise MissingArtifactError(f"input log {c.input} does not exist")
            return {"input_sha256": _file_digest(c.input), **dataclasses.asdict(c.preprocess_config())}
        if stage == "graphs":
            return dataclasses.asdict(c.graph_config())
        if stage == "walks":
            return {"mu": c.mu, "beta": c.beta, "tau": c.tau, "seed": derive_seed(c.seed, "walk")}
        if stage == "train":
            return {"hyperparams": hp_dict(c.hyperparams()), "train": dataclasses.asdict(c.train_config())}
        raise KeyError(stage)

    def stage_hash(self, stage: str) -> str:
        parent = UPSTREAM.get(stage)
        if stage == "preprocess" and self.cfg.input is None:
            # downstream commands may omit --input; trust the recorded preprocess stage
            entry = self.manifest().get("stages", {}).get("preprocess")
            if entry is None:
                raise MissingArtifactError(
                    f"no preprocessed dataset in {self.root}; run `nextpoi preprocess --input ...` first"
                )
            return entry["hash"]
        own = self.stage_config(stage)
        return _digest({"stage": stage, "config": own, "parent": self.stage_hash(parent) if parent else None})

    def stage_dir(self, stage: str) -> str:
        return os.path.join(self.root, f"{stage}-{self.stage_hash(stage)}")

    # -- manifest --------------------------------------------------------

    def manifest(self) -> dict:
        if not os.path.exists(self.manifest_path):
            return {"stages": {}}
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def record(self, stage: str, extra: dict | None = None) -> None:
        m = self.manifest()
        if stage == "preprocess" and self.cfg.input is None:
            return
        entry = {
            "hash": self.stage_hash(stage),
            "dir": os.path.basename(self.stage_dir(stage)),
            "config": self.stage_config(stage),
            "master_seed": self.cfg.seed,
        }
        previous = m.get("stages", {}).get(stage)
        if previous is not None and previous.get("hash") == entry["hash"]:
            entry = {**previous, **entry}
        if extra:
            entry.update(extra)
        m.setdefault("stages", {})[stage] = entry
        os.makedirs(self.root, exist_ok=True)
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(m, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def require(self, stage: str) -> str:
        """Directory of an upstream stage, or an actionable error."""
        path = self.stage_dir(stage)
        if os.path.exists(os.path.join(path, "DONE")):
            return path
        recorded = self.manifest().get("stages", {}).get(stage)
        if recorded is not None:
            raise StaleArtifactError(
                f"{stage} artifacts in {os.path.join(self.root, recorded['dir'])} were built with a different "
                f"configuration (hash {recorded['hash']}, expected {self.stage_hash(stage)}); "
                f"re-run `nextpoi {STAGE_COMMAND[stage]}` with the current settings"
            )
        raise MissingArtifactError(
            f"missing {stage} directory {path}; run `nextpoi {STAGE_COMMAND[stage]}` first"
        )

    def done(self, stage: str) -> bool:
        return os.path.exists(os.path.join(self.stage_dir(stage), "DONE"))

    @staticmethod
    def mark_done(path: str) -> None:
        with open(os.path.join(path, "DONE"), "w") as fh:
            fh.write("ok\n")


# -- stage runners -----------------------------------------------------------


def run_preprocess(ws: Workspace) -> str:
    out = ws.stage_dir("preprocess")
    if ws.done("preprocess"):
        log.info("preprocess up to date: %s", out)
        ws.record("preprocess")
        return out
    ds = preprocess(read_checkins(ws.cfg.input), ws.cfg.preprocess_config())
    save_dataset(ds, out)
    ws.mark_done(out)
    ws.record("preprocess", {"users": ds.n_users, "pois": ds.n_pois, "visits": ds.n_visits})
    print(f"dataset: {ds.n_users} users, {ds.n_pois} POIs, {ds.n_visits} visits -> {out}")
    return out


def load_ws_dataset(ws: Workspace):
    return load_dataset(ws.require("preprocess"))


def run_build_graphs(ws: Workspace) -> str:
    ds = load_ws_dataset(ws)
    out = ws.stage_dir("graphs")
    if ws.done("graphs"):
        log.info("graphs up to date: %s", out)
    else:
        os.makedirs(out, exist_ok=True)
        graphs = build_stp_graphs(ds, ws.cfg.graph_config())
        graphs["user"] = build_user_graph(ds, ws.cfg.graph_config())
        for key, g in graphs.items():
            write_graph(g, os.path.join(out, f"{key}.txt"))
        ws.mark_done(out)
        print("graphs: " + ", ".join(f"{k}={g.num_edges} edges" for k, g in graphs.items()) + f" -> {out}")
    ws.record("graphs")
    return out


def load_graphs(path: str) -> dict:
    return {key: read_graph(os.path.join(path, f"{key}.txt")) for key in (*STP, "user")}


def run_walk(ws: Workspace) -> str:
    ds = load_ws_dataset(ws)
    gdir = ws.require("graphs")
    out = ws.stage_dir("walks")
    if ws.done("walks"):
        log.info("walks up to date: %s", out)
    else:
        os.makedirs(out, exist_ok=True)
        graphs = load_graphs(gdir)
        seed = derive_seed(ws.cfg.seed, "walk")
        tables = {}
        for i, key in enumerate(STP):
            tables[key] = run_walks(graphs[key], WalkConfig(ws.cfg.mu, ws.cfg.beta, ws.cfg.tau, seed + i))
            write_walks(tables[key], os.path.join(out, f"walks_{key}.txt"))
        ex = build_explorations(ds, {k: graphs[k] for k in STP}, tables, ws.cfg.tau)
        write_explorations(ex, os.path.join(out, "explorations.tsv"))
        ws.mark_done(out)
        print(f"walks: {sum(t.total_steps for t in tables.values())} recorded steps -> {out}")
    ws.record("walks")
    return out


def _load_training_inputs(ws: Workspace):
    ds = load_ws_dataset(ws)
    graphs = load_graphs(ws.require("graphs"))
    ex = read_explorations(os.path.join(ws.require("walks"), "explorations.tsv"), ds.n_users)
    return ds, graphs, ex


def run_train(ws: Workspace) -> str:
    ds, graphs, ex = _load_training_inputs(ws)
    out = ws.stage_dir("train")
    if ws.done("train"):
        log.info("train up to date: %s", out)
        ws.record("train")
        return out
    os.makedirs(out, exist_ok=True)
    hp, tc = ws.cfg.hyperparams(), ws.cfg.train_config()

    def on_epoch(epoch, params, state):
        if tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            with open(os.path.join(out, f"checkpoint-epoch{epoch}.bin"), "wb") as fh:
                fh.write(dump_checkpoint(params, state))

    result = train(ds, graphs, ex, hp, tc, on_epoch=on_epoch)
    with open(os.path.join(out, "checkpoint.bin"), "wb") as fh:
        fh.write(dump_checkpoint(result.params, result.adam))
    with open(os.path.join(out, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write(result.loss_csv())
    with open(os.path.join(out, "hyperparams.json"), "w", encoding="utf-8") as fh:
        json.dump(hp_dict(hp), fh, indent=2, sort_keys=True)
    ws.mark_done(out)
    ws.record("train")
    print(f"trained {ws.cfg.variant} for {tc.epochs} epochs, final loss {result.loss_curve[-1][1]:.4f} -> {out}")
    return out


def _load_params(ws: Workspace):
    tdir = ws.require("train")
    with open(os.path.join(tdir, "checkpoint.bin"), "rb") as fh:
        params, _ = load_checkpoint(fh.read())
    return tdir, params


def run_evaluate(ws: Workspace, baselines: bool = False) -> EvalReport:
    ds, graphs, ex = _load_training_inputs(ws)
    tdir, params = _load_params(ws)
    report = evaluate(params, ws.cfg.hyperparams(), ds, graphs, ex)
    with open(os.path.join(tdir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    print(f"{ws.cfg.variant}: {report.summary()}")
    if baselines:
        for name, rep in (("TOP", baseline_top(ds)), ("U-TOP", baseline_utop(ds))):
            print(f"{name}: {rep.summary()}")
    return report


def run_baselines(ws: Workspace) -> dict[str, EvalReport]:
    ds = load_ws_dataset(ws)
    reports = {"TOP": baseline_top(ds), "U-TOP": baseline_utop(ds)}
    for name, rep in reports.items():
        print(f"{name}: {rep.summary()}")
    return reports


def run_export_attention(ws: Workspace, limit: int | None = None) -> str:
    ds, graphs, ex = _load_training_inputs(ws)
    tdir, params = _load_params(ws)
    hp = ws.cfg.hyperparams()
    index = NeighborhoodIndex(ds.train_seqs, ex, graphs.get("user"))
    path = os.path.join(tdir, "attention.tsv")
    samples = ds.test_samples()[:limit] if limit else ds.test_samples()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id\tlayer_name\tneighbor_id\tcoefficient\n")
        for sid, (u, prev, _) in enumerate(samples):
            trace = forward(params, hp, u, prev, index(u, prev))
            for _, layer, nid, coef in export_attention(trace, sid):
                label = ds.users[nid] if layer == "user" else ds.pois[nid]
                fh.write(f"{sid}\t{layer}\t{label}\t{coef:.12g}\n")
    print(f"attention for {len(samples)} samples -> {path}")
    return path


ABLATION_AXES = {
    "user": [("user=off", {"user": "off"}), ("user=embed", {"user": "raw_embedding"}), ("user=udgat", {"user": "udgat"})],
    "graphs": [(f"graphs={''.join(g)}", {"graphs": g}) for g in (("S",), ("T",), ("P",), ("S", "T", "P"))],
    "options": [(f"options={'+'.join(o)}", {"options": o}) for o in (("A",), ("RW",), ("A", "RW"))],
    "attention": [("attention=scalar", {"attention": "scalar"}), ("attention=dimensional", {"attention": "dimensional"})],
    "explore-exploit": [
        ("exploit-only", {"explore": False}),
        ("explore-only", {"exploit": False}),
        ("explore+exploit", {}),
    ],
}


def ablation_configs(axes: list[str], full_grid: bool = False) -> list[tuple[str, str, dict]]:
    """``(axis, name, overrides)`` triples.

    By default each axis is varied alone around STP-UDGAT. ``full_grid``
    takes the Cartesian product of the chosen axes instead; combinations
    that do not form a valid model are skipped when run.
    """
    if not full_grid:
        return [(axis, name, change) for axis in axes for name, change in ABLATION_AXES[axis]]
    out = []
    for combo in itertools.product(*(ABLATION_AXES[a] for a in axes)):
        change = {k: v for _, c in combo for k, v in c.items()}
        out.append(("grid", ",".join(name for name, _ in combo), change))
    return out


def run_ablate(ws: Workspace, axes: list[str], full_grid: bool = False) -> dict[str, EvalReport]:
    """Train and evaluate variations of STP-UDGAT sharing the graph/walk artifacts."""
    base = dataclasses.replace(ws.cfg, variant="stp-udgat", attention=None, options=None, graphs=None,
                               explore=None, exploit=None, user=None, skip=None)
    ds, graphs, ex = _load_training_inputs(ws)
    out = os.path.join(ws.root, f"ablate-{ws.stage_hash('walks')}")
    os.makedirs(out, exist_ok=True)
    reports = {}
    for axis, name, change in ablation_configs(axes, full_grid):
        cfg = dataclasses.replace(base, **change)
        try:
            hp = cfg.hyperparams()
        except ValueError as exc:
            log.info("skipping %s: %s", name, exc)
            continue
        result = train(ds, graphs, ex, hp, cfg.train_config())
        rep = evaluate(result.params, hp, ds, graphs, ex)
        key = f"{axis}/{name}"
        reports[key] = rep
        with open(os.path.join(out, f"{axis}__{name.replace('/', '_')}.json"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_text())
        print(f"{key}: {rep.summary()}")
    with open(os.path.join(out, "summary.tsv"), "w", encoding="utf-8") as fh:
        fh.write("config\tacc@1\tacc@5\tacc@10\tacc@20\tmap\n")
        for key, rep in reports.items():
            accs = "\t".join(f"{rep.acc_at[k]:.6f}" for k in sorted(rep.acc_at))
            fh.write(f"{key}\t{accs}\t{rep.map_score:.6f}\n")
    return reports


# -- argument parsing --------------------------------------------------------


def _options(text: str) -> tuple[str, ...]:
    parts = tuple(p for p in text.upper().replace(",", "+").split("+") if p)
    if not parts or any(p not in ("A", "RW") for p in parts):
        raise argparse.ArgumentTypeError("options must be A, RW or A+RW")
    return parts


def _graphs(text: str) -> tuple[str, ...]:
    letters = tuple(ch for ch in text.upper() if ch not in ",+ ")
    if not letters or any(ch not in STP for ch in letters):
        raise argparse.ArgumentTypeError("graphs must be a subset of S, T, P (e.g. ST or S,T,P)")
    return letters


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="tab-separated check-in log")
    common.add_argument("--workspace", required=True)
    common.add_argument("--variant", default="stp-udgat", choices=["pp-dgat-skip", "stp-dgat", "stp-udgat", "custom"])
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dim", type=int, default=1024)
    common.add_argument("--epochs", type=int, default=100)
    common.add_argument("--tau", type=int, default=23)
    common.add_argument("--mu", type=int, default=5)
    common.add_argument("--beta", type=int, default=5)
    common.add_argument("--sigma", type=int, default=5)
    common.add_argument("--dropout", type=float, default=0.95)
    common.add_argument("--attention", choices=["scalar", "dimensional"])
    common.add_argument("--options", type=_options)
    common.add_argument("--graphs", type=_graphs)
    common.add_argument("--explore", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--exploit", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--user", choices=["off", "udgat", "embed"])
    common.add_argument("--cold-start", action="store_true")
    common.add_argument("--scale", choices=["large", "small"], default="large",
                        help="visit-count bounds: large=[10,30], small=[10,150]")
    common.add_argument("--checkpoint-every", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nextpoi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common])
    sub.add_parser("build-graphs", parents=[common])
    sub.add_parser("walk", parents=[common])
    sub.add_parser("train", parents=[common])
    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--baselines", action="store_true", help="also report TOP and U-TOP")
    sub.add_parser("baselines", parents=[common])
    ab = sub.add_parser("ablate", parents=[common])
    ab.add_argument("--axis", action="append", choices=sorted(ABLATION_AXES),
                    help="ablation axis (repeatable; default: all)")
    ab.add_argument("--full-grid", action="store_true", help="Cartesian product of the axes instead of one at a time")
    ex = sub.add_parser("export-attention", parents=[common])
    ex.add_argument("--limit", type=int, default=None)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    user = {"embed": "raw_embedding"}.get(args.user, args.user)
    return RunConfig(
        input=args.input, workspace=args.workspace, variant=args.variant, seed=args.seed, dim=args.dim,
        epochs=args.epochs, tau=args.tau, mu=args.mu, beta=args.beta, sigma=args.sigma, dropout=args.dropout,
        attention=args.attention, options=args.options, graphs=args.graphs, explore=args.explore,
        exploit=args.exploit, user=user, cold_start=args.cold_start, scale=args.scale,
        checkpoint_every=args.checkpoint_every,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    ws = Workspace(config_from_args(args))
    try:
        if args.command == "preprocess":
            run_preprocess(ws)
        elif args.command == "build-graphs":
            run_build_graphs(ws)
        elif args.command == "walk":
            run_walk(ws)
        elif args.command == "train":
            run_train(ws)
        elif args.command == "evaluate":
            run_evaluate(ws, baselines=args.baselines)
        elif args.command == "baselines":
            run_baselines(ws)
        elif args.command == "ablate":
            run_ablate(ws, args.axis or list(ABLATION_AXES), full_grid=args.full_grid)
        elif args.command == "export-attention":
            run_export_attention(ws, args.limit)
    except (PipelineError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
