"""Command-line entry point: ``kdasc <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 missing prerequisite (the
message names the command to run first), 3 configuration conflict or
validation error.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import pipeline as pl
from .audit import MacConvention, audit, ensemble, format_report, reconciliation
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import generate_synthetic_dataset, load_manifest
from .estimators import TrainConfig
from .exceptions import ConfigError, KDASCError, ValidationError
from .frontend import KINDS, Kind
from .fusion import DCASE_BASELINE, compare_systems
from .zoo import TeacherConfig, build_student, build_teacher

log = logging.getLogger("kdasc")

EXIT_OK, EXIT_RUNTIME, EXIT_PREREQ, EXIT_CONFIG = 0, 1, 2, 3

PUB = "[published setting]"
IMPL = "[implementation choice]"


class MissingPrerequisite(Exception):
    def __init__(self, what, command):
        super().__init__(what)
        self.command = command


# -- configuration -------------------------------------------------------------

def _kinds(value):
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [v.strip() for v in str(value).split(",") if v.strip()]
    try:
        kinds = tuple(Kind(v.upper() if isinstance(v, str) else v) for v in items)
    except ValueError:
        raise ConfigError(f"kinds must be drawn from MEL, GAM, CQT; got {value!r}") from None
    if not kinds or len(set(kinds)) != len(kinds):
        raise ConfigError(f"kinds must be a non-empty list without repeats; got {value!r}")
    return kinds


def _int_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(" ", "").split(",") if v)


def _float_pair(value):
    vals = tuple(float(v) for v in (value if isinstance(value, (list, tuple)) else str(value).split(",")))
    if len(vals) != 2:
        raise ConfigError(f"expected two comma-separated weights, got {value!r}")
    return vals


def _optional_float(value):
    if value is None or str(value).lower() in ("none", "off", ""):
        return None
    return float(value)


def _bool(value):
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _kind_seeds(value):
    if isinstance(value, dict):
        return {Kind(k).value: int(v) for k, v in value.items()}
    out = {}
    for item in str(value).split(","):
        if item.strip():
            k, _, v = item.partition(":")
            out[Kind(k.strip().upper()).value] = int(v)
    return out


@dataclass
class RunConfig:
    """Fully resolved settings: defaults, then the config file, then flags."""

    data: Path = Path("data")
    workdir: Path = Path("runs")
    cache_dir: Path | None = None
    kinds: tuple = KINDS
    seed: int = 0
    kind_seeds: dict = field(default_factory=dict)
    per_class: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    teacher_epochs: int = 100
    student_epochs: int = 200
    mixup_alpha: float | None = 0.4
    loss_weights: tuple = (1.0, 1.0)
    teacher_channels: tuple = (32, 64, 128, 256)
    teacher_stem_pool: int = 1
    parallel_kinds: bool = False

    def distill_config(self) -> pl.DistillConfig:
        common = dict(learning_rate=self.learning_rate, batch_size=self.batch_size, seed=self.seed)
        return pl.DistillConfig(
            teacher=TrainConfig(epochs=self.teacher_epochs, mixup_alpha=self.mixup_alpha, loss_weights=(1.0, 0.0), **common),
            student=TrainConfig(epochs=self.student_epochs, loss_weights=self.loss_weights, **common),
            teacher_arch=TeacherConfig(tuple(self.teacher_channels), self.teacher_stem_pool),
            kind_seeds=dict(self.kind_seeds),
        )

    @property
    def manifest_path(self):
        return Path(self.data) / "manifest.tsv"

    def work(self):
        return pl.Workdir(self.workdir, self.cache_dir)


_COERCE = {
    "data": Path,
    "workdir": Path,
    "cache_dir": lambda v: None if v in (None, "", "none") else Path(v),
    "kinds": _kinds,
    "seed": int,
    "kind_seeds": _kind_seeds,
    "per_class": int,
    "learning_rate": float,
    "batch_size": int,
    "teacher_epochs": int,
    "student_epochs": int,
    "mixup_alpha": _optional_float,
    "loss_weights": _float_pair,
    "teacher_channels": _int_tuple,
    "teacher_stem_pool": int,
    "parallel_kinds": _bool,
}

# the desk profile fits one CPU core; see README
PROFILES = {
    "full": {},
    "desk": {
        "teacher_epochs": 8,
        "student_epochs": 6,
        "teacher_channels": (16, 32, 64, 128),
        "teacher_stem_pool": 4,
    },
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    A key given twice with different values is a conflict.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key in out and out[key] != value:
            raise ConfigError(f"{path}:{lineno}: {key!r} set twice ({out[key]!r} then {value!r})")
        out[key] = value
    return out


def resolve_config(file_values: dict, flag_values: dict, profile="full") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    merged = dict(PROFILES[profile])
    unknown = sorted(set(file_values) - known - {"profile"})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged.update({k: v for k, v in file_values.items() if k != "profile"})
    merged.update({k: v for k, v in flag_values.items() if v is not None and k in known})
    try:
        cfg = RunConfig(**{k: _COERCE[k](v) for k, v in merged.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {exc}") from None
    cfg.distill_config()  # validates the training settings up front
    for kind in cfg.kind_seeds:
        if Kind(kind) not in cfg.kinds:
            raise ConfigError(f"kind_seeds names {kind}, which is not among the selected kinds")
    return cfg


# -- argument parsing ------------------------------------------------------------

def _common(p):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help=f"flat 'key = value' file; flags override it {IMPL}")
    g.add_argument("--profile", choices=sorted(PROFILES), help=f"preset defaults: full-size or single-CPU desk run {IMPL}")
    g.add_argument("--data", help=f"dataset directory holding manifest.tsv (default data) {IMPL}")
    g.add_argument("--workdir", help=f"output directory for checkpoints, reports, metrics (default runs) {IMPL}")
    g.add_argument("--cache-dir", dest="cache_dir", help=f"feature cache; $KDASC_CACHE or <workdir>/features by default {IMPL}")
    g.add_argument("--kinds", help=f"comma-separated spectrogram kinds (default MEL,GAM,CQT) {PUB}")
    g.add_argument("--seed", type=int, help=f"master seed (default 0) {IMPL}")
    g.add_argument("--kind-seeds", dest="kind_seeds", help=f"per-kind seed overrides, e.g. CQT:5 {IMPL}")
    g.add_argument("--parallel-kinds", dest="parallel_kinds", action="store_const", const=True,
                   help=f"run the per-kind pipelines concurrently {IMPL}")
    g.add_argument("-v", "--verbose", action="store_true", help=f"debug logging on stderr {IMPL}")


def _training(p, teacher=False, student=False):
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", dest="learning_rate", type=float, help=f"Adam step size (default 1e-3); Adam itself is {PUB} {IMPL}")
    g.add_argument("--batch-size", dest="batch_size", type=int, help=f"minibatch size (default 32) {IMPL}")
    if teacher:
        g.add_argument("--teacher-epochs", dest="teacher_epochs", type=int, help=f"teacher epochs (default 100) {IMPL}")
        g.add_argument("--mixup-alpha", dest="mixup_alpha", help=f"Beta(alpha, alpha) for teacher mixup, 'off' disables (default 0.4); mixup on teachers is {PUB}, alpha is {IMPL}")
        g.add_argument("--teacher-channels", dest="teacher_channels", help=f"residual block widths (default 32,64,128,256) {IMPL}")
        g.add_argument("--teacher-stem-pool", dest="teacher_stem_pool", type=int, help=f"average-pool factor before the blocks (default 1) {IMPL}")
    if student:
        g.add_argument("--student-epochs", dest="student_epochs", type=int, help=f"student epochs (default 200) {IMPL}")
        g.add_argument("--loss-weights", dest="loss_weights", help=f"cross-entropy,MSE weights; 1:1 is {PUB}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdasc", description="Teacher-student acoustic scene classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic 10-class dataset")
    _common(p)
    p.add_argument("--per-class", dest="per_class", type=int, help=f"clips per class, 20%% held out for EVAL (default 100) {IMPL}")

    p = sub.add_parser("featurize", help="compute and cache spectrogram features")
    _common(p)
    p.add_argument("--force", action="store_true", help=f"recompute even on a cache hit {IMPL}")

    p = sub.add_parser("train-teacher", help="phase I: teacher with mixup and cross-entropy")
    _common(p)
    _training(p, teacher=True)

    p = sub.add_parser("embed", help="extract teacher embeddings for the TRAIN split")
    _common(p)

    p = sub.add_parser("train-student", help="phase II: student with cross-entropy plus embedding MSE")
    _common(p)
    _training(p, student=True)
    p.add_argument("--no-distill", action="store_true", help=f"train the same student on cross-entropy alone, as a baseline {IMPL}")

    p = sub.add_parser("evaluate", help="per-class accuracy and log loss of each student on the EVAL split")
    _common(p)
    p.add_argument("--role", choices=("student", "student_nodistill", "teacher"), default="student", help=f"which checkpoints to evaluate {IMPL}")

    p = sub.add_parser("fuse-eval", help="PROD-fuse the students and print the comparison table")
    _common(p)

    p = sub.add_parser("audit", help="parameter, memory and MAC budget audit")
    _common(p)
    _training(p, teacher=True)
    p.add_argument("--model", choices=("student", "teacher", "ensemble"), default="student", help=f"'ensemble' is three students {PUB}")
    p.add_argument("--convention", choices=[c.value for c in MacConvention], default="CONV_FC",
                   help=f"CONV_FC counts conv and dense MACs; EXTENDED adds BN and pooling {IMPL}")

    p = sub.add_parser("report", help="summarise training reports and the comparison table")
    _common(p)
    return parser


# -- commands --------------------------------------------------------------------

def _cmd(name, cfg: RunConfig, kinds=None, extra=""):
    parts = ["kdasc", name, "--data", str(cfg.data), "--workdir", str(cfg.workdir)]
    if cfg.cache_dir is not None:
        parts += ["--cache-dir", str(cfg.cache_dir)]
    if kinds:
        parts += ["--kinds", ",".join(Kind(k).value for k in kinds)]
    return shlex.join(parts) + extra


def _manifest(cfg):
    if not cfg.manifest_path.exists():
        raise MissingPrerequisite(f"no dataset manifest at {cfg.manifest_path}", _cmd("synth", cfg))
    return load_manifest(cfg.manifest_path)


def _require(paths_by_kind, what, command_name, cfg):
    missing = [k for k, p in paths_by_kind.items() if not Path(p).exists()]
    if missing:
        raise MissingPrerequisite(
            f"missing {what} for {', '.join(Kind(k).value for k in missing)}", _cmd(command_name, cfg, missing)
        )


def _require_features(manifest, cfg, work):
    missing = [k for k in cfg.kinds if not work.cache.is_complete(manifest, k)]
    if missing:
        raise MissingPrerequisite(
            f"features not cached for {', '.join(Kind(k).value for k in missing)}", _cmd("featurize", cfg, missing)
        )


def _for_kinds(cfg, fn):
    """Apply ``fn`` per kind, concurrently with --parallel-kinds; results in kind order."""
    if cfg.parallel_kinds and len(cfg.kinds) > 1:
        with ThreadPoolExecutor(len(cfg.kinds)) as pool:
            return list(pool.map(fn, cfg.kinds))
    return [fn(k) for k in cfg.kinds]


def cmd_synth(cfg, args, out):
    manifest = generate_synthetic_dataset(cfg.data, seed=cfg.seed, per_class=cfg.per_class)
    print(f"wrote {len(manifest.entries)} clips and {cfg.manifest_path}", file=out)


def cmd_featurize(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    work.cache.root.mkdir(parents=True, exist_ok=True)
    # the index and stats files are shared between kinds, so this stays sequential
    for kind in cfg.kinds:
        built = work.cache.build(manifest, kind, force=args.force)
        print(f"{kind.value}\t{'computed' if built else 'cache hit'}\t{work.cache.root}", file=out)


def cmd_train_teacher(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    _require_features(manifest, cfg, work)
    work.ensure()
    dc = cfg.distill_config()

    def one(kind):
        ckpt, rep = pl.train_teacher(manifest, kind, dc, work.cache)
        save_checkpoint(ckpt, work.checkpoint("teacher", kind))
        pl.write_report(rep, work.report("teacher", kind))
        return kind, rep

    for kind, rep in _for_kinds(cfg, one):
        print(_summary("teacher", kind, rep, work), file=out)


def cmd_embed(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    _require_features(manifest, cfg, work)
    _require({k: work.checkpoint("teacher", k) for k in cfg.kinds}, "teacher checkpoints", "train-teacher", cfg)
    work.ensure()

    def one(kind):
        ckpt = load_checkpoint(work.checkpoint("teacher", kind))
        return kind, pl.extract_all_embeddings(ckpt, manifest, kind, work.cache, work.embeddings(kind))

    for kind, store in _for_kinds(cfg, one):
        print(f"{kind.value}\t{len(store)} embeddings\t{work.embeddings(kind)}", file=out)


def cmd_train_student(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    _require_features(manifest, cfg, work)
    if not args.no_distill:
        _require({k: work.embeddings(k) for k in cfg.kinds}, "teacher embeddings", "embed", cfg)
    work.ensure()
    dc = cfg.distill_config()
    role = "student_nodistill" if args.no_distill else "student"

    def one(kind):
        store = {} if args.no_distill else pl.read_embedding_store(work.embeddings(kind))
        ckpt, rep = pl.train_student(manifest, kind, store, dc, work.cache, distill=not args.no_distill)
        save_checkpoint(ckpt, work.checkpoint(role, kind))
        pl.write_report(rep, work.report(role, kind))
        return kind, rep

    for kind, rep in _for_kinds(cfg, one):
        print(_summary(role, kind, rep, work), file=out)


def _summary(role, kind, rep, work):
    best = rep.epochs[rep.best_epoch - 1] if rep.best_epoch else (rep.epochs[-1] if rep.epochs else None)
    if best is None:
        return f"{role}\t{Kind(kind).value}\tno epochs run\t{work.checkpoint(role, kind)}"
    return (
        f"{role}\t{Kind(kind).value}\tbest_epoch={best.epoch}\teval_acc={best.eval_acc:.4f}"
        f"\teval_logloss={best.eval_logloss:.4f}\t{work.checkpoint(role, kind)}"
    )


def cmd_evaluate(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    _require_features(manifest, cfg, work)
    producer = {"student": "train-student", "student_nodistill": "train-student", "teacher": "train-teacher"}[args.role]
    _require({k: work.checkpoint(args.role, k) for k in cfg.kinds}, f"{args.role} checkpoints", producer, cfg)
    work.ensure()
    tables = pl.evaluate_role(manifest, work, args.role, cfg.kinds)[:-1]
    for kind, table in zip(cfg.kinds, tables):
        text = compare_systems([table]).to_tsv()
        work.metrics(f"{args.role}_{kind.value}.tsv").write_text(text, encoding="utf-8")
    print(compare_systems(tables).to_text(deltas=False), file=out, end="")


def cmd_fuse_eval(cfg, args, out):
    manifest = _manifest(cfg)
    work = cfg.work()
    _require_features(manifest, cfg, work)
    _require({k: work.checkpoint("student", k) for k in cfg.kinds}, "student checkpoints", "train-student", cfg)
    comp = pl.fuse_eval(manifest, cfg.workdir, cfg.kinds, extra_tables=[DCASE_BASELINE], cache_dir=work.cache.root)
    print(comp.to_text(deltas=False), file=out, end="")


def cmd_audit(cfg, args, out):
    conv = MacConvention(args.convention)
    if args.model == "teacher":
        report = audit(build_teacher(TeacherConfig(tuple(cfg.teacher_channels), cfg.teacher_stem_pool)), conv)
    elif args.model == "ensemble":
        report = ensemble([audit(build_student(), conv) for _ in range(3)], name="3 students")
    else:
        report = audit(build_student(), conv)
    print(format_report(report), file=out, end="")
    if args.model != "teacher":
        print(file=out)
        print(reconciliation(build_student()), file=out, end="")


def cmd_report(cfg, args, out):
    work = cfg.work()
    lines = []
    for role in ("teacher", "student_nodistill", "student"):
        for kind in cfg.kinds:
            path = work.report(role, kind)
            if path.exists():
                lines.append(_report_line(role, kind, path))
    comparison = work.metrics("comparison.tsv")
    if not lines and not comparison.exists():
        raise MissingPrerequisite(f"no training reports under {work.root}", _cmd("train-teacher", cfg))
    print("role\tkind\tepochs\tbest_epoch\teval_acc\teval_logloss", file=out)
    for line in lines:
        print(line, file=out)
    if comparison.exists():
        print(file=out)
        print(comparison.read_text(encoding="utf-8"), file=out, end="")


def _report_line(role, kind, path):
    rows = [r.split("\t") for r in Path(path).read_text(encoding="utf-8").splitlines()[1:] if r]
    if not rows:
        return f"{role}\t{kind.value}\t0\t-\t-\t-"
    best = max(rows, key=lambda r: (float(r[4]), -float(r[5])))
    return f"{role}\t{kind.value}\t{len(rows)}\t{best[0]}\t{float(best[4]):.4f}\t{float(best[5]):.4f}"


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train-teacher": cmd_train_teacher,
    "embed": cmd_embed,
    "train-student": cmd_train_student,
    "evaluate": cmd_evaluate,
    "fuse-eval": cmd_fuse_eval,
    "audit": cmd_audit,
    "report": cmd_report,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        file_values = read_config_file(args.config) if args.config else {}
        if args.profile and "profile" in file_values and args.profile != file_values["profile"]:
            raise ConfigError(f"--profile {args.profile} conflicts with profile = {file_values['profile']} in {args.config}")
        profile = args.profile or file_values.get("profile", "full")
        cfg = resolve_config(file_values, vars(args), profile)
    except (ConfigError, ValidationError) as exc:
        print(f"kdasc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args, out)
    except MissingPrerequisite as exc:
        print(f"kdasc: {exc}\nrun first: {exc.command}", file=sys.stderr)
        return EXIT_PREREQ
    except (ConfigError, ValidationError) as exc:
        print(f"kdasc: validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KDASCError, OSError) as exc:
        print(f"kdasc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
