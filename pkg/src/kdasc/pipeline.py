"""Two-phase teacher/student workflow over an on-disk work directory.

Layout under ``workdir``::

    features/<KIND>/<clip>.feat   standardized 128x128x3 tensors
    features/index.tsv            clip_path, kind, file, sha256
    features/stats.tsv            per-kind, per-channel mean/std (TRAIN split)
    checkpoints/{teacher,student,student_nodistill}_<KIND>.ckpt
    embeddings/<KIND>.emb         teacher embeddings of the TRAIN split
    reports/<role>_<KIND>.tsv     per-epoch training reports
    metrics/                      evaluation tables

Every output path is a pure function of the work directory, role and kind.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audit import BYTES_PER_PARAM, MacConvention, audit
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import DatasetManifest, Split, load_wav
from .estimators import StudentClassifier, TeacherClassifier, TrainConfig, TrainReport
from .exceptions import CorruptFileError, MissingEmbeddingError, StateError
from .frontend import KINDS, Kind, Standardization, featurize, read_feature_file, write_feature_file
from .fusion import compare_systems, evaluate, prod_fuse_batch
from .zoo import EMBEDDING_DIM, TeacherConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistillConfig:
    teacher: TrainConfig = TrainConfig(epochs=100, mixup_alpha=0.4, loss_weights=(1.0, 0.0))
    student: TrainConfig = TrainConfig(epochs=200, loss_weights=(1.0, 1.0))
    teacher_arch: TeacherConfig = TeacherConfig()
    # per-kind seed overrides; kinds not listed use the configs' own seeds
    kind_seeds: dict = field(default_factory=dict)

    def for_kind(self, kind):
        seed = self.kind_seeds.get(Kind(kind).value)
        if seed is None:
            return self.teacher, self.student
        return replace(self.teacher, seed=seed), replace(self.student, seed=seed)


def desk_config(seed=0) -> DistillConfig:
    """Settings for the single-CPU synthetic run (smaller teacher, short schedules)."""
    return DistillConfig(
        teacher=TrainConfig(epochs=8, seed=seed, mixup_alpha=0.4, loss_weights=(1.0, 0.0)),
        student=TrainConfig(epochs=6, seed=seed, loss_weights=(1.0, 1.0)),
        teacher_arch=TeacherConfig(channels=(16, 32, 64, 128), stem_pool=4),
    )


# -- feature cache -----------------------------------------------------------

class FeatureCache:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def index_path(self):
        return self.root / "index.tsv"

    @property
    def stats_path(self):
        return self.root / "stats.tsv"

    def file_for(self, clip_path, kind):
        stem = clip_path.replace("/", "__").replace("\\", "__")
        return self.root / Kind(kind).value / f"{stem}.feat"

    def _read_index(self):
        if not self.index_path.exists():
            return {}
        rows = list(csv.reader(io.StringIO(self.index_path.read_text(encoding="utf-8")), delimiter="\t"))
        return {(r[0], r[1]): (r[2], r[3]) for r in rows[1:]}

    def _write_index(self, index):
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["clip_path", "kind", "file", "sha256"])
        for (clip, kind), (fname, digest) in sorted(index.items()):
            w.writerow([clip, kind, fname, digest])
        self.index_path.write_text(buf.getvalue(), encoding="utf-8")

    def read_stats(self) -> dict[str, Standardization]:
        if not self.stats_path.exists():
            return {}
        rows = list(csv.reader(io.StringIO(self.stats_path.read_text(encoding="utf-8")), delimiter="\t"))[1:]
        out = {}
        for kind in {r[0] for r in rows}:
            sel = sorted((int(r[1]), float(r[2]), float(r[3])) for r in rows if r[0] == kind)
            out[kind] = Standardization(tuple(s[1] for s in sel), tuple(s[2] for s in sel))
        return out

    def _write_stats(self, stats):
        lines = ["kind\tchannel\tmean\tstd"]
        for kind in sorted(stats):
            st = stats[kind]
            for c in range(3):
                lines.append(f"{kind}\t{c}\t{st.mean[c]!r}\t{st.std[c]!r}")
        self.stats_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def is_complete(self, manifest: DatasetManifest, kind) -> bool:
        kind = Kind(kind).value
        index = self._read_index()
        if kind not in self.read_stats():
            return False
        return all(
            (e.clip_path, kind) in index and (self.root / index[(e.clip_path, kind)][0]).exists()
            for e in manifest.entries
        )

    def build(self, manifest: DatasetManifest, kind, force=False) -> bool:
        """Featurize every clip for ``kind``; returns False on a cache hit."""
        kind = Kind(kind)
        if not force and self.is_complete(manifest, kind):
            log.info("feature cache hit for %s (%d clips)", kind.value, len(manifest.entries))
            return False
        raw = {}
        for e in manifest.entries:
            clip = load_wav(manifest.resolve(e))
            raw[e.clip_path] = featurize(clip.samples, kind, clip.sample_rate)
        train = [raw[e.clip_path] for e in manifest.split(Split.TRAIN)]
        if not train:
            raise StateError("cannot compute standardization statistics: TRAIN split is empty")
        st = Standardization.fit(np.stack(train))
        (self.root / kind.value).mkdir(parents=True, exist_ok=True)
        index = self._read_index()
        for e in manifest.entries:
            path = self.file_for(e.clip_path, kind)
            digest = write_feature_file(path, st.apply(raw[e.clip_path]).astype(np.float32), kind)
            index[(e.clip_path, kind.value)] = (str(path.relative_to(self.root)), digest)
        stats = self.read_stats()
        stats[kind.value] = st
        self._write_stats(stats)
        self._write_index(index)
        log.info("featurized %d clips for %s", len(manifest.entries), kind.value)
        return True

    def load(self, manifest: DatasetManifest, split, kind):
        """``(X, y, sample_ids)`` for one split; raises naming any missing clips."""
        kind = Kind(kind)
        entries = manifest.split(split)
        index = self._read_index()
        missing = [e.clip_path for e in entries if (e.clip_path, kind.value) not in index]
        if missing:
            raise StateError(f"missing {kind.value} features for {len(missing)} clips: {missing[:10]}")
        X = np.empty((len(entries), 128, 128, 3), dtype=np.float32)
        for i, e in enumerate(entries):
            X[i], found = read_feature_file(self.root / index[(e.clip_path, kind.value)][0])
            if found is not kind:
                raise CorruptFileError(f"feature file for {e.clip_path} holds {found.value}, expected {kind.value}")
        y = np.array([e.label_index for e in entries], dtype=np.int64)
        return X, y, [e.clip_path for e in entries]

    def standardization(self, kind):
        return self.read_stats().get(Kind(kind).value)


# -- embedding store ---------------------------------------------------------

def write_embedding_store(path, records):
    """Records of (sample_id, kind, 64 floats); trailing count and CRC32."""
    parts = []
    for sample_id, kind, vec in records:
        sid = sample_id.encode("utf-8")
        v = np.asarray(vec, dtype="<f4")
        if v.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding for {sample_id} has shape {v.shape}")
        parts += [struct.pack("<H", len(sid)), sid, struct.pack("<B", Kind(kind).code), v.tobytes()]
    body = b"".join(parts)
    body += struct.pack("<I", len(records))
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_embedding_store(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CorruptFileError(f"{path}: truncated embedding store", offset=len(data))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFileError(f"{path}: embedding store checksum mismatch", offset=len(data) - 4)
    (count,) = struct.unpack("<I", body[-4:])
    out, pos, end = {}, 0, len(body) - 4
    for _ in range(count):
        if pos + 2 > end:
            raise CorruptFileError(f"{path}: truncated record", offset=pos)
        (n,) = struct.unpack_from("<H", body, pos)
        pos += 2
        sid = body[pos:pos + n].decode("utf-8")
        pos += n + 1
        vec = np.frombuffer(body, dtype="<f4", count=EMBEDDING_DIM, offset=pos).astype(np.float32)
        pos += 4 * EMBEDDING_DIM
        out[sid] = vec
    if pos != end:
        raise CorruptFileError(f"{path}: record count does not match payload", offset=pos)
    return out


# -- phases --------------------------------------------------------------------

CACHE_ENV = "KDASC_CACHE"


def default_cache_dir(workdir):
    """``$KDASC_CACHE`` when set, else ``<workdir>/features``."""
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path(workdir) / "features"


class Workdir:
    def __init__(self, root, cache_dir=None):
        self.root = Path(root)
        self.cache = FeatureCache(cache_dir if cache_dir is not None else default_cache_dir(root))

    def checkpoint(self, role, kind):
        return self.root / "checkpoints" / f"{role}_{Kind(kind).value}.ckpt"

    def report(self, role, kind):
        return self.root / "reports" / f"{role}_{Kind(kind).value}.tsv"

    def embeddings(self, kind):
        return self.root / "embeddings" / f"{Kind(kind).value}.emb"

    def metrics(self, name):
        return self.root / "metrics" / name

    def ensure(self):
        for sub in ("checkpoints", "reports", "embeddings", "metrics"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)


def _estimator_params(cfg: TrainConfig):
    return dict(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        seed=cfg.seed,
        mixup_alpha=cfg.mixup_alpha,
        mixup_lambda=cfg.mixup_lambda,
        loss_weights=cfg.loss_weights,
    )


def train_teacher(manifest, kind, config: DistillConfig, cache: FeatureCache):
    """Phase I: mixup + cross-entropy; keeps the best-eval-accuracy epoch."""
    tcfg, _ = config.for_kind(kind)
    X, y, _ = cache.load(manifest, Split.TRAIN, kind)
    Xe, ye, _ = cache.load(manifest, Split.EVAL, kind)
    est = TeacherClassifier(
        channels=config.teacher_arch.channels, stem_pool=config.teacher_arch.stem_pool, **_estimator_params(tcfg)
    )
    est.fit(X, y, eval_set=(Xe, ye) if len(ye) else None)
    return est.to_checkpoint(kind, cache.standardization(kind)), est.report_


def extract_all_embeddings(ckpt: Checkpoint, manifest, kind, cache: FeatureCache, path=None):
    """Eval-mode teacher embeddings for every TRAIN clip, optionally persisted."""
    X, _, ids = cache.load(manifest, Split.TRAIN, kind)
    est = TeacherClassifier.from_checkpoint(ckpt)
    emb = est.transform(X)
    store = dict(zip(ids, emb))
    if path is not None:
        write_embedding_store(path, [(sid, kind, store[sid]) for sid in ids])
    return store


def train_student(manifest, kind, embeddings, config: DistillConfig, cache: FeatureCache, distill=True):
    """Phase II: CE + MSE to the stored teacher embeddings, no mixup.

    ``distill=False`` trains the same student on cross-entropy alone.
    """
    _, scfg = config.for_kind(kind)
    X, y, ids = cache.load(manifest, Split.TRAIN, kind)
    Xe, ye, _ = cache.load(manifest, Split.EVAL, kind)
    targets = None
    if distill:
        missing = [sid for sid in ids if sid not in embeddings]
        if missing:
            raise MissingEmbeddingError(f"no teacher embedding for {len(missing)} samples: {missing[:10]}")
        targets = np.stack([embeddings[sid] for sid in ids])
    else:
        scfg = replace(scfg, loss_weights=(scfg.loss_weights[0] or 1.0, 0.0))
    est = StudentClassifier(**_estimator_params(scfg))
    est.fit(X, y, embeddings=targets, eval_set=(Xe, ye) if len(ye) else None)
    return est.to_checkpoint(kind, cache.standardization(kind)), est.report_


def write_report(report: TrainReport, path):
    Path(path).write_text(report.to_tsv(), encoding="utf-8")


def run_kind(manifest, kind, config: DistillConfig, work: Workdir, baseline=True):
    """Teacher, embeddings, distilled student (and optionally an undistilled one) for one kind."""
    work.ensure()
    work.cache.build(manifest, kind)
    t_ckpt, t_rep = train_teacher(manifest, kind, config, work.cache)
    save_checkpoint(t_ckpt, work.checkpoint("teacher", kind))
    write_report(t_rep, work.report("teacher", kind))
    store = extract_all_embeddings(t_ckpt, manifest, kind, work.cache, work.embeddings(kind))
    s_ckpt, s_rep = train_student(manifest, kind, store, config, work.cache)
    save_checkpoint(s_ckpt, work.checkpoint("student", kind))
    write_report(s_rep, work.report("student", kind))
    reports = {"teacher": t_rep, "student": s_rep}
    if baseline:
        b_ckpt, b_rep = train_student(manifest, kind, store, config, work.cache, distill=False)
        save_checkpoint(b_ckpt, work.checkpoint("student_nodistill", kind))
        write_report(b_rep, work.report("student_nodistill", kind))
        reports["student_nodistill"] = b_rep
    return reports


def train_all(manifest, config: DistillConfig, workdir, kinds=KINDS, baseline=True, parallel=False, cache_dir=None):
    """Run both phases for each kind. Returns ``{kind: reports or exception}``."""
    work = Workdir(workdir, cache_dir)
    results = {}

    def one(kind):
        try:
            return run_kind(manifest, kind, config, work, baseline)
        except Exception as exc:  # keep the other kinds' results
            log.error("pipeline for %s failed: %s", Kind(kind).value, exc)
            return exc

    if parallel:
        from concurrent.futures import ThreadPoolExecutor

        for kind in kinds:
            work.cache.build(manifest, kind)
        with ThreadPoolExecutor(len(kinds)) as pool:
            for kind, res in zip(kinds, pool.map(one, kinds)):
                results[Kind(kind).value] = res
    else:
        for kind in kinds:
            results[Kind(kind).value] = one(kind)
    return results


# -- evaluation ----------------------------------------------------------------

def checkpoint_posteriors(ckpt: Checkpoint, manifest, kind, cache: FeatureCache):
    Xe, ye, _ = cache.load(manifest, Split.EVAL, kind)
    est = StudentClassifier.from_checkpoint(ckpt) if ckpt.spec.name == "student" else TeacherClassifier.from_checkpoint(ckpt)
    return est.predict_proba(Xe), ye


def _memory_macs(spec, n_models=1):
    rep = audit(spec, MacConvention.CONV_FC)
    return n_models * rep.params * BYTES_PER_PARAM / 1024.0, n_models * rep.macs / 1e6


def evaluate_role(manifest, work: Workdir, role="student", kinds=KINDS, label=None):
    """Per-kind tables plus the PROD-fused ensemble for one checkpoint role."""
    label = label or ("w/ dis." if role == "student" else "w/o dis." if role == "student_nodistill" else role)
    tables, posteriors, y_true = [], [], None
    spec = None
    for kind in kinds:
        ckpt = load_checkpoint(work.checkpoint(role, kind))
        spec = ckpt.spec
        proba, ye = checkpoint_posteriors(ckpt, manifest, kind, work.cache)
        y_true = ye
        mem, macs = _memory_macs(spec)
        tables.append(evaluate(proba, ye, f"{Kind(kind).value} {label}", mem, macs))
        posteriors.append(proba)
    fused = prod_fuse_batch(posteriors)
    mem, macs = _memory_macs(spec, len(kinds))
    tables.append(evaluate(fused, y_true, f"Ens. {label}", mem, macs, fused=True))
    return tables


def fuse_eval(manifest, workdir, kinds=KINDS, extra_tables=(), cache_dir=None):
    """The comparison table: external columns, then w/o and w/ distillation systems."""
    work = Workdir(workdir, cache_dir)
    work.ensure()
    tables = list(extra_tables)
    pairs = []
    have_nodis = all(work.checkpoint("student_nodistill", k).exists() for k in kinds)
    if have_nodis:
        tables += evaluate_role(manifest, work, "student_nodistill", kinds)
    with_dis = evaluate_role(manifest, work, "student", kinds)
    tables += with_dis
    if have_nodis:
        n = len(kinds) + 1
        wo = tables[-2 * n:-n]
        pairs = [(a.system, b.system) for a, b in zip(wo, with_dis)]
    comp = compare_systems(tables, pairs=pairs)
    work.metrics("comparison.tsv").write_text(comp.to_tsv(), encoding="utf-8")
    return comp


__all__ = [
    "DistillConfig",
    "FeatureCache",
    "Workdir",
    "desk_config",
    "extract_all_embeddings",
    "fuse_eval",
    "read_embedding_store",
    "train_all",
    "train_student",
    "train_teacher",
    "write_embedding_store",
]
