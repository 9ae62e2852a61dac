"""The experiment chain: synth, features, dataset, train, predict, tune, eval.

Every command writes through an :class:`Artifacts` sink: files are replaced
atomically, identical content is left untouched (so re-runs are byte-wise
no-ops), each written file's sha256 is logged, and on failure everything
the command wrote is removed again.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .config import ConfigError, ExperimentConfig
from .corpus import (
    CHANNELS,
    BcEvent,
    CorpusError,
    Conversation,
    MonologueSegment,
    extract_bc_annotations,
    format_time,
    load_corpus,
    monologuing_segments,
    other_channel,
    read_bc_truth,
    read_lexicon,
    top_bc_texts,
)
from .dataset import SplitSpec, build_training_set, manifest_lines, materialize, read_manifest, split_corpus
from .evaluation import (
    EvalReport,
    Margin,
    baseline_triggers,
    evaluate,
    listener_segments,
    report_tsv,
)
from .features import (
    FeatureOptions,
    FeatureTrack,
    WordEmbeddingTable,
    compute_tracks,
    read_track,
    sidecar_text,
    stack_features,
    track_bytes,
)
from .hyperopt import SearchSpace, ValidationObjective, trials_tsv, tune
from .nn.inference import predict_track
from .nn.modelio import model_bytes, parse_model
from .nn.training import train
from .postprocess import SmootherConfig, TriggerConfig, causal_gaussian_smooth, extract_triggers, trigger_lines
from .synth import write_corpus

log = logging.getLogger(__name__)

COMMANDS = ("synth", "features", "dataset", "train", "predict", "tune", "eval")


class InputError(ConfigError):
    """A required input file or directory is missing."""


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Artifacts:
    """Atomic, content-addressed file sink for one command."""

    def __init__(self, command: str, base_dir: Path):
        self.command = command
        self.base_dir = Path(base_dir)
        self.written: list[tuple[Path, str]] = []
        self._touched: list[Path] = []

    def _display(self, path: Path) -> str:
        try:
            return os.path.relpath(path, self.base_dir)
        except ValueError:
            return str(path)

    def write(self, path: Path, data: bytes | str) -> None:
        path = Path(path)
        if isinstance(data, str):
            data = data.encode("utf-8")
        digest = sha256(data)
        self.written.append((path, digest))
        if path.exists() and path.read_bytes() == data:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self._touched.append(path)
        log.debug("wrote %s sha256=%s", self._display(path), digest)

    def rollback(self) -> None:
        for path in self._touched:
            if path.exists():
                path.unlink()

    def hash_log(self) -> str:
        rows = sorted((self._display(p), d) for p, d in self.written)
        return "".join(f"{d}  {p}\n" for p, d in rows)


def run_command(name: str, cfg: ExperimentConfig) -> Artifacts:
    """Run one pipeline step with rollback on failure and provenance files."""
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}")
    cfg.validate()
    out_dir = cfg.path("output_dir")
    art = Artifacts(name, Path(cfg.base_dir))
    try:
        STEPS[name](cfg, art)
        art.write(out_dir / "logs" / f"{name}.config.json", cfg.to_json())
        log_text = art.hash_log()
        art.write(out_dir / "logs" / f"{name}.sha256", log_text)
    except BaseException:
        art.rollback()
        raise
    for line in log_text.splitlines():
        log.info("%s %s", name, line)
    return art


def reproduce(cfg: ExperimentConfig) -> list[Artifacts]:
    return [run_command(name, cfg) for name in COMMANDS]


# ---------------------------------------------------------------------------
# shared loaders


def _load_corpus(cfg: ExperimentConfig) -> list[Conversation]:
    corpus_dir = cfg.path("corpus_dir")
    if not (corpus_dir / "conversations.tsv").exists():
        raise InputError(f"corpus not found in {corpus_dir} (run 'synth' first)")
    return load_corpus(corpus_dir)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise InputError(f"missing {path} (run '{hint}' first)")
    return path


def _feature_options(cfg: ExperimentConfig) -> FeatureOptions:
    f = cfg.features
    return FeatureOptions(tuple(f.names), cfg.frame_spec(), f.normalization, f.pitch_mode)


def _cache_path(cfg: ExperimentConfig, conv_id: str, channel: str, name: str) -> Path:
    return cfg.path("cache_dir") / f"{conv_id}.{channel}.{name}.bcf"


def _stacked_loader(cfg: ExperimentConfig) -> Callable[[str, str], FeatureTrack]:
    cache: dict[tuple[str, str], FeatureTrack] = {}

    def load(conv_id: str, channel: str) -> FeatureTrack:
        key = (conv_id, channel)
        if key not in cache:
            tracks = []
            for name in cfg.features.names:
                path = _require(_cache_path(cfg, conv_id, channel, name), "features")
                tracks.append(read_track(path))
            cache[key] = stack_features(tracks)
        return cache[key]

    return load


def _read_splits(cfg: ExperimentConfig) -> dict[str, list[str]]:
    path = _require(cfg.path("output_dir") / "splits.tsv", "dataset")
    out: dict[str, list[str]] = {"train": [], "valid": [], "eval": []}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            conv_id, split = line.split("\t")
            out[split].append(conv_id)
    return out


def _read_annotations(cfg: ExperimentConfig) -> dict[str, list[BcEvent]]:
    return read_bc_truth(_require(cfg.path("output_dir") / "bc_annotations.tsv", "dataset"))


def _read_lexicon(cfg: ExperimentConfig) -> frozenset[str]:
    return read_lexicon(_require(cfg.path("output_dir") / "lexicon.txt", "dataset"))


def _prob_path(cfg: ExperimentConfig, conv_id: str, listener: str) -> Path:
    return cfg.path("output_dir") / "probs" / f"{conv_id}.{listener}.bcf"


def _parallel_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# steps


def step_synth(cfg: ExperimentConfig, art: Artifacts) -> None:
    write_corpus(cfg.synth_params(), cfg.path("corpus_dir"), write=art.write)


def _features_job(args) -> list[tuple[str, str, bytes, str]]:
    conv, options, table_args = args
    table = None
    if table_args is not None:
        path, dim = table_args
        table = WordEmbeddingTable.load(path) if path is not None else WordEmbeddingTable(dim)
    out = []
    for ch in CHANNELS:
        for name, track in compute_tracks(conv, ch, options, table).items():
            out.append((ch, name, track_bytes(track), sidecar_text(track)))
    return out


def step_features(cfg: ExperimentConfig, art: Artifacts) -> None:
    convs = _load_corpus(cfg)
    options = _feature_options(cfg)
    table_args = None
    if "word" in options.names:
        emb = cfg.features.embedding_file
        table_args = (str(cfg.resolve(emb)) if emb else None, cfg.features.embedding_dim)
    jobs = [(c, options, table_args) for c in convs]
    results = _parallel_map(_features_job, jobs, cfg.jobs)
    for conv, files in zip(convs, results):
        for ch, name, data, side in files:
            path = _cache_path(cfg, conv.id, ch, name)
            art.write(path, data)
            art.write(Path(str(path) + ".txt"), side)


def step_dataset(cfg: ExperimentConfig, art: Artifacts) -> None:
    convs = _load_corpus(cfg)
    out = cfg.path("output_dir")
    seed_list = _require(cfg.path("corpus_dir") / "bc_seed.txt", "synth")
    lexicon = top_bc_texts(convs, read_lexicon(seed_list), cfg.dataset.lexicon_size)
    if not lexicon:
        raise CorpusError("BC lexicon is empty: no utterance matches the seed list")
    art.write(out / "lexicon.txt", "".join(w + "\n" for w in sorted(lexicon)))
    events = {c.id: extract_bc_annotations(c, lexicon) for c in convs}
    rows = sorted((cid, e.channel, e.onset, e.text) for cid, evs in events.items() for e in evs)
    art.write(out / "bc_annotations.tsv", "".join(f"{c}\t{ch}\t{format_time(t)}\t{x}\n" for c, ch, t, x in rows))
    d = cfg.dataset
    splits = split_corpus([c.id for c in convs], SplitSpec(d.train_frac, d.valid_frac, d.eval_frac, cfg.seeds.split))
    art.write(out / "splits.tsv", "".join(f"{cid}\t{name}\n" for name in ("train", "valid", "eval") for cid in splits[name]))
    segs = {c.id: monologuing_segments(c, lexicon) for c in convs}
    art.write(
        out / "segments.tsv",
        "".join(f"{cid}\t{m.speaker}\t{format_time(m.start)}\t{format_time(m.end)}\n" for cid in sorted(segs) for m in segs[cid]),
    )
    loader = _stacked_loader(cfg)
    for name in ("train", "valid"):
        examples = build_training_set(
            {cid: events[cid] for cid in splits[name]},
            loader,
            cfg.context.width,
            cfg.context.stride,
            d.neg_offset,
            cfg.seeds.dataset,
            d.sliding,
        )
        if name == "train" and not examples:
            raise CorpusError("training split yields no examples")
        art.write(out / f"{name}_manifest.tsv", "".join(line + "\n" for line in manifest_lines(examples)))


def step_train(cfg: ExperimentConfig, art: Artifacts) -> None:
    out = cfg.path("output_dir")
    loader = _stacked_loader(cfg)
    w, s = cfg.context.width, cfg.context.stride
    Xtr, ytr = materialize(read_manifest(_require(out / "train_manifest.tsv", "dataset")), loader, w, s)
    Xva, yva = materialize(read_manifest(_require(out / "valid_manifest.tsv", "dataset")), loader, w, s)
    if len(ytr) == 0:
        raise CorpusError("empty training manifest")
    net = cfg.network_config(Xtr.shape[2], Xtr.shape[1])
    t = cfg.training
    report = train(Xtr, ytr, Xva if len(yva) else None, yva if len(yva) else None, net, t.epochs, t.batch_size, t.patience)
    if report.best_epoch < 0:
        raise FloatingPointError("training diverged before completing an epoch")
    art.write(cfg.path("model_path"), model_bytes(net, report.params))
    art.write(out / "train_report.tsv", report.tsv())


def _predict_job(args) -> list[tuple[str, bytes, str]]:
    cfg_json, base_dir, model, conv_id = args
    cfg = ExperimentConfig.from_json(cfg_json, base_dir)
    config, params = parse_model(model)
    loader = _stacked_loader(cfg)
    out = []
    for listener in CHANNELS:
        track = loader(conv_id, other_channel(listener))
        probs = predict_track(params, config, track, cfg.context.width, cfg.context.stride, cfg.training.float32_inference)
        out.append((listener, track_bytes(probs), sidecar_text(probs)))
    return out


def step_predict(cfg: ExperimentConfig, art: Artifacts) -> None:
    model = _require(cfg.path("model_path"), "train").read_bytes()
    parse_model(model)
    splits = _read_splits(cfg)
    conv_ids = splits["valid"] + splits["eval"]
    jobs = [(cfg.to_json(), cfg.base_dir, model, cid) for cid in conv_ids]
    for conv_id, files in zip(conv_ids, _parallel_map(_predict_job, jobs, cfg.jobs)):
        for listener, data, side in files:
            path = _prob_path(cfg, conv_id, listener)
            art.write(path, data)
            art.write(Path(str(path) + ".txt"), side)


def _load_probs(cfg: ExperimentConfig, conv_ids: Iterable[str]) -> dict[tuple[str, str], np.ndarray]:
    return {
        (cid, ch): read_track(_require(_prob_path(cfg, cid, ch), "predict")).frames[:, 0]
        for cid in conv_ids
        for ch in CHANNELS
    }


def _read_segments(cfg: ExperimentConfig) -> dict[str, list]:
    out: dict[str, list] = {}
    for line in _require(cfg.path("output_dir") / "segments.tsv", "dataset").read_text(encoding="utf-8").splitlines():
        if line.strip():
            cid, spk, s, e = line.split("\t")
            out.setdefault(cid, []).append(MonologueSegment(spk, float(s), float(e)))
    return out


def step_tune(cfg: ExperimentConfig, art: Artifacts) -> None:
    p = cfg.postprocess
    out = cfg.path("output_dir")
    if not p.tune:
        best = {"sigma": p.sigma, "cutoff_c": p.cutoff_c, "threshold": p.threshold, "mode": p.mode, "valid_f1": None}
        art.write(out / "postprocess.json", json.dumps(best, indent=2, sort_keys=True) + "\n")
        return
    splits = _read_splits(cfg)
    probs = _load_probs(cfg, splits["valid"])
    annotations = _read_annotations(cfg)
    segments = _read_segments(cfg)
    truth = {(cid, ch): [e.onset for e in annotations.get(cid, []) if e.channel == ch] for cid, ch in probs}
    spans = None
    if cfg.eval.monologuing_only:
        spans = {(cid, ch): listener_segments(segments.get(cid, []), ch) for cid, ch in probs}
    objective = ValidationObjective(probs, truth, spans, Margin(*p.tune_margin), cfg.features.shift)
    space = SearchSpace(tuple(p.sigma_bounds), tuple(p.cutoff_bounds), tuple(p.threshold_bounds), tuple(p.modes))
    result = tune(objective, space, p.budget, cfg.seeds.tune, p.method, p.resolution)
    b = result.best
    best = {
        "sigma": round(objective.snap_sigma(b.sigma), 6),
        "cutoff_c": b.cutoff_c,
        "threshold": b.threshold,
        "mode": b.mode,
        "valid_f1": b.objective,
    }
    art.write(out / "postprocess.json", json.dumps(best, indent=2, sort_keys=True) + "\n")
    art.write(out / "trials.tsv", trials_tsv(result.history))


def read_postprocess(path: Path) -> tuple[SmootherConfig, TriggerConfig]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return SmootherConfig(d["sigma"], d["cutoff_c"]), TriggerConfig(d["threshold"], d["mode"])


def step_eval(cfg: ExperimentConfig, art: Artifacts) -> None:
    out = cfg.path("output_dir")
    smoother, trig = read_postprocess(_require(out / "postprocess.json", "tune"))
    splits = _read_splits(cfg)
    convs = {c.id: c for c in _load_corpus(cfg)}
    eval_convs = [convs[cid] for cid in splits["eval"]]
    probs = _load_probs(cfg, splits["eval"])
    shift = cfg.features.shift
    triggers = {k: extract_triggers(causal_gaussian_smooth(v, smoother, shift), trig, shift) for k, v in probs.items()}
    art.write(out / "triggers.tsv", "".join(line + "\n" for line in trigger_lines(triggers)))
    annotations = _read_annotations(cfg)
    lexicon = _read_lexicon(cfg)
    segments = _read_segments(cfg)
    mono = cfg.eval.monologuing_only
    reports = [evaluate(eval_convs, triggers, annotations, lexicon, m, mono, segments) for m in cfg.margins()]
    art.write(out / "eval_report.tsv", report_tsv(reports))
    for mult in cfg.eval.baseline_multipliers:
        base = baseline_triggers(eval_convs, annotations, lexicon, mult, cfg.seeds.baseline, mono, segments)
        rows = [evaluate(eval_convs, base, annotations, lexicon, m, mono, segments) for m in cfg.margins()]
        art.write(out / f"baseline_x{mult}_report.tsv", report_tsv(rows))


STEPS = {
    "synth": step_synth,
    "features": step_features,
    "dataset": step_dataset,
    "train": step_train,
    "predict": step_predict,
    "tune": step_tune,
    "eval": step_eval,
}


def read_report(path: Path) -> list[EvalReport]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    out = []
    for line in lines:
        lo, hi, p, r, f, n_p, n_t, n_m = line.split("\t")
        out.append(EvalReport(float(p), float(r), float(f), int(n_p), int(n_t), int(n_m), Margin(float(lo), float(hi))))
    return out
