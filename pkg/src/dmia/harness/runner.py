"""Experiment orchestration behind the CLI verbs.

Each config owns an output directory ``<out>/<config-hash>/`` with
``checkpoints/``, ``logs/``, ``scores/``, and ``reports/``. Training is
skipped when the final checkpoint for a config is already on disk, which is
what lets sweeps that only vary the attack reuse one trained model. Every
CSV starts with a ``# config_hash=`` line; ``report`` refuses to combine
files whose hashes disagree.
"""

from __future__ import annotations

import concurrent.futures
import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import AttackSpec, generate_reference_set, run_attack_game, score_set_from_csv, score_set_to_csv
from ..data import load_dataset, make_split
from ..diffusion import SamplerSpec
from ..errors import ConfigError, ContractViolation
from ..metrics import asr, aucroc, frechet_distance, image_features, roc_curve, tpr_at_fpr
from ..models import DenoiserNet, GanPair
from ..schedules import make_schedule
from ..training import resolve_epochs, train_diffusion, train_gan
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash, serialize_config

log = logging.getLogger(__name__)

SWEEP_AXES = ("t", "train_size", "epochs", "sampling_steps", "sampling_variance")
FID_REAL_CAP = 2048


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("DMIA_THREADS", "1")))
    except ValueError:
        return 1


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / config_hash(cfg)


def _ensure_layout(base: Path) -> None:
    for sub in ("checkpoints", "logs", "scores", "reports"):
        (base / sub).mkdir(parents=True, exist_ok=True)


def _train_fingerprint(cfg: ExperimentConfig) -> ExperimentConfig:
    """Project out the attack-only fields; what remains determines the model."""
    return replace(cfg, attack="whitebox", attack_t=0, attack_k=8, gen_count=2000, sample_steps=20, variance="eta0", eval_count=200, out="")


def model_dir(cfg: ExperimentConfig) -> Path:
    """Run dir of the training fingerprint; shared by all attacks on one model."""
    return Path(cfg.out) / config_hash(_train_fingerprint(cfg))


def _split_for(cfg: ExperimentConfig):
    data = load_dataset(cfg.dataset)
    return make_split(data, cfg.train_size, cfg.eval_count, cfg.seed_data)


def _checkpoint_path(base: Path, epoch: int) -> Path:
    return base / "checkpoints" / f"epoch_{epoch:06d}.dmia"


def final_checkpoint(cfg: ExperimentConfig) -> Path | None:
    base = model_dir(cfg)
    epochs = resolve_epochs(cfg)
    path = _checkpoint_path(base, epochs)
    return path if path.exists() else None


def cmd_train(cfg: ExperimentConfig, checkpoint_at: tuple[int, ...] | None = None, force: bool = False) -> Path:
    """Train (or reuse) the model for this config; returns its model dir."""
    cfg.validate()
    base = model_dir(cfg)
    _ensure_layout(base)
    (base / "config.resolved").write_text(serialize_config(_train_fingerprint(cfg)))
    from ..training import checkpoint_epochs as _marks

    wanted = [_checkpoint_path(base, e) for e in _marks(resolve_epochs(cfg), checkpoint_at)]
    if not force and all(p.exists() for p in wanted):
        log.info("reusing trained model at %s", base)
        return base
    split = _split_for(cfg)
    schedule = make_schedule(cfg.schedule, cfg.T)
    run_id = config_hash(_train_fingerprint(cfg))

    def sink(epoch, model):
        save_checkpoint(_checkpoint_path(base, epoch), model, schedule, epoch, run_id)

    if cfg.model == "ddim":
        _, tlog = train_diffusion(cfg, split, on_checkpoint=sink, checkpoint_at=checkpoint_at)
    else:
        _, tlog = train_gan(cfg, split, on_checkpoint=sink, checkpoint_at=checkpoint_at)
    log_text = f"# config_hash={run_id}\n" + tlog.to_csv()
    (base / "logs" / "train_log.csv").write_text(log_text)
    return base


def _load_target(cfg: ExperimentConfig, epoch: int | None = None):
    epochs = resolve_epochs(cfg)
    path = _checkpoint_path(model_dir(cfg), epoch if epoch is not None else epochs)
    if not path.exists():
        raise ConfigError(f"no checkpoint at {path}; run 'dmia train' first")
    return load_checkpoint(path)


def _sampler_spec(cfg: ExperimentConfig, schedule) -> SamplerSpec:
    mode, eta = cfg.variance_params()
    return SamplerSpec.uniform(schedule, cfg.sample_steps, mode, eta)


def _attack_spec(cfg: ExperimentConfig, schedule, model) -> AttackSpec:
    sampler = None
    if cfg.attack == "blackbox" and isinstance(model, DenoiserNet):
        sampler = _sampler_spec(cfg, schedule)
    return AttackSpec(
        kind=cfg.attack,
        seed=cfg.seed_attack,
        t=cfg.attack_t,
        k=cfg.attack_k,
        gen_count=cfg.gen_count,
        sampler=sampler,
    )


def _fid_features(data_shape: tuple[int, ...]):
    if len(data_shape) == 3:
        return image_features
    return lambda x: np.asarray(x, dtype=np.float64).reshape(len(x), -1)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def cmd_attack(cfg: ExperimentConfig, epoch: int | None = None, tag: str = "") -> tuple[Path, Path]:
    """Run the configured attack against the trained model; write scores + metrics."""
    cfg.validate()
    model, schedule, meta = _load_target(cfg, epoch)
    split = _split_for(cfg)
    spec = _attack_spec(cfg, schedule, model)
    generated = None
    fid = ""
    if cfg.attack == "blackbox":
        generated = generate_reference_set(model, spec)
        feats = _fid_features(split.data.shape[1:])
        real = split.data[: min(len(split.data), FID_REAL_CAP)]
        fid = _fmt(frechet_distance(feats(real), feats(generated)))
    scores = run_attack_game(model, split, spec, schedule, generated=generated)

    base = run_dir(cfg)
    _ensure_layout(base)
    (base / "config.resolved").write_text(serialize_config(replace(cfg, out="")))
    run_id = config_hash(cfg)
    suffix = tag or (f"_e{epoch:06d}" if epoch is not None else "")
    scores_path = base / "scores" / f"{cfg.attack}{suffix}.csv"
    scores_path.write_text(score_set_to_csv(scores, run_id))
    metrics_path = base / "reports" / f"metrics_{cfg.attack}{suffix}.csv"
    metrics_path.write_text(
        f"# config_hash={run_id}\n"
        "run_id,attack,aucroc,asr,tpr_at_1pct_fpr,fid_proxy\n"
        f"{run_id},{cfg.attack},{_fmt(aucroc(scores))},{_fmt(asr(scores))},{_fmt(tpr_at_fpr(scores, 0.01))},{fid}\n"
    )
    return scores_path, metrics_path


def cmd_sample(cfg: ExperimentConfig, n: int, epoch: int | None = None) -> Path:
    """Generate n samples from the trained model and save them as .npy."""
    cfg.validate()
    model, schedule, _ = _load_target(cfg, epoch)
    from ..numerics import RngStream, Tensor, no_grad
    from ..diffusion import sample as ddim_sample

    rng = RngStream(cfg.seed_attack, 0).split("cli-sample")
    if isinstance(model, DenoiserNet):
        out = ddim_sample(model, _sampler_spec(cfg, schedule), n, rng).data
    else:
        with no_grad():
            out = model.generate(Tensor(rng.normal((n, model.latent_dim)))).data
    base = run_dir(cfg)
    _ensure_layout(base)
    path = base / "reports" / "samples.npy"
    np.save(path, out)
    return path


def _metric_row(cfg_cell: ExperimentConfig, epoch: int | None = None, tag: str = "") -> dict:
    _, metrics_path = cmd_attack(cfg_cell, epoch=epoch, tag=tag)
    header, row = [ln for ln in metrics_path.read_text().splitlines() if ln and not ln.startswith("#")]
    values = dict(zip(header.split(","), row.split(",")))
    return values


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: list) -> Path:
    """One attack evaluation per axis value; single combined report CSV."""
    cfg.validate()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got '{axis}'")
    if axis in ("sampling_steps", "sampling_variance") and cfg.attack != "blackbox":
        raise ConfigError(f"axis '{axis}' varies the sampler; it requires attack = blackbox")
    if axis == "t" and cfg.attack != "whitebox":
        raise ConfigError("axis 't' requires attack = whitebox")
    if cfg.model != "ddim" and axis in ("t", "sampling_steps", "sampling_variance"):
        raise ConfigError(f"axis '{axis}' only applies to ddim targets")

    rows = []
    if axis == "train_size":
        sizes = [int(v) for v in values]
        if cfg.ref_size <= 0 or cfg.ref_epochs <= 0:
            raise ConfigError("train_size sweeps need the (ref_size, ref_epochs) pair to align epochs")
        cells = [replace(cfg, train_size=v, epochs=0) for v in sizes]
        workers = min(max_workers(), len(cells))
        if workers > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(cmd_train, cells))
        else:
            for cell in cells:
                cmd_train(cell)
        for v, cell in zip(sizes, cells):
            rows.append((v, _metric_row(cell)))
    elif axis == "epochs":
        marks = sorted(int(v) for v in values)
        total = resolve_epochs(cfg)
        if marks and marks[-1] > total:
            raise ConfigError(f"checkpoint epoch {marks[-1]} exceeds the training budget {total}")
        cmd_train(cfg, checkpoint_at=tuple(marks))
        for e in marks:
            rows.append((e, _metric_row(cfg, epoch=e)))
    else:
        cmd_train(cfg)
        for v in values:
            if axis == "t":
                cell = replace(cfg, attack_t=int(v))
                tag = f"_t{int(v):06d}"
            elif axis == "sampling_steps":
                cell = replace(cfg, sample_steps=int(v))
                tag = f"_s{int(v):06d}"
            else:
                cell = replace(cfg, variance=str(v))
                tag = "_v" + str(v).replace(":", "-")
            rows.append((v, _metric_row(cell, tag=tag)))

    base = run_dir(cfg)
    _ensure_layout(base)
    run_id = config_hash(cfg)
    lines = [f"# config_hash={run_id}", f"{axis},attack,aucroc,asr,tpr_at_1pct_fpr,fid_proxy"]
    for v, m in rows:
        lines.append(f"{v},{m['attack']},{m['aucroc']},{m['asr']},{m['tpr_at_1pct_fpr']},{m['fid_proxy']}")
    path = base / "reports" / f"sweep_{axis}.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def _read_hash_line(path: Path) -> str:
    first = path.read_text().splitlines()[0]
    if not first.startswith("# config_hash="):
        raise ConfigError(f"{path} lacks the config_hash comment line")
    return first.split("=", 1)[1]


def cmd_report(run_path: str | Path) -> list[Path]:
    """Convert score CSVs into ROC-point files and sweeps into plot data."""
    base = Path(run_path)
    scores_dir = base / "scores"
    reports_dir = base / "reports"
    score_files = sorted(scores_dir.glob("*.csv")) if scores_dir.exists() else []
    sweep_files = sorted(reports_dir.glob("sweep_*.csv")) if reports_dir.exists() else []
    if not score_files and not sweep_files:
        raise ConfigError(
            f"nothing to report under {base}: expected scores/*.csv (run 'dmia attack') "
            "or reports/sweep_*.csv (run 'dmia sweep')"
        )
    hashes = {p: _read_hash_line(p) for p in list(score_files) + list(sweep_files)}
    if len(set(hashes.values())) > 1:
        detail = ", ".join(f"{p.name}={h}" for p, h in hashes.items())
        raise ConfigError(f"refusing to mix artifacts from different configs: {detail}")
    reports_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in score_files:
        scores, run_id = score_set_from_csv(path.read_text())
        curve = roc_curve(scores)
        out = reports_dir / f"roc_{path.stem}.csv"
        lines = [f"# config_hash={run_id}", "fpr,tpr"]
        lines += [f"{_fmt(f)},{_fmt(t)}" for f, t in curve.points]
        out.write_text("\n".join(lines) + "\n")
        written.append(out)
    for path in sweep_files:
        lines = path.read_text().splitlines()
        axis = lines[1].split(",")[0]
        out = reports_dir / f"plot_{axis}_aucroc.csv"
        head = lines[:2]
        body = [",".join(ln.split(",")[i] for i in (0, 2)) for ln in lines[2:]]
        out.write_text("\n".join([head[0], f"{axis},aucroc"] + body) + "\n")
        written.append(out)
    return written


def selftest() -> int:
    """Fast offline checks of the numeric core; returns a process exit code."""
    from ..numerics import RngStream, Tensor, check_gradients
    from ..schedules import cosine_schedule, linear_schedule, t_for_alpha_bar

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    cos_t = t_for_alpha_bar(cosine_schedule(1000), 0.7)
    check("cosine schedule anchor (t for signal 0.7 in [330, 370])", 330 <= cos_t <= 370)
    lin_t = t_for_alpha_bar(linear_schedule(1000), 0.7)
    check("linear schedule anchor (t for signal 0.7 in [180, 220])", 180 <= lin_t <= 220)

    rng = np.random.default_rng(0)
    m, nm = rng.normal(size=30), rng.normal(size=25)
    wins = (m[:, None] > nm[None, :]).mean()
    check("aucroc equals pair statistic", abs(aucroc((m, nm)) - wins) < 1e-12)

    from ..numerics import tanh as _tanh

    p = {"w": Tensor(rng.normal(size=(4, 3)), requires_grad=True)}
    x_fix = rng.normal(size=(5, 4))

    def fwd(params):
        h = _tanh(Tensor(x_fix, dtype=params["w"].dtype) @ params["w"])
        return (h * h).sum()

    check("autodiff matches finite differences", check_gradients(fwd, p, n_probes=30) < 1e-3)

    a = RngStream(1, 2, 3).normal((8,))
    b = RngStream(1, 2, 3).normal((8,))
    check("rng streams reproducible", bool(np.array_equal(a, b)))
    return 1 if failures else 0
