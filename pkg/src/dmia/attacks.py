"""Membership scoring and the attack game.

Score orientation is fixed throughout: higher score means "more likely a
member". The white-box score probes the target's noise-prediction error at
a chosen step t: k noises are drawn, the sample is noised to step t with
each, and the score is minus the mean squared prediction error (k = 1
reproduces the single-draw thresholding attack literally; averaging only
reduces the Monte-Carlo variance of the score). The noises for sample i
come from a stream derived from (attack seed, i) alone, so scores never
depend on evaluation order, subsetting, or what other components drew.

Black-box scoring generates a reference set from the target once and scores
a sample by minus the squared distance to its nearest generated neighbor
(exact linear scan). The GAN white-box score is the raw discriminator
output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffusion import SamplerSpec, sample as ddim_sample
from .errors import ContractViolation
from .metrics import aucroc
from .models import DenoiserNet, GanPair
from .numerics import RngStream, Tensor, no_grad
from .schedules import NoiseSchedule, t_for_alpha_bar

log = logging.getLogger(__name__)

DEFAULT_K = 8
DEFAULT_ALPHA_BAR_TARGET = 0.7
_SCORE_CHUNK = 4096  # rows per forward pass in batched scoring


@dataclass(frozen=True)
class MembershipScoreSet:
    """Paired member/non-member scores plus provenance for the CSV trail."""

    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    member_ids: np.ndarray
    nonmember_ids: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.member_scores, self.nonmember_scores):
            if np.isnan(arr).any():
                raise ContractViolation("scores must not contain NaN")


@dataclass(frozen=True)
class AttackLabels:
    labels: np.ndarray
    threshold: float


@dataclass(frozen=True)
class AttackSpec:
    """What to run in the game: attack kind, step rule, and draw counts.

    ``t = 0`` means "derive t from the schedule": the step whose signal
    product is closest to 0.7 (clamped to >= 1).
    """

    kind: str  # whitebox | blackbox | logan
    seed: int
    t: int = 0
    k: int = DEFAULT_K
    gen_count: int = 2000
    sampler: SamplerSpec | None = None

    def resolve_t(self, schedule: NoiseSchedule) -> int:
        if self.t > 0:
            return self.t
        return max(1, t_for_alpha_bar(schedule, DEFAULT_ALPHA_BAR_TARGET))


def _sample_stream(seed: int, index: int) -> RngStream:
    return RngStream(seed, 0).split("whitebox-sample", int(index))


def whitebox_loss_score(net: DenoiserNet, x: np.ndarray, t: int, k: int, rng: RngStream, schedule: NoiseSchedule) -> float:
    """Minus the mean squared noise-prediction error over k pinned noises."""
    if not 1 <= t <= schedule.T:
        raise ContractViolation(f"t must lie in 1..{schedule.T}, got {t}")
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    x = np.asarray(x, dtype=np.float32)
    eps = rng.normal((k, *x.shape))
    abar = schedule.alpha_bar(t)
    x_t = np.float32(np.sqrt(abar)) * x[None] + np.float32(np.sqrt(1 - abar)) * eps
    with no_grad():
        pred = net.predict_eps(Tensor(x_t), t).data
    err = (pred.astype(np.float64) - eps.astype(np.float64)).reshape(k, -1)
    return float(-np.mean(np.sum(err * err, axis=1)))


def whitebox_score_matrix(
    net: DenoiserNet,
    schedule: NoiseSchedule,
    xs: np.ndarray,
    indices: Sequence[int],
    ts: Sequence[int],
    k: int,
    seed: int,
    batch_rows: int = _SCORE_CHUNK,
) -> np.ndarray:
    """Scores for every (sample, t) pair, shape (len(xs), len(ts)).

    Equivalent to calling whitebox_loss_score per sample with its pinned
    stream (reset for each t, so all steps see the same k noises), but
    batched across samples for throughput.
    """
    xs = np.asarray(xs, dtype=np.float32)
    n = len(xs)
    if n != len(indices):
        raise ContractViolation("one dataset index per sample is required")
    eps = np.stack([_sample_stream(seed, idx).normal((k, *xs.shape[1:])) for idx in indices])  # (n, k, ...)
    flat_eps = eps.reshape(n * k, *xs.shape[1:])
    tiled_x = np.repeat(xs, k, axis=0)
    out = np.empty((n, len(ts)), dtype=np.float64)
    rows_per = max(1, (batch_rows // max(1, k)) * k)
    for j, t in enumerate(ts):
        if not 1 <= t <= schedule.T:
            raise ContractViolation(f"t must lie in 1..{schedule.T}, got {t}")
        abar = schedule.alpha_bar(t)
        x_t = np.float32(np.sqrt(abar)) * tiled_x + np.float32(np.sqrt(1 - abar)) * flat_eps
        errs = np.empty(n * k, dtype=np.float64)
        with no_grad():
            for lo in range(0, n * k, rows_per):
                hi = min(lo + rows_per, n * k)
                pred = net.predict_eps(Tensor(x_t[lo:hi]), t).data
                diff = (pred.astype(np.float64) - flat_eps[lo:hi].astype(np.float64)).reshape(hi - lo, -1)
                errs[lo:hi] = np.sum(diff * diff, axis=1)
        out[:, j] = -errs.reshape(n, k).mean(axis=1)
    return out


def threshold_labels(scores: Sequence[float], c: float) -> AttackLabels:
    """Label 1 (member) iff the raw loss beats the threshold: score >= -c."""
    arr = np.asarray(scores, dtype=np.float64)
    return AttackLabels((arr >= -c).astype(np.int64), c)


def sweep_t(
    net: DenoiserNet,
    schedule: NoiseSchedule,
    members: np.ndarray,
    nonmembers: np.ndarray,
    stride: int,
    k: int,
    seed: int,
    member_indices: Sequence[int] | None = None,
    nonmember_indices: Sequence[int] | None = None,
) -> list[tuple[int, float]]:
    """(t, AUC) at every ``stride`` steps; per-sample noise pinned across t."""
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    ts = list(range(stride, schedule.T + 1, stride))
    m_idx = list(member_indices) if member_indices is not None else list(range(len(members)))
    nm_idx = (
        list(nonmember_indices)
        if nonmember_indices is not None
        else list(range(len(members), len(members) + len(nonmembers)))
    )
    m_scores = whitebox_score_matrix(net, schedule, members, m_idx, ts, k, seed)
    nm_scores = whitebox_score_matrix(net, schedule, nonmembers, nm_idx, ts, k, seed)
    return [(t, aucroc((m_scores[:, j], nm_scores[:, j]))) for j, t in enumerate(ts)]


def average_loss_score(net: DenoiserNet, x: np.ndarray, stride: int, k: int, rng: RngStream, schedule: NoiseSchedule) -> float:
    """Mean of the white-box score over the sweep grid (same noises per t)."""
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    ts = range(stride, schedule.T + 1, stride)
    return float(np.mean([whitebox_loss_score(net, x, t, k, rng.copy(), schedule) for t in ts]))


def blackbox_distance_score(generated: np.ndarray, x: np.ndarray) -> float:
    """Minus the squared distance to the nearest generated sample (exact scan)."""
    gen = np.asarray(generated, dtype=np.float64)
    if gen.ndim < 2 or len(gen) == 0:
        raise ContractViolation("generated set must be a non-empty batch")
    flat = gen.reshape(len(gen), -1)
    target = np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.shape[1] != target.size:
        raise ContractViolation(f"sample has {target.size} values, generated have {flat.shape[1]}")
    diff = flat - target[None, :]
    return float(-np.min(np.sum(diff * diff, axis=1)))


def logan_score(pair: GanPair, x: np.ndarray) -> float:
    """Raw discriminator output; higher = judged more real = more member-like."""
    arr = np.asarray(x, dtype=np.float32)
    with no_grad():
        return float(pair.discriminate(Tensor(arr[None])).data[0])


def _validate_split(split) -> None:
    members = set(np.asarray(split.member_idx).tolist())
    pool = set(np.asarray(split.nonmember_idx).tolist())
    if members & pool:
        raise ContractViolation("member set and non-member pool overlap; refusing to score")
    if len(split.eval_member_idx) != len(split.eval_nonmember_idx):
        raise ContractViolation("evaluation sets must be the same size")


def generate_reference_set(target, spec: AttackSpec) -> np.ndarray:
    """The generated batch a black-box adversary works from."""
    gen_rng = RngStream(spec.seed, 0).split("blackbox-generate")
    if isinstance(target, GanPair):
        z = Tensor(gen_rng.normal((spec.gen_count, target.latent_dim)))
        with no_grad():
            return target.generate(z).data
    if spec.sampler is None:
        raise ContractViolation("black-box attack on a diffusion target needs a sampler spec")
    return ddim_sample(target, spec.sampler, spec.gen_count, gen_rng).data


def run_attack_game(
    target,
    split,
    spec: AttackSpec,
    schedule: NoiseSchedule | None = None,
    generated: np.ndarray | None = None,
) -> MembershipScoreSet:
    """Score every evaluation sample against the target model.

    Returns the labeled score set; the caller feeds it to the metrics. The
    per-sample RNG streams are derived from (seed, dataset index), so the
    same sample gets the same score in any evaluation subset or order.
    ``generated`` lets black-box callers reuse an already generated set
    (it must have come from the same spec, e.g. via generate_reference_set).
    """
    _validate_split(split)
    ev_m = split.eval_members
    ev_nm = split.eval_nonmembers
    prov = {"attack": spec.kind, "t": 0, "k": 0, "seed": spec.seed}

    if spec.kind == "whitebox":
        if not isinstance(target, DenoiserNet):
            raise ContractViolation("whitebox loss attack expects a diffusion target; use 'logan' for GANs")
        if schedule is None:
            raise ContractViolation("whitebox attack needs the target's schedule")
        t = spec.resolve_t(schedule)
        prov.update(t=t, k=spec.k)
        m = whitebox_score_matrix(target, schedule, ev_m, split.eval_member_idx, [t], spec.k, spec.seed)[:, 0]
        nm = whitebox_score_matrix(target, schedule, ev_nm, split.eval_nonmember_idx, [t], spec.k, spec.seed)[:, 0]
    elif spec.kind == "logan":
        if not isinstance(target, GanPair):
            raise ContractViolation("logan attack expects a GAN target")
        with no_grad():
            m = target.discriminate(Tensor(np.asarray(ev_m, dtype=np.float32))).data.astype(np.float64)
            nm = target.discriminate(Tensor(np.asarray(ev_nm, dtype=np.float32))).data.astype(np.float64)
    elif spec.kind == "blackbox":
        if generated is None:
            generated = generate_reference_set(target, spec)
        prov.update(gen_count=len(generated))
        m = np.asarray([blackbox_distance_score(generated, x) for x in ev_m])
        nm = np.asarray([blackbox_distance_score(generated, x) for x in ev_nm])
    else:
        raise ContractViolation(f"unknown attack kind '{spec.kind}'")

    return MembershipScoreSet(
        member_scores=np.asarray(m, dtype=np.float64),
        nonmember_scores=np.asarray(nm, dtype=np.float64),
        member_ids=np.asarray(split.eval_member_idx),
        nonmember_ids=np.asarray(split.eval_nonmember_idx),
        provenance=prov,
    )


# ---- CSV interchange -------------------------------------------------------------


def score_set_to_csv(scores: MembershipScoreSet, run_id: str) -> str:
    """Serialize with a config-hash comment line and the fixed column set."""
    p = scores.provenance
    lines = [f"# config_hash={run_id}", "sample_id,is_member,score,attack,t,k,seed"]
    for ids, arr, flag in ((scores.member_ids, scores.member_scores, 1), (scores.nonmember_ids, scores.nonmember_scores, 0)):
        for sid, sc in zip(ids, arr):
            lines.append(f"{sid},{flag},{sc:.17g},{p.get('attack', '?')},{p.get('t', 0)},{p.get('k', 0)},{p.get('seed', 0)}")
    return "\n".join(lines) + "\n"


def score_set_from_csv(text: str) -> tuple[MembershipScoreSet, str]:
    """Inverse of score_set_to_csv; returns (score set, config hash)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# config_hash="):
        raise ContractViolation("scores CSV must start with a config_hash comment")
    run_id = lines[0].split("=", 1)[1]
    header = lines[1]
    if header != "sample_id,is_member,score,attack,t,k,seed":
        raise ContractViolation(f"unexpected scores CSV header: {header}")
    m_ids, m_sc, nm_ids, nm_sc = [], [], [], []
    attack, t_val, k_val, seed = "?", 0, 0, 0
    for ln in lines[2:]:
        sid, flag, sc, attack, t_val, k_val, seed = ln.split(",")
        if int(flag) == 1:
            m_ids.append(int(sid))
            m_sc.append(float(sc))
        else:
            nm_ids.append(int(sid))
            nm_sc.append(float(sc))
    prov = {"attack": attack, "t": int(t_val), "k": int(k_val), "seed": int(seed)}
    return (
        MembershipScoreSet(np.asarray(m_sc), np.asarray(nm_sc), np.asarray(m_ids), np.asarray(nm_ids), prov),
        run_id,
    )
