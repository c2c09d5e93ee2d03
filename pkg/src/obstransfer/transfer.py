"""Source training with a latent dynamics model, target training with the
model transferred and frozen, and the comparison baselines.

Every run draws from independent RNG streams spawned from its seed (network
init, latent-model init, exploration, replay sampling, environment resets,
evaluation, alignment pretraining), so modes that degenerate to plain DQN
produce bit-identical weight trajectories under a shared seed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from obstransfer.agent import AgentConfig, Batch, DQNAgent, EncoderQNet, ReplayBuffer, greedy, td_loss
from obstransfer.checkpoint import (CheckpointError, load_checkpoint, load_latent_model,
                                    save_checkpoint, save_latent_model)
from obstransfer.dynamics import LatentModel, StableEncoder, reward_loss, transition_loss
from obstransfer.envs import make_env
from obstransfer.envs.core import Env, to_network_batch
from obstransfer.nn import tensor as T
from obstransfer.nn.layers import Network
from obstransfer.nn.optim import Adam

BASELINES = ("transfer", "single", "auxiliary", "finetune", "time_aligned", "p_only", "r_only")
NEEDS_CKPT = {"transfer", "finetune", "time_aligned", "p_only", "r_only"}
METRIC_COLUMNS = ("step", "episode", "eval_return_mean", "eval_return_std", "loss_base", "loss_P",
                  "loss_R", "epsilon", "wallclock_s")

POLICY_FILE = "policy.ckpt.json"
MODEL_FILE = "latent_model.ckpt.json"
STABLE_FILE = "stable_encoder.ckpt.json"
METRICS_FILE = "metrics.csv"
TRAJ_DIR = "trajectories"


class RunError(RuntimeError):
    """A run violated one of its own contracts (frozen weights moved, etc.)."""


@dataclass
class RunSpec:
    env_name: str = "gridmaze"
    face: str = "vector"
    baseline: str = "single"
    agent: AgentConfig = field(default_factory=AgentConfig)
    total_steps: int = 20000
    eval_every: int = 1000
    eval_episodes: int = 20
    seed: int = 0
    in_ckpt: str | None = None
    out_dir: str | None = None
    map_path: str | None = None
    goal_mode: str = "resample"
    drop_features: tuple[int, ...] | None = None
    stack_depth: int | None = None
    trajectory_every: int = 10  # keep every 10th source episode (10%)
    align_epochs: int = 1000
    align_batch: int = 256
    record_wallclock: bool = False

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}; choose from {BASELINES}")
        if self.total_steps < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("total_steps, eval_every and eval_episodes must be positive")

    def make_env(self) -> Env:
        return make_env(self.env_name, self.face, self.map_path, self.goal_mode,
                        self.drop_features, self.stack_depth)


@dataclass
class RunResult:
    rows: list[dict]
    agent: DQNAgent
    model: LatentModel | None = None
    paths: dict[str, Path] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def auc(self) -> float:
        return learning_curve_auc(self.rows)


def learning_curve_auc(rows: list[dict]) -> float:
    """Sum of periodic evaluation returns."""
    return float(sum(r["eval_return_mean"] for r in rows))


# ------------------------------------------------------------------ plumbing


class Streams:
    names = ("init", "model", "explore", "replay", "env", "eval", "align")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(int(seed)).spawn(len(self.names))
        for name, ss in zip(self.names, children):
            setattr(self, name, np.random.default_rng(ss))


def array_digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def resolve_ckpt(in_ckpt: str | None, filename: str) -> Path:
    """``in_ckpt`` may be a source output directory or the file itself."""
    if not in_ckpt:
        raise CheckpointError("this baseline needs io.in_ckpt")
    p = Path(in_ckpt)
    if p.is_dir():
        p = p / filename
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return p


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in METRIC_COLUMNS])
    return buf.getvalue()


def write_metrics(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv_text(rows), encoding="utf-8")
    return path


def read_metrics(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: (None if v == "" else (int(v) if k in ("step", "episode") else float(v)))
                         for k, v in rec.items()})
    return rows


def evaluate(net: EncoderQNet, make: Callable[[], Env], seeds, check_unit_norm: bool = True
             ) -> np.ndarray:
    """Greedy returns of one episode per seed, all episodes stepped in lockstep."""
    envs = [make() for _ in seeds]
    spec = envs[0].observation_spec
    obs = [e.reset(int(s)) for e, s in zip(envs, seeds)]
    returns = np.zeros(len(envs))
    active = list(range(len(envs)))
    while active:
        batch = to_network_batch(spec, np.stack([obs[i] for i in active]))
        z = net.encoder.predict(batch)
        if check_unit_norm and not np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9):
            raise RunError("encoder output rows are not unit-norm")
        actions = greedy(net.head.predict(z))
        still = []
        for i, a in zip(active, actions):
            tr = envs[i].step(int(a))
            returns[i] += tr.reward
            obs[i] = tr.next_obs
            if not tr.done:
                still.append(i)
        active = still
    return returns


def optimal_returns(spec: RunSpec, seeds) -> np.ndarray:
    """BFS-optimal GridMaze return for the episodes started by ``seeds``."""
    env = spec.make_env()
    base = getattr(env, "env", env)
    out = []
    for s in seeds:
        env.reset(int(s))
        st = base.state
        out.append(base.optimal_return(st.agent, st.goal))
    return np.asarray(out)


# ------------------------------------------------------------------ the loop


@dataclass
class Regularizer:
    """How the latent model enters a run.

    ``train_model`` selects the source/auxiliary two-phase step; otherwise
    the model is frozen. ``use_P``/``use_R`` drop a term for the ablations.
    """

    model: LatentModel
    train_model: bool
    lam: float
    use_P: bool = True
    use_R: bool = True
    stable: StableEncoder | None = None
    opt: Adam | None = None


def _model_step(reg: Regularizer, batch: Batch) -> None:
    """Fit P/R to stable-encoder representations of both ends of the batch."""
    n = len(batch)
    both = reg.stable.network.predict(np.concatenate([batch.obs, batch.next_obs]))
    zs, zs_next = T.constant(both[:n]), T.constant(both[n:])
    loss = T.add(transition_loss(reg.model, zs, batch.actions, zs_next),
                 reward_loss(reg.model, zs, batch.actions, batch.rewards))
    T.backward(loss)
    reg.opt.step()


def _agent_step(agent: DQNAgent, batch: Batch, reg: Regularizer | None) -> dict:
    cfg = agent.cfg
    z = agent.net.encoder(batch.obs)
    base = td_loss(agent.net, batch, cfg.gamma, z)
    out = {"loss_base": base.item(), "loss_P": None, "loss_R": None}
    total = base
    if reg is not None:
        terms = []
        if reg.use_P:
            z_next = T.constant(agent.net.encoder.predict(batch.next_obs))
            lp = transition_loss(reg.model, z, batch.actions, z_next, frozen=True)
            out["loss_P"] = lp.item()
            terms.append(lp)
        if reg.use_R:
            lr = reward_loss(reg.model, z, batch.actions, batch.rewards, frozen=True)
            out["loss_R"] = lr.item()
            terms.append(lr)
        reg_sum = terms[0] if len(terms) == 1 else T.add(terms[0], terms[1])
        total = T.add(base, T.scale(reg_sum, reg.lam))
    agent.apply(total)
    if reg is not None and reg.train_model:
        reg.stable.refresh(agent.net.encoder, agent.updates)
    return out


def _mean_or_none(xs: list) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def train(spec: RunSpec, agent: DQNAgent, streams: Streams, reg: Regularizer | None = None,
          frozen: Callable[[], list[np.ndarray]] | None = None,
          on_episode: Callable[[int, int, list[int]], None] | None = None) -> list[dict]:
    """Interact for ``spec.total_steps`` steps, one update per step once the
    buffer holds a batch; evaluate every ``eval_every`` steps."""
    cfg = agent.cfg
    env = spec.make_env()
    buffer = ReplayBuffer(cfg.replay_capacity, env.observation_spec.network_input_shape())
    digest = array_digest(frozen()) if frozen else None
    t0 = time.perf_counter()

    episode = 0
    ep_seed = int(streams.env.integers(2**31))
    ep_actions: list[int] = []
    obs = agent.prep(env.reset(ep_seed))
    rows: list[dict] = []
    pending: dict[str, list] = {"loss_base": [], "loss_P": [], "loss_R": []}
    for t in range(spec.total_steps):
        a = agent.act(obs, t, streams.explore)
        tr = env.step(a)
        ep_actions.append(a)
        nxt = agent.prep(tr.next_obs)
        buffer.add(obs, a, tr.reward, nxt, tr.done and not env.truncated)
        obs = nxt
        if tr.done:
            if on_episode is not None:
                on_episode(episode, ep_seed, ep_actions)
            episode += 1
            ep_seed = int(streams.env.integers(2**31))
            ep_actions = []
            obs = agent.prep(env.reset(ep_seed))
        if len(buffer) >= cfg.batch_size:
            batch = buffer.sample(cfg.batch_size, streams.replay)
            if reg is not None and reg.train_model:
                _model_step(reg, batch)
            m = _agent_step(agent, batch, reg)
            for k in pending:
                pending[k].append(m[k])
        if (t + 1) % spec.eval_every == 0:
            if digest is not None and array_digest(frozen()) != digest:
                raise RunError(f"frozen weights changed by step {t + 1}")
            seeds = streams.eval.integers(2**31, size=spec.eval_episodes)
            rets = evaluate(agent.net, spec.make_env, seeds)
            rows.append({
                "step": t + 1, "episode": episode,
                "eval_return_mean": float(rets.mean()), "eval_return_std": float(rets.std()),
                "loss_base": _mean_or_none(pending["loss_base"]),
                "loss_P": _mean_or_none(pending["loss_P"]),
                "loss_R": _mean_or_none(pending["loss_R"]),
                "epsilon": cfg.epsilon(t + 1),
                "wallclock_s": time.perf_counter() - t0 if spec.record_wallclock else None,
            })
            pending = {k: [] for k in pending}
    return rows


def _new_agent(spec: RunSpec, streams: Streams, net: EncoderQNet | None = None) -> DQNAgent:
    env = spec.make_env()
    return DQNAgent(env.observation_spec, env.num_actions, spec.agent, streams.init, net)


def _policy_components(agent: DQNAgent) -> dict:
    return {"encoder": agent.net.encoder, "q_head": agent.net.head}


def _finish(spec: RunSpec, result: RunResult) -> RunResult:
    if spec.out_dir:
        out = Path(spec.out_dir)
        result.paths["metrics"] = write_metrics(out / METRICS_FILE, result.rows)
        net = result.agent.net
        result.paths["policy"] = save_checkpoint(out / POLICY_FILE, "policy",
                                                 _policy_components(result.agent),
                                                 spec.agent.encoding_dim, net.num_actions)
    return result


# ------------------------------------------------------------------ modes


def run_single(spec: RunSpec) -> RunResult:
    streams = Streams(spec.seed)
    agent = _new_agent(spec, streams)
    return _finish(spec, RunResult(train(spec, agent, streams), agent))


def _fresh_regularizer(spec: RunSpec, agent: DQNAgent, streams: Streams) -> Regularizer:
    model = LatentModel(spec.agent.encoding_dim, agent.net.num_actions, streams.model)
    return Regularizer(model, True, spec.agent.lam,
                       stable=StableEncoder.from_live(agent.net.encoder, spec.agent.stable_period),
                       opt=Adam(model.params, lr=spec.agent.lr))


def run_source(spec: RunSpec) -> RunResult:
    """Source-task learning: latent model fitted to stable-encoder targets,
    agent regularized by the model; also stores every ``trajectory_every``-th
    episode for the time-aligned baseline."""
    streams = Streams(spec.seed)
    agent = _new_agent(spec, streams)
    reg = _fresh_regularizer(spec, agent, streams)
    kept: list[tuple[int, int, list[int]]] = []

    def keep(ep: int, seed: int, actions: list[int]) -> None:
        if ep % spec.trajectory_every == 0:
            kept.append((ep, seed, list(actions)))

    rows = train(spec, agent, streams, reg, on_episode=keep)
    result = RunResult(rows, agent, reg.model, extras={"trajectories": kept,
                                                       "stable": reg.stable})
    _finish(spec, result)
    if spec.out_dir:
        out = Path(spec.out_dir)
        result.paths["latent_model"] = save_latent_model(out / MODEL_FILE, reg.model)
        result.paths["stable_encoder"] = save_checkpoint(
            out / STABLE_FILE, "network", {"encoder": reg.stable.network},
            spec.agent.encoding_dim, agent.net.num_actions)
        result.paths["trajectories"] = write_trajectories(out / TRAJ_DIR, spec, agent, kept)
    return result


def run_target_transfer(spec: RunSpec, use_P: bool = True, use_R: bool = True) -> RunResult:
    """Target-task learning with the source latent model loaded and frozen."""
    streams = Streams(spec.seed)
    agent = _new_agent(spec, streams)
    model = load_latent_model(resolve_ckpt(spec.in_ckpt, MODEL_FILE),
                              spec.agent.encoding_dim, agent.net.num_actions)
    reg = Regularizer(model, False, spec.agent.lam, use_P, use_R)
    rows = train(spec, agent, streams, reg, frozen=lambda: list(model.arrays().values()))
    return _finish(spec, RunResult(rows, agent, model))


def run_baseline_auxiliary(spec: RunSpec) -> RunResult:
    """Same two-phase step as the source run, latent model learned from scratch."""
    streams = Streams(spec.seed)
    agent = _new_agent(spec, streams)
    reg = _fresh_regularizer(spec, agent, streams)
    rows = train(spec, agent, streams, reg)
    return _finish(spec, RunResult(rows, agent, reg.model))


def run_baseline_finetune(spec: RunSpec) -> RunResult:
    """Source Q-head loaded and frozen, fresh encoder trained on the TD loss alone."""
    streams = Streams(spec.seed)
    env = spec.make_env()
    comps = load_checkpoint(resolve_ckpt(spec.in_ckpt, POLICY_FILE), "policy")
    head = comps.get("q_head")
    d, A = spec.agent.encoding_dim, env.num_actions
    if not isinstance(head, Network) or head.input_shape != (d,) or head.output_shape != (A,):
        raise CheckpointError(f"source Q-head does not map R^{d} to {A} action values")
    fresh = EncoderQNet.build(env.observation_spec, A, d, streams.init, spec.agent.hidden)
    net = EncoderQNet(fresh.encoder, head.freeze())
    agent = DQNAgent(env.observation_spec, A, spec.agent, streams.init, net)
    rows = train(spec, agent, streams, frozen=lambda: head.get_weights())
    return _finish(spec, RunResult(rows, agent))


def run_ablation(spec: RunSpec, variant: str) -> RunResult:
    """'p_only' transfers just the transition model, 'r_only' just the reward model."""
    if variant not in ("p_only", "r_only"):
        raise ValueError(f"unknown ablation {variant!r}")
    return run_target_transfer(spec, use_P=variant == "p_only", use_R=variant == "r_only")


# ------------------------------------------------------------------ time-aligned


def write_trajectories(directory: Path, spec: RunSpec, agent: DQNAgent,
                       kept: list[tuple[int, int, list[int]]]) -> Path:
    """Replay each kept episode and store ``step,action,rep...`` lines.

    Representations come from the final source encoder.
    """
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("traj_*.csv"):
        old.unlink()
    env = spec.make_env()
    for ep, seed, actions in kept:
        obs = [env.reset(seed)]
        for a in actions[:-1]:
            obs.append(env.step(a).next_obs)
        reps = agent.net.encoder.predict(to_network_batch(env.observation_spec, np.stack(obs)))
        lines = [",".join([str(i), str(a)] + [repr(float(x)) for x in rep])
                 for i, (a, rep) in enumerate(zip(actions, reps))]
        (directory / f"traj_{ep:05d}_seed{seed}.csv").write_text("\n".join(lines) + "\n",
                                                                  encoding="utf-8")
    return directory


def read_trajectories(directory: str | Path) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """-> list of (seed, actions, reps)."""
    out = []
    for path in sorted(Path(directory).glob("traj_*_seed*.csv")):
        seed = int(path.stem.rsplit("seed", 1)[1])
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if not np.array_equal(data[:, 0], np.arange(len(data))):
            raise ValueError(f"{path}: steps are not 0..n-1")
        out.append((seed, data[:, 1].astype(np.int64), data[:, 2:]))
    return out


def aligned_pairs(spec: RunSpec, trajectories) -> tuple[np.ndarray, np.ndarray]:
    """Replay stored action sequences in the target face with the matched
    seeds; pair target observation t with stored source representation t."""
    env = spec.make_env()
    xs, ys = [], []
    for seed, actions, reps in trajectories:
        o = env.reset(seed)
        for i, a in enumerate(actions):
            xs.append(o)
            ys.append(reps[i])
            if i + 1 < len(actions):
                o = env.step(int(a)).next_obs
    if not xs:
        raise ValueError("no stored trajectories to align")
    return to_network_batch(env.observation_spec, np.stack(xs)), np.stack(ys)


def pretrain_alignment(encoder: Network, x: np.ndarray, y: np.ndarray, epochs: int, batch: int,
                       lr: float, rng: np.random.Generator) -> list[float]:
    """Minimize mean ||encoder(x) - y||^2; returns the per-epoch mean loss."""
    opt = Adam(encoder.params, lr=lr)
    n = len(x)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss = T.mean_sq_row_norm(encoder(x[idx]), T.constant(y[idx]))
            T.backward(loss)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return history


def run_baseline_time_aligned(spec: RunSpec) -> RunResult:
    streams = Streams(spec.seed)
    p = Path(spec.in_ckpt) if spec.in_ckpt else None
    if p is None:
        raise CheckpointError("time-aligned baseline needs io.in_ckpt")
    traj_dir = p / TRAJ_DIR if (p / TRAJ_DIR).is_dir() else p
    trajectories = read_trajectories(traj_dir)
    if not trajectories:
        raise CheckpointError(f"no stored trajectories under {traj_dir}")
    x, y = aligned_pairs(spec, trajectories)
    if y.shape[1] != spec.agent.encoding_dim:
        raise CheckpointError(f"stored representations have dim {y.shape[1]}, "
                              f"agent expects {spec.agent.encoding_dim}")
    agent = _new_agent(spec, streams)
    history = pretrain_alignment(agent.net.encoder, x, y, spec.align_epochs, spec.align_batch,
                                 spec.agent.lr, streams.align)
    # phase 2: plain DQN from the aligned encoder, fresh optimizer moments
    agent.net.refresh_target()
    agent.opt = Adam(agent.net.params, lr=spec.agent.lr)
    rows = train(spec, agent, streams)
    return _finish(spec, RunResult(rows, agent, extras={"align_history": history,
                                                      "pairs": len(x)}))


RUNNERS = {
    "single": run_single,
    "transfer": run_target_transfer,
    "auxiliary": run_baseline_auxiliary,
    "finetune": run_baseline_finetune,
    "time_aligned": run_baseline_time_aligned,
    "p_only": lambda s: run_ablation(s, "p_only"),
    "r_only": lambda s: run_ablation(s, "r_only"),
}


def run(spec: RunSpec) -> RunResult:
    return RUNNERS[spec.baseline](spec)
