"""DQN training over the dataset-as-MDP.

Each step draws the current state from a per-episode permutation of the
training set and an independent uniformly random next state, acts
epsilon-greedily, gets +1/-1 for a correct/incorrect label, and takes one Adam
step on the squared TD error.  No replay buffer and no target network: the
Bellman target is computed with the live network and treated as a constant.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.preprocess import FlowDataset
from .errors import ConfigurationError, DivergenceError
from .network import AdamState, ForwardTrace, QNetwork, adam_step, forward, weight_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.001
    episodes: int = 10
    learning_rate: float = 1e-4
    explore_start: float = 1.0
    explore_end: float = 0.05
    explore_fraction: float = 0.10
    reward_correct: float = 1.0
    reward_incorrect: float = -1.0
    runs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.episodes < 1 or self.runs < 1:
            raise ConfigurationError("episodes and runs must be >= 1")
        if not 0.0 <= self.explore_end <= self.explore_start <= 1.0:
            raise ConfigurationError("need 0 <= explore_end <= explore_start <= 1")


def exploration_rate(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear decay from explore_start to explore_end over the first
    ``explore_fraction`` of all steps, flat afterwards."""
    horizon = cfg.explore_fraction * total_steps
    if step >= horizon:
        return cfg.explore_end
    return cfg.explore_start + (cfg.explore_end - cfg.explore_start) * (step / horizon)


class MdpEnvironment:
    def __init__(self, dataset: FlowDataset, rng: np.random.Generator):
        if len(dataset) == 0:
            raise ConfigurationError("empty training set")
        self.X = dataset.features
        self.y = dataset.labels
        self.rng = rng
        self.cursor = 0
        self.order = rng.permutation(len(self.y))

    @property
    def episode_length(self) -> int:
        return len(self.y)

    def reset(self):
        self.order = self.rng.permutation(len(self.y))
        self.cursor = 0

    def env_step(self):
        """(s_t, y_t, s_next); wraps into a fresh permutation after a full pass."""
        if self.cursor >= len(self.order):
            self.reset()
        i = self.order[self.cursor]
        self.cursor += 1
        j = self.rng.integers(len(self.y))
        return self.X[i], int(self.y[i]), self.X[j]


def bellman_target(r_t: float, next_trace: ForwardTrace, gamma: float) -> float:
    return float(r_t + gamma * np.max(next_trace.qvalues))


@dataclass
class TrainReport:
    run_index: int
    seed: int
    train_accuracy: list = field(default_factory=list)  # per episode, actions taken incl. exploration
    test_accuracy: float | None = None
    mean_td_loss: list = field(default_factory=list)
    agent: QNetwork | None = None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("agent")
        return d


def accuracy(net: QNetwork, ds: FlowDataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return float((net.predict(ds.features) == ds.labels).mean())


def _streams(run_seed: int):
    """Independent substreams: weight init, environment draws, action choices."""
    return np.random.SeedSequence(run_seed).spawn(3)


def initial_network(run_seed: int) -> QNetwork:
    """The untrained network a run with this seed starts from."""
    return QNetwork.initialize(int(_streams(run_seed)[0].generate_state(1)[0]))


def train_run(
    train_set: FlowDataset,
    cfg: TrainConfig = TrainConfig(),
    run_seed: int = 0,
    test_set: FlowDataset | None = None,
    run_index: int = 0,
    on_step=None,
) -> TrainReport:
    """One independent training run.

    ``on_step(step, state, action, reward, target)`` is called after each
    update when given.
    """
    init_ss, env_ss, act_ss = _streams(run_seed)
    net = QNetwork.initialize(int(init_ss.generate_state(1)[0]))
    opt = AdamState.for_network(net, learning_rate=cfg.learning_rate)
    env = MdpEnvironment(train_set, np.random.default_rng(env_ss))
    act_rng = np.random.default_rng(act_ss)
    total = cfg.episodes * env.episode_length
    report = TrainReport(run_index, run_seed)
    step = 0
    for ep in range(cfg.episodes):
        env.reset()
        correct = 0
        loss_sum = 0.0
        for _ in range(env.episode_length):
            s, y, s_next = env.env_step()
            tr = forward(net, s)
            if act_rng.random() < exploration_rate(step, total, cfg):
                a = int(act_rng.integers(2))
            else:
                a = int(np.argmax(tr.qvalues))
            r = cfg.reward_correct if a == y else cfg.reward_incorrect
            correct += a == y
            target = r + cfg.gamma * float(net.qvalues(s_next).max())
            td = target - tr.qvalues[a]
            with np.errstate(over="ignore", invalid="ignore"):
                loss = td * td
            if not np.isfinite(loss):
                raise DivergenceError(f"run {run_index}: non-finite TD loss at step {step}")
            loss_sum += loss
            adam_step(opt, net, weight_gradients(net, s, a, target, trace=tr))
            if on_step is not None:
                on_step(step, s, a, r, target)
            step += 1
        report.train_accuracy.append(correct / env.episode_length)
        report.mean_td_loss.append(loss_sum / env.episode_length)
        if not net.is_finite():
            raise DivergenceError(f"run {run_index}: non-finite weights after episode {ep}")
        log.info("run %d episode %d train_acc %.4f", run_index, ep, report.train_accuracy[-1])
    report.agent = net
    if test_set is not None:
        report.test_accuracy = accuracy(net, test_set)
    return report


def run_seed_for(master_seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, run_index]).generate_state(1)[0])


def train_many(train_set, cfg: TrainConfig, test_set=None, jobs: int = 1) -> list[TrainReport]:
    """``cfg.runs`` independent runs, seeds derived from ``cfg.seed``."""
    args = [(train_set, cfg, run_seed_for(cfg.seed, i), test_set, i) for i in range(cfg.runs)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_train_star, args))
    return [train_run(*a) for a in args]


def _train_star(a):
    return train_run(*a)


TIE_TOL = 1e-12


def select_median_agent(reports: list[TrainReport]) -> TrainReport:
    """Report whose test accuracy is closest to the median; lowest run index wins ties.

    Distances within ``TIE_TOL`` count as ties so that float round-off in
    e.g. |0.5 - 0.55| vs |0.6 - 0.55| cannot break them.
    """
    if not reports:
        raise ConfigurationError("no training reports")
    accs = np.array([r.test_accuracy for r in reports], dtype=np.float64)
    if np.isnan(accs).any():
        raise ConfigurationError("median selection needs a test accuracy for every run")
    dist = np.abs(accs - np.median(accs))
    tied = [i for i in range(len(reports)) if dist[i] <= dist.min() + TIE_TOL]
    return reports[min(tied, key=lambda i: reports[i].run_index)]
