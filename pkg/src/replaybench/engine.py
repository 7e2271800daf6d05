"""Continual-training loops: experience replay, generative replay, fine-tuning."""
from dataclasses import dataclass, field, replace
import logging
import time

import numpy as np

from . import data, nn, strategies as S, vae as V
from .memory import MemoryBuffer, draw_subsample, store
from .metrics import accuracy_metric, forgetting_metric
from .seeding import child_seed, derive_seed

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: object
    accuracy: float
    forgetting_rate: float
    wall_time_seconds: float
    accuracy_matrix: np.ndarray
    task_ids: list
    fingerprint: str = ""

    @property
    def seed(self):
        return self.config.seed


@dataclass
class StepRecord:
    """What the observer callback sees for every classifier update."""
    task_index: int
    step: int
    batch: nn.Batch
    replay_task_ids: np.ndarray
    dropout_seed: object
    params_before: nn.ModelParams
    params_after: nn.ModelParams


def eval_tasks(params, stream):
    """Eval-mode accuracy on every task's test split, in stream order."""
    row = []
    for task in stream.tasks:
        if len(task.test) == 0:
            raise ValueError(f"task {task.task_id} has an empty test set")
        pred = nn.predict(params, task.test).argmax(axis=1)
        row.append(float(np.mean(pred == task.test.labels)))
    return np.array(row)


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check(config, stream, kinds):
    config.validate()
    if config.replay_kind not in kinds:
        raise ValueError(f"replay kind {config.replay_kind!r} not handled here (expected {kinds})")
    if len(stream) == 0:
        raise ValueError("empty task stream")
    for t in stream.tasks:
        if len(t.train) == 0 or len(t.test) == 0:
            raise ValueError(f"task {t.task_id} has an empty split")
        if t.train.dim != stream.dim or t.test.dim != stream.dim:
            raise ValueError(f"task {t.task_id} has inconsistent feature width")
        if max(t.class_set) >= stream.n_classes:
            raise ValueError(f"task {t.task_id} uses classes beyond n_classes={stream.n_classes}")


def init_classifier(config, stream):
    sizes = [stream.dim, *config.hidden, stream.n_classes]
    return nn.init_params(sizes, derive_seed(config.seed, "init"),
                          learning_rate=config.learning_rate, dropout_rate=config.dropout_rate)


def select_replay(config, params, sub, new_batch, seed):
    """Choose ``config.n_replay`` rows of subsample ``sub`` with the configured strategy."""
    strategy, r = config.strategy, config.n_replay
    r = min(r, len(sub))
    if strategy == "random":
        return S.select_random(len(sub), r, seed)
    if strategy in ("confidence", "entropy", "margin"):
        preds = nn.predict(params, sub.batch)
        scores = {"confidence": S.score_confidence, "entropy": S.score_entropy,
                  "margin": S.score_margin}[strategy](preds)
        return S.select_topk(scores, r, S.direction_for(strategy, config.mode))
    if strategy == "bald":
        mc_params = replace(params, dropout_rate=config.mc_dropout_rate)
        scores = S.score_bald(nn.mc_predict(mc_params, sub.batch, config.mc_passes, seed))
        return S.select_topk(scores, r, S.direction_for(strategy, config.mode))
    if strategy == "kmeans":
        return S.select_kmeans(nn.extract_embeddings(params, sub.batch), r, seed, config.kmeans_iters)
    if strategy == "coreset":
        return S.select_coreset(nn.extract_embeddings(params, sub.batch), r, seed)
    if strategy == "mir":
        # gradient of the incoming batch alone, then a throwaway step
        _, grad = nn.loss_and_grad(params, new_batch, "train", child_seed(seed, 0))
        virtual = nn.virtual_update(params, grad)
        return S.select_topk(S.score_mir(params, virtual, sub.batch), r, "largest")
    raise ValueError(f"unknown strategy {strategy!r}")


def _finish(config, stream, R, started):
    wall = time.perf_counter() - started
    return RunResult(config, accuracy_metric(R), forgetting_metric(R), wall, R,
                     stream.task_ids, config.fingerprint())


def train_er(config, stream, observer=None):
    """Experience replay (or plain fine-tuning when ``replay_kind == "none"``)."""
    _check(config, stream, ("experience", "none"))
    started = time.perf_counter()
    s = config.seed
    params = init_classifier(config, stream)
    buffer = MemoryBuffer.empty(stream.dim, config.buffer_capacity)
    replaying = config.replay_kind == "experience" and config.n_replay > 0
    T = len(stream)
    R = np.zeros((T, T))

    for ti, task in enumerate(stream.tasks):
        step = 0
        for epoch in range(config.epochs):
            rng = np.random.default_rng(derive_seed(s, ti, epoch, "shuffle"))
            for idx in _minibatches(len(task.train), config.batch_size, rng):
                new = task.train.take(idx)
                batch, replay_ids = new, np.zeros(0, dtype=np.int64)
                if replaying and len(buffer):
                    sub = draw_subsample(buffer, config.n_subsample, derive_seed(s, ti, step, "subsample"))
                    sel = select_replay(config, params, sub, new, derive_seed(s, ti, step, "select"))
                    batch = nn.Batch.concat(new, sel.resolve(sub.batch))
                    replay_ids = sub.task_ids[sel.indices]
                dropout_seed = derive_seed(s, ti, step, "dropout")
                _, grad = nn.loss_and_grad(params, batch, "train", dropout_seed)
                updated = nn.sgd_step(params, grad)
                if observer is not None:
                    observer(StepRecord(ti, step, batch, replay_ids, dropout_seed, params, updated))
                params = updated
                step += 1
        if config.replay_kind == "experience":
            buffer = store(buffer, task.train, task.task_id, derive_seed(s, ti, "store"))
        R[ti] = eval_tasks(params, stream)
        log.debug("task %d done: %s", task.task_id, np.round(R[ti], 3))
    return _finish(config, stream, R, started)


def train_gr(config, stream, observer=None, sample_dir=None, image_side=None):
    """Generative replay with a VAE memory and classifier pseudo-labels.

    Pseudo-samples come from the VAE and classifier as they were at the end of
    the previous task. When ``sample_dir`` is set, a grid of VAE samples is
    written as PGM files after every task.
    """
    _check(config, stream, ("generative",))
    started = time.perf_counter()
    s = config.seed
    params = init_classifier(config, stream)
    vae = V.init_vae(stream.dim, derive_seed(s, "vae-init"), config.vae_latent,
                     config.vae_hidden, config.vae_learning_rate)
    old_vae = old_clf = None
    T = len(stream)
    R = np.zeros((T, T))

    for ti, task in enumerate(stream.tasks):
        step = 0
        for epoch in range(config.epochs):
            rng = np.random.default_rng(derive_seed(s, ti, epoch, "shuffle"))
            for idx in _minibatches(len(task.train), config.batch_size, rng):
                new = task.train.take(idx)
                batch = new
                if old_vae is not None and config.n_replay > 0:
                    fake = V.vae_sample(old_vae, config.n_replay, derive_seed(s, ti, step, "gr-sample"))
                    batch = nn.Batch.concat(new, V.pseudo_label(old_clf, fake))
                dropout_seed = derive_seed(s, ti, step, "dropout")
                _, grad = nn.loss_and_grad(params, batch, "train", dropout_seed)
                updated = nn.sgd_step(params, grad)
                if observer is not None:
                    observer(StepRecord(ti, step, batch, np.full(len(batch) - len(new), -1),
                                        dropout_seed, params, updated))
                params = updated
                for k in range(config.vae_steps):
                    vae = V.vae_train_step(vae, batch, derive_seed(s, ti, step, k, "vae-noise"))
                step += 1
        old_vae, old_clf = vae, params
        R[ti] = eval_tasks(params, stream)
        if sample_dir is not None and image_side:
            V.dump_samples(V.vae_sample(vae, 16, derive_seed(s, ti, "dump")), image_side,
                           f"{sample_dir}/task{task.task_id}", prefix="vae")
    return _finish(config, stream, R, started)


def run(config, stream=None, data_root=None, **kw):
    """Build the stream if needed, apply the task order, dispatch on replay kind."""
    from .config import build_stream
    if stream is None:
        stream = build_stream(config.stream, data_root)
    stream = data.reorder(stream, config.order if isinstance(config.order, str) else list(config.order))
    if config.replay_kind == "generative":
        return train_gr(config, stream, **kw)
    return train_er(config, stream, **kw)
