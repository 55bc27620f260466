"""The training loop: one strategy, one seed, one replayable record."""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np

from .. import diffcore as dc
from ..diffcore import Adam, LrSchedule, Tape, Tensor
from ..errors import DomainError, ShapeError
from ..gradbal import combine_step, make_aggregator
from ..lossbal import LossStrategy, make_strategy
from ..mtlmodel import MultiTaskModel, SyntheticSuite, make_synthetic_suite, task_losses
from ..rlweighter import Igbv2Controller, ReplayBuffer, SacAgent
from .config import RL_STRATEGY, ExperimentConfig
from .metrics import compute_delta_m
from .records import BatchRow, EpochRow, RunRecord

logger = logging.getLogger(__name__)

# fixed per-purpose salts so every rng stream depends only on (seed, role)
_STRATEGY_SALT = 6079
_AGGREGATOR_SALT = 7919


def evaluate(model: MultiTaskModel, suite: SyntheticSuite, split: str,
             tasks: list[int] | None = None) -> np.ndarray:
    """Mean per-task losses over a whole split, without touching any tape."""
    x, targets = suite.split_arrays(split)
    if tasks is not None:
        targets = [targets[k] for k in tasks]
    preds = model.infer(x)
    out = []
    for kind, pred, target in zip(model.task_kinds, preds, targets):
        if kind == "regression":
            out.append(dc.mse_loss(Tensor(pred), target).item())
        else:
            out.append(dc.cross_entropy(Tensor(pred), target).item())
    return np.array(out, dtype=np.float64)


def build_strategy(config: ExperimentConfig, n: int, seed: int,
                   schedule: LrSchedule) -> LossStrategy:
    """Instantiate the configured weighting strategy with seeded streams."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STRATEGY_SALT]))
    if config.strategy == RL_STRATEGY:
        s = config.sac
        agent = SacAgent(
            n=n, seed=seed, hidden=list(s.hidden), gamma=s.gamma, tau=s.tau,
            ent_alpha=s.ent_alpha, auto_entropy=s.auto_entropy,
            agent_lr=s.agent_lr, update_batch=s.update_batch,
        )
        return Igbv2Controller(
            n, agent, ReplayBuffer(s.buffer_capacity), schedule, rng,
            update_e=s.update_e, use_e=s.use_e, update_every=s.update_every,
            use_min=s.use_min, use_alpha=s.use_alpha, use_si=config.use_si,
        )
    return make_strategy(config.strategy, n, rng=rng, use_si=config.use_si)


def train_run(config: ExperimentConfig, seed: int,
              stl_val_refs: np.ndarray | None = None) -> RunRecord:
    """Train one model under the configured strategy and log everything.

    Model selection minimizes the validation drop against ``stl_val_refs``
    when single-task references are supplied, and against the run's own
    first validation losses otherwise; the test split is evaluated once,
    at the selected epoch's parameters. A non-finite loss aborts the run
    and the partial record carries the diagnostic instead of test rows.
    """
    config.validate()
    suite = make_synthetic_suite(config.suite, seed)
    tasks = list(config.task_subset) if config.task_subset else None
    model = suite.make_model(task_subset=tasks)
    n = model.n

    schedule = LrSchedule(config.lr, config.lr_decay_every, config.lr_decay_factor)
    strategy = build_strategy(config, n, seed, schedule)
    aggregator = make_aggregator(config.aggregator) if config.aggregator else None
    agg_rng = np.random.default_rng(np.random.SeedSequence([seed, _AGGREGATOR_SALT]))
    optimizer = Adam(model.all_parameters() + strategy.parameters(),
                     lr=config.lr, eps=config.adam_eps)
    bn = suite.batches_per_epoch()

    record = RunRecord(
        strategy=config.strategy,
        aggregator=config.aggregator or "",
        use_si=strategy.use_si,
        seed=seed,
        epochs=config.epochs,
        batch_size=suite.spec.batch_size,
        n_tasks=n,
        task_subset=tuple(tasks) if tasks else (),
        lr=config.lr,
        lr_decay_every=config.lr_decay_every,
        lr_decay_factor=config.lr_decay_factor,
        status="ok",
        abort_reason="",
        selected_epoch=0,
        selection_reference=(),
        created_unix=time.time(),
    )

    sel_ref: np.ndarray | None = None if stl_val_refs is None else np.asarray(
        stl_val_refs, dtype=np.float64)
    best_delta = np.inf
    best_snapshot: list[np.ndarray] | None = None

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        optimizer.lr = schedule.lr_at(epoch)
        sums = np.zeros(n)
        count = 0
        try:
            for batch in suite.train_batches(epoch):
                if tasks is not None:
                    batch = suite.subset_batch(batch, tasks)
                with Tape() as tape:
                    losses = task_losses(model, batch)
                    if aggregator is not None:
                        result = combine_step(
                            strategy, aggregator, model, losses, tape,
                            optimizer, agg_rng, epoch, batch.batch_index, bn,
                        )
                        decision = result.decision
                    else:
                        decision = strategy.decide(
                            losses, epoch, batch.batch_index, bn)
                        total = strategy.total_loss(losses, decision)
                        optimizer.zero_grad()
                        tape.backward(total)
                        optimizer.step()
                sums += losses.values
                count += 1
                if config.record_batch_rows:
                    record.batch_rows.append(BatchRow(
                        epoch=epoch,
                        batch=batch.batch_index,
                        losses=tuple(losses.values),
                        weights=tuple(decision.lam),
                        reward=getattr(strategy, "last_reward", None),
                        source=getattr(strategy, "last_source", strategy.name),
                    ))
            mean_train = sums / count
            strategy.end_epoch(epoch, mean_train)
            val = evaluate(model, suite, "val", tasks)
            if not np.all(np.isfinite(val)):
                raise DomainError(f"non-finite validation losses {val}")
        except (DomainError, ShapeError) as exc:
            record.status = "aborted"
            record.abort_reason = f"epoch {epoch}: {type(exc).__name__}: {exc}"
            logger.warning("run %s seed %d aborted: %s",
                           record.label, seed, record.abort_reason)
            break
        if sel_ref is None:
            sel_ref = val.copy()
        val_delta = compute_delta_m(val, sel_ref)
        if val_delta < best_delta:
            best_delta = val_delta
            record.selected_epoch = epoch
            best_snapshot = [p.data.copy() for p in model.all_parameters()]
        record.epoch_rows.append(EpochRow(
            epoch=epoch,
            train_losses=tuple(mean_train),
            val_losses=tuple(val),
            lr=optimizer.lr,
            wall=time.perf_counter() - started,
            val_delta_m=val_delta,
        ))

    record.selection_reference = tuple(sel_ref) if sel_ref is not None else ()
    if record.status == "ok" and best_snapshot is not None:
        for p, saved in zip(model.all_parameters(), best_snapshot):
            p.data = saved
        record.test_losses = tuple(evaluate(model, suite, "test", tasks))
    record.validate()
    return record


def stl_reference_config(config: ExperimentConfig, task: int) -> ExperimentConfig:
    """The matching single-task run: same budget, equal weighting, one head."""
    return dataclasses.replace(
        config, strategy="ew", use_si=False, aggregator=None, task_subset=[task])
