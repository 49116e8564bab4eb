"""Asynchronous SGD: one parameter server, N independent shard learners.

The server is the single writer. Each applied gradient produces a brand new
:class:`ParamSnapshot` (``sgd_step`` never mutates), so a fetched snapshot is
immutable and can be read by shards without copying or tearing.

Shards fetch before every minibatch and push one :class:`GradMessage` back.
An epoch is the total number of minibatches the shard partitions hold, the
same count a single learner would take; the server holds fetches from shards
that have used up their share until the epoch closes, then evaluates dev on
its latest snapshot and moves the learning rate.

Transports: ``inproc`` runs shards as threads calling the server directly;
``socket`` forks shard processes that speak :mod:`tcblstm.wire` over TCP
on localhost.
"""

import logging
import math
import multiprocessing
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .errors import ConfigError, InputError, ProtocolError, ShardFailure
from .model import ModelParams, backward, evaluate, forward
from .optim import EpochRecord, OptimConfig, TrainState, advance, epoch_order, lr_at, minibatches, sgd_step

log = logging.getLogger(__name__)

TRANSPORTS = ("inproc", "socket")


@dataclass
class GradMessage:
    shard_id: int
    step_stamp: int
    grads: ModelParams
    minibatch_loss: float
    rows: int = 1


@dataclass
class ParamSnapshot:
    version: int
    params: ModelParams
    current_lr: float


@dataclass(frozen=True)
class AsgdConfig:
    num_shards: int = 3
    optim: OptimConfig = field(default_factory=OptimConfig)
    transport: str = "inproc"
    synchronous: bool = False

    def validate(self):
        self.optim.validate()
        if self.num_shards < 1:
            raise ConfigError(f"num_shards must be >= 1, got {self.num_shards}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.synchronous and (self.num_shards != 1 or self.transport != "inproc"):
            raise ConfigError("synchronous mode needs num_shards=1 and the inproc transport")
        return self


@dataclass
class AsgdEpochRecord(EpochRecord):
    messages: int = 0
    mean_staleness: float = 0.0

    COLUMNS = EpochRecord.COLUMNS + ("messages", "mean_staleness")

    def line(self):
        return super().line() + f"\t{self.messages}\t{self.mean_staleness!r}"


@dataclass
class AsgdResult:
    params: ModelParams
    last_params: ModelParams
    log: list
    state: TrainState
    version: int
    applied: list = None  # (GradMessage, lr) in server order, when recorded


def check_shapes(params, grads):
    if list(params) != list(grads):
        missing = set(params) ^ set(grads)
        raise ProtocolError(f"gradient blocks do not match parameters: {sorted(missing)}")
    for name, w in params.items():
        if grads[name].shape != w.shape:
            raise ProtocolError(f"block {name}: gradient {grads[name].shape} vs parameter {w.shape}")


def server_apply(snapshot, msg):
    """Full-strength update regardless of how stale ``msg.step_stamp`` is."""
    check_shapes(snapshot.params, msg.grads)
    return ParamSnapshot(
        snapshot.version + 1, sgd_step(snapshot.params, msg.grads, snapshot.current_lr), snapshot.current_lr
    )


def shard_partition(n, shard_id, num_shards):
    return np.arange(shard_id, n, num_shards)


class ParameterServer:
    """Serialises applies, gates fetches at epoch boundaries, runs dev evaluation."""

    def __init__(self, params, model_config, dev_set, config, quotas, seed=0, record=False):
        self.model_config = model_config
        self.dev_set = dev_set
        self.config = config
        self.optim = config.optim
        self.quotas = list(quotas)
        self.budget = sum(self.quotas)
        self.state = TrainState(epoch=1, lr=lr_at(self.optim, 1), rng_seed=seed)
        self.snapshot = ParamSnapshot(0, params, self.state.lr)
        self.best = params
        self.log = []
        self.applied_log = [] if record else None
        self.error = None
        self._cond = threading.Condition()
        self._reset_epoch()
        if self.optim.max_epochs == 0:
            self.state.stopped = True

    def _reset_epoch(self):
        self._fetched = [0] * len(self.quotas)
        self._consumed = 0
        self._loss_sum = 0.0
        self._rows = 0
        self._staleness = []
        self._started = time.perf_counter()

    @property
    def done(self):
        return self.state.stopped or self.error is not None

    def fetch(self, shard_id):
        """Latest snapshot, or ``None`` once training is over."""
        with self._cond:
            while not self.done and self._fetched[shard_id] >= self.quotas[shard_id]:
                self._cond.wait()
            if self.done:
                return None
            self._fetched[shard_id] += 1
            return self.snapshot

    def apply(self, msg):
        with self._cond:
            if self.done:
                return False
            current = self.snapshot
            try:
                self.snapshot = server_apply(current, msg)
            except ProtocolError as exc:
                # dropped, but the minibatch still counts toward the epoch budget
                log.warning("dropping gradient from shard %s: %s", msg.shard_id, exc)
                ok = False
            else:
                ok = True
                self._staleness.append(current.version - msg.step_stamp)
                self._loss_sum += msg.minibatch_loss * msg.rows
                self._rows += msg.rows
                if self.applied_log is not None:
                    self.applied_log.append((msg, current.current_lr))
            self._consumed += 1
            if self._consumed == self.budget:
                self._close_epoch()
            return ok

    def fail(self, exc):
        with self._cond:
            if self.error is None:
                self.error = exc
            self._cond.notify_all()

    def _close_epoch(self):
        snap = self.snapshot
        dev_loss, dev_acc = evaluate(snap.params, self.model_config, self.dev_set.windows, self.dev_set.targets)
        epoch = self.state.epoch
        record = AsgdEpochRecord(
            epoch=epoch,
            lr=snap.current_lr,
            train_loss=self._loss_sum / max(self._rows, 1),
            dev_loss=dev_loss,
            dev_acc=dev_acc,
            seconds=time.perf_counter() - self._started,
            messages=len(self._staleness),
            mean_staleness=float(np.mean(self._staleness)) if self._staleness else 0.0,
        )
        self.log.append(record)
        if advance(self.state, self.optim, dev_loss):
            self.best = snap.params
        log.info("asgd epoch %s", record.line())
        if not self.state.stopped:
            self.snapshot = ParamSnapshot(snap.version, snap.params, self.state.lr)
        self._reset_epoch()
        self._cond.notify_all()

    def wait(self, timeout=None):
        with self._cond:
            self._cond.wait_for(lambda: self.done, timeout)


def shard_loop(shard_id, windows, targets, server, model_config, minibatch, seed=0):
    """Fetch, compute, push until the server hands back ``None``.

    ``server`` is anything with ``fetch(shard_id)`` and ``apply(msg)``.
    """
    n = len(targets)
    if n == 0:
        raise InputError(f"shard {shard_id} has an empty data partition")
    epoch = 0
    while True:
        epoch += 1
        for idx in minibatches(epoch_order(n, seed, epoch, stream=shard_id), minibatch):
            snap = server.fetch(shard_id)
            if snap is None:
                return
            probs, cache = forward(snap.params, model_config, windows[idx])
            loss, grads = backward(snap.params, model_config, cache, targets[idx])
            server.apply(GradMessage(shard_id, snap.version, grads, loss, len(idx)))


# ---------------------------------------------------------------------------
# socket transport
# ---------------------------------------------------------------------------


class RemoteServer:
    """Shard-side handle speaking the wire protocol."""

    def __init__(self, port, retries=50):
        self.sock = wire.connect(port, retries=retries)

    def fetch(self, shard_id):
        wire.write_frame(self.sock, wire.encode_fetch(shard_id))
        msg_type, stamp, blocks = wire.read_frame(self.sock)
        if msg_type != wire.SNAPSHOT:
            raise ProtocolError(f"expected a snapshot, got message type {msg_type}")
        return wire.to_snapshot(stamp, blocks)

    def apply(self, msg):
        wire.write_frame(self.sock, wire.encode_gradient(msg))

    def close(self):
        self.sock.close()


def _serve_connection(conn, server):
    try:
        with conn:
            while True:
                try:
                    msg_type, stamp, blocks = wire.read_frame(conn)
                except ConnectionError:
                    return
                if msg_type == wire.FETCH:
                    wire.write_frame(conn, wire.encode_snapshot(server.fetch(int(stamp))))
                elif msg_type == wire.GRADIENT:
                    try:
                        msg = wire.to_gradient(stamp, blocks)
                    except ProtocolError as exc:
                        log.warning("dropping malformed gradient frame: %s", exc)
                        continue
                    server.apply(msg)
                else:
                    raise ProtocolError(f"server cannot handle message type {msg_type}")
    except Exception as exc:  # surfaced to the driver through server.error
        server.fail(exc)


def _socket_shard_main(shard_id, port, windows, targets, model_config, minibatch, seed):
    remote = RemoteServer(port)
    try:
        shard_loop(shard_id, windows, targets, remote, model_config, minibatch, seed)
    finally:
        remote.close()


def _run_socket(server, parts, train_set, model_config, config, seed):
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", 0))
    listener.listen(len(parts))
    port = listener.getsockname()[1]
    ctx = multiprocessing.get_context("fork")
    procs = [
        ctx.Process(
            target=_socket_shard_main,
            args=(s, port, train_set.windows[idx], train_set.targets[idx], model_config, config.optim.minibatch, seed),
            daemon=True,
        )
        for s, idx in enumerate(parts)
    ]
    for p in procs:
        p.start()
    threads = []
    try:
        listener.settimeout(0.2)
        while len(threads) < len(procs) and not server.done:
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                _check_procs(server, procs)
                continue
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=_serve_connection, args=(conn, server), daemon=True)
            t.start()
            threads.append(t)
        while not server.done:
            server.wait(timeout=0.2)
            _check_procs(server, procs)
    finally:
        listener.close()
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
        for t in threads:
            t.join(timeout=5)


def _check_procs(server, procs):
    for s, p in enumerate(procs):
        if p.exitcode not in (None, 0) and not server.done:
            server.fail(ShardFailure(f"shard {s} exited with code {p.exitcode}"))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def asgd_train(model_config, params, train_set, dev_set, config, seed=0, record=False):
    """Train with ``config.num_shards`` asynchronous learners.

    Raises :class:`ShardFailure` (with the partial log attached as ``.log``)
    if any shard dies.
    """
    config.validate()
    if len(train_set) == 0 or len(dev_set) == 0:
        raise InputError("training and dev sets must be nonempty")
    n = len(train_set)
    parts = [shard_partition(n, s, config.num_shards) for s in range(config.num_shards)]
    for s, idx in enumerate(parts):
        if len(idx) == 0:
            raise InputError(f"shard {s} would receive no training windows ({n} windows, {config.num_shards} shards)")
    mb = config.optim.minibatch
    quotas = [math.ceil(len(idx) / mb) for idx in parts]
    server = ParameterServer(params, model_config, dev_set, config, quotas, seed=seed, record=record)

    def run_inproc(s, idx):
        try:
            shard_loop(s, train_set.windows[idx], train_set.targets[idx], server, model_config, mb, seed)
        except Exception as exc:
            server.fail(ShardFailure(f"shard {s} failed: {exc!r}"))

    if not server.done:
        if config.synchronous:
            run_inproc(0, parts[0])
        elif config.transport == "inproc":
            threads = [threading.Thread(target=run_inproc, args=(s, idx), daemon=True) for s, idx in enumerate(parts)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        else:
            _run_socket(server, parts, train_set, model_config, config, seed)

    if server.error is not None:
        err = server.error if isinstance(server.error, ShardFailure) else ShardFailure(repr(server.error))
        err.log = server.log
        raise err
    return AsgdResult(
        params=server.best,
        last_params=server.snapshot.params,
        log=server.log,
        state=server.state,
        version=server.snapshot.version,
        applied=server.applied_log,
    )
