"""Teacher-forced training with AdaDelta, plus binary checkpoints.

The loss for one example is the mean per-position cross entropy of the
decoder's predictions under teacher forcing (decoder input at step t is BOS,
then target[t-1]). Minibatch gradients are computed sentence by sentence and
averaged before a single AdaDelta step.

Checkpoint container: magic `QGEN`, u32 version, u64 header length, JSON
header, then length-prefixed named tensors as little-endian doubles.
"""

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numerics as nm
from .corpus import BOS, Genre, Vocab
from .model import ModelConfig, ModelParams, decode_step, encode, init_decoder_state


class GenreMode(Enum):
    FIVE_ONLY = "5"
    SEVEN_ONLY = "7"
    HYBRID = "hybrid"


@dataclass
class TrainConfig:
    epochs: int = 50
    minibatch: int = 8
    seed: int = 0
    rho: float = 0.95
    epsilon: float = 1e-6
    shuffle: bool = True
    patience: int = 5
    genre_mode: GenreMode = GenreMode.HYBRID

    def __post_init__(self):
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def sequence_loss(example, mparams, collect_grads=True):
    """Loss and gradients for one example.

    Returns (loss, grads) where grads maps parameter name -> ndarray; grads is
    None when collect_grads is off.
    """
    nodes = mparams.wrap()
    cfg = mparams.cfg
    enc = encode(example.input_ids, nodes, cfg)
    s = init_decoder_state(enc, example.genre, nodes, mparams.indicators)
    prev = BOS
    terms = []
    for tgt in example.target_ids:
        s, dist, _ = decode_step(s, prev, enc, nodes, cfg)
        term, _ = nm.cross_entropy(dist, tgt)
        terms.append(term)
        prev = tgt
    loss = nm.mean_of(terms)
    if not collect_grads:
        return float(loss.value), None
    nm.backward(loss)
    grads = {k: n.grad for k, n in nodes.items() if n.grad is not None}
    return float(loss.value), grads


def batch_loss(examples, mparams, collect_grads=True):
    """Loss and gradients for a genre-pure minibatch in one tape pass.

    All examples must share input and target lengths (true within a genre).
    Returns (per_example_losses, grads); the gradients are those of the mean
    per-example loss, i.e. already averaged over the batch.
    """
    genres = {e.genre for e in examples}
    if len(genres) != 1:
        raise ValueError("batch_loss needs a genre-pure batch, got %s"
                         % sorted(g.name for g in genres))
    nodes = mparams.wrap()
    cfg = mparams.cfg
    inputs = np.array([e.input_ids for e in examples], dtype=np.intp)
    targets = np.array([e.target_ids for e in examples], dtype=np.intp)
    enc = encode(inputs, nodes, cfg)
    s = init_decoder_state(enc, examples[0].genre, nodes, mparams.indicators)
    B, L = targets.shape
    prev = np.full(B, BOS, dtype=np.intp)
    terms = []
    for t in range(L):
        s, dist, _ = decode_step(s, prev, enc, nodes, cfg)
        terms.append(nm.cross_entropy_rows(dist, targets[:, t]))
        prev = targets[:, t]
    per_example = nm.mean_of(terms)
    loss = nm.mean_all(per_example)
    if not collect_grads:
        return per_example.value.copy(), None
    nm.backward(loss)
    grads = {k: n.grad for k, n in nodes.items() if n.grad is not None}
    return per_example.value.copy(), grads


def teacher_forced_argmax(example, mparams):
    """Argmax prediction at every target position under teacher forcing."""
    nodes = mparams.wrap()
    cfg = mparams.cfg
    enc = encode(example.input_ids, nodes, cfg)
    s = init_decoder_state(enc, example.genre, nodes, mparams.indicators)
    prev = BOS
    preds = []
    for tgt in example.target_ids:
        s, dist, _ = decode_step(s, prev, enc, nodes, cfg)
        preds.append(int(np.argmax(dist.value)))
        prev = tgt
    return preds


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    genre_loss: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"epoch": self.epoch, "mean_loss": self.mean_loss,
                           "genre_loss": {k.name: v for k, v in self.genre_loss.items()}})


def _check_genre_mode(examples, mode):
    genres = {e.genre for e in examples}
    if mode == GenreMode.HYBRID:
        if genres != {Genre.FIVE_CHAR, Genre.SEVEN_CHAR}:
            raise ValueError("Hybrid mode needs both genres present, found %s"
                             % sorted(g.name for g in genres))
    elif mode == GenreMode.FIVE_ONLY and genres != {Genre.FIVE_CHAR}:
        raise ValueError("FiveOnly mode but corpus has %s" % sorted(g.name for g in genres))
    elif mode == GenreMode.SEVEN_ONLY and genres != {Genre.SEVEN_CHAR}:
        raise ValueError("SevenOnly mode but corpus has %s" % sorted(g.name for g in genres))


def _genre_pure_batches(examples, order, minibatch):
    """Partition a shuffled order into genre-pure minibatches.

    Batches must be genre-pure because the tensors of a batch share the input
    and target lengths; the visit order still follows the shuffle.
    """
    buckets = {}
    batches = []
    for i in order:
        g = examples[i].genre
        buckets.setdefault(g, []).append(i)
        if len(buckets[g]) == minibatch:
            batches.append(buckets.pop(g))
    for g in sorted(buckets, key=lambda g: g.name):
        batches.append(buckets[g])
    return batches


def train_epoch(examples, mparams, opt_state, config, epoch=0, rng=None):
    """One pass over the examples; one AdaDelta step per minibatch."""
    if not examples:
        raise ValueError("no training examples")
    _check_genre_mode(examples, config.genre_mode)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(config.seed + epoch))
    order = np.arange(len(examples))
    if config.shuffle:
        rng.shuffle(order)
    total = 0.0
    genre_tot = {}
    genre_n = {}
    for idxs in _genre_pure_batches(examples, order, config.minibatch):
        batch = [examples[i] for i in idxs]
        losses, grads = batch_loss(batch, mparams)
        for ex, loss in zip(batch, losses):
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite loss on example %r (epoch %d)"
                                         % (ex.source_id, epoch))
            total += loss
            genre_tot[ex.genre] = genre_tot.get(ex.genre, 0.0) + loss
            genre_n[ex.genre] = genre_n.get(ex.genre, 0) + 1
        nm.adadelta_step(mparams.tensors, grads, opt_state)
    return EpochReport(epoch=epoch,
                       mean_loss=total / len(examples),
                       genre_loss={g: genre_tot[g] / genre_n[g] for g in genre_tot})


def train(examples, mparams, config, opt_state=None, eval_fn=None,
          stop_below_loss=None, log_fn=None, step0=0):
    """Epoch loop with optional held-out early stopping.

    eval_fn(mparams) -> score (higher is better); evaluated once per epoch
    when given, training stops after `config.patience` evaluations without
    improvement. `stop_below_loss` exits once the epoch mean loss drops under
    the bound. Returns (opt_state, reports, steps_done).
    """
    if opt_state is None:
        opt_state = nm.AdaDeltaState(mparams.tensors, rho=config.rho, epsilon=config.epsilon)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    reports = []
    best = -np.inf
    stale = 0
    step = step0
    for epoch in range(config.epochs):
        report = train_epoch(examples, mparams, opt_state, config, epoch=epoch, rng=rng)
        step += 1
        reports.append(report)
        if log_fn:
            log_fn(report)
        if stop_below_loss is not None and report.mean_loss < stop_below_loss:
            break
        if eval_fn is not None:
            score = eval_fn(mparams)
            if score > best:
                best = score
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return opt_state, reports, step


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"QGEN"
VERSION = 1


class CheckpointError(Exception):
    pass


def _write_tensor(f, name, arr):
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<Q", dim))
    f.write(arr.tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint: need %d bytes for %s at offset %d"
                                  % (n, what, self.off))
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def save_checkpoint(path, mparams, opt_state, vocab, step, train_seed):
    """Write a self-describing checkpoint; reload is bit-exact."""
    tensors = dict(mparams.tensors)
    out = {}
    for k, v in tensors.items():
        out[k] = v
    for k, v in opt_state.eg2.items():
        out["opt.eg2." + k] = v
    for k, v in opt_state.edx2.items():
        out["opt.edx2." + k] = v
    out["ind.5"] = mparams.indicators[Genre.FIVE_CHAR]
    out["ind.7"] = mparams.indicators[Genre.SEVEN_CHAR]
    names = sorted(out)
    header = {
        "hyper": mparams.cfg.to_dict(),
        "rho": opt_state.rho,
        "epsilon": opt_state.epsilon,
        "step": step,
        "train_seed": train_seed,
        "vocab": [[c, i, vocab.freq.get(c, 0)] for c, i in vocab.char_to_id.items()],
        "tensors": names,
    }
    hb = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for name in names:
            _write_tensor(f, name, out[name])


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelParams, AdaDeltaState, Vocab, step, train_seed)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic at offset 0: not a qgen checkpoint")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError("checkpoint version %d unsupported (expected %d)"
                              % (version, VERSION))
    hlen = r.u64("header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError("corrupt header at offset 16: %s" % e) from e
    tensors = {}
    for expected in header["tensors"]:
        nlen = r.u32("tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        if name != expected:
            raise CheckpointError("tensor order mismatch at offset %d: %r vs %r"
                                  % (r.off, name, expected))
        ndim = r.u32("rank")
        shape = tuple(r.u64("dim") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * 8, "tensor %r data" % name)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.off != len(data):
        raise CheckpointError("trailing bytes at offset %d" % r.off)

    cfg = ModelConfig(**header["hyper"])
    params = {}
    eg2 = {}
    edx2 = {}
    for name, arr in tensors.items():
        if name.startswith("opt.eg2."):
            eg2[name[len("opt.eg2."):]] = arr
        elif name.startswith("opt.edx2."):
            edx2[name[len("opt.edx2."):]] = arr
        elif not name.startswith("ind."):
            params[name] = arr
    indicators = {Genre.FIVE_CHAR: tensors["ind.5"], Genre.SEVEN_CHAR: tensors["ind.7"]}
    mparams = ModelParams(cfg, params, indicators)
    state = nm.AdaDeltaState(params, rho=header["rho"], epsilon=header["epsilon"])
    state.eg2 = eg2
    state.edx2 = edx2
    vocab = Vocab()
    vocab.char_to_id = {}
    vocab.id_to_char = {}
    for char, idx, freq in header["vocab"]:
        vocab.char_to_id[char] = idx
        vocab.id_to_char[idx] = char
        if freq:
            vocab.freq[char] = freq
    return mparams, state, vocab, header["step"], header["train_seed"]
