"""Skip-gram character vectors with negative sampling.

Pretrained on a plain character stream (poems flattened in corpus order) and
injected as the initial embedding matrix of the attention model. The reference
implementation is single threaded and bit-reproducible under a fixed seed.
"""

import numpy as np

from .corpus import N_RESERVED


class EmbeddingMatrix:
    """Pretrained vectors: chars in training order, one row each."""

    def __init__(self, chars, matrix):
        self.chars = list(chars)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.row = {c: i for i, c in enumerate(self.chars)}
        if self.matrix.shape[0] != len(self.chars):
            raise ValueError("row count %d != char count %d"
                             % (self.matrix.shape[0], len(self.chars)))

    @property
    def d(self):
        return self.matrix.shape[1]

    def vector(self, char):
        return self.matrix[self.row[char]]

    def save_text(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("%d %d\n" % (len(self.chars), self.d))
            for c, vec in zip(self.chars, self.matrix):
                f.write(c + " " + " ".join("%.17g" % x for x in vec) + "\n")

    @classmethod
    def load_text(cls, path):
        with open(path, encoding="utf-8") as f:
            head = f.readline().split()
            n, d = int(head[0]), int(head[1])
            chars = []
            mat = np.empty((n, d))
            for i in range(n):
                parts = f.readline().rstrip("\n").split(" ")
                chars.append(parts[0])
                mat[i] = [float(x) for x in parts[1:]]
        return cls(chars, mat)


def skipgram_pairs(chars, window):
    """All (center, context) index pairs within the window, in corpus order."""
    n = len(chars)
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                yield i, j


def negative_sampling_table(freqs, power=0.75):
    """Unigram^0.75 sampling distribution over char indices; sums to 1."""
    p = np.asarray(freqs, dtype=np.float64) ** power
    return p / p.sum()


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pair_loss(u, v, v_negs):
    """-ln s(u.v) - sum_k ln s(-u.v_k) for one (center, context) pair."""
    loss = -np.log(_sigmoid(np.dot(u, v)))
    for vn in v_negs:
        loss -= np.log(_sigmoid(-np.dot(u, vn)))
    return loss


def pair_loss_grads(u, v, v_negs):
    """Analytic gradients of pair_loss w.r.t. u, v and each negative vector."""
    gpos = _sigmoid(np.dot(u, v)) - 1.0
    du = gpos * v
    dv = gpos * u
    dnegs = []
    for vn in v_negs:
        gneg = _sigmoid(np.dot(u, vn))
        du = du + gneg * vn
        dnegs.append(gneg * u)
    return du, dv, dnegs


def train_skipgram(corpus_chars, window=5, d=128, negatives=5, epochs=1,
                   seed=0, lr=0.025):
    """Pretrain character vectors on a character stream.

    Plain SGD at a fixed learning rate over all (center, context) pairs;
    negatives are drawn from the unigram^0.75 distribution. Deterministic
    given the seed. Returns an EmbeddingMatrix of the input vectors.
    """
    if window < 1 or negatives < 1 or d < 2:
        raise ValueError("window >= 1, negatives >= 1, d >= 2 required")
    chars = list(corpus_chars)
    if len(chars) < window + 1:
        raise ValueError("corpus of %d chars is shorter than window+1" % len(chars))
    order = []
    index = {}
    for c in chars:
        if c not in index:
            index[c] = len(order)
            order.append(c)
    ids = np.array([index[c] for c in chars], dtype=np.intp)
    freqs = np.bincount(ids, minlength=len(order))
    neg_p = negative_sampling_table(freqs)

    rng = np.random.Generator(np.random.PCG64(seed))
    V = len(order)
    vec_in = rng.uniform(-0.5 / d, 0.5 / d, size=(V, d))
    vec_out = np.zeros((V, d))

    for _ in range(epochs):
        for i, j in skipgram_pairs(ids, window):
            c, ctx = ids[i], ids[j]
            negs = rng.choice(V, size=negatives, p=neg_p)
            u = vec_in[c]
            du, dv, dnegs = pair_loss_grads(u, vec_out[ctx], [vec_out[k] for k in negs])
            vec_out[ctx] -= lr * dv
            for k, dn in zip(negs, dnegs):
                vec_out[k] -= lr * dn
            vec_in[c] = u - lr * du
    return EmbeddingMatrix(order, vec_in)


def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def init_embedding_matrix(pretrained, model_vocab, d, seed=0, init_range=0.08):
    """Build the model's V x d embedding init from pretrained vectors.

    Rows for characters found in the pretraining vocab are copied; reserved
    tokens and missing characters are drawn uniform in [-init_range, init_range]
    from the seed.
    """
    if pretrained is not None and pretrained.d != d:
        raise ValueError("pretrained dimension %d != model dimension %d"
                         % (pretrained.d, d))
    rng = np.random.Generator(np.random.PCG64(seed))
    V = len(model_vocab)
    mat = rng.uniform(-init_range, init_range, size=(V, d))
    if pretrained is not None:
        for char, idx in model_vocab.char_to_id.items():
            if idx >= N_RESERVED and char in pretrained.row:
                mat[idx] = pretrained.vector(char)
    return mat
