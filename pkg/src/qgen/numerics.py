"""Reverse-mode autodiff over numpy arrays, plus AdaDelta and gradient checking.

Everything is double precision. The tape is a plain DAG of Node objects. Ops
on the recurrent hot path (GRU cell, additive attention) are fused into single
nodes with hand-derived backward passes, and every op accepts either a single
vector or a (batch, dim) matrix so whole minibatches run through one tape.
The correctness contract for every differentiable op is the finite-difference
check in grad_check().
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Node:
    """One value in the computation graph.

    value   -- numpy float64 array (scalar values are 0-d arrays)
    grad    -- accumulated dL/dvalue, filled in by backward()
    parents -- upstream nodes
    bwd     -- closure(out_grad) that pushes gradient to parents; None for leaves
    """

    __slots__ = ("value", "grad", "parents", "bwd")

    def __init__(self, value, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bwd = bwd


def _acc(node, g):
    # Never accumulate in place: backward closures may hand the same array to
    # several parents, and `+` allocates a fresh array on the second hit.
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def backward(root):
    """Backpropagate from a scalar root through the tape."""
    if root.value.ndim != 0:
        raise ShapeError("backward() root must be scalar, got shape %s" % (root.value.shape,))
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node.bwd is not None:
            node.bwd(node.grad)


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------

def constant(value):
    return Node(value)


def add(a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError("add: %s vs %s" % (a.value.shape, b.value.shape))
    out = Node(a.value + b.value, (a, b))

    def bwd(g):
        _acc(a, g)
        _acc(b, g)
    out.bwd = bwd
    return out


def mul(a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError("mul: %s vs %s" % (a.value.shape, b.value.shape))
    out = Node(a.value * b.value, (a, b))

    def bwd(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)
    out.bwd = bwd
    return out


def scale(a, c):
    c = float(c)
    out = Node(a.value * c, (a,))

    def bwd(g):
        _acc(a, g * c)
    out.bwd = bwd
    return out


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Node(s, (a,))

    def bwd(g):
        _acc(a, g * s * (1.0 - s))
    out.bwd = bwd
    return out


def tanh(a):
    t = np.tanh(a.value)
    out = Node(t, (a,))

    def bwd(g):
        _acc(a, g * (1.0 - t * t))
    out.bwd = bwd
    return out


def concat(parts):
    """Concatenate along the last axis; vectors and (B, dim) rows both work."""
    vals = [p.value for p in parts]
    out = Node(np.concatenate(vals, axis=-1), tuple(parts))
    sizes = [v.shape[-1] for v in vals]

    def bwd(g):
        off = 0
        for p, sz in zip(parts, sizes):
            _acc(p, g[..., off:off + sz])
            off += sz
    out.bwd = bwd
    return out


def affine(W, x, b):
    """W x + b for a vector x, or x W^T + b row-wise for a (B, n) batch."""
    if W.value.ndim != 2 or b.value.ndim != 1:
        raise ShapeError("affine: bad ranks W%s b%s" % (W.value.shape, b.value.shape))
    m, n = W.value.shape
    if x.value.shape[-1] != n or b.value.shape[0] != m:
        raise ShapeError("affine: W %s incompatible with x %s / b %s"
                         % (W.value.shape, x.value.shape, b.value.shape))
    batched = x.value.ndim == 2
    y = (x.value @ W.value.T if batched else W.value @ x.value) + b.value
    out = Node(y, (W, x, b))

    def bwd(g):
        if batched:
            _acc(W, g.T @ x.value)
            _acc(x, g @ W.value)
            _acc(b, g.sum(axis=0))
        else:
            _acc(W, np.outer(g, x.value))
            _acc(x, W.value.T @ g)
            _acc(b, g)
    out.bwd = bwd
    return out


def embedding_rows(E, ids):
    """Row lookup into an embedding matrix node; int id or (B,) id array.

    The gradient is scattered into a zero buffer owned by E, which keeps the
    cost per lookup at O(d) instead of O(V d).
    """
    single = np.isscalar(ids) or np.ndim(ids) == 0
    idx = int(ids) if single else np.asarray(ids, dtype=np.intp)
    out = Node(E.value[idx], (E,))

    def bwd(g):
        if E.grad is None:
            E.grad = np.zeros_like(E.value)
        if single:
            E.grad[idx] += g
        else:
            np.add.at(E.grad, idx, g)
    out.bwd = bwd
    return out


def softmax(z):
    """Stable softmax along the last axis. Rows positive, each summing to 1."""
    v = z.value
    if v.shape[-1] < 1 or v.ndim < 1:
        raise ShapeError("softmax expects a non-empty vector, got shape %s" % (v.shape,))
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    out = Node(p, (z,))

    def bwd(g):
        _acc(z, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    out.bwd = bwd
    return out


def softmax_values(v):
    """Softmax on a plain array (no tape)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim < 1 or v.shape[-1] < 1:
        raise ShapeError("softmax expects a non-empty vector, got shape %s" % (v.shape,))
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


PROB_FLOOR = 1e-12


def cross_entropy(pred, target):
    """-ln(pred[target]) for a probability-vector node.

    Returns (loss_node, clamped_flag). The floor keeps the loss finite when
    the model assigns (numerically) zero mass to the target; composed with
    softmax() the gradient w.r.t. the logits is pred - onehot(target).
    """
    p = pred.value
    if p.ndim != 1:
        raise ShapeError("cross_entropy expects a probability vector")
    target = int(target)
    if not 0 <= target < p.shape[0]:
        raise ShapeError("cross_entropy: target %d out of range for n=%d" % (target, p.shape[0]))
    pt = p[target]
    clamped = bool(pt < PROB_FLOOR)
    pt = max(pt, PROB_FLOOR)
    out = Node(-np.log(pt), (pred,))

    def bwd(g):
        d = np.zeros_like(p)
        d[target] = -float(g) / pt
        _acc(pred, d)
    out.bwd = bwd
    return out, clamped


def cross_entropy_rows(pred, targets):
    """Per-row -ln(pred[i, targets[i]]) for a (B, V) probability node."""
    p = pred.value
    if p.ndim != 2:
        raise ShapeError("cross_entropy_rows expects (B, V) probabilities")
    idx = np.asarray(targets, dtype=np.intp)
    rows = np.arange(p.shape[0])
    pt = np.maximum(p[rows, idx], PROB_FLOOR)
    out = Node(-np.log(pt), (pred,))

    def bwd(g):
        d = np.zeros_like(p)
        d[rows, idx] = -g / pt
        _acc(pred, d)
    out.bwd = bwd
    return out


def mean_of(terms):
    """Elementwise mean of a list of equally-shaped nodes."""
    n = len(terms)
    out = Node(sum(t.value for t in terms) / n, tuple(terms))

    def bwd(g):
        gn = g / n
        for t in terms:
            _acc(t, gn)
    out.bwd = bwd
    return out


def mean_all(a):
    """Scalar mean over every element of a node."""
    size = a.value.size
    out = Node(a.value.mean(), (a,))

    def bwd(g):
        _acc(a, np.full_like(a.value, float(g) / size))
    out.bwd = bwd
    return out


# ---------------------------------------------------------------------------
# fused recurrent ops
# ---------------------------------------------------------------------------

def gru_cell(x, h_prev, p):
    """One GRU step as a single tape node; x may be a vector or a (B, n) batch.

    Gates: z = sigm(Wz x + Uz h + bz), r = sigm(Wr x + Ur h + br),
    hbar = tanh(Wh x + Uh (r*h) + bh), h_new = z*h_prev + (1-z)*hbar.

    `p` maps the keys Wz,Uz,bz,Wr,Ur,br,Wh,Uh,bh to parameter nodes.
    """
    xv, hv = x.value, h_prev.value
    Wz, Uz, bz = p["Wz"], p["Uz"], p["bz"]
    Wr, Ur, br = p["Wr"], p["Ur"], p["br"]
    Wh, Uh, bh = p["Wh"], p["Uh"], p["bh"]
    if Wz.value.shape[1] != xv.shape[-1] or Uz.value.shape[1] != hv.shape[-1]:
        raise ShapeError("gru_cell: x %s / h %s incompatible with Wz %s / Uz %s"
                         % (xv.shape, hv.shape, Wz.value.shape, Uz.value.shape))
    batched = xv.ndim == 2

    def mv(M, a):
        return a @ M.T if batched else M @ a

    z = 1.0 / (1.0 + np.exp(-(mv(Wz.value, xv) + mv(Uz.value, hv) + bz.value)))
    r = 1.0 / (1.0 + np.exp(-(mv(Wr.value, xv) + mv(Ur.value, hv) + br.value)))
    rh = r * hv
    hbar = np.tanh(mv(Wh.value, xv) + mv(Uh.value, rh) + bh.value)
    h_new = z * hv + (1.0 - z) * hbar

    parents = (x, h_prev, Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh)
    out = Node(h_new, parents)

    def bwd(g):
        dz = g * (hv - hbar)
        dhbar = g * (1.0 - z)
        dh = g * z

        da_h = dhbar * (1.0 - hbar * hbar)
        drh = da_h @ Uh.value if batched else Uh.value.T @ da_h
        dr = drh * hv
        dh = dh + drh * r

        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)

        if batched:
            dx = da_h @ Wh.value + da_z @ Wz.value + da_r @ Wr.value
            dh = dh + da_z @ Uz.value + da_r @ Ur.value
            _acc(Wz, da_z.T @ xv)
            _acc(Uz, da_z.T @ hv)
            _acc(bz, da_z.sum(axis=0))
            _acc(Wr, da_r.T @ xv)
            _acc(Ur, da_r.T @ hv)
            _acc(br, da_r.sum(axis=0))
            _acc(Wh, da_h.T @ xv)
            _acc(Uh, da_h.T @ rh)
            _acc(bh, da_h.sum(axis=0))
        else:
            dx = Wh.value.T @ da_h + Wz.value.T @ da_z + Wr.value.T @ da_r
            dh = dh + Uz.value.T @ da_z + Ur.value.T @ da_r
            _acc(Wz, np.outer(da_z, xv))
            _acc(Uz, np.outer(da_z, hv))
            _acc(bz, da_z)
            _acc(Wr, np.outer(da_r, xv))
            _acc(Ur, np.outer(da_r, hv))
            _acc(br, da_r)
            _acc(Wh, np.outer(da_h, xv))
            _acc(Uh, np.outer(da_h, rh))
            _acc(bh, da_h)
        _acc(x, dx)
        _acc(h_prev, dh)
    out.bwd = bwd
    return out


def additive_attention(query, items, W, U, v):
    """Additive attention over a sequence of item nodes, fused into one node.

    Scores e_i = v . tanh(W query + U item_i), alpha = softmax(e),
    context = sum_i alpha_i item_i. Query and items may be vectors or (B, dim)
    batches (one attention per batch row over that row's items).

    Returns (context_node, alpha_array); the weights are plain arrays for
    logging only.
    """
    T = len(items)
    if T < 1:
        raise ShapeError("attention over an empty sequence")
    single = query.value.ndim == 1
    q = query.value[None, :] if single else query.value         # (B, Hq)
    M = np.stack([it.value[None, :] if single else it.value for it in items], axis=1)  # (B,T,D)
    t = np.tanh((q @ W.value.T)[:, None, :] + M @ U.value.T)    # (B, T, A)
    e = t @ v.value                                             # (B, T)
    ex = np.exp(e - e.max(axis=-1, keepdims=True))
    alpha = ex / ex.sum(axis=-1, keepdims=True)
    ctx = (alpha[:, :, None] * M).sum(axis=1)                   # (B, D)

    parents = (query,) + tuple(items) + (W, U, v)
    out = Node(ctx[0] if single else ctx, parents)

    def bwd(g):
        gb = g[None, :] if single else g                        # (B, D)
        dalpha = (M @ gb[:, :, None])[:, :, 0]                  # (B, T)
        de = alpha * (dalpha - (dalpha * alpha).sum(axis=-1, keepdims=True))
        dt = (1.0 - t * t) * de[:, :, None] * v.value           # (B, T, A)
        dts = dt.sum(axis=1)                                    # (B, A)
        _acc(v, np.einsum("bta,bt->a", t, de))
        _acc(W, dts.T @ q)
        _acc(U, np.einsum("bta,btd->ad", dt, M))
        dq = dts @ W.value
        _acc(query, dq[0] if single else dq)
        dM = alpha[:, :, None] * gb[:, None, :] + dt @ U.value  # (B, T, D)
        for i, it in enumerate(items):
            gi = dM[:, i, :]
            _acc(it, gi[0] if single else gi)
    out.bwd = bwd
    return out, (alpha[0] if single else alpha)


# ---------------------------------------------------------------------------
# AdaDelta
# ---------------------------------------------------------------------------

class AdaDeltaState:
    """Per-parameter accumulators for AdaDelta. No learning rate exists."""

    def __init__(self, params, rho=0.95, epsilon=1e-6):
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must be in (0,1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.rho = rho
        self.epsilon = epsilon
        self.eg2 = {k: np.zeros_like(v) for k, v in params.items()}
        self.edx2 = {k: np.zeros_like(v) for k, v in params.items()}


def adadelta_step(params, grads, state):
    """One AdaDelta update, in place on `params` (dict name -> ndarray).

    E[g^2] <- rho E[g^2] + (1-rho) g^2
    dx      = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) * g
    E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError("gradient for unknown parameter %r" % name)
        if g.shape != params[name].shape:
            raise ShapeError("grad shape %s != param shape %s for %r"
                             % (g.shape, params[name].shape, name))
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient for %r; step aborted" % name)
    rho, eps = state.rho, state.epsilon
    for name, g in grads.items():
        eg2 = state.eg2[name]
        edx2 = state.edx2[name]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        dx = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * dx * dx
        params[name] += dx
    # parameters with no gradient this step still decay their E[g^2]
    for name in params:
        if name not in grads:
            state.eg2[name] *= rho


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(build, params, h=1e-5, sample=None, rng=None):
    """Finite-difference check for a scalar loss built from named parameters.

    build(nodes) -- callable taking {name: Node} and returning a scalar Node.
    params       -- {name: ndarray}; perturbed in place and restored.
    sample       -- if set, check at most this many coordinates per parameter
                    (chosen with rng) instead of all of them.

    Returns {"max_rel_error", "worst", "checked"} where worst is
    (name, flat_index, analytic, numeric). The relative error uses an absolute
    floor of 1e-6 in the denominator so that coordinates whose true gradient
    is far below the finite-difference noise floor do not dominate.
    """
    nodes = {k: Node(v) for k, v in params.items()}
    loss = build(nodes)
    backward(loss)
    analytic = {k: (np.zeros_like(params[k]) if nodes[k].grad is None
                    else np.array(nodes[k].grad, dtype=np.float64).reshape(params[k].shape))
                for k in params}

    worst = ("", -1, 0.0, 0.0)
    max_rel = 0.0
    checked = 0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idxs = range(flat.shape[0])
        if sample is not None and flat.shape[0] > sample:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.shape[0], size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(build({k: Node(v) for k, v in params.items()}).value)
            flat[i] = orig - h
            fm = float(build({k: Node(v) for k, v in params.items()}).value)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = analytic[name].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana) + abs(num), 1e-6)
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(i), float(ana), float(num))
    return {"max_rel_error": max_rel, "worst": worst, "checked": checked}
