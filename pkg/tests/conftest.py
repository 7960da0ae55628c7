"""Independent reference implementations used as test oracles.

None of these call into scipy or into tabshot's own ranking/metric code.
"""

import itertools
import math

import numpy as np
import pytest
import torch


def brute_tie_ranks(values):
    """Average-tie rank of each value: 1 + #smaller + (#equal - 1) / 2."""
    out = []
    for v in values:
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        out.append(1 + smaller + (equal - 1) / 2)
    return out


def brute_ranking_matrix(dist_fn, n):
    """Rank the strict lower triangle of pairwise distances, then mirror."""
    pairs = [(i, j) for i in range(n) for j in range(i)]
    dists = [round(dist_fn(i, j), 10) for i, j in pairs]
    ranks = brute_tie_ranks(dists)
    m = np.zeros((n, n))
    for (i, j), r in zip(pairs, ranks):
        m[i, j] = m[j, i] = r
    return m


def brute_feature_ranking(x):
    x = np.asarray(x, dtype=float)
    cols = [x[:, k].tolist() for k in range(x.shape[1])]

    def d(i, j):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(cols[i], cols[j])))

    return brute_ranking_matrix(d, x.shape[1])


def brute_pixel_ranking(n_rows, n_cols):
    coords = [(r, c) for r in range(n_rows) for c in range(n_cols)]

    def d(i, j):
        return math.hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1])

    return brute_ranking_matrix(d, len(coords))


def brute_layout_loss(R, Q, perm):
    n = len(perm)
    return sum((R[i][j] - Q[perm[i]][perm[j]]) ** 2 for i in range(n) for j in range(i))


def exhaustive_optimum(R, Q):
    n = len(R)
    return min(brute_layout_loss(R, Q, p) for p in itertools.permutations(range(n)))


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                hits += 1.0
            elif p == q:
                hits += 0.5
    return hits / (len(pos) * len(neg))


def literal_repeat_crop(m):
    """Repeat rows and columns, then crop to 84x84, the way numpy would."""
    nr, nc = m.shape
    out = np.repeat(m, 84 // nr + 1, axis=0)
    out = np.repeat(out, 84 // nc + 1, axis=1)
    return out[:84, :84]


def _one_param_difference(net, x, upstream, flat, i, eps):
    """Central difference plus forward/backward one-sided slopes for one entry."""
    old = flat[i].item()
    with torch.no_grad():
        l0 = float((net(x) * upstream).sum())
        flat[i] = old + eps
        lp = float((net(x) * upstream).sum())
        flat[i] = old - eps
        lm = float((net(x) * upstream).sum())
        flat[i] = old
    return (lp - lm) / (2 * eps), (lp - l0) / eps, (l0 - lm) / eps


def central_difference_check(net, x, upstream, eps=1e-6, max_per_tensor=None, rng=None, tol=1e-4,
                             wide_eps=1e-2):
    """Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).

    The loss is ``sum(net(x) * upstream)`` with ``net`` in its current mode.

    Two limits of central differences are handled by re-probing, never by
    loosening the comparison:

    * Resolution. At step ``eps`` rounding noise is roughly
      ``machine_eps * sum|out * upstream| / eps``. An entry whose analytic and
      numeric values are both within 10x of that (a conv bias feeding a
      training-mode batch norm has an exactly zero gradient) is probed again
      with the much larger step ``wide_eps``, where the noise is 10^4 times smaller.
    * Kinks. When a ReLU or max-pool switch lies inside ``[-eps, eps]`` the
      forward and backward one-sided slopes disagree. Such entries are retried
      at eps/10 and eps/100.

    The smallest error over the probes is kept.
    """
    from tabshot import backbone as bb

    bb.forward_cached(net, x)
    grads = bb.backward(net, upstream)
    with torch.no_grad():
        noise = np.finfo(np.float64).eps * float((net(x) * upstream).abs().sum()) / eps

    def rel(num, an):
        return abs(num - an) / max(abs(num), abs(an), 1e-6)

    worst = 0.0
    checked = 0
    for name, p in net.named_parameters():
        flat = p.data.view(-1)
        idx = range(flat.numel())
        if max_per_tensor is not None and flat.numel() > max_per_tensor:
            idx = rng.choice(flat.numel(), max_per_tensor, replace=False)
        for i in idx:
            an = grads[name].view(-1)[i].item()
            num, fwd, bwd = _one_param_difference(net, x, upstream, flat, i, eps)
            err = rel(num, an)
            if err > tol and max(abs(num), abs(an)) <= 10 * noise:
                err = min(err, rel(_one_param_difference(net, x, upstream, flat, i, wide_eps)[0], an))
            kink = abs(fwd - bwd) > tol * max(abs(fwd), abs(bwd), 1e-6)
            h = eps
            while err > tol and kink and h > eps / 100:
                h /= 10
                err = min(err, rel(_one_param_difference(net, x, upstream, flat, i, h)[0], an))
            worst = max(worst, err)
            checked += 1
    return worst, checked


def head_fd_check(weight, bias, z, y, eps=1e-6):
    from tabshot.fewshot import head_loss_and_grad

    _, gw, gb = head_loss_and_grad(weight, bias, z, y)
    worst = 0.0
    for arr, g in ((weight, gw), (bias, gb)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp = head_loss_and_grad(weight, bias, z, y)[0]
            arr[idx] = old - eps
            lm = head_loss_and_grad(weight, bias, z, y)[0]
            arr[idx] = old
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    return worst


@pytest.fixture
def tmp_csv(tmp_path):
    def write(text, name="data.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    return write


_criteria = {}


@pytest.fixture
def record_criterion():
    """Log one acceptance verdict; all of them are repeated in the terminal summary."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _criteria[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
