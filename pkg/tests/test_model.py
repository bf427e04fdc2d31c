import math

import numpy as np
import pytest
import torch

from glitter.config import TrainConfig
from glitter.errors import NumericalError
from glitter.model import (ParameterSet, classify, compute_gradients, cross_entropy, dropout_mask,
                           gcn_forward, init_params, logits)
from glitter.verify import finite_difference, relative_error, small_context


def loop_gcn(A, X, W1, W2):
    A, X, W1, W2 = (np.asarray(t, dtype=float) for t in (A, X, W1, W2))
    n = A.shape[0]
    Ahat = [[A[i][j] / sum(A[i]) for j in range(n)] for i in range(n)]

    def matmul(P, Q):
        return [[sum(P[i][k] * Q[k][j] for k in range(len(Q))) for j in range(len(Q[0]))] for i in range(len(P))]

    H1 = matmul(Ahat, matmul(X.tolist(), W1.tolist()))
    H1 = [[max(0.0, v) for v in row] for row in H1]
    return np.array(matmul(Ahat, matmul(H1, W2.tolist())))


def rand_params(rng, d=3, hidden=4, N=3):
    cfg = TrainConfig(N=N, hidden_dim=hidden, d_a=2, D_max=2)
    p = init_params(d, cfg, int(rng.integers(1000)))
    p.theta_G["clf_b"] = torch.tensor(rng.normal(0, 1, N))
    return p


def test_zero_weights_give_zero_output():
    rng = np.random.default_rng(0)
    A = torch.tensor(rng.uniform(0.1, 1, (5, 5)))
    p = {"gcn_W1": torch.zeros(3, 4), "gcn_W2": torch.zeros(4, 4)}
    assert torch.equal(gcn_forward(A, torch.tensor(rng.normal(size=(5, 3))), p), torch.zeros(5, 4))


def test_constant_adjacency_averages_rows():
    rng = np.random.default_rng(1)
    X = torch.tensor(rng.normal(size=(4, 3)))
    p = rand_params(rng).theta_G
    H = gcn_forward(torch.full((4, 4), 0.3), X, p)
    assert torch.allclose(H, H[0].expand_as(H), atol=1e-14)
    expected = torch.relu(X.mean(0) @ p["gcn_W1"]) @ p["gcn_W2"]
    assert torch.allclose(H[0], expected, atol=1e-14)


def test_gcn_matches_loop():
    rng = np.random.default_rng(2)
    A = rng.uniform(0.05, 1, (6, 6))
    X = rng.normal(size=(6, 3))
    p = rand_params(rng).theta_G
    H = gcn_forward(torch.tensor(A), torch.tensor(X), p)
    np.testing.assert_allclose(H.numpy(), loop_gcn(A, X, p["gcn_W1"], p["gcn_W2"]), atol=1e-13)


def test_gcn_shape_errors():
    p = rand_params(np.random.default_rng(0)).theta_G
    with pytest.raises(ValueError):
        gcn_forward(torch.ones(3, 3), torch.ones(4, 3), p)
    with pytest.raises(ValueError):
        gcn_forward(torch.ones(3, 3), torch.ones(3, 5), p)
    with pytest.raises(ValueError):
        gcn_forward(torch.ones(3, 3), torch.ones(3, 3), p, training=True)


def test_dropout_mask_and_determinism():
    m = dropout_mask((200, 10), 0.5, np.random.default_rng(0))
    assert set(m.unique().tolist()) <= {0.0, 2.0}
    assert 0.4 < float((m > 0).double().mean()) < 0.6
    assert torch.equal(dropout_mask((3, 3), 0.0, np.random.default_rng(0)), torch.ones(3, 3))
    rng = np.random.default_rng(4)
    A, X = torch.tensor(rng.uniform(0.1, 1, (5, 5))), torch.tensor(rng.normal(size=(5, 3)))
    p = rand_params(rng).theta_G
    a = gcn_forward(A, X, p, training=True, rng=np.random.default_rng(9))
    b = gcn_forward(A, X, p, training=True, rng=np.random.default_rng(9))
    assert torch.equal(a, b)
    assert torch.equal(gcn_forward(A, X, p), gcn_forward(A, X, p))


def test_classify_uniform_and_shift():
    p = {"clf_W": torch.zeros(4, 3), "clf_b": torch.zeros(3)}
    assert torch.allclose(classify(torch.ones(2, 4), p), torch.full((2, 3), 1 / 3), atol=1e-15)
    rng = np.random.default_rng(5)
    p = {"clf_W": torch.tensor(rng.normal(size=(4, 3))), "clf_b": torch.tensor(rng.normal(size=3))}
    H = torch.tensor(rng.normal(size=(6, 4)))
    P = classify(H, p)
    shifted = {"clf_W": p["clf_W"], "clf_b": p["clf_b"] + 7.5}
    assert torch.allclose(P, classify(H, shifted), atol=1e-14)
    assert float((P.sum(1) - 1).abs().max()) <= 1e-12
    Z = logits(H, p).numpy()
    ref = np.array([[math.exp(z) / sum(math.exp(t) for t in row) for z in row] for row in Z])
    np.testing.assert_allclose(P.numpy(), ref, atol=1e-14)


def test_cross_entropy_cases():
    assert float(cross_entropy(torch.full((1, 5), 0.2), [0], [3])) == pytest.approx(math.log(5), abs=1e-12)
    assert float(cross_entropy(torch.eye(3), [0, 1, 2], [0, 1, 2])) == 0.0
    assert float(cross_entropy(torch.eye(2), [0], [1])) == pytest.approx(-math.log(1e-12))
    rng = np.random.default_rng(6)
    P = rng.uniform(0.05, 1, (5, 3))
    P /= P.sum(1, keepdims=True)
    rows, labels = [0, 2, 4], [1, 0, 2]
    ref = -sum(math.log(P[r, c]) for r, c in zip(rows, labels))
    assert float(cross_entropy(torch.tensor(P), rows, labels)) == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        cross_entropy(torch.tensor(P), [], [])
    with pytest.raises(ValueError):
        cross_entropy(torch.tensor(P), [0], [3])


def test_probe_loss_gradient_is_weight():
    p = rand_params(np.random.default_rng(7))
    lv = compute_gradients(lambda q: 0.5 * (q.theta_G["gcn_W2"] ** 2).sum(), p)
    assert torch.equal(lv.gradients["gcn_W2"], p.theta_G["gcn_W2"])
    assert float(lv.gradients["W1"].abs().max()) == 0.0
    assert lv.value == pytest.approx(0.5 * float((p.theta_G["gcn_W2"] ** 2).sum()))


def test_gradient_restricted_group_and_unknown_name():
    p = rand_params(np.random.default_rng(8))
    lv = compute_gradients(lambda q: q.theta_S["psi_table"].sum(), p, ("theta_S",))
    assert set(lv.gradients) == {"W1", "W2", "psi_table"}
    assert torch.equal(lv.gradients["psi_table"], torch.ones_like(p.theta_S["psi_table"]))
    with pytest.raises(KeyError):
        compute_gradients(lambda q: q.theta_S["W1"].sum(), p, ("nope",))


def test_non_finite_loss_raises():
    p = rand_params(np.random.default_rng(9))
    with pytest.raises(NumericalError):
        compute_gradients(lambda q: q.theta_S["W1"].sum() * float("nan"), p)


def test_structure_loss_gradient_finite_differences():
    from glitter.meta import structure_loss
    ctx, params, cfg, mask = small_context(11)
    fn = lambda q: structure_loss(ctx, q, cfg, mask)  # noqa: E731
    lv = compute_gradients(fn, params)
    for name in params.named():
        assert relative_error(lv.gradients[name], finite_difference(fn, params, name)) < 1e-4


def test_parameter_set_copy_digest_and_checkpoint():
    p = rand_params(np.random.default_rng(10))
    q = p.copy()
    assert p.equal(q) and p.digest() == q.digest()
    q.theta_G["clf_b"][0] += 1e-12
    assert not p.equal(q) and p.digest() != q.digest()
    back = ParameterSet.from_checkpoint(p.to_checkpoint(TrainConfig(N=3, hidden_dim=4, d_a=2, D_max=2).to_dict(), 3))
    assert back.equal(p)


def test_init_is_seeded():
    cfg = TrainConfig()
    assert init_params(5, cfg).equal(init_params(5, cfg))
    assert not init_params(5, cfg).equal(init_params(5, cfg, seed=1))
    assert float(init_params(5, cfg).theta_G["clf_b"].abs().max()) == 0.0
