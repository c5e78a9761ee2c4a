import numpy as np
import pytest
from hypothesis import given, strategies as st

from unitslab import recon, tensor
from oracles import circular_conv_stage, finite_difference


def rand_c(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(0)
    image = tensor.make_phantom(12, 12, 4, seed=1)
    coils = tensor.make_coils(12, 12, 2, seed=2)
    mask = rng.random((12, 12, 4)) < 0.4
    y = tensor.forward_op(image, coils, mask)
    return y, mask, coils


def test_param_count_and_shapes():
    p = recon.init_params()
    assert p.num_real() == 6750
    assert p["u0.s1"].shape == (4, 1, 5, 5, 1)
    assert p["u5.t2"].shape == (1, 4, 1, 1, 3)
    assert all(float(p[f"u{u}.eta"]) > 0 for u in range(6))
    assert all(np.all(p[f"u{u}.b1"] >= 0) for u in range(6))


@given(seed=st.integers(0, 1000))
def test_vector_round_trip(seed):
    p = recon.init_params(unrolls=2, channels=2, seed=seed)
    q = p.from_vector(p.to_vector())
    assert all(np.array_equal(p[k], q[k]) and p[k].dtype == q[k].dtype for k in p.names())
    with pytest.raises(ValueError):
        p.from_vector(np.zeros(3))


def test_zero_input_zero_output(small_problem):
    _, mask, coils = small_problem
    p = recon.init_params(unrolls=3, zero_regularizer=True)
    out = recon.reconstruct(p, np.zeros((12, 12, 4, 2), complex), mask, coils)
    assert np.all(out == 0)


def test_zero_step_passthrough(small_problem):
    y, mask, coils = small_problem
    p = recon.init_params(unrolls=3, zero_regularizer=True, eta=0.0)
    out = recon.reconstruct(p, y, mask, coils)
    assert np.allclose(out, tensor.forward_op(tensor.adjoint_op(y, coils, mask), coils), atol=1e-12)


def test_dc_fixed_point_on_consistent_data():
    rng = np.random.default_rng(1)
    coils = tensor.make_coils(8, 8, 1)
    y = rand_c(rng, (8, 8, 2, 1))
    p = recon.init_params(unrolls=1, zero_regularizer=True)
    out = recon.reconstruct(p, y, np.ones((8, 8, 2), bool), coils)
    assert np.max(np.abs(out - y)) < 1e-8


def test_dc_only_monotone_residual(small_problem):
    y, mask, coils = small_problem
    # power iteration bound on the normal operator
    rng = np.random.default_rng(0)
    v = rand_c(rng, (12, 12, 4))
    for _ in range(50):
        v = tensor.normal_op(v, coils, mask)
        lam = np.linalg.norm(v)
        v /= lam
    eta = 1.5 / lam
    p = recon.init_params(unrolls=8, zero_regularizer=True, eta=eta)
    _, tape = recon.forward(p, y, mask, coils)
    res = [np.linalg.norm(tensor.forward_op(x, coils, mask) - y) for x in tape.xs]
    assert all(b < a for a, b in zip(res, res[1:]))


def test_unrolled_dc_matches_manual_iteration(small_problem):
    y, mask, coils = small_problem
    p = recon.init_params(unrolls=4, zero_regularizer=True, eta=0.7)
    x = tensor.adjoint_op(y, coils, mask)
    for _ in range(4):
        x = x - 0.7 * tensor.adjoint_op(tensor.forward_op(x, coils, mask) - y, coils, mask)
    assert np.allclose(recon.reconstruct(p, y, mask, coils), tensor.forward_op(x, coils), atol=1e-12)


def test_bounded_at_init(small_problem):
    y, mask, coils = small_problem
    p = recon.init_params(seed=3)
    _, tape = recon.forward(p, y, mask, coils)
    scale = np.linalg.norm(y)
    assert max(np.linalg.norm(x) for x in tape.xs) < 1e3 * scale


def test_divergence_guard(small_problem):
    y, mask, coils = small_problem
    p = recon.init_params(unrolls=3, zero_regularizer=True, eta=1e4)
    with pytest.raises(recon.DivergenceError, match="divergence at unroll"):
        recon.reconstruct(p, y, mask, coils)


def test_conv_stage_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rand_c(rng, (7, 6, 4, 2))
    s = rand_c(rng, (3, 2, 5, 5, 1))
    t = rand_c(rng, (2, 3, 1, 1, 3))
    assert np.allclose(recon.conv_stage(x, s, t), circular_conv_stage(x, s, t), atol=1e-10)


def _real_grad_check(f, z, g, h=1e-6, n=12, seed=0):
    """Compare packed complex gradient ``g`` of real ``f`` at ``z`` with central differences."""
    rng = np.random.default_rng(seed)
    flat = z.reshape(-1)
    gf = g.reshape(-1)
    for i in rng.choice(flat.size, size=min(n, flat.size), replace=False):
        for part, unit in (("re", 1.0), ("im", 1j)):
            base = flat[i]
            flat[i] = base + h * unit
            fp = f()
            flat[i] = base - h * unit
            fm = f()
            flat[i] = base
            fd = (fp - fm) / (2 * h)
            an = gf[i].real if part == "re" else gf[i].imag
            assert abs(fd - an) <= 1e-6 * max(1.0, abs(fd))


def test_conv_stage_backward_fd():
    rng = np.random.default_rng(3)
    x = rand_c(rng, (6, 5, 4, 2))
    s = rand_c(rng, (3, 2, 5, 5, 1))
    t = rand_c(rng, (2, 3, 1, 1, 3))
    w = rand_c(rng, (6, 5, 4, 2))
    f = lambda: float(np.real(np.vdot(w, recon.conv_stage(x, s, t))))  # noqa: E731
    gx, gs, gt = recon.conv_stage_backward(w, x, s, t)
    _real_grad_check(f, x, gx)
    _real_grad_check(f, s, gs)
    _real_grad_check(f, t, gt)


def test_modrelu_backward_fd_away_from_kink():
    rng = np.random.default_rng(4)
    z = rand_c(rng, (5, 4, 3)) + 0.5
    b = np.array([-0.3, 0.2, 0.05])
    keep = np.abs(np.abs(z) + b) > 0.1
    z = np.where(keep, z, 2.0 + 0j)
    w = rand_c(rng, z.shape)
    f = lambda: float(np.real(np.vdot(w, recon.modrelu(z, b))))  # noqa: E731
    gz, gb = recon.modrelu_backward(w, z, b)
    _real_grad_check(f, z, gz)
    h = 1e-6
    for c in range(3):
        bp, bm = b.copy(), b.copy()
        bp[c] += h
        bm[c] -= h
        fd = (np.real(np.vdot(w, recon.modrelu(z, bp))) - np.real(np.vdot(w, recon.modrelu(z, bm)))) / (2 * h)
        assert gb[c] == pytest.approx(fd, rel=1e-6, abs=1e-8)


@given(seed=st.integers(0, 10_000), b=st.floats(-1, 1))
def test_modrelu_preserves_phase(seed, b):
    z = rand_c(np.random.default_rng(seed), (20, 1))
    out = recon.modrelu(z, np.array([b]))
    on = np.abs(out) > 0
    assert np.allclose(np.angle(out[on]), np.angle(z[on]), atol=1e-10)
    assert np.allclose(np.abs(out), np.maximum(np.abs(z) + b, 0), atol=1e-10)


def _loss_and_grad(p, y, mask, coils, target):
    k, tape = recon.forward(p, y, mask, coils)
    d = k - target
    return float(np.sum(np.abs(d) ** 2)), recon.backward(p, y, mask, coils, 2 * d, tape)


def test_full_model_gradient_fd(small_problem):
    y, mask, coils = small_problem
    target = tensor.forward_op(tensor.make_phantom(12, 12, 4, seed=1), coils)
    p = recon.init_params(unrolls=2, seed=5)
    _, g = _loss_and_grad(p, y, mask, coils, target)
    rng = np.random.default_rng(0)
    picks = []
    for name in p.names():
        arr = p[name]
        i = int(rng.integers(arr.size))
        picks.append((name, i, "re"))
        if np.iscomplexobj(arr):
            picks.append((name, i, "im"))
    f = lambda q: _loss_and_grad(q, y, mask, coils, target)[0]  # noqa: E731
    fd = finite_difference(f, p, picks)
    an = np.array([g[n].reshape(-1)[i].real if part == "re" else g[n].reshape(-1)[i].imag
                   for n, i, part in picks])
    rel = np.abs(fd - an) / np.maximum(np.abs(fd), 1e-6)
    assert np.max(rel) < 1e-4


def test_zero_cotangent_zero_gradient(small_problem):
    y, mask, coils = small_problem
    p = recon.init_params(unrolls=2, seed=1)
    g = recon.backward(p, y, mask, coils, np.zeros_like(y))
    assert g.global_norm() == 0.0
    assert "u2.s1" not in g.arrays and set(g.names()) == set(p.names())


def test_eta_gradient_fd(small_problem):
    y, mask, coils = small_problem
    target = tensor.forward_op(tensor.make_phantom(12, 12, 4, seed=1), coils)
    p = recon.init_params(unrolls=3, zero_regularizer=True, eta=0.5)
    _, g = _loss_and_grad(p, y, mask, coils, target)
    f = lambda q: _loss_and_grad(q, y, mask, coils, target)[0]  # noqa: E731
    fd = finite_difference(f, p, [(f"u{u}.eta", 0, "re") for u in range(3)], h=1e-6)
    assert np.allclose(fd, [float(g[f"u{u}.eta"]) for u in range(3)], rtol=1e-6)


def test_linear_predict():
    m = recon.LinearLookupModel(4)
    y = np.array([1, 2j, 3, 4 - 1j])
    m.set("1111", np.eye(4), np.zeros(4))
    assert np.array_equal(recon.linear_predict(m, y, "1111"), y)
    mu = np.array([0.5, 1j, -1, 2])
    m.set("0000", np.zeros((4, 4)), mu)
    assert np.array_equal(recon.linear_predict(m, y, "0000"), mu)
    out = recon.linear_predict(m, y, "1010")
    assert np.array_equal(out, y) and m.missing_hits == 1
    with pytest.raises(ValueError):
        m.set("1", np.full((4, 4), np.nan), np.zeros(4))


def test_linear_predict_matvec_frozen():
    rng = np.random.default_rng(3)
    W = rand_c(rng, (4, 4))
    y = rand_c(rng, 4)
    b = rng.normal(size=4) + 0j
    m = recon.LinearLookupModel(4)
    m.set("k", W, b)
    out = recon.linear_predict(m, y, "k")
    expected = [2.4446248435169453 - 7.595349748296901j, -1.9944133595032962 + 4.015308336883009j,
                0.8424778934255679 + 6.361247242011894j, -5.120744989603567 + 1.8680479479734364j]
    assert np.allclose(out, expected, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    p = recon.init_params(unrolls=2, seed=4)
    p.step = 17
    recon.save_checkpoint(tmp_path / "ck", p, {"seed": 4})
    q, manifest = recon.load_checkpoint(tmp_path / "ck")
    assert q.step == 17 and manifest["seed"] == 4
    assert all(np.array_equal(p[k], q[k]) for k in p.names())
    assert manifest["tensors"][0]["name"] == "u0.s1"
