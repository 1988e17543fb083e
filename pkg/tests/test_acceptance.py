"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line detail; the verdicts are printed together in
the "acceptance criteria" section at the end of the pytest run. Run just
this file with ``pytest tests/test_acceptance.py`` or
``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from qvae import checkpoint, cli
from qvae.data import load_dataset
from qvae.errors import CheckpointError
from qvae.gradcheck import check_tensors
from qvae.layers import (
    Layer, LayerKind, LayerSpec, QuaternionLayerWeights, count_parameters, count_weights, qconv2d_forward,
    qdense_forward, qtransposed_conv2d_forward, split_leaky_relu,
)
from qvae.model import LatentDistribution, QvaeConfig, build_model, features_to_quaternions, model_specs
from qvae.quaternion import Quaternion, QuaternionArray, qmul, to_left_matrix
from qvae.stats import KLVariant, ProperGaussianParams, improperness_measure, kl_proper, sample_proper, table1_check
from qvae.synthetic import write_synthetic_faces
from qvae.tensor import Tensor, conv2d, dense, transposed_conv2d
from qvae.training import TrainConfig, Trainer, evaluate_reconstruction

criterion = pytest.mark.criterion

ONE, I, J, K = (Quaternion(*row) for row in np.eye(4))
# left-multiplication matrices of the basis; L(q) is linear in q
BASIS_L = np.stack([to_left_matrix(q) for q in (ONE, I, J, K)])


def _detail(record_property, text):
    record_property("detail", text)


# 1 -------------------------------------------------------------------------------------------

@criterion(1, "Hamilton algebra oracle")
def test_hamilton_algebra(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    p, q = rng.normal(size=(100_000, 4)), rng.normal(size=(100_000, 4))
    worst = 0.0
    for a, b in zip(p, q):
        got = qmul(Quaternion(*a), Quaternion(*b)).as_array()
        worst = max(worst, float(np.max(np.abs(got - to_left_matrix(Quaternion(*a)) @ b))))
    minus_one = Quaternion(-1.0, 0.0, 0.0, 0.0)
    exact = [
        qmul(I, I) == minus_one, qmul(J, J) == minus_one, qmul(K, K) == minus_one,
        qmul(qmul(I, J), K) == minus_one,
        qmul(I, J) == K, qmul(J, K) == I, qmul(K, I) == J,
        qmul(J, I) == -K, qmul(K, J) == -I, qmul(I, K) == -J,
    ]
    elapsed = time.perf_counter() - start
    _detail(record_property, f"max |qmul - L(p)q| = {worst:.2e} over 1e5 pairs, "
                             f"{sum(exact)}/{len(exact)} basis identities exact, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert all(exact)
    assert elapsed < 5.0


# 2 -------------------------------------------------------------------------------------------

def _oracle_kernel(w: QuaternionLayerWeights, transposed: bool) -> np.ndarray:
    """Real kernel whose 4x4 blocks are left-multiplication matrices of the weight quaternions."""
    comps = np.stack([t.data.astype(np.float64) for t in w.components])  # (4, m, n, ...)
    m, n = comps.shape[1:3]
    blocks = np.einsum("krc,kmn...->rmcn...", BASIS_L, comps)  # (4, m, 4, n, ...)
    if transposed:
        # (in, out) storage: output component r is a column block, input component c a row block
        blocks = np.swapaxes(blocks, 0, 2)
    return blocks.reshape((4 * m, 4 * n) + comps.shape[3:])


def _geometry_grid(count, seed):
    rng = np.random.default_rng(seed)
    kinds = ["dense", "conv", "tconv"]
    out = []
    while len(out) < count:
        kind = kinds[len(out) % 3]
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k, stride, pad = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        size = int(rng.integers(3, 9))
        if kind == "conv" and (size + 2 * pad < k or (size + 2 * pad - k) % stride):
            continue
        if kind == "tconv" and (size - 1) * stride + k - 2 * pad < 1:
            continue
        out.append((kind, cin, cout, k, stride, pad, size))
    return out


@criterion(2, "Layer-structure oracle")
def test_layer_structure(record_property):
    start = time.perf_counter()
    grid = _geometry_grid(60, seed=2)
    worst = 0.0
    for idx, (kind, cin, cout, k, stride, pad, size) in enumerate(grid):
        rng = np.random.default_rng(1000 + idx)
        shape = {"dense": (cout, cin), "conv": (cout, cin, k, k), "tconv": (cin, cout, k, k)}[kind]
        w = QuaternionLayerWeights(*(Tensor((0.3 * rng.normal(size=shape)).astype(np.float32)) for _ in range(4)),
                                   bias=Tensor(rng.normal(size=4 * cout).astype(np.float32)))
        if kind == "dense":
            x = Tensor(rng.normal(size=(3, 4 * cin)).astype(np.float32))
            got = qdense_forward(x, w).data
            ref = dense(x, Tensor(_oracle_kernel(w, False).astype(np.float32)), w.bias).data
        else:
            x = Tensor(rng.normal(size=(2, 4 * cin, size, size)).astype(np.float32))
            if kind == "conv":
                got = qconv2d_forward(x, w, stride, pad).data
                ref = conv2d(x, Tensor(_oracle_kernel(w, False).astype(np.float32)), w.bias, stride, pad).data
            else:
                got = qtransposed_conv2d_forward(x, w, stride, pad).data
                ref = transposed_conv2d(x, Tensor(_oracle_kernel(w, True).astype(np.float32)), w.bias,
                                        stride, pad).data
        assert got.dtype == np.float32
        worst = max(worst, float(np.max(np.abs(got - ref))))
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{len(grid)} configurations (dense/conv/tconv), max abs diff {worst:.2e} "
                             f"in float32, {elapsed:.2f}s")
    assert len(grid) >= 50
    assert worst <= 1e-6
    assert elapsed < 120.0


# 3 -------------------------------------------------------------------------------------------

LAYER_CASES = [
    (LayerSpec(LayerKind.QCONV, 8, 4, 3, 1, 1), (2, 8, 5, 5)),
    (LayerSpec(LayerKind.QCONV, 4, 8, 4, 2, 1), (2, 4, 6, 6)),
    (LayerSpec(LayerKind.QTRANSPOSED_CONV, 8, 4, 4, 2, 1), (2, 8, 3, 3)),
    (LayerSpec(LayerKind.QDENSE, 12, 8), (3, 12)),
    (LayerSpec(LayerKind.REAL_CONV, 3, 5, 3, 2, 1), (2, 3, 7, 7)),
    (LayerSpec(LayerKind.REAL_TRANSPOSED_CONV, 3, 2, 4, 2, 1), (2, 3, 3, 3)),
    (LayerSpec(LayerKind.REAL_DENSE, 6, 5), (3, 6)),
]


@criterion(3, "Gradient correctness")
def test_gradients(record_property):
    start = time.perf_counter()
    errors = {}
    for i, (spec, in_shape) in enumerate(LAYER_CASES):
        layer = Layer.create(spec, seed=i, dtype=np.float64)
        rng = np.random.default_rng(50 + i)
        x = Tensor(rng.normal(size=in_shape), requires_grad=True)
        for _, t in layer.parameters():
            t.data = t.data + 0.1 * rng.normal(size=t.shape)  # non-zero biases
        target = Tensor(rng.normal(size=layer(x).shape))
        tensors = [x] + [t for _, t in layer.parameters()]
        err = check_tensors(lambda: (split_leaky_relu(layer(x), 0.2) * target).sum(), tensors)
        errors[spec.kind.value] = max(errors.get(spec.kind.value, 0.0), err)

    model = build_model(QvaeConfig(encoder_channels=(4, 8), latent_dim=2, input_size=4, lambda_kl=0.5,
                                   dtype="float64"))
    rng = np.random.default_rng(3)
    x = np.zeros((2, 4, 4, 4))
    x[:, 1:] = rng.uniform(0.05, 0.95, size=(2, 3, 4, 4))
    params = [t for _, t in model.parameters()]
    errors["QVAE loss"] = check_tensors(lambda: model.forward_loss(x, rng=np.random.default_rng(7))[0], params)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    _detail(record_property, f"worst relative error {worst:.2e} over {len(errors) - 1} layer kinds and "
                             f"the QVAE loss ({errors['QVAE loss']:.1e}, {sum(t.size for t in params)} params), "
                             f"{elapsed:.1f}s")
    for name, err in errors.items():
        assert err < 1e-5, name
    assert elapsed < 120.0


# 4 -------------------------------------------------------------------------------------------

@criterion(4, "Properness suite")
def test_properness(record_property):
    start = time.perf_counter()
    n = 1_000_000
    var = 0.7
    mean = QuaternionArray(np.array([[0.5], [-1.0], [2.0], [0.25]]))
    direct = sample_proper(ProperGaussianParams(mean, var), n, seed=4)
    model = build_model(QvaeConfig(encoder_channels=(4, 8), latent_dim=1, input_size=8, dtype="float64"))
    mu = Tensor(np.broadcast_to(mean.planes[:, 0], (n, 4)).copy())
    lv = Tensor(np.full((n, 1), math.log(var)))
    reparam = features_to_quaternions(model.reparameterize(LatentDistribution(mu, lv), 5).data)
    failures = []
    for name, draws in (("sample_proper", direct), ("reparameterize", reparam)):
        for identity, (obs, exp, tol, ok) in table1_check(draws, var).items():
            if not ok:
                failures.append(f"{name} {identity}: {obs:.5f} vs {exp} +- {tol:.5f}")
    imp = {name: improperness_measure(d) for name, d in (("sample_proper", direct), ("reparameterize", reparam))}
    real_only = improperness_measure(QuaternionArray.real(np.random.default_rng(6).normal(size=(n, 1))))
    elapsed = time.perf_counter() - start
    _detail(record_property, f"Table-1 failures {len(failures)}, improperness proper "
                             f"{max(imp.values()):.2e}, real-only {real_only:.4f}, {elapsed:.1f}s")
    assert not failures, failures
    assert max(imp.values()) <= 0.01
    assert real_only == pytest.approx(3.0, rel=0.05)
    assert elapsed < 60.0


# 5 -------------------------------------------------------------------------------------------

def _mc_kl(mu, var, n, seed):
    """E_q[log q - log p] for the equivalent 4N-dim real Gaussians."""
    rng = np.random.default_rng(seed)
    mean = mu.T.reshape(-1)
    cov = np.repeat(var, 4)
    x = mean + np.sqrt(cov) * rng.standard_normal((n, mean.size))
    logq = multivariate_normal(mean, np.diag(cov)).logpdf(x)
    logp = multivariate_normal(np.zeros(mean.size), np.eye(mean.size)).logpdf(x)
    return float(np.mean(logq - logp))


@criterion(5, "KL correctness")
def test_kl(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(20)
    grid_err = 0.0
    for _ in range(20):
        dim = int(rng.integers(1, 5))
        mu = rng.normal(size=(4, dim))
        var = rng.uniform(0.05, 4, size=dim)
        by_hand = 0.0
        for k in range(dim):
            by_hand += 0.5 * (var[k] + sum(mu[c, k] ** 2 for c in range(4)) - 1) - 2 * math.log(var[k])
        got = kl_proper(ProperGaussianParams(QuaternionArray(mu), var), KLVariant.PAPER_EXACT)
        grid_err = max(grid_err, abs(got - by_hand))
    mc_err = 0.0
    for mu, var in ((np.zeros((4, 1)), np.array([math.e])), (rng.normal(size=(4, 2)), np.array([0.3, 2.2]))):
        exact = kl_proper(ProperGaussianParams(QuaternionArray(mu), var), KLVariant.REAL_AUGMENTED)
        mc_err = max(mc_err, abs(_mc_kl(mu, var, 1_000_000, seed=2) - exact) / abs(exact))
    at_prior = [kl_proper(ProperGaussianParams.standard(3), v) for v in KLVariant]
    elapsed = time.perf_counter() - start
    _detail(record_property, f"grid max abs err {grid_err:.1e} (20 cases), MC rel err {mc_err:.2%}, "
                             f"KL at prior {at_prior}, {elapsed:.1f}s")
    assert grid_err <= 1e-10
    assert mc_err <= 0.01
    assert all(v == 0.0 for v in at_prior)
    assert elapsed < 60.0


# 6 -------------------------------------------------------------------------------------------

@criterion(6, "Parameter-reduction claim")
def test_parameter_reduction(record_property):
    start = time.perf_counter()
    q_specs = model_specs(QvaeConfig(model="qvae"))
    r_specs = model_specs(QvaeConfig(model="vae"))
    per_layer = {}
    for name, spec in q_specs.items():
        if not spec.kind.is_dense:
            per_layer[name] = (count_weights(spec), count_weights(r_specs[name]))
    q_total = sum(count_parameters(s) for s in q_specs.values())
    r_total = sum(count_parameters(s) for s in r_specs.values())
    elapsed = time.perf_counter() - start
    _detail(record_property, f"{len(per_layer)} conv layers at exactly 1/4, totals qvae {q_total:,} vs "
                             f"vae {r_total:,} (ratio {q_total / r_total:.4f}; published 1,404,996 vs 3,762,539)")
    for name, (q, r) in per_layer.items():
        assert 4 * q == r, name
    assert q_total < 0.5 * r_total
    assert elapsed < 1.0


# 7 / 8 ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def faces_200(tmp_path_factory):
    d = tmp_path_factory.mktemp("faces200")
    write_synthetic_faces(d, 200, size=32, seed=0)
    return load_dataset(d, 32)


DESK_TRAIN = TrainConfig(epochs=15, batch_size=8, lr=5e-4)


def _train(config, dataset):
    trainer = Trainer(config, DESK_TRAIN, dataset)
    records = [trainer.run_epoch() for _ in range(DESK_TRAIN.epochs)]
    return trainer, records


def _snapshot(trainer):
    return [t.data.tobytes() for _, t in trainer.model.parameters()]


@pytest.mark.slow
@criterion(7, "Desk-scale learning")
def test_desk_scale_learning(record_property, faces_200):
    start = time.perf_counter()
    config = QvaeConfig(input_size=32)
    trainer, records = _train(config, faces_200)
    bce = [r.bce for r in records]
    finite = all(math.isfinite(s.loss) for r in records for s in r.steps)
    drop = 1 - bce[-1] / bce[0]
    score = evaluate_reconstruction(trainer.model, faces_200)["ssim"]
    rerun, _ = _train(config, faces_200)
    identical = _snapshot(trainer) == _snapshot(rerun)
    elapsed = time.perf_counter() - start
    _detail(record_property, f"BCE {bce[0]:.4f} -> {bce[-1]:.4f} (drop {drop:.1%}), SSIM {score:.3f}, "
                             f"finite={finite}, rerun bitwise={identical}, {elapsed:.0f}s")
    assert finite
    assert drop >= 0.40
    assert score >= 0.6
    assert identical
    assert elapsed < 30 * 60


@pytest.mark.slow
@criterion(8, "Baseline comparability")
def test_baseline_comparability(record_property, faces_200, capsys):
    start = time.perf_counter()
    _, records = _train(QvaeConfig(input_size=32, model="vae"), faces_200)
    finite = all(math.isfinite(s.loss) for r in records for s in r.steps)
    capsys.readouterr()
    assert cli.main(["params"]) == 0
    report = capsys.readouterr().out
    ratio_line = next(ln for ln in report.splitlines() if ln.startswith("ratio qvae/vae conv weights"))
    elapsed = time.perf_counter() - start
    _detail(record_property, f"real VAE loss {records[0].loss:.4f} -> {records[-1].loss:.4f}, "
                             f"finite={finite}; '{ratio_line}', {elapsed:.0f}s")
    assert finite and math.isfinite(records[-1].loss)
    assert ratio_line.endswith("0.250000")
    assert elapsed < 30 * 60


# 9 -------------------------------------------------------------------------------------------

@criterion(9, "Serialization")
def test_serialization(record_property, tmp_path, faces_200):
    from qvae.data import Dataset

    data = Dataset(faces_200.items[:40], 32)
    config, tc = QvaeConfig(input_size=32, seed=3), TrainConfig(epochs=2, batch_size=8, lr=5e-4)
    straight = Trainer(config, tc, data)
    straight.run_epoch()
    straight.run_epoch()

    first = Trainer(config, tc, data)
    first.run_epoch()
    path = tmp_path / "one.qvae"
    first.save(path)
    resumed = Trainer.from_checkpoint(path, data)
    resumed.run_epoch()
    identical = (_snapshot(resumed) == _snapshot(straight)
                 and all(a.tobytes() == b.tobytes() for a, b in zip(resumed.opt.m + resumed.opt.v,
                                                                     straight.opt.m + straight.opt.v)))

    blob = path.read_bytes()
    rejected = []
    for label, bad in (("magic", b"QVAF" + blob[4:]),
                       ("version", blob[:4] + (2).to_bytes(4, "little") + blob[8:])):
        with pytest.raises(CheckpointError) as info:
            checkpoint.decode(bad)
        rejected.append(label if label in str(info.value) else f"{label}?")
    flipped = bytearray(blob)
    flipped[-100] ^= 0x01
    (tmp_path / "bad.qvae").write_bytes(bytes(flipped))
    code = cli.main(["generate", "--ckpt", str(tmp_path / "bad.qvae"), "--out", str(tmp_path)])
    _detail(record_property, f"resume bitwise={identical}, rejected {rejected}, corrupt file exit {code}")
    assert identical
    assert rejected == ["magic", "version"]
    assert code == 3


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
