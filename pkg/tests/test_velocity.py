import numpy as np
import pytest

from flowbridge import autodiff as ad
from flowbridge.embeddings import TaskSpec
from flowbridge.errors import ContractError
from flowbridge.tokens import RepBatch
from flowbridge.velocity import (ArchDescriptor, VelocityField, forward, init_params, param_count, param_shapes,
                                 predict_velocity)
from oracles import central_difference, relative_error

NETWORK_TOL = 1e-4


def _randomize(params, rng, scale=0.2):
    # zero-initialized modulation would make most block gradients vanish
    for t in params.arrays.values():
        t.data = t.data + scale * rng.standard_normal(t.shape).astype(t.data.dtype)


def _network_gradcheck(arch, rng, level=0, extra=None, per_array=2):
    params = init_params(arch, seed=1)
    _randomize(params, rng)
    spec = TaskSpec(arch.num_tasks - 1, arch.num_tasks, arch.task_embed_dim)
    r = rng.standard_normal((2, 4, arch.data_dim))
    tau = np.array([0.3, 0.8])
    weight = rng.standard_normal((2, 4, arch.data_dim))
    names = sorted(params.arrays)
    arrays = [params.arrays[n].data for n in names] + [r]

    def scalar():
        return float((forward(params, ad.Tensor(r), tau, level, spec, extra).data * weight).sum())

    r_t = ad.Tensor(r, requires_grad=True)
    with ad.GradTape() as tape:
        out = forward(params, r_t, tau, level, spec, extra)
        loss = ad.mul(ad.mean(ad.reshape(ad.mul(out, ad.Tensor(weight)), (-1,))), float(weight.size))
    grads = tape.backward(loss)
    coords = [rng.choice(a.size, size=min(per_array, a.size), replace=False) for a in arrays]
    numeric = central_difference(scalar, arrays, coords=coords)
    analytic = [grads[params.arrays[n]] for n in names] + [grads[r_t]]
    a = np.concatenate([x.reshape(-1)[c] for x, c in zip(analytic, coords)])
    n = np.concatenate([x.reshape(-1)[c] for x, c in zip(numeric, coords)])
    return relative_error(a, n)


def test_full_four_block_network_gradients(f64, rng):
    arch = ArchDescriptor(n_blocks=4, num_tasks=3)
    assert _network_gradcheck(arch, rng) < NETWORK_TOL


def test_mixer_multiscale_extra_conditioning_gradients(f64, rng):
    arch = ArchDescriptor(n_blocks=2, d_model=16, cond_dim=16, n_heads=2, data_dim=8, mixing="mlp_mixer",
                          level_factors=(1, 2), extra_cond_dim=8, num_tasks=2, task_embed_dim=4)
    extra = rng.standard_normal((2, 8))
    assert _network_gradcheck(arch, rng, level=1, extra=extra, per_array=4) < NETWORK_TOL


def test_modulation_starts_at_zero():
    params = init_params(ArchDescriptor(), seed=0)
    mods = [n for n in params.arrays if "mod/" in n]
    assert len(mods) == 2 * 5
    assert all(not params.arrays[n].data.any() for n in mods)


def test_init_is_seeded():
    a, b = init_params(ArchDescriptor(), 3), init_params(ArchDescriptor(), 3)
    assert all(np.array_equal(a.arrays[n].data, b.arrays[n].data) for n in a.arrays)
    c = init_params(ArchDescriptor(), 4)
    assert not np.array_equal(a.arrays["in/w"].data, c.arrays["in/w"].data)


def test_param_count_and_shapes():
    arch = ArchDescriptor()
    shapes = param_shapes(arch)
    assert param_count(arch) == sum(int(np.prod(s)) for s in shapes.values())
    assert shapes["cond/w1"][0] == 2 * 64 + 16
    noisy = ArchDescriptor(extra_cond_dim=32)
    assert noisy.cond_input_dim - arch.cond_input_dim == 32


@pytest.mark.parametrize("mixing", ["attention", "mlp_mixer"])
def test_token_permutation_equivariance(mixing, f64, rng):
    arch = ArchDescriptor(n_blocks=2, mixing=mixing)
    params = init_params(arch, 0)
    _randomize(params, rng)
    field = VelocityField(params)
    spec = TaskSpec(0, 1, 16)
    r = rng.standard_normal((3, 16, 32))
    perm = rng.permutation(16)
    out = field(r, 0.4, 0, spec)
    assert np.allclose(field(r[:, perm], 0.4, 0, spec), out[:, perm], atol=1e-12)


def test_conditioning_changes_output(f64, rng):
    arch = ArchDescriptor(n_blocks=1, num_tasks=2, level_factors=(1, 2))
    params = init_params(arch, 0)
    _randomize(params, rng)
    field = VelocityField(params)
    r = rng.standard_normal((2, 4, 32))
    base = field(r, 0.2, 0, TaskSpec(0, 2, 16))
    assert not np.allclose(base, field(r, 0.7, 0, TaskSpec(0, 2, 16)))
    assert not np.allclose(base, field(r, 0.2, 1, TaskSpec(0, 2, 16)))
    assert not np.allclose(base, field(r, 0.2, 0, TaskSpec(1, 2, 16)))


def test_contract_errors():
    params = init_params(ArchDescriptor(num_tasks=2), 0)
    spec = TaskSpec(0, 2, 16)
    with pytest.raises(ContractError):
        predict_velocity(params, RepBatch(np.zeros((1, 4, 8), np.float32)), 0.0, 0, spec)
    with pytest.raises(ContractError):
        predict_velocity(params, RepBatch(np.zeros((1, 4, 32), np.float32)), 0.0, 1, spec)
    with pytest.raises(ContractError):
        predict_velocity(params, RepBatch(np.zeros((1, 4, 32), np.float32)), 0.0, 0, TaskSpec(0, 3, 16))
    with pytest.raises(ContractError):
        predict_velocity(params, RepBatch(np.zeros((1, 4, 32), np.float32)), 1.5, 0, spec)
    noisy = init_params(ArchDescriptor(extra_cond_dim=32), 0)
    with pytest.raises(ContractError):
        VelocityField(noisy)(np.zeros((1, 4, 32)), 0.0, 0, TaskSpec(0, 1, 16))
    with pytest.raises(ContractError):
        ArchDescriptor(d_model=30, n_heads=4)
    with pytest.raises(ContractError):
        ArchDescriptor(mixing="conv")


def test_predict_velocity_returns_same_level():
    params = init_params(ArchDescriptor(level_factors=(1, 2)), 0)
    out = predict_velocity(params, RepBatch(np.ones((2, 4, 32), np.float32), level=1), 0.5, 1, TaskSpec(0, 1, 16))
    assert out.shape == (2, 4, 32) and out.level == 1 and out.data.dtype == np.float32
