import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space

from blockade_sim.lindblad import (
    DegenerateSteadyStateError, IntegrationError, PropagationConfig, TimeTrace, dissipator,
    evolve_exact, hermitian_basis, lindblad_rhs, liouvillian, model_liouvillian, propagate,
    rk45_linear, sample_times, steady_state, unitary_evolution,
)
from blockade_sim.qmodel import (
    S02, S11, T0, DensityMatrix, NoiseChannel, SystemParams, build_hamiltonian, build_jump_operator,
)
from blockade_sim.ratefit import local_maxima


def projector(i):
    return DensityMatrix.basis_state(i).entries


def random_density(rng, n=3):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


# ----------------------------------------------------------- dissipator ---

def test_mixed_state_fixed_point_of_dephasing():
    d = dissipator(build_jump_operator(NoiseChannel.dephasing(0.2)), np.eye(3) / 3)
    np.testing.assert_allclose(d, 0, atol=1e-15)


def test_relaxation_depopulates_s11():
    d = dissipator(build_jump_operator(NoiseChannel.relaxation(1.0)), projector(S11))
    np.testing.assert_allclose(d, projector(S02) - projector(S11), atol=1e-15)


def test_relaxation_leaves_t0_alone():
    d = dissipator(build_jump_operator(NoiseChannel.relaxation(2.0)), projector(T0))
    np.testing.assert_array_equal(d, 0)


def test_dissipator_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        dissipator(np.eye(3), np.eye(4) / 4)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["dephasing", "relaxation"]),
       st.floats(1e-2, 1e3))
def test_dissipator_traceless_and_hermitian(seed, kind, tc):
    rho = random_density(np.random.default_rng(seed))
    d = dissipator(build_jump_operator(NoiseChannel(kind, tc)), rho)
    assert abs(np.trace(d)) < 1e-12 * max(1.0, 1 / tc)
    np.testing.assert_allclose(d, d.conj().T, atol=1e-12 / tc)


@given(st.integers(0, 2 ** 32 - 1))
def test_vectorized_generator_matches_matrix_form(seed):
    rng = np.random.default_rng(seed)
    p = SystemParams(rng.uniform(1, 200), rng.uniform(0, 10), rng.uniform(0, 0.1))
    c = NoiseChannel("relaxation" if seed % 2 else "dephasing", rng.uniform(0.1, 100))
    rho = random_density(rng)
    direct = lindblad_rhs(build_hamiltonian(p), build_jump_operator(c), rho)
    vec = (model_liouvillian(p, c) @ rho.reshape(-1)).reshape(3, 3)
    np.testing.assert_allclose(vec, direct, atol=1e-10)


def test_hermitian_basis_orthonormal():
    b = hermitian_basis(3)
    gram = np.einsum("aij,bji->ab", b, b)
    np.testing.assert_allclose(gram, np.eye(9), atol=1e-15)
    for m in b:
        np.testing.assert_array_equal(m, m.conj().T)


# ------------------------------------------------------------ propagate ---

def test_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(t_end=10.0, dt_max=20.0)
    with pytest.raises(ValueError):
        PropagationConfig(t_end=10.0, rtol=0.1)
    with pytest.raises(ValueError):
        PropagationConfig(t_end=-1.0)
    with pytest.raises(ValueError):
        PropagationConfig(t_end=10.0, method="euler")


def test_default_sampling_resolves_oscillation(device):
    times = sample_times(device, PropagationConfig(t_end=100.0))
    # J ~ 64 MHz, so 20 samples per period means a spacing below 1 ns
    assert np.diff(times).max() < 1 / (20 * 0.064)


def test_requires_config(device, dephasing):
    with pytest.raises(ValueError):
        propagate(device, dephasing)


def test_dephasing_trace_oscillates_then_saturates(device, dephasing):
    tr = propagate(device, dephasing, None, PropagationConfig(t_end=4e4, max_samples=40_000))
    p_t0 = tr.population(T0)
    assert p_t0[0] == pytest.approx(1.0)
    assert local_maxima(p_t0[tr.times < 2000]).size >= 4  # damped oscillation
    assert abs(p_t0[-1] - 1 / 3) < 1e-3


@pytest.mark.parametrize("channel", [NoiseChannel.dephasing(0.2), NoiseChannel.relaxation(150.0)])
def test_no_zeeman_difference_freezes_t0(channel):
    tr = propagate(SystemParams(140.0, 3.0, 0.0), channel, None, PropagationConfig(t_end=1e5))
    np.testing.assert_allclose(tr.population(T0), 1.0, atol=1e-12)


def test_relaxation_polarizes_into_s02(device, relaxation):
    tr = propagate(device, relaxation, None, PropagationConfig(t_end=1e6))
    assert tr.final_state.populations()[S02] > 0.999


@settings(max_examples=12)
@given(st.floats(20, 300), st.floats(0.5, 10), st.floats(0.001, 0.1),
       st.sampled_from(["dephasing", "relaxation"]), st.floats(0.05, 500))
def test_physicality_over_six_decades(eps, t, dez, kind, tc):
    cfg = PropagationConfig(t_end=1e6, max_samples=3000, keep_states=True)
    states = propagate(SystemParams(eps, t, dez), NoiseChannel(kind, tc), None, cfg).states
    assert np.abs(np.trace(states, axis1=1, axis2=2) - 1).max() < 1e-9
    assert np.abs(states - np.conj(np.swapaxes(states, 1, 2))).max() < 1e-10
    assert np.linalg.eigvalsh(states).min() > -1e-8


@pytest.mark.parametrize("method, tol", [("expm", 1e-10), ("rk45", 1e-7)])
def test_unitary_limit(device, method, tol):
    times = np.linspace(0, 200, 41)
    cfg = PropagationConfig(t_end=200.0, times=tuple(times), keep_states=True, method=method,
                            rtol=1e-10, atol=1e-12)
    exact = unitary_evolution(device, None, times)
    assert np.abs(propagate(device, None, None, cfg).states - exact).max() < tol
    # a vanishing dissipator converges onto the same evolution
    weak = propagate(device, NoiseChannel.dephasing(1e12), None, cfg).states
    assert np.abs(weak - exact).max() < tol


@pytest.mark.parametrize("method, kwargs", [
    ("expm", {}),
    ("rk45", dict(rtol=1e-10, atol=1e-12)),
])
@pytest.mark.parametrize("channel", [NoiseChannel.dephasing(0.2), NoiseChannel.relaxation(1.0)])
def test_matches_direct_expm_at_random_checkpoints(device, rng, method, kwargs, channel):
    checkpoints = np.sort(rng.uniform(0, 50, size=10))
    rho0 = random_density(rng)
    cfg = PropagationConfig(t_end=50.0, times=tuple(checkpoints), keep_states=True, method=method,
                            **kwargs)
    got = propagate(device, channel, rho0, cfg).states
    oracle = evolve_exact(device, channel, rho0, checkpoints)
    assert np.abs(got - oracle).max() < 1e-7


def test_rk45_default_tolerances_dephasing(device, dephasing, rng):
    checkpoints = np.sort(rng.uniform(0, 50, size=10))
    cfg = PropagationConfig(t_end=50.0, times=tuple(checkpoints), keep_states=True, method="rk45")
    got = propagate(device, dephasing, None, cfg).states
    assert np.abs(got - evolve_exact(device, dephasing, None, checkpoints)).max() < 1e-7


def test_rk45_scalar_decay():
    times = np.linspace(0, 5, 11)
    y = rk45_linear(np.array([[-1.0]]), np.array([1.0]), times, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(y[:, 0].real, np.exp(-times), rtol=1e-8)


def test_rk45_underflow_reports_time():
    with pytest.raises(IntegrationError) as info:
        rk45_linear(np.array([[1e20]]), np.array([1.0]), np.array([1.0]))
    assert info.value.t_reached == 0.0


def test_time_trace_validation():
    final = DensityMatrix.basis_state(T0)
    with pytest.raises(ValueError, match="sum"):
        TimeTrace(np.array([0.0, 1.0]), np.array([[0, 0, 1], [0, 0.5, 0.6]]), final)
    with pytest.raises(ValueError, match="increasing"):
        TimeTrace(np.array([1.0, 0.0]), np.array([[0, 0, 1], [0, 0, 1]]), final)


# --------------------------------------------------------- steady state ---

def null_space_oracle(p, c):
    """Stationary state from scipy's null space of an independently built generator."""
    h = build_hamiltonian(p)
    a = build_jump_operator(c)
    cols = []
    for k in range(9):
        e = np.zeros(9, dtype=complex)
        e[k] = 1
        cols.append(lindblad_rhs(h, a, e.reshape(3, 3)).reshape(-1))
    v = null_space(np.array(cols).T)
    assert v.shape[1] == 1
    rho = v[:, 0].reshape(3, 3)
    return rho / np.trace(rho)


@pytest.mark.parametrize("params", [SystemParams(140.0, 3.0, 0.02), SystemParams(30.0, 1.0, 0.3)])
def test_dephasing_steady_state_is_maximally_mixed(params, dephasing):
    ss = steady_state(params, dephasing)
    np.testing.assert_allclose(ss.entries, np.eye(3) / 3, atol=1e-9)


def test_relaxation_steady_state(device, relaxation):
    ss = steady_state(device, relaxation)
    assert ss.populations()[S02] > 0.999
    np.testing.assert_allclose(ss.entries, null_space_oracle(device, relaxation), atol=1e-9)


def test_degenerate_null_space_reported(relaxation):
    p = SystemParams(140.0, 0.0, 0.0)
    with pytest.raises(DegenerateSteadyStateError) as info:
        steady_state(p, relaxation)
    assert len(info.value.basis) == 2


def test_degenerate_null_space_resolved_by_reference(relaxation):
    p = SystemParams(140.0, 0.0, 0.0)
    ref = np.diag([0.25, 0.0, 0.75])
    ss = steady_state(p, relaxation, reference=ref)
    np.testing.assert_allclose(ss.entries, ref, atol=1e-12)


def test_liouvillian_kernel_matches_long_propagation(device, relaxation):
    tr = propagate(device, relaxation, None, PropagationConfig(t_end=1e6, max_samples=100))
    np.testing.assert_allclose(tr.final_state.entries, steady_state(device, relaxation).entries,
                               atol=1e-6)


def test_liouvillian_empty_jump_list_is_unitary(device):
    gen = liouvillian(build_hamiltonian(device))
    np.testing.assert_allclose(gen.conj().T, -gen, atol=1e-14)
