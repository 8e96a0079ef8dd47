import numpy as np
import pytest

from romuq.datagen import Grid, NormStats, ParamPoint, Trajectory
from romuq.training import ModelCheckpoint, TrainConfig, train
from romuq.transformer import LatentTransformer, TransformerConfig
from romuq.uq import (UncertaintyField, aggregate_param, aggregate_time,
                      confidence_interval, ensemble_noise, member_noise,
                      second_pass, write_nu_xi_csv, write_uq_csvs)
from romuq.vae import Vae, VaeConfig
from romuq.training import LossWeights


def make_checkpoint(seed=0, state_dim=8, latent_dim=2):
    cfg = TrainConfig(
        vae=VaeConfig(state_dim=state_dim, latent_dim=latent_dim, hidden=(12,),
                      param_dim=1, embed_dim=3),
        transformer=TransformerConfig(lookback=3, horizon=3,
                                      latent_dim=latent_dim, width=8, heads=2,
                                      blocks=1, param_dim=1),
        loss=LossWeights(), epochs=1, batch_size=8, lr=1e-3)
    rng = np.random.default_rng(seed)
    vae = Vae(cfg.vae, rng)
    tf = LatentTransformer(cfg.transformer, rng)
    stats = NormStats(mean=np.zeros(state_dim), std=np.ones(state_dim),
                      floored=np.zeros(state_dim, dtype=bool))
    return ModelCheckpoint(vae=vae, transformer=tf, config=cfg, stats=stats,
                           seed=seed)


XI = ParamPoint.of(mu=0.4)


# -------------------------------------------------------------- noise streams


def test_member_noise_is_reproducible_and_stream_separated():
    a = member_noise(7, 3, 11, 5)
    b = member_noise(7, 3, 11, 5)
    assert a.tobytes() == b.tobytes()
    assert member_noise(7, 4, 11, 5).tobytes() != a.tobytes()
    assert member_noise(7, 3, 12, 5).tobytes() != a.tobytes()
    assert member_noise(8, 3, 11, 5).tobytes() != a.tobytes()


def test_ensemble_noise_matches_member_streams():
    noise = ensemble_noise(1, 3, 4, 2)
    assert noise.shape == (3, 4, 2)
    np.testing.assert_array_equal(noise[2, 3], member_noise(1, 2, 3, 2))


# ---------------------------------------------------------------- second_pass


def test_degenerate_encoder_gives_zero_uncertainty():
    ckpt = make_checkpoint()
    # force sigma -> 0 everywhere: zero weights, strongly negative bias
    ckpt.vae.lv_head[0].data[:] = 0.0
    ckpt.vae.lv_head[1].data[:] = -80.0
    states = np.random.default_rng(2).standard_normal((6, 8))
    field, ensemble = second_pass(states, ckpt, XI, n=16, seed=0)
    np.testing.assert_allclose(field.nu, 0.0, atol=1e-12)
    # every member decodes the same latent mean
    assert np.max(np.abs(ensemble - ensemble[0][None])) < 1e-12


def test_second_pass_matches_direct_monte_carlo_recompute():
    ckpt = make_checkpoint(seed=3)
    states = np.random.default_rng(4).standard_normal((5, 8))
    n, seed = 12, 9
    field, ensemble = second_pass(states, ckpt, XI, n=n, seed=seed)

    # independent recompute: same noise streams, member-by-member decode,
    # two-pass population variance
    dist = ckpt.vae.encode(ckpt.stats.forward(states), XI)
    mu, sigma = dist.mu.data, dist.sigma()
    members = np.empty((n, 5, 8))
    for i in range(n):
        for t in range(5):
            z = mu[t] + sigma[t] * member_noise(seed, i, t, 2)
            members[i, t] = ckpt.stats.inverse(
                ckpt.vae.decode(z[None], XI).data[0])
    np.testing.assert_allclose(ensemble, members, atol=1e-12)
    mean = members.mean(axis=0)
    var = np.mean((members - mean[None]) ** 2, axis=0)
    np.testing.assert_allclose(field.nu, np.sqrt(var), atol=1e-12)


def test_second_pass_deterministic_and_transformer_free():
    ckpt = make_checkpoint(seed=5)
    states = np.random.default_rng(6).standard_normal((4, 8))
    before = ckpt.transformer.forward_count
    f1, e1 = second_pass(states, ckpt, XI, n=8, seed=1)
    f2, e2 = second_pass(states, ckpt, XI, n=8, seed=1)
    assert ckpt.transformer.forward_count == before
    assert f1.nu.tobytes() == f2.nu.tobytes()
    assert e1.tobytes() == e2.tobytes()


def test_second_pass_seed_changes_ensemble():
    ckpt = make_checkpoint(seed=5)
    states = np.random.default_rng(6).standard_normal((4, 8))
    f1, _ = second_pass(states, ckpt, XI, n=8, seed=1)
    f2, _ = second_pass(states, ckpt, XI, n=8, seed=2)
    assert f1.nu.tobytes() != f2.nu.tobytes()


def test_second_pass_spread_shrinks_with_ensemble_size():
    # the across-seed scatter of nu_xi decreases as n grows
    ckpt = make_checkpoint(seed=7)
    states = np.random.default_rng(8).standard_normal((4, 8))

    def scatter(n):
        vals = [aggregate_param(second_pass(states, ckpt, XI, n=n, seed=s)[0])
                for s in range(6)]
        return np.std(vals)

    assert scatter(256) < scatter(8)


def test_second_pass_rejects_tiny_ensemble():
    ckpt = make_checkpoint()
    with pytest.raises(ValueError):
        second_pass(np.zeros((3, 8)), ckpt, XI, n=1)


# --------------------------------------------------------------- aggregations


def field_of(nu):
    return UncertaintyField(nu=np.asarray(nu, dtype=float), param=XI,
                            ensemble_size=4, seed=0)


def test_aggregations_on_known_field():
    field = field_of([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0]])
    np.testing.assert_allclose(aggregate_time(field), [2.0, 2.0, 2.0])
    assert aggregate_param(field) == pytest.approx(2.0)
    # nu_xi is the mean of nu_t
    assert aggregate_param(field) == pytest.approx(np.mean(aggregate_time(field)))


def test_confidence_interval_properties():
    field = field_of(np.abs(np.random.default_rng(1).standard_normal((3, 2))))
    mean = np.random.default_rng(2).standard_normal((3, 2))
    lo1, hi1 = confidence_interval(mean, field, k=1.0)
    lo2, hi2 = confidence_interval(mean, field, k=2.0)
    assert np.all(lo1 <= hi1)
    assert np.all(lo2 <= lo1) and np.all(hi1 <= hi2)
    np.testing.assert_allclose((lo1 + hi1) / 2, mean, atol=1e-12)
    with pytest.raises(ValueError):
        confidence_interval(mean, field, k=0.0)


def test_confidence_interval_zero_field_collapses_to_mean():
    field = field_of(np.zeros((3, 2)))
    mean = np.ones((3, 2))
    lo, hi = confidence_interval(mean, field)
    np.testing.assert_array_equal(lo, mean)
    np.testing.assert_array_equal(hi, mean)


# ------------------------------------------------------------------ CSV files


def test_uq_csvs_deterministic_and_well_formed(tmp_path):
    field = field_of([[0.5, 1.5], [2.5, 3.5]])
    write_uq_csvs(tmp_path / "a", field)
    write_uq_csvs(tmp_path / "b", field)
    a = (tmp_path / "a/uq_field.csv").read_bytes()
    assert a == (tmp_path / "b/uq_field.csv").read_bytes()
    lines = a.decode().strip().split("\n")
    assert lines[0] == "t,d,nu"
    assert len(lines) == 1 + 4
    assert lines[1] == "0,0,0.5"
    nu_t = (tmp_path / "a/nu_t.csv").read_text().strip().split("\n")
    assert nu_t[0] == "t,nu_t"
    assert nu_t[1] == "0,1.0"


def test_nu_xi_csv(tmp_path):
    rows = [(ParamPoint.of(mu=0.1), 0.25), (ParamPoint.of(mu=0.2), 0.5)]
    write_nu_xi_csv(tmp_path / "nu_xi.csv", rows)
    lines = (tmp_path / "nu_xi.csv").read_text().strip().split("\n")
    assert lines[0] == "mu,nu_xi"
    assert lines[1] == "0.1,0.25"
