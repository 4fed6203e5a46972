import json

import numpy as np
import pytest

from mgm import autodiff as ad
from mgm.autodiff import Tensor
from mgm.data import ScenarioSpec, make_scenario
from mgm.nn import Mlp, MlpConfig, MlpParams
from mgm.training import (ConfigurationError, GanHyper, Mixer, MgmSetup, MgmTrainer, TrainingDiverged,
                          load_agent_generator, mixer_hyper, pretrain_mixer, train_agent)

from oracles import central_diff, rel_err

SLOPE = 0.2
TINY = GanHyper(hidden=(8, 8), batch=16, n_critic=2, iters=4)


def linear_mixer(beta, slope=SLOPE, noise_dim=2):
    """y = beta * x1 + (1 - beta) * x2 exactly: hidden units carry +c and -c and
    leaky(c) - leaky(-c) = (1 + slope) c."""
    w1 = np.zeros((noise_dim + 4, 4))
    for k in range(2):
        c = np.zeros(noise_dim + 4)
        c[noise_dim + k] = beta
        c[noise_dim + 2 + k] = 1.0 - beta
        w1[:, 2 * k], w1[:, 2 * k + 1] = c, -c
    w2 = np.zeros((4, 2))
    for k in range(2):
        w2[2 * k, k], w2[2 * k + 1, k] = 1.0 / (1 + slope), -1.0 / (1 + slope)
    gen = Mlp(MlpConfig(noise_dim + 4, 2, (4,), slope),
              MlpParams([Tensor(w1, True), Tensor(w2, True)], [Tensor(np.zeros(4), True), Tensor(np.zeros(2), True)]))
    critic = Mlp.init(MlpConfig(6, 1, (4,), slope), 0)
    return Mixer(gen, critic, noise_dim)


@pytest.fixture(scope="module")
def scenario():
    return make_scenario(ScenarioSpec(beta=0.7, kind="bias100", n_samples=400, n_test=50, seed=3))


def setup_for(train, mode="combined", beta=0.7, hyper=TINY, **kw):
    return MgmSetup(train.agent1, others=[train.x2], outputs=train.y, mixer=kw.pop("mixer", linear_mixer(beta)),
                    mode=mode, hyper=hyper, **kw)


def gen_bytes(trainer):
    return b"".join(a.tobytes() for a in trainer.generator.params.arrays())


def test_linear_mixer_construction_is_exact():
    mixer = linear_mixer(0.3)
    x = np.random.default_rng(0).normal(size=(7, 4))
    assert np.abs(mixer.sample(x, 1) - (0.3 * x[:, :2] + 0.7 * x[:, 2:])).max() < 1e-14


# ------------------------------------------------------------------- mixer

def test_mixer_zero_iterations_is_deterministic_and_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    cond, y = rng.normal(size=(20, 4)), rng.normal(size=(20, 2))
    h = mixer_hyper(hidden=(6,), iters=0)
    a = pretrain_mixer(cond, y, h, seed=5, checkpoint=tmp_path / "m.json")
    b = pretrain_mixer(cond, y, h, seed=5)
    assert all(np.array_equal(p, q) for p, q in zip(a.generator.params.arrays(), b.generator.params.arrays()))
    loaded = Mixer.load(tmp_path / "m.json")
    assert loaded.noise_dim == 2 and loaded.cond_dim == 4 and loaded.out_dim == 2
    assert np.array_equal(loaded.sample(cond, 9), a.sample(cond, 9))


def test_mixer_load_rejects_agent_checkpoints(tmp_path, scenario):
    trainer, _ = train_agent(setup_for(scenario[0], mode="baseline", mixer=None), checkpoint=tmp_path / "a.json")
    with pytest.raises(ConfigurationError):
        Mixer.load(tmp_path / "a.json")


def test_mixer_rejects_unpaired_data():
    with pytest.raises(ad.DimensionError):
        pretrain_mixer(np.zeros((5, 4)), np.zeros((4, 2)), mixer_hyper(iters=0))


def test_mixer_learns_the_conditional_mean():
    train, test = make_scenario(ScenarioSpec(beta=0.5, n_samples=4000, n_test=400, seed=1))
    h = mixer_hyper(hidden=(32, 32), batch=64, iters=600, lr=1e-3)
    mixer = pretrain_mixer(train.conditions, train.y, h, seed=0)
    # y is a deterministic function of x; the mean of 8 draws should sit close to it
    pred = np.mean([mixer.sample(test.conditions, s) for s in range(8)], axis=0)
    err = np.abs(pred - test.y).mean()
    naive = np.abs(test.y - train.y.mean(axis=0)).mean()
    assert err < 0.25 * naive


# ---------------------------------------------------------------- gradients

def test_feedback_gradient_matches_finite_differences(scenario):
    tr = MgmTrainer(setup_for(scenario[0], hyper=GanHyper(hidden=(5,), batch=6)), seed=2)
    z = np.random.default_rng(4).normal(size=(6, 2))
    _, grads = tr.feedback_pass(z, rng=11)

    def f():
        return tr.feedback_pass(z, rng=11)[0]

    numeric = central_diff(f, tr.generator.params.arrays(), h=1e-6)
    assert max(rel_err(g.data, n, floor=1e-6) for g, n in zip(grads, numeric)) < 1e-4


def test_feedback_gradient_vanishes_when_the_mixer_ignores_the_agent(scenario):
    tr = MgmTrainer(setup_for(scenario[0], beta=0.0), seed=0)
    _, grads = tr.feedback_pass(np.ones((5, 2)))
    assert all((g.data == 0).all() for g in grads)


def test_feedback_gradient_vanishes_for_a_constant_critic(scenario):
    tr = MgmTrainer(setup_for(scenario[0]), seed=0)
    tr.fb_critic.params.weights[-1].data[:] = 0.0
    loss, grads = tr.feedback_pass(np.ones((5, 2)))
    assert all((g.data == 0).all() for g in grads)
    assert loss == -tr.fb_critic.params.biases[-1].data[0]


def test_combined_step_uses_the_weighted_gradient(scenario, monkeypatch):
    import mgm.training as training

    tr = MgmTrainer(setup_for(scenario[0], alpha=0.3), seed=1)
    s_a, s_f = tr.rng.bit_generator.state, tr.fb_rng.bit_generator.state
    seen = []
    monkeypatch.setattr(training, "adam_step", lambda params, grads, state: seen.append(grads))
    tr.generator_step()
    tr.rng.bit_generator.state, tr.fb_rng.bit_generator.state = s_a, s_f
    z = tr._noise(tr.setup.hyper.batch)
    _, ga = tr.agent_pass(z)
    _, gf = tr.feedback_pass(z)
    for got, a, f in zip(seen[0], ga, gf):
        assert np.abs(got - (0.3 * a.data + 0.7 * f.data)).max() <= 1e-10


# ---------------------------------------------------------- mode invariants

def test_alpha_one_replays_the_baseline_bit_for_bit(scenario):
    base, _ = train_agent(setup_for(scenario[0], mode="baseline", mixer=None), seed=4)
    comb, _ = train_agent(setup_for(scenario[0], mode="combined", alpha=1.0), seed=4)
    assert gen_bytes(base) == gen_bytes(comb)


def test_alternate_cadences_reduce_to_the_pure_modes(scenario):
    base, _ = train_agent(setup_for(scenario[0], mode="baseline", mixer=None), seed=6)
    alt_a, _ = train_agent(setup_for(scenario[0], mode="alternate", cadence=(1, 0)), seed=6)
    assert gen_bytes(base) == gen_bytes(alt_a)
    only_f, _ = train_agent(setup_for(scenario[0], mode="combined", alpha=0.0), seed=6)
    alt_f, _ = train_agent(setup_for(scenario[0], mode="alternate", cadence=(0, 1)), seed=6)
    assert gen_bytes(only_f) == gen_bytes(alt_f)


def test_alternate_schedule(scenario):
    tr = MgmTrainer(setup_for(scenario[0], mode="alternate", cadence=(2, 1)), seed=0)
    assert [tr._uses_lf(i) for i in range(6)] == [False, False, True, False, False, True]


def test_training_leaves_the_mixer_untouched(scenario):
    mixer = linear_mixer(0.7)
    before = [a.copy() for a in mixer.generator.params.arrays() + mixer.critic.params.arrays()]
    train_agent(setup_for(scenario[0], mixer=mixer), seed=0)
    after = mixer.generator.params.arrays() + mixer.critic.params.arrays()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_training_is_deterministic_per_seed(scenario):
    runs = [gen_bytes(train_agent(setup_for(scenario[0]), seed=s)[0]) for s in (1, 1, 2)]
    assert runs[0] == runs[1] != runs[2]


def test_warm_feedback_critic_runs(scenario):
    train = scenario[0]
    setup = setup_for(train, feedback_critic="warm", output_conditions=train.conditions)
    _, report = train_agent(setup, seed=0)
    assert np.isfinite(report.column("L_f")).all()


# ------------------------------------------------------------ logs, errors

def test_report_and_log_file(scenario, tmp_path):
    log = tmp_path / "losses.jsonl"
    tr, report = train_agent(setup_for(scenario[0]), seed=0, log_path=log, checkpoint=tmp_path / "g.json")
    lines = [json.loads(s) for s in log.read_text().splitlines()]
    assert lines == report.records and [r["iter"] for r in lines] == [1, 2, 3, 4]
    assert set(lines[0]) == {"iter", "L_a", "L_f", "W_a", "W_f"}
    gen, meta = load_agent_generator(tmp_path / "g.json")
    assert meta["mode"] == "combined" and meta["iteration"] == 4
    z = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(gen(z).data, tr.generator(z).data)


def test_baseline_report_has_no_feedback_columns(scenario):
    _, report = train_agent(setup_for(scenario[0], mode="baseline", mixer=None), seed=0)
    assert np.isnan(report.column("L_f")).all() and np.isfinite(report.column("L_a")).all()


def test_divergence_keeps_the_last_good_generator(scenario, tmp_path):
    setup = setup_for(scenario[0], mode="baseline", mixer=None, hyper=GanHyper(hidden=(8,), batch=8, n_critic=1, iters=5))
    good = {}

    def poison(trainer, rec):
        if rec["iter"] == 2:
            good["bytes"] = gen_bytes(trainer)
            trainer.setup.agent_data = np.full_like(trainer.setup.agent_data, np.nan)

    with pytest.raises(TrainingDiverged) as info:
        train_agent(setup, seed=0, checkpoint=tmp_path / "g.json", callback=poison)
    assert info.value.iteration == 2
    gen, _ = load_agent_generator(info.value.checkpoint)
    assert b"".join(a.tobytes() for a in gen.params.arrays()) == good["bytes"]


@pytest.mark.parametrize("kw", [
    {"mode": "nope"},
    {"alpha": 1.5},
    {"alpha": -0.1},
    {"mixer": None},
    {"outputs": np.zeros((0, 2))},
    {"feedback_critic": "warm"},
    {"feedback_critic": "hot"},
    {"cadence": (0, 0)},
    {"others": [np.zeros((5, 3))]},
])
def test_configuration_errors(scenario, kw):
    train = scenario[0]
    base = dict(agent_data=train.agent1, others=[train.x2], outputs=train.y, mixer=linear_mixer(0.7), mode="combined")
    with pytest.raises(ConfigurationError):
        MgmSetup(**{**base, **kw})


def test_hyper_validation():
    with pytest.raises(ConfigurationError):
        GanHyper(batch=0)
    with pytest.raises(ConfigurationError):
        GanHyper(lr=-1.0)
    assert mixer_hyper().lam == 1.0 and GanHyper().lam == 0.1
