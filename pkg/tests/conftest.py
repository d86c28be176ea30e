import numpy as np
import pytest

from qaoa_control.config import EnvConfig, ExperimentConfig, IsingParams, PPOHyperparams


@pytest.fixture
def ising():
    return IsingParams()


@pytest.fixture
def small_env_cfg():
    """N=4, JT=10, three generators, three steps."""
    return EnvConfig(q=3, action_set=("H1", "H2", "Y"))


@pytest.fixture
def tiny_hp():
    return PPOHyperparams(batch_size=8, total_iters=3, hidden_units=(8, 8), eval_every=2, checkpoint_every=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_experiment(tmp_path):
    return ExperimentConfig().with_updates(**{
        "output_dir": str(tmp_path / "run"),
        "env.q": 2,
        "env.action_set": ["H1", "H2", "Y"],
        "ppo.batch_size": 8,
        "ppo.total_iters": 4,
        "ppo.hidden_units": [8, 8],
        "ppo.eval_every": 2,
        "ppo.checkpoint_every": 2,
        "baselines.qaoa_restarts": 2,
        "baselines.cd_qaoa.batch_size": 8,
        "baselines.cd_qaoa.total_iters": 3,
        "baselines.cd_qaoa.hidden_units": [8, 8],
        "baselines.pg_qaoa.batch_size": 8,
        "baselines.pg_qaoa.total_iters": 3,
    })
