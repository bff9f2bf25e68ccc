import json
import math

import pytest

from optbench.engine import train_run
from optbench.errors import BadParameterError, SchemaError
from optbench.hpo import (
    Categorical,
    LogUniform,
    Uniform,
    hyperband_schedule,
    parse_space,
    retrain_best,
    run_hpo,
    sample,
)
from optbench.rng import Xoshiro256StarStar
from conftest import resolve

APP_SPACE = parse_space(
    {
        "optimizer.learning_rate": {"log_uniform": [1e-5, 1e-1]},
        "optimizer.weight_decay": {"log_uniform": [1e-5, 1.0]},
        "optimizer.one_minus_beta1": {"log_uniform": [1e-2, 2e-1]},
        "optimizer.beta2": {"uniform": [0.9, 0.999]},
    }
)


def quad_base(epochs=3, seed=1):
    return resolve(
        f"task: {{name: quadratic, max_epochs: {epochs}}}\n"
        "optimizer: {name: adamw_baseline}\n"
        f"engine: {{seed: {seed}}}"
    )[0]


def oracle_hyperband(R, eta):
    """Independent reimplementation of the bracket arithmetic."""
    s_max = int(math.floor(math.log(R) / math.log(eta) + 1e-12))
    B = (s_max + 1) * R
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((B / R) * eta**s / (s + 1))
        rungs = []
        prev = 0
        for i in range(s + 1):
            r = max(1, int(math.floor(R * eta ** (i - s) + 1e-9)))
            r = max(r, prev + 1)
            rungs.append((n, r))
            prev = r
            n = math.ceil(n / eta)
        brackets.append(rungs)
    return brackets


def oracle_epochs_per_bracket(rungs):
    """Epochs consumed by one bracket when promotions reuse checkpoints."""
    total = rungs[0][0] * rungs[0][1]
    for (n, r), (_, r_prev) in zip(rungs[1:], rungs):
        total += n * (r - r_prev)
    return total


class TestSampling:
    def test_log_uniform_median(self):
        rng = Xoshiro256StarStar(99)
        dist = LogUniform(1e-5, 1e-1)
        draws = sorted(dist.draw(rng) for _ in range(100_000))
        median = draws[50_000]
        analytic = math.sqrt(1e-5 * 1e-1)  # 1e-3
        assert 0.8 * analytic <= median <= 1.25 * analytic

    def test_singleton_categorical(self):
        rng = Xoshiro256StarStar(1)
        dist = Categorical(("warm_start",))
        assert all(dist.draw(rng) == "warm_start" for _ in range(100))

    def test_fixed_state_identical_sequence(self):
        a = [sample(APP_SPACE, Xoshiro256StarStar(5)) for _ in range(1)][0]
        b = [sample(APP_SPACE, Xoshiro256StarStar(5)) for _ in range(1)][0]
        assert a == b
        rng1, rng2 = Xoshiro256StarStar(7), Xoshiro256StarStar(7)
        seq1 = [sample(APP_SPACE, rng1) for _ in range(20)]
        seq2 = [sample(APP_SPACE, rng2) for _ in range(20)]
        assert seq1 == seq2

    def test_containment(self):
        rng = Xoshiro256StarStar(13)
        bounds = {
            "optimizer.learning_rate": (1e-5, 1e-1),
            "optimizer.weight_decay": (1e-5, 1.0),
            "optimizer.one_minus_beta1": (1e-2, 2e-1),
            "optimizer.beta2": (0.9, 0.999),
        }
        for _ in range(500):
            overlay = sample(APP_SPACE, rng)
            for path, (lo, hi) in bounds.items():
                assert lo <= overlay[path] <= hi

    def test_uniform_bounds_and_validation(self):
        with pytest.raises(SchemaError):
            Uniform(1.0, 1.0)
        with pytest.raises(SchemaError):
            LogUniform(0.0, 1.0)
        with pytest.raises(SchemaError):
            Categorical(())
        with pytest.raises(SchemaError):
            parse_space({"a": {"triangular": [0, 1]}})


class TestHyperbandSchedule:
    def test_canonical_bracket(self):
        brackets = hyperband_schedule(27, 3)
        assert len(brackets) == 4
        assert brackets[0] == [(27, 1), (9, 3), (3, 9), (1, 27)]

    def test_degenerate(self):
        assert hyperband_schedule(1, 3) == [[(1, 1)]]

    def test_matches_oracle(self):
        for R in (3, 9, 27):
            for eta in (2, 3):
                assert hyperband_schedule(R, eta) == oracle_hyperband(R, eta)

    def test_validation(self):
        with pytest.raises(BadParameterError):
            hyperband_schedule(0, 3)
        with pytest.raises(BadParameterError):
            hyperband_schedule(9, 1)


class TestRunHpo:
    def test_budget_accounting_end_to_end(self, tmp_path):
        # one full bracket pass of R=3, eta=3 consumes exactly the
        # closed-form epoch total when promotions reuse checkpoints
        brackets = hyperband_schedule(3, 3)
        n_full_pass = sum(rungs[0][0] for rungs in brackets)
        outcome = run_hpo(
            base_config=quad_base(epochs=3),
            space=APP_SPACE,
            n_trials=n_full_pass,
            init_fraction=1e-9,  # rounds to zero initial configs
            R=3,
            eta=3,
            seed=7,
            workdir=tmp_path,
        )
        expected = sum(oracle_epochs_per_bracket(rungs) for rungs in brackets)
        consumed = 0
        for trial_dir in sorted((tmp_path / "trials").iterdir()):
            result = json.loads((trial_dir / "result.json").read_text())
            consumed += len(result["history"])
        assert consumed == expected
        assert len(outcome.trials) == n_full_pass

    def test_trial_cap_respected(self, tmp_path):
        outcome = run_hpo(
            base_config=quad_base(epochs=3),
            space=APP_SPACE,
            n_trials=10,
            init_fraction=0.1,
            R=3,
            eta=3,
            seed=3,
            workdir=tmp_path,
        )
        assert len(outcome.trials) <= 10

    def test_best_dominates_untuned_base_at_equal_budget(self, tmp_path):
        # base config with an untuned learning rate; the search should find
        # something at least as good at the same budget
        base = resolve(
            "task: {name: quadratic, max_epochs: 3}\n"
            "optimizer: {name: adamw_baseline, learning_rate: 3.0e-3}\n"
            "engine: {seed: 1}"
        )[0]
        outcome = run_hpo(
            base_config=base,
            space=APP_SPACE,
            n_trials=10,
            init_fraction=0.1,
            R=3,
            eta=3,
            seed=7,
            workdir=tmp_path / "hpo",
        )
        reference = train_run(base, tmp_path / "default")
        base_objective = reference.history[-1]["val_metric"]  # loss: lower is better
        assert outcome.best.objective <= base_objective

    def test_init_fraction_one_is_pure_random_search(self, tmp_path):
        outcome = run_hpo(
            base_config=quad_base(epochs=3),
            space=APP_SPACE,
            n_trials=4,
            init_fraction=1.0,
            R=3,
            eta=3,
            seed=11,
            workdir=tmp_path,
        )
        assert len(outcome.log) == 4  # one evaluation per trial, no promotions
        assert {e["budget"] for e in outcome.log} == {3}
        assert {e["rung"] for e in outcome.log} == {0}

    def test_promoted_history_prefix_matches_lower_rung(self, tmp_path):
        outcome = run_hpo(
            base_config=quad_base(epochs=9),
            space=APP_SPACE,
            n_trials=5,
            init_fraction=1e-9,
            R=9,
            eta=3,
            seed=5,
            workdir=tmp_path / "hpo",
        )
        promoted = [t for t in outcome.trials if t.rung > 0 and t.status == "completed"]
        assert promoted
        trial = promoted[0]
        # rerun the same config from scratch at the first-rung budget
        first_budget = hyperband_schedule(9, 3)[0][0][1]
        cfg = json.loads(json.dumps(trial.config))
        cfg["task"]["max_epochs"] = first_budget
        fresh = train_run(cfg, tmp_path / "fresh")
        result = json.loads((trial.workdir / "result.json").read_text())
        prefix = result["history"][:first_budget]
        fresh_hist = [h for h in fresh.history]
        for a, b in zip(prefix, fresh_hist):
            assert a["train_loss"] == b["train_loss"]
            assert a["val_metric"] == b["val_metric"]

    def test_deterministic_trial_log(self, tmp_path):
        kwargs = dict(
            space=APP_SPACE, n_trials=6, init_fraction=0.5, R=3, eta=3, seed=21
        )
        run_hpo(base_config=quad_base(epochs=3), workdir=tmp_path / "a", **kwargs)
        run_hpo(base_config=quad_base(epochs=3), workdir=tmp_path / "b", **kwargs)
        assert (tmp_path / "a" / "trials.jsonl").read_text() == (
            tmp_path / "b" / "trials.jsonl"
        ).read_text()

    def test_validation(self, tmp_path):
        with pytest.raises(BadParameterError):
            run_hpo(quad_base(), APP_SPACE, 0, 0.1, 3, 3, 0, tmp_path)
        with pytest.raises(BadParameterError):
            run_hpo(quad_base(), APP_SPACE, 5, 0.0, 3, 3, 0, tmp_path)


class TestRetrainBest:
    def test_three_seeds_one_cell(self, tmp_path):
        cells = retrain_best(quad_base(epochs=3), [1, 2, 3], tmp_path)
        assert len(cells) == 1
        assert cells[0].n == 3

    def test_single_seed_zero_std(self, tmp_path):
        cells = retrain_best(quad_base(epochs=3), [5], tmp_path)
        assert cells[0].n == 1
        assert cells[0].std_best == 0.0

    def test_duplicate_seed_uses_cache(self, tmp_path):
        cells = retrain_best(quad_base(epochs=3), [4, 4], tmp_path)
        assert cells[0].n == 2
        assert cells[0].std_best == 0.0  # identical cached result both times
        run_dirs = list((tmp_path / "retrain").iterdir())
        assert len(run_dirs) == 1  # same run_id, one directory
