import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latefuse.automl import (
    META_SPEC,
    SearchBudget,
    Trial,
    build_stacked_ensemble,
    random_search,
    sample_spec,
    select_best,
    stratified_folds,
)
from latefuse.core import ContractError
from latefuse.fusion import load_bundled
from latefuse.models import SEARCH_FAMILIES, SCHEMAS, Family, ModelSpec, fit, predict_proba
from latefuse.models.ensemble import EnsembleKind


@pytest.fixture(scope="module")
def data():
    split = load_bundled()
    (X, y), (Xv, yv) = split.arrays("train"), split.arrays("valid")
    return X, y, Xv, yv


@pytest.fixture(scope="module")
def board(data):
    return random_search(*data, SearchBudget(max_trials=6), master_seed=5)


def trial(index, objective):
    return Trial(index, "GLM", {}, 0, objective, 0.0)


class TestBudget:
    def test_needs_a_bound(self):
        with pytest.raises(ContractError):
            SearchBudget(None, None)

    @pytest.mark.parametrize("kwargs", [{"max_trials": 0}, {"max_wall_clock": 0.0},
                                        {"max_trials": None, "max_wall_clock": -1}])
    def test_positive(self, kwargs):
        with pytest.raises(ContractError):
            SearchBudget(**kwargs)


class TestSampling:
    def test_deterministic(self):
        assert sample_spec(3, 17) == sample_spec(3, 17)

    def test_all_searchable_families_drawn(self):
        seen = {sample_spec(0, i).family for i in range(600)}
        assert seen == set(SEARCH_FAMILIES)
        assert Family.LINEAR_SVM not in seen and Family.CART not in seen

    def test_hyperparams_in_search_ranges(self):
        for i in range(300):
            spec = sample_spec(11, i)
            for name, p in SCHEMAS[spec.family].items():
                if p.kind in ("int", "float"):
                    lo = p.low if p.search_low is None else p.search_low
                    hi = p.high if p.search_high is None else p.search_high
                    assert lo <= spec.hyperparams[name] <= hi


class TestSelectBest:
    def test_earliest_index_on_ties(self):
        assert select_best([trial(0, 0.91), trial(1, 0.93), trial(2, 0.93)]).index == 1

    def test_single(self):
        assert select_best([trial(0, 0.5)]).index == 0

    def test_failed_never_win(self):
        assert select_best([trial(0, -1.0), trial(1, 0.2)]).index == 1
        with pytest.raises(ContractError):
            select_best([trial(0, -1.0)])

    def test_ensemble_competes(self):
        assert select_best([trial(0, 0.94), trial(1, 0.95)]).index == 1

    @given(st.lists(st.one_of(st.just(-1.0), st.floats(0, 1)), min_size=1, max_size=30))
    @settings(max_examples=200, deadline=None)
    def test_brute_force(self, objectives):
        trials = [trial(i, o) for i, o in enumerate(objectives)]
        ok = [o for o in objectives if o >= 0]
        if not ok:
            with pytest.raises(ContractError):
                select_best(trials)
            return
        best = select_best(trials)
        assert best.objective == max(ok)
        assert best.index == objectives.index(max(ok))


class TestSearch:
    def test_layout(self, board):
        assert [t.index for t in board.all_trials] == list(range(8))
        assert [t.hyperparams["kind"] for t in board.ensembles] == ["AllModels", "BestOfFamily"]

    def test_objectives_recomputable(self, board, data):
        _, _, Xv, yv = data
        for t in board.all_trials:
            pred = np.argmax(predict_proba(t.model, Xv), axis=1)
            assert t.objective == np.mean(pred == yv)

    def test_specs_match_sampler(self, board):
        for t in board.trials:
            spec = sample_spec(5, t.index)
            assert (t.family, t.hyperparams, t.seed) == (spec.family.value, spec.hyperparams,
                                                         spec.seed)

    def test_best_of_family_unique(self, board):
        best = board.ensembles[1].model
        families = [m.family for m in best.base_models]
        assert len(families) == len(set(families))
        assert best.meta.n_features == 3 * len(best.base_models)

    def test_single_trial_budget(self, data):
        b = random_search(*data, SearchBudget(max_trials=1), master_seed=1)
        assert len(b.trials) == 1 and len(b.ensembles) == 2
        assert all(len(e.model.base_models) == 1 for e in b.ensembles)

    def test_json(self, board):
        doc = json.loads(board.to_json())
        assert doc["schema_version"] == 1
        assert doc["selected_index"] == select_best(board).index
        assert all(t["fit_seconds"] is None for t in doc["trials"])
        timed = json.loads(board.to_json(include_timing=True))
        assert all(t["fit_seconds"] >= 0 for t in timed["trials"])

    def test_beats_constant_prediction(self, board, data):
        _, _, _, yv = data
        assert select_best(board).objective > np.bincount(yv).max() / len(yv)

    def test_wall_clock_prefix(self, data):
        b = random_search(*data, SearchBudget(max_trials=None, max_wall_clock=1.0),
                          master_seed=5)
        assert len(b.trials) >= 1
        for t in b.trials:
            assert t.hyperparams == sample_spec(5, t.index).hyperparams

    def test_failed_trials_recorded(self, data, monkeypatch):
        import latefuse.automl as automl

        real_fit = automl.fit

        def flaky(spec, X, y):
            if spec.family is Family.MLP:
                raise FloatingPointError("diverged")
            return real_fit(spec, X, y)

        monkeypatch.setattr(automl, "fit", flaky)
        b = random_search(*data, SearchBudget(max_trials=12), master_seed=0)
        failed = [t for t in b.trials if t.family == "MLP"]
        assert failed and all(t.objective == -1.0 and t.error for t in failed)
        assert select_best(b).family != "MLP"

    def test_all_failed_aborts(self, data, monkeypatch):
        import latefuse.automl as automl

        def broken(spec, X, y):
            raise FloatingPointError("nope")

        monkeypatch.setattr(automl, "fit", broken)
        with pytest.raises(ContractError):
            random_search(*data, SearchBudget(max_trials=3), master_seed=0)


class TestStacking:
    def test_folds_stratified(self, data):
        _, y, _, _ = data
        folds = stratified_folds(y, 5, 0)
        for k in range(3):
            counts = np.bincount(folds[y == k], minlength=5)
            assert counts.max() - counts.min() <= 1

    def test_too_few_examples(self):
        with pytest.raises(ContractError, match="at least 5"):
            stratified_folds(np.array([0] * 5 + [1] * 5 + [2] * 4), 5, 0)

    def test_copies_a_perfect_model(self):
        X = np.repeat(np.eye(3), 20, axis=0)
        X = np.hstack([X, X])
        y = np.repeat(np.arange(3), 20)
        base = fit(ModelSpec(Family.CART), X, y)
        ens = build_stacked_ensemble([base], X, y, EnsembleKind.ALL_MODELS)
        acc = np.mean(np.argmax(ens.predict_proba(X), axis=1) == y)
        assert acc > 1 / 3 + 0.1

    def test_shapes_and_valid_probabilities(self, data):
        X, y, _, _ = data
        bases = [fit(ModelSpec(Family.GLM, {"epochs": 30}), X, y),
                 fit(ModelSpec(Family.CART, {"max_depth": 3}), X, y)]
        ens = build_stacked_ensemble(bases, X, y, "AllModels")
        assert ens.meta_features(X[:7]).shape == (7, 6)
        assert ens.meta.spec == META_SPEC
        P = ens.predict_proba(np.random.default_rng(0).random((30, 6)))
        np.testing.assert_allclose(P.sum(axis=1), 1.0)
        assert np.all(P >= 0)

    def test_needs_a_base_model(self, data):
        X, y, _, _ = data
        with pytest.raises(ContractError):
            build_stacked_ensemble([], X, y, "AllModels")
