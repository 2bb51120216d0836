"""Shared fixtures: a deterministic tiny cohort and models trained once.

Everything heavy is session-scoped. The cohort uses the 48 px desk profile
with a strong label model (beta1=10) so phase-2/3 behavior is testable;
fixtures that need other label regimes relabel the same studies.
"""

import dataclasses
import time

import numpy as np
import pytest

from sofa.classifier import save_classifier, train_phase2
from sofa.cohort import synth_study
from sofa.config import tiny_config
from sofa.generator import save_generator, train_phase1
from sofa.optimizer import FrozenStack
from sofa.study import write_study
from sofa import persist

COHORT_SEED = 17
N_STUDIES = 192
N_GEN_TRAIN = 64
N_CLF_TRAIN = 128

TRAIN_SECONDS = {}  # fixture name -> wall-clock training time


def study_seed(i: int) -> int:
    return int(np.random.SeedSequence([COHORT_SEED, i]).generate_state(1)[0])


@pytest.fixture(scope="session")
def rc_strong():
    return tiny_config({"synth": {"label": {"beta0": -2.0, "beta1": 10.0}}})


@pytest.fixture(scope="session")
def cohort(rc_strong):
    return [synth_study(study_seed(i), rc_strong.synth, f"study_{i:04d}")
            for i in range(N_STUDIES)]


@pytest.fixture(scope="session")
def gen_train_studies(cohort):
    return cohort[:N_GEN_TRAIN]


@pytest.fixture(scope="session")
def eval_studies(cohort):
    return cohort[160:192]


@pytest.fixture(scope="session")
def trained_gen(rc_strong, gen_train_studies):
    t0 = time.monotonic()
    model, history = train_phase1(gen_train_studies, rc_strong.generator)
    TRAIN_SECONDS["gen"] = time.monotonic() - t0
    return model, history


@pytest.fixture(scope="session")
def trained_gen_params_only(rc_strong, gen_train_studies):
    cfg = dataclasses.replace(rc_strong.generator, input_mode="params_only")
    t0 = time.monotonic()
    model, history = train_phase1(gen_train_studies, cfg)
    TRAIN_SECONDS["gen_params_only"] = time.monotonic() - t0
    return model, history


@pytest.fixture(scope="session")
def trained_clf(rc_strong, cohort, trained_gen):
    gen, _ = trained_gen
    clf, report = train_phase2(cohort[:N_CLF_TRAIN], gen, rc_strong.classifier)
    return clf, report


@pytest.fixture(scope="session")
def stack(trained_gen, trained_clf):
    return FrozenStack(trained_gen[0], trained_clf[0])


@pytest.fixture(scope="session")
def checkpoint_dirs(tmp_path_factory, rc_strong, trained_gen, trained_gen_params_only,
                    trained_clf):
    root = tmp_path_factory.mktemp("checkpoints")
    gen, hist = trained_gen
    gen_meta = save_generator(gen, root / "gen", hist)
    gen_po, hist_po = trained_gen_params_only
    save_generator(gen_po, root / "gen_po", hist_po)
    clf, report = trained_clf
    save_classifier(clf, rc_strong.classifier, root / "clf", gen_meta["weights_hash"], report)
    return {"gen": root / "gen", "gen_po": root / "gen_po", "clf": root / "clf"}


@pytest.fixture(scope="session")
def disk_cohort(tmp_path_factory, rc_strong, cohort):
    """First 8 studies written in the on-disk layout with a manifest."""
    root = tmp_path_factory.mktemp("cohort8")
    entries = []
    for study in cohort[:8]:
        path = write_study(study, root)
        entries.append({"id": study.id, "hash": persist.sha256_tree(path)})
    cfg_dict = rc_strong.synth.to_dict()
    persist.write_json(root / "manifest.json", {
        "format_version": persist.FORMAT_VERSION,
        "n": len(entries),
        "seed": COHORT_SEED,
        "config": cfg_dict,
        "config_hash": persist.config_hash(cfg_dict),
        "studies": entries,
    })
    return root
