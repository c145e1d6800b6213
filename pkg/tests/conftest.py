from __future__ import annotations

import contextlib
from datetime import datetime, timedelta, timezone

import pytest

from hubcohort.mock_hub import MockHub, MockHubState, make_population
from hubcohort.preprocess import EnrichedRecord
from hubcohort.records import CommitRecord, ModelRecord


@pytest.fixture
def hub_factory():
    """Start mock hubs that are torn down after the test."""
    stack = contextlib.ExitStack()

    def factory(population, **state_kwargs) -> MockHub:
        state = MockHubState(population=population, **state_kwargs)
        return stack.enter_context(MockHub(state))

    yield factory
    stack.close()


@pytest.fixture
def small_population():
    return make_population(60, seed=3)


def make_model(model_id: str, **overrides) -> ModelRecord:
    defaults = dict(
        created_at=datetime(2023, 1, 1, tzinfo=timezone.utc),
        downloads=10,
        likes=1,
        tags=["text-classification"],
        commit_count=2,
    )
    defaults.update(overrides)
    return ModelRecord(model_id=model_id, **defaults)


def make_enriched(model_id: str, **overrides) -> EnrichedRecord:
    defaults = dict(
        created_at=datetime(2023, 1, 1, tzinfo=timezone.utc),
        downloads=10,
        likes=1,
        domain="NLP",
        size_bin="Q1",
        popularity_bin="Q1",
        maintenance_label="Low",
    )
    defaults.update(overrides)
    return EnrichedRecord(model_id=model_id, **defaults)


def make_commit(model_id: str, sha: str, message: str, days: int = 0) -> CommitRecord:
    return CommitRecord(
        model_id=model_id,
        sha=sha,
        message=message,
        timestamp=datetime(2023, 1, 1, tzinfo=timezone.utc) + timedelta(days=days),
    )
