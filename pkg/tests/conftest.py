import pytest

from mimnet import data, model, training

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def al_grid():
    return data.generate_grid(data.Metal.AL)


@pytest.fixture(scope="session")
def au_grid():
    return data.generate_grid(data.Metal.AU)


@pytest.fixture(scope="session")
def ag_grid():
    return data.generate_grid(data.Metal.AG)


@pytest.fixture(scope="session")
def trained_al(al_grid, tmp_path_factory):
    """Default-recipe Al model (1100 epochs, several minutes on one core)."""
    config = training.TrainConfig(seed=7)
    params, _, report = training.train(al_grid, config)
    path = tmp_path_factory.mktemp("al") / "al.ckpt"
    model.save_checkpoint(path, params, {"metal": "Al", "seed": 7, "epochs_total": config.epochs_total})
    return params, report, path
