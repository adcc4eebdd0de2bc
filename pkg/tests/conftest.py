import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def central_difference(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of scalar ``fn`` at ``x`` by central differences."""
    grad = torch.zeros_like(x)
    flat = x.detach().clone().reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = fn(flat.view_as(x)).item()
        flat[i] = orig - eps
        down = fn(flat.view_as(x)).item()
        flat[i] = orig
        grad.view(-1)[i] = (up - down) / (2 * eps)
    return grad


def analytic_gradient(fn, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    return g


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
