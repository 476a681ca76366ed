import pytest
import torch
import torch.nn.functional as F

from privsemcom.channel import ChannelRealization, power_normalize, sample_fading, transmit_superposed
from privsemcom.config import PerturbationConfig
from privsemcom.perturbation import fgsm_perturb, make_delta_fn, pgd_perturb, spec_tag


class LinearEve(torch.nn.Module):
    def __init__(self, d, k=4, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.W = torch.nn.Parameter(torch.randn(k, 2 * d, generator=g, dtype=torch.float64))

    def forward(self, y):
        y = y.iq if hasattr(y, "iq") else y
        return y.flatten(1) @ self.W.T


class ZeroEve(torch.nn.Module):
    def forward(self, y):
        y = y.iq if hasattr(y, "iq") else y
        return torch.zeros(y.shape[0], 3, dtype=y.dtype) + 0 * y.sum()


def _setup(B=6, d=5, seed=1):
    g = torch.Generator().manual_seed(seed)
    x = power_normalize(torch.randn(B, 2, d, generator=g, dtype=torch.float64))
    labels = torch.randint(0, 4, (B,), generator=g)
    src = ChannelRealization(sample_fading(B, g, dtype=torch.float64), 5.0)
    jam = ChannelRealization(sample_fading(B, g, dtype=torch.float64), 5.0)
    return x, labels, src, jam


def test_fgsm_sign_structure():
    x, labels, src, jam = _setup()
    spec = PerturbationConfig("fgsm", 0.1, 1, m=3)
    delta = fgsm_perturb(LinearEve(5), x, labels, spec, torch.Generator().manual_seed(0),
                         eve_snr_db=5.0, ch_src=src, ch_jam=jam)
    vals = set(delta.unique().tolist())
    assert vals <= {-0.1, 0.0, 0.1}
    assert delta.abs().max().item() <= 0.1


def test_fgsm_zero_budget():
    x, labels, src, jam = _setup()
    spec = PerturbationConfig("fgsm", 0.0, 1)
    delta = fgsm_perturb(LinearEve(5), x, labels, spec, eve_snr_db=5.0, ch_src=src, ch_jam=jam)
    assert torch.count_nonzero(delta) == 0


@pytest.mark.parametrize("known", [True, False])
def test_fgsm_sign_matches_finite_differences(known):
    x, labels, src, jam = _setup(B=3, d=4, seed=2)
    eve = LinearEve(4, seed=3)
    spec = PerturbationConfig("fgsm", 0.1, 1, m=2, fading_known=known)
    delta = fgsm_perturb(eve, x, labels, spec, torch.Generator().manual_seed(9),
                         eve_snr_db=5.0, ch_src=src, ch_jam=jam)

    def frozen_loss(d):
        gen = torch.Generator().manual_seed(9)
        total = 0.0
        for _ in range(spec.m):
            if known:
                s, j = src, jam
            else:
                s = ChannelRealization(sample_fading(3, gen, dtype=torch.float64), 5.0)
                j = ChannelRealization(sample_fading(3, gen, dtype=torch.float64), 5.0)
            y = transmit_superposed(x, d, s, j, gen)
            total += F.cross_entropy(eve(y), labels, reduction="sum").item()
        return total

    base = torch.zeros_like(x.iq)
    h = 1e-6
    for k in range(base.numel()):
        e = torch.zeros_like(base).view(-1)
        e[k] = h
        fd = (frozen_loss(e.view_as(base)) - frozen_loss(-e.view_as(base))) / (2 * h)
        if abs(fd) > 1e-6:
            assert torch.sign(delta.view(-1)[k]).item() == (1.0 if fd > 0 else -1.0)


def test_pgd_single_step_equals_fgsm():
    x, labels, src, jam = _setup()
    eve = LinearEve(5)
    f = fgsm_perturb(eve, x, labels, PerturbationConfig("fgsm", 0.2, 1, m=2),
                     torch.Generator().manual_seed(4), eve_snr_db=0.0, ch_src=src, ch_jam=jam)
    p = pgd_perturb(eve, x, labels, PerturbationConfig("pgd", 0.2, 1, alpha=0.2, m=2),
                    torch.Generator().manual_seed(4), eve_snr_db=0.0, ch_src=src, ch_jam=jam)
    assert torch.equal(f, p)


def test_pgd_iterates_stay_in_box():
    x, labels, src, jam = _setup()
    seen = []
    spec = PerturbationConfig("pgd", 0.05, 12, alpha=0.03, m=1, random_start=True)
    delta = pgd_perturb(LinearEve(5), x, labels, spec, torch.Generator().manual_seed(5),
                        ch_src=src, ch_jam=jam, on_step=lambda t, d: seen.append(d.abs().max().item()))
    assert len(seen) == 12
    assert max(seen) <= 0.05 and delta.abs().max().item() <= 0.05


def test_pgd_zero_gradient_fixed_point():
    x, _, src, jam = _setup()
    labels = torch.zeros(6, dtype=torch.long)
    delta = pgd_perturb(ZeroEve(), x, labels, PerturbationConfig("pgd", 0.1, 5), ch_src=src, ch_jam=jam)
    assert torch.count_nonzero(delta) == 0


def test_fgsm_deterministic():
    x, labels, src, jam = _setup()
    spec = PerturbationConfig("fgsm", 0.1, 1, m=4, fading_known=False)
    a = fgsm_perturb(LinearEve(5), x, labels, spec, torch.Generator().manual_seed(6))
    b = fgsm_perturb(LinearEve(5), x, labels, spec, torch.Generator().manual_seed(6))
    assert torch.equal(a, b)


def test_pgd_raises_eve_loss_over_fgsm_on_linear_eve():
    x, labels, src, jam = _setup(B=32, d=8, seed=7)
    eve = LinearEve(8, seed=8)

    def loss(delta):
        gen = torch.Generator().manual_seed(123)
        y = transmit_superposed(x, delta, src.with_snr(20.0), jam, gen)
        return F.cross_entropy(eve(y), labels).item()

    f = fgsm_perturb(eve, x, labels, PerturbationConfig("fgsm", 0.1, 1, m=4), eve_snr_db=20.0,
                     ch_src=src, ch_jam=jam)
    p = pgd_perturb(eve, x, labels, PerturbationConfig("pgd", 0.1, 10, m=4), eve_snr_db=20.0,
                    ch_src=src, ch_jam=jam)
    assert loss(torch.zeros_like(f)) < loss(f) <= loss(p) + 1e-9


def test_delta_fn_and_tags():
    x, labels, src, jam = _setup()
    fn = make_delta_fn(LinearEve(5), PerturbationConfig("pgd", 0.1, 4), seed=1)
    assert fn.tag == "pgd4"
    assert fn(x, labels, 0.0, src, jam).abs().max().item() <= 0.1
    assert spec_tag(None) == "none"
    assert spec_tag(PerturbationConfig("fgsm", 0.1, 1)) == "fgsm"
